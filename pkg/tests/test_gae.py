import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaevol.gae import (GaeHyper, GaeModel, TrainingError, adam_step, backward, batch_loss,
                        bce_loss, decode_edge, edge_probs, encode, gcn_forward, load_model,
                        non_edges, save_model, split_edges, train)
from helpers import erdos_renyi, make_graph, two_cliques
from oracles import bce_naive, gcn_naive, rel_err


def ring_with_chords(n, seed):
    rng = np.random.default_rng(seed)
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    for _ in range(n // 2):
        u, v = rng.choice(n, 2, replace=False)
        a[u, v] = a[v, u] = 1
    return make_graph(a, rng.normal(size=(n, 4)))


def full_split_graph(n_edges_clique=100):
    # 15-node clique minus 5 edges -> 100 edges, plenty of non-edges after padding
    n = 25
    a = np.zeros((n, n))
    iu, ju = np.triu_indices(15, k=1)
    for u, v in list(zip(iu, ju))[:n_edges_clique]:
        a[u, v] = a[v, u] = 1
    return make_graph(a, np.ones((n, 2)))


# -- splitting ----------------------------------------------------------------

def test_split_sizes_and_partition():
    g = full_split_graph()
    assert g.n_edges == 100
    sp = split_edges(g, seed=3)
    assert (len(sp.train_pos), len(sp.val_pos), len(sp.test_pos)) == (85, 5, 10)
    assert len(sp.val_neg) == 5 and len(sp.test_neg) == 10
    together = {tuple(e) for e in np.concatenate([sp.train_pos, sp.val_pos, sp.test_pos])}
    assert together == {tuple(e) for e in g.edge_list}
    negs = [tuple(e) for e in np.concatenate([sp.val_neg, sp.test_neg])]
    assert len(set(negs)) == len(negs)
    assert all(g.adjacency[u, v] == 0 and u != v for u, v in negs)


def test_split_deterministic():
    g = full_split_graph()
    a, b = split_edges(g, seed=9), split_edges(g, seed=9)
    for name in ("train_pos", "val_pos", "test_pos", "val_neg", "test_neg"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_split_refuses_complete_and_tiny_graphs():
    k5 = make_graph(np.ones((5, 5)) - np.eye(5), np.ones((5, 1)))
    with pytest.raises(ValueError, match="no negatives available"):
        split_edges(k5)
    with pytest.raises(ValueError, match="at least 10"):
        split_edges(make_graph([[0, 1], [1, 0]], np.ones((2, 1))))
    with pytest.raises(ValueError):
        split_edges(full_split_graph(), fractions=(0.5, 0.5, 0.5))


def test_non_edges_excludes_edges_and_self_pairs():
    g = ring_with_chords(8, 0)
    ne = non_edges(g.adjacency)
    assert np.all(ne[:, 0] < ne[:, 1])
    assert len(ne) + g.n_edges == 8 * 7 // 2


# -- encoder / decoder / loss -------------------------------------------------

def test_zero_w0_gives_zero_embedding():
    g = ring_with_chords(6, 1)
    model = GaeModel(np.zeros((4, 3)), np.ones((3, 2)), GaeHyper(hidden_dim=3, latent_dim=2))
    np.testing.assert_array_equal(encode(model, g), 0.0)


def test_isolated_node_by_hand():
    g = make_graph([[0.0]], [[2.0]])
    w0 = np.array([[0.5, -1.0]])
    w1 = np.array([[3.0], [7.0]])
    model = GaeModel(w0, w1, GaeHyper(hidden_dim=2, latent_dim=1))
    # A_n = [[1]]: hidden = relu([1, -2]) = [1, 0]; z = 1 * 3 = 3
    assert encode(model, g)[0, 0] == 3.0


def test_triangle_matches_loop_oracle():
    rng = np.random.default_rng(42)
    g = make_graph(np.ones((3, 3)) - np.eye(3), rng.normal(size=(3, 4)))
    w0, w1 = rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    z = gcn_forward(w0, w1, g.norm_adjacency, g.features)["z"]
    assert np.max(np.abs(z - gcn_naive(g.norm_adjacency, g.features, w0, w1))) < 1e-12


def test_encode_dimension_mismatch():
    model = GaeModel.init(3, GaeHyper())
    with pytest.raises(ValueError, match="feature columns"):
        encode(model, ring_with_chords(6, 0))


def test_decoder_values():
    assert decode_edge([0.0, 0.0], [1.0, 2.0]) == 0.5
    assert decode_edge([math.log(3)], [1.0]) == pytest.approx(0.75, abs=1e-15)
    assert decode_edge([100.0], [100.0]) == 1.0 - 1e-12
    assert decode_edge([100.0], [-100.0]) == 1e-12
    with pytest.raises(ValueError):
        decode_edge([1.0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3),
       st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_decoder_symmetric(u, v):
    p = decode_edge(u, v)
    assert p == decode_edge(v, u)
    assert 0.0 < p < 1.0


def test_bce_examples():
    assert bce_loss([1], [0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss([1], [1.0]) == pytest.approx(0.0, abs=1e-11)
    assert bce_loss([1, 0], [0.9, 0.2]) == pytest.approx(0.164252, abs=1e-6)
    assert bce_loss([1, 0], [0.9, 0.2]) == pytest.approx(bce_naive([1, 0], [0.9, 0.2]),
                                                         abs=1e-15)
    assert math.isfinite(bce_loss([1, 0], [0.0, 1.0]))


# -- gradients ----------------------------------------------------------------

def batch_for(g, rng):
    neg = non_edges(g.adjacency)
    neg = neg[rng.choice(len(neg), size=g.n_edges, replace=len(neg) < g.n_edges)]
    pairs = np.concatenate([g.edge_list, neg])
    labels = np.concatenate([np.ones(g.n_edges), np.zeros(len(neg))])
    return pairs, labels


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    g = ring_with_chords(10, seed)
    w0, w1 = rng.normal(size=(4, 6)) * 0.5, rng.normal(size=(6, 3)) * 0.5
    pairs, labels = batch_for(g, rng)
    a, x = g.norm_adjacency, g.features
    grads = backward(gcn_forward(w0, w1, a, x), w1, pairs, labels)
    h = 1e-5
    for name, w in (("w0", w0), ("w1", w1)):
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            up = batch_loss(w0, w1, a, x, pairs, labels)
            w[idx] = old - h
            down = batch_loss(w0, w1, a, x, pairs, labels)
            w[idx] = old
            numeric = (up - down) / (2 * h)
            assert rel_err(grads[name][idx], numeric, floor=1e-6) < 1e-4, (name, idx)


def test_dead_relu_unit_has_zero_w0_column_gradient():
    rng = np.random.default_rng(5)
    g = ring_with_chords(8, 5)
    x = np.abs(g.features)
    g = make_graph(g.adjacency, x)
    w0 = rng.normal(size=(4, 3))
    w0[:, 1] = -np.abs(w0[:, 1]) - 0.1  # non-negative inputs -> always negative
    w1 = rng.normal(size=(3, 2))
    cache = gcn_forward(w0, w1, g.norm_adjacency, g.features)
    assert np.all(cache["pre"][:, 1] < 0)
    pairs, labels = batch_for(g, rng)
    grads = backward(cache, w1, pairs, labels)
    assert np.all(grads["w0"][:, 1] == 0.0)
    assert np.all(grads["w1"][1] == 0.0)


def test_gradient_vanishes_as_probabilities_reach_labels():
    g = make_graph(np.zeros((3, 3)), [[1.0], [1.0], [-1.0]])
    pairs, labels = np.array([[0, 1], [0, 2]]), np.array([1.0, 0.0])
    sizes = []
    for s in (1.0, 3.0, 10.0):
        # z = (s, s, -s): the edge logit is +s^2 and the non-edge logit -s^2
        w0, w1 = np.array([[s, -s]]), np.array([[1.0], [-1.0]])
        grads = backward(gcn_forward(w0, w1, g.norm_adjacency, g.features), w1, pairs, labels)
        sizes.append(max(np.abs(grads["w0"]).max(), np.abs(grads["w1"]).max()))
    assert sizes[0] > sizes[1] > sizes[2]
    assert sizes[2] < 1e-30


# -- Adam ---------------------------------------------------------------------

def test_adam_first_step_is_lr_sign():
    model = GaeModel(np.ones((2, 2)), np.ones((2, 1)), GaeHyper(learning_rate=0.01))
    g0 = np.array([[3.0, -0.2], [1e-3, -50.0]])
    adam_step(model, {"w0": g0, "w1": np.array([[2.0], [-2.0]])})
    np.testing.assert_allclose(model.w0, 1 - 0.01 * np.sign(g0), atol=1e-7)
    assert model.optimizer.t == 1
    assert model.optimizer.m["w0"].shape == model.w0.shape


def test_adam_zero_gradient_is_fixed_point():
    model = GaeModel.init(3, GaeHyper(hidden_dim=4, latent_dim=2))
    before = model.copy()
    for _ in range(5):
        adam_step(model, {"w0": np.zeros((3, 4)), "w1": np.zeros((4, 2))})
    np.testing.assert_array_equal(model.w0, before.w0)
    np.testing.assert_array_equal(model.w1, before.w1)


def test_adam_identical_streams_identical_trajectories():
    rng = np.random.default_rng(0)
    a = GaeModel.init(3, GaeHyper(hidden_dim=4, latent_dim=2))
    b = a.copy()
    for _ in range(10):
        g = {"w0": rng.normal(size=(3, 4)), "w1": rng.normal(size=(4, 2))}
        adam_step(a, g)
        adam_step(b, {k: v.copy() for k, v in g.items()})
    np.testing.assert_array_equal(a.w0, b.w0)
    np.testing.assert_array_equal(a.w1, b.w1)


def test_adam_rejects_non_finite_gradient():
    model = GaeModel.init(2, GaeHyper(hidden_dim=2, latent_dim=1))
    with pytest.raises(TrainingError, match="non-finite"):
        adam_step(model, {"w0": np.full((2, 2), np.nan), "w1": np.zeros((2, 1))})


# -- training -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_two_cliques_learnable(seed):
    g = two_cliques(seed=seed)
    model, trace = train(g, split_edges(g, seed=seed), GaeHyper(seed=seed))
    assert trace.best_val_auroc >= 0.95
    assert np.all(np.isfinite(model.w0)) and np.all(np.isfinite(model.w1))


def test_random_graph_with_noise_features_is_not_learnable():
    final_val, held_out = [], []
    for seed in range(10):
        g = erdos_renyi(seed=seed)
        _, trace = train(g, split_edges(g, seed=seed), GaeHyper(seed=seed))
        final_val.append(trace.val_auroc[-1])
        held_out.append(trace.test_auroc)
    assert abs(np.mean(final_val) - 0.5) <= 0.1
    assert abs(np.mean(held_out) - 0.5) <= 0.1


def test_patience_zero_stops_at_first_non_improvement():
    g = two_cliques(seed=1)
    _, trace = train(g, split_edges(g, seed=1), GaeHyper(patience=0, seed=1))
    assert trace.epochs_run < 200
    assert trace.best_epoch == trace.epochs_run - 1


def test_training_deterministic():
    g = two_cliques(seed=2)
    sp = split_edges(g, seed=2)
    a, ta = train(g, sp, GaeHyper(seed=4, max_epochs=40))
    b, tb = train(g, sp, GaeHyper(seed=4, max_epochs=40))
    np.testing.assert_array_equal(a.w0, b.w0)
    np.testing.assert_array_equal(a.w1, b.w1)
    assert ta.loss == tb.loss


def test_training_refuses_empty_graph():
    g = make_graph(np.zeros((4, 4)), np.ones((4, 1)))
    with pytest.raises(TrainingError):
        train(g, split_edges(full_split_graph(), seed=0))


def test_encoder_permutation_equivariant():
    rng = np.random.default_rng(8)
    g = ring_with_chords(9, 8)
    model = GaeModel.init(4, GaeHyper(hidden_dim=5, latent_dim=3), rng)
    order = rng.permutation(9)
    z = encode(model, g)
    zp = encode(model, g.permuted(order))
    np.testing.assert_allclose(zp, z[order], atol=1e-10)
    # and edge probabilities follow the relabelling
    pairs = np.array([[0, 1], [2, 5], [3, 8]])
    inv = np.argsort(order)
    np.testing.assert_allclose(edge_probs(zp, inv[pairs]), edge_probs(z, pairs), atol=1e-10)


def test_checkpoint_roundtrip(tmp_path):
    g = two_cliques(seed=0)
    model, trace = train(g, split_edges(g), GaeHyper(max_epochs=5))
    save_model(model, tmp_path / "m", g.window_end)
    back = load_model(tmp_path / "m")
    np.testing.assert_array_equal(back.w0, model.w0)
    np.testing.assert_array_equal(back.w1, model.w1)
    assert back.hyper == model.hyper
    trace.to_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,val_auroc" and len(lines) == trace.epochs_run + 1
