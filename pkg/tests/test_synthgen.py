import numpy as np
import pytest
from scipy import stats

from gaevol.corrnet import edge_overlap, graph_sequence, pearson_matrix
from gaevol.ingest import log_returns, realized_volatility
from gaevol.synthgen import (Scenario, block_loadings, coupled, generate, planted_auroc_signal,
                             scenario_from_mapping)

SMALL = Scenario(n_tickers=24, n_sectors=4, days=30, bars_per_day=60,
                 schedule=((0, 1), (15, 2)), seed=3)


def test_same_seed_bit_identical():
    a, b = generate(SMALL), generate(SMALL)
    np.testing.assert_array_equal(a.panel.prices, b.panel.prices)
    np.testing.assert_array_equal(a.panel.timestamps, b.panel.timestamps)
    np.testing.assert_array_equal(a.truth.true_rv, b.truth.true_rv)
    c = generate(SMALL.replace(seed=4))
    assert not np.array_equal(a.panel.prices, c.panel.prices)


def test_panel_layout_and_truth():
    m = generate(SMALL)
    assert m.panel.prices.shape == (24, 30 * 61)
    np.testing.assert_allclose(m.panel.prices[:, 0], 100.0, rtol=1e-14)
    assert m.truth.regimes.tolist() == [1] * 15 + [2] * 15
    assert np.bincount(m.truth.sectors).tolist() == [6, 6, 6, 6]
    r = log_returns(m.panel)
    assert r.returns.shape == (24, 30 * 60)


def test_zero_idio_single_sector_is_complete_graph():
    sc = Scenario(n_tickers=8, n_sectors=1, days=21, bars_per_day=30, idio_vol=(0.0, 0.0),
                  extra_factors=0, schedule=((0, 1),))
    seq = graph_sequence(log_returns(generate(sc).panel), 20, 0.99)
    assert all(g.n_edges == 8 * 7 // 2 for g in seq)


def test_two_sectors_give_two_cliques():
    sc = Scenario(n_tickers=20, n_sectors=2, days=20, bars_per_day=390, schedule=((0, 1),),
                  seed=1)
    m = generate(sc)
    g = graph_sequence(log_returns(m.panel), 20, 0.7)[0]
    same = m.truth.sectors[:, None] == m.truth.sectors[None, :]
    assert np.all(g.adjacency[~same] == 0)
    within = g.adjacency[same & ~np.eye(20, dtype=bool)]
    assert within.mean() > 0.95


def cross_sector_fraction(g, sectors):
    u, v = g.edge_list.T
    return np.mean(sectors[u] != sectors[v]) if g.n_edges else 0.0


def test_scramble_raises_cross_sector_edges():
    sc = Scenario(n_tickers=40, days=45, bars_per_day=120, scramble_fraction=0.5,
                  schedule=((0, 1), (20, 2)), seed=2)
    m = generate(sc)
    seq = graph_sequence(log_returns(m.panel), 20, 0.7)
    before = cross_sector_fraction(seq[0], m.truth.sectors)  # window ends on day 19
    after = cross_sector_fraction(seq[-1], m.truth.sectors)  # fully shifted window
    assert before == 0.0
    assert after > before


@pytest.mark.parametrize("market", [0.0, 0.5])
def test_within_sector_correlation_matches_factor_model(market):
    sc = Scenario(n_tickers=12, n_sectors=3, days=1, bars_per_day=5000, extra_factors=0,
                  market_loading=(market, market), idio_vol=(8e-4, 8e-4), schedule=((0, 1),),
                  seed=7)
    m = generate(sc)
    r = log_returns(m.panel).returns
    corr, _ = pearson_matrix(r)
    fv, iv, L = 1e-3, 8e-4, 1.0
    within = (L ** 2 + market ** 2) * fv ** 2 / ((L ** 2 + market ** 2) * fv ** 2 + iv ** 2)
    across = market ** 2 * fv ** 2 / ((L ** 2 + market ** 2) * fv ** 2 + iv ** 2)
    same = m.truth.sectors[:, None] == m.truth.sectors[None, :]
    off = ~np.eye(12, dtype=bool)
    assert abs(corr[same & off].mean() - within) < 0.05
    assert abs(corr[~same].mean() - across) < 0.05


def test_loading_matrix_layout():
    load, sectors = block_loadings(Scenario(n_tickers=6, n_sectors=2, extra_factors=3))
    assert load.shape == (6, 1 + 2 + 3)
    assert np.all(load[:, 0] == 0.5)
    assert np.all(load[np.arange(6), 1 + sectors] == 1.0)
    assert np.all(load[:, 3:] == 0.0)


def daily_rv(sc):
    return realized_volatility(log_returns(generate(sc).panel)).rv


def test_coupling_one_quadruples_variance():
    sc = coupled(Scenario(n_tickers=20, days=40, bars_per_day=390,
                          schedule=((0, 1), (20, 2)), seed=5), 1.0)
    rv = daily_rv(sc)
    ratio = rv[sc.vol_scale() == 2.0].mean() / rv[sc.vol_scale() == 1.0].mean()
    assert ratio == pytest.approx(4.0, rel=0.15)


def test_vol_lag_shifts_the_multiplier():
    sc = Scenario(days=10, schedule=((0, 1), (3, 2), (6, 1)), vol_multiplier=2.0,
                  vol_lag_days=2)
    assert sc.vol_scale().tolist() == [1, 1, 1, 1, 1, 2, 2, 2, 1, 1]


def test_coupling_zero_leaves_rv_unchanged_across_regimes():
    rejections = 0
    for seed in range(20):
        sc = Scenario(n_tickers=20, days=40, bars_per_day=390, schedule=((0, 1), (20, 2)),
                      scramble_fraction=1.0, seed=seed)
        lrv = np.log(daily_rv(sc))
        regimes = sc.regimes()
        rejections += stats.ttest_ind(lrv[regimes == 1], lrv[regimes == 2]).pvalue < 0.05
    assert rejections <= 3


def test_true_rv_tracks_realized():
    sc = Scenario(n_tickers=20, days=30, bars_per_day=390, schedule=((0, 1), (10, 2)),
                  vol_multiplier=1.5, seed=6)
    m = generate(sc)
    rv = realized_volatility(log_returns(m.panel)).rv
    assert np.mean(rv / m.truth.true_rv) == pytest.approx(1.0, abs=0.05)


def test_scramble_zero_sequence_is_stationary():
    sc = Scenario(n_tickers=24, days=60, bars_per_day=120, scramble_fraction=0.0,
                  schedule=((0, 1), (30, 2)), seed=8)
    seq = graph_sequence(log_returns(generate(sc).panel), 20, 0.7)
    ov = np.array([edge_overlap(a, b) for a, b in zip(seq, seq[1:])])
    h = len(ov) // 2
    a, b = ov[:h], ov[h:]
    band = 2 * np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert abs(a.mean() - b.mean()) <= max(band, 1e-12)


def test_planted_signal_and_coupling_validation():
    sc = Scenario(n_tickers=10, days=6, bars_per_day=60, schedule=((0, 1), (3, 2)))
    vol = planted_auroc_signal(sc, 1.0, horizon=30)
    assert len(vol) == 6 * 2
    with pytest.raises(ValueError):
        coupled(sc, -0.5)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(schedule=((5, 1),))
    with pytest.raises(ValueError):
        Scenario(schedule=((0, 1), (0, 2)))
    with pytest.raises(ValueError):
        Scenario(schedule=((0, 3),))
    with pytest.raises(ValueError):
        Scenario(scramble_fraction=1.5)
    with pytest.raises(ValueError):
        Scenario(factor_vol=(0.0, 1e-3))


def test_scenario_from_mapping_and_truth_csv(tmp_path):
    sc = scenario_from_mapping({"n_tickers": "12", "schedule": "0:1; 4:2",
                                "market_loading": "0.3, 0.9", "match_index_vol": "false",
                                "days": "8", "bars_per_day": "20"})
    assert sc.n_tickers == 12 and sc.schedule == ((0, 1), (4, 2))
    assert sc.market_loading == (0.3, 0.9) and sc.match_index_vol is False
    with pytest.raises(KeyError):
        scenario_from_mapping({"colour": "red"})
    m = generate(sc)
    m.truth.to_csv(tmp_path / "truth.csv")
    lines = (tmp_path / "truth.csv").read_text().splitlines()
    assert lines[0] == "day,regime,true_rv" and len(lines) == 9
