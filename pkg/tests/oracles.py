"""Slow, deliberately naive reference implementations used as test oracles."""

import math

import numpy as np


def pearson_naive(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def midranks_naive(x):
    """Rank i = 1 + #{smaller} + (#{equal} - 1) / 2."""
    return [1 + sum(b < a for b in x) + (sum(b == a for b in x) - 1) / 2 for a in x]


def spearman_naive(x, y):
    return pearson_naive(midranks_naive(list(x)), midranks_naive(list(y)))


def r2_naive(actual, predicted):
    m = sum(actual) / len(actual)
    sse = sum((a - p) ** 2 for a, p in zip(actual, predicted))
    sst = sum((a - m) ** 2 for a in actual)
    return 1 - sse / sst


def bce_naive(labels, probs):
    total = 0.0
    for y, p in zip(labels, probs):
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / len(labels)


def norm_adjacency_naive(a):
    n = len(a)
    deg = [1 + sum(a[i][j] for j in range(n)) for i in range(n)]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            aij = a[i][j] + (1 if i == j else 0)
            out[i, j] = aij / math.sqrt(deg[i] * deg[j])
    return out


def auroc_brute(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def gcn_naive(a_norm, x, w0, w1):
    """Straight-line loops for Z = A relu(A X W0) W1."""
    n, f = x.shape
    h = w0.shape[1]
    k = w1.shape[1]
    xw = [[sum(x[i, q] * w0[q, j] for q in range(f)) for j in range(h)] for i in range(n)]
    hid = [[max(0.0, sum(a_norm[i, m] * xw[m][j] for m in range(n))) for j in range(h)]
           for i in range(n)]
    hw = [[sum(hid[i][q] * w1[q, j] for q in range(h)) for j in range(k)] for i in range(n)]
    return np.array([[sum(a_norm[i, m] * hw[m][j] for m in range(n)) for j in range(k)]
                     for i in range(n)])


def lstsq_qr(x, y):
    """Intercept + slopes through a QR factorisation of the full design."""
    design = np.column_stack([np.ones(len(y)), x])
    q, r = np.linalg.qr(design)
    coef = np.linalg.solve(r, q.T @ y)
    return coef[0], coef[1:]


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
