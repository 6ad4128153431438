"""Brute-force references for the k-means tests."""

from fractions import Fraction

import numpy as np


def brute_assign(X, C):
    lab = np.empty(len(X), dtype=int)
    d = np.empty(len(X))
    for i, x in enumerate(X):
        best, bj = np.inf, 0
        for j, c in enumerate(C):
            s = sum((a - b) ** 2 for a, b in zip(x, c))
            if s < best:
                best, bj = s, j
        lab[i], d[i] = bj, best
    return lab, d


def sad_minimizer(values):
    """Smallest member value minimizing the sum of absolute deviations."""
    v = sorted(values)
    # exact arithmetic: the whole interval between the middle values ties
    q = [Fraction(x) for x in v]
    cost = [sum(abs(x - c) for x in q) for c in q]
    best = min(cost)
    return min(c for c, k in zip(v, cost) if k == best)


def blobs(seed, n_per=60, sd=0.3):
    r = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    X = np.concatenate([c + r.normal(0, sd, (n_per, 2)) for c in centers])
    return X, np.repeat(np.arange(3), n_per)


def same_partition(a, b):
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))
