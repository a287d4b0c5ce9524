"""Independent reference implementations used as test oracles."""

import math

import mpmath
import numpy as np


def _sse(values):
    if not values:
        return 0.0
    m = math.fsum(values) / len(values)
    return math.fsum((v - m) ** 2 for v in values)


def exhaustive_split(X, y):
    """Try every (option, midpoint) pair by direct sum-of-squares arithmetic.

    Ties within 1e-12 of the parent sum of squares go to the lowest option,
    then the smallest threshold.
    """
    n, m = X.shape
    parent = _sse(list(y))
    if n < 2 or parent <= 0.0:
        return None
    scored = []
    for j in range(m):
        levels = sorted(set(X[:, j].tolist()))
        for a, b in zip(levels, levels[1:]):
            thr = (a + b) / 2.0
            left = [y[k] for k in range(n) if X[k, j] <= thr]
            right = [y[k] for k in range(n) if X[k, j] > thr]
            scored.append((parent - _sse(left) - _sse(right), j, thr))
    if not scored:
        return None
    top = max(g for g, _, _ in scored)
    tol = 1e-12 * parent
    if top <= tol:
        return None
    tied = [(j, thr) for g, j, thr in scored if g >= top - tol]
    return min(tied)


def cart_oracle_splits(X, y, depth):
    """``(depth, option, threshold)`` of every split, breadth first."""
    out, queue = [], [(np.arange(len(y)), 0)]
    while queue:
        idx, d = queue.pop(0)
        if d >= depth:
            continue
        found = exhaustive_split(X[idx], y[idx])
        if found is None:
            continue
        j, thr = found
        out.append((d, j, thr))
        left = X[idx, j] <= thr
        queue.append((idx[left], d + 1))
        queue.append((idx[~left], d + 1))
    return out


def hoeffding_mp(sizes, delta, dps=50):
    with mpmath.workdps(dps):
        h = mpmath.mpf(len(sizes)) / mpmath.fsum(1 / mpmath.mpf(n) for n in sizes)
        return mpmath.sqrt(mpmath.log(1 / mpmath.mpf(delta)) / (2 * h))


def random_cart_dataset(seed):
    """At most 32 samples and 6 options, mixing binary and small-integer options."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 33))
    m = int(rng.integers(1, 7))
    X = np.empty((n, m))
    for j in range(m):
        X[:, j] = rng.integers(0, 2, n) if rng.random() < 0.5 else rng.integers(0, 5, n)
    w = rng.normal(0, 3, m)
    y = X @ w + rng.normal(0, 1, n)
    if seed % 5 == 0:  # coarse targets create exact gain ties
        y = np.round(y)
    return X, y
