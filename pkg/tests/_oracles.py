"""Independent reference implementations used to verify the package.

Everything here is deliberately written the slow, obvious way (plain loops,
explicit formulas, different algorithms) so agreement with the package is
meaningful evidence rather than the same code tested against itself.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def causal_conv_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                      dilation: int) -> np.ndarray:
    """Dilated causal 1-D convolution by direct summation.

    x: (n, c_in, width), w: (c_out, c_in, k), left zero padding so position t
    only sees inputs at t, t-dilation, ..., t-(k-1)*dilation.
    """
    n, c_in, width = x.shape
    c_out, _, k = w.shape
    out = np.zeros((n, c_out, width))
    for s in range(n):
        for co in range(c_out):
            for t in range(width):
                acc = b[co]
                for ci in range(c_in):
                    for j in range(k):
                        # tap j reads k-1-j steps * dilation into the past
                        src = t - (k - 1 - j) * dilation
                        if src >= 0:
                            acc += w[co, ci, j] * x[s, ci, src]
                out[s, co, t] = acc
    return out


def finite_difference_grads(loss_fn, params: dict, eps: float = 1e-4) -> dict:
    """Central finite differences of a scalar loss over a dict of arrays."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def shapley_by_permutations(v, m: int) -> np.ndarray:
    """Average marginal contribution over all m! orderings.

    v maps a frozenset of feature indices to a scalar. Only usable for tiny m.
    """
    phi = np.zeros(m)
    perms = list(itertools.permutations(range(m)))
    for order in perms:
        members: frozenset = frozenset()
        for i in order:
            phi[i] += v(members | {i}) - v(members)
            members = members | {i}
    return phi / len(perms)


def shapley_by_subsets(v, m: int) -> np.ndarray:
    """Direct subset-weight formula, sets instead of bit masks."""
    phi = np.zeros(m)
    fact = math.factorial
    for i in range(m):
        rest = [j for j in range(m) if j != i]
        total = 0.0
        for r in range(m):
            for sub in itertools.combinations(rest, r):
                s = frozenset(sub)
                weight = fact(r) * fact(m - r - 1) / fact(m)
                total += weight * (v(s | {i}) - v(s))
        phi[i] = total
    return phi


def table_value_fn(f, x: np.ndarray, bg: np.ndarray):
    """Interventional coalition value for set-based oracles.

    Composites keep x's entries inside the coalition and take each
    background row's entries outside, averaging f over background rows.
    """
    bg = np.atleast_2d(bg)

    def v(members: frozenset) -> float:
        total = 0.0
        for row in bg:
            comp = row.copy()
            for i in members:
                comp[i] = x[i]
            total += float(f(comp[None])[0])
        return total / len(bg)

    return v


def mahalanobis_by_inverse(e: np.ndarray, mu: np.ndarray,
                           sigma: np.ndarray) -> float:
    diff = np.asarray(e, dtype=float) - mu
    return float(np.sqrt(diff @ np.linalg.inv(sigma) @ diff))


def count_windows_loop(num_rows: int, window: int, stride: int) -> int:
    count = 0
    origin = 0
    while origin + window < num_rows:  # target row origin+window must exist
        count += 1
        origin += stride
    return count


def kernel_weight(m: int, size: int) -> float:
    """Coalition weight (m-1) / (C(m,s) * s * (m-s)) for 0 < s < m."""
    return (m - 1) / (math.comb(m, size) * size * (m - size))


def abs_pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return abs(float(np.corrcoef(a, b)[0, 1]))
