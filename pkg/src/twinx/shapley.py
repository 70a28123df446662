"""Model-agnostic Shapley attribution with exact and kernel-weighted estimators.

Features are masked interventionally: a coalition keeps the explained
instance's values for its members and substitutes background values for the
rest, and the coalition value v(S) is the mean model output over the
background set. The exact estimator enumerates all 2^M coalitions (memoized,
each evaluated once); the kernel estimator solves the classical weighted
least-squares system over sampled coalitions with the efficiency constraint
eliminated, so attributions plus base always reproduce the explained output.

Per-feature sums are accumulated with math.fsum, which is order-independent,
so interchangeable features receive exactly equal attributions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .anomaly import ErrorModel
from .errors import DegenerateSystem, InvalidConfig, InvariantViolation, TooManyFeatures
from .forecaster import TcnModel, forward_batch
from .telemetry import ScalerParams

EXACT_FEATURE_CAP = 20
AUTO_EXACT_LIMIT = 15
_CHUNK_TARGET_ELEMS = 1 << 22


@dataclass(frozen=True)
class Explanation:
    base: float
    fx: float
    phi: np.ndarray
    feature_names: tuple[str, ...]
    feature_summaries: np.ndarray
    estimator: str
    samples: int

    def __post_init__(self):
        phi = np.ascontiguousarray(self.phi, dtype=np.float64)
        summ = np.ascontiguousarray(self.feature_summaries, dtype=np.float64)
        if phi.shape != (len(self.feature_names),) or summ.shape != phi.shape:
            raise ValueError("phi/summary length must match feature names")
        phi.flags.writeable = False
        summ.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "feature_summaries", summ)

    @property
    def num_features(self) -> int:
        return len(self.feature_names)


@dataclass(frozen=True)
class ExplainConfig:
    estimator: str = "auto"  # auto | exact | kernel
    n_samples: int = 4096
    seed: int = 0


def efficiency_gap(e: Explanation) -> float:
    return abs(e.base + math.fsum(e.phi.tolist()) - e.fx)


def efficiency_tolerance(e: Explanation) -> float:
    if e.estimator == "exact":
        return 1e-6
    return 0.02 * max(1.0, abs(e.fx - e.base))


def check_efficiency(e: Explanation) -> None:
    gap = efficiency_gap(e)
    if gap > efficiency_tolerance(e):
        raise InvariantViolation(
            f"attributions do not add up: |b + sum(phi) - fx| = {gap:.3e}"
        )


def _max_threads() -> int:
    try:
        return max(1, int(os.environ.get("TWINX_THREADS", "1")))
    except ValueError:
        return 1


def _eval_masks_chunked(evaluate, masks: np.ndarray, chunk: int) -> np.ndarray:
    """Evaluate v for each boolean coalition row, in deterministic chunks.

    Chunks are independent pure evaluations, so thread-level parallelism
    cannot change the result; values land by position.
    """
    chunks = [masks[lo:lo + chunk] for lo in range(0, len(masks), chunk)]
    threads = min(_max_threads(), len(chunks))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(evaluate, chunks))
    else:
        parts = [evaluate(c) for c in chunks]
    return np.concatenate(parts) if parts else np.empty(0)


def _vector_evaluator(f, x: np.ndarray, bg: np.ndarray):
    """Coalition evaluator over plain feature vectors; f maps (n, M) -> (n,)."""
    def evaluate(masks: np.ndarray) -> np.ndarray:
        c, m = masks.shape
        b = bg.shape[0]
        comp = np.where(masks[:, None, :], x[None, None, :], bg[None, :, :])
        vals = np.asarray(f(comp.reshape(c * b, m)), dtype=np.float64)
        return vals.reshape(c, b).mean(axis=1)
    chunk = max(1, _CHUNK_TARGET_ELEMS // max(1, bg.shape[0] * x.shape[0]))
    return evaluate, chunk


def _masks_from_ints(mask_ints: np.ndarray, m: int) -> np.ndarray:
    return (mask_ints[:, None] >> np.arange(m, dtype=np.uint32)[None, :]) & 1 != 0


def _shapley_weights(m: int) -> np.ndarray:
    fact = math.factorial
    return np.array([fact(s) * fact(m - 1 - s) / fact(m) for s in range(m)])


def _exact_phi(values: np.ndarray, m: int) -> np.ndarray:
    """Classical subset-enumeration formula over a full 2^M value table."""
    all_masks = np.arange(1 << m, dtype=np.uint32)
    sizes = np.bitwise_count(all_masks).astype(np.int64)
    weights = _shapley_weights(m)
    phi = np.empty(m, dtype=np.float64)
    for i in range(m):
        bit = np.uint32(1 << i)
        without = all_masks[(all_masks & bit) == 0]
        addends = weights[sizes[without]] * (values[without | bit] - values[without])
        phi[i] = math.fsum(addends.tolist())
    return phi


def _run_exact(evaluate, chunk: int, m: int, fx: float) -> tuple[np.ndarray, float, int]:
    if m > EXACT_FEATURE_CAP:
        raise TooManyFeatures(f"exact enumeration capped at {EXACT_FEATURE_CAP} features")
    mask_ints = np.arange(1 << m, dtype=np.uint32)
    values = _eval_masks_chunked(
        lambda ints: evaluate(_masks_from_ints(ints, m)), mask_ints, chunk)
    values[-1] = fx  # full coalition is the unmasked instance by definition
    phi = _exact_phi(values, m)
    return phi, float(values[0]), 1 << m


def coalition_value(f, x: np.ndarray, coalition, bg: np.ndarray) -> float:
    """v(S): mean of f over composites keeping x's features in S."""
    x = np.asarray(x, dtype=np.float64)
    bg = np.atleast_2d(np.asarray(bg, dtype=np.float64))
    m = x.shape[0]
    members = sorted(set(int(i) for i in coalition))
    if members and (members[0] < 0 or members[-1] >= m):
        raise InvalidConfig("coalition members out of range")
    mask = np.zeros((1, m), dtype=bool)
    mask[0, members] = True
    if mask.all():
        return float(np.asarray(f(x[None, :]))[0])
    evaluate, _ = _vector_evaluator(f, x, bg)
    return float(evaluate(mask)[0])


def exact_shapley(f, x: np.ndarray, bg: np.ndarray,
                  feature_names: tuple[str, ...] | None = None) -> Explanation:
    """Exact Shapley attribution of f(x) against a background sample."""
    x = np.asarray(x, dtype=np.float64)
    bg = np.atleast_2d(np.asarray(bg, dtype=np.float64))
    m = x.shape[0]
    names = feature_names or tuple(f"f{i}" for i in range(m))
    fx = float(np.asarray(f(x[None, :]))[0])
    evaluate, chunk = _vector_evaluator(f, x, bg)
    phi, base, n_evals = _run_exact(evaluate, chunk, m, fx)
    return Explanation(base=base, fx=fx, phi=phi, feature_names=names,
                       feature_summaries=x, estimator="exact", samples=n_evals)


def _stratum_masses(m: int) -> np.ndarray:
    """Total kernel weight of each coalition size 1..M-1 (index by size)."""
    masses = np.zeros(m, dtype=np.float64)
    for s in range(1, m):
        masses[s] = (m - 1) / (s * (m - s))
    return masses


def _sample_coalitions(m: int, n_samples: int, seed: int
                       ) -> tuple[list[int], dict[int, float], dict[int, int]]:
    """Pick coalition masks: enumerate cheap strata fully, sample the rest.

    Returns (ordered unique masks, exact kernel weight per enumerated mask,
    draw multiplicity per sampled mask). Paired: complements enter together.
    """
    import itertools

    masses = _stratum_masses(m)
    remaining_sizes = set(range(1, m))
    budget = n_samples
    enumerated: dict[int, float] = {}
    order: list[int] = []

    half = m // 2 if m % 2 == 0 else (m - 1) // 2
    for s in range(1, half + 1):
        comp = m - s
        sizes = (s,) if s == comp else (s, comp)
        count = sum(math.comb(m, sz) for sz in sizes)
        mass_share = sum(masses[sz] for sz in sizes) / sum(
            masses[sz] for sz in remaining_sizes)
        if count > budget * mass_share:
            break
        for members in itertools.combinations(range(m), s):
            mask = 0
            for i in members:
                mask |= 1 << i
            per = masses[s] / math.comb(m, s)
            enumerated[mask] = per
            order.append(mask)
            if comp != s:
                cmask = (1 << m) - 1 - mask
                enumerated[cmask] = masses[comp] / math.comb(m, comp)
                order.append(cmask)
        budget -= count
        for sz in sizes:
            remaining_sizes.discard(sz)

    sampled: dict[int, int] = {}
    if remaining_sizes and budget > 0:
        rng = np.random.default_rng(seed)
        size_list = sorted(remaining_sizes)
        probs = np.array([masses[s] for s in size_list])
        probs = probs / probs.sum()
        full = (1 << m) - 1
        while budget > 0:
            s = int(rng.choice(size_list, p=probs))
            members = rng.choice(m, size=s, replace=False)
            mask = 0
            for i in members:
                mask |= 1 << int(i)
            for cand in (mask, full - mask):
                if budget <= 0:
                    break
                if cand not in sampled and cand not in enumerated:
                    order.append(cand)
                sampled[cand] = sampled.get(cand, 0) + 1
                budget -= 1
    return order, enumerated, sampled


def _kernel_solve(mask_ints: list[int], values: np.ndarray, weights: np.ndarray,
                  m: int, base: float, fx: float) -> np.ndarray:
    """Weighted least squares with the efficiency constraint eliminated.

    The last feature's attribution is substituted out via
    phi_last = (fx - base) - sum(others), which makes efficiency exact.
    """
    z = _masks_from_ints(np.asarray(mask_ints, dtype=np.uint32), m).astype(np.float64)
    y = values - base - z[:, -1] * (fx - base)
    x_mat = z[:, :-1] - z[:, -1:]
    xtw = x_mat.T * weights[None, :]
    lhs = xtw @ x_mat
    rhs = xtw @ y
    try:
        head = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateSystem("kernel regression matrix is singular") from None
    if not np.all(np.isfinite(head)):
        raise DegenerateSystem("kernel regression produced non-finite solution")
    phi = np.empty(m, dtype=np.float64)
    phi[:-1] = head
    phi[-1] = (fx - base) - math.fsum(head.tolist())
    return phi


def _run_kernel(evaluate, chunk: int, m: int, base: float, fx: float,
                n_samples: int, seed: int) -> tuple[np.ndarray, int]:
    if n_samples < 2 * m + 2:
        raise InvalidConfig(f"kernel estimator needs at least {2 * m + 2} samples")
    if m == 1:
        return np.array([fx - base]), 2
    order, enumerated, sampled = _sample_coalitions(m, n_samples, seed)
    if len(order) < m:
        raise DegenerateSystem("too few distinct coalitions to identify attributions")
    values = _eval_masks_chunked(
        lambda ints: evaluate(_masks_from_ints(ints, m)),
        np.asarray(order, dtype=np.uint32), chunk)

    leftover_mass = 0.0
    total_draws = 0
    if sampled:
        masses = _stratum_masses(m)
        covered = {msk.bit_count() for msk in enumerated}
        leftover_mass = float(sum(masses[s] for s in range(1, m) if s not in covered))
        total_draws = sum(sampled.values())
    weights = np.empty(len(order), dtype=np.float64)
    for j, msk in enumerate(order):
        if msk in enumerated:
            weights[j] = enumerated[msk]
        else:
            weights[j] = leftover_mass * sampled[msk] / total_draws
    phi = _kernel_solve(order, values, weights, m, base, fx)
    return phi, len(order) + 2


def kernel_shap(f, x: np.ndarray, bg: np.ndarray, n_samples: int = 4096,
                seed: int = 0,
                feature_names: tuple[str, ...] | None = None) -> Explanation:
    """Kernel-weighted regression estimate of Shapley values.

    With a budget covering every proper coalition this reproduces the exact
    enumeration answer; efficiency holds exactly by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    bg = np.atleast_2d(np.asarray(bg, dtype=np.float64))
    m = x.shape[0]
    names = feature_names or tuple(f"f{i}" for i in range(m))
    fx = float(np.asarray(f(x[None, :]))[0])
    evaluate, chunk = _vector_evaluator(f, x, bg)
    base = float(evaluate(np.zeros((1, m), dtype=bool))[0])
    phi, n_evals = _run_kernel(evaluate, chunk, m, base, fx, n_samples, seed)
    return Explanation(base=base, fx=fx, phi=phi, feature_names=names,
                       feature_summaries=x, estimator="kernel", samples=n_evals)


def score_values(model: TcnModel, em: ErrorModel, windows: np.ndarray,
                 targets: np.ndarray) -> np.ndarray:
    """Anomaly scores for a batch of (window, target) pairs."""
    residuals = targets - forward_batch(model, windows)
    diff = residuals - em.mean
    quad = np.einsum("ij,jk,ik->i", diff, em.precision, diff)
    dist = np.sqrt(np.maximum(quad, 0.0))
    return (dist * dist) / (dist * dist + em.tau * em.tau)


def _window_evaluator(model: TcnModel, em: ErrorModel, window: np.ndarray,
                      target: np.ndarray, bg_windows: np.ndarray,
                      bg_targets: np.ndarray):
    """Coalition evaluator masking whole channels of a (window, target) pair."""
    def evaluate(masks: np.ndarray) -> np.ndarray:
        c = masks.shape[0]
        b = bg_windows.shape[0]
        wm = masks[:, None, None, :]
        comp_w = np.where(wm, window[None, None], bg_windows[None])
        comp_t = np.where(masks[:, None, :], target[None, None], bg_targets[None])
        w, d = window.shape
        scores = score_values(model, em,
                              comp_w.reshape(c * b, w, d),
                              comp_t.reshape(c * b, d))
        return scores.reshape(c, b).mean(axis=1)
    per = bg_windows.shape[0] * window.size
    chunk = max(1, _CHUNK_TARGET_ELEMS // max(1, per))
    return evaluate, chunk


def explain_instance(model: TcnModel, em: ErrorModel, window: np.ndarray,
                     target: np.ndarray, bg_windows: np.ndarray,
                     bg_targets: np.ndarray,
                     feature_names: tuple[str, ...],
                     config: ExplainConfig = ExplainConfig(),
                     scaler: ScalerParams | None = None) -> Explanation:
    """Attribute one window's anomaly score to its channels.

    Feature i's masked composite takes channel i's whole window column plus
    target entry from a background pair. Summaries are the per-channel window
    means, converted back to raw units when a scaler is supplied.
    """
    window = np.asarray(window, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    bg_windows = np.asarray(bg_windows, dtype=np.float64)
    bg_targets = np.asarray(bg_targets, dtype=np.float64)
    m = window.shape[1]
    if len(feature_names) != m:
        raise InvalidConfig("feature name count must match channel count")

    fx = float(score_values(model, em, window[None], target[None])[0])
    evaluate, chunk = _window_evaluator(model, em, window, target,
                                        bg_windows, bg_targets)
    estimator = config.estimator
    if estimator == "auto":
        estimator = "exact" if m <= AUTO_EXACT_LIMIT else "kernel"
    if estimator == "exact":
        phi, base, n_evals = _run_exact(evaluate, chunk, m, fx)
    elif estimator == "kernel":
        base = float(evaluate(np.zeros((1, m), dtype=bool))[0])
        phi, n_evals = _run_kernel(evaluate, chunk, m, base, fx,
                                   config.n_samples, config.seed)
    else:
        raise InvalidConfig(f"unknown estimator {config.estimator!r}")

    summaries = window.mean(axis=0)
    if scaler is not None:
        summaries = summaries * scaler.spans + scaler.mins
        summaries[scaler.constant_mask] = scaler.mins[scaler.constant_mask]
    return Explanation(base=base, fx=fx, phi=phi,
                       feature_names=tuple(feature_names),
                       feature_summaries=summaries,
                       estimator=estimator, samples=n_evals)


def explanation_to_dict(e: Explanation) -> dict:
    """JSON-ready dict with fixed key order."""
    return {
        "base": e.base,
        "fx": e.fx,
        "estimator": e.estimator,
        "samples": e.samples,
        "features": [
            {"name": name, "phi": float(e.phi[i]),
             "summary_value": float(e.feature_summaries[i])}
            for i, name in enumerate(e.feature_names)
        ],
    }
