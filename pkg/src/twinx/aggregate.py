"""Turn per-instance attributions into the four chart datasets.

Bar: global mean |phi| ranking. Beeswarm: every (instance, feature) point
with a normalized color scalar and a deterministic stacking offset.
Dependence: one feature's summary values against its phi, colored by the
most correlated other feature. Force: one instance's signed segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySet
from .shapley import Explanation

BEESWARM_BINS = 25


@dataclass(frozen=True)
class ExplanationSet:
    explanations: tuple[Explanation, ...]

    def __post_init__(self):
        if not self.explanations:
            raise EmptySet("no explanations")
        names = self.explanations[0].feature_names
        for e in self.explanations:
            if e.feature_names != names:
                raise ValueError("explanations disagree on feature order")
        object.__setattr__(self, "explanations", tuple(self.explanations))

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.explanations[0].feature_names

    @property
    def count(self) -> int:
        return len(self.explanations)

    def phi_matrix(self) -> np.ndarray:
        return np.stack([e.phi for e in self.explanations])

    def summary_matrix(self) -> np.ndarray:
        return np.stack([e.feature_summaries for e in self.explanations])


def global_importance(es: ExplanationSet) -> list[tuple[str, float]]:
    """Features ranked by mean |phi|, descending; ties break lexicographically."""
    mean_abs = np.abs(es.phi_matrix()).mean(axis=0)
    pairs = list(zip(es.feature_names, (float(v) for v in mean_abs)))
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


@dataclass(frozen=True)
class FeatureCloud:
    name: str
    phi: np.ndarray
    color: np.ndarray   # normalized summary value in [0, 1]
    offset: np.ndarray  # stacking offset in point units


def _stack_offsets(phi: np.ndarray) -> np.ndarray:
    """Deterministic density stacking: bin by phi, center ranks around 0."""
    n = len(phi)
    lo, hi = float(phi.min()), float(phi.max())
    if hi == lo:
        bins = np.zeros(n, dtype=np.int64)
    else:
        width = (hi - lo) / BEESWARM_BINS
        bins = np.minimum((phi - lo) // width, BEESWARM_BINS - 1).astype(np.int64)
    offsets = np.empty(n, dtype=np.float64)
    for b in np.unique(bins):
        idx = np.flatnonzero(bins == b)
        ranks = np.arange(len(idx), dtype=np.float64)
        offsets[idx] = ranks - (len(idx) - 1) / 2.0
    return offsets


def beeswarm_data(es: ExplanationSet) -> list[FeatureCloud]:
    """One point cloud per feature, in global-importance order."""
    phi = es.phi_matrix()
    summ = es.summary_matrix()
    clouds = []
    for name, _ in global_importance(es):
        j = es.feature_names.index(name)
        col = summ[:, j]
        lo, hi = float(col.min()), float(col.max())
        if hi == lo:
            color = np.full(len(col), 0.5)
        else:
            color = (col - lo) / (hi - lo)
        clouds.append(FeatureCloud(
            name=name, phi=phi[:, j].copy(), color=color,
            offset=_stack_offsets(phi[:, j]),
        ))
    return clouds


@dataclass(frozen=True)
class DependenceData:
    feature: str
    interaction: str
    x: np.ndarray        # raw summary values of the plotted feature
    phi: np.ndarray
    color: np.ndarray    # raw summary values of the interaction feature
    undefined_correlation: bool = False


def _abs_pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return abs(float(np.corrcoef(a, b)[0, 1]))


def dependence_data(es: ExplanationSet, feature: str) -> DependenceData:
    """Scatter of a feature's attributions, colored by its strongest interaction.

    The interaction partner maximizes |Pearson correlation| between its
    summary values and this feature's phi; a constant phi column has no
    defined correlation, so the lexicographically first other feature is
    used and the result flagged.
    """
    if es.count < 3:
        raise EmptySet("dependence data needs at least 3 explanations")
    names = es.feature_names
    if feature not in names:
        raise KeyError(feature)
    i = names.index(feature)
    phi_i = es.phi_matrix()[:, i]
    summ = es.summary_matrix()
    others = sorted(n for n in names if n != feature)
    if np.ptp(phi_i) == 0:
        return DependenceData(feature, others[0], summ[:, i].copy(), phi_i,
                              summ[:, names.index(others[0])].copy(),
                              undefined_correlation=True)
    scored = sorted(
        ((-_abs_pearson(summ[:, names.index(n)], phi_i), n) for n in others)
    )
    best = scored[0][1]
    return DependenceData(feature, best, summ[:, i].copy(), phi_i,
                          summ[:, names.index(best)].copy())


@dataclass(frozen=True)
class ForceSegments:
    base: float
    fx: float
    positive: tuple[tuple[str, float, float], ...]  # (name, phi, summary)
    negative: tuple[tuple[str, float, float], ...]  # phi < 0, ordered by |phi|


def force_data(e: Explanation) -> ForceSegments:
    """Partition one explanation's attributions into signed, sorted segments."""
    pos = []
    neg = []
    for i, name in enumerate(e.feature_names):
        p = float(e.phi[i])
        if p > 0:
            pos.append((name, p, float(e.feature_summaries[i])))
        elif p < 0:
            neg.append((name, p, float(e.feature_summaries[i])))
    pos.sort(key=lambda t: (-abs(t[1]), t[0]))
    neg.sort(key=lambda t: (-abs(t[1]), t[0]))
    return ForceSegments(base=e.base, fx=e.fx,
                         positive=tuple(pos), negative=tuple(neg))


def importance_to_dict(ranking: list[tuple[str, float]]) -> dict:
    return {"ranking": [{"name": n, "mean_abs_phi": v} for n, v in ranking]}


def beeswarm_to_dict(clouds: list[FeatureCloud]) -> dict:
    return {"features": [
        {"name": c.name,
         "points": [{"phi": float(c.phi[i]), "color": float(c.color[i]),
                     "offset": float(c.offset[i])} for i in range(len(c.phi))]}
        for c in clouds
    ]}


def dependence_to_dict(dd: DependenceData) -> dict:
    return {
        "feature": dd.feature,
        "interaction": dd.interaction,
        "undefined_correlation": dd.undefined_correlation,
        "points": [{"x": float(dd.x[i]), "phi": float(dd.phi[i]),
                    "color": float(dd.color[i])} for i in range(len(dd.x))],
    }


def force_to_dict(fs: ForceSegments) -> dict:
    def seg(t):
        return {"name": t[0], "phi": t[1], "summary_value": t[2]}
    return {
        "base": fs.base,
        "fx": fs.fx,
        "positive": [seg(t) for t in fs.positive],
        "negative": [seg(t) for t in fs.negative],
    }


def force_gap(fs: ForceSegments) -> float:
    signed = [t[1] for t in fs.positive] + [t[1] for t in fs.negative]
    return abs(fs.base + math.fsum(signed) - fs.fx)
