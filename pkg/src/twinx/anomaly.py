"""Prediction-error distribution fitting and Mahalanobis anomaly scoring.

Residuals are next-step forecast errors (target minus prediction) in scaled
units. The fitted model holds their mean, a shrunk covariance, and the
empirical q-quantile distance threshold tau. Scores squash distances into
[0, 1) with s = D^2 / (D^2 + tau^2), so s > 0.5 exactly when D > tau.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from ._fsio import atomic_write_text
from .errors import (
    DataError,
    DimensionMismatch,
    InvalidConfig,
    Singular,
    TooFewSamples,
    TooFewSignal,
)
from .forecaster import TcnModel, forward_batch
from .telemetry import WindowedDataset

RIDGE = 1e-9


@dataclass(frozen=True)
class ErrorModel:
    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray
    tau: float
    shrinkage: float
    quantile: float

    def __post_init__(self):
        for name in ("mean", "cov", "precision"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class AnomalyVerdict:
    distance: float
    score: float
    is_anomaly: bool
    residual: np.ndarray


def fit_from_residuals(residuals: np.ndarray, shrinkage: float = 0.1,
                       quantile: float = 0.99) -> ErrorModel:
    """Fit mean/covariance/threshold directly from a residual matrix (N x d)."""
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidConfig("shrinkage must lie in [0, 1]")
    if not 0.0 < quantile < 1.0:
        raise InvalidConfig("quantile must lie in (0, 1)")
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 2:
        raise DimensionMismatch("residuals must be an N x d matrix")
    n, d = residuals.shape
    if n < d + 1:
        raise TooFewSamples(f"need at least d+1={d + 1} residuals, got {n}")

    mean = residuals.mean(axis=0)
    centered = residuals - mean
    with np.errstate(over="ignore", invalid="ignore"):
        sample_cov = (centered.T @ centered) / (n - 1)
    cov = ((1.0 - shrinkage) * sample_cov
           + shrinkage * np.diag(np.diag(sample_cov))
           + RIDGE * np.eye(d))
    # LAPACK may return garbage instead of failing on inf/nan input
    if not np.isfinite(cov).all():
        raise Singular("shrunk covariance is not finite")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise Singular("shrunk covariance is not positive definite") from None
    inv_chol = np.linalg.inv(chol)
    precision = inv_chol.T @ inv_chol
    precision = 0.5 * (precision + precision.T)

    quad = np.einsum("ij,jk,ik->i", centered, precision, centered)
    train_d = np.sqrt(np.maximum(quad, 0.0))
    tau = float(np.quantile(train_d, quantile))
    if tau <= 0.0:
        raise TooFewSignal("residuals carry no variation; threshold is zero")
    return ErrorModel(mean=mean, cov=cov, precision=precision, tau=tau,
                      shrinkage=shrinkage, quantile=quantile)


def fit_error_model(model: TcnModel, train: WindowedDataset,
                    shrinkage: float = 0.1, quantile: float = 0.99) -> ErrorModel:
    """Residuals = targets - forward(windows) over the training windows."""
    if train.num_windows == 0:
        raise TooFewSamples("no training windows")
    residuals = train.targets - forward_batch(model, train.inputs)
    return fit_from_residuals(residuals, shrinkage, quantile)


def _check_dim(e: np.ndarray, em: ErrorModel) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != em.dim:
        raise DimensionMismatch(f"residual has {e.shape[-1]} entries, model has {em.dim}")
    return e


def mahalanobis(e: np.ndarray, em: ErrorModel) -> float:
    """Covariance-normalized distance of one residual from the fitted mean."""
    e = _check_dim(e, em)
    diff = e - em.mean
    quad = float(diff @ em.precision @ diff)
    return float(np.sqrt(max(quad, 0.0)))


def mahalanobis_batch(residuals: np.ndarray, em: ErrorModel) -> np.ndarray:
    residuals = _check_dim(residuals, em)
    diff = np.atleast_2d(residuals) - em.mean
    quad = np.einsum("ij,jk,ik->i", diff, em.precision, diff)
    return np.sqrt(np.maximum(quad, 0.0))


def score_from_distance(d: float, tau: float) -> float:
    # Same arithmetic as the batch path so D == tau gives exactly 0.5.
    return (d * d) / (d * d + tau * tau)


def score_window(model: TcnModel, em: ErrorModel, window: np.ndarray,
                 target: np.ndarray) -> AnomalyVerdict:
    """One verdict for a (window, target) pair."""
    window = np.asarray(window, dtype=np.float64)
    target = _check_dim(target, em)
    pred = forward_batch(model, window[None])[0]
    residual = target - pred
    d = mahalanobis(residual, em)
    return AnomalyVerdict(
        distance=d,
        score=score_from_distance(d, em.tau),
        is_anomaly=bool(d > em.tau),
        residual=residual,
    )


def score_batch(model: TcnModel, em: ErrorModel, ds: WindowedDataset
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized scoring: (distances, scores, flags, residuals)."""
    residuals = ds.targets - forward_batch(model, ds.inputs)
    dist = mahalanobis_batch(residuals, em)
    scores = (dist * dist) / (dist * dist + em.tau * em.tau)
    flags = dist > em.tau
    return dist, scores, flags, residuals


def write_verdicts_csv(path, origin_indices: np.ndarray, timestamps: np.ndarray,
                       distances: np.ndarray, scores: np.ndarray,
                       flags: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["origin_index", "timestamp", "D", "s", "is_anomaly"])
    for i in range(len(origin_indices)):
        writer.writerow([
            int(origin_indices[i]),
            repr(float(timestamps[i])),
            repr(float(distances[i])),
            repr(float(scores[i])),
            "true" if flags[i] else "false",
        ])
    atomic_write_text(path, buf.getvalue())


def read_verdicts_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                     np.ndarray, np.ndarray]:
    """Load verdict rows back as (origins, timestamps, D, s, flags)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["origin_index", "timestamp", "D", "s", "is_anomaly"]:
                raise DataError(f"{path} is not a verdicts file")
            rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3]),
                     r[4] == "true") for r in reader]
    except OSError as exc:
        raise DataError(f"cannot read verdicts: {exc}") from exc
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed verdicts row: {exc}") from exc
    if not rows:
        return (np.empty(0, dtype=np.int64), np.empty(0), np.empty(0),
                np.empty(0), np.empty(0, dtype=bool))
    cols = list(zip(*rows))
    return (np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1]),
            np.asarray(cols[2]), np.asarray(cols[3]),
            np.asarray(cols[4], dtype=bool))


def detection_summary(em: ErrorModel, flags: np.ndarray) -> dict:
    count = int(len(flags))
    flagged = int(np.sum(flags))
    return {
        "count": count,
        "flagged": flagged,
        "flag_rate": (flagged / count) if count else 0.0,
        "tau": float(em.tau),
        "quantile": float(em.quantile),
    }


def write_detection_summary(path, em: ErrorModel, flags: np.ndarray) -> None:
    atomic_write_text(path, json.dumps(detection_summary(em, flags), indent=2) + "\n")
