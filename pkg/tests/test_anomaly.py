from __future__ import annotations

import numpy as np
import pytest

import _oracles as oracles
from twinx.anomaly import (AnomalyVerdict, ErrorModel, detection_summary,
                           fit_error_model, fit_from_residuals, mahalanobis,
                           mahalanobis_batch, read_verdicts_csv,
                           score_batch, score_from_distance, score_window,
                           write_verdicts_csv)
from twinx.errors import (DataError, DimensionMismatch, InvalidConfig,
                          Singular, TooFewSamples, TooFewSignal)
from twinx.forecaster import TcnArch, init_model
from twinx.telemetry import WindowedDataset


def _em(mean, cov, tau=1.0) -> ErrorModel:
    cov = np.asarray(cov, dtype=float)
    return ErrorModel(mean=np.asarray(mean, dtype=float), cov=cov,
                      precision=np.linalg.inv(cov), tau=tau,
                      shrinkage=0.0, quantile=0.99)


def test_distance_zero_at_mean():
    rng = np.random.default_rng(0)
    em = fit_from_residuals(rng.normal(size=(50, 3)))
    assert mahalanobis(em.mean, em) == 0.0


def test_distance_euclidean_under_identity():
    em = _em([0.0, 0.0], np.eye(2))
    assert mahalanobis(np.array([3.0, 4.0]), em) == pytest.approx(5.0, abs=1e-12)


def test_distance_diagonal_closed_form():
    em = _em([0.0, 0.0], np.diag([2.0, 0.5]))
    want = np.sqrt(0.5 + 2.0)
    assert mahalanobis(np.array([1.0, 1.0]), em) == pytest.approx(want, abs=1e-12)


def test_distance_matches_inverse_oracle():
    rng = np.random.default_rng(1)
    resid = rng.normal(size=(200, 4)) @ np.diag([1.0, 2.0, 0.5, 3.0])
    em = fit_from_residuals(resid, shrinkage=0.1)
    for e in rng.normal(size=(10, 4)):
        want = oracles.mahalanobis_by_inverse(e, em.mean, em.cov)
        assert mahalanobis(e, em) == pytest.approx(want, rel=1e-9)


def test_batch_distances_match_single():
    rng = np.random.default_rng(2)
    em = fit_from_residuals(rng.normal(size=(60, 3)))
    batch = rng.normal(size=(7, 3))
    got = mahalanobis_batch(batch, em)
    assert np.allclose(got, [mahalanobis(e, em) for e in batch], atol=1e-12)


def test_distance_invariant_under_linear_reparameterization():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 7))
        a = rng.normal(size=(d, d))
        cov = a @ a.T + 0.5 * np.eye(d)
        mu = rng.normal(size=d)
        e = rng.normal(size=d)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        lin = q @ np.diag(rng.uniform(0.5, 2.0, size=d))

        d0 = mahalanobis(e, _em(mu, cov))
        d1 = mahalanobis(lin @ e, _em(lin @ mu, lin @ cov @ lin.T))
        assert abs(d0 - d1) <= 1e-8 * max(1.0, d0)


def test_fit_shrinkage_one_gives_diagonal():
    rng = np.random.default_rng(3)
    resid = rng.normal(size=(100, 4))
    resid[:, 1] = resid[:, 0] + 0.1 * resid[:, 1]  # strong correlation
    em = fit_from_residuals(resid, shrinkage=1.0)
    off = em.cov - np.diag(np.diag(em.cov))
    assert np.count_nonzero(off) == 0


def test_fit_mean_and_threshold_definition():
    rng = np.random.default_rng(4)
    resid = rng.normal(size=(300, 3))
    em = fit_from_residuals(resid, shrinkage=0.2, quantile=0.9)
    assert np.allclose(em.mean, resid.mean(axis=0), atol=1e-12)
    dists = mahalanobis_batch(resid, em)
    assert em.tau == pytest.approx(float(np.quantile(dists, 0.9)), rel=1e-12)
    sample = np.cov(resid, rowvar=False)
    want = 0.8 * sample + 0.2 * np.diag(np.diag(sample)) + 1e-9 * np.eye(3)
    assert np.allclose(em.cov, want, atol=1e-12)


def test_fit_covariance_positive_definite():
    rng = np.random.default_rng(5)
    resid = np.tile(rng.normal(size=(1, 4)), (30, 1))
    resid[:, 0] += rng.normal(size=30)  # rank-deficient sample covariance
    em = fit_from_residuals(resid, shrinkage=0.1)
    assert np.all(np.linalg.eigvalsh(em.cov) > 0)


def test_fit_rejects_zero_residuals():
    with pytest.raises(TooFewSignal):
        fit_from_residuals(np.zeros((50, 3)))


def test_fit_rejects_too_few_samples():
    with pytest.raises(TooFewSamples):
        fit_from_residuals(np.zeros((3, 3)))


def test_fit_rejects_non_finite_covariance():
    resid = np.full((20, 2), 1e200)
    resid[::2] *= -1.0
    with pytest.raises(Singular):
        fit_from_residuals(resid)


def test_fit_validates_parameters():
    resid = np.random.default_rng(6).normal(size=(20, 2))
    with pytest.raises(InvalidConfig):
        fit_from_residuals(resid, shrinkage=1.5)
    with pytest.raises(InvalidConfig):
        fit_from_residuals(resid, quantile=1.0)
    with pytest.raises(DimensionMismatch):
        fit_from_residuals(np.zeros(10))


def test_fit_error_model_residual_definition():
    from twinx.forecaster import forward_batch

    rng = np.random.default_rng(7)
    model = init_model(TcnArch(3, 4, 2, (1,)), 0)
    ds = WindowedDataset(3, 1, rng.normal(size=(40, 3, 3)),
                         rng.normal(size=(40, 3)),
                         np.arange(40, dtype=np.int64))
    em = fit_error_model(model, ds, 0.1, 0.9)
    resid = ds.targets - forward_batch(model, ds.inputs)
    ref = fit_from_residuals(resid, 0.1, 0.9)
    assert np.array_equal(em.mean, ref.mean)
    assert em.tau == ref.tau


def test_score_half_at_threshold_exactly():
    for tau in (0.1, 1.0, 3.7, 42.0):
        assert score_from_distance(tau, tau) == 0.5


def test_score_zero_at_zero_distance():
    assert score_from_distance(0.0, 2.0) == 0.0


def test_score_strictly_increasing_and_bounded():
    tau = 1.3
    d = np.sort(np.random.default_rng(8).uniform(0, 50, size=200))
    s = np.array([score_from_distance(v, tau) for v in d])
    assert np.all(np.diff(s) > 0)
    assert s.min() >= 0.0 and s.max() < 1.0


def test_verdict_boundary_exclusive():
    rng = np.random.default_rng(9)
    model = init_model(TcnArch(2, 3, 2, (1,)), 1)
    em0 = fit_from_residuals(rng.normal(size=(30, 2)))
    window = rng.normal(size=(4, 2))
    target = rng.normal(size=2)
    v = score_window(model, em0, window, target)
    # refit the threshold to sit exactly on this window's distance
    em_edge = ErrorModel(mean=em0.mean, cov=em0.cov, precision=em0.precision,
                         tau=v.distance, shrinkage=em0.shrinkage,
                         quantile=em0.quantile)
    edge = score_window(model, em_edge, window, target)
    assert isinstance(edge, AnomalyVerdict)
    assert edge.score == 0.5
    assert edge.is_anomaly is False
    above = score_window(model, em_edge, window, target + 5.0)
    assert above.is_anomaly is (above.distance > em_edge.tau)


def test_score_batch_consistent_with_score_window():
    rng = np.random.default_rng(10)
    model = init_model(TcnArch(2, 3, 2, (1,)), 2)
    ds = WindowedDataset(4, 1, rng.normal(size=(25, 4, 2)),
                         rng.normal(size=(25, 2)),
                         np.arange(25, dtype=np.int64))
    em = fit_error_model(model, ds, 0.1, 0.8)
    dist, scores, flags, resid = score_batch(model, em, ds)
    assert np.array_equal(flags, dist > em.tau)
    for i in (0, 7, 24):
        v = score_window(model, em, ds.inputs[i], ds.targets[i])
        assert v.distance == pytest.approx(float(dist[i]), rel=1e-12)
        assert v.score == pytest.approx(float(scores[i]), rel=1e-12)
        assert np.allclose(v.residual, resid[i], atol=1e-12)


def test_verdicts_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    n = 9
    origins = np.arange(n, dtype=np.int64) * 3
    ts = 1_700_000_000.0 + np.arange(n)
    dist = rng.uniform(0, 10, size=n)
    scores = rng.uniform(0, 1, size=n)
    flags = rng.random(n) > 0.5
    path = tmp_path / "verdicts.csv"
    write_verdicts_csv(path, origins, ts, dist, scores, flags)
    ro, rt, rd, rs, rf = read_verdicts_csv(path)
    assert np.array_equal(ro, origins)
    assert np.array_equal(rt, ts)
    assert np.array_equal(rd, dist)  # repr floats survive exactly
    assert np.array_equal(rs, scores)
    assert np.array_equal(rf, flags)


def test_verdicts_csv_rejects_other_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_verdicts_csv(path)


def test_detection_summary_fields():
    em = _em([0.0], np.eye(1), tau=2.0)
    flags = np.array([True, False, False, True])
    doc = detection_summary(em, flags)
    assert doc == {"count": 4, "flagged": 2, "flag_rate": 0.5,
                   "tau": 2.0, "quantile": 0.99}
    assert detection_summary(em, np.empty(0, dtype=bool))["flag_rate"] == 0.0
