from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _oracles as oracles
from twinx.aggregate import (ExplanationSet, beeswarm_data, beeswarm_to_dict,
                             dependence_data, dependence_to_dict, force_data,
                             force_gap, force_to_dict, global_importance,
                             importance_to_dict)
from twinx.errors import EmptySet
from twinx.shapley import Explanation


def _expl(phi, summaries=None, names=None, base=0.1, fx=None):
    phi = np.asarray(phi, dtype=float)
    names = names or tuple(f"f{i}" for i in range(len(phi)))
    if summaries is None:
        summaries = np.zeros(len(phi))
    if fx is None:
        fx = base + float(phi.sum())
    return Explanation(base=base, fx=fx, phi=phi, feature_names=names,
                       feature_summaries=np.asarray(summaries, dtype=float),
                       estimator="exact", samples=4)


def _set(*expls) -> ExplanationSet:
    return ExplanationSet(tuple(expls))


def test_empty_set_rejected():
    with pytest.raises(EmptySet):
        ExplanationSet(())


def test_mismatched_feature_order_rejected():
    a = _expl([1.0, 2.0], names=("x", "y"))
    b = _expl([1.0, 2.0], names=("y", "x"))
    with pytest.raises(ValueError):
        _set(a, b)


def test_importance_single_explanation():
    es = _set(_expl([0.2, -0.5], names=("f1", "f2")))
    assert global_importance(es) == [("f2", 0.5), ("f1", 0.2)]


def test_importance_averages_absolute_values():
    es = _set(_expl([1.0, 0.0], names=("f1", "f2")),
              _expl([-1.0, 0.0], names=("f1", "f2")))
    assert global_importance(es) == [("f1", 1.0), ("f2", 0.0)]


def test_importance_ties_break_lexicographically():
    es = _set(_expl([0.3, 0.3, 0.1], names=("zeta", "alpha", "mid")))
    ranking = global_importance(es)
    assert [n for n, _ in ranking] == ["alpha", "zeta", "mid"]


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6), st.integers(1, 7))
@settings(max_examples=50, deadline=None)
def test_importance_is_a_sorted_permutation(seed, n_e, m):
    rng = np.random.default_rng(seed)
    names = tuple(f"f{i}" for i in range(m))
    es = _set(*[_expl(rng.normal(size=m), names=names) for _ in range(n_e)])
    ranking = global_importance(es)
    assert sorted(n for n, _ in ranking) == sorted(names)
    vals = [v for _, v in ranking]
    assert vals == sorted(vals, reverse=True)
    assert all(v >= 0 for v in vals)


def test_beeswarm_single_explanation_has_zero_jitter():
    es = _set(_expl([0.4, -0.2, 0.0]))
    clouds = beeswarm_data(es)
    assert len(clouds) == 3
    for c in clouds:
        assert len(c.phi) == 1
        assert c.offset[0] == 0.0


def test_beeswarm_identical_explanations_stack_symmetrically():
    e = _expl([0.5, -0.1], summaries=[1.0, 2.0])
    es = _set(e, e, e)
    for cloud in beeswarm_data(es):
        assert np.all(cloud.phi == cloud.phi[0])
        assert cloud.offset.sum() == pytest.approx(0.0, abs=1e-12)
        assert len(np.unique(cloud.offset)) == 3


def test_beeswarm_constant_feature_colors_half():
    es = _set(_expl([0.1, 0.2], summaries=[7.0, 1.0]),
              _expl([0.3, 0.4], summaries=[7.0, 2.0]))
    clouds = {c.name: c for c in beeswarm_data(es)}
    assert np.all(clouds["f0"].color == 0.5)
    assert set(np.round(clouds["f1"].color, 12)) == {0.0, 1.0}


def test_beeswarm_rows_follow_importance_order():
    es = _set(_expl([0.1, 0.9, -0.4]))
    assert [c.name for c in beeswarm_data(es)] == [n for n, _ in
                                                   global_importance(es)]


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8), st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_beeswarm_point_count_and_phi_fidelity(seed, n_e, m):
    rng = np.random.default_rng(seed)
    names = tuple(f"f{i}" for i in range(m))
    expls = [_expl(rng.normal(size=m), summaries=rng.normal(size=m),
                   names=names) for _ in range(n_e)]
    es = _set(*expls)
    clouds = beeswarm_data(es)
    assert sum(len(c.phi) for c in clouds) == n_e * m
    phi_by_name = {n: np.array([e.phi[i] for e in expls])
                   for i, n in enumerate(names)}
    for c in clouds:
        assert np.array_equal(np.sort(c.phi), np.sort(phi_by_name[c.name]))
        assert np.all((c.color >= 0.0) & (c.color <= 1.0))


def test_dependence_finds_planted_interaction():
    rng = np.random.default_rng(0)
    n = 40
    names = ("a", "b", "c", "d")
    x_c = rng.normal(size=n)
    expls = []
    for i in range(n):
        summaries = rng.normal(size=4)
        summaries[2] = x_c[i]
        phi = rng.normal(size=4) * 0.05
        phi[0] = x_c[i] + 0.01 * rng.normal()  # phi_a tracks feature c
        expls.append(_expl(phi, summaries=summaries, names=names))
    dd = dependence_data(_set(*expls), "a")
    assert dd.interaction == "c"
    assert not dd.undefined_correlation
    assert oracles.abs_pearson(dd.color, dd.phi) > 0.9


def test_dependence_constant_phi_flagged_with_fallback():
    names = ("mid", "alpha", "zeta")
    expls = [_expl([0.5, i * 0.1, -i * 0.2], summaries=[1.0, i, 2 * i],
                   names=names) for i in range(4)]
    dd = dependence_data(_set(*expls), "mid")
    assert dd.undefined_correlation
    assert dd.interaction == "alpha"  # lexicographic fallback


def test_dependence_two_features_forced_choice():
    rng = np.random.default_rng(1)
    expls = [_expl(rng.normal(size=2), summaries=rng.normal(size=2),
                   names=("p", "q")) for _ in range(5)]
    assert dependence_data(_set(*expls), "p").interaction == "q"
    assert dependence_data(_set(*expls), "q").interaction == "p"


def test_dependence_needs_three_explanations():
    es = _set(_expl([1.0, 2.0]), _expl([3.0, 4.0]))
    with pytest.raises(EmptySet):
        dependence_data(es, "f0")


def test_dependence_unknown_feature():
    es = _set(_expl([1.0]), _expl([2.0]), _expl([3.0]))
    with pytest.raises(KeyError):
        dependence_data(es, "nope")


def test_dependence_carries_raw_axis_values():
    rng = np.random.default_rng(2)
    names = ("u", "v", "w")
    expls = [_expl(rng.normal(size=3), summaries=rng.normal(size=3) * 100,
                   names=names) for _ in range(6)]
    dd = dependence_data(_set(*expls), "v")
    want_x = [e.feature_summaries[1] for e in expls]
    assert np.array_equal(dd.x, want_x)
    assert np.array_equal(dd.phi, [e.phi[1] for e in expls])


def test_force_partition_example():
    e = _expl([0.2, -0.1, 0.05], names=("f1", "f2", "f3"), base=0.5)
    fs = force_data(e)
    assert fs.fx == pytest.approx(0.65)
    assert [(n, p) for n, p, _ in fs.positive] == [("f1", 0.2), ("f3", 0.05)]
    assert [(n, p) for n, p, _ in fs.negative] == [("f2", -0.1)]


def test_force_all_zero_phi():
    e = _expl([0.0, 0.0], base=0.4)
    fs = force_data(e)
    assert fs.positive == () and fs.negative == ()
    assert fs.fx == fs.base


def test_force_omits_zero_phi_features():
    e = _expl([0.3, 0.0, -0.2])
    fs = force_data(e)
    names = [n for n, _, _ in fs.positive] + [n for n, _, _ in fs.negative]
    assert "f1" not in names
    assert set(names) == {"f0", "f2"}


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 10))
@settings(max_examples=50, deadline=None)
def test_force_segments_sum_to_fx_minus_base(seed, m):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=m)
    phi[rng.random(m) < 0.3] = 0.0
    e = _expl(phi, base=float(rng.normal()))
    fs = force_data(e)
    assert force_gap(fs) < 1e-9
    mags_pos = [abs(p) for _, p, _ in fs.positive]
    mags_neg = [abs(p) for _, p, _ in fs.negative]
    assert mags_pos == sorted(mags_pos, reverse=True)
    assert mags_neg == sorted(mags_neg, reverse=True)
    assert all(p > 0 for _, p, _ in fs.positive)
    assert all(p < 0 for _, p, _ in fs.negative)


def test_dict_exports_fixed_keys():
    e = _expl([0.2, -0.1], summaries=[3.0, 4.0])
    es = _set(e, e, e)
    assert list(importance_to_dict(global_importance(es))) == ["ranking"]
    assert list(beeswarm_to_dict(beeswarm_data(es))) == ["features"]
    dd = dependence_to_dict(dependence_data(es, "f0"))
    assert list(dd) == ["feature", "interaction", "undefined_correlation",
                        "points"]
    fd = force_to_dict(force_data(e))
    assert list(fd) == ["base", "fx", "positive", "negative"]
