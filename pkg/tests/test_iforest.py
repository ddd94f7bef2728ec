import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkshield.errors import DimensionError, ParameterError, UndefinedSplitError
from chunkshield.iforest import (
    EPS,
    External,
    FastIsolationForest,
    Internal,
    anomaly_score,
    average_path_length,
    baseline_random_forest,
    build_forest,
    build_tree,
    exhaustive_split,
    gradient,
    gradient_split,
    height_limit,
    score_from_path_length,
    separation,
    step_raw,
    update_step,
)
from chunkshield.pipeline import forest_sample_size
from oracles import c_norm, exhaustive_best, separation_direct

SIX = [1, 2, 3, 11, 12, 13]


# separation ---------------------------------------------------------------


def test_separation_two_triples():
    assert separation(SIX, 7) == pytest.approx(192.5, rel=1e-9)
    assert separation(SIX, 7) == pytest.approx(separation_direct(SIX, 7), rel=1e-12)


def test_separation_perfect_split_is_eps_guarded():
    val = separation([0, 0, 10, 10], 5)
    assert math.isfinite(val)
    assert val == pytest.approx(10 * 25 / EPS, rel=1e-9)
    # it is the only genuine split, so both scans must report it
    assert exhaustive_split([0, 0, 10, 10]).highest_separation == val
    assert gradient_split([0, 0, 10, 10]).highest_separation == pytest.approx(val, rel=1e-12)


def test_constant_data_has_no_separability():
    # no v lies strictly inside a constant list; the scans report 0
    with pytest.raises(UndefinedSplitError):
        separation([5, 5, 5, 5], 5)
    assert gradient_split([5, 5, 5, 5]).highest_separation == 0.0
    assert exhaustive_split([5, 5, 5, 5]).highest_separation == 0.0


def test_separation_empty_side():
    with pytest.raises(UndefinedSplitError):
        separation(SIX, 1)
    with pytest.raises(UndefinedSplitError):
        separation(SIX, 20)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=30))
def test_separation_non_negative_and_matches_oracle(vals):
    xs = sorted(vals)
    for k in range(1, len(xs)):
        if xs[k] == xs[k - 1]:
            continue
        v = 0.5 * (xs[k - 1] + xs[k])
        got = separation(xs, v)
        assert got >= 0
        assert got == pytest.approx(separation_direct(xs, v), rel=1e-9, abs=1e-9)


# gradient / step ----------------------------------------------------------


def test_gradient_zero_when_separations_equal():
    # {0} | {1, 2} and {0, 1} | {2} mirror each other
    assert gradient([0, 1, 2], 1) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("i", [1, 2, 3, 4])
def test_gradient_matches_formula_on_six(i):
    expect = (separation_direct(SIX, SIX[i + 1]) - separation_direct(SIX, SIX[i])) / (SIX[i + 1] - SIX[i])
    assert gradient(SIX, i) == pytest.approx(expect, rel=1e-12)


def test_gradient_rejects_duplicates():
    with pytest.raises(UndefinedSplitError):
        gradient([1, 2, 2, 3], 1)


def test_update_step_examples():
    assert update_step(-1e6, 100) == 3
    assert update_step(-math.inf, 100) == 3
    assert step_raw(0.0, 100) == pytest.approx(0.05)
    assert update_step(0.0, 100) == 1
    assert step_raw(-1e-300, 100) == pytest.approx(1.5)
    assert step_raw(1e6, 100) == pytest.approx(0.7)
    assert update_step(1e6, 1000) == 7
    with pytest.raises(ParameterError):
        update_step(0.0, 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(2, 10**6))
def test_update_step_is_rounded_raw(G, n):
    step = update_step(G, n)
    assert step >= 1
    assert step == max(1, math.floor(step_raw(G, n) + 0.5))


# gradient_split -----------------------------------------------------------


def test_gradient_split_two_clusters():
    scan = gradient_split([0, 1, 2, 100, 101, 102])
    assert 2 < scan.best_split < 100
    _, best = exhaustive_best([0, 1, 2, 100, 101, 102])
    assert scan.highest_separation == pytest.approx(best, rel=1e-9)


def test_gradient_split_constant():
    scan = gradient_split([7, 7, 7])
    assert (scan.best_split, scan.highest_separation) == (7, 0.0)


def test_gradient_split_needs_two_values():
    with pytest.raises(ParameterError):
        gradient_split([1.0])


def test_gradient_split_planted_outlier_thousand(rng):
    vals = rng.normal(0, 1, 999).tolist() + [25.0]
    scan = gradient_split(vals)
    ref = exhaustive_split(vals)
    assert scan.evaluations < 1000
    assert scan.highest_separation >= 0.9 * ref.highest_separation


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=2, max_size=40))
def test_gradient_split_never_beats_exhaustive(vals):
    scan = gradient_split(vals)
    ref_v, ref = exhaustive_best(vals)
    if ref_v is None:
        assert scan.highest_separation == 0.0
        return
    assert scan.highest_separation <= ref * (1 + 1e-9) + 1e-9
    assert scan.evaluations <= len(vals)
    # the threshold is a genuine midpoint and reproduces the reported value
    assert min(vals) < scan.best_split <= max(vals)
    assert separation_direct(vals, scan.best_split) == pytest.approx(scan.highest_separation, rel=1e-6, abs=1e-6)


def test_refinement_off_visits_fewer_cuts(rng):
    vals = np.concatenate([rng.normal(0, 1, 500), rng.normal(8, 1, 500)])
    walk = gradient_split(vals, refine=False)
    full = gradient_split(vals)
    assert walk.evaluations <= full.evaluations < 1000
    assert full.highest_separation >= walk.highest_separation


# trees --------------------------------------------------------------------


def test_build_tree_base_cases(rng):
    assert build_tree(np.array([[1.0, 2.0]]), 0, 5, None, rng) == External(1)
    X = rng.normal(size=(10, 2))
    assert build_tree(X, 0, 0, None, rng) == External(10)
    assert build_tree(np.empty((0, 2)), 0, 5, None, rng) == External(0)


def test_build_tree_prefers_separable_attribute(rng):
    X = np.column_stack([np.full(8, 3.0), [0, 0.1, 0.2, 0.3, 9, 9.1, 9.2, 9.3]])
    root = build_tree(X, 0, 3, 2, rng)
    assert isinstance(root, Internal)
    assert root.attribute == 1
    assert 0.3 < root.split < 9


def test_build_tree_two_clusters_pure_at_root(rng):
    X = np.array([[0.0], [0.5], [1.0], [50.0], [50.5], [51.0]])
    root = build_tree(X, 0, 3, None, rng)
    assert isinstance(root, Internal)
    assert 1.0 < root.split < 50.0


def test_build_tree_constant_data_is_leaf(rng):
    assert build_tree(np.ones((6, 3)), 0, 3, None, rng) == External(6)


def test_build_tree_k_attrs_validated(rng):
    with pytest.raises(ParameterError):
        build_tree(np.arange(12.0).reshape(6, 2), 0, 3, 3, rng)


def _depth(node):
    if isinstance(node, External):
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _leaf_total(node):
    if isinstance(node, External):
        return node.size
    return _leaf_total(node.left) + _leaf_total(node.right)


def test_tree_depth_and_mass(rng):
    X = rng.normal(size=(40, 3))
    forest = build_forest(X, T=5, s=40, seed=1)
    for tree in forest.trees:
        assert _depth(tree) <= forest.height_max
        assert _leaf_total(tree) == 40


# forest -------------------------------------------------------------------


def test_forest_sizes():
    f = build_forest(np.array([[0.0], [1.0]]), T=1, s=2)
    assert len(f.trees) == 1 and f.height_max == 1
    assert forest_sample_size(100) == 30
    assert height_limit(30) == 5
    with pytest.raises(ParameterError):
        build_forest(np.zeros((5, 1)), T=1, s=1)
    with pytest.raises(ParameterError):
        build_forest(np.zeros((5, 1)), T=1, s=6)
    with pytest.raises(ParameterError):
        build_forest(np.zeros((5, 1)), T=0, s=2)


@pytest.mark.parametrize("builder", [build_forest, baseline_random_forest])
def test_forest_deterministic_across_runs_and_workers(rng, builder):
    X = rng.normal(size=(60, 3))
    a = builder(X, T=20, s=18, seed=5)
    b = builder(X, T=20, s=18, seed=5, workers=4)
    assert a == b
    assert a.to_json() == b.to_json()
    assert builder(X, T=20, s=18, seed=6) != a


@pytest.mark.parametrize("builder", [build_forest, baseline_random_forest])
def test_json_round_trip_is_exact(rng, builder):
    X = rng.normal(size=(50, 2))
    f = builder(X, T=10, s=15, seed=3)
    g = FastIsolationForest.from_json(f.to_json())
    assert g.to_json() == f.to_json()
    assert np.array_equal(f.score_samples(X), g.score_samples(X))


def test_json_rejects_other_formats():
    with pytest.raises(ValueError):
        FastIsolationForest.from_json('{"format": "other", "version": 1}')


def test_c_norm_matches_oracle():
    for n in [0, 1, 2, 3, 10, 30, 256, 10**5]:
        assert average_path_length(n) == pytest.approx(c_norm(n), rel=1e-15, abs=0)


def test_score_formula():
    c = average_path_length(30)
    assert abs(score_from_path_length(c, c) - 0.5) <= 1e-9
    assert score_from_path_length(0.0, c) == 1.0
    assert score_from_path_length(2 * c, c) < score_from_path_length(c, c)


def test_one_dimensional_outlier(rng):
    X = np.concatenate([rng.uniform(-0.01, 0.01, 50), [10.0]])[:, None]
    for builder in (build_forest, baseline_random_forest):
        f = builder(X, T=50, s=len(X), seed=0)
        scores = f.score_samples(X)
        assert int(np.argmax(scores)) == 50
        assert scores[50] > np.sort(scores)[-2]
        assert ((scores > 0) & (scores <= 1)).all()


def test_anomaly_score_dimension_check(rng):
    f = build_forest(rng.normal(size=(20, 2)), T=3, s=10)
    with pytest.raises(DimensionError):
        anomaly_score(f, [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        f.score_samples(np.zeros((3, 3)))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=2, max_size=49))
def test_small_input_fast_path_equals_walk(vals):
    import chunkshield.iforest as fi

    xs = sorted(float(v) for v in vals)
    fast = fi._split_sorted(xs)
    saved = fi._UNIT_STEP_N
    fi._UNIT_STEP_N = 0
    try:
        walk = fi._split_sorted(xs)
    finally:
        fi._UNIT_STEP_N = saved
    assert (fast.best_split, fast.evaluations) == (walk.best_split, walk.evaluations)
    assert fast.highest_separation == pytest.approx(walk.highest_separation, rel=1e-9, abs=1e-12)
