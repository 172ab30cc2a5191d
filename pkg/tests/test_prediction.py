import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crowdnav.dataset import GridSpec, SceneSpec, TrajectoryStore, DataError, straight_walker
from crowdnav.prediction import (
    FEATURE_NAMES,
    N_FEATURES,
    BaselinePredictor,
    ForestParams,
    ForestPredictor,
    PerfectPredictor,
    RegressionForest,
    baseline_forecast,
    build_samples,
    decode_displacements,
    displacement_vector,
    encode_displacement_volume,
    encode_scene,
    extract_features,
    fit_forest,
    forest_predict,
    load_external_forecast,
    nmse,
    save_external_forecast,
    split_by_trajectory,
    targets_to_forecast,
    trajectory_windows,
)
from crowdnav.prediction.forecast import ExternalPredictor, OccupancyForecast

SCENE = SceneSpec()
GRID = GridSpec(SCENE)

coord = st.floats(0, 1900, allow_nan=False)
window = st.lists(st.tuples(coord, st.floats(0, 1070)), min_size=5, max_size=5)


# -- features -----------------------------------------------------------------

def test_feature_layout():
    assert N_FEATURES == 31 == len(FEATURE_NAMES)


def test_stationary_features():
    f = extract_features([(50, 60)] * 5)
    assert f[:10].tolist() == [50, 60] * 5
    assert not f[10:].any()


def test_uniform_motion_features():
    f = extract_features([(0, 0), (30, 0), (60, 0), (90, 0), (120, 0)])
    assert f[10:18].tolist() == [30, 0] * 4
    assert f[18:22].tolist() == [30] * 4
    assert f[22] == 30
    assert f[23:27].tolist() == [0] * 4
    assert f[27:].tolist() == [0] * 4


def test_downward_step_angle():
    f = extract_features([(0, 0), (0, 30), (0, 30), (0, 30), (0, 30)])
    assert f[27] == pytest.approx(math.pi / 2)
    assert f[28:].tolist() == [0, 0, 0]


def test_golden_vector():
    f = extract_features([(0, 0), (3, 4), (3, 4), (0, 4), (0, 0)])
    expected = (
        [0, 0, 3, 4, 3, 4, 0, 4, 0, 0]
        + [3, 4, 0, 0, -3, 0, 0, -4]
        + [5, 0, 3, 4] + [3]
        + [-5, 3, 1] + [-1 / 3]
        + [math.atan2(4, 3), 0, math.pi, -math.pi / 2]
    )
    np.testing.assert_allclose(f, expected, rtol=0, atol=1e-15)


def test_wrong_point_count():
    with pytest.raises(ValueError):
        extract_features([(0, 0)] * 4)


@given(window)
def test_feature_invariants(pts):
    f = extract_features(pts)
    assert len(f) == 31
    assert np.all(f[18:22] >= 0)
    assert f[22] == pytest.approx(f[18:22].mean())
    assert f[26] == pytest.approx(f[23:26].mean(), abs=1e-9)
    assert np.all((f[27:] > -math.pi) & (f[27:] <= math.pi))


# -- windows and splits -------------------------------------------------------

def test_windows_targets_relative_to_last_point():
    t = straight_walker(0, (15, 15), (10, 5), 0, 12)
    inputs, targets, frames = trajectory_windows(t)
    assert len(inputs) == 3
    assert targets[0].tolist() == [10, 5, 20, 10, 30, 15, 40, 20, 50, 25]
    assert frames.tolist() == [4, 5, 6]
    assert len(trajectory_windows(straight_walker(0, (15, 15), (1, 0), 0, 9))[0]) == 0


def test_split_is_seeded_partition():
    ids = list(range(50))
    a = split_by_trajectory(ids, 3)
    assert a == split_by_trajectory(ids, 3)
    assert [len(s) for s in a] == [40, 5, 5]
    assert sorted(sum(a, [])) == ids


# -- baseline forecast ---------------------------------------------------------

def test_baseline_forecast_sizes():
    assert all(len(s) == 9 for s in baseline_forecast([(10, 10)], GRID).steps)
    assert all(len(s) == 4 for s in baseline_forecast([(0, 0)], GRID).steps)
    assert all(len(s) == 25 for s in baseline_forecast([(10, 10)], GRID, radius=2).steps)
    assert len(baseline_forecast([], GRID).steps) == 5


@given(st.lists(st.tuples(st.integers(0, 63), st.integers(0, 35)), max_size=6), st.integers(0, 4))
def test_baseline_monotone_in_radius(cells, r):
    small = baseline_forecast(cells, GRID, r)
    big = baseline_forecast(cells, GRID, r + 1)
    assert all(a <= b for a, b in zip(small.steps, big.steps))
    assert big.in_bounds(GRID)


def test_forecast_needs_five_steps():
    with pytest.raises(ValueError):
        OccupancyForecast((frozenset(),) * 4)


# -- targets to forecast --------------------------------------------------------

def test_targets_to_forecast():
    zero = targets_to_forecast(np.zeros(10), (45, 45), GRID)
    assert zero.steps == (frozenset({(1, 1)}),) * 5
    walk = targets_to_forecast([30 * k if i % 2 == 0 else 0 for k in range(1, 6) for i in range(2)],
                               GRID.center((0, 0)), GRID)
    assert [next(iter(s)) for s in walk.steps] == [(1, 0), (2, 0), (3, 0), (4, 0), (5, 0)]
    edge = targets_to_forecast([5000, -5000] * 5, (100, 100), GRID)
    assert edge.steps[0] == frozenset({(63, 0)})


# -- forest ---------------------------------------------------------------------

def rand_data(n=80, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 31))
    y = np.stack([X[:, 0] * 2 + X[:, 1], X[:, 2] - X[:, 3]] * 5, axis=1)
    return X, y


def test_depth_zero_tree_predicts_mean():
    X, y = rand_data()
    f = fit_forest(X, y, ForestParams(n_trees=1, max_depth=0, bootstrap=False), 0)
    np.testing.assert_allclose(f.predict(X[:3]), np.tile(y.mean(axis=0), (3, 1)))
    np.testing.assert_allclose(forest_predict(f, X[0]), y.mean(axis=0))


def test_memorization():
    X, y = rand_data()
    params = ForestParams(n_trees=1, max_depth=None, min_samples_leaf=1, max_features=None, bootstrap=False)
    f = fit_forest(X, y, params, 0)
    np.testing.assert_array_equal(f.predict(X), y)


def test_forest_is_mean_of_trees():
    X, y = rand_data()
    f = fit_forest(X, y, ForestParams(n_trees=5), 1)
    singles = [RegressionForest([t], f.params, f.seed).predict(X) for t in f.trees]
    np.testing.assert_allclose(f.predict(X), np.mean(singles, axis=0), rtol=1e-12)
    np.testing.assert_array_equal(singles[0], f.trees[0].predict(X))


def test_two_tree_average():
    X, y = rand_data()
    a = fit_forest(X, y, ForestParams(n_trees=1, max_depth=0, bootstrap=False), 0)
    b = fit_forest(X, y + 2.0, ForestParams(n_trees=1, max_depth=0, bootstrap=False), 0)
    both = RegressionForest(a.trees + b.trees, a.params, 0)
    np.testing.assert_allclose(both.predict(X[:1])[0], y.mean(axis=0) + 1.0)


def test_forest_deterministic_and_round_trips(tmp_path):
    X, y = rand_data()
    a = fit_forest(X, y, ForestParams(n_trees=4), 9)
    b = fit_forest(X, y, ForestParams(n_trees=4), 9)
    assert a.to_bytes() == b.to_bytes()
    path = tmp_path / "f.bin"
    a.save(path)
    again = RegressionForest.load(path)
    assert again.to_bytes() == path.read_bytes()
    np.testing.assert_array_equal(again.predict(X), a.predict(X))


def test_leaf_sizes_respect_min_samples_leaf():
    X, y = rand_data(200)
    f = fit_forest(X, y, ForestParams(n_trees=3, min_samples_leaf=7), 2)
    for t in f.trees:
        leaves = t.feature == -1
        assert np.all(t.n_samples[leaves] >= 7)
        internal = ~leaves
        assert np.all(t.left[internal] >= 0) and np.all(t.right[internal] >= 0)


def test_forest_errors(tmp_path):
    with pytest.raises(ValueError):
        fit_forest(np.empty((0, 31)), np.empty((0, 10)))
    with pytest.raises(ValueError):
        ForestParams(n_trees=0)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(ValueError):
        RegressionForest.load(bad)


# -- displacement volume ----------------------------------------------------------

def test_volume_examples():
    vol = encode_displacement_volume([(500, 500)] * 5, SCENE)
    assert list(vol.entries) == [(500, 500)]
    assert vol.entries[(500, 500)].tolist() == [1.0] * 10
    v = displacement_vector([(0, 0), (10, 10), (50, 20), (100, 80), (192, 108)], SCENE)
    assert v[:2].tolist() == pytest.approx([1.1, 1.1])
    assert v[8:].tolist() == [1.0, 1.0]


@given(window)
def test_volume_properties(pts):
    v = displacement_vector(pts, SCENE)
    assert v[8] == 1.0 and v[9] == 1.0
    assert np.all((v >= 0) & (v <= 2))
    expected = np.asarray(pts[-1]) - np.asarray(pts)
    np.testing.assert_allclose(decode_displacements(v, SCENE), expected, atol=1e-9)


def test_volume_dense_shape_and_scene():
    small = SceneSpec(40, 20)
    vol = encode_scene([[(1, 1)] * 4 + [(3, 2)], [(10, 10)] * 5], small)
    dense = vol.to_dense()
    assert dense.shape == (40, 20, 10)
    assert np.count_nonzero(dense.any(axis=2)) == 2


# -- external forecasts -------------------------------------------------------------

def test_external_forecast_files(tmp_path):
    empty = tmp_path / "e.txt"
    empty.write_text("# nothing\n")
    assert load_external_forecast(empty) == {}
    one = tmp_path / "one.txt"
    one.write_text("3 17 " + " ".join(str(float(k)) for k in range(10)) + "\n")
    got = load_external_forecast(one)
    assert list(got) == [(3, 17)]
    assert got[3, 17].tolist() == list(range(10))
    dup = tmp_path / "dup.txt"
    dup.write_text(one.read_text() * 2)
    with pytest.raises(DataError, match="line 2"):
        load_external_forecast(dup)
    short = tmp_path / "s.txt"
    short.write_text("1 2 3\n")
    with pytest.raises(DataError, match="line 1"):
        load_external_forecast(short)
    out = tmp_path / "rt.txt"
    save_external_forecast(got, out)
    assert load_external_forecast(out)[3, 17].tolist() == got[3, 17].tolist()


# -- nmse ---------------------------------------------------------------------------

def test_nmse_examples():
    assert nmse([(5, 5)], [(5, 5)], SCENE) == 0
    assert nmse([(192, 0)], [(0, 0)], SCENE) == pytest.approx(0.1, abs=1e-15)
    assert nmse([(192, 0), (576, 0)], [(0, 0), (0, 0)], SCENE) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ValueError):
        nmse([], [], SCENE)
    with pytest.raises(ValueError):
        nmse([(0, 0)], [(0, 0), (1, 1)], SCENE)


pts = arrays(np.float64, (4, 2), elements=st.floats(-500, 500))


@given(pts, pts, st.floats(-300, 300), st.floats(-300, 300), st.floats(0.1, 10))
def test_nmse_translation_and_scale(p, t, dx, dy, s):
    base = nmse(p, t, SCENE)
    assert nmse(p + (dx, dy), t + (dx, dy), SCENE) == pytest.approx(base, abs=1e-9)
    assert nmse(t + s * (p - t), t, SCENE) == pytest.approx(s * base, rel=1e-9, abs=1e-12)


# -- predictors ---------------------------------------------------------------------

def walker_store():
    return TrajectoryStore.from_trajectories([
        straight_walker(0, (15, 15), (30, 0), 0, 20),
        straight_walker(1, (15, 615), (0, -30), 2, 20),
    ])


def test_perfect_predictor_is_ground_truth():
    store = walker_store()
    fc = PerfectPredictor(store, GRID).forecast(6)
    assert fc.steps[0] == frozenset({(7, 0), GRID.cell_of(15, 615 - 150)})


def test_baseline_predictor():
    store = walker_store()
    fc = BaselinePredictor(store, GRID, 0).forecast(0)
    assert fc.steps == (frozenset({(0, 0)}),) * 5


def test_cold_start_falls_back_to_baseline():
    store = walker_store()
    X, y = rand_data()
    forest = fit_forest(X, y, ForestParams(n_trees=1, max_depth=0), 0)
    fc = ForestPredictor(store, GRID, forest).forecast(2)
    # both pedestrians have fewer than 5 points, so both use the radius-1 neighbourhood
    assert fc == baseline_forecast({(2, 0), (0, 20)}, GRID, 1)


def test_external_predictor_uses_records():
    store = walker_store()
    targets = np.array([30.0 * k if i == 0 else 0.0 for k in range(1, 6) for i in range(2)])
    fc = ExternalPredictor(store, GRID, {(0, 4): targets}).forecast(4)
    assert (5, 0) in fc.steps[0] and (9, 0) in fc.steps[4]
