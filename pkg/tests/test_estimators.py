import numpy as np
import pytest

from rangecp.errors import InsufficientData, NoFeasibleRoot, NonApproaching, SingularGeometry
from rangecp.estimators import (AnchorSet, classical_mds, cp_from_tracks, fit_squared_range,
                                linear_track_fit, mds_velocity_baseline, pairwise_fit,
                                pairwise_window_cp, procrustes_align, second_difference_speed,
                                tdoa_localize, tdoa_window_cp, velocity_regression, Track)
from rangecp.kinematics import AgentState, cp_params
from rangecp.scenario import (NoiseModel, RangeSample, Trajectory, gen_random_geometry,
                              synth_anchor_rangediffs, synth_pairwise_ranges)


def test_pairwise_fit_example():
    # d_m = 2, t_m = 5, v = 1
    t = np.linspace(0, 3, 10)
    samples = [RangeSample(0, 1, ti, float(np.sqrt(4 + (5 - ti) ** 2))) for ti in t]
    cp = pairwise_fit(samples)
    assert cp == pytest.approx((2.0, 5.0, 1.0), abs=1e-9)


def test_pairwise_fit_receding_raises():
    t = np.linspace(0, 1, 5)
    with pytest.raises(NonApproaching):
        fit_squared_range(t, 10 - 0 * t).cp()
    with pytest.raises(InsufficientData):
        fit_squared_range([0, 1], [1, 2])


def test_tdoa_example():
    anchors = np.array([[0.0, 0.0], [40.0, 0.0], [0.0, 40.0], [40.0, 40.0]])
    x = np.array([10.0, 20.0])
    D = np.hypot(*(x - anchors).T)
    assert tdoa_localize(D[1:] - D[0], anchors) == pytest.approx(x, abs=1e-9)


def test_tdoa_three_anchors_random():
    rng = np.random.default_rng(4)
    anchors = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
    ok = 0
    for _ in range(50):
        x = rng.uniform(5, 45, 2)
        D = np.hypot(*(x - anchors).T)
        try:
            est = tdoa_localize(D[1:] - D[0], anchors)
        except NoFeasibleRoot:
            continue
        # with three anchors two roots can both fit; the truth must be one of them
        if np.allclose(est, x, atol=1e-6):
            ok += 1
    assert ok >= 40


def test_anchor_set_validation():
    with pytest.raises(SingularGeometry):
        AnchorSet([[0, 0], [1, 1]])
    with pytest.raises(SingularGeometry):
        AnchorSet([[0, 0], [1, 1], [2, 2]])


def test_classical_mds_square():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    D = np.hypot(*(X[:, None] - X[None]).transpose(2, 0, 1))
    res = classical_mds(D)
    assert res.realizable
    Y = procrustes_align(res.coords, X)
    assert np.abs(Y - X).max() < 1e-9
    assert np.allclose(res.eigenvalues[:2], [1.0, 1.0])


def test_classical_mds_rejects_bad_input():
    with pytest.raises(ValueError):
        classical_mds(np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_linear_track_and_velocity_regression():
    t = np.linspace(0, 2, 37)
    P = np.array([1.0, -2.0]) + np.outer(t, [0.5, 0.25])
    p, v = linear_track_fit(t, P)
    assert p == pytest.approx([2.0, -1.5]) and v == pytest.approx([0.5, 0.25])
    assert velocity_regression(t, P, window=1.0) == pytest.approx([0.5, 0.25])
    with pytest.raises(InsufficientData):
        linear_track_fit([1.0], [[0.0, 0.0]])


def test_second_difference_speed():
    t = np.linspace(0, 1, 19)
    d = np.hypot(3 + 2 * t, 1 - 1.5 * t)
    assert second_difference_speed(t, d) == pytest.approx(2.5, abs=1e-9)


def _stream(seed, sigma=0.0):
    sc = gen_random_geometry(5, 4, seed, duration=1.0)
    traj = sc.trajectory()
    ranges = synth_pairwise_ranges(traj, NoiseModel(sigma), rate=18.0, rng=seed)
    return sc, traj, ranges


def _truth(sc, t_ref):
    out = {}
    for i in range(len(sc.agents)):
        for j in range(i + 1, len(sc.agents)):
            a, b = sc.agents[i], sc.agents[j]
            rel = AgentState(b.position - a.position + (b.velocity - a.velocity) * t_ref,
                             b.velocity - a.velocity)
            out[(i, j)] = cp_params(rel)
    return out


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_window_estimators_noiseless(seed):
    sc, traj, ranges = _stream(seed)
    truth = _truth(sc, ranges.t[-1])
    est = pairwise_window_cp(ranges)
    for k, cp in est.items():
        assert np.allclose(cp, truth[k], atol=1e-6)
    diffs = synth_anchor_rangediffs(traj, sc.anchors, None, NoiseModel(0.0), rng=0)
    est = tdoa_window_cp(diffs, sc.anchors)
    assert len(est) == 10
    for k, cp in est.items():
        assert np.allclose(cp, truth[k], atol=1e-6)
    est, speeds, _ = mds_velocity_baseline(ranges)
    for k, cp in est.items():
        assert np.allclose(cp, truth[k], atol=1e-6)


def test_cp_from_tracks_skips_short_tracks():
    t = np.linspace(0, 1, 5)
    tracks = [Track(0, t, np.zeros((5, 2))), Track(1, t, np.outer(t, [1.0, 0.0]) + [-3.0, 1.0]),
              Track(2, t[:1], np.zeros((1, 2)))]
    out = cp_from_tracks(tracks, 1.0)
    assert set(out) == {(0, 1)}
    assert out[(0, 1)] == pytest.approx((1.0, 2.0, 1.0))
