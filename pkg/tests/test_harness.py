import json

import numpy as np
import pytest

from rangecp.errors import ConfigError, NoEvents
from rangecp.harness import (CPTrack, DetectorConfig, RmseConfig, RocConfig, RocPoint,
                             alarm_grid, build_config, config_hash, default_eps_d, default_eps_t,
                             detect, execute, pareto_frontier, pd_at_pfa, roc_experiment,
                             roc_points, rmse_sweep, truth_cp, write_rmse_csv)
from rangecp.kinematics import AgentState, CPParams
from rangecp.scenario import CollisionEvent, Trajectory


def test_detect_examples():
    cfg = DetectorConfig()
    assert detect(CPParams(0.1, 0.5, 1.0), cfg)
    assert not detect(CPParams(1.0, 0.5, 1.0), cfg)
    assert not detect(CPParams(1.0, 0.01, 1.0), cfg)
    assert not detect(CPParams(0.1, -0.5, 1.0), cfg)  # receding
    # time-to-contact slack: sqrt(0.34^2 - 0.1^2) / 1 = 0.325 s beyond tau
    assert detect(CPParams(0.1, 1.3, 1.0), cfg)
    assert not detect(CPParams(0.1, 1.33, 1.0), cfg)
    assert detect(CPParams(1.0, 0.5, 1.0), DetectorConfig(eps_t=0.7))


def test_alarm_grid_matches_scalar_detector():
    rng = np.random.default_rng(0)
    vals = np.column_stack([rng.uniform(0, 1, 200), rng.uniform(-1, 3, 200),
                            rng.uniform(0.1, 2, 200)]).reshape(20, 10, 3)
    track = CPTrack(np.arange(20.0), [(0, k) for k in range(1, 11)], vals)
    et, ed = np.array([-0.1, 0.0, 0.3]), np.array([-0.5, 0.0, 1.0])
    g = alarm_grid(track, et, ed)
    for a, x in enumerate(et):
        for b, y in enumerate(ed):
            cfg = DetectorConfig(eps_t=x, eps_d=y)
            ref = np.array([[detect(CPParams(*vals[e, p]), cfg) for p in range(10)]
                            for e in range(20)])
            assert np.array_equal(g[a, b], ref)


def _track(values, t):
    return CPTrack(np.asarray(t, float), [(0, 1)], np.asarray(values, float)[:, None, :])


def test_roc_counts_simple():
    t = np.arange(10.0)
    vals = np.tile([5.0, 10.0, 1.0], (10, 1))  # never alarms at eps 0
    vals[6] = [0.1, 0.5, 1.0]                   # alarm 0.5 s before the event at t=6.5
    vals[2] = [0.1, 0.5, 1.0]                   # false alarm
    ev = [CollisionEvent((0, 1), 6.5)]
    (p,) = roc_points(_track(vals, t), ev, [0.0], [0.0], lookahead=3.0)
    assert (p.detected, p.n_events) == (1, 1)
    # positives are epochs 4, 5, 6 -> 7 negatives
    assert (p.false_alarms, p.negatives) == (1, 7)
    assert p.pfa == pytest.approx(1 / 7)


def test_roc_censoring_and_no_events():
    t = np.arange(10.0)
    vals = np.tile([5.0, 10.0, 1.0], (10, 1))
    ev = [CollisionEvent((0, 1), 6.5)]
    (p,) = roc_points(_track(vals, t), ev, [0.0], [0.0], lookahead=3.0, duration=9.0)
    assert p.negatives == 7 - 3  # epochs 7, 8, 9 cannot be judged
    with pytest.raises(NoEvents):
        roc_points(_track(vals, t), [CollisionEvent((0, 1), -1.0)], [0.0], [0.0])


def test_always_alarm_gives_pd_and_pfa_one():
    t = np.arange(10.0)
    vals = np.tile([0.0, 0.5, 1.0], (10, 1))
    (p,) = roc_points(_track(vals, t), [CollisionEvent((0, 1), 5.0)], [0.0], [0.0])
    assert p.pd == 1.0 and p.pfa == 1.0


def test_pareto_frontier_monotone():
    rng = np.random.default_rng(1)
    pts = [RocPoint(float(a), float(b), 0.0, 0.0) for a, b in rng.uniform(size=(200, 2))]
    front = pareto_frontier(pts)
    pfa = [p.pfa for p in front]
    pd = [p.pd for p in front]
    assert pfa == sorted(pfa) and all(np.diff(pd) > 0)
    for p in pts:  # nothing dominates a frontier point
        for f in front:
            assert not (p.pfa <= f.pfa and p.pd > f.pd)
    assert pd_at_pfa(front, 2.0) == max(p.pd for p in pts)


def test_default_grids():
    et, ed = default_eps_t(), default_eps_d()
    assert et[0] == -0.2 and et[-1] == 2.0 and len(et) == 45
    assert ed[0] == -0.9 and ed[-1] == 4.0 and len(ed) == 50


def test_truth_cp_head_on():
    traj = Trajectory.constant_velocity([AgentState((0, 0), (0, 0)),
                                         AgentState((-10, 0), (1, 0))], 20.0)
    cp = truth_cp(traj, 2.0)[(0, 1)]
    assert cp == pytest.approx((0.0, 8.0, 1.0), abs=1e-12)


def test_truth_roc_short_scenario():
    res = roc_experiment(RocConfig(duration=120.0, methods=("truth",), seed=1))
    front = res.frontiers["truth"]
    assert len(res.events) > 0
    assert pd_at_pfa(front, 0.0) == 1.0


def test_rmse_sweep_small():
    cfg = RmseConfig(sigma_grid=(0.1,), trials=2, geometries=2, seed=3)
    rows = rmse_sweep(cfg)
    assert {r.method for r in rows} == {"fact", "pairwise", "mds", "tdoa"}
    n = {r.n for r in rows}
    assert len(n) == 1 and n.pop() > 0  # common-set evaluation
    for r in rows:
        assert r.rmse_tm >= 0 and np.isfinite(r.crlb_dm)


def test_rmse_csv(tmp_path):
    rows = rmse_sweep(RmseConfig(sigma_grid=(0.05,), trials=1, geometries=1, methods=("pairwise",)))
    write_rmse_csv(tmp_path / "r.csv", rows)
    head = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert head == "sigma,method,rmse_tm,rmse_dm,n,failures,crlb_tm,crlb_dm"


def test_build_config_errors():
    with pytest.raises(ConfigError, match="sigma_grid"):
        build_config("bounds", {})
    with pytest.raises(ConfigError, match="bogus"):
        build_config("bounds", {"sigma_grid": [0.1], "bogus": 1})
    with pytest.raises(ConfigError):
        build_config("nope", {})
    assert build_config("bounds", {"sigma_grid": [0.1, 0.2]}).sigma_grid == (0.1, 0.2)


def test_execute_writes_manifest(tmp_path):
    files = execute("bounds", {"sigma_grid": [0.1], "trials": 1, "geometries": 3}, tmp_path, 5)
    assert files == ["bounds.csv"]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 5
    assert man["config_hash"] == config_hash(man["config"])
    assert set(man["versions"]) >= {"numpy", "scipy", "numba", "rangecp"}
