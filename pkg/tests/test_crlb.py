import math

import numpy as np
import pytest

from rangecp.crlb import (BoundSweepConfig, PairState, SamplingPlan, anchor_bounds,
                          bound_sweep, bounds_from_fim, cov_transform, fim_alpha, fim_anchor,
                          fim_friend, fim_pairwise, friend_bounds, geometry_bounds,
                          incidence_sweep, jacobian_cp, pairwise_bounds, theta_vector,
                          unit_bound_table, write_bounds_csv)
from rangecp.kinematics import CPParams

PAIR = PairState(np.array([-20.0, 3.0]), np.array([15.0, -4.0]),
                 np.array([4.0, 0.5]), np.array([-3.0, 1.0]))
ANCHORS = np.array([[50.0, 0.0], [0.0, 50.0], [-50.0, 0.0], [0.0, -50.0]])
FRIENDS = (np.array([[10.0, 10.0], [-30.0, -5.0], [5.0, -25.0]]),
           np.array([[1.0, -2.0], [3.0, 0.0], [-1.0, 2.0]]))
PLAN = SamplingPlan.uniform(10.0, 2.0, 0.2)


def _num_jac(f, x, h=1e-6):
    x = np.asarray(x, float)
    f0 = np.asarray(f(x))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x); e[k] = h
        J[:, k] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


def test_pairwise_fim_equals_numeric_jacobian_form():
    cp = PAIR.cp()
    t = PLAN.times

    def model(th):
        tm, dm, v = th
        return np.sqrt(dm ** 2 + v ** 2 * (tm - t) ** 2)

    G = _num_jac(model, theta_vector(cp))
    assert np.allclose(fim_pairwise(cp, PLAN), G.T @ G / PLAN.sigma ** 2, rtol=1e-6)


def test_alpha_fim_equals_numeric_jacobian_form():
    t = PLAN.times

    def model(a):
        p = PairState.from_alpha(a)
        out = []
        for pos, vel in ((p.x_i, p.v_i), (p.x_j, p.v_j)):
            P = pos + np.outer(t, vel)
            out.append(np.hypot(*(P[None] - ANCHORS[:, None]).transpose(2, 0, 1)).ravel())
        return np.concatenate(out)

    G = _num_jac(model, PAIR.alpha)
    assert np.allclose(fim_anchor(PAIR, ANCHORS, PLAN), G.T @ G / PLAN.sigma ** 2, rtol=1e-6)


def test_cp_jacobian_matches_numeric():
    f = lambda a: theta_vector(PairState.from_alpha(a).cp())
    assert np.allclose(jacobian_cp(PAIR), _num_jac(f, PAIR.alpha), atol=1e-6)


def test_friend_bound_equals_joint_fisher_marginal():
    # assembled with plain dense inverses, no pseudo-inverse or conditioning checks
    I_alpha = fim_alpha(PAIR, FRIENDS, PLAN)
    J = jacobian_cp(PAIR)
    C1 = cov_transform(I_alpha, J)
    I_tot = np.linalg.inv(C1) + fim_pairwise(PAIR.cp(), PLAN)
    expect = np.sqrt(np.diag(np.linalg.inv(I_tot)))
    assert np.allclose(friend_bounds(PAIR, FRIENDS, PLAN), expect, rtol=1e-8)
    assert np.allclose(fim_friend(PAIR, FRIENDS, PLAN), I_tot, rtol=1e-8)


def test_loewner_monotone_and_psd():
    I2 = fim_pairwise(PAIR.cp(), PLAN)
    I = fim_friend(PAIR, FRIENDS, PLAN)
    assert np.linalg.eigvalsh(I2).min() >= -1e-9 * np.abs(I2).max()
    assert np.linalg.eigvalsh(I - I2).min() >= -1e-9 * np.abs(I).max()
    fb, pb = friend_bounds(PAIR, FRIENDS, PLAN), pairwise_bounds(PAIR, PLAN)
    assert all(f <= p * (1 + 1e-9) for f, p in zip(fb, pb))
    more = (np.vstack([FRIENDS[0], [[40.0, 40.0]]]), np.vstack([FRIENDS[1], [[0.0, -1.0]]]))
    fb2 = friend_bounds(PAIR, more, PLAN)
    assert all(a <= b * (1 + 1e-9) for a, b in zip(fb2, fb))


def test_bounds_scale_linearly_with_sigma():
    b1 = anchor_bounds(PAIR, ANCHORS, SamplingPlan(PLAN.times, 0.1))
    b2 = anchor_bounds(PAIR, ANCHORS, SamplingPlan(PLAN.times, 0.4))
    assert np.allclose(np.array(b2), 4 * np.array(b1), rtol=1e-9)


def test_pairwise_bound_unidentifiable_with_one_sample():
    b = bounds_from_fim(fim_pairwise(CPParams(1.0, 2.0, 1.0), SamplingPlan([0.0], 0.1)))
    assert sum(math.isinf(x) for x in b) >= 2


def test_sampling_plan_validation():
    with pytest.raises(ValueError):
        SamplingPlan([0.0, 1.0], 0.0)
    assert len(SamplingPlan.uniform(10.0, 2.0, 0.2).times) == 20


def test_sweep_ordering_and_csv(tmp_path):
    cfg = BoundSweepConfig(sigma_grid=(0.1, 0.2), trials=2, geometries=20, seed=3)
    table = unit_bound_table(cfg)
    rows = bound_sweep(cfg, table)
    by = {(r.sigma, r.method): r for r in rows}
    for s in (0.1, 0.2):
        assert by[(s, "friend")].std_dm < by[(s, "pairwise")].std_dm
    assert by[(0.2, "anchor")].std_dm == pytest.approx(2 * by[(0.1, "anchor")].std_dm)
    write_bounds_csv(tmp_path / "b.csv", rows)
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 1 + 6


def test_geometry_bounds_deterministic():
    cfg = BoundSweepConfig()
    a = geometry_bounds(np.random.SeedSequence([0, 5]), cfg)
    b = geometry_bounds(np.random.SeedSequence([0, 5]), cfg)
    assert a == b


def test_incidence_sweep_shapes():
    out = incidence_sweep(np.linspace(0.3, 2.8, 5), PLAN)
    assert all(len(v) == 5 for v in out.values())
    for f, p in zip(out["friend"], out["pairwise"]):
        assert f.std_dm <= p.std_dm * (1 + 1e-9)
