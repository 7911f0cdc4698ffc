"""Fisher information and Cramér-Rao bounds on CP parameters.

Parameter ordering throughout this module is ``theta = (t_m, d_m, v)``,
which is the row order of the per-sample information matrix and of
:class:`BoundTriple`. The kinematic parameter vector is
``alpha = (x_i, x_j, v_i, v_j)`` (8 entries), with the relative state taken
as agent ``j`` seen from agent ``i``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateGeometry, NonIdentifiable, ZeroRelativeSpeed
from .kinematics import CPParams, cp_params_from_vectors
from .scenario import gen_random_geometry

THETA_NAMES = ("t_m", "d_m", "v")
COND_MAX = 1e12
PINV_RCOND = 1e-12


class BoundTriple(NamedTuple):
    std_tm: float
    std_dm: float
    std_v: float

    def scaled(self, k: float) -> "BoundTriple":
        return BoundTriple(*(k * s for s in self))


@dataclass(frozen=True)
class PairState:
    x_i: np.ndarray
    x_j: np.ndarray
    v_i: np.ndarray
    v_j: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([self.x_i, self.x_j, self.v_i, self.v_j]).astype(float)

    @classmethod
    def from_alpha(cls, a) -> "PairState":
        a = np.asarray(a, dtype=float)
        return cls(a[0:2], a[2:4], a[4:6], a[6:8])

    @property
    def rel_position(self) -> np.ndarray:
        return np.asarray(self.x_j, float) - np.asarray(self.x_i, float)

    @property
    def rel_velocity(self) -> np.ndarray:
        return np.asarray(self.v_j, float) - np.asarray(self.v_i, float)

    def cp(self) -> CPParams:
        return cp_params_from_vectors(self.rel_position, self.rel_velocity)


@dataclass(frozen=True)
class SamplingPlan:
    times: np.ndarray
    sigma: float

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        object.__setattr__(self, "times", t)
        if t.size < 1:
            raise ValueError("need at least one sample time")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def uniform(cls, duration: float, rate: float, sigma: float) -> "SamplingPlan":
        n = int(round(duration * rate))
        return cls(np.arange(n) / rate, sigma)


def theta_vector(cp: CPParams) -> np.ndarray:
    return np.array([cp.t_m, cp.d_m, cp.v])


def fim_pairwise(cp: CPParams, plan: SamplingPlan) -> np.ndarray:
    """Information on ``(t_m, d_m, v)`` from direct pairwise ranges."""
    tau = cp.t_m - plan.times
    den = cp.d_m ** 2 + cp.v ** 2 * tau ** 2
    if np.any(den <= 0):
        raise DegenerateGeometry("pair separation is zero at a sample time")
    # rows of F_n are g g^T with g = (v^2 tau, d_m, v tau^2)
    g = np.stack([cp.v ** 2 * tau, np.full_like(tau, cp.d_m), cp.v * tau ** 2])
    return (g / den) @ g.T / plan.sigma ** 2


def _ref_tracks(refs, times: np.ndarray) -> np.ndarray:
    """Reference points as ``(K, n_times, 2)``; ``refs`` may be static
    ``(K, 2)`` coordinates or ``(positions, velocities)`` of moving nodes."""
    if isinstance(refs, tuple):
        p, v = (np.asarray(a, dtype=float).reshape(-1, 2) for a in refs)
        return p[:, None, :] + v[:, None, :] * times[None, :, None]
    r = np.asarray(refs, dtype=float).reshape(-1, 2)
    return np.broadcast_to(r[:, None, :], (len(r), len(times), 2))


def fim_alpha(pair: PairState, refs, plan: SamplingPlan) -> np.ndarray:
    """Information on ``alpha`` from ranges of both agents to reference points."""
    t = plan.times
    R = _ref_tracks(refs, t)
    out = np.zeros((8, 8))
    for (pos, vel, o) in ((pair.x_i, pair.v_i, 0), (pair.x_j, pair.v_j, 2)):
        P = np.asarray(pos, float)[None, :] + np.outer(t, vel)
        d = P[None, :, :] - R
        n = np.hypot(d[..., 0], d[..., 1])
        if np.any(n <= 1e-12):
            raise DegenerateGeometry("agent coincides with a reference node")
        u = d / n[..., None]
        uu = np.einsum("kna,knb->nab", u, u)  # summed over references
        s0 = uu.sum(0)
        s1 = np.einsum("n,nab->ab", t, uu)
        s2 = np.einsum("n,nab->ab", t * t, uu)
        pi, vi = slice(o, o + 2), slice(o + 4, o + 6)
        out[pi, pi] += s0
        out[pi, vi] += s1
        out[vi, pi] += s1
        out[vi, vi] += s2
    return out / plan.sigma ** 2


def fim_anchor(pair: PairState, anchors, plan: SamplingPlan) -> np.ndarray:
    return fim_alpha(pair, np.asarray(anchors, dtype=float).reshape(-1, 2), plan)


def jacobian_cp(pair: PairState) -> np.ndarray:
    """Analytic ``d(t_m, d_m, v) / d alpha`` (3 x 8)."""
    x, v = pair.rel_position, pair.rel_velocity
    vv = float(v @ v)
    if vv == 0:
        raise ZeroRelativeSpeed("relative velocity is zero")
    s = math.sqrt(vv)
    xv = float(x @ v)
    c = float(x[0] * v[1] - x[1] * v[0])
    sgn = 1.0 if c >= 0 else -1.0  # one-sided derivative at d_m = 0
    dtm_dx = -v / vv
    dtm_dv = -x / vv + 2 * xv * v / vv ** 2
    ddm_dx = sgn * np.array([v[1], -v[0]]) / s
    ddm_dv = sgn * np.array([-x[1], x[0]]) / s - abs(c) * v / s ** 3
    dv_dx = np.zeros(2)
    dv_dv = v / s
    J = np.zeros((3, 8))
    for row, (gx, gv) in enumerate(((dtm_dx, dtm_dv), (ddm_dx, ddm_dv), (dv_dx, dv_dv))):
        J[row, 0:2] = -gx
        J[row, 2:4] = gx
        J[row, 4:6] = -gv
        J[row, 6:8] = gv
    return J


def _checked_inverse(M: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(M)):
        raise NonIdentifiable("non-finite information matrix")
    cond = np.linalg.cond(M)
    if not cond <= COND_MAX:
        raise NonIdentifiable(f"condition number {cond:.3g} exceeds {COND_MAX:g}")
    return np.linalg.pinv(M, rcond=PINV_RCOND, hermitian=True)


def crlb_transform(I_alpha: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Information on ``theta`` from information on ``alpha`` via ``C = J I^-1 J^T``."""
    C = J @ _checked_inverse(I_alpha) @ J.T
    C = 0.5 * (C + C.T)
    I = _checked_inverse(C)
    return 0.5 * (I + I.T)


def cov_transform(I_alpha: np.ndarray, J: np.ndarray) -> np.ndarray:
    C = J @ _checked_inverse(I_alpha) @ J.T
    return 0.5 * (C + C.T)


def fim_friend(pair: PairState, friends, plan: SamplingPlan) -> np.ndarray:
    """Friend information (transformed) plus direct pairwise information.

    ``friends`` is ``(positions, velocities)`` of the friend nodes, each of
    shape ``(K, 2)``; their tracks are evaluated at the true values.
    """
    I2 = fim_pairwise(pair.cp(), plan)
    fp = np.asarray(friends[0], dtype=float).reshape(-1, 2)
    if len(fp) == 0:
        return I2
    I1 = crlb_transform(fim_alpha(pair, (fp, friends[1]), plan), jacobian_cp(pair))
    return I1 + I2


def bounds_from_fim(I: np.ndarray) -> BoundTriple:
    """Square roots of the diagonal of ``I^-1``; ``inf`` for unidentifiable entries."""
    I = 0.5 * (I + I.T)
    w, V = np.linalg.eigh(I)
    keep = w > PINV_RCOND * max(w.max(), 0.0)
    if w.max() <= 0:
        return BoundTriple(math.inf, math.inf, math.inf)
    Vk = V[:, keep]
    var = (Vk / w[keep]) @ Vk.T
    out = []
    for k in range(3):
        # a parameter is identifiable iff its unit vector lies in range(I)
        resid = 1.0 - float(np.sum(Vk[k] ** 2))
        out.append(math.inf if resid > 1e-9 else math.sqrt(max(var[k, k], 0.0)))
    return BoundTriple(*out)


def bounds_from_cov(C: np.ndarray) -> BoundTriple:
    return BoundTriple(*np.sqrt(np.maximum(np.diag(C), 0.0)))


def pairwise_bounds(pair: PairState, plan: SamplingPlan) -> BoundTriple:
    return bounds_from_fim(fim_pairwise(pair.cp(), plan))


def anchor_bounds(pair: PairState, anchors, plan: SamplingPlan) -> BoundTriple:
    return bounds_from_cov(cov_transform(fim_anchor(pair, anchors, plan), jacobian_cp(pair)))


def friend_bounds(pair: PairState, friends, plan: SamplingPlan) -> BoundTriple:
    return bounds_from_fim(fim_friend(pair, friends, plan))


# ---------------------------------------------------------------------------
# Sweeps

DEFAULT_PLAN_DURATION = 10.0
DEFAULT_PLAN_RATE = 2.0


@dataclass
class BoundSweepConfig:
    sigma_grid: Sequence[float] = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    trials: int = 100
    geometries: int = 150
    anchors: int = 4
    friends: int = 4
    seed: int = 0
    duration: float = DEFAULT_PLAN_DURATION
    rate: float = DEFAULT_PLAN_RATE
    radius: float = 50.0
    max_speed: float = 10.0
    aggregate: str = "median"


class BoundRow(NamedTuple):
    sigma: float
    method: str
    std_tm: float
    std_dm: float
    std_v: float


METHODS = ("pairwise", "anchor", "friend")


def geometry_bounds(seed, cfg: BoundSweepConfig) -> dict:
    """Unit-sigma bounds of the pair (agents 0, 1) for one random geometry."""
    sc = gen_random_geometry(2 + cfg.friends, cfg.anchors, seed, cfg.radius, cfg.max_speed)
    plan = SamplingPlan.uniform(cfg.duration, cfg.rate, 1.0)
    a, b = sc.agents[0], sc.agents[1]
    pair = PairState(a.position, b.position, a.velocity, b.velocity)
    fr = sc.agents[2:]
    friends = (np.array([f.position for f in fr]).reshape(-1, 2),
               np.array([f.velocity for f in fr]).reshape(-1, 2))
    out = {}
    for name, fn in (("pairwise", lambda: pairwise_bounds(pair, plan)),
                     ("anchor", lambda: anchor_bounds(pair, sc.anchors, plan)),
                     ("friend", lambda: friend_bounds(pair, friends, plan))):
        try:
            out[name] = fn()
        except (NonIdentifiable, DegenerateGeometry, ZeroRelativeSpeed):
            out[name] = BoundTriple(math.inf, math.inf, math.inf)
    return out


def _aggregate(values: np.ndarray, how: str) -> np.ndarray:
    if how == "median":
        return np.median(values, axis=0)
    if how == "mean":
        return np.mean(values, axis=0)
    raise ValueError(f"unknown aggregate {how!r}")


def unit_bound_table(cfg: BoundSweepConfig) -> dict:
    """Per-geometry unit-sigma bounds, keyed by method; arrays of shape ``(G, 3)``.

    Geometry ``g`` uses seed ``(cfg.seed, g)`` so results are reproducible
    and independent of evaluation order.
    """
    total = cfg.trials * cfg.geometries
    rows = {m: np.empty((total, 3)) for m in METHODS}
    for g in range(total):
        b = geometry_bounds(np.random.SeedSequence([cfg.seed, g]), cfg)
        for m in METHODS:
            rows[m][g] = b[m]
    return rows


def bound_sweep(cfg: BoundSweepConfig, table: Optional[dict] = None) -> List[BoundRow]:
    """Aggregate bound per method and noise level.

    Bounds scale linearly in sigma, so each geometry is evaluated once at
    unit sigma and rescaled.
    """
    table = unit_bound_table(cfg) if table is None else table
    agg = {m: _aggregate(table[m], cfg.aggregate) for m in METHODS}
    return [BoundRow(float(s), m, *(float(s) * agg[m])) for s in cfg.sigma_grid for m in METHODS]


def write_bounds_csv(path, rows: Iterable[BoundRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma", "method", "std_tm", "std_dm", "std_v"])
        for r in rows:
            w.writerow([f"{r.sigma:.9g}", r.method, f"{r.std_tm:.9g}", f"{r.std_dm:.9g}",
                        f"{r.std_v:.9g}"])


def incidence_sweep(angles, plan: SamplingPlan, speed_i: float = 5.0, speed_j: float = 5.0,
                    start_distance: float = 30.0, n_refs: int = 4, ref_radius: float = 50.0,
                    seed: int = 0) -> dict:
    """Bounds for a fixed crossing geometry as the relative heading varies.

    Agent ``i`` heads along +x and agent ``j`` along a heading rotated by
    ``angle``; both reach the origin at the same time (a collision course).
    Anchors sit on a circle; friends are a fixed random set of moving nodes.
    """
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * np.pi, n_refs)
    anchors = ref_radius * np.column_stack([np.cos(th), np.sin(th)])
    fr = gen_random_geometry(max(n_refs, 2), 0, rng.integers(2**31))
    friends = (np.array([a.position for a in fr.agents[:n_refs]]),
               np.array([a.velocity for a in fr.agents[:n_refs]]))
    t_hit = start_distance / speed_i
    out = {m: [] for m in METHODS}
    for ang in angles:
        vi = np.array([speed_i, 0.0])
        vj = speed_j * np.array([math.cos(ang), math.sin(ang)])
        # offset j slightly off the collision course so d_m > 0
        pair = PairState(-vi * t_hit, -vj * t_hit + np.array([0.0, 0.5]), vi, vj)
        for name, fn in (("pairwise", lambda: pairwise_bounds(pair, plan)),
                         ("anchor", lambda: anchor_bounds(pair, anchors, plan)),
                         ("friend", lambda: friend_bounds(pair, friends, plan))):
            try:
                out[name].append(fn())
            except (NonIdentifiable, DegenerateGeometry, ZeroRelativeSpeed):
                out[name].append(BoundTriple(math.inf, math.inf, math.inf))
    return out


# ---------------------------------------------------------------------------
# Maximum-likelihood fits used to check that the bounds are attainable-or-below


def _range_model_alpha(alpha, refs_tracks, times):
    p = PairState.from_alpha(alpha)
    out = []
    for pos, vel in ((p.x_i, p.v_i), (p.x_j, p.v_j)):
        P = pos[None, :] + np.outer(times, vel)
        d = P[None] - refs_tracks
        out.append(np.hypot(d[..., 0], d[..., 1]).ravel())
    return np.concatenate(out)


def _pair_range_alpha(alpha, times):
    p = PairState.from_alpha(alpha)
    r = p.rel_position[None, :] + np.outer(times, p.rel_velocity)
    return np.hypot(r[:, 0], r[:, 1])


def simulate_measurements(pair: PairState, refs, plan: SamplingPlan, rng, pairwise: bool):
    t = plan.times
    R = _ref_tracks(refs, t) if refs is not None else None
    y_ref = None if R is None else _range_model_alpha(pair.alpha, R, t)
    y_pair = _pair_range_alpha(pair.alpha, t) if pairwise else None
    if y_ref is not None:
        y_ref = y_ref + rng.normal(0, plan.sigma, y_ref.shape)
    if y_pair is not None:
        y_pair = y_pair + rng.normal(0, plan.sigma, y_pair.shape)
    return y_ref, y_pair


def ml_fit_pairwise(y: np.ndarray, plan: SamplingPlan, init: CPParams) -> np.ndarray:
    """ML estimate of ``(t_m, d_m, v)`` from pairwise ranges (local search from ``init``)."""
    t = plan.times

    def resid(th):
        tm, dm, v = th
        return np.sqrt(dm * dm + v * v * (tm - t) ** 2) - y

    sol = least_squares(resid, theta_vector(init), method="lm", xtol=1e-12, ftol=1e-12)
    tm, dm, v = sol.x
    return np.array([tm, abs(dm), abs(v)])


def ml_fit_alpha(y_ref, y_pair, refs, plan: SamplingPlan, init: PairState) -> np.ndarray:
    """ML estimate of ``(t_m, d_m, v)`` from reference ranges (and optional pairwise ranges)."""
    t = plan.times
    R = _ref_tracks(refs, t)

    def resid(a):
        r = [_range_model_alpha(a, R, t) - y_ref]
        if y_pair is not None:
            r.append(_pair_range_alpha(a, t) - y_pair)
        return np.concatenate(r)

    sol = least_squares(resid, init.alpha, method="lm", xtol=1e-12, ftol=1e-12)
    return theta_vector(PairState.from_alpha(sol.x).cp())
