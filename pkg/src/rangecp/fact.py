"""FACT: distributed relative localization and tracking by stress majorization.

Coordinates live in an array ``X`` of shape ``(T, N, 2)`` (epoch, node,
axis). The cost is

    S = sum_t sum_i sum_{j != i} w_ij^t (delta_ij^t - |x_i^t - x_j^t|)^2
        + sum_i r_i sum_{t=1}^{T-2} |x_i^{t-1} + x_i^{t+1} - 2 x_i^t|^2

(epochs zero-based; the smoothness penalty covers interior epochs only).
A sweep visits epochs in order and, within an epoch, nodes in order, each
time replacing ``x_i^t`` with the minimizer of a quadratic majorizer of
``S`` in that block (Gauss-Seidel). The default ``prior_target`` update
majorizes every term that involves ``x_i^t``, so ``S`` never increases;
``literal`` reproduces the simpler prior-anchored update
``x <- a_i (r_i x_prev + X b_i)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numba import njit
from scipy.optimize import least_squares

from .errors import DivergenceDetected
from .estimators import classical_mds, linear_track_fit, procrustes_align, symmetric_distances
from .kinematics import CPParams, cp_params_from_vectors
from .scenario import RangeStream

PRIOR_TARGET, LITERAL = 0, 1
_VARIANTS = {"prior_target": PRIOR_TARGET, "literal": LITERAL}
ZERO_DIST = 1e-9


@dataclass
class FactConfig:
    r: float = 1.0
    epsilon: float = 1e-6
    max_sweeps: int = 200
    window: int = 18
    update_variant: str = "prior_target"
    check_descent: bool = True

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("r must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.window < 3:
            raise ValueError("window must be >= 3 epochs")
        if self.update_variant not in _VARIANTS:
            raise ValueError(f"unknown update_variant {self.update_variant!r}")


def unit_weights(delta: np.ndarray) -> np.ndarray:
    """``w_ij^t = 1`` for ``i != j`` with a finite measurement, else 0."""
    W = np.isfinite(delta).astype(float)
    idx = np.arange(delta.shape[1])
    W[:, idx, idx] = 0.0
    return W


def _as_r(r, n) -> np.ndarray:
    return np.broadcast_to(np.asarray(r, dtype=float), (n,)).copy()


@njit(cache=True)
def _cost(X, delta, W, r):
    T, N = X.shape[0], X.shape[1]
    s = 0.0
    for t in range(T):
        for i in range(N):
            for j in range(N):
                if j == i or W[t, i, j] == 0.0:
                    continue
                dx = X[t, i, 0] - X[t, j, 0]
                dy = X[t, i, 1] - X[t, j, 1]
                e = delta[t, i, j] - math.sqrt(dx * dx + dy * dy)
                s += W[t, i, j] * e * e
    for i in range(N):
        if r[i] == 0.0:
            continue
        for c in range(1, T - 1):
            ax = X[c - 1, i, 0] + X[c + 1, i, 0] - 2.0 * X[c, i, 0]
            ay = X[c - 1, i, 1] + X[c + 1, i, 1] - 2.0 * X[c, i, 1]
            s += r[i] * (ax * ax + ay * ay)
    return s


@njit(cache=True)
def _node_update(X, delta, W, r, t, i, variant, prev_dir):
    """New coordinates of node ``i`` at epoch ``t``; ``X`` is read, not written."""
    T, N = X.shape[0], X.shape[1]
    xi0 = X[t, i, 0]
    xi1 = X[t, i, 1]
    accx = 0.0
    accy = 0.0
    den = 0.0
    for j in range(N):
        if j == i:
            continue
        if variant == 0:
            w = W[t, i, j] + W[t, j, i]
            wd = W[t, i, j] * delta[t, i, j] + W[t, j, i] * delta[t, j, i]
        else:
            w = W[t, i, j]
            wd = W[t, i, j] * delta[t, i, j]
        if w == 0.0:
            continue
        dx = xi0 - X[t, j, 0]
        dy = xi1 - X[t, j, 1]
        d = math.sqrt(dx * dx + dy * dy)
        if d < 1e-9:
            ux = prev_dir[t, i, j, 0]
            uy = prev_dir[t, i, j, 1]
        else:
            ux = dx / d
            uy = dy / d
            prev_dir[t, i, j, 0] = ux
            prev_dir[t, i, j, 1] = uy
        if wd >= 0.0 or variant != 0:
            # -2 wd |z| <= -2 wd z.u  (tangent-plane bound of the norm)
            accx += w * X[t, j, 0] + wd * ux
            accy += w * X[t, j, 1] + wd * uy
            den += w
        else:
            # 2|wd| |z| <= |wd| (|z|^2 / d + d)  (convex part, quadratic bound)
            we = w - wd / max(d, 1e-9)
            accx += we * X[t, j, 0]
            accy += we * X[t, j, 1]
            den += we
    if variant == 0:
        ri = r[i]
        if ri > 0.0:
            for c in range(t - 1, t + 2):
                if c < 1 or c > T - 2:
                    continue
                # x_i^t enters |x^{c-1} + x^{c+1} - 2 x^c|^2 with coefficient a
                a = -2.0 if c == t else 1.0
                restx = 0.0
                resty = 0.0
                for k, coef in ((c - 1, 1.0), (c + 1, 1.0), (c, -2.0)):
                    if k != t:
                        restx += coef * X[k, i, 0]
                        resty += coef * X[k, i, 1]
                accx += -ri * a * restx
                accy += -ri * a * resty
                den += ri * a * a
    else:
        accx += r[i] * xi0
        accy += r[i] * xi1
        den += r[i]
    if den <= 0.0:
        return xi0, xi1
    return accx / den, accy / den


@njit(cache=True)
def _sweep(X, delta, W, r, variant, prev_dir):
    T, N = X.shape[0], X.shape[1]
    for t in range(T):
        for i in range(N):
            nx, ny = _node_update(X, delta, W, r, t, i, variant, prev_dir)
            X[t, i, 0] = nx
            X[t, i, 1] = ny


def fact_cost(X, delta, weights=None, r=1.0) -> float:
    X, delta, W, r = _prep(X, delta, weights, r)
    return float(_cost(X, delta, W, r))


@dataclass
class FactState:
    X: np.ndarray
    cost: float
    sweeps: int = 0
    history: List[float] = field(default_factory=list)


def _prep(X, delta, weights, r):
    X = np.array(X, dtype=float, order="C")
    raw = np.asarray(delta, dtype=float)
    W = unit_weights(raw) if weights is None else np.ascontiguousarray(weights, dtype=float)
    delta = np.ascontiguousarray(np.nan_to_num(raw), dtype=float)
    return X, delta, W, _as_r(r, X.shape[1])


def _descent_slack(cost0: float, delta, W) -> float:
    """Allowed cost rise per sweep: relative to the start plus a rounding floor."""
    return 1e-9 * abs(cost0) + 1e-24 * float(np.sum(W * delta * delta))


def fact_sweep(state: FactState, delta, cfg: FactConfig, weights=None,
               prev_dir: Optional[np.ndarray] = None) -> FactState:
    """One Gauss-Seidel pass over all epochs and nodes."""
    X, d, W, r = _prep(state.X, delta, weights, cfg.r)
    if prev_dir is None:
        prev_dir = _initial_dirs(X.shape)
    _sweep(X, d, W, r, _VARIANTS[cfg.update_variant], prev_dir)
    cost = float(_cost(X, d, W, r))
    if (cfg.check_descent and cfg.update_variant == "prior_target"
            and cost > state.cost + _descent_slack(state.cost, d, W)):
        raise DivergenceDetected(f"cost rose from {state.cost!r} to {cost!r}")
    return FactState(X, cost, state.sweeps + 1, state.history + [cost])


def _initial_dirs(shape) -> np.ndarray:
    T, N = shape[0], shape[1]
    pd = np.zeros((T, N, N, 2))
    pd[..., 0] = 1.0
    return pd


def fact_optimize(X0, delta, cfg: FactConfig, weights=None) -> FactState:
    """Sweep until the cost decrease falls below ``epsilon`` (or ``max_sweeps``)."""
    X, d, W, r = _prep(X0, delta, weights, cfg.r)
    variant = _VARIANTS[cfg.update_variant]
    prev_dir = _initial_dirs(X.shape)
    cost = float(_cost(X, d, W, r))
    hist = [cost]
    slack = _descent_slack(cost, d, W)
    k = 0
    while k < cfg.max_sweeps:
        _sweep(X, d, W, r, variant, prev_dir)
        k += 1
        new = float(_cost(X, d, W, r))
        if (cfg.check_descent and variant == PRIOR_TARGET
                and new > cost + slack):
            raise DivergenceDetected(f"cost rose from {cost!r} to {new!r} at sweep {k}")
        hist.append(new)
        done = cost - new < cfg.epsilon
        cost = new
        if done:
            break
    return FactState(X, cost, k, hist)


# ---------------------------------------------------------------------------
# Message-passing form of the same sweep


class FactWorker:
    """One node of the distributed sweep.

    The worker owns its own coordinates and measurement row. It keeps a
    mirror of the friends' coordinates that is refreshed only through
    :meth:`receive`; updates are computed with the same kernel as the
    centralized sweep so results are bit-identical.
    """

    def __init__(self, node: int, X0, delta, W, r):
        self.node = node
        self.X = np.array(X0, dtype=float, order="C")
        self.delta = np.ascontiguousarray(delta, dtype=float)
        self.W = np.ascontiguousarray(W, dtype=float)
        self.r = np.ascontiguousarray(r, dtype=float)
        self.prev_dir = _initial_dirs(self.X.shape)

    def update(self, t: int, variant: int):
        nx, ny = _node_update(self.X, self.delta, self.W, self.r, t, self.node, variant,
                              self.prev_dir)
        self.X[t, self.node] = (nx, ny)
        return t, self.node, nx, ny

    def receive(self, msg) -> None:
        t, j, nx, ny = msg
        self.X[t, j] = (nx, ny)

    def local_cost(self) -> float:
        """Cost terms attributed to this node (its measurements and its smoothness)."""
        i = self.node
        T = self.X.shape[0]
        s = 0.0
        for t in range(T):
            for j in range(self.X.shape[1]):
                if j != i and self.W[t, i, j] != 0:
                    e = self.delta[t, i, j] - math.hypot(*(self.X[t, i] - self.X[t, j]))
                    s += self.W[t, i, j] * e * e
        for c in range(1, T - 1):
            a = self.X[c - 1, i] + self.X[c + 1, i] - 2 * self.X[c, i]
            s += self.r[i] * float(a @ a)
        return s


def distributed_optimize(X0, delta, cfg: FactConfig, weights=None) -> FactState:
    """Run the sweep as N workers exchanging only coordinate updates.

    Nodes only ever see measurements they take part in and coordinates
    their friends broadcast. The running cost travels around the ring as a
    token; each node adds its local cost.
    """
    X, d, W, r = _prep(X0, delta, weights, cfg.r)
    n = X.shape[1]
    # each worker only needs its own measurement row/column
    workers = []
    for i in range(n):
        di = np.zeros_like(d)
        wi = np.zeros_like(W)
        di[:, i, :], di[:, :, i] = d[:, i, :], d[:, :, i]
        wi[:, i, :], wi[:, :, i] = W[:, i, :], W[:, :, i]
        workers.append(FactWorker(i, X, di, wi, r))
    variant = _VARIANTS[cfg.update_variant]

    def ring_cost():
        s = 0.0
        for w in workers:  # token passes i -> i+1 mod N
            s += w.local_cost()
        return s

    cost = ring_cost()
    hist = [cost]
    k = 0
    T = X.shape[0]
    while k < cfg.max_sweeps:
        for t in range(T):
            for i in range(n):
                msg = workers[i].update(t, variant)
                for j in range(n):
                    if j != i:
                        workers[j].receive(msg)
        k += 1
        new = ring_cost()
        hist.append(new)
        done = cost - new < cfg.epsilon
        cost = new
        if done:
            break
    Xf = np.stack([workers[i].X[:, i] for i in range(n)], axis=1)
    return FactState(Xf, float(_cost(Xf, d, W, r)), k, hist)


# ---------------------------------------------------------------------------
# Windowed tracking


@dataclass
class WindowResult:
    t: np.ndarray
    X: np.ndarray
    positions: np.ndarray       # regression position of each node at t_ref
    velocities: np.ndarray
    pair_cp: Dict[Tuple[int, int], CPParams]
    cost: float
    sweeps: int

    @property
    def t_ref(self) -> float:
        return float(self.t[-1])


def mds_initialization(delta_epoch: np.ndarray, T: int) -> np.ndarray:
    """Classical MDS of one epoch, node 0 moved to the origin, repeated ``T`` times."""
    X = classical_mds(symmetric_distances(np.nan_to_num(delta_epoch))).coords
    X = X - X[0]
    return np.repeat(X[None], T, axis=0)


def aligned_mds_initialization(delta: np.ndarray, t=None, iters: int = 50,
                               tol: float = 1e-12) -> np.ndarray:
    """Per-epoch MDS placed in one common frame under a constant-velocity model.

    Epochs are first chained by Procrustes alignment to the previous epoch,
    which fixes reflections. The frames are then refined by alternating a
    per-node straight-line fit with a Procrustes alignment of every epoch
    onto the line predictions (epoch 0 stays fixed). Chaining alone lets
    the frame rotate slowly with the motion; that rotation is nearly free
    in the smoothness penalty, so the sweeps would hardly correct it.
    """
    T = delta.shape[0]
    t = np.arange(T, dtype=float) if t is None else np.asarray(t, dtype=float)
    Y = np.stack([classical_mds(symmetric_distances(np.nan_to_num(delta[e]))).coords
                  for e in range(T)])
    X = Y - Y[:, :1]
    for e in range(1, T):
        X[e] = procrustes_align(X[e], X[e - 1])
    if T < 3:
        return X
    A = np.column_stack([np.ones(T), t - t.mean()])
    prev = np.inf
    for _ in range(iters):
        coef, *_ = np.linalg.lstsq(A, X.reshape(T, -1), rcond=None)
        pred = (A @ coef).reshape(X.shape)
        for e in range(1, T):
            X[e] = procrustes_align(X[e], pred[e])
        err = float(np.sum((X - pred) ** 2))
        if prev - err <= tol * max(err, 1e-300):
            break
        prev = err
    return X - X[0, 0]


def constant_velocity_fit(t, delta, X0, weights=None) -> np.ndarray:
    """Range-only least-squares fit of straight-line tracks ``p_i + v_i (t - t_0)``.

    ``X0`` (T, N, 2) supplies the starting tracks (typically from
    :func:`aligned_mds_initialization`). Node 0 keeps its initial
    position and velocity, which removes the translation and common
    velocity freedoms; rotation is left to the damped solver. Returns the
    fitted tracks on the same epochs.
    """
    t = np.asarray(t, dtype=float)
    tau = t - t[0]
    T, N = X0.shape[0], X0.shape[1]
    raw = np.asarray(delta, dtype=float)
    W = unit_weights(raw) if weights is None else np.asarray(weights, dtype=float)
    iu, ju = np.triu_indices(N, 1)
    w = np.sqrt(0.5 * (W[:, iu, ju] + W[:, ju, iu]))
    dm = 0.5 * (np.nan_to_num(raw[:, iu, ju]) + np.nan_to_num(raw[:, ju, iu]))
    A = np.column_stack([np.ones(T), tau])
    coef, *_ = np.linalg.lstsq(A, X0.reshape(T, -1), rcond=None)
    p0 = coef[0].reshape(N, 2)
    v0 = coef[1].reshape(N, 2)

    def tracks(q):
        q = q.reshape(N - 1, 4)
        p = np.vstack([p0[:1], q[:, :2]])
        v = np.vstack([v0[:1], q[:, 2:]])
        return p[None] + v[None] * tau[:, None, None]

    def resid(q):
        X = tracks(q)
        d = np.hypot(*(X[:, iu] - X[:, ju]).transpose(2, 0, 1))
        return (w * (dm - d)).ravel()

    q0 = np.hstack([p0[1:], v0[1:]]).ravel()
    sol = least_squares(resid, q0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return tracks(sol.x)


def window_kinematics(t, X):
    n = X.shape[1]
    pos = np.empty((n, 2))
    vel = np.empty((n, 2))
    for i in range(n):
        pos[i], vel[i] = linear_track_fit(t, X[:, i], t[-1])
    return pos, vel


def pair_cp_from_kinematics(pos, vel) -> Dict[Tuple[int, int], CPParams]:
    out = {}
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            v = vel[j] - vel[i]
            if float(v @ v) == 0.0:
                continue
            out[(i, j)] = cp_params_from_vectors(pos[j] - pos[i], v)
    return out


def fact_window(t, delta, X0, cfg: FactConfig, weights=None) -> WindowResult:
    st = fact_optimize(X0, delta, cfg, weights)
    pos, vel = window_kinematics(np.asarray(t, dtype=float), st.X)
    return WindowResult(np.asarray(t, dtype=float), st.X, pos, vel,
                        pair_cp_from_kinematics(pos, vel), st.cost, st.sweeps)


def fact_track(stream: RangeStream, cfg: FactConfig, X_init=None) -> List[WindowResult]:
    """Track all nodes over consecutive non-overlapping windows of ``cfg.window`` epochs.

    The first window starts from frame-aligned per-epoch MDS (or ``X_init``);
    later windows start from the previous window's last coordinates
    projected forward with its velocity estimates. Trailing epochs that do
    not fill a window are ignored.
    """
    T = cfg.window
    results = []
    prev: Optional[WindowResult] = None
    for start in range(0, len(stream.t) - T + 1, T):
        t = stream.t[start:start + T]
        delta = stream.delta[start:start + T]
        if prev is None:
            X0 = (constant_velocity_fit(t, delta, aligned_mds_initialization(delta, t))
                  if X_init is None else np.asarray(X_init, float))
        else:
            last = prev.X[-1]
            X0 = last[None] + prev.velocities[None] * (t - prev.t[-1])[:, None, None]
        prev = fact_window(t, delta, X0, cfg)
        results.append(prev)
    return results


def write_tracks_csv(path, results: List[WindowResult]) -> None:
    """Relative-frame coordinates, one row per epoch and node (epochs numbered globally)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "node", "x", "y"])
        e0 = 0
        for res in results:
            for e in range(res.X.shape[0]):
                for i in range(res.X.shape[1]):
                    w.writerow([e0 + e, i, f"{res.X[e, i, 0]:.9g}", f"{res.X[e, i, 1]:.9g}"])
            e0 += res.X.shape[0]


def write_pair_cp_csv(path, results: List[WindowResult]) -> None:
    """Per-window pair CP parameters, keyed by the window's last global epoch."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "i", "j", "dm", "tm", "v"])
        e0 = 0
        for res in results:
            e0 += res.X.shape[0]
            for (i, j), cp in sorted(res.pair_cp.items()):
                w.writerow([e0 - 1, i, j, f"{cp.d_m:.9g}", f"{cp.t_m:.9g}", f"{cp.v:.9g}"])
