"""Baseline CP-parameter estimators.

* pairwise quadratic regression on squared ranges,
* TDOA localization from anchor range differences plus linear-regression
  velocity,
* classical MDS and an MDS baseline whose relative speed comes from the
  second difference of squared ranges.

Window-level helpers return ``{(i, j): CPParams}`` for every pair whose
estimate exists, with ``t_m`` measured from a caller-supplied reference time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import (InsufficientData, NoFeasibleRoot, NonApproaching, SingularGeometry,
                     ZeroRelativeSpeed)
from .kinematics import CPParams, cp_params_from_vectors
from .scenario import RangeDiffStream, RangeSample, RangeStream

PairCP = Dict[Tuple[int, int], CPParams]


class QuadFit(NamedTuple):
    a0: float
    a1: float
    a2: float

    def cp(self) -> CPParams:
        if not self.a2 > 0:
            raise NonApproaching(f"a2={self.a2:.3g} <= 0")
        t_m = -self.a1 / (2 * self.a2)
        d_m = math.sqrt(max(0.0, self.a0 - self.a1 ** 2 / (4 * self.a2)))
        return CPParams(d_m, t_m, math.sqrt(self.a2))


def fit_squared_range(t, delta, t_ref: float = 0.0) -> QuadFit:
    """Least-squares fit of ``delta^2`` against ``(1, tau, tau^2)``, ``tau = t - t_ref``."""
    tau = np.asarray(t, dtype=float) - t_ref
    y = np.asarray(delta, dtype=float) ** 2
    if len(np.unique(tau)) < 3:
        raise InsufficientData("need at least three distinct sample times")
    A = np.column_stack([np.ones_like(tau), tau, tau * tau])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return QuadFit(*map(float, coef))


def pairwise_fit(samples: Sequence[RangeSample], t_ref: float = 0.0) -> CPParams:
    """CP parameters of one pair from its range samples."""
    t = np.array([s.t for s in samples], dtype=float)
    d = np.array([s.delta for s in samples], dtype=float)
    return fit_squared_range(t, d, t_ref).cp()


def pairwise_window_cp(stream: RangeStream, t_ref: Optional[float] = None) -> PairCP:
    t_ref = stream.t[-1] if t_ref is None else t_ref
    out = {}
    n = stream.n_nodes
    for i in range(n):
        for j in range(i + 1, n):
            try:
                out[(i, j)] = fit_squared_range(stream.t, stream.delta[:, i, j], t_ref).cp()
            except (NonApproaching, InsufficientData):
                pass
    return out


# ---------------------------------------------------------------------------
# TDOA


@dataclass(frozen=True)
class AnchorSet:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "coords", c)
        if len(c) < 3:
            raise SingularGeometry("need at least three anchors")
        if np.linalg.matrix_rank(c[1:] - c[0], tol=1e-9 * max(1.0, np.abs(c).max())) < 2:
            raise SingularGeometry("anchors are collinear")


def _predicted_diffs(x, anchors):
    D = np.hypot(*(x[None, :] - anchors).T)
    return D[1:] - D[0]


def tdoa_localize(ddiff, anchors) -> np.ndarray:
    """Tag position from range differences ``D_m - D_0`` to anchors ``m = 1..M-1``.

    Subtracting the squared range equations of anchor 0 from those of anchor
    ``m`` gives ``2 (x_0 - x_m)^T x = b_m + 2 D_0 Delta_m`` with
    ``b_m = |x_0|^2 - |x_m|^2 + Delta_m^2``, so the position is affine in the
    unknown ``D_0``: ``x = p + q D_0``. Substituting into ``|x - x_0| = D_0``
    leaves a quadratic in ``D_0``; non-negative roots are scored by their fit
    to the measured differences.
    """
    aset = anchors if isinstance(anchors, AnchorSet) else AnchorSet(anchors)
    X = aset.coords
    delta = np.asarray(ddiff, dtype=float).reshape(-1)
    if len(delta) != len(X) - 1:
        raise ValueError("need one range difference per non-reference anchor")
    A = X[0] - X[1:]
    b = X[0] @ X[0] - np.einsum("ij,ij->i", X[1:], X[1:]) + delta ** 2
    pinv = np.linalg.pinv(2 * A)
    p = pinv @ b
    q = pinv @ (2 * delta)
    u = p - X[0]
    qa = q @ q - 1.0
    qb = 2.0 * (u @ q)
    qc = u @ u
    if abs(qa) < 1e-12:
        roots = [] if abs(qb) < 1e-15 else [-qc / qb]
    else:
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            raise NoFeasibleRoot("complex reference distance")
        sq = math.sqrt(disc)
        roots = [(-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)]
    roots = sorted(r for r in roots if r >= 0)
    if not roots:
        raise NoFeasibleRoot("no non-negative reference distance")
    cands = [p + q * r for r in roots]
    res = [float(np.linalg.norm(_predicted_diffs(c, X) - delta)) for c in cands]
    best = 0
    if len(cands) == 2 and res[0] > 1.1 * res[1] + 1e-12:
        best = 1
    return cands[best]


def linear_track_fit(t, positions, t_ref: Optional[float] = None):
    """Per-axis least-squares line through a track.

    Returns ``(position_at_t_ref, velocity)``.
    """
    t = np.asarray(t, dtype=float)
    P = np.asarray(positions, dtype=float).reshape(len(t), -1)
    if len(t) < 2 or np.ptp(t) == 0:
        raise InsufficientData("need at least two distinct epochs")
    t_ref = t[-1] if t_ref is None else t_ref
    tau = t - t_ref
    A = np.column_stack([np.ones_like(tau), tau])
    coef, *_ = np.linalg.lstsq(A, P, rcond=None)
    return coef[0], coef[1]


def velocity_regression(t, positions, window: Optional[float] = 1.0) -> np.ndarray:
    """Slope of the per-axis regression over the trailing ``window`` seconds."""
    t = np.asarray(t, dtype=float)
    P = np.asarray(positions, dtype=float)
    if window is not None:
        keep = t > t[-1] - window - 1e-9
        t, P = t[keep], P[keep]
    return linear_track_fit(t, P)[1]


class Track(NamedTuple):
    node: int
    t: np.ndarray
    positions: np.ndarray


def tdoa_tracks(diffs: RangeDiffStream, anchors) -> list:
    """Per-tag tracks; epochs without a feasible root are dropped."""
    aset = anchors if isinstance(anchors, AnchorSet) else AnchorSet(anchors)
    tracks = []
    for tag in range(diffs.ddiff.shape[1]):
        ts, ps = [], []
        for e, t in enumerate(diffs.t):
            try:
                ps.append(tdoa_localize(diffs.ddiff[e, tag], aset))
                ts.append(t)
            except NoFeasibleRoot:
                continue
        tracks.append(Track(tag, np.array(ts), np.array(ps).reshape(-1, 2)))
    return tracks


def cp_from_tracks(tracks, t_ref: float) -> PairCP:
    """Pairwise CP parameters from absolute (or common-frame) tracks."""
    fits = {}
    for tr in tracks:
        try:
            fits[tr.node] = linear_track_fit(tr.t, tr.positions, t_ref)
        except InsufficientData:
            continue
    out = {}
    nodes = sorted(fits)
    for a, i in enumerate(nodes):
        for j in nodes[a + 1:]:
            x = fits[j][0] - fits[i][0]
            v = fits[j][1] - fits[i][1]
            try:
                out[(i, j)] = cp_params_from_vectors(x, v)
            except ZeroRelativeSpeed:
                pass
    return out


def tdoa_window_cp(diffs: RangeDiffStream, anchors, t_ref: Optional[float] = None) -> PairCP:
    t_ref = diffs.t[-1] if t_ref is None else t_ref
    return cp_from_tracks(tdoa_tracks(diffs, anchors), t_ref)


# ---------------------------------------------------------------------------
# MDS


class MDSResult(NamedTuple):
    coords: np.ndarray
    eigenvalues: np.ndarray
    realizable: bool


def classical_mds(D, dim: int = 2) -> MDSResult:
    """Torgerson scaling of a distance matrix.

    ``realizable`` is False when the first discarded eigenvalue exceeds
    ``1e-6`` times the largest; coordinates are still returned.
    """
    D = np.asarray(D, dtype=float)
    n = len(D)
    if D.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if not np.allclose(D, D.T, atol=1e-9) or np.any(np.abs(np.diag(D)) > 1e-9) or np.any(D < 0):
        raise ValueError("distance matrix must be symmetric, zero-diagonal and non-negative")
    H = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * H @ (D ** 2) @ H
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    k = min(dim, n)
    X = np.zeros((n, dim))
    X[:, :k] = V[:, :k] * np.sqrt(np.maximum(w[:k], 0.0))
    realizable = not (n > dim and w[dim] > 1e-6 * max(w[0], 0.0))
    return MDSResult(X, w, bool(realizable))


def procrustes_align(X, ref) -> np.ndarray:
    """Rigid transform (rotation or reflection plus translation) of ``X`` onto ``ref``."""
    X = np.asarray(X, dtype=float)
    ref = np.asarray(ref, dtype=float)
    mx, mr = X.mean(0), ref.mean(0)
    U, _, Vt = np.linalg.svd((X - mx).T @ (ref - mr))
    return (X - mx) @ (U @ Vt) + mr


def symmetric_distances(delta: np.ndarray) -> np.ndarray:
    """Clean a measured range matrix for MDS: symmetric, zero diagonal, non-negative."""
    D = 0.5 * (delta + delta.T)
    D = np.abs(D)
    np.fill_diagonal(D, 0.0)
    return D


def mds_tracks(stream: RangeStream) -> np.ndarray:
    """Per-epoch MDS coordinates, each aligned to the previous epoch; ``(E, N, 2)``."""
    out = np.empty((len(stream.t), stream.n_nodes, 2))
    for e in range(len(stream.t)):
        X = classical_mds(symmetric_distances(stream.delta[e])).coords
        out[e] = X if e == 0 else procrustes_align(X, out[e - 1])
    return out


def second_difference_speed(t, delta) -> float:
    """Relative speed from the mean second difference of squared range.

    For constant relative velocity ``delta^2`` is quadratic with second
    derivative ``2 v^2``; the estimate is clamped at zero before the root.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(delta, dtype=float) ** 2
    if len(t) < 3:
        raise InsufficientData("need at least three epochs")
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    # second derivative on a possibly non-uniform grid
    d2 = 2 * (h1 * y[2:] - (h1 + h2) * y[1:-1] + h2 * y[:-2]) / (h1 * h2 * (h1 + h2))
    return math.sqrt(max(0.0, float(np.mean(d2)) / 2.0))


def mds_velocity_baseline(stream: RangeStream, t_ref: Optional[float] = None):
    """MDS tracks plus derivative-of-squared-range kinematics.

    For each pair the speed comes from :func:`second_difference_speed` and the
    radial term ``x.v`` from the end-to-end first difference of ``delta^2``
    (corrected for curvature with the speed estimate); the separation at
    ``t_ref`` is read off the aligned MDS tracks. Returns
    ``(pair_cp, speeds, tracks)``.
    """
    t = np.asarray(stream.t, dtype=float)
    if len(t) < 3:
        raise InsufficientData("need at least three epochs")
    t_ref = t[-1] if t_ref is None else t_ref
    tracks = mds_tracks(stream)
    k_ref = int(np.argmin(np.abs(t - t_ref)))
    ts, te = t[0] - t_ref, t[-1] - t_ref
    n = stream.n_nodes
    speeds, out = {}, {}
    for i in range(n):
        for j in range(i + 1, n):
            y = stream.delta[:, i, j] ** 2
            s = second_difference_speed(t, stream.delta[:, i, j])
            speeds[(i, j)] = s
            if s == 0:
                continue
            # y = a0 + a1 tau + v^2 tau^2  =>  a1 = mean slope - v^2 (ts + te)
            a1 = (y[-1] - y[0]) / (te - ts) - s * s * (ts + te)
            xv = 0.5 * a1
            sep2 = float(np.sum((tracks[k_ref, j] - tracks[k_ref, i]) ** 2))
            t_m = -xv / (s * s) + (t[k_ref] - t_ref)
            d_m = math.sqrt(max(0.0, sep2 - xv * xv / (s * s)))
            out[(i, j)] = CPParams(d_m, float(t_m), s)
    return out, speeds, tracks


def mds_window_cp(stream: RangeStream, t_ref: Optional[float] = None) -> PairCP:
    return mds_velocity_baseline(stream, t_ref)[0]
