"""Planar constant-velocity kinematics and collision-prediction (CP) parameters.

Vectors are plain ``numpy`` arrays of shape ``(2,)``. CP parameters are
defined for the relative state of agent B with respect to agent A:

* ``v``   relative speed,
* ``t_m`` time at which the separation is smallest (negative when receding),
* ``d_m`` that smallest separation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from .errors import NoCollision, ZeroRelativeSpeed


def vec2(x, y=None) -> np.ndarray:
    """Build a length-2 float array from ``(x, y)`` or a 2-sequence."""
    if y is None:
        out = np.asarray(x, dtype=float).reshape(2)
    else:
        out = np.array([x, y], dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite vector {out!r}")
    return out


def cross2(a, b) -> float:
    """z-component of the 2D cross product."""
    return float(a[0] * b[1] - a[1] * b[0])


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", vec2(self.position))
        object.__setattr__(self, "velocity", vec2(self.velocity))

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))

    def at(self, t: float) -> np.ndarray:
        return self.position + self.velocity * t

    def relative_to(self, other: "AgentState") -> "AgentState":
        """State of ``self`` as seen from ``other``."""
        return AgentState(self.position - other.position, self.velocity - other.velocity)


class CPParams(NamedTuple):
    d_m: float
    t_m: float
    v: float


@dataclass(frozen=True)
class BodyGeometry:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def contact_distance(self) -> float:
        return 2.0 * self.radius


def cp_params(rel: AgentState) -> CPParams:
    """CP parameters of a relative state.

    Uses the 2D identity ``|x|^2 |v|^2 - (x.v)^2 = (x cross v)^2`` so the
    radicand is non-negative by construction.
    """
    x, v = rel.position, rel.velocity
    vv = float(v @ v)
    if vv == 0.0:
        raise ZeroRelativeSpeed("relative velocity is zero")
    speed = math.sqrt(vv)
    t_m = -float(x @ v) / vv
    d_m = abs(cross2(x, v)) / speed
    return CPParams(d_m, t_m, speed)


def cp_params_from_vectors(x, v) -> CPParams:
    return cp_params(AgentState(x, v))


def collision_time(cp: CPParams, body: BodyGeometry) -> float:
    """First contact time of two equal spheres with the given CP parameters."""
    two_r = body.contact_distance
    # tangential contact (d_m == 2r) counts as a collision at t_m
    if cp.t_m <= 0 or cp.d_m > two_r:
        raise NoCollision(f"d_m={cp.d_m:.4g}, t_m={cp.t_m:.4g}")
    return cp.t_m - math.sqrt(two_r * two_r - cp.d_m * cp.d_m) / cp.v


def separation(rel: AgentState, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    p = rel.position[None, :] + np.multiply.outer(t.ravel(), rel.velocity)
    return np.hypot(p[:, 0], p[:, 1]).reshape(t.shape)


def min_distance_oracle(a: AgentState, b: AgentState, horizon: float,
                        dt: float) -> Tuple[float, float]:
    """Brute-force minimum separation over a sampled time grid on ``[0, horizon]``."""
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    n = int(math.floor(horizon / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    d = separation(b.relative_to(a), t)
    k = int(np.argmin(d))
    return float(d[k]), float(t[k])
