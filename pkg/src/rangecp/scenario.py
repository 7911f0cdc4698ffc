"""Trajectories, synthetic range measurements and ground-truth collision labels."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence

import numpy as np

from .kinematics import AgentState, BodyGeometry, vec2

DEFAULT_RANGE_RATE = 18.0
LABEL_RATE = 60.0
CONTACT_TOL = 1e-9


class RangeSample(NamedTuple):
    i: int
    j: int
    t: float
    delta: float


class RangeDiffSample(NamedTuple):
    tag: int
    anchor_a: int
    anchor_b: int
    t: float
    ddiff: float


class CollisionEvent(NamedTuple):
    pair: tuple
    t_start: float


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian measurement noise.

    ``mode`` selects where ``sigma`` enters for range differences:
    ``"per_range"`` perturbs every anchor distance independently (the
    difference then has variance ``2 sigma^2``), ``"per_difference"`` adds
    ``N(0, sigma^2)`` directly to each reported difference.
    """
    sigma: float = 0.1
    mode: str = "per_range"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.mode not in ("per_range", "per_difference"):
            raise ValueError(f"unknown noise mode {self.mode!r}")


class Trajectory:
    """Piecewise-linear 2D trajectories for a set of agents.

    Agent ``k`` is described by segment start times ``t0[k]`` (ascending,
    first entry 0), start positions ``p0[k]`` and constant velocities
    ``v[k]``.
    """

    def __init__(self, t0: Sequence[np.ndarray], p0: Sequence[np.ndarray],
                 v: Sequence[np.ndarray], duration: float):
        self.t0 = [np.asarray(a, dtype=float) for a in t0]
        self.p0 = [np.asarray(a, dtype=float).reshape(-1, 2) for a in p0]
        self.v = [np.asarray(a, dtype=float).reshape(-1, 2) for a in v]
        self.duration = float(duration)

    @classmethod
    def constant_velocity(cls, agents: Sequence[AgentState], duration: float) -> "Trajectory":
        return cls([np.zeros(1) for _ in agents],
                   [a.position[None, :] for a in agents],
                   [a.velocity[None, :] for a in agents], duration)

    @property
    def n_agents(self) -> int:
        return len(self.t0)

    def _segment_index(self, k: int, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.t0[k], t, side="right") - 1
        return np.clip(idx, 0, len(self.t0[k]) - 1)

    def positions(self, t) -> np.ndarray:
        """Positions at times ``t``; shape ``t.shape + (n_agents, 2)``."""
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty((flat.size, self.n_agents, 2))
        for k in range(self.n_agents):
            s = self._segment_index(k, flat)
            out[:, k, :] = self.p0[k][s] + self.v[k][s] * (flat - self.t0[k][s])[:, None]
        return out.reshape(t.shape + (self.n_agents, 2))

    def velocities(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty((flat.size, self.n_agents, 2))
        for k in range(self.n_agents):
            out[:, k, :] = self.v[k][self._segment_index(k, flat)]
        return out.reshape(t.shape + (self.n_agents, 2))

    def breakpoints(self) -> np.ndarray:
        """All segment start times of all agents inside ``(0, duration)``."""
        bp = np.unique(np.concatenate(self.t0))
        return bp[(bp > 0) & (bp < self.duration)]


@dataclass
class Scenario:
    agents: List[AgentState]
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    synch: Optional[np.ndarray] = None
    duration: float = 1.0
    sample_rate: float = DEFAULT_RANGE_RATE
    rng_seed: int = 0

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 2)
        if self.synch is not None:
            self.synch = vec2(self.synch)
        if len(self.agents) < 2:
            raise ValueError("a scenario needs at least two agents")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        m = len(self.anchors)
        for a in range(m):
            for b in range(a + 1, m):
                if np.hypot(*(self.anchors[a] - self.anchors[b])) < 1e-9:
                    raise ValueError("anchors must be pairwise distinct")

    def trajectory(self) -> Trajectory:
        return Trajectory.constant_velocity(self.agents, self.duration)

    def to_dict(self) -> dict:
        return {
            "agents": [{"position": a.position.tolist(), "velocity": a.velocity.tolist()}
                       for a in self.agents],
            "anchors": self.anchors.tolist(),
            "synch": None if self.synch is None else self.synch.tolist(),
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        agents = [AgentState(a["position"], a["velocity"]) for a in d["agents"]]
        return cls(agents, np.asarray(d.get("anchors", []), dtype=float).reshape(-1, 2),
                   d.get("synch"), float(d.get("duration", 1.0)),
                   float(d.get("sample_rate", DEFAULT_RANGE_RATE)), int(d.get("rng_seed", 0)))


def save_scenario(path, scenario: Scenario) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def _uniform_disk(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def _uniform_velocity(rng, n, max_speed):
    s = rng.uniform(0.0, max_speed, size=n)
    th = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([s * np.cos(th), s * np.sin(th)])


def gen_random_geometry(n_agents: int, n_anchors: int, rng_seed, radius: float = 50.0,
                        max_speed: float = 10.0, duration: float = 1.0,
                        sample_rate: float = DEFAULT_RANGE_RATE) -> Scenario:
    """Agents uniform in a disk with uniform speed/heading, anchors on its rim."""
    if n_agents < 2:
        raise ValueError("n_agents must be >= 2")
    rng = np.random.default_rng(rng_seed)
    pos = _uniform_disk(rng, n_agents, radius)
    vel = _uniform_velocity(rng, n_agents, max_speed)
    th = rng.uniform(0.0, 2 * np.pi, size=n_anchors)
    anchors = radius * np.column_stack([np.cos(th), np.sin(th)])
    agents = [AgentState(p, v) for p, v in zip(pos, vel)]
    seed = rng_seed if isinstance(rng_seed, (int, np.integer)) else 0
    return Scenario(agents, anchors, None, duration, sample_rate, int(seed))


def _draw_heading(rng, speed, normals, tries=1000):
    """Uniform heading with positive component along every normal."""
    normals = [n / np.linalg.norm(n) for n in normals]
    for _ in range(tries):
        th = rng.uniform(0.0, 2 * np.pi)
        u = np.array([math.cos(th), math.sin(th)])
        if all(u @ n > 1e-6 for n in normals):
            return speed * u
    s = np.sum(normals, axis=0)
    if np.linalg.norm(s) < 1e-12:
        s = normals[0]
    return speed * s / np.linalg.norm(s)


def gen_bounce_walk(n_agents: int, area: float = 7.0, speed: float = 0.5,
                    duration: float = 60.0, rng_seed=0, radius: float = 0.17,
                    initial: Optional[Sequence[AgentState]] = None,
                    max_events: int = 10_000_000) -> Trajectory:
    """Random bouncing walk inside a square ``[0, area]^2``.

    Agents move in straight lines at ``speed``. When an agent's body touches a
    wall, or two bodies touch (centers ``2*radius`` apart), each involved
    agent redraws its heading uniformly among directions pointing away from
    every obstruction it touches. Agent centers stay in
    ``[radius, area - radius]``.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(rng_seed)
    lo, hi = radius, area - radius
    two_r = 2 * radius
    if initial is None:
        p = np.empty((n_agents, 2))
        for k in range(n_agents):
            for _ in range(10_000):
                cand = rng.uniform(lo, hi, size=2)
                if all(np.linalg.norm(cand - p[m]) > two_r * 1.5 for m in range(k)):
                    break
            p[k] = cand
        th = rng.uniform(0.0, 2 * np.pi, size=n_agents)
        v = speed * np.column_stack([np.cos(th), np.sin(th)])
    else:
        p = np.array([a.position for a in initial], dtype=float)
        v = np.array([a.velocity for a in initial], dtype=float)
        n_agents = len(p)

    t0 = [[0.0] for _ in range(n_agents)]
    p0 = [[p[k].copy()] for k in range(n_agents)]
    v0 = [[v[k].copy()] for k in range(n_agents)]
    iu, ju = np.triu_indices(n_agents, 1)
    t = 0.0
    for _ in range(max_events):
        # time to next wall contact
        with np.errstate(divide="ignore", invalid="ignore"):
            tw = np.where(v > 0, (hi - p) / v, np.where(v < 0, (lo - p) / v, np.inf))
        dt = float(np.min(np.maximum(tw, 0.0))) if tw.size else np.inf
        # time to next body contact among approaching pairs
        dp = p[ju] - p[iu]
        dv = v[ju] - v[iu]
        pv = np.einsum("ij,ij->i", dp, dv)
        vv = np.einsum("ij,ij->i", dv, dv)
        pp = np.einsum("ij,ij->i", dp, dp)
        disc = pv * pv - vv * (pp - two_r * two_r)
        ok = (pv < 0) & (disc >= 0) & (vv > 0)
        if np.any(ok):
            s = (-pv[ok] - np.sqrt(disc[ok])) / vv[ok]
            dt = min(dt, float(np.min(np.maximum(s, 0.0))))
        dt = min(dt, duration - t)
        p = p + v * dt
        t += dt
        if t >= duration - 1e-12:
            break
        touching = {k: [] for k in range(n_agents)}
        for k in range(n_agents):
            for ax in range(2):
                if p[k, ax] <= lo + 1e-9 and v[k, ax] <= 0:
                    n = np.zeros(2); n[ax] = 1.0
                    touching[k].append(n)
                elif p[k, ax] >= hi - 1e-9 and v[k, ax] >= 0:
                    n = np.zeros(2); n[ax] = -1.0
                    touching[k].append(n)
        dp = p[ju] - p[iu]
        dv = v[ju] - v[iu]
        close = (np.hypot(dp[:, 0], dp[:, 1]) <= two_r + 1e-9) & (np.einsum("ij,ij->i", dp, dv) <= 0)
        for a, b, d in zip(iu[close], ju[close], dp[close]):
            touching[a].append(-d)
            touching[b].append(d.copy())
        involved = [k for k in range(n_agents) if touching[k]]
        if not involved:
            continue
        for k in involved:
            # every body/wall currently in contact constrains the new heading
            normals = list(touching[k])
            for m in range(n_agents):
                if m != k and np.linalg.norm(p[k] - p[m]) <= two_r + 1e-9:
                    d = p[k] - p[m]
                    if not any(np.allclose(d / np.linalg.norm(d), n / np.linalg.norm(n)) for n in normals):
                        normals.append(d)
            for ax in range(2):
                if p[k, ax] <= lo + 1e-9:
                    n = np.zeros(2); n[ax] = 1.0; normals.append(n)
                elif p[k, ax] >= hi - 1e-9:
                    n = np.zeros(2); n[ax] = -1.0; normals.append(n)
            v[k] = _draw_heading(rng, speed, normals)
            t0[k].append(t)
            p0[k].append(p[k].copy())
            v0[k].append(v[k].copy())
    return Trajectory([np.array(a) for a in t0], [np.array(a) for a in p0],
                      [np.array(a) for a in v0], duration)


def sample_times(duration: float, rate: float) -> np.ndarray:
    if rate <= 0:
        raise ValueError("rate must be positive")
    n = int(math.floor(duration * rate + 1e-9)) + 1
    return np.arange(n) / rate


class RangeStream:
    """Synchronous pairwise ranges: ``delta[e, i, j]`` at time ``t[e]``."""

    def __init__(self, t: np.ndarray, delta: np.ndarray):
        self.t = np.asarray(t, dtype=float)
        self.delta = np.asarray(delta, dtype=float)

    @property
    def n_nodes(self) -> int:
        return self.delta.shape[1]

    def pair(self, i: int, j: int):
        return self.t, self.delta[:, i, j]

    def window(self, start: int, stop: int) -> "RangeStream":
        return RangeStream(self.t[start:stop], self.delta[start:stop])

    def samples(self) -> Iterator[RangeSample]:
        n = self.n_nodes
        for e, t in enumerate(self.t):
            for i in range(n):
                for j in range(i + 1, n):
                    yield RangeSample(i, j, float(t), float(self.delta[e, i, j]))


class RangeDiffStream:
    """Range differences referenced to anchor 0.

    ``ddiff[e, tag, m - 1]`` is ``D_m - D_0`` (plus noise) for anchors
    ``m = 1..M-1``.
    """

    def __init__(self, t: np.ndarray, ddiff: np.ndarray):
        self.t = np.asarray(t, dtype=float)
        self.ddiff = np.asarray(ddiff, dtype=float)

    def samples(self) -> Iterator[RangeDiffSample]:
        _, n_tags, m1 = self.ddiff.shape
        for e, t in enumerate(self.t):
            for tag in range(n_tags):
                for m in range(m1):
                    yield RangeDiffSample(tag, m + 1, 0, float(t), float(self.ddiff[e, tag, m]))


def true_distances(traj: Trajectory, t) -> np.ndarray:
    """Pairwise center distances at times ``t``; shape ``(len(t), N, N)``."""
    p = traj.positions(np.asarray(t, dtype=float))
    diff = p[:, :, None, :] - p[:, None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def synth_pairwise_ranges(traj: Trajectory, noise: NoiseModel, rate: float = DEFAULT_RANGE_RATE,
                          rng=None, t: Optional[np.ndarray] = None) -> RangeStream:
    """Noisy symmetric pairwise ranges; one i.i.d. draw per unordered pair per epoch."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    rng = np.random.default_rng(rng)
    t = sample_times(traj.duration, rate) if t is None else np.asarray(t, dtype=float)
    d = true_distances(traj, t)
    n = traj.n_agents
    iu, ju = np.triu_indices(n, 1)
    w = rng.normal(0.0, 1.0, size=(len(t), len(iu))) * noise.sigma
    delta = d.copy()
    delta[:, iu, ju] += w
    delta[:, ju, iu] = delta[:, iu, ju]
    return RangeStream(t, delta)


def synth_anchor_rangediffs(traj: Trajectory, anchors, synch, noise: NoiseModel,
                            rate: float = DEFAULT_RANGE_RATE, rng=None,
                            t: Optional[np.ndarray] = None) -> RangeDiffStream:
    """Noisy tag-to-anchor range differences referenced to anchor 0.

    ``synch`` is accepted for interface symmetry with the protocol
    simulator; the direct model here does not depend on it.
    """
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    if len(anchors) < 2:
        raise ValueError("need at least two anchors")
    rng = np.random.default_rng(rng)
    t = sample_times(traj.duration, rate) if t is None else np.asarray(t, dtype=float)
    p = traj.positions(t)
    diff = p[:, :, None, :] - anchors[None, None, :, :]
    D = np.hypot(diff[..., 0], diff[..., 1])
    if noise.mode == "per_range":
        D = D + rng.normal(0.0, 1.0, size=D.shape) * noise.sigma
        ddiff = D[:, :, 1:] - D[:, :, :1]
    else:
        ddiff = D[:, :, 1:] - D[:, :, :1]
        ddiff = ddiff + rng.normal(0.0, 1.0, size=ddiff.shape) * noise.sigma
    return RangeDiffStream(t, ddiff)


def _segment_min_dist(p0, dv, h):
    """Min of ``|p0 + dv*s|`` for ``s`` in ``[0, h]``, vectorized over leading axes."""
    vv = np.einsum("...k,...k->...", dv, dv)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(vv > 0, -np.einsum("...k,...k->...", p0, dv) / vv, 0.0)
    s = np.clip(s, 0.0, h)
    q = p0 + dv * s[..., None]
    return np.hypot(q[..., 0], q[..., 1])


def _first_contact(p0, dv, dist):
    """Smallest ``s >= 0`` with ``|p0 + dv*s| <= dist`` (rows known to touch)."""
    pp = np.einsum("...k,...k->...", p0, p0)
    pv = np.einsum("...k,...k->...", p0, dv)
    vv = np.einsum("...k,...k->...", dv, dv)
    disc = np.maximum(pv * pv - vv * (pp - dist * dist), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(vv > 0, (-pv - np.sqrt(disc)) / vv, 0.0)
    return np.where(pp <= dist * dist, 0.0, np.maximum(s, 0.0))


def label_collisions(traj: Trajectory, body: BodyGeometry,
                     rate: float = LABEL_RATE) -> List[CollisionEvent]:
    """One event per contiguous run of sample steps in which a pair is in contact.

    A step ``[t_k, t_k+1)`` on the ``rate`` grid is in contact when the exact
    continuous minimum separation inside it is ``<= 2r`` (with a 1e-9 m
    tolerance, since bouncing bodies only touch). Trajectory breakpoints are
    honoured, so brief touches between samples are not missed. ``t_start``
    is the exact first instant of contact inside the run's first step, so
    it never precedes the physical contact.
    """
    if rate < LABEL_RATE:
        raise ValueError(f"labeling rate must be >= {LABEL_RATE} Hz")
    grid = sample_times(traj.duration, rate)
    fine = np.union1d(grid, traj.breakpoints())
    fine = fine[fine <= traj.duration]
    n = traj.n_agents
    iu, ju = np.triu_indices(n, 1)
    p = traj.positions(fine)
    h = np.diff(fine)
    vmid = traj.velocities(fine[:-1] + 0.5 * h) if len(h) else np.zeros((0, n, 2))
    rel_p = p[:-1, ju] - p[:-1, iu]
    rel_v = vmid[:, ju] - vmid[:, iu]
    dmin = _segment_min_dist(rel_p, rel_v, h[:, None])
    # last sample point on its own
    last = p[-1, ju] - p[-1, iu]
    step_of = np.searchsorted(grid, fine[:-1], side="right") - 1
    contact = np.zeros((len(grid), len(iu)), dtype=bool)
    hit = dmin <= body.contact_distance + CONTACT_TOL
    np.logical_or.at(contact, step_of, hit)
    contact[-1] |= np.hypot(last[:, 0], last[:, 1]) <= body.contact_distance + CONTACT_TOL
    # earliest contact instant inside every fine interval that has one
    first = np.full(hit.shape, np.inf)
    k, c = np.nonzero(hit)
    first[k, c] = fine[k] + _first_contact(rel_p[k, c], rel_v[k, c],
                                           body.contact_distance + CONTACT_TOL)
    step_first = np.full(contact.shape, np.inf)
    np.minimum.at(step_first, step_of, first)
    step_first[-1] = np.where(np.isinf(step_first[-1]) & contact[-1], grid[-1], step_first[-1])
    events = []
    for c, (i, j) in enumerate(zip(iu, ju)):
        col = contact[:, c]
        starts = np.flatnonzero(col & ~np.concatenate([[False], col[:-1]]))
        events.extend(CollisionEvent((int(i), int(j)), float(min(step_first[s, c], traj.duration)))
                      for s in starts)
    events.sort(key=lambda e: (e.t_start, e.pair))
    return events


def write_ranges_csv(path, stream: RangeStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "j", "delta"])
        for s in stream.samples():
            w.writerow([f"{s.t:.9g}", s.i, s.j, f"{s.delta:.9g}"])


def write_rangediffs_csv(path, stream: RangeDiffStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "tag", "a", "b", "ddiff"])
        for s in stream.samples():
            w.writerow([f"{s.t:.9g}", s.tag, s.anchor_a, s.anchor_b, f"{s.ddiff:.9g}"])


def read_ranges_csv(path) -> List[RangeSample]:
    with open(path, newline="") as fh:
        return [RangeSample(int(r["i"]), int(r["j"]), float(r["t"]), float(r["delta"]))
                for r in csv.DictReader(fh)]


def read_rangediffs_csv(path) -> List[RangeDiffSample]:
    with open(path, newline="") as fh:
        return [RangeDiffSample(int(r["tag"]), int(r["a"]), int(r["b"]), float(r["t"]),
                                float(r["ddiff"])) for r in csv.DictReader(fh)]
