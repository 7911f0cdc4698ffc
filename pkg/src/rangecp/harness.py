"""Collision detection, ROC / RMSE experiments and the configuration runner."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .crlb import (BoundSweepConfig, PairState, SamplingPlan, anchor_bounds, bound_sweep,
                   friend_bounds, pairwise_bounds, write_bounds_csv)
from .errors import (ConfigError, DegenerateGeometry, NoEvents, NonIdentifiable, RangeCPError,
                     ZeroRelativeSpeed)
from .estimators import mds_window_cp, pairwise_window_cp, tdoa_window_cp
from .fact import FactConfig, fact_track, fact_window, write_pair_cp_csv, write_tracks_csv
from .fact import aligned_mds_initialization, constant_velocity_fit
from .kinematics import BodyGeometry, CPParams, cp_params_from_vectors
from .scenario import (CollisionEvent, NoiseModel, RangeDiffStream, RangeStream, Trajectory,
                       gen_bounce_walk, gen_random_geometry, label_collisions, sample_times,
                       save_scenario, synth_anchor_rangediffs, synth_pairwise_ranges,
                       write_rangediffs_csv, write_ranges_csv)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
PairCP = Dict[Tuple[int, int], CPParams]


# ---------------------------------------------------------------------------
# Detection


@dataclass(frozen=True)
class DetectorConfig:
    tau: float = 1.0
    two_r: float = 0.34
    eps_t: float = 0.0   # margin on d_m (m)
    eps_d: float = 0.0   # margin on t_m (s)

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.two_r <= 0:
            raise ValueError("two_r must be positive")


class Alarm(NamedTuple):
    pair: Tuple[int, int]
    t_raised: float


class RocPoint(NamedTuple):
    pfa: float
    pd: float
    eps_t: float
    eps_d: float
    detected: int = 0
    n_events: int = 0
    false_alarms: int = 0
    negatives: int = 0


def detect(cp: CPParams, cfg: DetectorConfig) -> bool:
    """Alarm when the pair passes within ``2r + eps_t`` and contact is due within the horizon."""
    d_m, t_m, v = cp
    if not d_m < cfg.two_r + cfg.eps_t:
        return False
    extra = math.sqrt(max(0.0, cfg.two_r ** 2 - d_m ** 2)) / v if v > 0 else 0.0
    return 0.0 < t_m < cfg.tau + extra + cfg.eps_d


class CPTrack(NamedTuple):
    """CP estimates at decision epochs: ``values[e, p] = (d_m, t_m, v)``, NaN when absent."""
    t: np.ndarray
    pairs: List[Tuple[int, int]]
    values: np.ndarray

    @classmethod
    def from_estimates(cls, times, estimates: Sequence[PairCP], n_nodes: int) -> "CPTrack":
        pairs = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
        vals = np.full((len(times), len(pairs), 3), np.nan)
        for e, est in enumerate(estimates):
            for q, p in enumerate(pairs):
                if p in est:
                    vals[e, q] = est[p]
        return cls(np.asarray(times, dtype=float), pairs, vals)


def alarm_grid(track: CPTrack, eps_t, eps_d, tau: float = 1.0, two_r: float = 0.34) -> np.ndarray:
    """Boolean alarms of shape ``(len(eps_t), len(eps_d), E, P)``; missing estimates never alarm."""
    eps_t = np.asarray(eps_t, dtype=float)
    eps_d = np.asarray(eps_d, dtype=float)
    dm, tm, v = np.moveaxis(track.values, -1, 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        extra = np.where(dm < two_r, np.sqrt(np.maximum(0.0, two_r ** 2 - dm ** 2)) / v, 0.0)
        near = dm[None] < two_r + eps_t[:, None, None]
        soon = (tm > 0)[None] & (tm[None] < (tau + extra)[None] + eps_d[:, None, None])
    return near[:, None] & soon[None, :]


def _labels(track: CPTrack, events: Sequence[CollisionEvent], lookahead: float,
            duration: Optional[float]):
    """Positive mask, usable-negative mask and per-event decision masks."""
    E, P = track.values.shape[:2]
    index = {p: q for q, p in enumerate(track.pairs)}
    pos = np.zeros((E, P), dtype=bool)
    per_event = []
    for ev in events:
        if ev.pair not in index or ev.t_start < track.t[0]:
            continue  # no decision could precede it
        q = index[ev.pair]
        m = (track.t >= ev.t_start - lookahead) & (track.t <= ev.t_start)
        pos[m, q] = True
        per_event.append((q, np.flatnonzero(m)))
    neg = ~pos
    if duration is not None:
        # the look-ahead of late decisions runs past the data: cannot call them negative
        neg &= (track.t + lookahead <= duration)[:, None]
    return pos, neg, per_event


def roc_points(track: CPTrack, events: Sequence[CollisionEvent], eps_t, eps_d,
               tau: float = 1.0, two_r: float = 0.34, lookahead: float = 3.0,
               duration: Optional[float] = None) -> List[RocPoint]:
    """Score every ``(eps_t, eps_d)`` cell.

    PD is the fraction of events with at least one alarm for their pair at a
    decision epoch in ``[t_start - H, t_start]``. PFA is the fraction of
    negative pair-epochs (no event for the pair in ``[t, t + H]``) that
    alarm. Events before the first decision epoch are not scored.
    """
    pos, neg, per_event = _labels(track, events, lookahead, duration)
    if not per_event:
        raise NoEvents("no scorable collision events")
    alarms = alarm_grid(track, eps_t, eps_d, tau, two_r)
    det = np.zeros(alarms.shape[:2], dtype=int)
    for q, idx in per_event:
        det += alarms[:, :, idx, q].any(axis=-1)
    fa = (alarms & neg).sum(axis=(-2, -1))
    n_neg = int(neg.sum())
    n_ev = len(per_event)
    out = []
    for a, et in enumerate(np.asarray(eps_t, dtype=float)):
        for b, ed in enumerate(np.asarray(eps_d, dtype=float)):
            out.append(RocPoint(fa[a, b] / n_neg if n_neg else 0.0, det[a, b] / n_ev,
                                float(et), float(ed), int(det[a, b]), n_ev, int(fa[a, b]), n_neg))
    return out


def pareto_frontier(points: Sequence[RocPoint]) -> List[RocPoint]:
    """Non-dominated points (lower PFA, higher PD), sorted by PFA with PD increasing."""
    order = sorted(points, key=lambda p: (p.pfa, -p.pd))
    front, best = [], -1.0
    for p in order:
        if p.pd > best:
            front.append(p)
            best = p.pd
    return front


def roc_curve(track: CPTrack, events, eps_t=None, eps_d=None, **kw) -> List[RocPoint]:
    eps_t = default_eps_t() if eps_t is None else eps_t
    eps_d = default_eps_d() if eps_d is None else eps_d
    return pareto_frontier(roc_points(track, events, eps_t, eps_d, **kw))


def pd_at_pfa(frontier: Sequence[RocPoint], level: float) -> float:
    return max((p.pd for p in frontier if p.pfa <= level + 1e-12), default=0.0)


def smooth_for_display(frontier: Sequence[RocPoint], frac: float = 0.5) -> np.ndarray:
    """LOWESS-smoothed ``(pfa, pd)`` for plotting only."""
    from statsmodels.nonparametric.smoothers_lowess import lowess
    pfa = np.array([p.pfa for p in frontier])
    pd = np.array([p.pd for p in frontier])
    if len(pfa) < 3:
        return np.column_stack([pfa, pd])
    return lowess(pd, pfa, frac=frac, return_sorted=True)


def _grid(start: float, stop: float, step: float) -> np.ndarray:
    return np.round(np.arange(start, stop + step / 2, step), 10)


def default_eps_t() -> np.ndarray:
    return _grid(-0.2, 2.0, 0.05)


def default_eps_d() -> np.ndarray:
    # starts below -0.5 so a perfect estimator can keep a zero-false-alarm point
    return _grid(-0.9, 4.0, 0.1)


# ---------------------------------------------------------------------------
# Shared estimation helpers

METHODS = ("fact", "pairwise", "mds", "tdoa")


def truth_cp(traj: Trajectory, t: float) -> PairCP:
    P, V = traj.positions(t), traj.velocities(t)
    n = len(P)
    out = {}
    for i in range(n):
        for j in range(i + 1, n):
            v = V[j] - V[i]
            if float(v @ v) > 0:
                out[(i, j)] = cp_params_from_vectors(P[j] - P[i], v)
    return out


def window_estimates(method: str, stream: RangeStream, diffs: Optional[RangeDiffStream],
                     anchors, fact_cfg: FactConfig) -> PairCP:
    """CP estimates of one window, ``t_m`` measured from its last epoch."""
    if method == "pairwise":
        return pairwise_window_cp(stream)
    if method == "mds":
        return mds_window_cp(stream)
    if method == "tdoa":
        return tdoa_window_cp(diffs, anchors)
    if method == "fact":
        X0 = constant_velocity_fit(stream.t, stream.delta,
                                   aligned_mds_initialization(stream.delta, stream.t))
        return fact_window(stream.t, stream.delta, X0, fact_cfg).pair_cp
    raise ValueError(f"unknown method {method!r}")


_BOUND_MODEL = {"fact": "friend", "pairwise": "pairwise", "mds": "pairwise", "tdoa": "anchor"}


def _unit_bounds(sc, t) -> Dict[str, Dict[Tuple[int, int], Tuple[float, float]]]:
    """Unit-sigma (t_m, d_m) bounds per model and pair, on the window's sampling plan."""
    plan = SamplingPlan(np.asarray(t, dtype=float) - t[-1], 1.0)
    pos = np.array([a.position for a in sc.agents]) + np.array([a.velocity for a in sc.agents]) * t[-1]
    vel = np.array([a.velocity for a in sc.agents])
    n = len(pos)
    out = {"pairwise": {}, "anchor": {}, "friend": {}}
    for i in range(n):
        for j in range(i + 1, n):
            pair = PairState(pos[i], pos[j], vel[i], vel[j])
            others = [k for k in range(n) if k not in (i, j)]
            for model, fn in (("pairwise", lambda: pairwise_bounds(pair, plan)),
                              ("anchor", lambda: anchor_bounds(pair, sc.anchors, plan)),
                              ("friend", lambda: friend_bounds(pair, (pos[others], vel[others]),
                                                               plan))):
                try:
                    b = fn()
                    out[model][(i, j)] = (b.std_tm, b.std_dm)
                except (NonIdentifiable, DegenerateGeometry, ZeroRelativeSpeed):
                    out[model][(i, j)] = (math.inf, math.inf)
    return out


# ---------------------------------------------------------------------------
# RMSE sweep


@dataclass
class RmseConfig:
    sigma_grid: Sequence[float] = (0.05, 0.1, 0.2, 0.4)
    trials: int = 30
    geometries: int = 30
    n_agents: int = 6
    n_anchors: int = 4
    window: int = 18
    rate: float = 18.0
    radius: float = 50.0
    max_speed: float = 10.0
    tdoa_noise: str = "per_range"
    r: float = 1.0
    methods: Sequence[str] = METHODS
    seed: int = 0


class RmseRow(NamedTuple):
    sigma: float
    method: str
    rmse_tm: float
    rmse_dm: float
    n: int
    failures: int
    crlb_tm: float
    crlb_dm: float


def rmse_sweep(cfg: RmseConfig) -> List[RmseRow]:
    """RMSE of ``t_m`` and ``d_m`` per method and noise level.

    Each trial is one window of ``cfg.window`` epochs on a random
    constant-velocity geometry; ``t_m`` is referenced to the window's last
    epoch. Errors are pooled over all pairs for which every method produced
    an estimate, so methods are compared on identical cases; pairs a method
    could not estimate are counted in ``failures``. ``crlb_*`` is the RMS of
    the finite bounds of the matching measurement model (friend for FACT,
    anchor for TDOA, pairwise otherwise) over the same cases.
    """
    methods = list(cfg.methods)
    fact_cfg = FactConfig(r=cfg.r, window=cfg.window)
    t = np.arange(cfg.window) / cfg.rate
    ns = len(cfg.sigma_grid)
    sq = {(k, m): [0.0, 0.0, 0] for k in range(ns) for m in methods}
    fails = {(k, m): 0 for k in range(ns) for m in methods}
    bnd = {(k, m): [0.0, 0.0, 0, 0] for k in range(ns) for m in methods}
    for g in range(cfg.geometries):
        sc = gen_random_geometry(cfg.n_agents, cfg.n_anchors, [cfg.seed, g], cfg.radius,
                                 cfg.max_speed, duration=float(t[-1]), sample_rate=cfg.rate)
        traj = Trajectory.constant_velocity(sc.agents, float(t[-1]))
        truth = truth_cp(traj, float(t[-1]))
        unit = _unit_bounds(sc, t)
        for k, sigma in enumerate(cfg.sigma_grid):
            for trial in range(cfg.trials):
                rng = np.random.default_rng([cfg.seed, g, trial, k])
                stream = synth_pairwise_ranges(traj, NoiseModel(sigma), cfg.rate, rng, t)
                diffs = synth_anchor_rangediffs(traj, sc.anchors, sc.synch,
                                                NoiseModel(sigma, cfg.tdoa_noise), cfg.rate, rng, t)
                est = {}
                for m in methods:
                    try:
                        est[m] = window_estimates(m, stream, diffs, sc.anchors, fact_cfg)
                    except RangeCPError:
                        est[m] = {}
                for p, tr in truth.items():
                    have = [p in est[m] for m in methods]
                    for m, h in zip(methods, have):
                        fails[(k, m)] += not h
                    if not all(have):
                        continue
                    for m in methods:
                        e = est[m][p]
                        acc = sq[(k, m)]
                        acc[0] += (e.t_m - tr.t_m) ** 2
                        acc[1] += (e.d_m - tr.d_m) ** 2
                        acc[2] += 1
                        b_tm, b_dm = unit[_BOUND_MODEL[m]][p]
                        bb = bnd[(k, m)]
                        if math.isfinite(b_tm) and math.isfinite(b_dm):
                            bb[0] += (sigma * b_tm) ** 2
                            bb[1] += (sigma * b_dm) ** 2
                            bb[2] += 1
    rows = []
    for k, sigma in enumerate(cfg.sigma_grid):
        for m in methods:
            s_tm, s_dm, n = sq[(k, m)]
            b_tm, b_dm, nb, _ = bnd[(k, m)]
            rows.append(RmseRow(float(sigma), m,
                                math.sqrt(s_tm / n) if n else math.nan,
                                math.sqrt(s_dm / n) if n else math.nan, n, fails[(k, m)],
                                math.sqrt(b_tm / nb) if nb else math.nan,
                                math.sqrt(b_dm / nb) if nb else math.nan))
    return rows


def write_rmse_csv(path, rows: Sequence[RmseRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RmseRow._fields)
        for r in rows:
            w.writerow([f"{r.sigma:.9g}", r.method, f"{r.rmse_tm:.9g}", f"{r.rmse_dm:.9g}", r.n,
                        r.failures, f"{r.crlb_tm:.9g}", f"{r.crlb_dm:.9g}"])


# ---------------------------------------------------------------------------
# ROC experiment


@dataclass
class RocConfig:
    duration: float = 600.0
    n_agents: int = 6
    area: float = 7.0
    speed: float = 0.5
    radius: float = 0.17
    rate: float = 18.0
    window: int = 18
    sigma_two_way: float = 0.08
    sigma_tdoa: float = 0.17
    tdoa_noise: str = "per_difference"
    anchors: Optional[Sequence[Sequence[float]]] = None   # default: area corners
    tau: float = 1.0
    lookahead: float = 3.0
    eps_t_grid: Sequence[float] = (-0.2, 2.0, 0.05)      # start, stop, step
    eps_d_grid: Sequence[float] = (-0.9, 4.0, 0.1)
    r: float = 1.0
    methods: Sequence[str] = ("fact", "pairwise", "mds", "tdoa", "truth")
    seed: int = 0


class RocResult(NamedTuple):
    frontiers: Dict[str, List[RocPoint]]
    events: List[CollisionEvent]
    tracks: Dict[str, CPTrack]


def roc_experiment(cfg: RocConfig) -> RocResult:
    """Bounce-walk scenario scored for every method on one shared data set.

    Estimators decide once per window (at its last epoch) from that
    window's data; FACT tracks across windows. ``truth`` feeds the true
    CP parameters at every sample epoch.
    """
    traj = gen_bounce_walk(cfg.n_agents, cfg.area, cfg.speed, cfg.duration, [cfg.seed, 0],
                           cfg.radius)
    events = label_collisions(traj, BodyGeometry(cfg.radius))
    if not events:
        raise NoEvents("scenario produced no collisions")
    anchors = (np.array([[0, 0], [cfg.area, 0], [cfg.area, cfg.area], [0, cfg.area]], float)
               if cfg.anchors is None else np.asarray(cfg.anchors, dtype=float))
    t = sample_times(cfg.duration, cfg.rate)
    stream = synth_pairwise_ranges(traj, NoiseModel(cfg.sigma_two_way), cfg.rate,
                                   np.random.default_rng([cfg.seed, 1]), t)
    diffs = synth_anchor_rangediffs(traj, anchors, None, NoiseModel(cfg.sigma_tdoa, cfg.tdoa_noise),
                                    cfg.rate, np.random.default_rng([cfg.seed, 2]), t)
    T = cfg.window
    starts = list(range(0, len(t) - T + 1, T))
    ends = np.array([t[s + T - 1] for s in starts])
    fact_cfg = FactConfig(r=cfg.r, window=T)
    tracks = {}
    for m in cfg.methods:
        if m == "truth":
            tracks[m] = CPTrack.from_estimates(t, [truth_cp(traj, float(x)) for x in t],
                                               cfg.n_agents)
            continue
        if m == "fact":
            est = [w.pair_cp for w in fact_track(stream, fact_cfg)]
        else:
            est = []
            for s in starts:
                sl = slice(s, s + T)
                try:
                    est.append(window_estimates(m, stream.window(s, s + T),
                                                RangeDiffStream(diffs.t[sl], diffs.ddiff[sl]),
                                                anchors, fact_cfg))
                except RangeCPError:
                    est.append({})
        tracks[m] = CPTrack.from_estimates(ends, est, cfg.n_agents)
    et, ed = _grid(*cfg.eps_t_grid), _grid(*cfg.eps_d_grid)
    fronts = {m: pareto_frontier(roc_points(tr, events, et, ed, cfg.tau, 2 * cfg.radius,
                                            cfg.lookahead, cfg.duration))
              for m, tr in tracks.items()}
    return RocResult(fronts, events, tracks)


def write_roc_csv(path, frontiers: Dict[str, List[RocPoint]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "pfa", "pd", "eps_t", "eps_d", "detected", "events",
                    "false_alarms", "negatives"])
        for m, pts in frontiers.items():
            for p in pts:
                w.writerow([m, f"{p.pfa:.9g}", f"{p.pd:.9g}", f"{p.eps_t:.9g}", f"{p.eps_d:.9g}",
                            p.detected, p.n_events, p.false_alarms, p.negatives])


# ---------------------------------------------------------------------------
# Configuration runner


@dataclass
class SimulateConfig:
    kind: str = "random"          # random | bounce
    n_agents: int = 6
    n_anchors: int = 4
    duration: float = 10.0
    rate: float = 18.0
    sigma: float = 0.1
    noise_mode: str = "per_range"
    area: float = 7.0
    speed: float = 0.5
    radius: float = 0.17
    fact: bool = True
    window: int = 18
    r: float = 1.0
    seed: int = 0


@dataclass
class ProtocolTraceConfig:
    n_nodes: int = 6
    cycles: int = 100
    slot_length: float = 1e-3
    sync_period_cycles: int = 100
    mode: str = "two_way"
    n_anchors: int = 4
    timestamp_noise_std: Optional[float] = None
    offset_std: float = 1e-3
    sync_residual_ppm: float = 0.1
    max_freq_error_ppm: float = 100.0
    legacy_indexing: bool = False
    radius: float = 50.0
    max_speed: float = 10.0
    seed: int = 0


CONFIG_TYPES = {
    "bounds": (BoundSweepConfig, ("sigma_grid",)),
    "simulate": (SimulateConfig, ("kind",)),
    "protocol-trace": (ProtocolTraceConfig, ("n_nodes",)),
    "roc": (RocConfig, ("duration",)),
    "rmse": (RmseConfig, ("sigma_grid",)),
}


def build_config(command: str, params: dict):
    """Validate a parameter mapping against the command's config type."""
    if command not in CONFIG_TYPES:
        raise ConfigError(f"unknown command {command!r}")
    cls, required = CONFIG_TYPES[command]
    names = {f.name for f in dataclasses.fields(cls)}
    for key in params:
        if key not in names:
            raise ConfigError(f"unknown field {key!r} for {command}")
    for key in required:
        if key not in params:
            raise ConfigError(f"missing required field {key!r} for {command}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"rangecp": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _run_bounds(cfg: BoundSweepConfig, out: Path) -> List[str]:
    write_bounds_csv(out / "bounds.csv", bound_sweep(cfg))
    return ["bounds.csv"]


def _run_rmse(cfg: RmseConfig, out: Path) -> List[str]:
    write_rmse_csv(out / "rmse.csv", rmse_sweep(cfg))
    return ["rmse.csv"]


def _run_roc(cfg: RocConfig, out: Path) -> List[str]:
    res = roc_experiment(cfg)
    write_roc_csv(out / "roc.csv", res.frontiers)
    with open(out / "roc_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "events", "pd_at_pfa_0", "pd_at_pfa_0.01", "pd_at_pfa_0.05"])
        for m, f in res.frontiers.items():
            w.writerow([m, len(res.events)] + [f"{pd_at_pfa(f, a):.9g}" for a in (0.0, 0.01, 0.05)])
    return ["roc.csv", "roc_summary.csv"]


def _write_events(path, events) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_start", "i", "j"])
        for ev in events:
            w.writerow([f"{ev.t_start:.9g}", ev.pair[0], ev.pair[1]])


def _run_simulate(cfg: SimulateConfig, out: Path) -> List[str]:
    files = []
    if cfg.kind == "random":
        sc = gen_random_geometry(cfg.n_agents, cfg.n_anchors, cfg.seed, duration=cfg.duration,
                                 sample_rate=cfg.rate)
        save_scenario(out / "scenario.json", sc)
        files.append("scenario.json")
        traj = Trajectory.constant_velocity(sc.agents, cfg.duration)
        anchors = sc.anchors
    elif cfg.kind == "bounce":
        traj = gen_bounce_walk(cfg.n_agents, cfg.area, cfg.speed, cfg.duration, cfg.seed,
                               cfg.radius)
        corners = np.array([[0, 0], [cfg.area, 0], [cfg.area, cfg.area], [0, cfg.area]], float)
        anchors = corners[:min(cfg.n_anchors, 4)]
    else:
        raise ConfigError(f"unknown scenario kind {cfg.kind!r}")
    rng = np.random.default_rng([cfg.seed, 1])
    stream = synth_pairwise_ranges(traj, NoiseModel(cfg.sigma), cfg.rate, rng)
    write_ranges_csv(out / "ranges.csv", stream)
    files.append("ranges.csv")
    if len(anchors) >= 2:
        diffs = synth_anchor_rangediffs(traj, anchors, None, NoiseModel(cfg.sigma, cfg.noise_mode),
                                        cfg.rate, rng)
        write_rangediffs_csv(out / "rangediffs.csv", diffs)
        files.append("rangediffs.csv")
    _write_events(out / "events.csv", label_collisions(traj, BodyGeometry(cfg.radius)))
    files.append("events.csv")
    if cfg.fact and len(stream.t) >= cfg.window:
        res = fact_track(stream, FactConfig(r=cfg.r, window=cfg.window))
        write_tracks_csv(out / "tracks.csv", res)
        write_pair_cp_csv(out / "fact_cp.csv", res)
        files += ["tracks.csv", "fact_cp.csv"]
    return files


def _run_protocol(cfg: ProtocolTraceConfig, out: Path) -> List[str]:
    from .protocol import (ProtocolConfig, range_diffs_from_log, ranges_from_log, run_cycles,
                           write_trace_csv)
    n = cfg.n_nodes
    kw = dict(n_nodes=n, slot_length=cfg.slot_length, cycles=cfg.cycles,
              sync_period_cycles=cfg.sync_period_cycles, mode=cfg.mode,
              offset_std=cfg.offset_std, sync_residual_ppm=cfg.sync_residual_ppm,
              max_freq_error_ppm=cfg.max_freq_error_ppm, legacy_indexing=cfg.legacy_indexing)
    if cfg.timestamp_noise_std is not None:
        kw["timestamp_noise_std"] = cfg.timestamp_noise_std
    n_anchors = cfg.n_anchors if cfg.mode == "tdoa" else 0
    if cfg.mode == "tdoa":
        kw["anchors"] = tuple(range(n, n + n_anchors))
        kw["synch"] = n + n_anchors
    pcfg = ProtocolConfig(**kw)
    pcfg.validate()
    sc = gen_random_geometry(max(n, 2), n_anchors, cfg.seed, cfg.radius, cfg.max_speed)
    P0 = np.array([a.position for a in sc.agents])[:n]
    V = np.array([a.velocity for a in sc.agents])[:n]
    fixed = np.vstack([sc.anchors, np.zeros((1, 2))]) if cfg.mode == "tdoa" else np.zeros((0, 2))

    def geometry(t):
        return np.vstack([P0 + V * t, fixed])

    log = run_cycles(pcfg, geometry, rng=np.random.default_rng([cfg.seed, 1]))
    write_trace_csv(out / "trace.csv", log)
    if cfg.mode == "two_way":
        write_ranges_csv(out / "ranges.csv", ranges_from_log(log))
        return ["trace.csv", "ranges.csv"]
    coords = {k: fixed[k - n] for k in range(n, n + n_anchors + 1)}
    write_rangediffs_csv(out / "rangediffs.csv", range_diffs_from_log(log, coords))
    return ["trace.csv", "rangediffs.csv"]


_RUNNERS = {"bounds": _run_bounds, "simulate": _run_simulate, "protocol-trace": _run_protocol,
            "roc": _run_roc, "rmse": _run_rmse}


def execute(command: str, params: dict, out_dir, seed: Optional[int] = None) -> List[str]:
    """Validate, run and write artifacts plus ``manifest.json``; raises on failure."""
    params = dict(params)
    if seed is not None:
        params["seed"] = int(seed)
    cfg = build_config(command, params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"command": command, "params": dataclasses.asdict(cfg)}
    files = _RUNNERS[command](cfg, out)
    manifest = {"command": command, "seed": cfg.seed, "config": resolved,
                "config_hash": config_hash(resolved), "versions": _versions(), "outputs": files}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")
    return files


def run_config(path, out_dir=None, seed: Optional[int] = None) -> int:
    """Run a JSON config ``{"command": ..., "seed": ..., "params": {...}}``; returns an exit code."""
    try:
        doc = load_config(path)
        if "command" not in doc:
            raise ConfigError("missing required field 'command'")
        unknown = set(doc) - {"command", "seed", "params", "out"}
        if unknown:
            raise ConfigError(f"unknown top-level field {sorted(unknown)[0]!r}")
        params = doc.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("'params' must be an object")
        if "seed" in doc:
            params = {**params, "seed": doc["seed"]}
        out = out_dir or doc.get("out") or f"runs/{doc['command']}-{config_hash(doc)[:8]}"
        execute(doc["command"], params, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
