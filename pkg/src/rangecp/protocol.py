"""Discrete-event simulation of the N-message UWB ranging cycle.

Every mobile node transmits one UWB packet per cycle in its own slot. All
other nodes timestamp the reception on their local clock, and the stamps are
shared (lossless, at cycle end) over the narrowband side channel. In TDOA
mode a synch node transmits first and receive-only anchors record every
packet.

Timestamps are exact integers in attosecond ticks. Float seconds cannot
resolve sub-nanometre ranges once global time reaches tenths of a second,
and integer arithmetic makes constant clock offsets cancel bit-exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, MissingStamp
from .scenario import RangeDiffStream, RangeStream

SPEED_OF_LIGHT = 299_792_458.0
TICK = 1e-18  # seconds per timestamp tick
TICKS_PER_NS = 10**9


def to_ticks(seconds: float) -> int:
    return int(round(seconds / TICK))


def ticks_to_ns_str(ticks: int) -> str:
    """Exact decimal rendering of a tick count in nanoseconds."""
    sign = "-" if ticks < 0 else ""
    q, r = divmod(abs(int(ticks)), TICKS_PER_NS)
    return f"{sign}{q}.{r:09d}"


@dataclass
class NodeClock:
    offset: float = 0.0          # seconds
    freq_error: float = 0.0      # ppm
    last_sync_cycle: int = 0


class UwbPacket(NamedTuple):
    exchange_number: int
    transmitter_id: int


@dataclass
class ProtocolConfig:
    n_nodes: int
    slot_length: float = 1e-3
    cycles: int = 100
    sync_period_cycles: int = 100
    mode: str = "two_way"
    anchors: Tuple[int, ...] = ()
    synch: Optional[int] = None
    timestamp_noise_std: float = 0.08 / SPEED_OF_LIGHT  # two-way range std 0.08 m
    offset_std: float = 1e-3
    sync_residual_ppm: float = 0.1
    max_freq_error_ppm: float = 100.0
    legacy_indexing: bool = False

    def validate(self) -> None:
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        if self.sync_period_cycles < 1:
            raise ConfigError("sync_period_cycles must be >= 1")
        if self.slot_length <= 0:
            raise ConfigError("slot_length must be positive")
        if self.mode not in ("two_way", "tdoa"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "two_way":
            if self.anchors or self.synch is not None:
                raise ConfigError("two_way mode takes no anchors or synch node")
            if self.n_nodes < 2:
                raise ConfigError("two_way mode needs at least 2 nodes")
        else:
            if self.synch is None or len(self.anchors) < 2:
                raise ConfigError("tdoa mode needs a synch node and >= 2 anchors")
            ids = list(self.anchors) + [self.synch]
            if len(set(ids)) != len(ids) or any(k < self.n_nodes for k in ids):
                raise ConfigError("anchor/synch ids must be distinct and >= n_nodes")

    @property
    def node_ids(self) -> List[int]:
        ids = list(range(self.n_nodes))
        if self.mode == "tdoa":
            ids += list(self.anchors) + [self.synch]
        return ids

    @property
    def transmitters(self) -> List[int]:
        """Transmitters in slot order."""
        mobile = list(range(self.n_nodes))
        return mobile if self.mode == "two_way" else [self.synch] + mobile

    @property
    def receivers(self) -> List[int]:
        return list(range(self.n_nodes)) if self.mode == "two_way" else list(self.anchors)

    @property
    def cycle_length(self) -> float:
        return len(self.transmitters) * self.slot_length


@dataclass
class TimestampLog:
    cfg: ProtocolConfig
    tx: Dict[Tuple[int, int], int] = field(default_factory=dict)
    rx: Dict[Tuple[int, int, int], int] = field(default_factory=dict)
    tx_global: Dict[Tuple[int, int], int] = field(default_factory=dict)
    packets: List[UwbPacket] = field(default_factory=list)

    def tx_stamp(self, n: int, node: int) -> int:
        try:
            return self.tx[(n, node)]
        except KeyError:
            raise MissingStamp(f"no transmit stamp for node {node} in cycle {n}") from None

    def rx_stamp(self, n: int, receiver: int, transmitter: int) -> int:
        try:
            return self.rx[(n, receiver, transmitter)]
        except KeyError:
            raise MissingStamp(
                f"node {receiver} has no receive stamp from {transmitter} in cycle {n}") from None

    def transmissions_in_cycle(self, n: int) -> int:
        return sum(1 for p in self.packets if p.exchange_number == n)

    def cycle_start(self, n: int) -> float:
        return n * self.cfg.cycle_length


def run_cycles(cfg: ProtocolConfig, geometry: Callable[[float], np.ndarray],
               clocks: Optional[Dict[int, NodeClock]] = None, rng=None) -> TimestampLog:
    """Simulate ``cfg.cycles`` ranging cycles.

    ``geometry(t)`` returns node positions at global time ``t`` as an array
    indexed by node id. ``clocks`` gives initial clock states; missing nodes
    get an offset drawn from ``N(0, offset_std^2)`` and a residual frequency
    error from ``N(0, sync_residual_ppm^2)``. The first transmitter of the
    cycle is the frequency reference and never drifts. Frequency
    synchronization happens at every cycle index that is a positive multiple
    of ``sync_period_cycles``: accumulated drift is folded into the offset
    and the frequency error is redrawn.
    """
    cfg.validate()
    rng = np.random.default_rng(rng)
    ref = cfg.transmitters[0]
    clocks = dict(clocks or {})
    for k in cfg.node_ids:
        if k not in clocks:
            ppm = 0.0 if k == ref else rng.normal(0.0, cfg.sync_residual_ppm)
            clocks[k] = NodeClock(rng.normal(0.0, cfg.offset_std), ppm, 0)
        clocks[k].freq_error = float(np.clip(clocks[k].freq_error, -cfg.max_freq_error_ppm,
                                             cfg.max_freq_error_ppm))
    offset_ticks = {k: to_ticks(c.offset) for k, c in clocks.items()}
    sync_ticks = {k: 0 for k in clocks}

    def local(k: int, g: int) -> int:
        c = clocks[k]
        drift = 0 if c.freq_error == 0 else int(round(c.freq_error * 1e-6 * (g - sync_ticks[k])))
        return g + offset_ticks[k] + drift

    def noise() -> int:
        if cfg.timestamp_noise_std == 0:
            return 0
        return to_ticks(rng.normal(0.0, cfg.timestamp_noise_std))

    log = TimestampLog(cfg)
    slot = to_ticks(cfg.slot_length)
    period = slot * len(cfg.transmitters)
    for n in range(cfg.cycles):
        start = n * period
        if n > 0 and n % cfg.sync_period_cycles == 0:
            for k, c in clocks.items():
                offset_ticks[k] = local(k, start) - start
                sync_ticks[k] = start
                c.last_sync_cycle = n
                if k != ref:
                    c.freq_error = float(np.clip(rng.normal(0.0, cfg.sync_residual_ppm),
                                                 -cfg.max_freq_error_ppm, cfg.max_freq_error_ppm))
        for s, k in enumerate(cfg.transmitters):
            g = start + s * slot
            pos = np.asarray(geometry(g * TICK), dtype=float)
            log.packets.append(UwbPacket(n, k))
            log.tx_global[(n, k)] = g
            log.tx[(n, k)] = local(k, g) + noise()
            for m in cfg.receivers:
                if m == k:
                    continue
                d = float(np.hypot(*(pos[k] - pos[m])))
                arrival = g + to_ticks(d / SPEED_OF_LIGHT)
                log.rx[(n, m, k)] = local(m, arrival) + noise()
    return log


def two_way_range(log: TimestampLog, i: int, j: int, n: int,
                  legacy_indexing: Optional[bool] = None) -> float:
    """Two-way range between mobile nodes ``i`` and ``j`` in cycle ``n``.

    With ``j`` the earlier transmitter, the round trip measured on ``j``'s
    clock minus the reply time measured on ``i``'s clock leaves twice the
    time of flight; each difference uses a single clock, so constant offsets
    cancel exactly.

    ``legacy_indexing=True`` evaluates the cross-cycle stamp pattern
    ``(t_j^i[n] - t_j^j[n-1]) - (t_i^j[n] - t_i^j[n-1])`` instead. It does
    not measure range and is kept only for comparison.
    """
    if legacy_indexing is None:
        legacy_indexing = log.cfg.legacy_indexing
    if i == j:
        return 0.0
    order = log.cfg.transmitters
    if order.index(i) < order.index(j):
        i, j = j, i
    if legacy_indexing:
        if n < 1:
            raise MissingStamp("legacy indexing needs cycle n-1")
        dt = ((log.rx_stamp(n, j, i) - log.tx_stamp(n - 1, j))
              - (log.rx_stamp(n, i, j) - log.rx_stamp(n - 1, i, j)))
    else:
        round_trip = log.rx_stamp(n, j, i) - log.tx_stamp(n, j)
        reply = log.tx_stamp(n, i) - log.rx_stamp(n, i, j)
        dt = round_trip - reply
    return 0.5 * SPEED_OF_LIGHT * dt * TICK


def range_difference(log: TimestampLog, a: int, b: int, tag: int, n: int,
                     x_a, x_b, x_s, synch: Optional[int] = None) -> float:
    """Range difference ``D_a - D_b`` of ``tag`` seen at receive-only anchors ``a``, ``b``.

    The synch packet of the same cycle references both anchor clocks; its
    known propagation distances are added back.
    """
    s = log.cfg.synch if synch is None else synch
    dt = ((log.rx_stamp(n, a, tag) - log.rx_stamp(n, a, s))
          - (log.rx_stamp(n, b, tag) - log.rx_stamp(n, b, s)))
    x_a, x_b, x_s = (np.asarray(x, dtype=float) for x in (x_a, x_b, x_s))
    return (SPEED_OF_LIGHT * dt * TICK
            + float(np.hypot(*(x_a - x_s))) - float(np.hypot(*(x_b - x_s))))


def ranges_from_log(log: TimestampLog) -> RangeStream:
    """All pairwise two-way ranges per cycle, timestamped at the cycle start."""
    cfg = log.cfg
    n_nodes, cycles = cfg.n_nodes, cfg.cycles
    delta = np.zeros((cycles, n_nodes, n_nodes))
    for n in range(cycles):
        for i in range(n_nodes):
            for j in range(i + 1, n_nodes):
                delta[n, i, j] = delta[n, j, i] = two_way_range(log, i, j, n)
    return RangeStream(np.array([log.cycle_start(n) for n in range(cycles)]), delta)


def range_diffs_from_log(log: TimestampLog, coords: Dict[int, Sequence[float]]) -> RangeDiffStream:
    """Per-cycle range differences of every tag, referenced to the first anchor."""
    cfg = log.cfg
    anchors = list(cfg.anchors)
    ref = anchors[0]
    out = np.zeros((cfg.cycles, cfg.n_nodes, len(anchors) - 1))
    for n in range(cfg.cycles):
        for tag in range(cfg.n_nodes):
            for m, a in enumerate(anchors[1:]):
                out[n, tag, m] = range_difference(log, a, ref, tag, n, coords[a], coords[ref],
                                                  coords[cfg.synch])
    return RangeDiffStream(np.array([log.cycle_start(n) for n in range(cfg.cycles)]), out)


def write_trace_csv(path, log: TimestampLog) -> None:
    rows = [(n, k, "tx", k, v) for (n, k), v in log.tx.items()]
    rows += [(n, m, "rx", k, v) for (n, m, k), v in log.rx.items()]
    rows.sort(key=lambda r: (r[0], r[1], r[2] != "tx", r[3]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "node", "kind", "from", "stamp_ns"])
        for n, node, kind, frm, v in rows:
            w.writerow([n, node, kind, frm, ticks_to_ns_str(v)])


def message_count_naive(n_nodes: int) -> int:
    """UWB packets per cycle for separate pairwise two-way exchanges."""
    return n_nodes * (n_nodes - 1)


__all__ = [
    "SPEED_OF_LIGHT", "TICK", "NodeClock", "UwbPacket", "ProtocolConfig", "TimestampLog",
    "run_cycles", "two_way_range", "range_difference", "ranges_from_log",
    "range_diffs_from_log", "write_trace_csv", "to_ticks", "ticks_to_ns_str",
    "message_count_naive",
]
