import numpy as np
import pytest

from rangecp.errors import ConfigError, MissingStamp
from rangecp.protocol import (SPEED_OF_LIGHT, NodeClock, ProtocolConfig, message_count_naive,
                              range_diffs_from_log, ranges_from_log, run_cycles, ticks_to_ns_str,
                              to_ticks, two_way_range, write_trace_csv)

POS = np.array([[0.0, 0.0], [3.0, 4.0], [10.0, 0.0], [-2.0, 7.0], [5.0, -5.0], [1.0, 1.0]])


def _static(t):
    return POS


def _moving(t):
    return POS + np.outer(np.arange(6), [0.3, -0.2]) * t


def _true(pos):
    return np.hypot(*(pos[:, None] - pos[None]).transpose(2, 0, 1))


def test_tick_helpers():
    assert to_ticks(1e-9) == 10**9
    assert ticks_to_ns_str(1_500_000_000) == "1.500000000"
    assert ticks_to_ns_str(-1) == "-0.000000001"


def test_one_packet_per_node_per_cycle():
    cfg = ProtocolConfig(6, cycles=10, timestamp_noise_std=0.0, sync_residual_ppm=0.0)
    log = run_cycles(cfg, _static, rng=0)
    assert all(log.transmissions_in_cycle(n) == 6 for n in range(10))
    assert message_count_naive(6) == 30


def test_noiseless_static_ranges_exact():
    cfg = ProtocolConfig(6, cycles=5, timestamp_noise_std=0.0, sync_residual_ppm=0.0)
    s = ranges_from_log(run_cycles(cfg, _static, rng=1))
    assert np.abs(s.delta - _true(POS)[None]).max() < 1e-9


def test_offsets_cancel_bitwise():
    cfg = ProtocolConfig(6, cycles=20, timestamp_noise_std=0.0, sync_residual_ppm=0.0)
    a = ranges_from_log(run_cycles(cfg, _moving, clocks={k: NodeClock(0.0) for k in range(6)}))
    rng = np.random.default_rng(3)
    clocks = {k: NodeClock(float(rng.normal(0, 1e-2))) for k in range(6)}
    b = ranges_from_log(run_cycles(cfg, _moving, clocks=clocks))
    assert np.array_equal(a.delta, b.delta)


def test_noise_level_two_way():
    cfg = ProtocolConfig(2, cycles=4000, sync_residual_ppm=0.0)
    s = ranges_from_log(run_cycles(cfg, _static, rng=5))
    err = s.delta[:, 0, 1] - 5.0
    # four stamps of std 0.08/c each, halved: std 0.08 m
    assert np.std(err) == pytest.approx(0.08, rel=0.05)


def test_drift_bias_matches_first_order_model():
    cfg = ProtocolConfig(6, cycles=3, timestamp_noise_std=0.0, sync_period_cycles=1000)
    ppm = [0.0, 0.3, -0.2, 0.1, 0.05, -0.4]
    clocks = {k: NodeClock(1e-4 * k, ppm[k]) for k in range(6)}
    s = ranges_from_log(run_cycles(cfg, _static, clocks=clocks))
    err = s.delta[2] - _true(POS)
    for i in range(6):
        for j in range(i):
            # earlier transmitter j times the round trip, i times the reply
            reply = (i - j) * cfg.slot_length
            bias = 0.5 * SPEED_OF_LIGHT * (ppm[j] - ppm[i]) * 1e-6 * reply
            assert err[i, j] == pytest.approx(bias, abs=1e-5)


def test_legacy_indexing_does_not_measure_range():
    cfg = ProtocolConfig(3, cycles=3, timestamp_noise_std=0.0, sync_residual_ppm=0.0)
    log = run_cycles(cfg, _static, rng=0)
    legacy = two_way_range(log, 0, 1, 1, legacy_indexing=True)
    assert abs(legacy - 5.0) > 1.0
    with pytest.raises(MissingStamp):
        two_way_range(log, 0, 1, 0, legacy_indexing=True)


def test_tdoa_mode_differences():
    anchors = {6: (0.0, 0.0), 7: (20.0, 0.0), 8: (0.0, 20.0), 9: (20.0, 20.0), 10: (10.0, -3.0)}
    coords = {**anchors}

    def geo(t):
        out = np.zeros((11, 2))
        out[:6] = POS + 5
        for k, c in anchors.items():
            out[k] = c
        return out

    cfg = ProtocolConfig(6, cycles=4, mode="tdoa", anchors=(6, 7, 8, 9), synch=10,
                         timestamp_noise_std=0.0, sync_residual_ppm=0.0)
    log = run_cycles(cfg, geo, rng=0)
    assert all(log.transmissions_in_cycle(n) == 7 for n in range(4))
    d = range_diffs_from_log(log, coords)
    A = np.array([anchors[k] for k in (6, 7, 8, 9)])
    D = np.hypot(*((POS + 5)[:, None] - A[None]).transpose(2, 0, 1))
    assert np.abs(d.ddiff - (D[:, 1:] - D[:, :1])[None]).max() < 1e-9


def test_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(1).validate()
    with pytest.raises(ConfigError):
        ProtocolConfig(3, mode="tdoa").validate()
    with pytest.raises(ConfigError):
        ProtocolConfig(3, mode="tdoa", anchors=(1, 4), synch=5).validate()
    with pytest.raises(ConfigError):
        ProtocolConfig(3, anchors=(4, 5)).validate()


def test_missing_stamp():
    cfg = ProtocolConfig(2, cycles=1, timestamp_noise_std=0.0)
    log = run_cycles(cfg, _static, rng=0)
    with pytest.raises(MissingStamp):
        log.tx_stamp(3, 0)


def test_trace_csv_exact(tmp_path):
    cfg = ProtocolConfig(3, cycles=2, timestamp_noise_std=0.0)
    log = run_cycles(cfg, _static, rng=0)
    write_trace_csv(tmp_path / "t.csv", log)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "cycle,node,kind,from,stamp_ns"
    assert len(lines) == 1 + 2 * (3 + 6)
    assert SPEED_OF_LIGHT == 299_792_458.0
