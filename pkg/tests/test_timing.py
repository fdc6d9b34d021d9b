import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polqkd.errors import ContractViolation, InvalidParameter
from polqkd.timing import (
    PS_PER_S,
    TAG_DTYPE,
    Channel,
    ClockSpec,
    CountSample,
    TagEvent,
    events_from_counts,
    fpga_schedule,
    gate_by_mcss,
    make_stream,
    mcss_edges,
    merge_streams,
    read_tags_bin,
    read_tags_csv,
    ttu_bin,
    write_tags_bin,
    write_tags_csv,
)

BIN = 10**10  # 10 ms in ps


def test_mcss_edges():
    e = mcss_edges(1.0, ClockSpec())
    assert list(e) == [k * 10**11 for k in range(11)]
    assert len(mcss_edges(300.0, ClockSpec())) - 1 == 3000
    assert len(mcss_edges(0.05, ClockSpec())) - 1 == 0
    assert len(mcss_edges(0.9, ClockSpec())) - 1 == 9
    with pytest.raises(InvalidParameter):
        mcss_edges(0.0, ClockSpec())


@pytest.mark.parametrize("kw", [dict(frequency_hz=0), dict(duty=0), dict(duty=1)])
def test_clock_validation(kw):
    with pytest.raises(InvalidParameter):
        ClockSpec(**kw)


def test_clock_level():
    c = ClockSpec()
    assert c.level(0) == 0.0
    assert c.level(6 * BIN) == 4.0
    assert c.level(10 * BIN) == 0.0


def test_fpga_schedule():
    s = fpga_schedule([0, 1, 1, 0], 4.0)
    assert list(s.voltages) == [0, 4, 4, 0]
    assert [c for c, _ in s.entries] == [0, 1, 2, 3]
    assert set(fpga_schedule([0] * 7, 4.0).voltages) == {0.0}
    assert len(fpga_schedule([1, 0] * 1500, 4.0)) == 3000
    with pytest.raises(InvalidParameter):
        fpga_schedule([], 4.0)
    with pytest.raises(InvalidParameter):
        fpga_schedule([0, 2], 4.0)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
def test_schedule_bijection(bits):
    assert fpga_schedule(bits, 4.0).bits() == bits


def test_ttu_single_bin():
    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, BIN, 200))
    bins = ttu_bin([TagEvent(Channel.H_DETECTOR, int(t)) for t in ts], 0.01)
    assert len(bins) == 1 and bins[0].counts == 200 and bins[0].bin_start_ps == 0


def test_ttu_empty():
    assert ttu_bin([], 0.01) == []
    dense = ttu_bin([], 0.01, span_s=(0.0, 0.05))
    assert [b.counts for b in dense] == [0] * 5


def test_ttu_hundred_bins_per_second():
    ts = np.arange(0, PS_PER_S, 10**9)
    bins = ttu_bin(ts, 0.01, span_s=(0.0, 1.0))
    assert len(bins) == 100
    assert all(b.counts == 10 for b in bins)


def test_ttu_exact_edge():
    bins = ttu_bin(np.array([BIN - 1, BIN]), 0.01)
    assert [b.counts for b in bins] == [1, 1]


def test_ttu_rejects_unordered():
    with pytest.raises(ContractViolation):
        ttu_bin(np.array([5, 3]), 0.01)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 5 * PS_PER_S), max_size=500), st.sampled_from([0.001, 0.01, 0.1]))
def test_ttu_conserves_events(ts, width):
    ts = np.sort(np.array(ts, dtype=np.int64))
    bins = ttu_bin(ts, width)
    assert sum(b.counts for b in bins) == len(ts)
    assert all(b.bin_start_ps % b.bin_width_ps == 0 for b in bins)


def _dense(duration_s, width_s=0.01, seed=0):
    n = int(round(duration_s / width_s))
    rng = np.random.default_rng(seed)
    w = int(round(width_s * PS_PER_S))
    return [CountSample(i * w, int(c), w) for i, c in enumerate(rng.poisson(100, n))]


def test_gate_counts():
    clock = ClockSpec()
    assert len(gate_by_mcss(_dense(300.0), mcss_edges(300.0, clock))) == 3000
    assert len(gate_by_mcss(_dense(0.9), mcss_edges(0.9, clock))) == 9
    assert len(gate_by_mcss(_dense(0.1), mcss_edges(0.1, clock))) == 1


def test_gate_picks_open_midpoint():
    samples = _dense(1.0)
    gated = gate_by_mcss(samples, mcss_edges(1.0, ClockSpec()))
    assert [g.bin_start_ps for g in gated] == [k * 10**11 + 2 * BIN for k in range(10)]
    explicit = gate_by_mcss(samples, mcss_edges(1.0, ClockSpec()), offset_ps=0)
    assert explicit[3].bin_start_ps == 3 * 10**11


def test_gate_missing_coverage_is_none():
    samples = _dense(0.5)
    gated = gate_by_mcss(samples, mcss_edges(1.0, ClockSpec()))
    assert gated[4] is not None
    assert gated[5:] == [None] * 5


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 20.0), st.sampled_from([1.0, 2.0, 3.0, 7.0, 10.0, 25.0]))
def test_gate_cardinality(duration, freq):
    clock = ClockSpec(frequency_hz=freq)
    edges = mcss_edges(duration, clock)
    gated = gate_by_mcss(_dense(duration + 1.0, 0.01), edges)
    assert len(gated) == int(np.floor(duration * freq + 1e-9))
    assert all(g is not None for g in gated)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 100))
def test_gate_idempotent(duration, seed):
    edges = mcss_edges(duration, ClockSpec())
    once = gate_by_mcss(_dense(duration + 0.1, seed=seed), edges)
    assert gate_by_mcss(once, edges) == once


def test_events_from_counts_rebins_exactly():
    rng = np.random.default_rng(4)
    counts = rng.poisson(50, 300)
    ts = events_from_counts(counts, BIN, np.random.default_rng(8))
    assert [b.counts for b in ttu_bin(ts, 0.01, span_s=(0.0, 3.0))] == counts.tolist()


def test_merge_orders_ties_by_channel():
    a = make_stream(Channel.FPGA_SYNC, [0, 10])
    b = make_stream(Channel.H_DETECTOR, [5, 10])
    c = make_stream(Channel.MCSS, [0, 10])
    m = merge_streams(a, b, c)
    assert m["timestamp_ps"].tolist() == [0, 0, 5, 10, 10, 10]
    assert m["channel"].tolist() == [1, 2, 0, 0, 1, 2]


@pytest.fixture
def stream():
    rng = np.random.default_rng(1)
    return merge_streams(
        make_stream(Channel.H_DETECTOR, np.sort(rng.integers(0, 10**12, 1000))),
        make_stream(Channel.MCSS, np.arange(11) * 10**11),
        make_stream(Channel.FPGA_SYNC, np.arange(10) * 10**11),
    )


def test_tag_csv_round_trip(tmp_path, stream):
    write_tags_csv(tmp_path / "t.csv", stream)
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[0] == "channel,timestamp_ps"
    assert text[1] == "MCSS,0"
    back = read_tags_csv(tmp_path / "t.csv")
    assert back.tobytes() == stream.tobytes()


def test_tag_csv_accepts_numeric_channels(tmp_path):
    (tmp_path / "t.csv").write_text("channel,timestamp_ps\n0,5\n1,7\n")
    back = read_tags_csv(tmp_path / "t.csv")
    assert back["channel"].tolist() == [0, 1]


def test_tag_csv_rejects_garbage(tmp_path):
    (tmp_path / "t.csv").write_text("channel,timestamp_ps\nLASER,5\n")
    with pytest.raises(InvalidParameter):
        read_tags_csv(tmp_path / "t.csv")
    (tmp_path / "u.csv").write_text("chan,ts\n")
    with pytest.raises(InvalidParameter):
        read_tags_csv(tmp_path / "u.csv")


def test_tag_binary_layout(tmp_path):
    s = make_stream(Channel.MCSS, [0x0102030405060708])
    write_tags_bin(tmp_path / "t.bin", s)
    assert (tmp_path / "t.bin").read_bytes() == bytes([1, 8, 7, 6, 5, 4, 3, 2, 1])
    assert TAG_DTYPE.itemsize == 9


def test_tag_binary_round_trip(tmp_path, stream):
    write_tags_bin(tmp_path / "t.bin", stream)
    assert read_tags_bin(tmp_path / "t.bin").tobytes() == stream.tobytes()
    (tmp_path / "bad.bin").write_bytes(b"\x00" * 10)
    with pytest.raises(InvalidParameter):
        read_tags_bin(tmp_path / "bad.bin")
