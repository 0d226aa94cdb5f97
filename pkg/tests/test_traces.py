import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowctx.encoding import fit_percentile_encoding
from flowctx.flows import ConnectionKey
from flowctx.traces import (
    ProtocolCodec,
    build_traces,
    make_symbol,
    parse_symbol,
    read_traces,
    symbolize,
    write_traces,
)

from conftest import flow

KEY = ConnectionKey("A", "B")


def test_symbol_assembly():
    codec = ProtocolCodec.fit(["TCP"])
    btab = fit_percentile_encoding("bytes", [1, 2, 3, 4, 5, 6, 7, 8, 9, 10])
    dtab = fit_percentile_encoding("duration_ms", [1, 2])
    f = flow(0, nbytes=5, dur=2)
    assert symbolize(f, codec, btab, dtab) == "0_4_1"
    assert symbolize(flow(9, nbytes=5, dur=2), codec, btab, dtab) == "0_4_1"
    assert parse_symbol("0_4_1") == (0, 4, 1)


def test_codec():
    codec = ProtocolCodec.fit(["udp", "TCP", "GRE", "ESP"])
    assert codec.code("TCP") == 0 and codec.code("UDP") == 1 and codec.code("ICMP") == 2
    assert codec.code("ESP") == 3 and codec.code("GRE") == 4
    assert codec.code("SCTP") == 5  # unseen tokens share the next free id
    assert ProtocolCodec.fit(["GRE"]).code("GRE") == 3


@pytest.mark.parametrize("bad", ["0_1", "a_1_2", "0_1_2_3", "-1_0_0", ""])
def test_malformed_symbols(bad):
    with pytest.raises(ValueError):
        parse_symbol(bad)


def seq(n, bad_at=()):
    return [(make_symbol(0, i, 0), i in bad_at) for i in range(n)]


def test_window_counts():
    traces = build_traces({KEY: seq(5)}, w=3)
    assert [t.start_index for t in traces] == [0, 1, 2]
    assert all(len(t) == 3 for t in traces)
    assert build_traces({KEY: seq(2)}, w=3) == []


def test_any_malicious_label():
    traces = build_traces({KEY: seq(5, bad_at={4})}, w=3)
    assert [t.malicious for t in traces] == [False, False, True]


def test_window_validation():
    with pytest.raises(ValueError):
        build_traces({KEY: seq(5)}, w=1)
    with pytest.raises(ValueError):
        build_traces({KEY: seq(5)}, w=3, stride=0)


@settings(max_examples=100, deadline=None)
@given(
    st.dictionaries(st.sampled_from("ABCDEF"), st.integers(0, 25), min_size=1),
    st.integers(2, 6),
    st.integers(1, 3),
    st.randoms(use_true_random=False),
)
def test_windowing_and_shuffle(lengths, w, stride, rnd):
    conns = {ConnectionKey(h, "X"): seq(n, bad_at={n // 2}) for h, n in lengths.items()}
    traces = build_traces(conns, w, stride)
    for key, s in conns.items():
        got = [t for t in traces if t.connection == key]
        assert len(got) == max(0, (len(s) - w) // stride + 1)
    for t in traces:
        for sym in t.symbols:
            assert make_symbol(*parse_symbol(sym)) == sym
    items = list(conns.items())
    rnd.shuffle(items)
    assert sorted(build_traces(dict(items), w, stride), key=repr) == sorted(traces, key=repr)


def test_trace_file_roundtrip():
    traces = build_traces({KEY: seq(6, bad_at={5})}, w=4)
    buf = io.StringIO()
    write_traces(traces, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "3 6"
    assert lines[1] == "0 4 0_0_0 0_1_0 0_2_0 0_3_0"
    back = read_traces(io.StringIO(buf.getvalue()))
    assert back == [(t.malicious, t.symbols) for t in traces]


def test_trace_file_bad_count():
    with pytest.raises(ValueError):
        read_traces(io.StringIO("2 1\n0 2 a a\n"))
