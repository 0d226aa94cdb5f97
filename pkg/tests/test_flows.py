import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowctx.flows import (
    ColumnMap,
    ConnectionKey,
    FlowParseError,
    FlowRecord,
    Label,
    format_flows,
    group_by_connection,
    parse_flows,
)

HEADER = "timestamp,duration_ms,protocol,src,dst,bytes,label\n"


def test_single_row_identity_map():
    res = parse_flows(io.StringIO(HEADER + "1000,5,TCP,10.0.0.1,10.0.0.2,120,0\n"))
    assert res.records == [FlowRecord(1000, 5, "TCP", "10.0.0.1", "10.0.0.2", 120, Label.BENIGN)]
    assert res.skipped == 0


def test_header_only_is_empty():
    res = parse_flows(io.StringIO(HEADER))
    assert res.records == [] and res.skipped == 0


def test_bad_row_is_skipped_and_counted():
    text = HEADER + "1,5,TCP,a,b,10,0\n2,5,TCP,a,b,abc,0\n3,5,UDP,a,b,30,1\n"
    res = parse_flows(io.StringIO(text))
    assert [r.timestamp for r in res.records] == [1, 3]
    assert res.skipped == 1
    assert res.first_bad_row == 3
    assert res.records[1].label is Label.MALICIOUS


def test_majority_bad_rows_is_fatal():
    text = HEADER + "1,5,TCP,a,b,x,0\n2,5,TCP,a,b,y,0\n3,5,TCP,a,b,30,0\n"
    with pytest.raises(FlowParseError, match="first bad row 2"):
        parse_flows(io.StringIO(text))


def test_unreadable_path():
    from flowctx.flows import read_flows

    with pytest.raises(FlowParseError):
        read_flows("/nonexistent/flows.csv")


def test_empty_label_is_unknown_and_crlf_accepted():
    res = parse_flows(io.StringIO(HEADER.replace("\n", "\r\n") + "1,0,icmp,a,b,64,\r\n"))
    assert res.records[0].label is Label.UNKNOWN
    assert res.records[0].protocol == "ICMP"


def test_column_map_foreign_layout():
    text = (
        "StartTime\tDur\tProto\tSrcAddr\tDstAddr\tTotBytes\tLabel\n"
        "2011/08/10 09:46:53.047277\t3.5\tudp\t147.32.84.165\t147.32.80.9\t214\tflow=From-Botnet-V50-1\n"
        "2011/08/10 09:46:54.000000\t0.001\ttcp\t147.32.84.1\t147.32.80.9\t60\tflow=Background\n"
    )
    cmap = ColumnMap.from_pairs(
        [
            "timestamp=StartTime",
            "duration_ms=Dur",
            "protocol=Proto",
            "src=SrcAddr",
            "dst=DstAddr",
            "bytes=TotBytes",
            "label=Label",
            "timestamp_format=%Y/%m/%d %H:%M:%S.%f",
            "duration_unit=s",
            "delimiter=tab",
            "malicious_pattern=Botnet",
        ]
    )
    a, b = parse_flows(io.StringIO(text), cmap).records
    assert a.duration_ms == 3500 and a.protocol == "UDP" and a.label is Label.MALICIOUS
    assert b.duration_ms == 1 and b.label is Label.BENIGN
    assert b.timestamp - a.timestamp == 953


def test_column_map_by_index_without_header():
    cmap = ColumnMap.from_pairs(
        ["header=false", "timestamp=6", "duration_ms=5", "protocol=2", "src=4", "dst=3", "bytes=1", "label=0"]
    )
    res = parse_flows(io.StringIO("1,99,TCP,d,s,7,12\n"), cmap)
    assert res.records == [FlowRecord(12, 7, "TCP", "s", "d", 99, Label.MALICIOUS)]


def test_column_map_requires_fields():
    with pytest.raises(ValueError):
        ColumnMap(columns={"timestamp": "t"})
    with pytest.raises(ValueError):
        ColumnMap.from_pairs(["colour=blue"])


def test_missing_header_column_is_fatal():
    with pytest.raises(FlowParseError, match="not in header"):
        parse_flows(io.StringIO("a,b,c\n1,2,3\n"))


def test_flow_invariants():
    with pytest.raises(ValueError):
        FlowRecord(0, -1, "TCP", "a", "b", 1)
    with pytest.raises(ValueError):
        FlowRecord(0, 1, "  ", "a", "b", 1)


def test_group_sorts_by_timestamp(make_flow):
    groups = group_by_connection([make_flow(3), make_flow(1), make_flow(2)])
    assert list(groups) == [ConnectionKey("A", "B")]
    assert [f.timestamp for f in groups[ConnectionKey("A", "B")]] == [1, 2, 3]


def test_group_is_directional(make_flow):
    groups = group_by_connection([make_flow(1, "A", "B"), make_flow(2, "B", "A")])
    assert set(groups) == {ConnectionKey("A", "B"), ConnectionKey("B", "A")}


def test_group_tie_break_is_stable(make_flow):
    x, y = make_flow(5, nbytes=1), make_flow(5, nbytes=2)
    assert group_by_connection([x, y])[ConnectionKey("A", "B")] == [x, y]


flow_st = st.builds(
    FlowRecord,
    timestamp=st.integers(0, 10**13),
    duration_ms=st.integers(0, 10**7),
    protocol=st.sampled_from(["TCP", "UDP", "ICMP", "GRE"]),
    src=st.sampled_from(["10.0.0.1", "10.0.0.2", "host-a"]),
    dst=st.sampled_from(["10.0.0.1", "10.0.0.3", "host-b"]),
    bytes=st.integers(0, 10**9),
    label=st.sampled_from(list(Label)),
)


@given(st.lists(flow_st, max_size=30))
def test_serialize_parse_roundtrip(flows):
    assert parse_flows(io.StringIO(format_flows(flows))).records == flows


@given(st.lists(flow_st, max_size=40))
def test_grouping_preserves_multiset_and_is_deterministic(flows):
    groups = group_by_connection(flows)
    regrouped = [f for seq in groups.values() for f in seq]
    assert sorted(regrouped, key=repr) == sorted(flows, key=repr)
    assert format_flows(regrouped) == format_flows(f for seq in group_by_connection(flows).values() for f in seq)
    for seq in groups.values():
        assert [f.timestamp for f in seq] == sorted(f.timestamp for f in seq)
