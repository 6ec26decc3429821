import io
import ipaddress

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scancorr.ingest import (
    ConnRecord,
    MalformedLine,
    MissingHeader,
    SubnetFilter,
    UnsupportedFormat,
    format_conn_line,
    parse_conn_line,
    read_conn_log,
    restrict_visibility,
    write_zeek_log,
)

from .conftest import ip

HEADER = (
    "#separator \\x09\n"
    "#unset_field\t-\n"
    "#fields\tts\tuid\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tconn_state\thistory\n"
    "#types\ttime\tstring\taddr\tport\taddr\tport\tenum\tstring\tstring\n"
)


def zeek(*rows):
    return io.BytesIO((HEADER + "".join(r + "\n" for r in rows)).encode())


def test_parse_identity_schema():
    rec = parse_conn_line("1557014400.1\t203.0.113.7\t46960\t198.51.100.2\t23\ttcp\tS0")
    assert rec == ConnRecord(1557014400.1, ip("203.0.113.7"), 46960, ip("198.51.100.2"), 23, "tcp", "S0", None)


@pytest.mark.parametrize(
    "line",
    [
        "1.0\t203.0.113.7\t99999\t198.51.100.2\t23\ttcp\tS0",
        "1.0\t203.0.113.7\t-1\t198.51.100.2\t23\ttcp\tS0",
        "1.0\t203.0.113.7\t1\t198.51.100.2\tssh\ttcp\tS0",
        "abc\t203.0.113.7\t1\t198.51.100.2\t23\ttcp\tS0",
        "-5\t203.0.113.7\t1\t198.51.100.2\t23\ttcp\tS0",
        "nan\t203.0.113.7\t1\t198.51.100.2\t23\ttcp\tS0",
        "1.0\t203.0.113.300\t1\t198.51.100.2\t23\ttcp\tS0",
        "1.0\t203.0.113.7\t1\t2001:db8::1\t23\ttcp\tS0",
        "1.0\t203.0.113.7\t1",
    ],
)
def test_parse_rejects(line):
    with pytest.raises(MalformedLine):
        parse_conn_line(line)


def test_parse_column_count_and_unknown_state():
    line = "1.0\t203.0.113.7\t1\t198.51.100.2\t23\tTCP\tOTH_WEIRD"
    rec = parse_conn_line(line)
    assert rec.conn_state == "OTH_WEIRD"
    assert rec.proto == "tcp"
    with pytest.raises(MalformedLine):
        parse_conn_line(line, ncols=8)
    assert parse_conn_line(line.replace("TCP", "sctp")).proto == "other"


def test_reader_counts_errors():
    src = zeek(
        "1.0\tC1\t203.0.113.7\t1\t198.51.100.2\t23\ttcp\tS0\tS",
        "2.0\tC2\t203.0.113.7\t2\t198.51.100.3\t23\ttcp\tS0\t-",
        "3.0\tC3\t203.0.113.7\t99999\t198.51.100.4\t23\ttcp\tS0\tS",
        "# a comment line",
        "4.0\tC4\t2001:db8::7\t4\t2001:db8::9\t443\ttcp\tREJ\tSr",
    )
    reader = read_conn_log(src)
    recs = list(reader)
    assert len(recs) == 3
    assert reader.errors == 1
    assert recs[0].history == "S" and recs[1].history is None
    assert [r.ts for r in recs] == [1.0, 2.0, 4.0]


def test_reader_strict_raises_with_line_number():
    src = zeek("1.0\tC1\t203.0.113.7\t1\t198.51.100.2\t23\ttcp\tS0\tS", "bad")
    with pytest.raises(MalformedLine) as exc:
        list(read_conn_log(src, strict=True))
    assert exc.value.lineno == 6


def test_empty_file_with_header():
    reader = read_conn_log(zeek())
    assert list(reader) == []
    assert reader.errors == 0


def test_missing_conn_state():
    text = "#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\n1\t1.1.1.1\t1\t2.2.2.2\t2\ttcp\n"
    with pytest.raises(MissingHeader):
        list(read_conn_log(io.BytesIO(text.encode())))


def test_data_before_header():
    with pytest.raises(MissingHeader):
        list(read_conn_log(io.BytesIO(b"1.0\t1.1.1.1\t1\t2.2.2.2\t2\ttcp\tS0\n")))


def test_unsupported_format():
    with pytest.raises(UnsupportedFormat):
        read_conn_log(io.BytesIO(b""), fmt="pcap")


def test_custom_separator():
    text = "#separator \\x2c\n#fields,ts,id.orig_h,id.orig_p,id.resp_h,id.resp_p,proto,conn_state\n5.5,1.1.1.1,1,2.2.2.2,2,tcp,S0\n"
    (rec,) = list(read_conn_log(io.StringIO(text)))
    assert rec.ts == 5.5 and rec.resp_port == 2


def test_generic_csv():
    text = (
        "ts,orig_h,orig_p,resp_h,resp_p,proto,conn_state,history\n"
        '1.5,203.0.113.7,1,198.51.100.2,23,tcp,S0,"S"\n'
        "2.5,203.0.113.7,1,198.51.100.2,23,tcp\n"
        "\n"
    )
    reader = read_conn_log(io.StringIO(text), fmt="generic_csv")
    recs = list(reader)
    assert len(recs) == 1 and recs[0].history == "S"
    assert reader.errors == 1


def test_generic_csv_needs_header_fields():
    with pytest.raises(MissingHeader):
        list(read_conn_log(io.StringIO("ts,orig_h\n1,1.1.1.1\n"), fmt="generic_csv"))


# -- visibility ------------------------------------------------------------------

def rec(a, b):
    return ConnRecord(0.0, ip(a), 1000, ip(b), 23, "tcp", "S0")


def test_restrict_examples():
    flt = SubnetFilter("133.242.179.0/24")
    assert list(restrict_visibility([rec("203.0.113.7", "133.242.179.9")], flt))
    assert not list(restrict_visibility([rec("203.0.113.7", "198.51.100.2")], flt))
    # outgoing traffic counts as well
    assert list(restrict_visibility([rec("133.242.179.9", "203.0.113.7")], flt))


def test_full_space_keeps_v4_drops_v6():
    records = [rec("203.0.113.7", "198.51.100.2"), rec("2001:db8::1", "2001:db8::2"), rec("1.2.3.4", "5.6.7.8")]
    kept = list(restrict_visibility(records, SubnetFilter("0.0.0.0/0")))
    assert kept == [records[0], records[2]]


def test_filter_rejects_host_bits():
    with pytest.raises(ValueError):
        SubnetFilter("133.242.179.1/24")


v4 = st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address)
records = st.lists(st.tuples(v4, v4).map(lambda ab: ConnRecord(0.0, ab[0], 1, ab[1], 2, "tcp", "S0")), max_size=40)
prefixes = st.tuples(v4, st.integers(0, 32)).map(lambda t: ipaddress.IPv4Network((t[0], t[1]), strict=False))


@given(records, prefixes)
def test_restrict_is_order_preserving_submultiset(recs, net):
    kept = list(restrict_visibility(recs, SubnetFilter(net)))
    it = iter(recs)
    assert all(any(k is r for r in it) for k in kept)


@st.composite
def nested(draw):
    outer = draw(prefixes)
    length = draw(st.integers(outer.prefixlen, 32))
    inside = int(outer.network_address) + draw(st.integers(0, outer.num_addresses - 1))
    return outer, ipaddress.IPv4Network((inside, length), strict=False)


@given(records, nested())
def test_nested_filters_compose(recs, nets):
    outer, inner = nets
    assert inner.subnet_of(outer)
    both = list(restrict_visibility(restrict_visibility(recs, SubnetFilter(outer)), SubnetFilter(inner)))
    assert both == list(restrict_visibility(recs, SubnetFilter(inner)))


def test_zeek_round_trip():
    records = [
        ConnRecord(1557014400.123456, ip("203.0.113.7"), 46960, ip("198.51.100.2"), 23, "tcp", "S0", "S"),
        ConnRecord(0.1 + 0.2, ip("2001:db8::1"), 1, ip("2001:db8::2"), 65535, "udp", "SF", None),
    ]
    buf = io.StringIO()
    write_zeek_log(records, buf)
    assert list(read_conn_log(io.StringIO(buf.getvalue()))) == records
    assert parse_conn_line(format_conn_line(records[0])) == records[0]
