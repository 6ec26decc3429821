"""Connection-log ingestion.

Reads Zeek ``conn.log`` TSV files (or a plain CSV with the same column
names) into :class:`ConnRecord` tuples, and restricts a record stream to the
traffic seen by one monitored subnet.
"""

import csv
import ipaddress
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

from .netutil import parse_network

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("ts", "orig_h", "orig_p", "resp_h", "resp_p", "proto", "conn_state")
OPTIONAL_FIELDS = ("history",)
PROTOCOLS = frozenset({"tcp", "udp", "icmp", "other"})
FORMATS = ("zeek_tsv", "generic_csv")

# column order used by the synthetic writer and the identity schema
IDENTITY_SCHEMA = {name: i for i, name in enumerate(REQUIRED_FIELDS + OPTIONAL_FIELDS)}


class IngestError(Exception):
    pass


class MalformedLine(IngestError, ValueError):
    def __init__(self, message, lineno=None, line=None):
        self.lineno = lineno
        self.line = line
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)


class MissingHeader(IngestError):
    pass


class UnsupportedFormat(IngestError):
    pass


class ConnRecord(NamedTuple):
    ts: float
    orig_ip: ipaddress.IPv4Address | ipaddress.IPv6Address
    orig_port: int
    resp_ip: ipaddress.IPv4Address | ipaddress.IPv6Address
    resp_port: int
    proto: str
    conn_state: str
    history: str | None = None


@dataclass(frozen=True)
class SubnetFilter:
    """A monitored subnet; a record is visible if either endpoint is inside."""

    cidr: ipaddress.IPv4Network | ipaddress.IPv6Network

    def __post_init__(self):
        if isinstance(self.cidr, str):
            object.__setattr__(self, "cidr", parse_network(self.cidr))

    def contains(self, ip):
        return ip.version == self.cidr.version and ip in self.cidr

    def sees(self, record):
        return self.contains(record.orig_ip) or self.contains(record.resp_ip)


def canonical_field(name):
    """Map a conn.log column name (``id.orig_h``) to its canonical name."""
    name = name.strip()
    if name.startswith("id."):
        name = name[3:]
    return name


def schema_from_fields(fields):
    """Build a field-name -> column-index schema from a header row."""
    schema = {}
    for i, name in enumerate(fields):
        schema.setdefault(canonical_field(name), i)
    missing = [f for f in REQUIRED_FIELDS if f not in schema]
    if missing:
        raise MissingHeader(f"header lacks required field(s): {', '.join(missing)}")
    return {k: v for k, v in schema.items() if k in IDENTITY_SCHEMA}


def _port(text):
    port = int(text)
    if not 0 <= port <= 65535:
        raise ValueError(f"port out of range: {text}")
    return port


def _build_record(cols, schema, unset):
    ts = float(cols[schema["ts"]])
    if not math.isfinite(ts) or ts < 0:
        raise ValueError(f"bad timestamp: {cols[schema['ts']]}")
    orig = ipaddress.ip_address(cols[schema["orig_h"]])
    resp = ipaddress.ip_address(cols[schema["resp_h"]])
    if orig.version != resp.version:
        raise ValueError(f"endpoint families differ: {orig} / {resp}")
    proto = cols[schema["proto"]].lower()
    if proto not in PROTOCOLS:
        proto = "other"
    history = None
    hidx = schema.get("history")
    if hidx is not None and hidx < len(cols):
        h = cols[hidx]
        if h != unset and h != "":
            history = h
    return ConnRecord(
        ts,
        orig,
        _port(cols[schema["orig_p"]]),
        resp,
        _port(cols[schema["resp_p"]]),
        proto,
        cols[schema["conn_state"]],
        history,
    )


def parse_conn_line(line, schema=None, sep="\t", unset="-", ncols=None):
    """Parse one data row into a :class:`ConnRecord`.

    ``schema`` maps canonical field names to column indices (defaults to
    :data:`IDENTITY_SCHEMA`). When ``ncols`` is given the row must have
    exactly that many columns. Raises :class:`MalformedLine`.
    """
    schema = IDENTITY_SCHEMA if schema is None else schema
    cols = line.rstrip("\r\n").split(sep)
    return _parse_cols(cols, schema, unset, ncols, line)


def _parse_cols(cols, schema, unset, ncols, line, lineno=None):
    if ncols is not None and len(cols) != ncols:
        raise MalformedLine(f"expected {ncols} columns, got {len(cols)}", lineno, line)
    try:
        return _build_record(cols, schema, unset)
    except IndexError:
        raise MalformedLine(f"too few columns ({len(cols)})", lineno, line) from None
    except ValueError as exc:
        raise MalformedLine(str(exc), lineno, line) from None


def _unescape(value):
    # Zeek writes the separator as e.g. "\x09"
    return value.encode("ascii").decode("unicode_escape")


def _text_lines(source):
    for raw in source:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", errors="replace")
        yield raw


class ConnLogReader:
    """Iterate the records of one connection log.

    Lines that fail to parse are dropped and counted in :attr:`errors`
    unless ``strict`` is set, in which case the first one raises
    :class:`MalformedLine`. Iterate once.
    """

    def __init__(self, source, fmt="zeek_tsv", strict=False):
        if fmt not in FORMATS:
            raise UnsupportedFormat(f"unsupported log format: {fmt!r}")
        self.source = source
        self.fmt = fmt
        self.strict = strict
        self.errors = 0
        self.first_error = None
        self.records = 0

    def __iter__(self) -> Iterator[ConnRecord]:
        rows = self._zeek_rows() if self.fmt == "zeek_tsv" else self._csv_rows()
        for lineno, cols, schema, unset, ncols, line in rows:
            try:
                rec = _parse_cols(cols, schema, unset, ncols, line, lineno)
            except MalformedLine as exc:
                if self.strict:
                    raise
                self.errors += 1
                if self.first_error is None:
                    self.first_error = exc
                log.debug("dropping %s", exc)
                continue
            self.records += 1
            yield rec

    def _zeek_rows(self):
        sep = "\t"
        unset = "-"
        schema = None
        ncols = None
        for lineno, line in enumerate(_text_lines(self.source), 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#separator"):
                    sep = _unescape(line.split(None, 1)[1]) if " " in line else sep
                    continue
                key, _, value = line.partition(sep)
                if key == "#fields":
                    fields = value.split(sep)
                    schema = schema_from_fields(fields)
                    ncols = len(fields)
                elif key == "#unset_field":
                    unset = value
                continue
            if schema is None:
                raise MissingHeader(f"line {lineno}: data before '#fields' header")
            yield lineno, line.split(sep), schema, unset, ncols, line
        if schema is None:
            raise MissingHeader("no '#fields' header found")

    def _csv_rows(self):
        schema = None
        ncols = None
        reader = csv.reader(_text_lines(self.source))
        for row in reader:
            lineno = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if schema is None:
                schema = schema_from_fields(row)
                ncols = len(row)
                continue
            yield lineno, row, schema, "-", ncols, ",".join(row)
        if schema is None:
            raise MissingHeader("CSV log has no header row")


def read_conn_log(source, fmt="zeek_tsv", strict=False):
    """Return a :class:`ConnLogReader` over ``source``.

    ``source`` may be a binary or text stream, or any iterable of lines.
    The parse-error count is available as ``reader.errors`` once iterated.
    """
    return ConnLogReader(source, fmt, strict)


def restrict_visibility(records: Iterable[ConnRecord], flt) -> Iterator[ConnRecord]:
    """Keep records with at least one endpoint inside the monitored subnet."""
    if not isinstance(flt, SubnetFilter):
        flt = SubnetFilter(flt)
    net = flt.cidr
    version = net.version
    for rec in records:
        if rec.orig_ip.version != version:
            continue
        if rec.orig_ip in net or rec.resp_ip in net:
            yield rec


def format_conn_line(rec, sep="\t"):
    """Inverse of :func:`parse_conn_line` under the identity schema."""
    return sep.join(
        (
            repr(rec.ts),
            str(rec.orig_ip),
            str(rec.orig_port),
            str(rec.resp_ip),
            str(rec.resp_port),
            rec.proto,
            rec.conn_state,
            rec.history if rec.history else "-",
        )
    )


def write_zeek_log(records, fh, path_name="conn"):
    """Write records as a minimal Zeek-style TSV log (text stream)."""
    fh.write("#separator \\x09\n")
    fh.write("#set_separator\t,\n")
    fh.write("#empty_field\t(empty)\n")
    fh.write("#unset_field\t-\n")
    fh.write(f"#path\t{path_name}\n")
    fh.write("#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tconn_state\thistory\n")
    fh.write("#types\ttime\taddr\tport\taddr\tport\tenum\tstring\tstring\n")
    for rec in records:
        fh.write(format_conn_line(rec))
        fh.write("\n")
