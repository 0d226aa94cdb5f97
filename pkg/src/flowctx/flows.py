"""Flow records, CSV ingestion and per-connection grouping."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, TextIO

log = logging.getLogger(__name__)

CANONICAL_FIELDS = ("timestamp", "duration_ms", "protocol", "src", "dst", "bytes", "label")
REQUIRED_FIELDS = CANONICAL_FIELDS[:-1]


class FlowParseError(ValueError):
    """Raised when a flow file cannot be read with the given column map."""


class Label(str, Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"
    UNKNOWN = "unknown"

    def to_csv(self) -> str:
        return {"benign": "0", "malicious": "1", "unknown": ""}[self.value]


@dataclass(frozen=True)
class FlowRecord:
    timestamp: int
    duration_ms: int
    protocol: str
    src: str
    dst: str
    bytes: int
    label: Label = Label.UNKNOWN

    def __post_init__(self):
        if self.duration_ms < 0 or self.bytes < 0:
            raise ValueError("duration_ms and bytes must be non-negative")
        if not self.protocol.strip():
            raise ValueError("empty protocol token")

    @property
    def connection(self) -> ConnectionKey:
        return ConnectionKey(self.src, self.dst)

    @property
    def is_malicious(self) -> bool:
        return self.label is Label.MALICIOUS


@dataclass(frozen=True, order=True)
class ConnectionKey:
    """Directional (src, dst) pair; ports are deliberately not part of the key."""

    src: str
    dst: str

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}"

    @classmethod
    def parse(cls, text: str) -> ConnectionKey:
        src, sep, dst = text.partition("->")
        if not sep:
            raise ValueError(f"not a connection key: {text!r}")
        return cls(src, dst)


@dataclass
class ColumnMap:
    """Where each canonical field lives in a foreign delimited file.

    ``columns`` maps canonical field name to a header name or a 0-based
    column index. ``label`` is optional; every other canonical field must
    be mapped.
    """

    columns: dict[str, str | int] = field(default_factory=lambda: {f: f for f in CANONICAL_FIELDS})
    timestamp_format: str = "ms"  # ms | s | iso | strptime pattern
    duration_unit: str = "ms"  # ms | s
    delimiter: str = ","
    header: bool = True
    malicious_tokens: tuple[str, ...] = ("1", "malicious", "anomaly", "attack")
    benign_tokens: tuple[str, ...] = ("0", "benign", "normal", "background")
    malicious_pattern: str | None = None  # substring match, e.g. "Botnet" for CTU-13 labels

    def __post_init__(self):
        missing = [f for f in REQUIRED_FIELDS if f not in self.columns]
        if missing:
            raise ValueError(f"column map lacks fields: {', '.join(missing)}")
        unknown = set(self.columns) - set(CANONICAL_FIELDS)
        if unknown:
            raise ValueError(f"unknown canonical fields: {', '.join(sorted(unknown))}")
        if self.timestamp_format == "":
            raise ValueError("empty timestamp format")
        if self.duration_unit not in ("ms", "s"):
            raise ValueError(f"duration unit must be ms or s, got {self.duration_unit!r}")
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character")

    @classmethod
    def from_pairs(cls, pairs: Iterable[str]) -> ColumnMap:
        """Build a map from ``key=value`` strings (config-file lines or CLI flags)."""
        columns: dict[str, str | int] = {}
        opts: dict = {}
        for raw in pairs:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {raw!r}")
            key, value = key.strip(), value.strip()
            if key in CANONICAL_FIELDS:
                columns[key] = int(value) if value.isdigit() else value
            elif key == "timestamp_format":
                opts[key] = value
            elif key == "duration_unit":
                opts[key] = value
            elif key == "delimiter":
                opts[key] = "\t" if value in ("\\t", "tab") else value
            elif key == "header":
                opts[key] = value.lower() in ("1", "true", "yes")
            elif key == "malicious_pattern":
                opts[key] = value or None
            elif key in ("malicious_tokens", "benign_tokens"):
                opts[key] = tuple(t.strip().lower() for t in value.split("|") if t.strip())
            else:
                raise ValueError(f"unknown column map key {key!r}")
        base = {f: f for f in CANONICAL_FIELDS}
        base.update(columns)
        return cls(columns=base, **opts)

    @classmethod
    def from_file(cls, path: str | Path) -> ColumnMap:
        return cls.from_pairs(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class ParseResult:
    records: list[FlowRecord]
    skipped: int
    first_bad_row: int | None = None


def _resolve(columns: dict[str, str | int], header: list[str] | None) -> dict[str, int]:
    index = {}
    for name, src in columns.items():
        if header is not None and isinstance(src, str):
            if src not in header:
                if name == "label":
                    continue
                raise FlowParseError(f"column {src!r} for field {name!r} not in header")
            index[name] = header.index(src)
        elif header is not None and isinstance(src, int) and str(src) in header:
            index[name] = header.index(str(src))
        elif isinstance(src, int):
            index[name] = src
        else:
            raise FlowParseError(f"field {name!r} maps to name {src!r} but the file has no header")
    return index


def _parse_timestamp(text: str, fmt: str) -> int:
    if fmt == "ms":
        try:
            return int(text)
        except ValueError:
            return round(float(text))
    if fmt == "s":
        return round(float(text) * 1000)
    if fmt == "iso":
        dt = datetime.fromisoformat(text)
    else:
        dt = datetime.strptime(text, fmt)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1000)


def _parse_duration(text: str, unit: str) -> int:
    if unit == "ms":
        try:
            return int(text)
        except ValueError:
            return round(float(text))
    return round(float(text) * 1000)


def _parse_label(text: str, cmap: ColumnMap) -> Label:
    token = text.strip().lower()
    if not token:
        return Label.UNKNOWN
    if cmap.malicious_pattern is not None:
        return Label.MALICIOUS if cmap.malicious_pattern.lower() in token else Label.BENIGN
    if token in cmap.malicious_tokens:
        return Label.MALICIOUS
    if token in cmap.benign_tokens:
        return Label.BENIGN
    raise ValueError(f"unrecognised label {text!r}")


def _parse_row(row: list[str], idx: dict[str, int], cmap: ColumnMap) -> FlowRecord:
    def cell(name):
        return row[idx[name]].strip()

    label = _parse_label(cell("label"), cmap) if "label" in idx else Label.UNKNOWN
    return FlowRecord(
        timestamp=_parse_timestamp(cell("timestamp"), cmap.timestamp_format),
        duration_ms=_parse_duration(cell("duration_ms"), cmap.duration_unit),
        protocol=cell("protocol").upper(),
        src=cell("src"),
        dst=cell("dst"),
        bytes=int(cell("bytes")),
        label=label,
    )


def parse_flows(stream: TextIO, cmap: ColumnMap | None = None) -> ParseResult:
    """Read flow records in file order, skipping rows that fail to parse.

    Lines starting with ``#`` are comments. More than half of the data rows
    failing is treated as a wrong column map and raises ``FlowParseError``.
    """
    cmap = cmap or ColumnMap()
    try:
        lines = [ln for ln in stream if not ln.startswith("#")]
    except (OSError, UnicodeDecodeError) as exc:
        raise FlowParseError(f"unreadable flow stream: {exc}") from exc
    reader = csv.reader(lines, delimiter=cmap.delimiter)
    header = None
    if cmap.header:
        header = next(reader, None)
        if header is None:
            return ParseResult([], 0)
        header = [h.strip() for h in header]
    idx = _resolve(cmap.columns, header)

    records: list[FlowRecord] = []
    skipped = 0
    first_bad = None
    first_bad_msg = ""
    total = 0
    for rowno, row in enumerate(reader, start=2 if cmap.header else 1):
        if not row or all(not c.strip() for c in row):
            continue
        total += 1
        try:
            records.append(_parse_row(row, idx, cmap))
        except (ValueError, IndexError) as exc:
            skipped += 1
            if first_bad is None:
                first_bad, first_bad_msg = rowno, str(exc)
    if total and skipped * 2 > total:
        raise FlowParseError(
            f"{skipped} of {total} rows unparseable; first bad row {first_bad}: {first_bad_msg}"
        )
    if skipped:
        log.warning("skipped %d unparseable rows (first at line %d)", skipped, first_bad)
    return ParseResult(records, skipped, first_bad)


def read_flows(path: str | Path, cmap: ColumnMap | None = None) -> ParseResult:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return parse_flows(fh, cmap)
    except OSError as exc:
        raise FlowParseError(f"cannot read {path}: {exc}") from exc


def format_flows(flows: Iterable[FlowRecord], extra: dict[str, list] | None = None) -> str:
    """Serialize flows to the canonical CSV layout, optionally with appended columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    extra = extra or {}
    writer.writerow(list(CANONICAL_FIELDS) + list(extra))
    columns = list(extra.values())
    for i, f in enumerate(flows):
        row = [f.timestamp, f.duration_ms, f.protocol, f.src, f.dst, f.bytes, f.label.to_csv()]
        writer.writerow(row + [col[i] for col in columns])
    return buf.getvalue()


def group_by_connection(flows: Iterable[FlowRecord]) -> dict[ConnectionKey, list[FlowRecord]]:
    """Group flows per directional connection, each group sorted by timestamp.

    Sorting is stable, so equal timestamps keep input order. Keys are
    returned in sorted order so iteration is reproducible.
    """
    groups: dict[ConnectionKey, list[FlowRecord]] = {}
    for f in flows:
        groups.setdefault(f.connection, []).append(f)
    return {k: sorted(groups[k], key=lambda f: f.timestamp) for k in sorted(groups)}
