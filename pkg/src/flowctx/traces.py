"""Flow symbolization and sliding-window traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

from .encoding import EncodingTable, encode_value
from .flows import ConnectionKey, FlowRecord

CORE_PROTOCOLS = {"TCP": 0, "UDP": 1, "ICMP": 2}


@dataclass(frozen=True)
class ProtocolCodec:
    """Integer codes for protocol tokens.

    TCP, UDP and ICMP are pinned to 0, 1, 2; other tokens seen at fit time
    follow in lexicographic order. Tokens never seen share the next free id.
    """

    mapping: Mapping[str, int]

    @classmethod
    def fit(cls, tokens: Iterable[str]) -> ProtocolCodec:
        mapping = dict(CORE_PROTOCOLS)
        extra = sorted({t.upper() for t in tokens} - set(mapping))
        for i, tok in enumerate(extra, start=len(CORE_PROTOCOLS)):
            mapping[tok] = i
        return cls(mapping)

    def code(self, token: str) -> int:
        return self.mapping.get(token.upper(), len(self.mapping))

    @property
    def n_codes(self) -> int:
        return len(self.mapping) + 1

    def to_dict(self) -> dict:
        return dict(sorted(self.mapping.items(), key=lambda kv: kv[1]))


def make_symbol(proto: int, bytes_code: int, duration_code: int) -> str:
    return f"{proto}_{bytes_code}_{duration_code}"


def parse_symbol(symbol: str) -> tuple[int, int, int]:
    parts = symbol.split("_")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"malformed symbol {symbol!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def symbolize(
    flow: FlowRecord,
    codec: ProtocolCodec,
    bytes_table: EncodingTable,
    dur_table: EncodingTable,
) -> str:
    """``<proto>_<bytes>_<duration>`` token for one flow."""
    return make_symbol(
        codec.code(flow.protocol),
        encode_value(bytes_table, flow.bytes),
        encode_value(dur_table, flow.duration_ms),
    )


@dataclass(frozen=True)
class Trace:
    connection: ConnectionKey
    start_index: int
    symbols: tuple[str, ...]
    malicious: bool = False

    @property
    def label(self) -> str:
        return "malicious" if self.malicious else "benign"

    def __len__(self) -> int:
        return len(self.symbols)


def build_traces(
    connections: Mapping[ConnectionKey, Sequence[tuple[str, bool]]],
    w: int = 10,
    stride: int = 1,
) -> list[Trace]:
    """Slide a window of ``w`` symbols over every connection.

    ``connections`` maps each key to its ordered ``(symbol, is_malicious)``
    pairs. Connections shorter than ``w`` yield nothing; a window is
    malicious when any of its flows is.
    """
    if w < 2:
        raise ValueError("window size must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    traces = []
    for key in sorted(connections):
        seq = connections[key]
        syms = tuple(s for s, _ in seq)
        bad = [m for _, m in seq]
        for start in range(0, len(seq) - w + 1, stride):
            traces.append(Trace(key, start, syms[start : start + w], any(bad[start : start + w])))
    return traces


def write_traces(traces: Sequence[Trace], fh: TextIO) -> None:
    """Abbadingo-style dump: ``<count> <alphabet>`` then ``<label> <len> sym ...``."""
    alphabet = {s for t in traces for s in t.symbols}
    fh.write(f"{len(traces)} {len(alphabet)}\n")
    for t in traces:
        fh.write(f"{int(t.malicious)} {len(t.symbols)} {' '.join(t.symbols)}\n")


def read_traces(fh: TextIO) -> list[tuple[bool, tuple[str, ...]]]:
    header = fh.readline().split()
    if len(header) != 2:
        raise ValueError("bad trace file header")
    out = []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        label, length, syms = int(parts[0]), int(parts[1]), tuple(parts[2:])
        if len(syms) != length:
            raise ValueError(f"trace length {len(syms)} does not match declared {length}")
        out.append((bool(label), syms))
    if len(out) != int(header[0]):
        raise ValueError("trace count does not match header")
    return out
