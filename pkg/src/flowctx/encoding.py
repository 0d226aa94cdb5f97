"""Context vectors and the three value encodings (contextual, percentile, frequency).

A context vector has 22 slots::

    0-9    decile bin of the previous value on the same connection
    10     previous value equal to the value itself
    11-20  decile bin of the next value
    21     next value equal to the value itself
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .flows import ConnectionKey, FlowRecord
from .kmeans import kmeans_fit, nearest_centroid

log = logging.getLogger(__name__)

N_BINS = 10
VECTOR_LEN = 2 * (N_BINS + 1)
PREV_SELF = N_BINS
NEXT_OFFSET = N_BINS + 1
NEXT_SELF = VECTOR_LEN - 1

TABLE_FORMAT = "flowctx.encoding-table"
TABLE_VERSION = 1
KINDS = ("contextual", "percentile", "frequency")
TRANSFORMS = ("log1p", "raw")

Feature = str | Callable[[FlowRecord], float]


def _getter(feature: Feature) -> Callable[[FlowRecord], float]:
    if callable(feature):
        return feature
    return lambda f: getattr(f, feature)


def _feature_name(feature: Feature) -> str:
    return feature if isinstance(feature, str) else getattr(feature, "__name__", "feature")


def compute_decile_edges(values: Iterable[float]) -> list[float]:
    """Nearest-rank deciles 1..9 of the multiset, deduplicated.

    An edge equal to the maximum would only close an empty overflow bin,
    so it is dropped: constant input yields no edges (one bin).
    """
    ordered = sorted(values)
    n = len(ordered)
    if n == 0:
        raise ValueError("cannot compute deciles of an empty multiset")
    top = ordered[-1]
    edges: list[float] = []
    for i in range(1, N_BINS):
        rank = (i * n + N_BINS - 1) // N_BINS  # ceil(i*n/10) without float error
        e = ordered[rank - 1]
        if e < top and (not edges or e > edges[-1]):
            edges.append(e)
    return edges


def bin_index(x: float, edges: Sequence[float]) -> int:
    """Smallest i with x <= edges[i]; len(edges) for the overflow bin."""
    return bisect_left(edges, x)


@dataclass(frozen=True)
class ContextVector:
    value: float
    counts: tuple[int, ...]
    total_freq: int

    @property
    def prev_total(self) -> int:
        return sum(self.counts[:NEXT_OFFSET])

    @property
    def next_total(self) -> int:
        return sum(self.counts[NEXT_OFFSET:])


def build_context_vectors(
    feature: Feature,
    connections: Mapping[ConnectionKey, Sequence[FlowRecord]] | Iterable[Sequence[FlowRecord]],
    edges: Sequence[float],
) -> dict[float, ContextVector]:
    """Count, for every unique value, the binned values seen just before and after it."""
    get = _getter(feature)
    seqs = connections.values() if isinstance(connections, Mapping) else connections
    counts: dict[float, list[int]] = {}
    freq: Counter = Counter()
    for seq in seqs:
        vals = [get(f) for f in seq]
        for p, v in enumerate(vals):
            freq[v] += 1
            slots = counts.setdefault(v, [0] * VECTOR_LEN)
            if p > 0:
                u = vals[p - 1]
                slots[PREV_SELF if u == v else bin_index(u, edges)] += 1
            if p + 1 < len(vals):
                w = vals[p + 1]
                slots[NEXT_SELF if w == v else NEXT_OFFSET + bin_index(w, edges)] += 1
    return {v: ContextVector(v, tuple(counts[v]), freq[v]) for v in sorted(counts)}


def _transform(matrix: np.ndarray, transform: str) -> np.ndarray:
    if transform == "log1p":
        return np.log1p(matrix)
    if transform == "raw":
        return matrix.astype(float)
    raise ValueError(f"unknown vector transform {transform!r}")


@dataclass
class EncodingTable:
    feature: str
    kind: str
    mapping: dict[float, int]
    edges: list[float] = field(default_factory=list)
    centroids: list[list[float]] | None = None
    transform: str | None = None
    fallback: dict = field(default_factory=dict)

    @property
    def n_codes(self) -> int:
        return max(self.mapping.values()) + 1 if self.mapping else 0

    def encode(self, v: float) -> int:
        return encode_value(self, v)

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "feature": self.feature,
            "kind": self.kind,
            "transform": self.transform,
            "edges": list(self.edges),
            "centroids": self.centroids,
            "fallback": self.fallback,
            "mapping": [[_num(v), c] for v, c in sorted(self.mapping.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> EncodingTable:
        if d.get("format") != TABLE_FORMAT:
            raise ValueError("not an encoding table")
        if d.get("version") != TABLE_VERSION:
            raise ValueError(f"unsupported encoding table version {d.get('version')}")
        return cls(
            feature=d["feature"],
            kind=d["kind"],
            mapping={v: c for v, c in d["mapping"]},
            edges=list(d["edges"]),
            centroids=d["centroids"],
            transform=d["transform"],
            fallback=d["fallback"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def fit_contextual_encoding(
    feature: Feature,
    connections: Mapping[ConnectionKey, Sequence[FlowRecord]],
    k: int = 25,
    seed: int = 0,
    transform: str = "log1p",
    n_init: int = 10,
) -> EncodingTable:
    """Cluster the context vectors of all unique values; the cluster id is the code.

    Cluster ids are renumbered so that codes follow the smallest member
    value of each cluster, which makes tables comparable across seeds.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    get = _getter(feature)
    all_values = [get(f) for seq in connections.values() for f in seq]
    if not all_values:
        raise ValueError("no values to encode")
    edges = compute_decile_edges(all_values)
    vectors = build_context_vectors(get, connections, edges)
    values = list(vectors)
    X = _transform(np.array([vectors[v].counts for v in values], dtype=float), transform)

    effective = k
    if effective > len(values):
        log.warning("k=%d exceeds %d unique values; clamping", k, len(values))
        effective = len(values)
    distinct = len(np.unique(X, axis=0))
    if effective > distinct:
        log.warning("only %d distinct context vectors; clamping k to it", distinct)
        effective = distinct

    result = kmeans_fit(X, effective, seed=seed, n_init=n_init)
    order: dict[int, int] = {}
    for lab in result.labels:
        order.setdefault(int(lab), len(order))
    mapping = {v: order[int(lab)] for v, lab in zip(values, result.labels)}
    centroids = np.empty_like(result.centroids)
    for old, new in order.items():
        centroids[new] = result.centroids[old]
    zero = _transform(np.zeros((1, X.shape[1])), transform)[0]
    return EncodingTable(
        feature=_feature_name(feature),
        kind="contextual",
        mapping=mapping,
        edges=list(edges),
        centroids=centroids.tolist(),
        transform=transform,
        fallback={"rule": "nearest_centroid", "unseen_code": nearest_centroid(zero, centroids)},
    )


def fit_percentile_encoding(feature: Feature, values: Iterable[float]) -> EncodingTable:
    vals = list(values)
    edges = compute_decile_edges(vals)
    bins = sorted({bin_index(v, edges) for v in vals})
    bin_codes = {b: i for i, b in enumerate(bins)}
    mapping = {v: bin_codes[bin_index(v, edges)] for v in sorted(set(vals))}
    return EncodingTable(
        feature=_feature_name(feature),
        kind="percentile",
        mapping=mapping,
        edges=list(edges),
        fallback={"rule": "bin_index", "bin_codes": [bin_codes.get(b) for b in range(len(edges) + 1)]},
    )


def fit_frequency_encoding(
    feature: Feature, values: Iterable[float], cutoff: float = 1000
) -> EncodingTable:
    """Values seen more than ``cutoff`` times get their own code; the rest are binned.

    Bin codes come first; frequent-value codes follow in ascending value order.
    """
    vals = list(values)
    if not vals:
        raise ValueError("no values to encode")
    freq = Counter(vals)
    frequent = sorted(v for v, c in freq.items() if c > cutoff)
    rest = [v for v in vals if freq[v] <= cutoff]
    mapping: dict[float, int] = {}
    edges: list[float] = []
    bin_codes: list[int | None] = []
    if rest:
        edges = compute_decile_edges(rest)
        bins = sorted({bin_index(v, edges) for v in rest})
        code_of = {b: i for i, b in enumerate(bins)}
        bin_codes = [code_of.get(b) for b in range(len(edges) + 1)]
        for v in sorted(set(rest)):
            mapping[v] = code_of[bin_index(v, edges)]
    base = len(set(mapping.values()))
    for i, v in enumerate(frequent):
        mapping[v] = base + i
    fallback = {"rule": "bin_index", "bin_codes": bin_codes}
    if not rest:
        fallback = {"rule": "nearest_value"}
    return EncodingTable(
        feature=_feature_name(feature),
        kind="frequency",
        mapping=dict(sorted(mapping.items())),
        edges=edges,
        fallback=fallback,
    )


def encode_value(table: EncodingTable, v: float) -> int:
    """Stored code for a fitted value, otherwise the table's fallback rule."""
    code = table.mapping.get(v)
    if code is not None:
        return code
    rule = table.fallback.get("rule")
    if rule == "nearest_centroid":
        return table.fallback["unseen_code"]
    if rule == "bin_index":
        code = table.fallback["bin_codes"][bin_index(v, table.edges)]
        if code is not None:
            return code
    # nearest fitted value, ties to the smaller value
    nearest = min(table.mapping, key=lambda u: (abs(u - v), u))
    return table.mapping[nearest]


def fit_encoding(
    kind: str,
    feature: Feature,
    connections: Mapping[ConnectionKey, Sequence[FlowRecord]],
    *,
    k: int = 25,
    seed: int = 0,
    transform: str = "log1p",
    cutoff: float = 1000,
) -> EncodingTable:
    if kind == "contextual":
        return fit_contextual_encoding(feature, connections, k=k, seed=seed, transform=transform)
    get = _getter(feature)
    values = [get(f) for seq in connections.values() for f in seq]
    if kind == "percentile":
        return fit_percentile_encoding(feature, values)
    if kind == "frequency":
        return fit_frequency_encoding(feature, values, cutoff=cutoff)
    raise ValueError(f"unknown encoding kind {kind!r}")


def partition_of(table: EncodingTable) -> set[frozenset]:
    """Groups of values sharing a code, independent of the code numbers."""
    groups: dict[int, set] = {}
    for v, c in table.mapping.items():
        groups.setdefault(c, set()).add(v)
    return {frozenset(g) for g in groups.values()}

