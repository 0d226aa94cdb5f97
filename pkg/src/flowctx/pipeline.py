"""End-to-end pipeline: encode, train, score, evaluate, compare."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .automaton import Automaton, build_fpta, finalize, merge_states
from .detector import (
    EvalReport,
    Threshold,
    compute_metrics,
    compute_threshold,
    flag_traces,
    label_hosts,
)
from .encoding import KINDS, TRANSFORMS, EncodingTable, fit_encoding
from .flows import ConnectionKey, FlowRecord, Label, format_flows, group_by_connection
from .traces import ProtocolCodec, Trace, build_traces, parse_symbol, symbolize

log = logging.getLogger(__name__)

FEATURES = ("protocol", "bytes", "duration_ms")
BUNDLE_FORMAT = "flowctx.encoding"
BUNDLE_VERSION = 1
SCORE_HEADER = ("connection", "start_index", "nll", "flag", "label")


class ConfigError(ValueError):
    """Invalid parameters (exit code 2)."""


class DataError(ValueError):
    """Input data unusable for the requested step (exit code 3)."""


@dataclass
class PipelineConfig:
    kind: str = "contextual"
    k: int = 25
    transform: str = "log1p"
    cutoff: float = 1000.0
    w: int = 10
    stride: int = 1
    alpha: float = 0.05
    min_count: int = 10
    epsilon: float = 0.5
    delta: float = 3.0
    seed: int = 0
    transductive: bool = True
    train_fraction: float = 0.5
    min_flows: int = 1000
    host_frac: float = 0.25
    min_flagged_traces: int = 1

    def validate(self) -> PipelineConfig:
        checks = [
            (self.kind in KINDS, f"kind must be one of {', '.join(KINDS)}"),
            (self.transform in TRANSFORMS, f"transform must be one of {', '.join(TRANSFORMS)}"),
            (self.k >= 2, "k must be >= 2"),
            (self.cutoff >= 0, "cutoff must be >= 0"),
            (self.w >= 2, "window must be >= 2"),
            (self.stride >= 1, "stride must be >= 1"),
            (0 < self.alpha < 1, "alpha must be in (0, 1)"),
            (self.min_count >= 0, "min_count must be >= 0"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (math.isfinite(self.delta) and self.delta >= 0, "delta must be a finite value >= 0"),
            (0 < self.train_fraction < 1, "train_fraction must be in (0, 1)"),
            (self.min_flows >= 0, "min_flows must be >= 0"),
            (0 <= self.host_frac <= 1, "host_frac must be in [0, 1]"),
            (self.min_flagged_traces >= 1, "min_flagged_traces must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def snapshot(self) -> dict:
        d = asdict(self)
        if math.isinf(d["cutoff"]):
            d["cutoff"] = "inf"
        return d


def provenance(config: PipelineConfig) -> dict:
    return {"tool": "flowctx", "version": __version__, "config": config.snapshot()}


def comment_line(config: PipelineConfig) -> str:
    return "# " + json.dumps(provenance(config), sort_keys=True) + "\n"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


# -- encoding ---------------------------------------------------------------


@dataclass
class EncodingBundle:
    codec: ProtocolCodec
    bytes_table: EncodingTable
    duration_table: EncodingTable
    meta: dict = field(default_factory=dict)

    def symbol(self, flow: FlowRecord) -> str:
        return symbolize(flow, self.codec, self.bytes_table, self.duration_table)

    def codes(self, flow: FlowRecord) -> tuple[int, int, int]:
        return parse_symbol(self.symbol(flow))

    def tables_dict(self) -> dict:
        return {
            "protocol": self.codec.to_dict(),
            "bytes": self.bytes_table.to_dict(),
            "duration_ms": self.duration_table.to_dict(),
        }

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.tables_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def code_ranges(self) -> tuple[int, int, int]:
        return self.codec.n_codes, self.bytes_table.n_codes, self.duration_table.n_codes

    def to_json(self, config: PipelineConfig) -> str:
        doc = {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "meta": {**provenance(config), **self.meta, "digest": self.digest},
            **self.tables_dict(),
        }
        return dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> EncodingBundle:
        d = json.loads(text)
        if d.get("format") != BUNDLE_FORMAT or d.get("version") != BUNDLE_VERSION:
            raise DataError("not a flowctx encoding file (or unsupported version)")
        return cls(
            ProtocolCodec(d["protocol"]),
            EncodingTable.from_dict(d["bytes"]),
            EncodingTable.from_dict(d["duration_ms"]),
            meta=d.get("meta", {}),
        )


def fit_bundle(
    train: Sequence[FlowRecord], test: Sequence[FlowRecord], config: PipelineConfig
) -> EncodingBundle:
    """Fit the protocol codec and both numeric tables.

    Transductive mode fits on train and test together; otherwise on train only.
    """
    fit_flows = list(train) + list(test) if config.transductive else list(train)
    if not fit_flows:
        raise DataError("no flows to fit the encoding on")
    groups = group_by_connection(fit_flows)
    tables = [
        fit_encoding(
            config.kind,
            feat,
            groups,
            k=config.k,
            seed=config.seed,
            transform=config.transform,
            cutoff=config.cutoff,
        )
        for feat in ("bytes", "duration_ms")
    ]
    codec = ProtocolCodec.fit(f.protocol for f in fit_flows)
    mode = "transductive" if config.transductive else "train-only"
    return EncodingBundle(codec, *tables, meta={"mode": mode, "fitted_flows": len(fit_flows)})


def encoded_csv(flows: Sequence[FlowRecord], bundle: EncodingBundle, config: PipelineConfig) -> str:
    codes = [bundle.codes(f) for f in flows]
    extra = {
        "proto_code": [c[0] for c in codes],
        "bytes_code": [c[1] for c in codes],
        "duration_code": [c[2] for c in codes],
        "symbol": [bundle.symbol(f) for f in flows],
    }
    return comment_line(config) + format_flows(flows, extra)


# -- traces, training, scoring -----------------------------------------------


def make_traces(flows: Iterable[FlowRecord], bundle: EncodingBundle, w: int, stride: int) -> list[Trace]:
    groups = group_by_connection(flows)
    seqs = {k: [(bundle.symbol(f), f.is_malicious) for f in seq] for k, seq in groups.items()}
    return build_traces(seqs, w, stride)


@dataclass
class TrainResult:
    automaton: Automaton
    fpta_states: int
    traces: list[Trace]
    scores: list[float]
    threshold: Threshold


def train(flows: Sequence[FlowRecord], bundle: EncodingBundle, config: PipelineConfig) -> TrainResult:
    """Learn an automaton from benign flows and derive the score threshold."""
    bad = sum(1 for f in flows if f.is_malicious)
    if bad:
        raise DataError(f"training input contains {bad} malicious-labeled flows")
    traces = make_traces(flows, bundle, config.w, config.stride)
    if not traces:
        raise DataError(f"no connection has at least {config.w} flows; nothing to train on")
    fpta = build_fpta(t.symbols for t in traces)
    merged = merge_states(fpta, config.alpha, config.min_count)
    automaton = finalize(merged, config.epsilon)
    automaton.check_normalization()
    scores = [automaton.nll(t.symbols) for t in traces]
    return TrainResult(automaton, fpta.n_states, traces, scores, compute_threshold(scores, config.delta))


def automaton_json(result: TrainResult, bundle: EncodingBundle, config: PipelineConfig) -> str:
    doc = result.automaton.to_dict()
    doc["meta"] = {
        **provenance(config),
        "encoding_digest": bundle.digest,
        "fpta_states": result.fpta_states,
        "states": result.automaton.n_states,
        "training_traces": len(result.traces),
        "score": "negative log-likelihood (natural log), termination not scored",
    }
    return dumps(doc)


def load_automaton(text: str) -> tuple[Automaton, dict]:
    d = json.loads(text)
    try:
        return Automaton.from_dict(d), d.get("meta", {})
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad automaton file: {exc}") from exc


def check_compatible(automaton: Automaton, meta: dict, bundle: EncodingBundle) -> None:
    digest = meta.get("encoding_digest")
    if digest is not None and digest != bundle.digest:
        raise DataError("automaton was trained with different encoding tables")
    limits = bundle.code_ranges
    for sym in automaton.alphabet:
        try:
            codes = parse_symbol(sym)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        if any(c >= lim for c, lim in zip(codes, limits)):
            raise DataError(f"automaton symbol {sym} lies outside the encoding's code range")


def threshold_json(threshold: Threshold, config: PipelineConfig) -> str:
    return dumps({**threshold.to_dict(), "meta": provenance(config)})


def load_threshold(text: str, delta: float | None = None) -> Threshold:
    d = json.loads(text)
    return Threshold(d["mu"], d["sigma"], d["delta"] if delta is None else delta)


@dataclass
class ScoreRow:
    connection: ConnectionKey
    start_index: int
    nll: float
    flag: bool
    label: bool | None  # True malicious, None unknown


def score(
    automaton: Automaton,
    bundle: EncodingBundle,
    flows: Sequence[FlowRecord],
    threshold: Threshold,
    config: PipelineConfig,
) -> list[ScoreRow]:
    traces = make_traces(flows, bundle, config.w, config.stride)
    groups = group_by_connection(flows)
    unknown = {
        k for k, seq in groups.items() if any(f.label is Label.UNKNOWN for f in seq)
    }
    nlls = [automaton.nll(t.symbols) for t in traces]
    flags = flag_traces(nlls, threshold)
    rows = []
    for t, nll, flag in zip(traces, nlls, flags):
        label = t.malicious
        if not label and t.connection in unknown:
            window = groups[t.connection][t.start_index : t.start_index + config.w]
            if any(f.label is Label.UNKNOWN for f in window):
                label = None
        rows.append(ScoreRow(t.connection, t.start_index, nll, flag, label))
    return rows


def scores_csv(rows: Sequence[ScoreRow], config: PipelineConfig) -> str:
    buf = io.StringIO()
    buf.write(comment_line(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for r in rows:
        label = "" if r.label is None else int(r.label)
        w.writerow([str(r.connection), r.start_index, repr(r.nll), int(r.flag), label])
    return buf.getvalue()


def read_scores(text: str) -> list[ScoreRow]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or tuple(reader.fieldnames) != SCORE_HEADER:
        raise DataError(f"score file header must be {','.join(SCORE_HEADER)}")
    rows = []
    for rec in reader:
        label = rec["label"].strip()
        rows.append(
            ScoreRow(
                ConnectionKey.parse(rec["connection"]),
                int(rec["start_index"]),
                float(rec["nll"]),
                rec["flag"].strip() == "1",
                None if label == "" else label == "1",
            )
        )
    return rows


# -- evaluation ----------------------------------------------------------------


def evaluate(rows: Sequence[ScoreRow], config: PipelineConfig | None = None) -> tuple[EvalReport, int]:
    """Metrics over labeled rows; returns the report and the number of unlabeled rows excluded."""
    labeled = [r for r in rows if r.label is not None]
    params = config.snapshot() if config else {}
    report = compute_metrics([r.flag for r in labeled], [bool(r.label) for r in labeled], params)
    return report, len(rows) - len(labeled)


def evaluate_hosts(rows: Sequence[ScoreRow], flows: Sequence[FlowRecord], config: PipelineConfig) -> EvalReport:
    predicted = label_hosts(
        [r.connection for r in rows],
        [r.flag for r in rows],
        flows,
        min_flows=config.min_flows,
        frac=config.host_frac,
        min_flagged_traces=config.min_flagged_traces,
    )
    actual: dict[str, bool] = {}
    for f in flows:
        actual[f.src] = actual.get(f.src, False) or f.is_malicious
    hosts = sorted(predicted)
    return compute_metrics([predicted[h] for h in hosts], [actual[h] for h in hosts], config.snapshot())


def split_flows(flows: Sequence[FlowRecord], train_fraction: float) -> tuple[list[FlowRecord], list[FlowRecord]]:
    """Time-ordered split: the earliest ``train_fraction`` of flows form the training part."""
    ordered = sorted(flows, key=lambda f: f.timestamp)
    cut = int(len(ordered) * train_fraction)
    return ordered[:cut], ordered[cut:]


@dataclass
class CompareRow:
    kind: str
    delta: float
    report: EvalReport
    alphabet: int
    states: int


def run_kind(
    train_flows: Sequence[FlowRecord],
    test_flows: Sequence[FlowRecord],
    config: PipelineConfig,
    deltas: Sequence[float],
) -> tuple[CompareRow, dict]:
    """Full pipeline for one encoding kind; the best delta (by F1, then smallest) wins."""
    bundle = fit_bundle(train_flows, test_flows, config)
    result = train(train_flows, bundle, config)
    rows = score(result.automaton, bundle, test_flows, result.threshold, config)
    labeled = [r for r in rows if r.label is not None]
    actual = [bool(r.label) for r in labeled]
    best = None
    sweep = {}
    for d in deltas:
        th = replace(result.threshold, delta=d)
        flags = flag_traces([r.nll for r in labeled], th)
        rep = compute_metrics(flags, actual, replace(config, delta=d).snapshot())
        sweep[repr(float(d))] = rep.to_dict()
        if best is None or rep.f1 > best[1].f1:
            best = (d, rep)
    row = CompareRow(config.kind, best[0], best[1], len(result.automaton.alphabet), result.automaton.n_states)
    artifacts = {"bundle": bundle, "train": result, "rows": rows, "sweep": sweep}
    return row, artifacts


def compare(
    flows: Sequence[FlowRecord],
    config: PipelineConfig,
    deltas: Sequence[float] = (1.0, 2.0, 3.0),
    kinds: Sequence[str] = KINDS,
) -> list[CompareRow]:
    train_part, test_part = split_flows(flows, config.train_fraction)
    dropped = sum(1 for f in train_part if f.is_malicious)
    if dropped:
        log.warning("dropping %d malicious flows from the training part", dropped)
        train_part = [f for f in train_part if not f.is_malicious]
    return [run_kind(train_part, test_part, replace(config, kind=kind), deltas)[0] for kind in kinds]


def compare_json(rows: Sequence[CompareRow], config: PipelineConfig, deltas: Sequence[float]) -> str:
    doc = {
        "meta": {
            **provenance(config),
            "deltas": list(deltas),
            "selection": "best F1 over the delta sweep, per encoding",
            "encoding_mode": "transductive" if config.transductive else "train-only",
        },
        "rows": [
            {"encoding": r.kind, "delta": r.delta, "alphabet": r.alphabet, "states": r.states, **r.report.to_dict()}
            for r in rows
        ],
    }
    return dumps(doc)
