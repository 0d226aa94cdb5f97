"""Thresholding, trace flagging, host labeling and evaluation metrics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .flows import ConnectionKey, FlowRecord


@dataclass(frozen=True)
class Threshold:
    mu: float
    sigma: float
    delta: float

    @property
    def value(self) -> float:
        return self.mu + self.delta * self.sigma

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "delta": self.delta, "value": self.value}


def compute_threshold(train_scores: Sequence[float], delta: float = 3.0) -> Threshold:
    """mu + delta * sigma over training nll scores (population standard deviation)."""
    scores = [float(s) for s in train_scores]
    if not scores:
        raise ValueError("no training scores")
    if not all(math.isfinite(s) for s in scores):
        raise ValueError("training scores must be finite")
    n = len(scores)
    mu = math.fsum(scores) / n
    var = math.fsum((s - mu) ** 2 for s in scores) / n
    return Threshold(mu, math.sqrt(var), float(delta))


def flag_traces(nlls: Iterable[float], threshold: Threshold | float) -> list[bool]:
    """True (anomaly) where nll is strictly above the threshold value."""
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    return [s > value for s in nlls]


def label_hosts(
    connections: Sequence[ConnectionKey],
    flags: Sequence[bool],
    flows: Iterable[FlowRecord],
    min_flows: int = 1000,
    frac: float = 0.25,
    min_flagged_traces: int = 1,
) -> dict[str, bool]:
    """Per source host: malicious when it produced at least ``min_flows`` flows
    and at least ``frac`` of its connections are anomalous.

    ``connections[i]`` is the connection of the trace flagged by ``flags[i]``.
    A connection is anomalous once ``min_flagged_traces`` of its traces are
    flagged. The fraction is over every connection the host made, including
    those too short to produce a trace.
    """
    if len(connections) != len(flags):
        raise ValueError("connections and flags differ in length")
    flow_count: dict[str, int] = defaultdict(int)
    host_conns: dict[str, set] = defaultdict(set)
    for f in flows:
        flow_count[f.src] += 1
        host_conns[f.src].add(f.connection)
    flagged: dict[ConnectionKey, int] = defaultdict(int)
    for key, flag in zip(connections, flags):
        if flag:
            flagged[key] += 1
    result = {}
    for host in sorted(flow_count):
        conns = host_conns[host]
        bad = sum(1 for c in conns if flagged[c] >= min_flagged_traces)
        result[host] = flow_count[host] >= min_flows and bad >= frac * len(conns)
    return result


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: list[str] = field(default_factory=list)
    parameters: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, parameters: dict | None = None) -> EvalReport:
    undefined: list[str] = []
    total = tp + fp + tn + fn
    accuracy = _ratio(tp + tn, total, "accuracy", undefined)
    precision = _ratio(tp, tp + fp, "precision", undefined)
    recall = _ratio(tp, tp + fn, "recall", undefined)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    return EvalReport(tp, fp, tn, fn, accuracy, precision, recall, f1, undefined, parameters or {})


def compute_metrics(predicted: Sequence[bool], actual: Sequence[bool], parameters: dict | None = None) -> EvalReport:
    """Confusion counts and derived metrics; the positive class is anomalous/malicious."""
    if len(predicted) != len(actual):
        raise ValueError(f"length mismatch: {len(predicted)} predictions, {len(actual)} labels")
    tp = fp = tn = fn = 0
    for p, a in zip(predicted, actual):
        if p and a:
            tp += 1
        elif p:
            fp += 1
        elif a:
            fn += 1
        else:
            tn += 1
    return metrics_from_counts(tp, fp, tn, fn, parameters)


def f1_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def format_table(rows: Sequence[tuple[str, EvalReport]], first: str = "Encoding") -> str:
    """Aligned text table with Accuracy / F1 / Prec. / Rec. columns."""
    head = [first, "Accuracy", "F1", "Prec.", "Rec."]
    body = [[name, f"{r.accuracy:.3f}", f"{r.f1:.3f}", f"{r.precision:.3f}", f"{r.recall:.3f}"] for name, r in rows]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"
