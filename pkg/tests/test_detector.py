import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowctx.detector import (
    Threshold,
    compute_metrics,
    compute_threshold,
    f1_from,
    flag_traces,
    format_table,
    label_hosts,
    metrics_from_counts,
)
from flowctx.flows import ConnectionKey

from conftest import flow
from oracles import mean_pstd


def test_threshold_examples():
    assert compute_threshold([1, 1, 1], delta=2).value == 1.0
    t = compute_threshold([0, 2], delta=1)
    assert (t.mu, t.sigma, t.value) == (1.0, 1.0, 2.0)
    t = compute_threshold([1, 2, 3, 4], delta=0.5)
    assert t.mu == 2.5 and t.sigma == pytest.approx(math.sqrt(1.25))
    assert t.value == pytest.approx(3.059, abs=1e-3)


def test_threshold_errors():
    with pytest.raises(ValueError):
        compute_threshold([])
    with pytest.raises(ValueError):
        compute_threshold([1.0, math.inf])


def test_flag_strict():
    t = Threshold(1.0, 0.5, 2.0)
    assert flag_traces([t.value, t.value + 1e-9, t.value - 1], t) == [False, True, False]
    assert flag_traces([3.0], 2.0) == [True]


def test_three_sigma_rate_on_gaussian_scores():
    rng = np.random.default_rng(0)
    train = rng.normal(10, 2, size=20000)
    t = compute_threshold(train, delta=3)
    fresh = rng.normal(10, 2, size=20000)
    assert sum(flag_traces(fresh, t)) / len(fresh) <= 0.003


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=50), st.floats(0, 5))
def test_threshold_oracle_and_monotone(scores, delta):
    t = compute_threshold(scores, delta)
    mu, sd = mean_pstd(scores)
    assert t.mu == pytest.approx(mu, abs=1e-12, rel=1e-12)
    assert t.sigma == pytest.approx(sd, abs=1e-9, rel=1e-12)
    assert t.sigma >= 0 and t.value >= t.mu
    wider = compute_threshold(scores, delta + 0.5)
    low, high = flag_traces(scores, t), flag_traces(scores, wider)
    assert all(h <= l for l, h in zip(low, high))


# --- hosts ------------------------------------------------------------------------

def host_fixture(n_flows, n_conns):
    """One host spreading n_flows over n_conns destinations."""
    flows = [flow(i, src="H", dst=f"D{i % n_conns}") for i in range(n_flows)]
    keys = [ConnectionKey("H", f"D{j}") for j in range(n_conns)]
    return flows, keys


def test_host_below_flow_minimum_is_benign():
    flows, keys = host_fixture(999, 4)
    assert label_hosts(keys, [True] * 4, flows) == {"H": False}


def test_host_quarter_of_connections_is_malicious():
    flows, keys = host_fixture(2000, 4)
    assert label_hosts(keys, [True, False, False, False], flows) == {"H": True}


def test_host_without_anomalies_is_benign():
    flows, keys = host_fixture(2000, 4)
    assert label_hosts(keys, [False] * 4, flows) == {"H": False}


def test_host_rule_knobs():
    flows, keys = host_fixture(2000, 4)
    keys2 = keys + [keys[0]]
    assert not label_hosts(keys, [True, False, False, False], flows, frac=0.3)["H"]
    assert not label_hosts(keys2, [True, False, False, False, False], flows, min_flagged_traces=2)["H"]
    assert label_hosts(keys2, [True, False, False, False, True], flows, min_flagged_traces=2)["H"]
    with pytest.raises(ValueError):
        label_hosts(keys, [True], flows)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=8, max_size=8), st.floats(0, 1), st.floats(0, 1))
def test_host_monotone(flags, f1, f2):
    flows, keys = host_fixture(1200, 8)
    lo, hi = sorted((f1, f2))
    assert label_hosts(keys, flags, flows, frac=hi)["H"] <= label_hosts(keys, flags, flows, frac=lo)["H"]
    fewer = [f and i % 2 == 0 for i, f in enumerate(flags)]
    assert label_hosts(keys, fewer, flows)["H"] <= label_hosts(keys, flags, flows)["H"]


# --- metrics ----------------------------------------------------------------------

def test_perfect_predictions():
    r = compute_metrics([True, False, True, False], [True, False, True, False])
    assert r.accuracy == 1 and r.f1 == 1 and r.undefined == []


def test_reported_row_consistency():
    assert f1_from(0.960, 0.992) == pytest.approx(0.976, abs=1e-3)


def test_degenerate_metrics():
    r = metrics_from_counts(0, 0, 0, 5)
    assert (r.precision, r.recall, r.f1) == (0, 0, 0)
    assert "precision" in r.undefined and "f1" in r.undefined and "recall" not in r.undefined
    empty = metrics_from_counts(0, 0, 0, 0)
    assert empty.accuracy == 0 and "accuracy" in empty.undefined


def test_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([True], [True, False])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_metric_identities(pairs):
    pred, act = zip(*pairs)
    r = compute_metrics(pred, act)
    assert r.total == len(pairs)
    assert r.accuracy == (r.tp + r.tn) / r.total
    assert r.f1 == f1_from(r.precision, r.recall)


def test_format_table():
    r = metrics_from_counts(8, 2, 85, 5)
    text = format_table([("contextual", r), ("percentile", r)])
    lines = text.splitlines()
    assert lines[0].split() == ["Encoding", "Accuracy", "F1", "Prec.", "Rec."]
    assert lines[2].split() == ["contextual", "0.930", "0.696", "0.800", "0.615"]
