import json
from collections import Counter

import pytest

from flowctx.flows import Label, format_flows
from flowctx.synth import ScenarioError, generate, load_scenario

from conftest import TABLE1_COUNTS


def base_spec(**extra):
    spec = {
        "seed": 3,
        "profiles": {"p": {"protocol": "TCP", "flows_per_connection": 100, "pattern": [{"bytes": 80, "duration_ms": 5}]}},
        "hosts": [{"src": "10.0.0.1", "profile": "p", "dsts": ["10.0.0.2"]}],
    }
    spec.update(extra)
    return spec


def test_degenerate_spec_identical_flows():
    flows = generate(base_spec())
    assert len(flows) == 100
    assert {(f.protocol, f.bytes, f.duration_ms, f.label) for f in flows} == {("TCP", 80, 5, Label.BENIGN)}


def test_rare_bytes_injection():
    inj = {"host": "10.0.0.1", "type": "rare-bytes", "start_fraction": 0.3, "flows": 20, "bytes": 37548}
    flows = generate(base_spec(injections=[inj]))
    bad = [f for f in flows if f.is_malicious]
    assert len(bad) == 20 and all(f.bytes == 37548 for f in bad)
    assert sum(f.bytes == 37548 for f in flows) == 20


def test_other_deviation_types():
    spec = base_spec()
    spec["profiles"]["p"]["pattern"] = [{"bytes": b, "duration_ms": 5} for b in (1, 2, 3, 4)]
    spec["hosts"][0]["dsts"] = ["a", "b"]
    spec["injections"] = [
        {"host": "10.0.0.1", "dst": "a", "type": "shuffled-order", "start_fraction": 0.5, "flows": 12},
        {"host": "10.0.0.1", "dst": "b", "type": "burst-durations", "start_fraction": 0.1, "flows": 10, "duration_ms": 9000},
    ]
    flows = generate(spec)
    shuffled = [f for f in flows if f.is_malicious and f.dst == "a"]
    burst = [f for f in flows if f.is_malicious and f.dst == "b"]
    assert len(shuffled) == 12 and len(burst) == 10
    assert all(f.duration_ms == 9000 for f in burst)
    assert Counter(f.bytes for f in shuffled) == Counter({1: 3, 2: 3, 3: 3, 4: 3})


def test_table1_frequencies_exact():
    flows = generate(load_scenario("table1"))
    assert Counter(f.bytes for f in flows) == Counter(TABLE1_COUNTS)


@pytest.mark.parametrize("name", ["table1", "cyclic_small", "eval_medium"])
def test_deterministic_and_label_totals(name):
    spec = load_scenario(name)
    a, b = generate(spec), generate(spec)
    assert format_flows(a) == format_flows(b)
    expected = sum(inj["flows"] for inj in spec.get("injections", []))
    assert sum(f.is_malicious for f in a) == expected
    assert [f.timestamp for f in a] == sorted(f.timestamp for f in a)


def test_seed_changes_output():
    spec = load_scenario("cyclic_small")
    other = json.loads(json.dumps(spec))
    other["seed"] = spec["seed"] + 1
    assert format_flows(generate(spec)) != format_flows(generate(other))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda s: s["profiles"]["p"].update(pattern=[]),
        lambda s: s["profiles"]["p"]["pattern"][0].update(bytes={"80": 0}),
        lambda s: s["profiles"]["p"]["pattern"][0].update(bytes=[]),
        lambda s: s["hosts"][0].update(profile="missing"),
        lambda s: s.update(hosts=[]),
        lambda s: s.pop("seed"),
        lambda s: s.update(injections=[{"host": "10.0.0.1", "type": "rare-bytes", "flows": 5}]),
        lambda s: s.update(injections=[{"host": "10.0.0.1", "type": "teleport", "flows": 20}]),
        lambda s: s.update(injections=[{"host": "10.0.0.1", "type": "rare-bytes", "flows": 90, "start_fraction": 0.5}]),
        lambda s: s.update(injections=[{"host": "nobody", "type": "rare-bytes", "flows": 20}]),
        lambda s: s.update(injections=[{"host": "10.0.0.1", "type": "rare-bytes", "flows": 20, "start_fraction": 0.1},
                                       {"host": "10.0.0.1", "type": "rare-bytes", "flows": 20, "start_fraction": 0.2}]),
    ],
)
def test_invalid_specs(mutate):
    spec = base_spec()
    mutate(spec)
    with pytest.raises(ScenarioError):
        generate(spec)
