"""Deterministic synthetic NetFlow scenarios with labeled anomaly injections.

A scenario is a JSON document::

    {
      "seed": 7,
      "start_ms": 1600000000000,
      "horizon_ms": 3600000,
      "window": 10,
      "profiles": {
        "web": {
          "protocol": "TCP",
          "flows_per_connection": [400, 600],
          "phase": "random",
          "pattern": [
            {"bytes": {"420": 3, "436": 1}, "duration_ms": 12},
            {"bytes": [1500, 1420], "duration_ms": {"80": 1, "95": 1}, "protocol": "TCP"}
          ]
        }
      },
      "hosts": [{"src": "10.0.0.1", "profile": "web", "dsts": ["10.0.1.1"]}],
      "injections": [
        {"host": "10.0.0.1", "dst": "10.0.1.1", "type": "rare-bytes",
         "start_fraction": 0.7, "flows": 20, "bytes": 37548}
      ]
    }

A palette is a single value, a list (uniform) or a ``{value: weight}`` map.
Every connection cycles through its profile's pattern; injections replace
a run of consecutive flows on one connection and are labeled malicious.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .flows import FlowRecord, Label
from .kmeans import make_rng

DEVIATIONS = ("rare-bytes", "shuffled-order", "burst-durations")
BUNDLED = ("table1", "cyclic_small", "eval_medium")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Palette:
    values: tuple[int, ...]
    cum: tuple[float, ...]

    @classmethod
    def parse(cls, raw) -> Palette:
        if isinstance(raw, (int, float, str)):
            items = [(int(raw), 1.0)]
        elif isinstance(raw, list):
            items = [(int(v), 1.0) for v in raw]
        elif isinstance(raw, dict):
            items = [(int(k), float(w)) for k, w in raw.items()]
        else:
            raise ScenarioError(f"bad palette {raw!r}")
        if not items:
            raise ScenarioError("empty palette")
        if any(w <= 0 for _, w in items):
            raise ScenarioError("palette weights must be positive")
        if any(v < 0 for v, _ in items):
            raise ScenarioError("palette values must be non-negative")
        total = sum(w for _, w in items)
        cum, acc = [], 0.0
        for _, w in items:
            acc += w / total
            cum.append(acc)
        return cls(tuple(v for v, _ in items), tuple(cum))

    def draw(self, rng: np.random.Generator) -> int:
        if len(self.values) == 1:
            return self.values[0]
        u = rng.random()
        for v, c in zip(self.values, self.cum):
            if u < c:
                return v
        return self.values[-1]


@dataclass(frozen=True)
class Step:
    protocol: str
    bytes: Palette
    duration: Palette


@dataclass(frozen=True)
class Profile:
    steps: tuple[Step, ...]
    length: tuple[int, int]
    random_phase: bool


def _length(raw) -> tuple[int, int]:
    lo, hi = (raw, raw) if isinstance(raw, int) else tuple(raw)
    if not 1 <= lo <= hi:
        raise ScenarioError(f"bad flows_per_connection {raw!r}")
    return int(lo), int(hi)


def _profile(name: str, raw: dict) -> Profile:
    proto = raw.get("protocol", "TCP")
    pattern = raw.get("pattern")
    if not pattern:
        raise ScenarioError(f"profile {name!r} has an empty pattern")
    steps = tuple(
        Step(st.get("protocol", proto).upper(), Palette.parse(st["bytes"]), Palette.parse(st["duration_ms"]))
        for st in pattern
    )
    phase = raw.get("phase", "random")
    return Profile(steps, _length(raw.get("flows_per_connection", 100)), phase == "random")


def load_scenario(source: str | Path) -> dict:
    """Read a scenario from a path, or one of the bundled names."""
    if str(source) in BUNDLED:
        text = resources.files("flowctx.scenarios").joinpath(f"{source}.json").read_text(encoding="utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    return json.loads(text)


def generate(spec: dict) -> list[FlowRecord]:
    """Flows for a scenario, ordered by timestamp; identical for identical specs."""
    try:
        seed = int(spec["seed"])
        profiles = {name: _profile(name, p) for name, p in spec["profiles"].items()}
        hosts = spec["hosts"]
    except KeyError as exc:
        raise ScenarioError(f"scenario lacks {exc}") from exc
    if not hosts:
        raise ScenarioError("scenario has no hosts")
    start = int(spec.get("start_ms", 0))
    horizon = int(spec.get("horizon_ms", 3_600_000))
    window = int(spec.get("window", 10))
    rng = make_rng(seed)

    conns: dict[tuple[str, str], list[list]] = {}
    for host in hosts:
        prof = profiles.get(host["profile"])
        if prof is None:
            raise ScenarioError(f"unknown profile {host['profile']!r}")
        for dst in host["dsts"]:
            lo, hi = prof.length
            n = lo + int(rng.random() * (hi - lo + 1))
            phase = int(rng.random() * len(prof.steps)) if prof.random_phase else 0
            rows = []
            for i in range(n):
                step = prof.steps[(phase + i) % len(prof.steps)]
                ts = start + int((i + rng.random()) * horizon / n)
                rows.append([ts, step.duration.draw(rng), step.protocol, step.bytes.draw(rng), False])
            key = (host["src"], dst)
            if key in conns:
                raise ScenarioError(f"duplicate connection {key}")
            conns[key] = rows

    for inj in spec.get("injections", []):
        _inject(conns, inj, window, rng)

    flows = []
    for (src, dst), rows in conns.items():
        for ts, dur, proto, nbytes, bad in rows:
            flows.append(FlowRecord(ts, dur, proto, src, dst, nbytes, Label.MALICIOUS if bad else Label.BENIGN))
    flows.sort(key=lambda f: f.timestamp)
    return flows


def _inject(conns, inj: dict, window: int, rng: np.random.Generator) -> None:
    kind = inj.get("type")
    if kind not in DEVIATIONS:
        raise ScenarioError(f"unknown deviation type {kind!r}")
    host = inj["host"]
    dst = inj.get("dst")
    if dst is None:
        candidates = sorted(k for k in conns if k[0] == host)
        if not candidates:
            raise ScenarioError(f"injection host {host!r} has no connections")
        key = candidates[0]
    else:
        key = (host, dst)
    if key not in conns:
        raise ScenarioError(f"injection targets unknown connection {key}")
    rows = conns[key]
    count = int(inj["flows"])
    if count < window:
        raise ScenarioError(f"injection of {count} flows is shorter than the window {window}")
    frac = float(inj.get("start_fraction", 0.5))
    if not 0 <= frac < 1:
        raise ScenarioError("start_fraction must be in [0, 1)")
    first = int(frac * len(rows))
    if first + count > len(rows):
        raise ScenarioError(f"injection of {count} flows does not fit connection {key} at {frac}")
    run = rows[first : first + count]
    if any(r[4] for r in run):
        raise ScenarioError(f"overlapping injections on {key}")

    if kind == "rare-bytes":
        pal = Palette.parse(inj.get("bytes", 37548))
        for r in run:
            r[3] = pal.draw(rng)
    elif kind == "burst-durations":
        pal = Palette.parse(inj["duration_ms"])
        for r in run:
            r[1] = pal.draw(rng)
    else:
        values = [(r[1], r[2], r[3]) for r in run]
        order = rng.permutation(len(values))
        for r, j in zip(run, order):
            r[1], r[2], r[3] = values[j]
    for r in run:
        r[4] = True
