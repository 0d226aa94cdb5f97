"""Probabilistic automaton learning (prefix tree + ALERGIA-style merging) and scoring."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

AUTOMATON_FORMAT = "flowctx.automaton"
AUTOMATON_VERSION = 1


class InvariantError(AssertionError):
    """A learned structure violated count conservation or normalization."""


@dataclass
class CountGraph:
    """Mutable count-annotated state graph; a prefix tree before any merge.

    For every state ``count == final + sum(out.values())``. ``out[s][sym]``
    is the number of traversals of the ``sym`` edge leaving ``s``.
    """

    count: list[int] = field(default_factory=lambda: [0])
    final: list[int] = field(default_factory=lambda: [0])
    out: list[dict] = field(default_factory=lambda: [{}])
    trans: list[dict] = field(default_factory=lambda: [{}])
    path: list[tuple] = field(default_factory=lambda: [()])
    alphabet: list = field(default_factory=list)
    root: int = 0

    def add_state(self, path: tuple) -> int:
        self.count.append(0)
        self.final.append(0)
        self.out.append({})
        self.trans.append({})
        self.path.append(path)
        return len(self.count) - 1

    @property
    def n_states(self) -> int:
        return len(self.reachable())

    def reachable(self) -> list[int]:
        """States reachable from the root, breadth first with sorted symbols."""
        seen = {self.root}
        order = [self.root]
        queue = deque(order)
        while queue:
            s = queue.popleft()
            for sym in sorted(self.trans[s], key=_sym_key):
                t = self.trans[s][sym]
                if t not in seen:
                    seen.add(t)
                    order.append(t)
                    queue.append(t)
        return order

    def check_conservation(self) -> None:
        for s in self.reachable():
            if self.count[s] != self.final[s] + sum(self.out[s].values()):
                raise InvariantError(f"count conservation violated at state {s}")
            if set(self.out[s]) != set(self.trans[s]):
                raise InvariantError(f"emission/transition mismatch at state {s}")

    def compact(self) -> CountGraph:
        """Copy holding only reachable states, renumbered in breadth-first order."""
        order = self.reachable()
        new_id = {s: i for i, s in enumerate(order)}
        g = CountGraph(count=[], final=[], out=[], trans=[], path=[], alphabet=list(self.alphabet))
        for s in order:
            g.count.append(self.count[s])
            g.final.append(self.final[s])
            g.out.append(dict(self.out[s]))
            g.trans.append({sym: new_id[t] for sym, t in self.trans[s].items()})
            g.path.append(self.path[s])
        return g


def _sym_key(sym):
    return (str(type(sym)), sym)


def build_fpta(traces: Iterable[Sequence[Hashable]]) -> CountGraph:
    """Frequency prefix tree of the traces; every node counts the traces through it."""
    g = CountGraph()
    alphabet = set()
    n = 0
    for trace in traces:
        n += 1
        s = g.root
        g.count[s] += 1
        for sym in trace:
            alphabet.add(sym)
            g.out[s][sym] = g.out[s].get(sym, 0) + 1
            nxt = g.trans[s].get(sym)
            if nxt is None:
                nxt = g.add_state(g.path[s] + (sym,))
                g.trans[s][sym] = nxt
            s = nxt
            g.count[s] += 1
        g.final[s] += 1
    if n == 0:
        raise ValueError("cannot build a prefix tree from an empty trace set")
    g.alphabet = sorted(alphabet, key=_sym_key)
    return g


def hoeffding_bound(n1: int, n2: int, alpha: float) -> float:
    return math.sqrt(0.5 * math.log(2.0 / alpha)) * (1.0 / math.sqrt(n1) + 1.0 / math.sqrt(n2))


def hoeffding_compatible(n1: int, f1: int, n2: int, f2: int, alpha: float) -> bool:
    """True when f1/n1 and f2/n2 differ by less than the Hoeffding bound."""
    if n1 <= 0 or n2 <= 0:
        raise ValueError("sample sizes must be positive")
    if not (0 <= f1 <= n1 and 0 <= f2 <= n2):
        raise ValueError("frequencies must lie in [0, n]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return abs(f1 / n1 - f2 / n2) < hoeffding_bound(n1, n2, alpha)


class _Merger:
    def __init__(self, g: CountGraph, alpha: float, test_termination: bool):
        self.g = g
        self.scale = math.sqrt(0.5 * math.log(2.0 / alpha))
        self.test_termination = test_termination

    def _differ(self, n1, f1, n2, f2) -> bool:
        return abs(f1 / n1 - f2 / n2) >= self.scale * (1.0 / math.sqrt(n1) + 1.0 / math.sqrt(n2))

    def compatible(self, r: int, b: int) -> bool:
        g = self.g
        stack = [(r, b)]
        while stack:
            r, b = stack.pop()
            if self.test_termination:
                nr, nb = g.count[r], g.count[b]
                if self._differ(nr, g.final[r], nb, g.final[b]):
                    return False
            else:
                # next-symbol distribution given that the trace continues
                nr, nb = g.count[r] - g.final[r], g.count[b] - g.final[b]
            if nr > 0 and nb > 0:
                out_r, out_b = g.out[r], g.out[b]
                for sym in out_r.keys() | out_b.keys():
                    if self._differ(nr, out_r.get(sym, 0), nb, out_b.get(sym, 0)):
                        return False
            for sym, tb in g.trans[b].items():
                tr = g.trans[r].get(sym)
                if tr is not None:
                    stack.append((tr, tb))
        return True

    def fold(self, r: int, b: int) -> None:
        g = self.g
        stack = [(r, b)]
        while stack:
            r, b = stack.pop()
            g.count[r] += g.count[b]
            g.final[r] += g.final[b]
            for sym, tb in g.trans[b].items():
                g.out[r][sym] = g.out[r].get(sym, 0) + g.out[b][sym]
                tr = g.trans[r].get(sym)
                if tr is None:
                    g.trans[r][sym] = tb
                else:
                    stack.append((tr, tb))


def merge_states(
    fpta: CountGraph,
    alpha: float = 0.05,
    min_count: int = 10,
    *,
    test_termination: bool = False,
    check: bool = False,
) -> CountGraph:
    """Red-blue state merging with Hoeffding compatibility tests.

    Blue states are taken by descending count, then by access path. A blue
    state seen fewer than ``min_count`` times is promoted untested. With
    ``test_termination`` off (default), termination ratios are not compared
    and symbol ratios are taken over continuing traversals only, which suits
    fixed-length windows. ``check`` re-verifies count conservation after
    every merge. The input graph is left untouched.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    g = fpta.compact()
    m = _Merger(g, alpha, test_termination)
    red = [g.root]
    red_set = {g.root}

    while True:
        best = None  # (key, parent, sym, state)
        for r in red:
            for sym, t in g.trans[r].items():
                if t in red_set:
                    continue
                key = (-g.count[t], _path_key(g.path[t]))
                if best is None or key < best[0]:
                    best = (key, r, sym, t)
        if best is None:
            break
        _, parent, sym, b = best
        if g.count[b] < min_count:
            # every remaining blue state is at least as rare; no more tests can run
            for s in g.reachable():
                if s not in red_set:
                    red_set.add(s)
                    red.append(s)
            break
        target = next((r for r in red if m.compatible(r, b)), None)
        if target is None:
            red.append(b)
            red_set.add(b)
            continue
        g.trans[parent][sym] = target
        m.fold(target, b)
        if check:
            g.check_conservation()
    return g.compact()


def _path_key(path: tuple) -> tuple:
    return tuple(_sym_key(s) for s in path)


@dataclass
class TraceScore:
    trace: object
    nll: float


class Automaton:
    """Finalized automaton with additively smoothed probabilities.

    For a state with traversal count T over an alphabet of A symbols::

        emission(sym) = (out[sym] + eps) / (T + eps * (A + 1))
        termination   = (final + eps)    / (T + eps * (A + 1))
    """

    def __init__(self, graph: CountGraph, epsilon: float):
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        self.graph = graph
        self.epsilon = float(epsilon)
        self.alphabet = list(graph.alphabet)
        self._alpha_set = set(self.alphabet)
        A = len(self.alphabet)
        self._denom = [c + self.epsilon * (A + 1) for c in graph.count]

    @property
    def n_states(self) -> int:
        return len(self.graph.count)

    @property
    def root(self) -> int:
        return self.graph.root

    def floor(self, s: int) -> float:
        return self.epsilon / self._denom[s]

    def emission(self, s: int, sym) -> float:
        if sym not in self._alpha_set:
            return self.floor(s)
        return (self.graph.out[s].get(sym, 0) + self.epsilon) / self._denom[s]

    def termination(self, s: int) -> float:
        return (self.graph.final[s] + self.epsilon) / self._denom[s]

    def next_state(self, s: int, sym) -> int | None:
        return self.graph.trans[s].get(sym)

    def check_normalization(self, tol: float = 1e-9) -> None:
        for s in range(self.n_states):
            total = self.termination(s) + sum(self.emission(s, a) for a in self.alphabet)
            if abs(total - 1.0) > tol:
                raise InvariantError(f"state {s} probabilities sum to {total!r}")

    def nll(self, symbols: Sequence) -> float:
        """Negative log-likelihood of a window; termination is not scored.

        An undefined transition sends the walk back to the root.
        """
        s = self.graph.root
        total = 0.0
        for sym in symbols:
            p = self.emission(s, sym)
            if p <= 0.0:
                return math.inf
            total -= math.log(p)
            nxt = self.graph.trans[s].get(sym)
            s = self.graph.root if nxt is None else nxt
        return total

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "format": AUTOMATON_FORMAT,
            "version": AUTOMATON_VERSION,
            "epsilon": self.epsilon,
            "alphabet": self.alphabet,
            "root": g.root,
            "states": [
                {
                    "id": s,
                    "count": g.count[s],
                    "final": g.final[s],
                    "out": dict(sorted(g.out[s].items())),
                    "trans": dict(sorted(g.trans[s].items())),
                }
                for s in range(len(g.count))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Automaton:
        if d.get("format") != AUTOMATON_FORMAT:
            raise ValueError("not an automaton file")
        if d.get("version") != AUTOMATON_VERSION:
            raise ValueError(f"unsupported automaton version {d.get('version')}")
        states = sorted(d["states"], key=lambda st: st["id"])
        g = CountGraph(
            count=[st["count"] for st in states],
            final=[st["final"] for st in states],
            out=[dict(st["out"]) for st in states],
            trans=[{k: int(v) for k, v in st["trans"].items()} for st in states],
            path=[() for _ in states],
            alphabet=list(d["alphabet"]),
            root=d["root"],
        )
        return cls(g, d["epsilon"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_dot(self) -> str:
        lines = ["digraph automaton {", "  rankdir=LR;", "  node [shape=circle];"]
        for s in range(self.n_states):
            lines.append(f'  s{s} [label="{s}\\n{self.graph.count[s]}"];')
        for s in range(self.n_states):
            for sym, t in sorted(self.graph.trans[s].items(), key=lambda kv: _sym_key(kv[0])):
                lines.append(f'  s{s} -> s{t} [label="{sym} {self.emission(s, sym):.3g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def finalize(graph: CountGraph, epsilon: float = 0.5) -> Automaton:
    return Automaton(graph, epsilon)


def score_trace(automaton: Automaton, trace) -> TraceScore:
    symbols = getattr(trace, "symbols", trace)
    return TraceScore(trace, automaton.nll(symbols))


def learn(
    traces: Iterable[Sequence[Hashable]],
    alpha: float = 0.05,
    min_count: int = 10,
    epsilon: float = 0.5,
    **kwargs,
) -> Automaton:
    """Prefix tree, merge, finalize."""
    return finalize(merge_states(build_fpta(traces), alpha, min_count, **kwargs), epsilon)
