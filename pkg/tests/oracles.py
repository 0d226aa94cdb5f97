"""Independent reference computations used by the tests."""

import itertools
import math

import numpy as np


def brute_force_inertia(points, k):
    """Minimum within-cluster sum of squares over every assignment into k non-empty clusters."""
    X = np.asarray(points, dtype=float)
    n = len(X)
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int8)
    between = np.zeros(len(labels))
    valid = np.ones(len(labels), dtype=bool)
    for c in range(k):
        member = (labels == c).astype(float)  # (P, n)
        counts = member.sum(axis=1)
        valid &= counts > 0
        sums = member @ X  # (P, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            between += np.where(counts > 0, (sums**2).sum(axis=1) / counts, 0.0)
    inertia = (X**2).sum() - between
    return float(inertia[valid].min())


def nearest_rank_edges(values):
    """Decile edges through numpy's inverted-CDF percentile, collapsed, maximum dropped."""
    arr = np.asarray(values)
    edges = []
    for i in range(1, 10):
        e = np.percentile(arr, 10 * i, method="inverted_cdf").item()
        if e < arr.max() and (not edges or e > edges[-1]):
            edges.append(e)
    return edges


def prefix_probability(traces, trace):
    """Fraction of training traces having ``trace`` as a prefix."""
    t = tuple(trace)
    return sum(1 for s in traces if tuple(s[: len(t)]) == t) / len(traces)


def mean_pstd(xs):
    n = len(xs)
    mu = math.fsum(xs) / n
    return mu, math.sqrt(math.fsum((x - mu) ** 2 for x in xs) / n)


def random_trace_sets(seed, count, max_alphabet=5, max_len=6, max_traces=12):
    """Reproducible small trace sets over letters a.. for the learner tests."""
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(count):
        a = int(rng.integers(1, max_alphabet + 1))
        letters = "abcde"[:a] if a <= 5 else [f"s{i}" for i in range(a)]
        n = int(rng.integers(1, max_traces + 1))
        traces = []
        for _ in range(n):
            length = int(rng.integers(1, max_len + 1))
            traces.append(tuple(letters[int(i)] for i in rng.integers(0, a, size=length)))
        sets.append(traces)
    return sets


def fpta_state_count(traces):
    """Number of distinct prefixes, the empty prefix included."""
    return len({tuple(t[:i]) for t in traces for i in range(len(t) + 1)})
