"""Hard assignment, cluster counting and partition comparison."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Optional

import numpy as np

from .graph import Graph, hard_modularity
from .losses import Bounds


def hard_assign(s) -> np.ndarray:
    """Row argmax of S; ties go to the lowest column."""
    s = getattr(s, "value", s)
    return np.argmax(np.asarray(s), axis=1)


def count_clusters(labels) -> int:
    return int(np.unique(np.asarray(labels)).size)


def ari(a, b) -> float:
    """Adjusted Rand index from the contingency table.

    Pair counts are exact integers; the only rounding is the final conversion
    of the rational result to float.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"partitions must be 1-D of equal length, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("ARI needs at least 2 nodes")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai.ravel(), bi.ravel()), 1)
    index = sum(comb(int(x), 2) for x in table.ravel())
    sum_a = sum(comb(int(x), 2) for x in table.sum(axis=1))
    sum_b = sum(comb(int(x), 2) for x in table.sum(axis=0))
    expected = Fraction(sum_a * sum_b, comb(n, 2))
    maximum = Fraction(sum_a + sum_b, 2)
    if maximum == expected:
        # only reachable when both partitions are the same trivial one
        # (all-in-one or all singletons)
        return 1.0
    return float((index - expected) / (maximum - expected))


@dataclass
class EvalReport:
    predicted_cluster_count: int
    hard_modularity: float
    within_bounds: bool
    ari: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "predicted_cluster_count": self.predicted_cluster_count,
            "ari": self.ari,
            "hard_modularity": self.hard_modularity,
            "within_bounds": self.within_bounds,
        }


def evaluate(g: Graph, s, bounds: Bounds, ground_truth=None) -> EvalReport:
    labels = hard_assign(s)
    count = count_clusters(labels)
    if ground_truth is None:
        ground_truth = g.labels
    score = None if ground_truth is None else ari(labels, ground_truth)
    return EvalReport(
        predicted_cluster_count=count,
        hard_modularity=hard_modularity(g, labels),
        within_bounds=bounds.lower <= count <= bounds.upper,
        ari=score,
    )
