"""Differentiable clustering objectives over a soft assignment matrix S (n x c).

Every function accepts either a plain array or an autodiff ``Node`` for S and
returns a scalar ``Node``; call ``.item()`` for the float value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import Graph, GraphError


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Bounds:
    lower: int
    upper: int
    min_size: Optional[int] = None

    def validate(self, n: Optional[int] = None) -> None:
        if not 1 <= self.lower <= self.upper:
            raise BoundsError(f"bounds need 1 <= l <= c, got l={self.lower}, c={self.upper}")
        if self.min_size is not None:
            if self.min_size < 1:
                raise BoundsError(f"minimum cluster size must be >= 1, got {self.min_size}")
            if n is not None and self.lower * self.min_size > n:
                raise BoundsError(
                    f"infeasible bounds: l*b = {self.lower}*{self.min_size} exceeds n={n}"
                )
        if n is not None and self.lower > n:
            raise BoundsError(f"infeasible bounds: l={self.lower} exceeds n={n}")


@dataclass(frozen=True)
class LossWeights:
    mu: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        for name, v in (("mu", self.mu), ("lambda", self.lam)):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


class ModularityOperator:
    """Graph constants needed by soft modularity, built once per graph."""

    def __init__(self, g: Graph):
        if g.m == 0:
            raise GraphError("modularity is undefined for a graph without edges")
        self.n = g.n
        self.two_m = 2.0 * g.m
        self.adjacency = ad.SparseConstant(g.adjacency(sparse=True))
        self.degrees = g.degrees()[None, :]

    def __call__(self, s) -> ad.Node:
        s = ad.constant(s)
        if s.shape[0] != self.n:
            raise ad.AutodiffError(f"S has {s.shape[0]} rows but the graph has {self.n} nodes")
        within = ad.reduce_sum(ad.diagonal(ad.matmul(ad.transpose(s), ad.matmul(self.adjacency, s))))
        ds = ad.matmul(self.degrees, s)
        null = ad.scale(ad.reduce_sum(ad.multiply(ds, ds)), 1.0 / self.two_m)
        return ad.scale(ad.subtract(within, null), 1.0 / self.two_m)


def soft_modularity(g: Graph, s) -> ad.Node:
    """Q = (1/2m) [ tr(S^T A S) - ||d^T S||^2 / 2m ]."""
    return ModularityOperator(g)(s)


def _row_normalised(s: ad.Node) -> ad.Node:
    return ad.divide(s, ad.row_max(s))


def constraint(s, lower: int) -> ad.Node:
    """l minus the sum of the l largest column maxima of the row-max-normalised S."""
    s = ad.constant(s)
    c = s.shape[1]
    if not 1 <= lower <= c:
        raise BoundsError(f"constraint needs 1 <= l <= c={c}, got l={lower}")
    peaks = ad.col_max(_row_normalised(s))
    return ad.subtract(float(lower), ad.top_k_sum(peaks, lower))


def constraint_min_size(s, lower: int, min_size: int) -> ad.Node:
    """Generalisation of :func:`constraint` asking for ``min_size`` nodes per cluster.

    Each column contributes the sum of its ``min_size`` largest normalised
    entries; the ``lower`` best columns by that sum are kept, and the result is
    ``lower * min_size`` minus their total.
    """
    s = ad.constant(s)
    n, c = s.shape
    if not 1 <= lower <= c:
        raise BoundsError(f"constraint needs 1 <= l <= c={c}, got l={lower}")
    if min_size < 1:
        raise BoundsError(f"minimum cluster size must be >= 1, got {min_size}")
    if lower * min_size > n:
        raise BoundsError(f"infeasible: l*b = {lower}*{min_size} exceeds n={n}")
    groups = ad.col_top_k_sum(_row_normalised(s), min_size)
    return ad.subtract(float(lower * min_size), ad.top_k_sum(groups, lower))


def balance(s) -> ad.Node:
    """||diag(S^T S) - n/c||_2 normalised by its single-cluster value n*sqrt((c-1)/c)."""
    s = ad.constant(s)
    n, c = s.shape
    if c < 2:
        raise BoundsError("balance needs at least 2 clusters")
    sizes = ad.diagonal(ad.matmul(ad.transpose(s), s))
    gap = ad.l2_norm(ad.subtract(sizes, np.full((1, c), n / c)))
    return ad.scale(gap, 1.0 / (n * math.sqrt((c - 1) / c)))


def mincutpool_penalty(s) -> ad.Node:
    """Unnormalised orthogonality penalty ||S^T S - (n/c) I||_F."""
    s = ad.constant(s)
    n, c = s.shape
    gram = ad.matmul(ad.transpose(s), s)
    return ad.l2_norm(ad.subtract(gram, (n / c) * np.eye(c)))


def dmon_penalty(s) -> ad.Node:
    """Collapse penalty (sqrt(c)/n) ||sum_i s_i|| - 1."""
    s = ad.constant(s)
    n, c = s.shape
    return ad.subtract(ad.scale(ad.l2_norm(ad.reduce_sum(s, axis=0)), math.sqrt(c) / n), 1.0)


@dataclass
class LossTerms:
    total: ad.Node
    neg_modularity: ad.Node
    constraint: ad.Node
    balance: ad.Node

    def values(self) -> dict:
        return {
            "total": self.total.item(),
            "neg_modularity": self.neg_modularity.item(),
            "constraint": self.constraint.item(),
            "balance": self.balance.item(),
        }


def loss_terms(modularity, s, bounds: Bounds, weights: LossWeights) -> LossTerms:
    """All terms of -Q + mu*constraint + lambda*balance.

    ``modularity`` is a graph or a prebuilt :class:`ModularityOperator`.  The
    penalty terms are always computed so they can be logged even at zero weight.
    """
    if isinstance(modularity, Graph):
        modularity = ModularityOperator(modularity)
    s = ad.constant(s)
    if s.shape[1] != bounds.upper:
        raise BoundsError(f"S has {s.shape[1]} columns but the upper bound is c={bounds.upper}")
    neg_q = ad.scale(modularity(s), -1.0)
    if bounds.min_size is None:
        con = constraint(s, bounds.lower)
    else:
        con = constraint_min_size(s, bounds.lower, bounds.min_size)
    bal = balance(s)
    total = neg_q
    if weights.mu != 0.0:
        total = ad.add(total, ad.scale(con, weights.mu))
    if weights.lam != 0.0:
        total = ad.add(total, ad.scale(bal, weights.lam))
    return LossTerms(total, neg_q, con, bal)


def total_loss(g, s, bounds: Bounds, weights: LossWeights) -> ad.Node:
    return loss_terms(g, s, bounds, weights).total
