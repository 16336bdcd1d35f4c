"""Finite-difference checks over every primitive op, loss term and the full model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .graph import SbmSpec, sbm_generate
from .model import GraphInputs, ModelConfig, forward_nodes, init_model

TOLERANCE = 1e-4


@dataclass
class CheckOutcome:
    name: str
    max_rel_error: float
    points: int
    skipped_points: int

    @property
    def passed(self) -> bool:
        return self.points > 0 and self.max_rel_error < TOLERANCE


def _small_graph(rng: np.random.Generator, n: int = 12):
    sizes = [n // 3, n // 3, n - 2 * (n // 3)]
    while True:
        g = sbm_generate(SbmSpec(sizes, 0.7, 0.15, int(rng.integers(2**31))))
        if g.m > 0:
            return g


def _check(name, make_point, f, points, rng, max_tries=None, coords_per_param=None) -> CheckOutcome:
    """Run ``points`` conclusive checks; points hitting a tie are redrawn.

    With ``coords_per_param`` only that many random entries of each parameter
    are perturbed, which keeps wide layers affordable.
    """
    worst, done, skipped = 0.0, 0, 0
    max_tries = max_tries or 5 * points
    while done < points and done + skipped < max_tries:
        params = make_point(rng)
        coords = None
        if coords_per_param is not None:
            coords = [
                (pi, int(fi))
                for pi, p in enumerate(params)
                for fi in rng.choice(p.size, min(coords_per_param, p.size), replace=False)
            ]
        res = ad.finite_difference_check(f, params, coords=coords)
        if not res.conclusive:
            skipped += 1
            continue
        worst = max(worst, res.max_rel_error)
        done += 1
    return CheckOutcome(name, worst, done, skipped)


def primitive_checks(rng, points: int = 5) -> list:
    def mat(shape):
        return lambda r: [r.normal(size=shape)]

    def pair(s1, s2):
        return lambda r: [r.normal(size=s1), r.normal(size=s2)]

    w = np.random.default_rng(0).normal(size=(4, 3))

    def weighted(node):
        # weight the output so every entry's gradient differs
        return ad.reduce_sum(ad.multiply(node, w[: node.shape[0], : node.shape[1]]))

    cases = [
        ("matmul", pair((4, 5), (5, 3)), lambda p: weighted(ad.matmul(p[0], p[1]))),
        ("transpose", mat((3, 4)), lambda p: weighted(ad.transpose(p[0]))),
        ("add", pair((4, 3), (1, 3)), lambda p: weighted(ad.add(p[0], p[1]))),
        ("subtract", pair((4, 3), (4, 1)), lambda p: weighted(ad.subtract(p[0], p[1]))),
        ("multiply", pair((4, 3), (4, 3)), lambda p: weighted(ad.multiply(p[0], p[1]))),
        ("divide", lambda r: [r.normal(size=(4, 3)), r.uniform(0.5, 2.0, size=(4, 3))],
         lambda p: weighted(ad.divide(p[0], p[1]))),
        ("scale", mat((4, 3)), lambda p: weighted(ad.scale(p[0], -2.5))),
        ("row_softmax", mat((4, 3)), lambda p: weighted(ad.row_softmax(p[0]))),
        ("relu", mat((4, 3)), lambda p: weighted(ad.relu(p[0]))),
        ("row_max", mat((4, 3)), lambda p: weighted(ad.row_max(p[0]))),
        ("col_max", mat((4, 3)), lambda p: weighted(ad.col_max(p[0]))),
        ("sum", mat((4, 3)), lambda p: weighted(ad.reduce_sum(p[0], axis=0))),
        ("top_k_sum", mat((1, 6)), lambda p: ad.top_k_sum(ad.multiply(p[0], p[0]), 3)),
        ("col_top_k_sum", mat((5, 3)), lambda p: weighted(ad.col_top_k_sum(p[0], 2))),
        ("l2_norm", mat((4, 3)), lambda p: ad.l2_norm(p[0])),
        ("diagonal", mat((3, 3)), lambda p: weighted(ad.diagonal(p[0]))),
    ]
    return [_check(name, make, f, points, rng) for name, make, f in cases]


def loss_checks(rng, points: int = 20, n: int = 12, c: int = 4) -> list:
    g = _small_graph(rng, n)
    modularity = losses.ModularityOperator(g)

    def logits(r):
        return [r.normal(scale=2.0, size=(g.n, c))]

    def crowded(r):
        # most rows favour column 0, so some columns are empty and the
        # constraint terms have nonzero gradients
        x = r.normal(scale=1.0, size=(g.n, c))
        x[:, 0] += 2.5
        return [x]

    def via_softmax(term):
        return lambda p: term(ad.row_softmax(p[0]))

    bounds = losses.Bounds(3, c)
    weights = losses.LossWeights(1.0, 1.0)
    cases = [
        ("soft_modularity", logits, via_softmax(modularity)),
        ("constraint", crowded, via_softmax(lambda s: losses.constraint(s, 3))),
        ("constraint_min_size", crowded,
         via_softmax(lambda s: losses.constraint_min_size(s, 2, 3))),
        ("balance", logits, via_softmax(losses.balance)),
        ("mincutpool_penalty", logits, via_softmax(losses.mincutpool_penalty)),
        ("dmon_penalty", logits, via_softmax(losses.dmon_penalty)),
        ("total_loss", crowded,
         via_softmax(lambda s: losses.total_loss(modularity, s, bounds, weights))),
    ]
    return [_check(name, make, f, points, rng) for name, make, f in cases]


def model_checks(rng, points: int = 20, n: int = 14, c: int = 4, hidden_dim: int = 6,
                 coords_per_param=None) -> list:
    """total_loss through GraphSage + MLP, differentiated w.r.t. the weights."""
    g = _small_graph(rng, n)
    inputs = GraphInputs(g)
    modularity = losses.ModularityOperator(g)
    config = ModelConfig(c=c, gnn_layers=3, hidden_dim=hidden_dim, mlp_layers=2)
    names = init_model(config, inputs.features.shape[1]).names()
    # l = c keeps the constraint active at most random initialisations
    bounds = losses.Bounds(c, c)
    weights = losses.LossWeights(1.0, 1.0)

    def point(r):
        state = init_model(
            ModelConfig(c=c, gnn_layers=3, hidden_dim=hidden_dim, mlp_layers=2,
                        seed=int(r.integers(2**31))),
            inputs.features.shape[1],
        )
        # nonzero biases so every parameter gets exercised
        return [a + (0.1 * r.normal(size=a.shape) if k.endswith("bias") else 0.0)
                for k, a in state.params.items()]

    def f(params):
        s = forward_nodes(inputs, config, dict(zip(names, params)))
        return losses.total_loss(modularity, s, bounds, weights)

    return [_check("model_total_loss", point, f, points, rng, max_tries=20 * points,
                   coords_per_param=coords_per_param)]


def run_suite(seed: int = 0, points: int = 20) -> list:
    rng = np.random.default_rng(seed)
    return (
        primitive_checks(rng, points=max(1, points // 4))
        + loss_checks(rng, points=points)
        + model_checks(rng, points=points)
    )
