"""Full-batch Adam training of the assignment network."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .evaluation import count_clusters, hard_assign
from .graph import Graph
from .losses import Bounds, BoundsError, LossWeights, ModularityOperator, loss_terms
from .model import GraphInputs, ModelConfig, ModelState, forward_nodes, init_model

log = logging.getLogger(__name__)

HISTORY_KEYS = ("total", "neg_modularity", "constraint", "balance")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    bounds: Bounds
    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 3000
    learning_rate: float = 1e-3
    seed: Optional[int] = None  # overrides ModelConfig.seed when set
    mu_escalation: Optional[float] = None
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")


@dataclass
class AdamMoments:
    first: list
    second: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamMoments":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, moments: AdamMoments, lr: float, t: int,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    Returns (new params, moments); the moment arrays are updated in place.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at step {t}")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    updated = []
    for p, g, m, v in zip(params, grads, moments.first, moments.second):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        step = m / denom
        step *= lr / c1
        updated.append(p - step)
    moments.t = t
    return updated, moments


@dataclass
class TrainResult:
    state: ModelState
    assignment: np.ndarray
    history: dict  # key -> list of per-epoch values, keys in HISTORY_KEYS
    escalated: bool = False

    @property
    def labels(self) -> np.ndarray:
        return hard_assign(self.assignment)


def _run(inputs: GraphInputs, modularity: ModularityOperator, model_config: ModelConfig,
         config: TrainConfig, weights: LossWeights):
    state = init_model(model_config, inputs.features.shape[1])
    names = state.names()
    # one flat buffer so Adam runs as a handful of vector ops
    shapes = [p.shape for p in state.arrays()]
    splits = np.cumsum([int(np.prod(sh)) for sh in shapes])[:-1]
    flat = np.concatenate([p.ravel() for p in state.arrays()])
    moments = AdamMoments.zeros_like([flat])
    history = {k: [] for k in HISTORY_KEYS}
    for epoch in range(1, config.epochs + 1):
        params = [v.reshape(sh) for v, sh in zip(np.split(flat, splits), shapes)]
        leaves = [ad.parameter(p) for p in params]
        s = forward_nodes(inputs, model_config, dict(zip(names, leaves)))
        terms = loss_terms(modularity, s, config.bounds, weights)
        values = terms.values()
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingError(f"non-finite loss at epoch {epoch}: {values}")
        for k in HISTORY_KEYS:
            history[k].append(values[k])
        ad.backward(terms.total)
        grad = np.concatenate([
            (leaf.grad if leaf.grad is not None else np.zeros(sh)).ravel()
            for leaf, sh in zip(leaves, shapes)
        ])
        try:
            (flat,), moments = adam_step([flat], [grad], moments, config.learning_rate, epoch)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from None
    params = [v.reshape(sh).copy() for v, sh in zip(np.split(flat, splits), shapes)]
    final = state.with_arrays(params)
    leaves = {k: ad.constant(v) for k, v in final.params.items()}
    assignment = forward_nodes(inputs, model_config, leaves).value
    return final, assignment, history


def train(g: Graph, model_config: ModelConfig, config: TrainConfig,
          features=None) -> TrainResult:
    bounds = config.bounds
    if bounds.upper != model_config.c:
        raise BoundsError(f"upper bound c={bounds.upper} differs from model output c={model_config.c}")
    bounds.validate(g.n)
    if config.seed is not None:
        model_config = replace(model_config, seed=config.seed)
    inputs = GraphInputs(g, features)
    modularity = ModularityOperator(g)

    state, assignment, history = _run(inputs, modularity, model_config, config, config.weights)
    escalated = False
    count = count_clusters(hard_assign(assignment))
    if config.mu_escalation is not None and not bounds.lower <= count <= bounds.upper:
        log.info("cluster count %d outside [%d, %d]; retrying with mu=%g",
                 count, bounds.lower, bounds.upper, config.mu_escalation)
        weights = replace(config.weights, mu=config.mu_escalation)
        state, assignment, retry = _run(inputs, modularity, model_config, config, weights)
        for k in HISTORY_KEYS:
            history[k].extend(retry[k])
        escalated = True

    if config.log_path:
        write_history(history, config.log_path)
    return TrainResult(state, assignment, history, escalated)


def write_history(history: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch",) + HISTORY_KEYS)
        for i, row in enumerate(zip(*(history[k] for k in HISTORY_KEYS)), start=1):
            writer.writerow((i,) + tuple(repr(v) for v in row))
