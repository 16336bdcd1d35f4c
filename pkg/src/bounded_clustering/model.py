"""GraphSage (mean aggregation) encoder followed by an MLP and a row softmax."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import Graph, node_features


@dataclass(frozen=True)
class ModelConfig:
    c: int
    gnn_layers: int = 3
    hidden_dim: int = 64
    mlp_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("gnn_layers", "hidden_dim", "mlp_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.c < 2:
            raise ValueError(f"the model needs c >= 2 output clusters, got {self.c}")

    @classmethod
    def synthetic(cls, c: int, seed: int = 0, **kw) -> "ModelConfig":
        return cls(c=c, gnn_layers=3, mlp_layers=2, seed=seed, **kw)

    @classmethod
    def real(cls, c: int, seed: int = 0, **kw) -> "ModelConfig":
        return cls(c=c, gnn_layers=4, mlp_layers=2, seed=seed, **kw)


@dataclass
class ModelState:
    config: ModelConfig
    feature_dim: int
    params: dict = field(default_factory=dict)  # name -> float64 array, insertion order fixed

    def names(self) -> list:
        return list(self.params)

    def arrays(self) -> list:
        return list(self.params.values())

    def with_arrays(self, arrays) -> "ModelState":
        return ModelState(self.config, self.feature_dim, dict(zip(self.params, arrays)))

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "feature_dim": self.feature_dim,
            "params": {
                k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelState":
        params = {
            k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
            for k, v in doc["params"].items()
        }
        return cls(ModelConfig(**doc["config"]), int(doc["feature_dim"]), params)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ModelState":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _layer_dims(config: ModelConfig, feature_dim: int):
    sage = []
    width = feature_dim
    for _ in range(config.gnn_layers):
        sage.append((width, config.hidden_dim))
        width = config.hidden_dim
    mlp = []
    for i in range(config.mlp_layers):
        out = config.c if i == config.mlp_layers - 1 else config.hidden_dim
        mlp.append((width, out))
        width = out
    return sage, mlp


def init_model(config: ModelConfig, feature_dim: int) -> ModelState:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    rng = np.random.default_rng(config.seed)
    sage, mlp = _layer_dims(config, feature_dim)
    params = {}
    for i, (fan_in, out) in enumerate(sage):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"sage{i}.self"] = rng.uniform(-bound, bound, (fan_in, out))
        params[f"sage{i}.neigh"] = rng.uniform(-bound, bound, (fan_in, out))
        params[f"sage{i}.bias"] = np.zeros((1, out))
    for i, (fan_in, out) in enumerate(mlp):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"mlp{i}.weight"] = rng.uniform(-bound, bound, (fan_in, out))
        params[f"mlp{i}.bias"] = np.zeros((1, out))
    return ModelState(config, feature_dim, params)


def mean_aggregator(g: Graph) -> sp.csr_matrix:
    """Row-stochastic neighbour-mean operator; isolated nodes get an all-zero row."""
    a = g.adjacency(sparse=True)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.csr_matrix(sp.diags(inv) @ a)


class GraphInputs:
    """Per-graph constants for the forward pass."""

    def __init__(self, g: Graph, features=None):
        self.graph = g
        self.features = node_features(g) if features is None else np.asarray(features, float)
        self.aggregator = ad.SparseConstant(mean_aggregator(g))
        # first-layer neighbour means do not depend on the weights
        self.aggregated_features = np.asarray(self.aggregator @ self.features)
        self.first_layer = [_maybe_sparse(self.features), _maybe_sparse(self.aggregated_features)]


def _maybe_sparse(x: np.ndarray, max_density: float = 0.2):
    # adjacency-column features are mostly zeros; a sparse product is exact and cheaper
    if x.size and np.count_nonzero(x) <= max_density * x.size:
        return ad.SparseConstant(x)
    return x


def forward_nodes(inputs: GraphInputs, config: ModelConfig, nodes: dict) -> ad.Node:
    """Forward pass over parameter nodes; returns the softmax assignment node."""
    h = None
    for i in range(config.gnn_layers):
        if i == 0:
            x, mean = inputs.first_layer
            own = ad.matmul(x, nodes["sage0.self"])
        else:
            own = ad.matmul(h, nodes[f"sage{i}.self"])
            mean = ad.matmul(inputs.aggregator, h)
        neigh = ad.matmul(mean, nodes[f"sage{i}.neigh"])
        h = ad.relu(ad.add(ad.add(own, neigh), nodes[f"sage{i}.bias"]))
    for i in range(config.mlp_layers):
        h = ad.add(ad.matmul(h, nodes[f"mlp{i}.weight"]), nodes[f"mlp{i}.bias"])
        if i < config.mlp_layers - 1:
            h = ad.relu(h)
    return ad.row_softmax(h)


def forward(g, state: ModelState) -> np.ndarray:
    inputs = g if isinstance(g, GraphInputs) else GraphInputs(g)
    if inputs.features.shape[1] != state.feature_dim:
        raise ValueError(
            f"feature width {inputs.features.shape[1]} does not match model input {state.feature_dim}"
        )
    nodes = {k: ad.constant(v) for k, v in state.params.items()}
    return forward_nodes(inputs, state.config, nodes).value
