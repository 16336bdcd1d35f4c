"""Graph container, SBM generation, statistics and graph file I/O.

Graphs are undirected, unweighted and simple.  ``m`` always counts undirected
edges; an adjacency matrix is only built on request (dense or CSR).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed graphs, invalid SBM specs and bad graph files."""


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: np.ndarray  # (m, 2) int64, each row i < j after normalisation
    features: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(self.n)
        if n < 0:
            raise GraphError(f"node count must be >= 0, got {n}")
        object.__setattr__(self, "n", n)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        _check_edges(edges, n)
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.stack([lo, hi], axis=1)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != n:
                raise GraphError(f"features must have shape (n={n}, f), got {feats.shape}")
            feats.setflags(write=False)
            object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise GraphError(f"labels must have length n={n}, got shape {labels.shape}")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n).astype(np.float64)

    def adjacency(self, sparse: bool = False):
        """Symmetric 0/1 adjacency with an empty diagonal."""
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        a = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n, self.n), dtype=np.float64
        )
        return a if sparse else a.toarray()

    def edge_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.edges}

    def structurally_equal(self, other: "Graph") -> bool:
        if self.n != other.n or self.edge_set() != other.edge_set():
            return False
        for a, b in ((self.features, other.features), (self.labels, other.labels)):
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


def _check_edges(edges: np.ndarray, n: int, where: str = "edge") -> None:
    if edges.shape[0] == 0:
        return
    out = (edges < 0) | (edges >= n)
    if out.any():
        idx = int(np.flatnonzero(out.any(axis=1))[0])
        i, j = edges[idx]
        endpoint = i if out[idx, 0] else j
        raise GraphError(f"{where} {idx} ({i}, {j}): endpoint {endpoint} out of range [0, {n})")
    loops = edges[:, 0] == edges[:, 1]
    if loops.any():
        idx = int(np.flatnonzero(loops)[0])
        i = edges[idx, 0]
        raise GraphError(f"{where} {idx} ({i}, {i}): self-loop on node {i}")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    keys = lo * n + hi
    order = np.argsort(keys, kind="stable")
    repeated = np.flatnonzero(keys[order][1:] == keys[order][:-1])
    if repeated.size:
        # report the duplicate that appears earliest in the input
        dup_pos = order[repeated + 1]
        k = int(np.argmin(dup_pos))
        second, first = int(dup_pos[k]), int(order[repeated[k]])
        i, j = edges[second]
        raise GraphError(f"{where} {second} ({i}, {j}): duplicate of {where} {first}")


# ---------------------------------------------------------------------------
# stochastic block model


@dataclass(frozen=True)
class SbmSpec:
    cluster_sizes: tuple
    p_in: float
    p_out: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(s) for s in self.cluster_sizes))

    @property
    def n(self) -> int:
        return sum(self.cluster_sizes)

    def validate(self) -> None:
        if len(self.cluster_sizes) < 2:
            raise GraphError(f"SBM needs at least 2 clusters, got {len(self.cluster_sizes)}")
        bad = [s for s in self.cluster_sizes if s < 1]
        if bad:
            raise GraphError(f"SBM cluster sizes must be >= 1, got {bad}")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise GraphError(
                f"SBM requires 0 <= p_out <= p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}"
            )


def sbm_generate(spec: SbmSpec) -> Graph:
    """Sample an undirected SBM graph.

    Pairs (i, j) with i < j are visited in row-major order and each consumes
    exactly one uniform double from ``numpy.random.Generator(PCG64(seed))``;
    the edge exists when that draw is below p_in (same block) or p_out.
    """
    spec.validate()
    n = spec.n
    labels = np.repeat(np.arange(len(spec.cluster_sizes)), spec.cluster_sizes)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    rows, cols = [], []
    # chunk rows to bound memory on 10^4-node graphs; stream order is unchanged
    start = 0
    budget = 4_000_000
    while start < n - 1:
        stop, total = start, 0
        while stop < n - 1 and (total == 0 or total + (n - stop - 1) <= budget):
            total += n - stop - 1
            stop += 1
        draws = rng.random(total)
        counts = n - 1 - np.arange(start, stop)
        i_idx = np.repeat(np.arange(start, stop), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        j_idx = i_idx + 1 + offsets
        prob = np.where(labels[i_idx] == labels[j_idx], spec.p_in, spec.p_out)
        hit = draws < prob
        rows.append(i_idx[hit])
        cols.append(j_idx[hit])
        start = stop
    if rows:
        edges = np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    return Graph(n=n, edges=edges, labels=labels)


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class GraphStats:
    density: float
    average_degree: float
    ground_truth_modularity: Optional[float] = None


def graph_stats(g: Graph) -> GraphStats:
    if g.n < 2:
        raise GraphError(f"graph statistics need n >= 2, got n={g.n}")
    density = 2.0 * g.m / (g.n * (g.n - 1))
    average_degree = 2.0 * g.m / g.n
    q = None
    if g.labels is not None and g.m > 0:
        q = hard_modularity(g, g.labels)
    return GraphStats(density, average_degree, q)


def hard_modularity(g: Graph, labels: Sequence[int]) -> float:
    """Newman modularity of a hard partition.

    Evaluated per community as sum_k [ 2 e_k / 2m - (D_k / 2m)^2 ], where e_k is
    the number of intra-community edges and D_k the total degree; this equals
    the ordered-pair double sum including i == j.
    """
    if g.m == 0:
        raise GraphError("modularity is undefined for a graph without edges")
    labels = np.asarray(labels)
    if labels.shape != (g.n,):
        raise GraphError(f"labels must cover all {g.n} nodes, got shape {labels.shape}")
    _, compact = np.unique(labels, return_inverse=True)
    compact = compact.ravel()
    k = int(compact.max()) + 1
    two_m = 2.0 * g.m
    same = compact[g.edges[:, 0]] == compact[g.edges[:, 1]]
    intra = np.bincount(compact[g.edges[same, 0]], minlength=k).astype(np.float64)
    deg_tot = np.bincount(compact, weights=g.degrees(), minlength=k)
    return float(np.sum(2.0 * intra / two_m - (deg_tot / two_m) ** 2))


def adjacency_features(g: Graph) -> np.ndarray:
    """Node i's feature row is column i of the adjacency matrix."""
    return g.adjacency().T.copy()


def node_features(g: Graph) -> np.ndarray:
    return g.features if g.features is not None else adjacency_features(g)


# ---------------------------------------------------------------------------
# file I/O

_FIELDS = {"n", "edges", "features", "labels"}


def graph_to_dict(g: Graph) -> dict:
    doc = {"n": g.n, "edges": g.edges.tolist()}
    if g.features is not None:
        doc["features"] = g.features.tolist()
    if g.labels is not None:
        doc["labels"] = g.labels.tolist()
    return doc


def graph_from_dict(doc, source: str = "<graph>") -> Graph:
    if not isinstance(doc, dict):
        raise GraphError(f"{source}: top level must be an object")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise GraphError(f"{source}: unknown field(s) {sorted(unknown)}")
    if "n" not in doc or "edges" not in doc:
        raise GraphError(f"{source}: fields 'n' and 'edges' are required")
    n = doc["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise GraphError(f"{source}: field 'n' must be a non-negative integer, got {n!r}")
    raw_edges = doc["edges"]
    if not isinstance(raw_edges, list):
        raise GraphError(f"{source}: field 'edges' must be an array")
    for idx, e in enumerate(raw_edges):
        if isinstance(e, list) and len(e) == 3:
            raise GraphError(f"{source}: edges[{idx}] has a weight; weighted graphs are not supported")
        if (
            not isinstance(e, list)
            or len(e) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in e)
        ):
            raise GraphError(f"{source}: edges[{idx}] must be a pair of integers, got {e!r}")
    edges = np.array(raw_edges, dtype=np.int64).reshape(-1, 2)
    try:
        _check_edges(edges, n, where="edges[]")
    except GraphError as exc:
        raise GraphError(f"{source}: {exc}") from None
    features = doc.get("features")
    if features is not None:
        if not isinstance(features, list) or len(features) != n:
            raise GraphError(f"{source}: field 'features' must hold exactly n={n} rows")
        widths = {len(r) if isinstance(r, list) else -1 for r in features}
        if len(widths) > 1 or -1 in widths:
            raise GraphError(f"{source}: 'features' rows must be numeric arrays of equal length")
        try:
            features = np.array(features, dtype=np.float64).reshape(n, -1)
        except (TypeError, ValueError) as exc:
            raise GraphError(f"{source}: 'features' must be numeric ({exc})") from None
    labels = doc.get("labels")
    if labels is not None:
        if not isinstance(labels, list) or len(labels) != n:
            raise GraphError(f"{source}: field 'labels' must hold exactly n={n} integers")
        for idx, v in enumerate(labels):
            if not isinstance(v, int) or isinstance(v, bool):
                raise GraphError(f"{source}: labels[{idx}] must be an integer, got {v!r}")
    return Graph(n=n, edges=edges, features=features, labels=labels)


def save_graph(g: Graph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(g), fh)


def load_graph(path) -> Graph:
    path = os.fspath(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: malformed graph file at line {exc.lineno}: {exc.msg}") from None
    return graph_from_dict(doc, source=path)


# ---------------------------------------------------------------------------
# synthetic presets: the published cluster sizes and edge probabilities of the
# networks, with the approximate statistics reported alongside them


@dataclass(frozen=True)
class Preset:
    name: str
    cluster_sizes: tuple
    p_in: float
    p_out: float
    average_degree: float
    density: float
    modularity: float

    def spec(self, seed: int) -> SbmSpec:
        return SbmSpec(self.cluster_sizes, self.p_in, self.p_out, seed)


_SMALL = (25, 30, 10, 20, 15)
_MEDIUM = (39, 175, 236, 270, 280)
_MEDIUM_K10 = (10, 23, 27, 32, 38, 97, 108, 170, 229, 266)
_MEDIUM_K20 = (20, 31, 71, 73, 29, 19, 21, 32, 15, 65, 60, 53, 76, 80, 70, 27, 62, 61, 85, 50)
_LARGE = (175, 478, 2358, 2989, 4000)

PRESETS = {
    p.name: p
    for p in [
        Preset("small-low", _SMALL, 0.15, 0.015, 4, 0.04, 0.49),
        Preset("small-medium", _SMALL, 0.4, 0.04, 11, 0.1, 0.48),
        Preset("medium-low", _MEDIUM, 0.1, 0.002, 25, 0.02, 0.67),
        Preset("medium-medium", _MEDIUM, 0.4, 0.007, 100, 0.1, 0.67),
        Preset("medium-high", _MEDIUM, 0.6, 0.015, 154, 0.15, 0.65),
        Preset("medium-k10", _MEDIUM_K10, 0.4, 0.002, 72, 0.07, 0.69),
        Preset("medium-k20", _MEDIUM_K20, 0.8, 0.004, 51, 0.05, 0.84),
        Preset("large-low", _LARGE, 0.033, 0.0003, 103, 0.01, 0.59),
    ]
}


def preset_graphs(name: str, count: int, seed: int = 0) -> list:
    """``count`` graphs of a preset, graph ``k`` drawn with seed ``seed + k``."""
    if name not in PRESETS:
        raise GraphError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if count < 1:
        raise GraphError(f"graph count must be >= 1, got {count}")
    preset = PRESETS[name]
    return [sbm_generate(preset.spec(seed + k)) for k in range(count)]
