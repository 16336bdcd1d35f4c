"""Sweeps over graphs x model variants x bounds x seeds, written as CSV."""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .evaluation import evaluate
from .graph import Graph, GraphError, SbmSpec, load_graph, preset_graphs, sbm_generate
from .losses import Bounds, BoundsError, LossWeights
from .model import ModelConfig
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

# (mu, lambda) multipliers; the four variants share one training path
VARIANTS = {
    "GNN": (0.0, 0.0),
    "GNN+REG": (0.0, 1.0),
    "GNN+CONSTRAINT": (1.0, 0.0),
    "GNN+REG+CONSTRAINT": (1.0, 1.0),
}

WORKERS_ENV = "BOUNDED_CLUSTERING_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass
class Hyperparameters:
    epochs: int = 3000
    learning_rate: float = 1e-3
    mu: float = 1.0
    lam: float = 1.0
    mu_escalation: Optional[float] = 1000.0
    hidden_dim: int = 64
    gnn_layers: int = 3
    mlp_layers: int = 2
    min_size: Optional[int] = None


def variant_weights(variant: str, hyper: Hyperparameters) -> LossWeights:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {list(VARIANTS)}")
    use_mu, use_lam = VARIANTS[variant]
    return LossWeights(mu=use_mu * hyper.mu, lam=use_lam * hyper.lam)


@dataclass
class ResultRow:
    graph_group: str
    graph_id: str
    variant: str
    l: int
    c: int
    seed: int
    predicted_count: Optional[int] = None
    ari: Optional[float] = None
    hard_modularity: Optional[float] = None
    within_bounds: Optional[bool] = None
    runtime_seconds: Optional[float] = None
    escalated: Optional[bool] = None
    error: str = ""

    @classmethod
    def columns(cls) -> list:
        return [f.name for f in fields(cls)]


def train_cell(g: Graph, variant: str, bounds: Bounds, seed: int, hyper: Hyperparameters,
               log_path=None):
    """Train one variant on one graph and evaluate it; returns (TrainResult, EvalReport)."""
    weights = variant_weights(variant, hyper)
    model_config = ModelConfig(
        c=bounds.upper, gnn_layers=hyper.gnn_layers, hidden_dim=hyper.hidden_dim,
        mlp_layers=hyper.mlp_layers, seed=seed,
    )
    if hyper.min_size is not None and bounds.min_size is None:
        bounds = Bounds(bounds.lower, bounds.upper, hyper.min_size)
    # escalation only raises an active constraint weight; unconstrained
    # variants stay unconstrained
    escalation = hyper.mu_escalation if weights.mu > 0 else None
    config = TrainConfig(
        bounds=bounds, weights=weights, epochs=hyper.epochs,
        learning_rate=hyper.learning_rate, seed=seed, mu_escalation=escalation,
        log_path=log_path,
    )
    result = train(g, model_config, config)
    return result, evaluate(g, result.assignment, bounds)


def run_cell(g: Graph, graph_group: str, graph_id: str, variant: str, bounds: Bounds,
             seed: int, hyper: Hyperparameters) -> ResultRow:
    """:func:`train_cell` as a result row; failures become a row with ``error`` set."""
    row = ResultRow(graph_group, graph_id, variant, bounds.lower, bounds.upper, seed)
    start = time.perf_counter()
    try:
        result, report = train_cell(g, variant, bounds, seed, hyper)
        fill_row(row, result, report)
    except Exception as exc:  # partial-failure policy: record and continue
        log.warning("cell %s/%s/l=%d/c=%d/seed=%d failed: %s",
                    graph_id, variant, bounds.lower, bounds.upper, seed, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    row.runtime_seconds = time.perf_counter() - start
    return row


def fill_row(row: ResultRow, result, report) -> ResultRow:
    row.predicted_count = report.predicted_cluster_count
    row.ari = report.ari
    row.hard_modularity = report.hard_modularity
    row.within_bounds = report.within_bounds
    row.escalated = result.escalated
    return row


# ---------------------------------------------------------------------------
# configuration


@dataclass
class GraphGroup:
    name: str
    graphs: list  # list of (graph_id, Graph)
    bounds: Optional[list] = None  # overrides the experiment-wide bounds


@dataclass
class ExperimentConfig:
    groups: list
    variants: list
    bounds: list  # list of Bounds
    seeds: list
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    output: Optional[str] = None
    workers: Optional[int] = None

    def cells(self):
        for group in self.groups:
            for graph_id, g in group.graphs:
                for variant in self.variants:
                    for bounds in group.bounds or self.bounds:
                        for seed in self.seeds:
                            yield group.name, graph_id, g, variant, bounds, seed


def _parse_bounds(raw, where) -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: 'bounds' must be a non-empty list of [l, c] pairs")
    out = []
    for pair in raw:
        if not isinstance(pair, (list, tuple)) or len(pair) not in (2, 3):
            raise ConfigError(f"{where}: bad bounds entry {pair!r}; expected [l, c] or [l, c, b]")
        b = Bounds(*(int(v) for v in pair))
        try:
            b.validate()
        except BoundsError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        out.append(b)
    return out


def _parse_group(doc: dict, idx: int, base_dir: Path) -> GraphGroup:
    where = f"graphs[{idx}]"
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: must be an object")
    bounds = _parse_bounds(doc["bounds"], where) if "bounds" in doc else None
    if "preset" in doc:
        name = doc["preset"]
        count = int(doc.get("count", 10))
        seed = int(doc.get("seed", 0))
        try:
            graphs = preset_graphs(name, count, seed)
        except GraphError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        ids = [f"{name}-{seed + k}" for k in range(count)]
        return GraphGroup(doc.get("name", name), list(zip(ids, graphs)), bounds)
    if "sbm" in doc:
        spec = doc["sbm"]
        count = int(doc.get("count", 1))
        seed = int(spec.get("seed", 0))
        name = doc.get("name", f"sbm{idx}")
        graphs = []
        for k in range(count):
            s = SbmSpec(spec["cluster_sizes"], float(spec["p_in"]), float(spec["p_out"]), seed + k)
            try:
                graphs.append((f"{name}-{seed + k}", sbm_generate(s)))
            except GraphError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        return GraphGroup(name, graphs, bounds)
    if "files" in doc:
        graphs = []
        for f in doc["files"]:
            path = Path(f) if Path(f).is_absolute() else base_dir / f
            graphs.append((path.stem, load_graph(path)))
        return GraphGroup(doc.get("name", f"files{idx}"), graphs, bounds)
    raise ConfigError(f"{where}: needs one of 'preset', 'sbm' or 'files'")


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    known = {"graphs", "variants", "bounds", "seeds", "hyperparameters", "output", "workers"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config field(s) {sorted(unknown)}")
    raw_groups = doc.get("graphs")
    if not isinstance(raw_groups, list) or not raw_groups:
        raise ConfigError("'graphs' must be a non-empty list")
    groups = [_parse_group(g, i, base_dir) for i, g in enumerate(raw_groups)]
    variants = doc.get("variants", ["GNN+REG+CONSTRAINT"])
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {list(VARIANTS)}")
    if not variants:
        raise ConfigError("'variants' must not be empty")
    bounds = _parse_bounds(doc["bounds"], "config") if "bounds" in doc else []
    if not bounds and any(g.bounds is None for g in groups):
        raise ConfigError("'bounds' missing for at least one graph group")
    seeds = doc.get("seeds", 3)
    seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("at least one seed is required")
    hyper_doc = doc.get("hyperparameters", {})
    valid = {f.name for f in fields(Hyperparameters)}
    bad = set(hyper_doc) - valid
    if bad:
        raise ConfigError(f"unknown hyperparameter(s) {sorted(bad)}; valid: {sorted(valid)}")
    config = ExperimentConfig(
        groups, list(variants), bounds, seeds, Hyperparameters(**hyper_doc),
        doc.get("output"), doc.get("workers"),
    )
    if not any(True for _ in config.cells()):
        raise ConfigError("the configuration defines no cells")
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# execution


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_job(job):
    group, graph_id, g, variant, bounds, seed, hyper = job
    return run_cell(g, group, graph_id, variant, bounds, seed, hyper)


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> list:
    """Execute every cell; rows come back in cell order regardless of scheduling."""
    jobs = [cell + (config.hyper,) for cell in config.cells()]
    workers = workers or config.workers or default_workers()
    log.info("running %d cells on %d worker(s)", len(jobs), workers)
    if workers <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows, path) -> None:
    cols = ResultRow.columns()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[c]) for c in cols])


def append_row(row: ResultRow, path) -> None:
    cols = ResultRow.columns()
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(cols)
        d = asdict(row)
        writer.writerow([_fmt(d[c]) for c in cols])


def read_rows(path) -> list:
    def parse(col, text):
        if text == "":
            return "" if col == "error" else None
        if col in ("l", "c", "seed", "predicted_count"):
            return int(text)
        if col in ("ari", "hard_modularity", "runtime_seconds"):
            return float(text)
        if col in ("within_bounds", "escalated"):
            return text == "True"
        return text

    with open(path, newline="") as fh:
        return [ResultRow(**{k: parse(k, v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


SUMMARY_COLUMNS = [
    "graph_group", "variant", "l", "c", "runs", "failed", "mean_count", "min_count",
    "max_count", "within_bounds_fraction", "escalations", "median_ari", "median_modularity",
]


def summarize(rows) -> list:
    cells = {}
    for row in rows:
        cells.setdefault((row.graph_group, row.variant, row.l, row.c), []).append(row)
    out = []
    for (group, variant, l, c), members in cells.items():
        ok = [r for r in members if not r.error]
        counts = [r.predicted_count for r in ok]
        aris = [r.ari for r in ok if r.ari is not None]
        mods = [r.hard_modularity for r in ok]
        out.append({
            "graph_group": group, "variant": variant, "l": l, "c": c,
            "runs": len(members), "failed": len(members) - len(ok),
            "mean_count": statistics.fmean(counts) if counts else None,
            "min_count": min(counts) if counts else None,
            "max_count": max(counts) if counts else None,
            "within_bounds_fraction": (sum(r.within_bounds for r in ok) / len(ok)) if ok else None,
            "escalations": sum(bool(r.escalated) for r in ok),
            "median_ari": statistics.median(aris) if aris else None,
            "median_modularity": statistics.median(mods) if mods else None,
        })
    return out


def write_summary(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for rec in summary:
            writer.writerow([_fmt(rec[c]) for c in SUMMARY_COLUMNS])


def summary_path(results_path) -> Path:
    p = Path(results_path)
    return p.with_name(p.stem + "_summary.csv")
