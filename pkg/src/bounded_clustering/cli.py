"""Command-line entry point: ``bounded-clustering <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import experiments as ex
from .evaluation import evaluate
from .graph import (
    PRESETS, GraphError, SbmSpec, graph_stats, load_graph, preset_graphs, save_graph, sbm_generate,
)
from .gradcheck import TOLERANCE, run_suite
from .losses import Bounds, BoundsError
from .model import ModelState, forward

log = logging.getLogger("bounded_clustering")


def _sizes(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_generate(args) -> int:
    if args.count < 1:
        raise GraphError(f"--count must be >= 1, got {args.count}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.preset:
        graphs = preset_graphs(args.preset, args.count, args.seed)
        stem = args.preset
    else:
        if not (args.sizes and args.p_in is not None and args.p_out is not None):
            raise GraphError("give --preset, or all of --sizes, --p-in and --p-out")
        graphs = [
            sbm_generate(SbmSpec(_sizes(args.sizes), args.p_in, args.p_out, args.seed + k))
            for k in range(args.count)
        ]
        stem = "sbm"
    for k, g in enumerate(graphs):
        path = out / f"{stem}-{args.seed + k}.json"
        save_graph(g, path)
        st = graph_stats(g)
        print(json.dumps({
            "path": str(path), "n": g.n, "m": g.m, "density": st.density,
            "average_degree": st.average_degree,
            "ground_truth_modularity": st.ground_truth_modularity,
        }))
    return 0


def _hyper_from_args(args) -> ex.Hyperparameters:
    h = ex.Hyperparameters()
    for name in ("epochs", "learning_rate", "mu", "lam", "hidden_dim", "gnn_layers",
                 "mlp_layers"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(h, name, v)
    if getattr(args, "no_escalation", False):
        h.mu_escalation = None
    elif getattr(args, "mu_escalation", None) is not None:
        h.mu_escalation = args.mu_escalation
    return h


def cmd_train(args) -> int:
    bounds = Bounds(args.lower, args.upper, args.min_size)
    bounds.validate()
    g = load_graph(args.graph)
    hyper = _hyper_from_args(args)
    row = ex.ResultRow("cli", Path(args.graph).stem, args.variant, bounds.lower, bounds.upper,
                       args.seed)
    start = time.perf_counter()
    result, report = ex.train_cell(g, args.variant, bounds, args.seed, hyper, log_path=args.log)
    ex.fill_row(row, result, report)
    row.runtime_seconds = time.perf_counter() - start
    if args.checkpoint:
        result.state.save(args.checkpoint)
    print(json.dumps(asdict(row)))
    if args.results:
        ex.append_row(row, args.results)
    return 0


def cmd_evaluate(args) -> int:
    g = load_graph(args.graph)
    state = ModelState.load(args.checkpoint)
    lower = args.lower if args.lower is not None else 1
    bounds = Bounds(lower, state.config.c)
    s = forward(g, state)
    report = evaluate(g, s, bounds)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_experiment(args) -> int:
    config = ex.load_config(args.config)
    output = args.output or config.output or "results.csv"
    rows = ex.run_experiment(config, workers=args.workers)
    ex.write_rows(rows, output)
    summary = ex.summarize(rows)
    ex.write_summary(summary, ex.summary_path(output))
    failed = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {output} ({failed} failed); summary in {ex.summary_path(output)}")
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    outcomes = run_suite(seed=args.seed, points=args.points)
    ok = True
    for o in outcomes:
        status = "PASS" if o.passed else "FAIL"
        ok &= o.passed
        print(f"{status} {o.name:22s} max_rel_error={o.max_rel_error:.3e} "
              f"points={o.points} skipped={o.skipped_points} (tol {TOLERANCE:g})")
    return 0 if ok else 1


def _add_hyper_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--mu", type=float, help="constraint weight for constrained variants")
    p.add_argument("--lambda", dest="lam", type=float, help="balance weight for REG variants")
    p.add_argument("--mu-escalation", type=float, help="retry weight when bounds are violated (default 1000)")
    p.add_argument("--no-escalation", action="store_true")
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--gnn-layers", type=int)
    p.add_argument("--mlp-layers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bounded-clustering", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write SBM graph files")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--sizes", help="comma-separated cluster sizes")
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="graphs")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on a graph file")
    p.add_argument("graph")
    p.add_argument("--variant", default="GNN+REG+CONSTRAINT", choices=list(ex.VARIANTS))
    p.add_argument("-l", "--lower", type=int, required=True)
    p.add_argument("-c", "--upper", type=int, required=True)
    p.add_argument("--min-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="write the trained model here")
    p.add_argument("--log", help="per-epoch loss CSV")
    p.add_argument("--results", help="append the result row to this CSV")
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on a graph file")
    p.add_argument("graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-l", "--lower", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a sweep from a JSON config")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--workers", type=int, help=f"parallel cells (default ${ex.WORKERS_ENV} or cores)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GraphError, BoundsError, ex.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
