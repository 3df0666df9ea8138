"""Command-line front end: generate, fit, inspect, bench.

Exit codes: 0 success, 1 usage error, 2 data/config/format error,
3 numeric failure.  Every run prints its resolved seed, and --json turns
all reports into a line-delimited JSON stream.
"""

import argparse
import json
import sys
import time

import numpy as np

from .dataio import (
    Dataset,
    RunConfig,
    build_hyperparams,
    export_dot,
    generate_dataset,
    parse_config,
    read_csv_dataset,
    read_model,
    write_assignments,
    write_dataset,
    write_model,
)
from .engine import (
    node_posterior,
    refresh_all,
    sweep,
    update_path_posteriors,
    update_tree_posteriors,
)
from .errors import (
    ConfigError,
    DataParseError,
    ModelFormatError,
    NumericStateError,
    ParameterDomainError,
)
from .fit import fit
from .state import init_cache, init_state
from .tree import build_tree


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose errors follow the exit-code contract."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class Reporter:
    def __init__(self, json_mode: bool):
        self.json_mode = json_mode

    def info(self, text: str, **payload) -> None:
        if self.json_mode:
            print(json.dumps(payload, sort_keys=True))
        else:
            print(text)


def build_parser() -> _Parser:
    parser = _Parser(prog="tssbvb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a sampled CSV dataset")
    gen.add_argument("--config", help="JSON configuration path")
    gen.add_argument("--n", type=int, required=True, help="number of rows")
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.add_argument("--seed", type=int, help="override the configured seed")
    gen.add_argument("--labels", action="store_true", help="append true component ids")
    gen.add_argument("--json", action="store_true", help="line-delimited JSON output")

    fi = sub.add_parser("fit", help="fit the model to a CSV dataset")
    fi.add_argument("--data", required=True, help="input CSV path")
    fi.add_argument("--config", help="JSON configuration path")
    fi.add_argument("--out", required=True, help="output model path")
    fi.add_argument("--assignments", help="output CSV of MAP assignments")
    fi.add_argument("--dot", help="output Graphviz path")
    fi.add_argument("--seed", type=int, help="override the configured seed")
    fi.add_argument("--restarts", type=int, help="override the configured restarts")
    fi.add_argument("--iters", type=int, help="override the configured iteration cap")
    fi.add_argument("--threads", type=int, default=1, help="restart-level worker threads")
    fi.add_argument("--json", action="store_true", help="line-delimited JSON output")

    ins = sub.add_parser("inspect", help="summarize a model file")
    ins.add_argument("--model", required=True, help="model path")
    ins.add_argument("--data", help="CSV dataset for per-point queries")
    ins.add_argument("--point", type=int, help="print the node posterior of this row")
    ins.add_argument("--json", action="store_true", help="line-delimited JSON output")

    be = sub.add_parser("bench", help="time one sweep at several sizes")
    be.add_argument("--config", help="JSON configuration path")
    be.add_argument("--sizes", required=True, help="comma-separated sample sizes")
    be.add_argument("--seed", type=int, help="override the configured seed")
    be.add_argument("--json", action="store_true", help="line-delimited JSON output")
    return parser


def _load_config(path) -> RunConfig:
    return parse_config(path) if path else RunConfig()


def _resolved_seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.seed


def run_generate(args) -> int:
    rep = Reporter(args.json)
    cfg = _load_config(args.config)
    seed = _resolved_seed(args, cfg)
    if args.n < 1:
        raise _UsageError(f"--n must be >= 1, got {args.n}")
    rep.info(f"seed {seed}", event="start", seed=seed, preset=cfg.preset)
    data = generate_dataset(cfg, args.n, seed)
    if not args.labels:
        data = Dataset(x=data.x, labels=None, names=data.names)
    write_dataset(args.out, data)
    rep.info(
        f"wrote {data.n} rows ({data.p} columns) to {args.out}",
        event="wrote", kind="dataset", path=args.out, rows=data.n, cols=data.p,
    )
    return 0


def run_fit(args) -> int:
    rep = Reporter(args.json)
    cfg = _load_config(args.config)
    seed = _resolved_seed(args, cfg)
    iters = args.iters if args.iters is not None else cfg.iters
    restarts = args.restarts if args.restarts is not None else cfg.restarts
    rep.info(
        f"seed {seed}",
        event="start", seed=seed, iters=iters, restarts=restarts, tol=cfg.tol,
    )

    data = read_csv_dataset(args.data)
    shape = build_tree(cfg.K, cfg.D)
    hyper = build_hyperparams(cfg, shape, data.p)
    result = fit(
        data.x, shape, hyper,
        iters=iters, restarts=restarts, seed=seed, tol=cfg.tol, threads=args.threads,
    )

    for r, value in enumerate(result.restart_final_elbos):
        if value is None:
            message = dict(result.errors)[r]
            rep.info(f"restart {r}: failed ({message})",
                     event="restart", index=r, elbo=None, error=message)
        else:
            rep.info(f"restart {r}: elbo {value:.10g}",
                     event="restart", index=r, elbo=value)
    iterations = len(result.elbo_trace) - 1
    status = "converged" if result.converged else "iteration cap reached"
    rep.info(
        f"selected restart {result.selected_restart} "
        f"(elbo {result.elbo_trace[-1]:.10g}, {iterations} iterations, {status})",
        event="selected", index=result.selected_restart,
        elbo=result.elbo_trace[-1], iterations=iterations, converged=result.converged,
    )

    write_model(result, args.out)
    rep.info(f"wrote model to {args.out}", event="wrote", kind="model", path=args.out)
    if args.assignments:
        write_assignments(result, args.assignments)
        rep.info(f"wrote assignments to {args.assignments}",
                 event="wrote", kind="assignments", path=args.assignments)
    if args.dot:
        export_dot(result, args.dot)
        rep.info(f"wrote tree graph to {args.dot}",
                 event="wrote", kind="dot", path=args.dot)
    return 0


def run_inspect(args) -> int:
    rep = Reporter(args.json)
    result = read_model(args.model)
    shape = result.shape
    rep.info(f"seed {result.seed} (from model)", event="start", seed=result.seed)
    rep.info(
        f"tree K={shape.K} depth={shape.D} ({shape.n_nodes} nodes), "
        f"dim={result.hyper.p}, selected restart {result.selected_restart}",
        event="model", k=shape.K, depth=shape.D, nodes=shape.n_nodes,
        dim=result.hyper.p, selected_restart=result.selected_restart,
    )

    spread_mean = result.state.a_hat / (result.state.a_hat + result.state.b_hat)
    if not args.json:
        print(f"{'node':>4} {'depth':>5} {'weight':>10} {'spread':>8}  mean")
    for s in range(shape.n_nodes):
        mean = "[" + ", ".join(format(v, ".4g") for v in result.state.mean_hat[s]) + "]"
        spread = format(spread_mean[s], ".4g") if s < shape.n_inner else "-"
        rep.info(
            f"{s:>4} {int(shape.depth[s]):>5} {float(result.resp[s]):>10.4g} {spread:>8}  {mean}",
            event="node", id=s, depth=int(shape.depth[s]),
            weight=float(result.resp[s]),
            spread=float(spread_mean[s]) if s < shape.n_inner else None,
            mean=result.state.mean_hat[s].tolist(),
        )

    tail = result.elbo_trace[-5:]
    rep.info(
        "elbo trace tail: " + ", ".join(f"{v:.10g}" for v in tail),
        event="elbo_trace_tail", values=list(tail),
    )

    if args.point is not None:
        if not args.data:
            raise _UsageError("--point requires --data")
        data = read_csv_dataset(args.data)
        if data.p != result.hyper.p:
            raise DataParseError(
                f"dataset dimension {data.p} does not match model dimension {result.hyper.p}"
            )
        if not 0 <= args.point < data.n:
            raise _UsageError(f"--point {args.point} out of range for {data.n} rows")
        post = _point_posterior(result, data.x)[args.point]
        for s in range(shape.n_nodes):
            rep.info(f"node {s}: posterior {post[s]:.10g}",
                     event="posterior", id=s, prob=float(post[s]))
        rep.info(f"posterior sum {post.sum():.12g}",
                 event="posterior_sum", value=float(post.sum()))
    return 0


def _point_posterior(result, x: np.ndarray) -> np.ndarray:
    """Node posteriors for new points under a loaded model.

    Per-point factors are rebuilt from the stored node-level state: the
    spreading factor starts at its posterior mean, routing starts uniform,
    then one routing pass and one tree pass condition both on the data.
    """
    shape, hyper, state = result.shape, result.hyper, result.state
    n = x.shape[0]
    state.spread_hat = np.zeros((n, shape.n_nodes))
    state.spread_hat[:, : shape.n_inner] = (
        state.a_hat / (state.a_hat + state.b_hat)
    )[None, :]
    state.route_hat = np.full((n, shape.n_inner, shape.K), 1.0 / shape.K)
    cache = init_cache(shape, hyper, n)
    refresh_all(shape, hyper, state, cache, x)
    update_path_posteriors(shape, state, cache)
    update_tree_posteriors(shape, state, cache)
    return node_posterior(cache)


def run_bench(args) -> int:
    rep = Reporter(args.json)
    cfg = _load_config(args.config)
    seed = _resolved_seed(args, cfg)
    try:
        sizes = [int(part) for part in args.sizes.split(",") if part.strip()]
    except ValueError:
        raise _UsageError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    if not sizes or any(n < 1 for n in sizes):
        raise _UsageError(f"--sizes entries must be >= 1, got {args.sizes!r}")
    rep.info(f"seed {seed}", event="start", seed=seed, sizes=sizes)

    timings: list[float] = []
    for n in sizes:
        data = generate_dataset(cfg, n, seed)
        shape = build_tree(cfg.K, cfg.D)
        hyper = build_hyperparams(cfg, shape, data.p)
        state = init_state(shape, hyper, data.x, seed=np.random.SeedSequence(seed))
        cache = init_cache(shape, hyper, n)
        refresh_all(shape, hyper, state, cache, data.x)
        sweep(shape, hyper, state, cache, data.x)  # warmup
        best = float("inf")
        for _ in range(3):
            start = time.perf_counter()
            sweep(shape, hyper, state, cache, data.x)
            best = min(best, time.perf_counter() - start)
        timings.append(best)
        rep.info(f"n={n}  sec/iteration={best:.6f}",
                 event="timing", n=n, seconds=best)

    ok = True
    for j in range(1, len(sizes)):
        expected = sizes[j] / sizes[j - 1]
        ratio = timings[j] / timings[j - 1]
        within = 0.7 * expected <= ratio <= 1.3 * expected
        ok = ok and within
        rep.info(
            f"ratio n={sizes[j]}/{sizes[j-1]}: {ratio:.3f} "
            f"(expected about {expected:.2f}, {'ok' if within else 'out of band'})",
            event="ratio", ratio=ratio, expected=expected, within_band=within,
        )
    if not ok:
        rep.info("scaling outside the linear band", event="band_violation")
        return 3
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise _UsageError("a subcommand is required (generate, fit, inspect, bench)")
        handler = {
            "generate": run_generate,
            "fit": run_fit,
            "inspect": run_inspect,
            "bench": run_bench,
        }[args.subcommand]
        return handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataParseError, ConfigError, ModelFormatError, ParameterDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
