"""Restarted coordinate-ascent fitting with deterministic selection."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import elbo, map_nodes, node_posterior, refresh_all, sweep
from .errors import NumericStateError, ParameterDomainError
from .generative import Hyperparams
from .state import VariationalState, init_cache, init_state
from .tree import TreeShape


@dataclass
class FitResult:
    """Outcome of a restarted fit.

    state holds the winning restart's node-level factors; map_node,
    node_post and resp summarize its per-point posteriors.  elbo_trace
    starts with the bound at initialization, then one entry per sweep.
    iter_seconds mirrors the sweep entries of the trace and is runtime
    diagnostics only, never serialized.
    """

    shape: TreeShape
    hyper: Hyperparams
    state: VariationalState
    elbo_trace: list[float]
    restart_final_elbos: list[float | None]
    selected_restart: int
    converged: bool
    map_node: np.ndarray | None
    node_post: np.ndarray | None
    resp: np.ndarray
    seed: int
    max_iters: int = 0
    tol: float = 0.0
    iter_seconds: list[float] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class _RestartRun:
    state: VariationalState | None
    trace: list[float]
    seconds: list[float]
    converged: bool
    error: str | None = None


def _run_restart(
    shape: TreeShape,
    hyper: Hyperparams,
    x: np.ndarray,
    entropy,
    iters: int,
    tol: float,
) -> _RestartRun:
    try:
        state = init_state(shape, hyper, x, seed=entropy)
        cache = init_cache(shape, hyper, x.shape[0])
        refresh_all(shape, hyper, state, cache, x)
        trace = [elbo(shape, hyper, state, cache, x)]
        seconds: list[float] = []
        converged = False
        for _ in range(iters):
            start = time.perf_counter()
            sweep(shape, hyper, state, cache, x)
            value = elbo(shape, hyper, state, cache, x)
            seconds.append(time.perf_counter() - start)
            previous = trace[-1]
            trace.append(value)
            if abs(value - previous) <= tol * (abs(previous) + 1e-12):
                converged = True
                break
        return _RestartRun(state=state, trace=trace, seconds=seconds, converged=converged)
    except NumericStateError as exc:
        return _RestartRun(state=None, trace=[], seconds=[], converged=False, error=str(exc))


def fit(
    x: np.ndarray,
    shape: TreeShape,
    hyper: Hyperparams,
    *,
    iters: int = 400,
    restarts: int = 100,
    seed: int = 0,
    tol: float = 1e-8,
    threads: int = 1,
) -> FitResult:
    """Fit the model with several seeded restarts and keep the best bound.

    Restart r draws its randomness from child r of one seed sequence, so
    results do not depend on scheduling; with equal final bounds the
    smallest restart index wins.  Restarts that hit a numeric failure are
    recorded and skipped; if every restart fails the last failure is
    re-raised with a summary.
    """
    x = np.asarray(x, dtype=np.float64)
    if iters < 0:
        raise ParameterDomainError("iteration count must be >= 0")
    if restarts < 1:
        raise ParameterDomainError("restart count must be >= 1")
    if tol < 0:
        raise ParameterDomainError("convergence tolerance must be >= 0")
    if threads < 1:
        raise ParameterDomainError("thread count must be >= 1")

    children = np.random.SeedSequence(seed).spawn(restarts)
    if threads == 1:
        runs = [
            _run_restart(shape, hyper, x, children[r], iters, tol)
            for r in range(restarts)
        ]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(
                pool.map(
                    lambda r: _run_restart(shape, hyper, x, children[r], iters, tol),
                    range(restarts),
                )
            )

    finals: list[float | None] = [
        run.trace[-1] if run.error is None else None for run in runs
    ]
    errors = [(r, run.error) for r, run in enumerate(runs) if run.error is not None]
    if all(f is None for f in finals):
        detail = "; ".join(f"restart {r}: {msg}" for r, msg in errors)
        raise NumericStateError(f"every restart failed ({detail})")

    best = max(
        (r for r in range(restarts) if finals[r] is not None),
        key=lambda r: (finals[r], -r),
    )
    winner = runs[best]

    cache = init_cache(shape, hyper, x.shape[0])
    refresh_all(shape, hyper, winner.state, cache, x)
    post = node_posterior(cache)
    resp = (cache.p_tree_leaf * cache.p_on_path).sum(axis=0)

    return FitResult(
        shape=shape,
        hyper=hyper,
        state=winner.state,
        elbo_trace=winner.trace,
        restart_final_elbos=finals,
        selected_restart=best,
        converged=winner.converged,
        map_node=map_nodes(cache),
        node_post=post,
        resp=resp,
        seed=seed,
        max_iters=iters,
        tol=tol,
        iter_seconds=winner.seconds,
        errors=errors,
    )
