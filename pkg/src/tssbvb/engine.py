"""Coordinate-ascent sweep for the tree-structured mixture.

Per-point factors are updated in closed form by two tree passes: routing
probabilities by a bottom-up aggregate over descendant edges, and the tree
factor by the subtree-sum recursion that folds the whole latent-tree
posterior into one value per node.  Node-level factors then follow by
conjugacy from responsibility-weighted statistics.

All per-point work is vectorized over the data axis; loops run over nodes
only.  Node ids are breadth-first, so the children of s occupy the
contiguous id block K*s+1 .. K*s+K and "reversed id order" is a valid
bottom-up schedule.
"""

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp, xlogy

from .errors import NumericStateError
from .expectations import (
    LOG_2PI,
    chol_inverse,
    chol_logdet,
    chol_lower,
    expected_log_dirichlet,
    expected_log_g,
    kl_beta,
    kl_dirichlet,
    kl_wishart,
    wishart_expected_logdet,
)
from .generative import Hyperparams
from .state import SweepCache, SweepStats, VariationalState
from .tree import TreeShape

_TINY = np.finfo(np.float64).tiny


def refresh_route_expectations(state: VariationalState, cache: SweepCache) -> None:
    cache.e_log_route = expected_log_dirichlet(state.alpha_hat)


def refresh_spread_expectations(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    log_g, log_stop = expected_log_g(state.a_hat, state.b_hat)
    cache.e_log_spread[: shape.n_inner] = log_g
    cache.e_log_spread[shape.n_inner :] = -np.inf
    cache.e_log_stop[: shape.n_inner] = log_stop
    cache.e_log_stop[shape.n_inner :] = 0.0


def refresh_mean_prec(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    """Rebuild the inverse/logdet companions of every node-mean precision."""
    for s in range(shape.n_nodes):
        inv = chol_inverse(state.mean_prec_hat[s], f"mean precision[{s}]")
        cache.mean_prec_inv[s] = 0.5 * (inv + inv.T)
        cache.mean_prec_logdet[s] = chol_logdet(state.mean_prec_hat[s])


def refresh_emit(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    x: np.ndarray,
) -> None:
    """Expected log emission density of every point under every node."""
    p = hyper.p
    for s in range(shape.n_nodes):
        scale = state.wish_scale_hat[s]
        dof = state.wish_dof_hat[s]
        logdet = cache.wish_scale_logdet[s]
        e_logdet = wishart_expected_logdet(dof, logdet, p)
        diff = x - state.mean_hat[s]
        quad = np.einsum("ij,ij->i", diff @ scale, diff)
        trace = float(np.sum(scale * cache.mean_prec_inv[s]))
        cache.e_log_emit[:, s] = 0.5 * (
            e_logdet - p * LOG_2PI - dof * quad - dof * trace
        )


def refresh_wish_logdet(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    for s in range(shape.n_nodes):
        cache.wish_scale_logdet[s] = chol_logdet(state.wish_scale_hat[s])


def refresh_path_marginals(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    """On-path probabilities from the routing factor, root to leaves."""
    k = shape.K
    cache.p_on_path[:, 0] = 1.0
    for s in range(shape.n_inner):
        lo = k * s + 1
        cache.p_on_path[:, lo : lo + k] = (
            cache.p_on_path[:, s, None] * state.route_hat[:, s, :]
        )


def refresh_tree_marginals(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    """Leaf/inner membership probabilities from the tree factor."""
    k = shape.K
    reach = np.empty_like(state.spread_hat)
    reach[:, 0] = 1.0
    for s in range(shape.n_inner):
        lo = k * s + 1
        reach[:, lo : lo + k] = (reach[:, s] * state.spread_hat[:, s])[:, None]
    cache.p_tree_inner = reach * state.spread_hat
    cache.p_tree_leaf = reach * (1.0 - state.spread_hat)


def refresh_all(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    x: np.ndarray,
) -> None:
    """Bring every cache field in line with the current state."""
    refresh_route_expectations(state, cache)
    refresh_spread_expectations(shape, state, cache)
    refresh_mean_prec(shape, state, cache)
    refresh_wish_logdet(shape, state, cache)
    refresh_emit(shape, hyper, state, cache, x)
    refresh_path_marginals(shape, state, cache)
    refresh_tree_marginals(shape, state, cache)


def update_path_posteriors(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    """Closed-form update of every per-point routing factor.

    The weight of edge (s, ch) combines the expected log routing
    probability, the evidence for stopping at ch, and the aggregated weight
    of everything below ch; one upward pass produces all of them.
    """
    k = shape.K
    n_inner = shape.n_inner
    n = cache.e_log_emit.shape[0]

    log_stop_ev = cache.p_tree_leaf * cache.e_log_emit
    log_edge = np.empty((n, n_inner, k))
    agg = np.empty((n, n_inner))
    for s in range(n_inner - 1, -1, -1):
        lo = k * s + 1
        block = cache.e_log_route[s][None, :] + log_stop_ev[:, lo : lo + k]
        if lo < n_inner:
            # a perfect tree has all-inner or all-leaf child blocks
            block += agg[:, lo : lo + k]
        log_edge[:, s, :] = block
        agg[:, s] = logsumexp(block, axis=1)

    route = np.exp(log_edge - agg[:, :, None])
    np.maximum(route, _TINY, out=route)
    state.route_hat = route
    refresh_path_marginals(shape, state, cache)


def update_tree_posteriors(shape: TreeShape, state: VariationalState, cache: SweepCache) -> None:
    """Closed-form update of every per-point tree factor.

    One upward pass computes, per node, the log sum over all subtrees of
    the cone below it; the ratio of the spread branch to the total is the
    new spreading probability.  The root entry is the log normalizer of the
    unnormalized tree posterior.
    """
    k = shape.K
    n_inner = shape.n_inner

    log_path_ev = cache.p_on_path * cache.e_log_emit
    lts = cache.log_tree_sum
    lts[:, n_inner:] = log_path_ev[:, n_inner:]
    spread = np.zeros_like(state.spread_hat)
    for s in range(n_inner - 1, -1, -1):
        lo = k * s + 1
        log_split = cache.e_log_spread[s] + lts[:, lo : lo + k].sum(axis=1)
        lts[:, s] = np.logaddexp(cache.e_log_stop[s] + log_path_ev[:, s], log_split)
        spread[:, s] = np.exp(log_split - lts[:, s])

    if not np.all(np.isfinite(lts)):
        i, s = np.argwhere(~np.isfinite(lts))[0]
        raise NumericStateError(
            f"tree recursion produced a non-finite value at point {i}, node {s}"
        )
    np.clip(spread, 0.0, 1.0, out=spread)
    state.spread_hat = spread
    refresh_tree_marginals(shape, state, cache)


def accumulate_stats(cache: SweepCache, x: np.ndarray) -> SweepStats:
    """Responsibility-weighted sufficient statistics for the node updates."""
    w = cache.p_tree_leaf * cache.p_on_path
    n_nodes = w.shape[1]
    p = x.shape[1]
    resp_xx = np.empty((n_nodes, p, p))
    for s in range(n_nodes):
        xw = w[:, s, None] * x
        m2 = x.T @ xw
        resp_xx[s] = 0.5 * (m2 + m2.T)
    return SweepStats(
        path_count=cache.p_on_path.sum(axis=0),
        resp=w.sum(axis=0),
        resp_x=w.T @ x,
        resp_xx=resp_xx,
    )


def update_routing(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    stats: SweepStats,
) -> None:
    state.alpha_hat = hyper.alpha + stats.path_count[shape.children]
    refresh_route_expectations(state, cache)


def update_spreading(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
) -> None:
    n_inner = shape.n_inner
    state.a_hat = hyper.a + cache.p_tree_inner[:, :n_inner].sum(axis=0)
    state.b_hat = hyper.b + cache.p_tree_leaf[:, :n_inner].sum(axis=0)
    refresh_spread_expectations(shape, state, cache)


def update_means(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    stats: SweepStats,
) -> None:
    """Node-mean factors, root to leaves.

    Each precision blends the expected emission precision (weighted by the
    node responsibility) with the expected chain precision counted once per
    incident tree edge plus one.  Parents are read fresh, children stale;
    either way each single-node update is exact given the rest.
    """
    k = shape.K
    p = hyper.p
    e_chain = state.chain_dof_hat * state.chain_scale_hat
    eye = np.eye(p)
    for s in range(shape.n_nodes):
        e_lam = state.wish_dof_hat[s] * state.wish_scale_hat[s]
        inner = s < shape.n_inner
        edges = k + 1 if inner else 1
        prec = stats.resp[s] * e_lam + edges * e_chain
        prec = 0.5 * (prec + prec.T)

        parent_mean = hyper.m_root if s == 0 else state.mean_hat[shape.parent[s]]
        neighbor_sum = parent_mean.copy()
        if inner:
            neighbor_sum += state.mean_hat[shape.children[s]].sum(axis=0)
        rhs = e_lam @ stats.resp_x[s] + e_chain @ neighbor_sum

        low = chol_lower(prec, f"mean precision[{s}]")
        state.mean_hat[s] = cho_solve((low, True), rhs)
        inv = cho_solve((low, True), eye)
        state.mean_prec_hat[s] = prec
        cache.mean_prec_inv[s] = 0.5 * (inv + inv.T)
        cache.mean_prec_logdet[s] = 2.0 * np.sum(np.log(np.diag(low)))


def update_precisions(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    stats: SweepStats,
) -> None:
    """Emission-precision factors from recentered second moments.

    The scatter about the current mean is assembled from the raw weighted
    moments, so no division by a possibly tiny responsibility ever happens.
    """
    for s in range(shape.n_nodes):
        nt = stats.resp[s]
        mh = state.mean_hat[s]
        scatter = (
            stats.resp_xx[s]
            - np.outer(mh, stats.resp_x[s])
            - np.outer(stats.resp_x[s], mh)
            + nt * np.outer(mh, mh)
        )
        inv_scale = (
            cache.prior_wish_scale_inv[s] + scatter + nt * cache.mean_prec_inv[s]
        )
        inv_scale = 0.5 * (inv_scale + inv_scale.T)
        scale = chol_inverse(inv_scale, f"emission scale[{s}]")
        state.wish_dof_hat[s] = hyper.nu[s] + nt
        state.wish_scale_hat[s] = 0.5 * (scale + scale.T)
        cache.wish_scale_logdet[s] = -chol_logdet(inv_scale)


def _chain_scatter(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
) -> np.ndarray:
    """Sum over nodes of E[(mu_s - mu_parent)(mu_s - mu_parent)^T]."""
    d0 = state.mean_hat[0] - hyper.m_root
    acc = cache.mean_prec_inv[0] + np.outer(d0, d0)
    for s in range(1, shape.n_nodes):
        pa = int(shape.parent[s])
        d = state.mean_hat[s] - state.mean_hat[pa]
        acc += cache.mean_prec_inv[s] + cache.mean_prec_inv[pa] + np.outer(d, d)
    return acc


def update_chain_precision(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
) -> None:
    inv_scale = cache.prior_chain_scale_inv + _chain_scatter(shape, hyper, state, cache)
    inv_scale = 0.5 * (inv_scale + inv_scale.T)
    scale = chol_inverse(inv_scale, "chain scale")
    state.chain_dof_hat = hyper.u + shape.n_nodes
    state.chain_scale_hat = 0.5 * (scale + scale.T)


def sweep(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    x: np.ndarray,
) -> SweepStats:
    """One full coordinate-ascent pass; leaves the cache fresh for elbo()."""
    update_path_posteriors(shape, state, cache)
    update_tree_posteriors(shape, state, cache)
    stats = accumulate_stats(cache, x)
    update_routing(shape, hyper, state, cache, stats)
    update_spreading(shape, hyper, state, cache)
    update_means(shape, hyper, state, cache, stats)
    update_precisions(shape, hyper, state, cache, stats)
    update_chain_precision(shape, hyper, state, cache)
    refresh_emit(shape, hyper, state, cache, x)
    return stats


def elbo(
    shape: TreeShape,
    hyper: Hyperparams,
    state: VariationalState,
    cache: SweepCache,
    x: np.ndarray,
) -> float:
    """Evidence lower bound at the current factors.

    Requires a fresh cache (refresh_all after manual state edits; sweep
    leaves it fresh).  Cost is linear in n times the node count; the
    mean-chain cross term reuses the precomputed precision inverses.
    """
    n, p = x.shape
    n_inner = shape.n_inner
    n_nodes = shape.n_nodes

    w = cache.p_tree_leaf * cache.p_on_path
    term_fit = float(np.sum(w * cache.e_log_emit))

    route = state.route_hat
    on_path_child = cache.p_on_path[:, 1:].reshape(n, n_inner, shape.K)
    term_route = float(
        np.sum(on_path_child * (cache.e_log_route[None, :, :] - np.log(route)))
    )

    gh = state.spread_hat[:, :n_inner]
    qi = cache.p_tree_inner[:, :n_inner]
    ql = cache.p_tree_leaf[:, :n_inner]
    term_tree = float(
        np.sum(qi * cache.e_log_spread[None, :n_inner])
        - np.sum(xlogy(qi, gh))
        + np.sum(ql * cache.e_log_stop[None, :n_inner])
        - np.sum(xlogy(ql, 1.0 - gh))
    )

    kl = kl_dirichlet(state.alpha_hat, hyper.alpha)
    kl += kl_beta(state.a_hat, state.b_hat, hyper.a, hyper.b)
    for s in range(n_nodes):
        kl += kl_wishart(
            state.wish_dof_hat[s], state.wish_scale_hat[s], hyper.nu[s], hyper.w[s]
        )
    kl += kl_wishart(state.chain_dof_hat, state.chain_scale_hat, hyper.u, hyper.v)

    e_chain = state.chain_dof_hat * state.chain_scale_hat
    e_logdet_chain = wishart_expected_logdet(
        state.chain_dof_hat, chol_logdet(state.chain_scale_hat), p
    )
    scatter = _chain_scatter(shape, hyper, state, cache)
    term_chain = 0.5 * (
        n_nodes * (e_logdet_chain - p * LOG_2PI) - float(np.sum(e_chain * scatter))
    )

    ent_means = 0.5 * float(
        np.sum(p * (LOG_2PI + 1.0) - cache.mean_prec_logdet)
    )

    value = term_fit + term_route + term_tree - kl + term_chain + ent_means
    if not np.isfinite(value):
        raise NumericStateError("evidence lower bound evaluated to a non-finite value")
    return float(value)


def node_posterior(cache: SweepCache) -> np.ndarray:
    """Per-point posterior over emitting nodes; rows sum to one."""
    w = cache.p_tree_leaf * cache.p_on_path
    return w / w.sum(axis=1, keepdims=True)


def map_nodes(cache: SweepCache) -> np.ndarray:
    """Most probable emitting node per point; ties take the smallest id."""
    return np.argmax(node_posterior(cache), axis=1)
