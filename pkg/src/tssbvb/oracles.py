"""Enumeration oracles for the per-point factor updates.

These recompute, by explicit sums over all latent trees or all root-to-leaf
paths, the quantities the engine obtains from its one-pass recursions.
They are exponential in the tree depth and exist to certify the fast path,
not to be fast themselves.
"""

import itertools
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .tree import FullSubtree, TreeShape, enumerate_subtrees, path_nodes


def tree_factor_prob(shape: TreeShape, spread_row: np.ndarray, t: FullSubtree) -> float:
    """Probability of one full subtree under a product-form tree factor."""
    prob = 1.0
    for s in t.inner(shape):
        prob *= float(spread_row[s])
    for s in t.leaves(shape):
        prob *= 1.0 - float(spread_row[s])
    return prob


def bruteforce_tree_posterior(
    shape: TreeShape,
    e_log_spread: np.ndarray,
    e_log_stop: np.ndarray,
    log_path_ev_row: np.ndarray,
    cap: int = 1_000_000,
) -> tuple[Sequence[FullSubtree], np.ndarray, float]:
    """Exact tree posterior of one point by summing over all full subtrees.

    Each subtree weighs in its inner expected log spreads and, at each of
    its leaves, the expected log stop plus the on-path-weighted emission
    evidence.  Returns the subtrees, their normalized probabilities, and
    the log normalizer.
    """
    subtrees = enumerate_subtrees(shape, cap=cap)
    log_w = np.empty(len(subtrees))
    for idx, t in enumerate(subtrees):
        acc = 0.0
        for s in t.inner(shape):
            acc += float(e_log_spread[s])
        for s in t.leaves(shape):
            acc += float(e_log_stop[s]) + float(log_path_ev_row[s])
        log_w[idx] = acc
    log_norm = float(logsumexp(log_w))
    return subtrees, np.exp(log_w - log_norm), log_norm


def bruteforce_path_posterior(
    shape: TreeShape,
    e_log_route: np.ndarray,
    log_stop_ev_row: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact path posterior of one point by summing over all K^D paths.

    A path weighs in the expected log routing probability of each edge it
    takes and the leaf-weighted emission evidence of every node it visits,
    the root included (a shared term, so it cannot change the posterior).

    Returns (on_path, route_cond): the marginal probability that each node
    lies on the path, and the conditional child choice at each inner node,
    comparable to the engine's routing factor.
    """
    k, d = shape.K, shape.D
    paths = list(itertools.product(range(k), repeat=d))
    log_w = np.empty(len(paths))
    for idx, z in enumerate(paths):
        nodes = path_nodes(shape, z)
        acc = float(log_stop_ev_row[0])
        for depth, choice in enumerate(z):
            acc += float(e_log_route[nodes[depth], choice])
            acc += float(log_stop_ev_row[nodes[depth + 1]])
        log_w[idx] = acc
    probs = np.exp(log_w - logsumexp(log_w))

    on_path = np.zeros(shape.n_nodes)
    for prob, z in zip(probs, paths):
        for s in path_nodes(shape, z):
            on_path[s] += prob

    route_cond = np.empty((shape.n_inner, k))
    for s in range(shape.n_inner):
        children = shape.children[s]
        route_cond[s] = on_path[children] / on_path[s]
    return on_path, route_cond
