"""Containers for the variational factors and their per-sweep caches."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError
from .expectations import chol_inverse
from .generative import Hyperparams
from .tree import TreeShape


@dataclass
class VariationalState:
    """Parameters of every variational factor.

    Node-level (serialized with models):
      alpha_hat      : [n_inner, K] routing Dirichlet.
      a_hat, b_hat   : [n_inner] edge-spreading Beta.
      mean_hat       : [n_nodes, p] Gaussian means of the node-mean factors.
      mean_prec_hat  : [n_nodes, p, p] their precisions.
      wish_dof_hat   : [n_nodes] emission-precision Wishart dof.
      wish_scale_hat : [n_nodes, p, p] emission-precision Wishart scales.
      chain_dof_hat / chain_scale_hat : Wishart factor of the mean-chain
                       precision.

    Per-point (never serialized):
      spread_hat : [n, n_nodes] in [0,1], exactly 0 at ambient leaves; the
                   tree factor of point i is the product-form distribution
                   with these per-node spreading probabilities.
      route_hat  : [n, n_inner, K] rows on the simplex; the path factor of
                   point i routes through edge (s, ch) with this probability.
    """

    alpha_hat: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    mean_hat: np.ndarray
    mean_prec_hat: np.ndarray
    wish_dof_hat: np.ndarray
    wish_scale_hat: np.ndarray
    chain_dof_hat: float
    chain_scale_hat: np.ndarray
    spread_hat: np.ndarray
    route_hat: np.ndarray

    def copy(self) -> "VariationalState":
        return VariationalState(
            alpha_hat=self.alpha_hat.copy(),
            a_hat=self.a_hat.copy(),
            b_hat=self.b_hat.copy(),
            mean_hat=self.mean_hat.copy(),
            mean_prec_hat=self.mean_prec_hat.copy(),
            wish_dof_hat=self.wish_dof_hat.copy(),
            wish_scale_hat=self.wish_scale_hat.copy(),
            chain_dof_hat=float(self.chain_dof_hat),
            chain_scale_hat=self.chain_scale_hat.copy(),
            spread_hat=self.spread_hat.copy(),
            route_hat=self.route_hat.copy(),
        )


@dataclass
class SweepCache:
    """Derived quantities the sweep stages share.

    e_log_route  : [n_inner, K] E[ln pi] under the routing factor.
    e_log_spread : [n_nodes] E[ln g]; -inf at ambient leaves (g fixed at 0).
    e_log_stop   : [n_nodes] E[ln(1-g)]; 0 at ambient leaves.
    e_log_emit   : [n, n_nodes] expected log Gaussian density per point/node.
    p_on_path    : [n, n_nodes] prob. node is on the latent path of point i.
    p_tree_leaf  : [n, n_nodes] prob. node is a leaf of the latent tree.
    p_tree_inner : [n, n_nodes] prob. node is inner in the latent tree.
    log_tree_sum : [n, n_nodes] log of the subtree-sum aggregate driving the
                   tree-factor recursion (its root entry is the log
                   normalizer of the unnormalized tree posterior).
    mean_prec_inv / mean_prec_logdet, wish_scale_logdet : Cholesky-derived
                   companions of the state matrices.
    prior_wish_scale_inv / prior_chain_scale_inv : fixed prior inverses.
    """

    e_log_route: np.ndarray
    e_log_spread: np.ndarray
    e_log_stop: np.ndarray
    e_log_emit: np.ndarray
    p_on_path: np.ndarray
    p_tree_leaf: np.ndarray
    p_tree_inner: np.ndarray
    log_tree_sum: np.ndarray
    mean_prec_inv: np.ndarray
    mean_prec_logdet: np.ndarray
    wish_scale_logdet: np.ndarray
    prior_wish_scale_inv: np.ndarray = field(repr=False)
    prior_chain_scale_inv: np.ndarray = field(repr=False)


@dataclass
class SweepStats:
    """Responsibility-weighted sufficient statistics of one sweep.

    path_count : [n_nodes] summed on-path probabilities.
    resp       : [n_nodes] summed node-posterior weights.
    resp_x     : [n_nodes, p] weighted first moments (never divided).
    resp_xx    : [n_nodes, p, p] weighted uncentered second moments.
    """

    path_count: np.ndarray
    resp: np.ndarray
    resp_x: np.ndarray
    resp_xx: np.ndarray


def init_state(shape: TreeShape, hyper: Hyperparams, x: np.ndarray, seed) -> VariationalState:
    """Initial variational state.

    Everything is pinned to the prior except the node means: the root mean
    is the sample mean and each child mean is drawn around its parent with
    precision u*V, so sibling subtrees start distinguishable.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ParameterDomainError("initialization needs a non-empty 2-D dataset")
    n, p = x.shape
    if p != hyper.p:
        raise ParameterDomainError(
            f"dataset dimension {p} does not match hyperparameter dimension {hyper.p}"
        )
    rng = np.random.default_rng(seed)

    chain_prec = hyper.u * hyper.v
    chain_cov = np.linalg.inv(chain_prec)

    mean_hat = np.empty((shape.n_nodes, p))
    mean_hat[0] = x.mean(axis=0)
    for s in range(1, shape.n_nodes):
        mean_hat[s] = rng.multivariate_normal(mean_hat[int(shape.parent[s])], chain_cov)

    spread_hat = np.zeros((n, shape.n_nodes))
    spread_hat[:, : shape.n_inner] = (hyper.a / (hyper.a + hyper.b))[None, :]

    return VariationalState(
        alpha_hat=hyper.alpha.copy(),
        a_hat=hyper.a.copy(),
        b_hat=hyper.b.copy(),
        mean_hat=mean_hat,
        mean_prec_hat=np.broadcast_to(chain_prec, (shape.n_nodes, p, p)).copy(),
        wish_dof_hat=hyper.nu.copy(),
        wish_scale_hat=hyper.w.copy(),
        chain_dof_hat=float(hyper.u),
        chain_scale_hat=hyper.v.copy(),
        spread_hat=spread_hat,
        route_hat=np.full((n, shape.n_inner, shape.K), 1.0 / shape.K),
    )


def init_cache(shape: TreeShape, hyper: Hyperparams, n: int) -> SweepCache:
    """Allocate a cache for n points; contents are filled by the engine."""
    p = hyper.p
    s_tot = shape.n_nodes
    return SweepCache(
        e_log_route=np.zeros((shape.n_inner, shape.K)),
        e_log_spread=np.zeros(s_tot),
        e_log_stop=np.zeros(s_tot),
        e_log_emit=np.zeros((n, s_tot)),
        p_on_path=np.zeros((n, s_tot)),
        p_tree_leaf=np.zeros((n, s_tot)),
        p_tree_inner=np.zeros((n, s_tot)),
        log_tree_sum=np.zeros((n, s_tot)),
        mean_prec_inv=np.zeros((s_tot, p, p)),
        mean_prec_logdet=np.zeros(s_tot),
        wish_scale_logdet=np.zeros(s_tot),
        prior_wish_scale_inv=np.stack(
            [chol_inverse(hyper.w[s], f"prior wish scale[{s}]") for s in range(s_tot)]
        ),
        prior_chain_scale_inv=chol_inverse(hyper.v, "prior chain scale"),
    )
