"""Ground-truth model: parameter containers, ancestral sampling, node marginal.

The generative story for one data point: draw a root-to-leaf path from the
per-node routing simplexes, independently draw a full subtree by spreading
edges with per-node probability g, take the unique subtree leaf on the path,
and emit a Gaussian from that node.  The closed-form marginal over emitting
nodes (:func:`node_marginal`) collapses the double sum over subtrees and
paths; :func:`node_marginal_bruteforce` keeps the double sum as an oracle.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.stats import wishart

from .errors import ParameterDomainError
from .tree import FullSubtree, TreeShape, enumerate_subtrees, path_nodes

_SIMPLEX_TOL = 1e-12


def require_spd(mat: np.ndarray, name: str) -> np.ndarray:
    """Validate symmetry and positive definiteness (Cholesky success).

    Cholesky success *is* the definition of SPD here; there is no
    eigenvalue tolerance knob.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ParameterDomainError(f"{name} must be a square matrix, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(mat).max())):
        raise ParameterDomainError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ParameterDomainError(f"{name} is not positive definite") from exc
    return mat


@dataclass(frozen=True)
class Hyperparams:
    """All prior constants for a given tree shape and data dimension p.

    alpha   : float64[n_inner, K], positive rows (routing Dirichlet).
    a, b    : float64[n_inner], positive (edge-spreading Beta).
    nu      : float64[n_nodes], each > p-1; w: float64[n_nodes, p, p] SPD
              (per-node emission-precision Wishart).
    u, v    : scalar > p-1 and p x p SPD (mean-chain precision Wishart).
    m_root  : float64[p], prior mean anchoring the root.
    """

    p: int
    alpha: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    u: float
    v: np.ndarray = field(repr=False)
    m_root: np.ndarray = field(repr=False)

    @staticmethod
    def create(shape: TreeShape, p: int, alpha, a, b, nu, w, u, v, m_root) -> "Hyperparams":
        """Validate and freeze a hyperparameter set; scalars broadcast."""
        if int(p) != p or p < 1:
            raise ParameterDomainError(f"data dimension p must be a positive integer, got {p!r}")
        p = int(p)
        alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64),
                                (shape.n_inner, shape.K)).copy()
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (shape.n_inner,)).copy()
        b = np.broadcast_to(np.asarray(b, dtype=np.float64), (shape.n_inner,)).copy()
        nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (shape.n_nodes,)).copy()
        w = np.asarray(w, dtype=np.float64)
        if w.ndim == 2:
            w = np.broadcast_to(w, (shape.n_nodes, p, p)).copy()
        v = np.asarray(v, dtype=np.float64)
        m_root = np.broadcast_to(np.asarray(m_root, dtype=np.float64), (p,)).copy()

        if np.any(alpha <= 0):
            raise ParameterDomainError("alpha entries must be positive")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ParameterDomainError("a and b must be positive")
        if np.any(nu <= p - 1):
            raise ParameterDomainError(f"each nu must exceed p-1 = {p - 1}")
        if not u > p - 1:
            raise ParameterDomainError(f"u must exceed p-1 = {p - 1}, got {u}")
        if w.shape != (shape.n_nodes, p, p):
            raise ParameterDomainError(f"w must have shape ({shape.n_nodes}, {p}, {p})")
        for s in range(shape.n_nodes):
            require_spd(w[s], f"w[{s}]")
        require_spd(v, "v")
        return Hyperparams(p=p, alpha=alpha, a=a, b=b, nu=nu, w=w,
                           u=float(u), v=v, m_root=m_root)


@dataclass(frozen=True)
class ModelParams:
    """One concrete draw of the generative parameters.

    pi   : float64[n_inner, K], each row a simplex.
    g    : float64[n_nodes] in [0,1], exactly 0 at ambient leaves.
    mu   : float64[n_nodes, p].
    lam  : float64[n_nodes, p, p] SPD emission precisions.
    chain_precision : float64[p, p] SPD precision of the mean chain.
    """

    pi: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    chain_precision: np.ndarray = field(repr=False)

    @staticmethod
    def create(shape: TreeShape, pi, g, mu, lam, chain_precision) -> "ModelParams":
        pi = np.asarray(pi, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        lam = np.asarray(lam, dtype=np.float64)
        if pi.shape != (shape.n_inner, shape.K):
            raise ParameterDomainError("pi must have one simplex row per inner node")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > _SIMPLEX_TOL):
            raise ParameterDomainError("each pi row must be a simplex (sum 1 within 1e-12)")
        if g.shape != (shape.n_nodes,) or np.any(g < 0) or np.any(g > 1):
            raise ParameterDomainError("g must be per-node values in [0, 1]")
        if np.any(g[shape.n_inner:] != 0):
            raise ParameterDomainError("g must be exactly 0 at ambient leaves")
        p = mu.shape[1]
        if mu.shape != (shape.n_nodes, p):
            raise ParameterDomainError("mu must be a per-node vector stack")
        if lam.shape != (shape.n_nodes, p, p):
            raise ParameterDomainError("lam must be a per-node matrix stack")
        for s in range(shape.n_nodes):
            require_spd(lam[s], f"lam[{s}]")
        chain_precision = require_spd(chain_precision, "chain_precision")
        return ModelParams(pi=pi, g=g, mu=mu, lam=lam, chain_precision=chain_precision)


def _normal_from_precision(rng, mean, precision_chol_upper):
    # cov = P^-1 with P = C^T C (upper C): x = mean + C^-1 z has cov P^-1.
    z = rng.standard_normal(mean.shape[0])
    return mean + solve_triangular(precision_chol_upper, z, lower=False)


def sample_parameters(shape: TreeShape, hyper: Hyperparams, seed) -> ModelParams:
    """Ancestral draw of all generative parameters.

    Draw order is fixed (pi by node id, g by node id, chain precision,
    per-node emission precisions, then means root to leaves), so a seed
    pins the entire parameter set.
    """
    rng = np.random.default_rng(seed)
    p = hyper.p

    pi = np.empty((shape.n_inner, shape.K))
    for s in range(shape.n_inner):
        pi[s] = rng.dirichlet(hyper.alpha[s])

    g = np.zeros(shape.n_nodes)
    g[: shape.n_inner] = rng.beta(hyper.a, hyper.b)

    chain_precision = wishart(df=hyper.u, scale=hyper.v).rvs(random_state=rng)
    chain_precision = np.atleast_2d(chain_precision)

    lam = np.empty((shape.n_nodes, p, p))
    for s in range(shape.n_nodes):
        lam[s] = np.atleast_2d(wishart(df=hyper.nu[s], scale=hyper.w[s]).rvs(random_state=rng))

    chol_u = cholesky(chain_precision, lower=False)
    mu = np.empty((shape.n_nodes, p))
    mu[0] = _normal_from_precision(rng, hyper.m_root, chol_u)
    for s in range(1, shape.n_nodes):
        mu[s] = _normal_from_precision(rng, mu[int(shape.parent[s])], chol_u)

    return ModelParams.create(shape, pi, g, mu, lam, chain_precision)


def sample_path(shape: TreeShape, params: ModelParams, seed) -> np.ndarray:
    """Draw one routing path z (length D over child indices)."""
    rng = np.random.default_rng(seed)
    z = np.empty(shape.D, dtype=np.int64)
    s = 0
    for d in range(shape.D):
        k = rng.choice(shape.K, p=params.pi[s])
        z[d] = k
        s = int(shape.children[s, k])
    return z


def sample_subtree(shape: TreeShape, params: ModelParams, seed) -> FullSubtree:
    """Draw one full subtree by top-down edge spreading."""
    rng = np.random.default_rng(seed)
    member = np.zeros(shape.n_nodes, dtype=bool)
    member[0] = True
    frontier = [0]
    while frontier:
        s = frontier.pop(0)
        if shape.is_inner(s) and rng.random() < params.g[s]:
            for c in shape.children[s]:
                member[int(c)] = True
                frontier.append(int(c))
    return FullSubtree(member=member)


def subtree_prior_prob(shape: TreeShape, t: FullSubtree, params: ModelParams) -> float:
    """prod_{inner} g_s * prod_{leaves} (1 - g_s) for one full subtree."""
    t.validate(shape)
    prob = 1.0
    for s in t.inner(shape):
        prob *= params.g[s]
    for s in t.leaves(shape):
        prob *= 1.0 - params.g[s]
    return float(prob)


def resolve_node(shape: TreeShape, t: FullSubtree, z) -> int:
    """The unique subtree leaf on the root-to-leaf path of z."""
    member = t.member
    s = 0
    for k in np.asarray(z, dtype=np.int64):
        c = int(shape.children[s, k]) if shape.is_inner(s) else None
        if c is None or not member[c]:
            return s
        s = c
    return s


def sample_datapoint(shape: TreeShape, params: ModelParams, s, seed) -> np.ndarray:
    """Gaussian draw from node s: mean mu_s, covariance lam_s^-1."""
    s = shape.check_node(s)
    rng = np.random.default_rng(seed)
    chol_u = cholesky(params.lam[s], lower=False)
    return _normal_from_precision(rng, params.mu[s], chol_u)


def node_marginal(shape: TreeShape, params: ModelParams) -> np.ndarray:
    """Closed-form Pr{S = s} over all nodes.

    Top-down: the reach probability of the root is 1; a child's reach
    probability is parent reach * g_parent * pi_edge, and each node keeps
    (1 - g_s) of its reach.  Sums to 1 by construction.
    """
    reach = np.zeros(shape.n_nodes)
    reach[0] = 1.0
    for s in range(shape.n_inner):
        for k in range(shape.K):
            c = int(shape.children[s, k])
            reach[c] = reach[s] * params.g[s] * params.pi[s, k]
    return reach * (1.0 - params.g)


def node_marginal_bruteforce(shape: TreeShape, params: ModelParams,
                             cap: int = 1_000_000) -> np.ndarray:
    """Oracle: explicit double sum over all subtrees and all paths.

    For each (T, z) pair, the emitting node is the unique leaf of T on the
    path of z; its probability mass is p(T|g) * p(z|pi).
    """
    import itertools

    out = np.zeros(shape.n_nodes)
    subtrees = enumerate_subtrees(shape, cap=cap)
    t_probs = [subtree_prior_prob(shape, t, params) for t in subtrees]
    for z in itertools.product(range(shape.K), repeat=shape.D):
        z = np.asarray(z, dtype=np.int64)
        pz = 1.0
        nodes = path_nodes(shape, z)
        for d in range(shape.D):
            pz *= params.pi[nodes[d], z[d]]
        for t, pt in zip(subtrees, t_probs):
            out[resolve_node(shape, t, z)] += pt * pz
    return out
