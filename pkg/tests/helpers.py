"""Shared builders for the test suite."""

import numpy as np

from tssbvb import Hyperparams, init_cache, refresh_all
from tssbvb.state import VariationalState


def make_hyper(shape, p=2, **over):
    """Hyperparameters matching the small-study defaults, adapted to p."""
    base = dict(
        alpha=0.5,
        a=3.0,
        b=1.0,
        nu=max(2.0, float(p)),
        w=np.eye(p) / 5.0,
        u=max(5.0, float(p) + 1.0),
        v=np.eye(p) / 10.0,
        m_root=np.zeros(p),
    )
    base.update(over)
    return Hyperparams.create(shape, p, **base)


def random_spd(rng, p, jitter=0.5):
    m = rng.standard_normal((p, p))
    return m @ m.T / p + jitter * np.eye(p)


def random_state(shape, hyper, x, rng):
    """A fully randomized (but valid) variational state with a fresh cache."""
    p = hyper.p
    n = x.shape[0]
    state = VariationalState(
        alpha_hat=rng.uniform(0.2, 5.0, (shape.n_inner, shape.K)),
        a_hat=rng.uniform(0.5, 6.0, shape.n_inner),
        b_hat=rng.uniform(0.5, 6.0, shape.n_inner),
        mean_hat=rng.standard_normal((shape.n_nodes, p)) * 3.0,
        mean_prec_hat=np.stack([random_spd(rng, p) for _ in range(shape.n_nodes)]),
        wish_dof_hat=p - 1.0 + rng.uniform(0.5, 5.0, shape.n_nodes),
        wish_scale_hat=np.stack([random_spd(rng, p) for _ in range(shape.n_nodes)]),
        chain_dof_hat=p + 1.0 + rng.uniform(0.0, 3.0),
        chain_scale_hat=random_spd(rng, p),
        spread_hat=np.zeros((n, shape.n_nodes)),
        route_hat=rng.dirichlet(np.ones(shape.K), size=(n, shape.n_inner)),
    )
    state.spread_hat[:, : shape.n_inner] = rng.uniform(0.02, 0.98, (n, shape.n_inner))
    cache = init_cache(shape, hyper, n)
    refresh_all(shape, hyper, state, cache, x)
    return state, cache


def random_data(rng, n, p, spread=4.0):
    return rng.standard_normal((n, p)) * spread
