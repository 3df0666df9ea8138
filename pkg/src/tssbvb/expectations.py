"""Closed-form expectations and KL terms under the variational factors.

Everything here is standard conjugate machinery: digamma identities for
Dirichlet/Beta logs, the expected log-density of a Gaussian under a
Normal-times-Wishart factor, and the KL divergences the lower bound needs.
Log-determinants and inverses go through Cholesky factors; a failed
factorization raises :class:`NumericStateError`.
"""

import numpy as np
from scipy.special import digamma, gammaln, multigammaln

from .errors import NumericStateError, ParameterDomainError

LOG_2PI = float(np.log(2.0 * np.pi))


def chol_lower(mat: np.ndarray, context: str = "matrix") -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericStateError(f"{context} is not positive definite") from exc


def chol_logdet(mat: np.ndarray, context: str = "matrix") -> float:
    c = chol_lower(mat, context)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def chol_inverse(mat: np.ndarray, context: str = "matrix") -> np.ndarray:
    c = chol_lower(mat, context)
    inv_c = np.linalg.inv(c)
    return inv_c.T @ inv_c


def expected_log_dirichlet_weight(alpha_hat: np.ndarray, ch: int) -> float:
    """E[ln pi_ch] under Dirichlet(alpha_hat): psi(alpha_ch) - psi(sum)."""
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64)
    if np.any(alpha_hat <= 0):
        raise ParameterDomainError("Dirichlet parameters must be positive")
    return float(digamma(alpha_hat[ch]) - digamma(alpha_hat.sum()))


def expected_log_dirichlet(alpha_hat: np.ndarray) -> np.ndarray:
    """Row-wise E[ln pi] for a stack of Dirichlet parameters [..., K]."""
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64)
    if np.any(alpha_hat <= 0):
        raise ParameterDomainError("Dirichlet parameters must be positive")
    return digamma(alpha_hat) - digamma(alpha_hat.sum(axis=-1, keepdims=True))


def expected_log_g(a_hat, b_hat):
    """(E[ln g], E[ln(1-g)]) under Beta(a_hat, b_hat); vectorized."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    b_hat = np.asarray(b_hat, dtype=np.float64)
    if np.any(a_hat <= 0) or np.any(b_hat <= 0):
        raise ParameterDomainError("Beta parameters must be positive")
    tot = digamma(a_hat + b_hat)
    return digamma(a_hat) - tot, digamma(b_hat) - tot


def wishart_expected_logdet(nu_hat: float, w_logdet: float, p: int) -> float:
    """E[ln|X|] for X ~ Wishart(nu_hat, W) given ln|W|."""
    j = np.arange(1, p + 1)
    return float(np.sum(digamma((nu_hat + 1 - j) / 2.0)) + p * np.log(2.0) + w_logdet)


def expected_log_gaussian(x, m_hat, l_hat, nu_hat, w_hat) -> float:
    """E[ln N(x | mu, Lambda^-1)] under q(mu) = N(m_hat, l_hat^-1) and
    q(Lambda) = Wishart(nu_hat, w_hat).

    Reference (scalar-call) form of the engine's batched computation; the
    two are asserted equal in the tests.
    """
    x = np.asarray(x, dtype=np.float64)
    m_hat = np.asarray(m_hat, dtype=np.float64)
    p = x.shape[0]
    w_logdet = chol_logdet(w_hat, "w_hat")
    l_inv = chol_inverse(l_hat, "l_hat")
    d = x - m_hat
    quad = float(nu_hat) * float(d @ w_hat @ d)
    trace = float(nu_hat) * float(np.trace(w_hat @ l_inv))
    return 0.5 * (
        wishart_expected_logdet(nu_hat, w_logdet, p) - p * LOG_2PI - quad - trace
    )


def kl_dirichlet(alpha_hat: np.ndarray, alpha: np.ndarray) -> float:
    """KL(Dir(alpha_hat) || Dir(alpha)) summed over leading rows."""
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    sum_hat = alpha_hat.sum(axis=-1)
    term = (
        gammaln(sum_hat)
        - gammaln(alpha_hat).sum(axis=-1)
        - gammaln(alpha.sum(axis=-1))
        + gammaln(alpha).sum(axis=-1)
    )
    term = term + np.sum(
        (alpha_hat - alpha) * (digamma(alpha_hat) - digamma(sum_hat)[..., None]),
        axis=-1,
    )
    return float(np.sum(term))


def kl_beta(a_hat, b_hat, a, b) -> float:
    """KL(Beta(a_hat, b_hat) || Beta(a, b)) summed over entries."""
    pair_hat = np.stack([np.asarray(a_hat, dtype=np.float64),
                         np.asarray(b_hat, dtype=np.float64)], axis=-1)
    pair = np.stack([np.broadcast_to(np.asarray(a, dtype=np.float64), pair_hat.shape[:-1]),
                     np.broadcast_to(np.asarray(b, dtype=np.float64), pair_hat.shape[:-1])],
                    axis=-1)
    return kl_dirichlet(pair_hat, pair)


def _wishart_log_norm(nu: float, w_logdet: float, p: int) -> float:
    # ln B(W, nu) of the density B |X|^((nu-p-1)/2) exp(-tr(W^-1 X)/2).
    return float(
        -0.5 * nu * w_logdet - 0.5 * nu * p * np.log(2.0) - multigammaln(0.5 * nu, p)
    )


def kl_wishart(nu_hat: float, w_hat: np.ndarray, nu: float, w: np.ndarray) -> float:
    """KL(Wishart(nu_hat, w_hat) || Wishart(nu, w))."""
    w_hat = np.asarray(w_hat, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    p = w_hat.shape[0]
    ld_hat = chol_logdet(w_hat, "w_hat")
    ld = chol_logdet(w, "w")
    eld = wishart_expected_logdet(nu_hat, ld_hat, p)
    w_inv = chol_inverse(w, "w")
    return (
        _wishart_log_norm(nu_hat, ld_hat, p)
        - _wishart_log_norm(nu, ld, p)
        + 0.5 * (nu_hat - nu) * eld
        - 0.5 * nu_hat * p
        + 0.5 * nu_hat * float(np.trace(w_inv @ w_hat))
    )
