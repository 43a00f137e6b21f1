"""Conditional AR log-likelihood of the latent series and its gradients.

The first ``q`` latent values of each period enter only as regressors.
Gradients are taken with respect to ``Z``, the strictly lower part of ``L``
and ``log d``; the Kronecker-product forms are contracted to matrix
products so nothing larger than ``p x n`` is materialised.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arproc import pacf_to_ar, unconstrained_to_pacf
from .factorization import cayley, lower_from_free, skew_from_free, to_latent
from .priors import (
    hard_threshold,
    log_invgamma,
    log_normal,
    log_prior_d,
    soft_threshold,
)


def ar_residuals(z: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``e[i, t] = z[i, t] - sum_k psi[i, k] z[i, t - k]`` for ``t >= q``."""
    q = psi.shape[1]
    n = z.shape[1]
    e = z[:, q:].copy()
    for k in range(1, q + 1):
        e -= psi[:, k - 1, None] * z[:, q - k : n - k]
    return e


def loglik_rows(z, psi, sigma) -> np.ndarray:
    """Per-series log-likelihood including the ``-(n - q) log sigma`` term."""
    q = psi.shape[1]
    n_eff = z.shape[1] - q
    if n_eff < 0:
        raise ValueError("need more than q time points")
    e = ar_residuals(z, psi)
    return -0.5 * np.sum(e * e, axis=1) / sigma**2 - n_eff * np.log(sigma)


def grad_z_latent(z, psi, sigma) -> np.ndarray:
    """Gradient of the summed row log-likelihoods with respect to ``z``."""
    q = psi.shape[1]
    n = z.shape[1]
    r = ar_residuals(z, psi) / (sigma**2)[:, None]
    g = np.zeros_like(z, dtype=float)
    g[:, q:] -= r
    for k in range(1, q + 1):
        g[:, q - k : n - k] += psi[:, k - 1, None] * r
    return g


def log_jacobian(d, n_eff: int) -> float:
    """Log |det| of the map Y -> Z over ``n_eff`` time points; ``det U = det(I - L) = 1``."""
    return float(n_eff * np.sum(np.log(d)))


@dataclass
class LikelihoodContext:
    """One period: data ``y`` (p x n), factors and AR parameters."""

    y: np.ndarray
    d: np.ndarray
    l: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray
    a: np.ndarray | None = None
    u: np.ndarray | None = None
    _z: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.psi = np.atleast_2d(self.psi)
        if self.y.shape[1] <= self.q:
            raise ValueError(f"need more than q={self.q} time points, got {self.y.shape[1]}")
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("innovation standard deviations must be positive")
        if self.u is None:
            self.u = np.eye(self.y.shape[0]) if self.a is None else cayley(self.a)

    @property
    def q(self) -> int:
        return self.psi.shape[1]

    @property
    def z(self) -> np.ndarray:
        if self._z is None:
            self._z = to_latent(self.y, self.d, self.l, u=self.u)
        return self._z


def loglik(ctx: LikelihoodContext) -> float:
    return float(np.sum(loglik_rows(ctx.z, ctx.psi, ctx.sigma)))


def grad_z(ctx: LikelihoodContext) -> np.ndarray:
    return grad_z_latent(ctx.z, ctx.psi, ctx.sigma)


def grad_l_from(gz, y, d, u) -> np.ndarray:
    """``-(D U G) Y^T`` restricted to the strict lower triangle."""
    return np.tril(-(d[:, None] * (u @ gz)) @ y.T, -1)


def grad_logd_from(gz, y, d, l, u) -> np.ndarray:
    """``diag(U G ((I - L) Y)^T) * d``."""
    w = y - l @ y
    return np.einsum("it,it->i", u @ gz, w) * d


def grad_l(ctx: LikelihoodContext) -> np.ndarray:
    return grad_l_from(grad_z(ctx), ctx.y, ctx.d, ctx.u)


def grad_logd(ctx: LikelihoodContext) -> np.ndarray:
    return grad_logd_from(grad_z(ctx), ctx.y, ctx.d, ctx.l, ctx.u)


def threshold_l(x, lam) -> np.ndarray:
    """Effective ``L`` entries from their latent pre-threshold values."""
    return hard_threshold(x, lam)


def threshold_a(x, lam) -> np.ndarray:
    """Effective ``A`` entries; ``A`` uses soft thresholding."""
    return soft_threshold(x, lam)


def log_posterior(state, data, cfg) -> float:
    """Joint log density of the parameters in their natural scale.

    ``state`` carries ``d``, the latent pre-threshold entries ``xl1``, ``xl2``,
    ``xa``, unconstrained PACFs ``v``, thresholds ``lam_*``, slab variances
    ``s2_*`` and the hyper-mean ``xi``.  Reparametrisation Jacobians used by
    individual samplers are not included.  Returns ``-inf`` for any
    constraint violation.
    """
    p = data.p
    d = np.asarray(state.d, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        return -np.inf
    rho = unconstrained_to_pacf(state.v)
    if not np.all(np.abs(rho) < 1.0):
        return -np.inf
    q = rho.shape[1]
    lo, hi = cfg.lambda_lower, cfg.lambda_upper
    lams = [state.lam_l1, state.lam_a] + ([state.lam_l2] if data.paired else [])
    if any(not (lo <= lam <= hi) for lam in lams):
        return -np.inf
    for s2 in (state.s2_l1, state.s2_a) + ((state.s2_l2,) if data.paired else ()):
        if not s2 > 0:
            return -np.inf

    ar = pacf_to_ar(rho)
    u = cayley(skew_from_free(threshold_a(state.xa, state.lam_a), p))
    out = 0.0
    periods = [(data.y1, state.xl1, state.lam_l1)]
    if data.paired:
        periods.append((data.y2, state.xl2, state.lam_l2))
    for y, x, lam in periods:
        l = lower_from_free(threshold_l(x, lam), p)
        z = to_latent(y, d, l, u=u)
        out += float(np.sum(loglik_rows(z, ar.psi, ar.sigma)))
        out += log_jacobian(d, y.shape[1] - q)

    out += log_prior_d(d, state.xi) + log_normal(state.xi, cfg.sigma_d)
    out += log_normal(state.xl1, np.sqrt(state.s2_l1)) + log_invgamma(state.s2_l1, *cfg.l_var_prior)
    if data.paired:
        out += log_normal(state.xl2, np.sqrt(state.s2_l2)) + log_invgamma(state.s2_l2, *cfg.l_var_prior)
    out += log_normal(state.xa, np.sqrt(state.s2_a)) + log_invgamma(state.s2_a, *cfg.a_var_prior)
    if hi > lo:
        out -= len(lams) * np.log(hi - lo)
    n_active = int(np.sum(cfg.active_mask(p)))
    out -= n_active * np.log(2.0)
    return out
