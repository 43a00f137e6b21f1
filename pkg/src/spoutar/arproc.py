"""Maps between partial autocorrelations, AR coefficients and autocovariances.

All maps assume unit marginal variance of the latent process, so the
innovation variance is ``1 - sum_k gamma_k * phi_k``.  Every function works
row-wise on ``p x q`` arrays (one row per latent series).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit


@dataclass(frozen=True)
class PacfSet:
    """Partial autocorrelations, one row per series, one column per lag."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        if not np.all(np.abs(rho) < 1.0):
            raise ValueError("partial autocorrelations must lie strictly inside (-1, 1)")
        object.__setattr__(self, "rho", rho)

    @property
    def p(self) -> int:
        return self.rho.shape[0]

    @property
    def q(self) -> int:
        return self.rho.shape[1]


@dataclass(frozen=True)
class ArModelSet:
    psi: np.ndarray    # p x q AR coefficients
    gamma: np.ndarray  # p x q autocovariances at lags 1..q (unit variance)
    sigma: np.ndarray  # p innovation standard deviations

    @property
    def sigma2(self) -> np.ndarray:
        return self.sigma**2


def _as_rows(x) -> np.ndarray:
    x = x.rho if isinstance(x, PacfSet) else x
    return np.atleast_2d(np.asarray(x, dtype=float))


def levinson_pacf_to_ar(rho: np.ndarray) -> np.ndarray:
    """Durbin-Levinson recursion, vectorised over rows. No validation."""
    rho = np.atleast_2d(rho)
    p, q = rho.shape
    phi = np.zeros((p, q))
    for k in range(q):
        r = rho[:, k]
        if k:
            prev = phi[:, :k].copy()
            phi[:, :k] = prev - r[:, None] * prev[:, ::-1]
        phi[:, k] = r
    return phi


def ar_to_acf(psi) -> np.ndarray:
    """Autocorrelations at lags ``1..q`` implied by causal AR coefficients.

    Solves the Yule-Walker system ``gamma_k = sum_j phi_j gamma_|k-j|`` with
    ``gamma_0 = 1`` for every row.
    """
    psi = _as_rows(psi)
    p, q = psi.shape
    if q == 0:
        return np.zeros((p, 0))
    lhs = np.broadcast_to(np.eye(q), (p, q, q)).copy()
    rhs = psi.copy()
    for k in range(1, q + 1):
        for j in range(1, q + 1):
            m = abs(k - j)
            if m:
                lhs[:, k - 1, m - 1] -= psi[:, j - 1]
    try:
        gamma = np.linalg.solve(lhs, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular Yule-Walker system; AR coefficients are not causal") from exc
    if not np.all(np.isfinite(gamma)) or np.any(np.abs(gamma) > 1 + 1e-8):
        raise ValueError("Yule-Walker solution is not a valid autocorrelation; input is not causal")
    return gamma


def innovation_sd(psi: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    s2 = 1.0 - np.sum(gamma * psi, axis=1)
    if np.any(s2 <= 0) or np.any(s2 > 1 + 1e-12):
        raise ValueError("innovation variance outside (0, 1]")
    return np.sqrt(s2)


def pacf_to_ar(rho) -> ArModelSet:
    """AR coefficients, autocorrelations and innovation s.d. from PACFs."""
    rho = _as_rows(rho)
    if not np.all(np.abs(rho) < 1.0):
        raise ValueError("non-stationary request: |rho| >= 1")
    psi, gamma = _levinson_with_acf(rho)
    # the product form equals 1 - sum(gamma * psi) but avoids cancellation near |rho| = 1
    s2 = np.prod(1.0 - rho**2, axis=1)
    return ArModelSet(psi=psi, gamma=gamma, sigma=np.sqrt(s2))


def _levinson_with_acf(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # gamma_k = sum_j phi_{k-1,j} gamma_{k-j} + rho_k * v_{k-1}, gamma_0 = 1
    p, q = rho.shape
    phi = np.zeros((p, q))
    gamma = np.zeros((p, q + 1))
    gamma[:, 0] = 1.0
    v = np.ones(p)
    for k in range(q):
        r = rho[:, k]
        gamma[:, k + 1] = np.sum(phi[:, :k] * gamma[:, k:0:-1], axis=1) + r * v
        if k:
            prev = phi[:, :k].copy()
            phi[:, :k] = prev - r[:, None] * prev[:, ::-1]
        phi[:, k] = r
        v = v * (1.0 - r**2)
    return phi, gamma[:, 1:]


def ar_to_pacf(psi) -> PacfSet:
    """Inverse (step-down) Levinson recursion."""
    phi = _as_rows(psi).copy()
    p, q = phi.shape
    rho = np.zeros((p, q))
    for k in range(q - 1, -1, -1):
        r = phi[:, k].copy()
        if np.any(np.abs(r) >= 1.0):
            raise ValueError("AR coefficients are not causal")
        rho[:, k] = r
        if k:
            prev = phi[:, :k]
            phi[:, :k] = (prev + r[:, None] * prev[:, ::-1]) / (1.0 - r**2)[:, None]
    return PacfSet(rho)


def unconstrained_to_pacf(v) -> np.ndarray:
    """``rho = 2 * logistic(v) - 1``; a uniform prior on rho is Logistic(0, 1) on v."""
    return 2.0 * expit(np.asarray(v, dtype=float)) - 1.0


def pacf_to_unconstrained(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if not np.all(np.abs(rho) < 1.0):
        raise ValueError("|rho| must be < 1")
    return logit((rho + 1.0) / 2.0)


def log_logistic_density(v) -> np.ndarray:
    """Elementwise log density of Logistic(0, 1)."""
    v = np.asarray(v, dtype=float)
    a = -np.abs(v)
    return a - 2.0 * np.log1p(np.exp(a))


def char_roots(psi_row) -> np.ndarray:
    """Roots of ``1 - phi_1 z - ... - phi_q z^q``."""
    psi_row = np.asarray(psi_row, dtype=float)
    coeffs = np.concatenate([-psi_row[::-1], [1.0]])
    return np.roots(coeffs)


def sample_acf(x: np.ndarray, nlags: int) -> np.ndarray:
    """Biased sample autocovariances ``c_0..c_nlags`` of each row (mean removed)."""
    x = np.atleast_2d(x)
    x = x - x.mean(axis=1, keepdims=True)
    n = x.shape[1]
    out = np.empty((x.shape[0], nlags + 1))
    for k in range(nlags + 1):
        out[:, k] = np.sum(x[:, k:] * x[:, : n - k], axis=1) / n
    return out


def yule_walker_pacf(acov: np.ndarray, clip: float = 0.99) -> np.ndarray:
    """PACFs from autocovariances ``c_0..c_q`` via Levinson recursion.

    This is the Yule-Walker estimator; the result is clipped into
    ``[-clip, clip]`` so it can seed a sampler.
    """
    acov = np.atleast_2d(acov)
    p, q1 = acov.shape
    q = q1 - 1
    r = acov / acov[:, :1]
    rho = np.zeros((p, q))
    phi = np.zeros((p, q))
    v = np.ones(p)
    for k in range(q):
        num = r[:, k + 1] - np.sum(phi[:, :k] * r[:, k:0:-1], axis=1) if k else r[:, 1].copy()
        kk = np.clip(num / v, -clip, clip)
        rho[:, k] = kk
        if k:
            prev = phi[:, :k].copy()
            phi[:, :k] = prev - kk[:, None] * prev[:, ::-1]
        phi[:, k] = kk
        v = v * (1.0 - kk**2)
    return rho
