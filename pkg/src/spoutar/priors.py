"""Prior densities, thresholding operators and conjugate draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ThresholdPriorParams:
    lam: float = 0.0
    slab_sd: float = 1.0
    lambda_upper: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= self.lambda_upper:
            raise ValueError("threshold must lie in [0, lambda_upper]")
        if self.slab_sd <= 0:
            raise ValueError("slab_sd must be positive")


@dataclass
class HyperParams:
    xi: float = 0.0
    sigma_d: float = 10.0
    l_var_prior: tuple[float, float] = (0.01, 0.01)
    a_var_prior: tuple[float, float] = (0.1, 0.1)

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")
        if min(*self.l_var_prior, *self.a_var_prior) <= 0:
            raise ValueError("inverse-gamma shape and scale must be positive")


def hard_threshold(x, lam):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) > lam, x, 0.0)


def soft_threshold(x, lam):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def smooth_indicator(x, lam, h0=1e-8):
    """Differentiable surrogate of ``1{|x| > lam}``."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan((x * x - lam * lam) / h0))


def smooth_indicator_grad(x, lam, h0=1e-8):
    x = np.asarray(x, dtype=float)
    u = (x * x - lam * lam) / h0
    with np.errstate(over="ignore"):
        return (2.0 * x / h0) / (np.pi * (1.0 + u * u))


def smooth_hard_threshold_grad(x, lam, h0=1e-8):
    """Derivative of ``x * smooth_indicator(x)``, the smoothed hard threshold."""
    return smooth_indicator(x, lam, h0) + x * smooth_indicator_grad(x, lam, h0)


def threshold_prior_spike_mass(lam, slab_sd):
    """P(thresholded N(0, slab_sd^2) draw == 0)."""
    t = np.asarray(lam, dtype=float) / slab_sd
    return ndtr(t) - ndtr(-t)


def sample_thresholded(size, lam, slab_sd, rng, kind="hard"):
    x = rng.normal(0.0, slab_sd, size)
    return hard_threshold(x, lam) if kind == "hard" else soft_threshold(x, lam)


def log_invgauss(x, mean, shape=1.0):
    """Inverse-Gaussian log density; ``-inf`` at non-positive ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * (np.log(shape) - _LOG_2PI - 3.0 * np.log(x)) - shape * (x - mean) ** 2 / (2.0 * mean**2 * x)
    return np.where(x > 0, out, -np.inf)


def log_prior_d(d, xi) -> float:
    """Sum of InvGauss(exp(xi), 1) log densities; the mean is ``exp(xi)``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        return -np.inf
    return float(np.sum(log_invgauss(d, np.exp(xi), 1.0)))


def grad_log_prior_logd(d, xi) -> np.ndarray:
    """d/d(log d) of the InvGauss(exp(xi), 1) log density (no Jacobian term)."""
    mu = np.exp(xi)
    return -1.5 - (d * d - mu * mu) / (2.0 * mu * mu * d)


def log_prior_thresholded(entries, params: ThresholdPriorParams) -> float:
    """Log density of the soft-thresholded normal pushforward.

    Exact zeros carry the spike mass; a nonzero ``a`` has density
    ``phi((|a| + lam) / sd) / sd``, which together with the spike integrates
    to one.  With ``lam == 0`` there is no spike and this is the plain normal.
    """
    x = np.asarray(entries, dtype=float).ravel()
    lam, sd = params.lam, params.slab_sd
    if lam == 0:
        return float(np.sum(-0.5 * (x / sd) ** 2 - np.log(sd) - 0.5 * _LOG_2PI))
    zero = x == 0
    n_zero = int(zero.sum())
    nz = x[~zero]
    slab = -0.5 * ((np.abs(nz) + lam) / sd) ** 2 - np.log(sd) - 0.5 * _LOG_2PI
    return float(n_zero * np.log(threshold_prior_spike_mass(lam, sd)) + slab.sum())


def log_normal(x, sd) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * (x / sd) ** 2 - np.log(sd) - 0.5 * _LOG_2PI))


def log_invgamma(x, shape, scale) -> float:
    if x <= 0:
        return -np.inf
    return float(shape * np.log(scale) - gammaln(shape) - (shape + 1) * np.log(x) - scale / x)


def sample_invgamma(shape, scale, rng) -> float:
    return scale / rng.gamma(shape)


def sample_slab_variance(entries, shape, scale, rng, slab_only=True) -> float:
    """Conjugate InvGamma draw for the slab variance.

    With ``slab_only`` exact zeros are dropped (they carry no information
    about the slab); otherwise every entry counts.
    """
    e = np.asarray(entries, dtype=float).ravel()
    if slab_only:
        e = e[e != 0]
    return sample_invgamma(shape + 0.5 * e.size, scale + 0.5 * float(e @ e), rng)
