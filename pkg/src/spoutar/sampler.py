"""Metropolis-within-Gibbs sampler for the shared-parameter model.

Blocks per iteration (after the AR-only warm-up):

* adaptive random-walk MH on the unconstrained PACFs, one block per series;
* random-walk MH on the latent entries of ``A``;
* MALA on the latent entries of ``L_1`` and ``L_2`` (each with its own data);
* MALA on ``log d`` with the combined likelihood;
* conjugate draws of the slab variances;
* log-scale random-walk MH on the thresholds, on their own cadence, and on
  the inverse-Gaussian hyper-mean.

``L`` and ``A`` are stored through latent pre-threshold values ``x`` with a
Gaussian prior; the effective entries are ``H_lam(x)`` (``L``) and
``S_lam(x)`` (``A``), which induces the thresholded priors exactly.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.covariance import ledoit_wolf

from .arproc import (
    levinson_pacf_to_ar,
    log_logistic_density,
    pacf_to_unconstrained,
    sample_acf,
    unconstrained_to_pacf,
    yule_walker_pacf,
)
from .factorization import (
    PairedDataset,
    assemble_precision,
    cayley,
    decompose_precision,
    free_from_lower,
    lower_from_free,
    lower_indices,
    skew_from_free,
)
from .likelihood import (
    grad_l_from,
    grad_logd_from,
    grad_z_latent,
    loglik_rows,
    threshold_a,
    threshold_l,
)
from .priors import (
    grad_log_prior_logd,
    log_invgamma,
    log_normal,
    log_prior_d,
    sample_slab_variance,
    smooth_hard_threshold_grad,
)

logger = logging.getLogger(__name__)

MH_BLOCKS = ("pacf", "a", "xi", "lam_l1", "lam_l2", "lam_a")
MALA_BLOCKS = ("l1", "l2", "logd")


@dataclass
class ChainConfig:
    order: int = 2
    total_iters: int = 10000
    burn_in: int = 5000
    ar_only_until: int = 1500
    thresholds_zero_until: int = 2500
    tune_every: int = 100
    lambda_l_every: int = 20
    lambda_a_every: int = 30
    mh_accept_band: tuple[float, float] = (0.15, 0.40)
    mala_accept_band: tuple[float, float] = (0.45, 0.70)
    seed: int = 0
    thin: int = 1
    single_period: bool = False
    series_orders: tuple[int, ...] | None = None
    fix_rotation: bool = False
    precondition: bool = True
    dense_precond_max: int = 2000
    precond_every: int = 5
    lambda_lower: float = 0.0
    lambda_upper: float = 100.0
    h0: float = 1e-8
    sigma_d: float = 10.0
    l_var_prior: tuple[float, float] = (0.01, 0.01)
    a_var_prior: tuple[float, float] = (0.1, 0.1)
    log_path: str | None = None

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("AR order must be at least 1")
        if not 0 <= self.ar_only_until < self.thresholds_zero_until <= self.burn_in <= self.total_iters:
            raise ValueError(
                "need 0 <= ar_only_until < thresholds_zero_until <= burn_in <= total_iters"
            )
        for band in (self.mh_accept_band, self.mala_accept_band):
            if not 0 < band[0] < band[1] < 1:
                raise ValueError("acceptance bands must lie inside (0, 1)")
        if self.thin < 1 or self.tune_every < 1:
            raise ValueError("thin and tune_every must be positive")
        if self.series_orders is not None:
            self.series_orders = tuple(int(k) for k in self.series_orders)
            if any(k < 1 or k > self.order for k in self.series_orders):
                raise ValueError("series orders must lie in [1, order]")
        self.mh_accept_band = tuple(self.mh_accept_band)
        self.mala_accept_band = tuple(self.mala_accept_band)
        self.l_var_prior = tuple(self.l_var_prior)
        self.a_var_prior = tuple(self.a_var_prior)

    def active_mask(self, p: int) -> np.ndarray:
        """Which PACF lags are free; lags beyond a series' own order stay at 0."""
        if self.series_orders is None:
            return np.ones((p, self.order), dtype=bool)
        if len(self.series_orders) != p:
            raise ValueError(f"series_orders has {len(self.series_orders)} entries for p={p}")
        return np.arange(self.order)[None, :] < np.asarray(self.series_orders)[:, None]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------- kernels


def tune_scale(scale: float, rate: float, band: tuple[float, float]) -> float:
    """Multiplicative step-size update aimed at the middle of ``band``.

    Outside the band the log-scale moves by ``max(0.1, |rate - mid|)``
    towards it; inside, it is nudged by ``(rate - mid) / 2`` so window noise
    averages out and the scale settles near the band centre.
    """
    lo, hi = band
    mid = 0.5 * (lo + hi)
    if lo <= rate <= hi:
        return scale * math.exp(0.5 * (rate - mid))
    step = max(0.1, abs(rate - mid))
    return scale * math.exp(step if rate > mid else -step)


def mh_step(x, logp_x, target, scale, rng, aux=None):
    """Gaussian random-walk Metropolis step.

    ``target(prop)`` returns ``(logp, aux)`` or ``None`` for an invalid
    proposal.  Returns ``(accepted, x, logp, aux)``.
    """
    prop = x + scale * rng.standard_normal(np.shape(x))
    log_u = math.log(rng.random())
    res = target(prop)
    if res is None or not np.isfinite(res[0]):
        return False, x, logp_x, aux
    if log_u < res[0] - logp_x:
        return True, prop, res[0], res[1]
    return False, x, logp_x, aux


class RowBlockPrecond:
    """Block-diagonal MALA preconditioner over the free entries of a strictly lower matrix.

    Row ``i`` owns the contiguous entries ``(i, 0..i-1)``; ``cov[i]`` is that
    row's proposal covariance.  Factors are zero-padded to ``(p, p-1, p-1)``
    so every operation is one batched contraction.
    """

    def __init__(self, covs: list[np.ndarray]):
        p = len(covs)
        w = max(p - 1, 1)
        self.p = p
        self.chol = np.zeros((p, w, w))
        self.chol_inv = np.zeros((p, w, w))
        for i, c in enumerate(covs):
            if i == 0:
                continue
            f = np.linalg.cholesky(c)
            self.chol[i, :i, :i] = f
            self.chol_inv[i, :i, :i] = np.linalg.inv(f)
        self.chol_t = np.ascontiguousarray(self.chol.transpose(0, 2, 1))
        self.rows, self.cols = lower_indices(p)

    def _pad(self, v):
        out = np.zeros((self.p, max(self.p - 1, 1)))
        out[self.rows, self.cols] = v
        return out

    def _unpad(self, m):
        return m[self.rows, self.cols]

    def apply(self, v):
        b = self._pad(v)[:, :, None]
        return self._unpad((self.chol @ (self.chol_t @ b))[:, :, 0])

    def sample(self, noise):
        return self._unpad((self.chol @ self._pad(noise)[:, :, None])[:, :, 0])

    def quad(self, v):
        r = self.chol_inv @ self._pad(v)[:, :, None]
        return float(np.sum(r * r))


class DensePrecond:
    """Full-covariance MALA preconditioner ``M = H^{-1}`` from a precision ``H``.

    Stores ``M``, a square root ``C = chol(H)^{-T}`` and ``H`` itself so that
    apply, sample and quad are each one matrix-vector product.
    """

    def __init__(self, precision: np.ndarray):
        self.h = precision
        c = np.linalg.cholesky(precision)
        c_inv = solve_triangular(c, np.eye(c.shape[0]), lower=True, check_finite=False)
        self.root = np.ascontiguousarray(c_inv.T)
        self.cov = self.root @ c_inv

    def apply(self, v):
        return self.cov @ v

    def sample(self, noise):
        return self.root @ noise

    def quad(self, v):
        return float(v @ (self.h @ v))


def _precond_ops(precond):
    if precond is None:
        return (lambda v: v), (lambda e: e), (lambda v: float(np.sum(v * v)))
    if isinstance(precond, np.ndarray):
        sq = np.sqrt(precond)
        return (lambda v: precond * v), (lambda e: sq * e), (lambda v: float(np.sum(v * v / precond)))
    return precond.apply, precond.sample, precond.quad


def mala_step(x, logp_x, grad_x, target, eps, rng, precond=None, aux=None):
    """One MALA step with an optional fixed preconditioner.

    ``precond`` is ``None``, an array of diagonal variances, or an object
    with ``apply``/``sample``/``quad`` (see :class:`RowBlockPrecond`).
    ``target(prop)`` returns ``(logp, grad, aux)`` or ``None``.  Returns
    ``(accepted, x, logp, grad, aux, finite)`` where ``finite`` is False when
    the proposal produced a non-finite gradient.
    """
    apply, sample, quad = _precond_ops(precond)
    e2 = eps * eps
    mean_fwd = x + 0.5 * e2 * apply(grad_x)
    prop = mean_fwd + eps * sample(rng.standard_normal(np.shape(x)))
    log_u = math.log(rng.random())
    res = target(prop)
    if res is None:
        return False, x, logp_x, grad_x, aux, True
    logp_p, grad_p, aux_p = res
    if not (np.isfinite(logp_p) and np.all(np.isfinite(grad_p))):
        return False, x, logp_x, grad_x, aux, bool(np.all(np.isfinite(grad_p)))
    mean_bwd = prop + 0.5 * e2 * apply(grad_p)
    log_q_fwd = -quad(prop - mean_fwd) / (2 * e2)
    log_q_bwd = -quad(x - mean_bwd) / (2 * e2)
    if log_u < logp_p - logp_x + log_q_bwd - log_q_fwd:
        return True, prop, logp_p, grad_p, aux_p, True
    return False, x, logp_x, grad_x, aux, True


@dataclass
class ToyRun:
    samples: np.ndarray
    window_rates: list[float]
    scale: float


def run_toy(kind, logp, x0, n_draws, burn_in, rng, grad=None, scale=1.0,
            tune_every=100, band=None) -> ToyRun:
    """Run a single MH or MALA kernel on a standalone target, with the chain's tuning rule.

    Tuning happens during ``burn_in`` only; acceptance rates of the
    post-burn-in windows are reported.
    """
    if band is None:
        band = ChainConfig.mala_accept_band if kind == "mala" else ChainConfig.mh_accept_band
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    lp = logp(x)
    g = grad(x) if kind == "mala" else None
    out = np.empty((n_draws, x.size))
    rates, acc = [], 0
    for it in range(1, burn_in + n_draws + 1):
        if kind == "mala":
            ok, x, lp, g, _, _ = mala_step(x, lp, g, lambda v: (logp(v), grad(v), None), scale, rng)
        else:
            ok, x, lp, _ = mh_step(x, lp, lambda v: (logp(v), None), scale, rng)
        acc += ok
        if it % tune_every == 0:
            rate = acc / tune_every
            if it <= burn_in:
                scale = tune_scale(scale, rate, band)
            else:
                rates.append(rate)
            acc = 0
        if it > burn_in:
            out[it - burn_in - 1] = x
    return ToyRun(out, rates, scale)


# ---------------------------------------------------------------- state


@dataclass
class AdaptationState:
    scales: dict[str, float]
    pacf_scale: np.ndarray
    pacf_mean: np.ndarray
    pacf_m2: np.ndarray
    pacf_count: int = 0
    adapt_start: int = 200
    window_acc: dict[str, float] = field(default_factory=dict)
    window_att: dict[str, int] = field(default_factory=dict)
    pacf_window_acc: np.ndarray | None = None
    lam_acc: dict[str, float] = field(default_factory=dict)
    lam_att: dict[str, int] = field(default_factory=dict)
    shrink: set[str] = field(default_factory=set)
    precond: dict[str, np.ndarray] = field(default_factory=dict)

    def record(self, block: str, accepted: float) -> None:
        self.window_acc[block] = self.window_acc.get(block, 0.0) + float(accepted)
        self.window_att[block] = self.window_att.get(block, 0) + 1

    def pacf_cov(self) -> np.ndarray:
        return self.pacf_m2 / max(self.pacf_count - 1, 1)


@dataclass
class ChainState:
    """Parameters plus cached derived quantities for one chain.

    ``d``; latent pre-threshold entries ``xl1``, ``xl2``, ``xa`` (free
    lower-triangular entries); unconstrained PACFs ``v``; thresholds and
    slab variances; inverse-Gaussian hyper-mean ``xi``.
    """

    d: np.ndarray
    xl1: np.ndarray
    xl2: np.ndarray
    xa: np.ndarray
    v: np.ndarray
    lam_l1: float
    lam_l2: float
    lam_a: float
    s2_l1: float
    s2_l2: float
    s2_a: float
    xi: float
    adapt: AdaptationState | None = None
    # caches
    psi: np.ndarray | None = field(default=None, repr=False)
    sigma: np.ndarray | None = field(default=None, repr=False)
    u: np.ndarray | None = field(default=None, repr=False)
    w: list = field(default_factory=list, repr=False)   # (I - L_k) Y_k
    z: list = field(default_factory=list, repr=False)
    ll: list = field(default_factory=list, repr=False)

    PARAMS = ("d", "xl1", "xl2", "xa", "v", "lam_l1", "lam_l2", "lam_a",
              "s2_l1", "s2_l2", "s2_a", "xi")

    @property
    def p(self) -> int:
        return self.d.size

    @property
    def pacf(self) -> np.ndarray:
        return unconstrained_to_pacf(self.v)

    def l_free(self, period: int) -> np.ndarray:
        return threshold_l(self.xl1, self.lam_l1) if period == 1 else threshold_l(self.xl2, self.lam_l2)

    def a_free(self) -> np.ndarray:
        return threshold_a(self.xa, self.lam_a)

    def l_matrix(self, period: int) -> np.ndarray:
        return lower_from_free(self.l_free(period), self.p)

    def param_bytes(self) -> bytes:
        """Byte image of the parameters, for equality checks."""
        return b"".join(np.asarray(getattr(self, k), dtype=float).tobytes() for k in self.PARAMS)

    def refresh(self, data: PairedDataset, cfg: ChainConfig) -> None:
        """Recompute every cache from the parameters."""
        rho = unconstrained_to_pacf(self.v)
        self.psi, self.sigma = _ar_from_pacf(rho)
        self.u = cayley(skew_from_free(self.a_free(), self.p))
        self.w, self.z, self.ll = [], [], []
        for k, y in enumerate(data.periods(), start=1):
            w = y - self.l_matrix(k) @ y
            z = self.u.T @ (self.d[:, None] * w)
            self.w.append(w)
            self.z.append(z)
            self.ll.append(loglik_rows(z, self.psi, self.sigma))


def _ar_from_pacf(rho):
    return levinson_pacf_to_ar(rho), np.sqrt(np.prod(1.0 - rho**2, axis=1))


def log_target(state: ChainState, data: PairedDataset, cfg: ChainConfig) -> float:
    """Log posterior from the caches; equals ``likelihood.log_posterior``."""
    q = cfg.order
    logd = np.log(state.d)
    out = 0.0
    for k, y in enumerate(data.periods()):
        out += float(state.ll[k].sum()) + (y.shape[1] - q) * float(logd.sum())
    out += log_prior_d(state.d, state.xi) + log_normal(state.xi, cfg.sigma_d)
    out += log_normal(state.xl1, math.sqrt(state.s2_l1)) + log_invgamma(state.s2_l1, *cfg.l_var_prior)
    if data.paired:
        out += log_normal(state.xl2, math.sqrt(state.s2_l2)) + log_invgamma(state.s2_l2, *cfg.l_var_prior)
    out += log_normal(state.xa, math.sqrt(state.s2_a)) + log_invgamma(state.s2_a, *cfg.a_var_prior)
    n_lam = 3 if data.paired else 2
    if cfg.lambda_upper > cfg.lambda_lower:
        out -= n_lam * math.log(cfg.lambda_upper - cfg.lambda_lower)
    out -= int(cfg.active_mask(state.p).sum()) * math.log(2.0)
    return out


# ---------------------------------------------------------------- hot start


def _shrunk_precision(y: np.ndarray, period: int) -> np.ndarray:
    var = y.var(axis=1)
    bad = np.flatnonzero(~(var > 0))
    if bad.size:
        raise ValueError(f"degenerate covariance in period {period}: variable(s) {bad.tolist()} are constant")
    cov, _ = ledoit_wolf(y.T)
    try:
        omega = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"degenerate covariance in period {period}") from exc
    return 0.5 * (omega + omega.T)


def hot_start(data: PairedDataset, cfg: ChainConfig, rng: np.random.Generator) -> ChainState:
    """Moment-based starting point.

    Precision per period from a Ledoit-Wolf shrunk covariance, split by the
    modified Cholesky factorisation; ``d`` averaged over periods, ``A = 0``,
    PACFs from Yule-Walker fits to the latent series, thresholds zero.
    """
    data.check_order(cfg.order)
    p = data.p
    ds, xls = [], []
    for k, y in enumerate(data.periods(), start=1):
        d_k, l_k = decompose_precision(_shrunk_precision(y, k))
        ds.append(d_k)
        xls.append(free_from_lower(l_k))
    d = np.mean(ds, axis=0)
    m = p * (p - 1) // 2
    xl1 = xls[0]
    xl2 = xls[1] if data.paired else np.zeros(m)

    # pooled Yule-Walker estimate on the latent series
    acov = np.zeros((p, cfg.order + 1))
    total = 0
    for y, xl in zip(data.periods(), xls):
        z = d[:, None] * (y - lower_from_free(xl, p) @ y)
        acov += y.shape[1] * sample_acf(z, cfg.order)
        total += y.shape[1]
    rho = yule_walker_pacf(acov / total, clip=0.99)
    rho = np.where(cfg.active_mask(p), rho, 0.0)

    s2_l1 = sample_slab_variance(xl1, *cfg.l_var_prior, rng, slab_only=False)
    s2_l2 = sample_slab_variance(xl2, *cfg.l_var_prior, rng, slab_only=False) if data.paired else 1.0
    s2_a = sample_slab_variance(np.zeros(m), *cfg.a_var_prior, rng, slab_only=False)

    q = cfg.order
    adapt = AdaptationState(
        scales={"a": 0.005, "l1": 0.5, "l2": 0.5, "logd": 0.02, "xi": 0.5,
                "lam_l1": 0.5, "lam_l2": 0.5, "lam_a": 0.5},
        pacf_scale=np.full(p, 0.1),
        pacf_mean=np.zeros((p, q)),
        pacf_m2=np.zeros((p, q, q)),
        adapt_start=max(2 * cfg.tune_every, 10 * q),
        pacf_window_acc=np.zeros(p),
    )
    state = ChainState(
        d=d, xl1=xl1, xl2=xl2, xa=np.zeros(m), v=pacf_to_unconstrained(rho),
        lam_l1=0.0, lam_l2=0.0, lam_a=0.0,
        s2_l1=s2_l1, s2_l2=s2_l2, s2_a=s2_a, xi=float(np.log(d.mean())), adapt=adapt,
    )
    state.refresh(data, cfg)
    _update_preconditioners(state, data, cfg)
    return state


def _filtered_gram(y, psi, sigma) -> np.ndarray:
    """``G[k] = F_k F_k^T / sigma_k^2`` with ``F_k`` the data passed through series ``k``'s AR filter."""
    q = psi.shape[1]
    n = y.shape[1]
    filt = np.broadcast_to(y[None, :, q:], (psi.shape[0], y.shape[0], n - q)).copy()
    for k in range(1, q + 1):
        filt -= psi[:, k - 1, None, None] * y[None, :, q - k : n - k]
    return np.einsum("rjt,rlt->rjl", filt, filt) / (sigma**2)[:, None, None]


def _fisher_rows_l(y, d, u, psi, sigma, s2) -> RowBlockPrecond:
    """Row-block inverse Fisher information of the period log-likelihood in ``L``.

    Exact when ``U`` is the identity; cross-row terms are dropped otherwise.
    """
    p = y.shape[0]
    g = _filtered_gram(y, psi, sigma)
    covs = [np.zeros((0, 0))]
    u2 = u**2
    for i in range(1, p):
        h = d[i] ** 2 * np.einsum("k,kab->ab", u2[i], g[:, :i, :i])
        h[np.diag_indices(i)] += 1.0 / s2
        covs.append(np.linalg.inv(h))
    return RowBlockPrecond(covs)


def _fisher_full_l(y, d, u, psi, sigma, s2) -> DensePrecond:
    """Inverse of the full Fisher information in the free ``L`` entries (plus prior precision).

    ``H[(i,j),(i',j')] = d_i d_i' sum_k U_ik U_i'k G_k[j, j']``; exact for the
    log-likelihood, which is quadratic in ``L`` given everything else.
    """
    g = _filtered_gram(y, psi, sigma)
    rows, cols = lower_indices(y.shape[0])
    v = d[:, None] * u
    p = y.shape[0]
    # t[i, i', j, j'] = sum_k v_ik v_i'k G_k[j, j'] as one matrix product, then gather
    w = (v[:, None, :] * v[None, :, :]).reshape(p * p, p)
    t = (w @ g.reshape(p, p * p)).reshape(p, p, p, p)
    h = t[rows[:, None], rows[None, :], cols[:, None], cols[None, :]]
    h[np.diag_indices(rows.size)] += 1.0 / s2
    return DensePrecond(h)


def _update_preconditioners(state: ChainState, data: PairedDataset, cfg: ChainConfig) -> None:
    if not cfg.precondition:
        return
    dense = state.p * (state.p - 1) // 2 <= cfg.dense_precond_max
    build = _fisher_full_l if dense else _fisher_rows_l
    for k, y in enumerate(data.periods(), start=1):
        s2 = state.s2_l1 if k == 1 else state.s2_l2
        try:
            state.adapt.precond[f"l{k}"] = build(y, state.d, state.u, state.psi, state.sigma, s2)
        except np.linalg.LinAlgError:
            logger.warning("preconditioner for L%d not positive definite; keeping the previous one", k)


# ---------------------------------------------------------------- blocks


def adaptive_mh_step_pacf(state: ChainState, data: PairedDataset, cfg: ChainConfig,
                          rng: np.random.Generator) -> np.ndarray:
    """Adaptive random-walk MH on each series' unconstrained PACFs.

    Series are independent given the latent data, so all ``p`` blocks are
    proposed and accepted in one vectorised sweep.  Returns the per-series
    acceptance flags.
    """
    ad = state.adapt
    p, q = state.v.shape
    mask = cfg.active_mask(p)
    noise = rng.standard_normal((p, q))
    log_u = np.log(rng.random(p))
    if ad.pacf_count >= ad.adapt_start:
        orders = mask.sum(axis=1)
        s_d = 2.38**2 / orders
        cov = s_d[:, None, None] * (ad.pacf_cov() + 1e-6 * np.eye(q))
        # masked lags have zero variance; give them unit variance so the factorisation exists
        cov = np.where(mask[:, :, None] & mask[:, None, :], cov, 0.0) + np.where(
            ~mask[:, :, None] & np.eye(q, dtype=bool)[None], 1.0, 0.0)
        step = np.einsum("pij,pj->pi", np.linalg.cholesky(cov), noise)
    else:
        step = noise
    v_new = state.v + ad.pacf_scale[:, None] * step * mask
    rho_new = unconstrained_to_pacf(v_new)
    valid = np.all(np.abs(rho_new) < 1.0, axis=1)
    rho_new = np.where(valid[:, None], rho_new, 0.0)
    psi_new, sigma_new = _ar_from_pacf(rho_new)
    ll_new = [loglik_rows(z, psi_new, sigma_new) for z in state.z]
    lr = sum(ll_new) - sum(state.ll)
    lr = lr + np.sum((log_logistic_density(v_new) - log_logistic_density(state.v)) * mask, axis=1)
    accept = valid & (log_u < lr)
    if accept.any():
        state.v = np.where(accept[:, None], v_new, state.v)
        state.psi = np.where(accept[:, None], psi_new, state.psi)
        state.sigma = np.where(accept, sigma_new, state.sigma)
        state.ll = [np.where(accept, new, old) for new, old in zip(ll_new, state.ll)]
    ad.pacf_window_acc += accept
    ad.record("pacf", accept.mean())
    return accept


def _loglik_sum(state, data, u=None, d=None, w=None):
    """Latent log-likelihood of every period for candidate factors (cached where omitted)."""
    u = state.u if u is None else u
    d = state.d if d is None else d
    w = state.w if w is None else w
    zs = [u.T @ (d[:, None] * wk) for wk in w]
    lls = [loglik_rows(z, state.psi, state.sigma) for z in zs]
    return zs, lls


def mh_step_a(state: ChainState, data: PairedDataset, cfg: ChainConfig,
              rng: np.random.Generator) -> bool:
    """Isotropic random-walk MH on the latent entries of ``A``."""
    p = state.p
    sd = math.sqrt(state.s2_a)
    cur = float(sum(ll.sum() for ll in state.ll)) + log_normal(state.xa, sd)

    def target(x):
        try:
            u = cayley(skew_from_free(threshold_a(x, state.lam_a), p))
        except ValueError:
            return None
        zs, lls = _loglik_sum(state, data, u=u)
        return float(sum(ll.sum() for ll in lls)) + log_normal(x, sd), (u, zs, lls)

    ok, x, _, aux = mh_step(state.xa, cur, target, state.adapt.scales["a"], rng)
    if ok:
        state.xa = x
        state.u, state.z, state.ll = aux
    state.adapt.record("a", ok)
    return ok


def _l_block_grad(state, data, k, x, lam, z, y, cfg):
    psi, sigma = state.psi, state.sigma
    gz = grad_z_latent(z, psi, sigma)
    gl = grad_l_from(gz, y, state.d, state.u)[lower_indices(state.p)]
    s2 = state.s2_l1 if k == 1 else state.s2_l2
    if lam == 0.0:
        # H_0 is the identity map; the surrogate would only distort tiny entries
        return gl - x / s2
    return gl * smooth_hard_threshold_grad(x, lam, cfg.h0) - x / s2


def mala_step_l(state: ChainState, data: PairedDataset, period: int, cfg: ChainConfig,
                rng: np.random.Generator) -> bool:
    """MALA on the latent entries of ``L_period`` using only that period's data."""
    k = period - 1
    name = f"l{period}"
    y = data.periods()[k]
    p = state.p
    x0 = state.xl1 if period == 1 else state.xl2
    lam = state.lam_l1 if period == 1 else state.lam_l2
    sd = math.sqrt(state.s2_l1 if period == 1 else state.s2_l2)
    cur = float(state.ll[k].sum()) + log_normal(x0, sd)
    g0 = _l_block_grad(state, data, period, x0, lam, state.z[k], y, cfg)

    def target(x):
        w = y - lower_from_free(threshold_l(x, lam), p) @ y
        z = state.u.T @ (state.d[:, None] * w)
        ll = loglik_rows(z, state.psi, state.sigma)
        g = _l_block_grad(state, data, period, x, lam, z, y, cfg)
        return float(ll.sum()) + log_normal(x, sd), g, (w, z, ll)

    ok, x, _, _, aux, finite = mala_step(
        x0, cur, g0, target, state.adapt.scales[name], rng, precond=state.adapt.precond.get(name))
    if not finite:
        state.adapt.shrink.add(name)
    if ok:
        if period == 1:
            state.xl1 = x
        else:
            state.xl2 = x
        state.w[k], state.z[k], state.ll[k] = aux
    state.adapt.record(name, ok)
    return ok


def mala_step_logd(state: ChainState, data: PairedDataset, cfg: ChainConfig,
                   rng: np.random.Generator) -> bool:
    """MALA on ``log d`` with the combined likelihood, Y->Z Jacobian and log-scale Jacobian."""
    q = cfg.order
    n_eff = sum(y.shape[1] - q for y in data.periods())
    lam_d = np.log(state.d)

    def value_grad(logd, zs, lls):
        d = np.exp(logd)
        val = float(sum(ll.sum() for ll in lls)) + n_eff * float(logd.sum())
        val += log_prior_d(d, state.xi) + float(logd.sum())
        g = np.full(d.size, float(n_eff)) + grad_log_prior_logd(d, state.xi) + 1.0
        for k, y in enumerate(data.periods()):
            gz = grad_z_latent(zs[k], state.psi, state.sigma)
            g += grad_logd_from(gz, y, d, state.l_matrix(k + 1), state.u)
        return val, g

    cur, g0 = value_grad(lam_d, state.z, state.ll)

    def target(logd):
        if not np.all(np.isfinite(logd)) or np.any(np.abs(logd) > 700):
            return None
        zs, lls = _loglik_sum(state, data, d=np.exp(logd))
        val, g = value_grad(logd, zs, lls)
        return val, g, (zs, lls)

    ok, x, _, _, aux, finite = mala_step(lam_d, cur, g0, target, state.adapt.scales["logd"], rng)
    if not finite:
        state.adapt.shrink.add("logd")
    if ok:
        state.d = np.exp(x)
        state.z, state.ll = aux
    state.adapt.record("logd", ok)
    return ok


def mh_step_xi(state: ChainState, cfg: ChainConfig, rng: np.random.Generator) -> bool:
    """Random-walk MH on the inverse-Gaussian hyper-mean (log scale of the mean)."""
    def lp(xi):
        return log_prior_d(state.d, float(xi[0])) + log_normal(xi, cfg.sigma_d)

    x0 = np.array([state.xi])
    ok, x, _, _ = mh_step(x0, lp(x0), lambda v: (lp(v), None), state.adapt.scales["xi"], rng)
    if ok:
        state.xi = float(x[0])
    state.adapt.record("xi", ok)
    return ok


def _threshold_candidate(state, data, name, lam):
    """Caches implied by a new threshold value, or ``None`` if invalid."""
    p = state.p
    if name == "lam_a":
        try:
            u = cayley(skew_from_free(threshold_a(state.xa, lam), p))
        except ValueError:
            return None
        zs, lls = _loglik_sum(state, data, u=u)
        return u, zs, lls
    k = 0 if name == "lam_l1" else 1
    y = data.periods()[k]
    x = state.xl1 if k == 0 else state.xl2
    w = y - lower_from_free(threshold_l(x, lam), p) @ y
    z = state.u.T @ (state.d[:, None] * w)
    lls = list(state.ll)
    lls[k] = loglik_rows(z, state.psi, state.sigma)
    return k, w, z, lls


def _threshold_step(state, data, cfg, rng, name):
    ad = state.adapt
    lam = getattr(state, name)
    if lam == 0.0:
        # first threshold move: start below every latent magnitude so L is unchanged
        x = state.xa if name == "lam_a" else (state.xl1 if name == "lam_l1" else state.xl2)
        ax = np.abs(x[x != 0])
        lam = max(0.5 * float(ax.min()) if ax.size else 1e-3, 1e-8)
        lam = min(max(lam, cfg.lambda_lower), cfg.lambda_upper)
        setattr(state, name, lam)
        if lam == 0.0:
            return False
    log_new = math.log(lam) + ad.scales[name] * rng.standard_normal()
    log_u = math.log(rng.random())
    new = math.exp(log_new)
    ok = False
    if cfg.lambda_lower <= new <= cfg.lambda_upper:
        cand = _threshold_candidate(state, data, name, new)
        if cand is not None:
            lls = cand[-1]
            lr = float(sum(v.sum() for v in lls) - sum(v.sum() for v in state.ll))
            lr += log_new - math.log(lam)
            if log_u < lr:
                ok = True
                setattr(state, name, new)
                if name == "lam_a":
                    state.u, state.z, state.ll = cand
                else:
                    k, w, z, state.ll = cand
                    state.w[k], state.z[k] = w, z
    ad.lam_acc[name] = ad.lam_acc.get(name, 0.0) + ok
    ad.lam_att[name] = ad.lam_att.get(name, 0) + 1
    ad.record(name, ok)
    return ok


def update_thresholds(state: ChainState, data: PairedDataset, it: int, cfg: ChainConfig,
                      rng: np.random.Generator) -> dict[str, bool]:
    """Scheduled log-scale random-walk MH on the thresholds.

    ``lam_l*`` move every ``lambda_l_every`` iterations and ``lam_a`` every
    ``lambda_a_every``; nothing happens before ``thresholds_zero_until``.
    """
    out = {}
    if it <= cfg.thresholds_zero_until:
        return out
    if it % cfg.lambda_l_every == 0:
        out["lam_l1"] = _threshold_step(state, data, cfg, rng, "lam_l1")
        if data.paired:
            out["lam_l2"] = _threshold_step(state, data, cfg, rng, "lam_l2")
    if it % cfg.lambda_a_every == 0 and not cfg.fix_rotation:
        out["lam_a"] = _threshold_step(state, data, cfg, rng, "lam_a")
    return out


def update_slab_variances(state: ChainState, data: PairedDataset, cfg: ChainConfig,
                          rng: np.random.Generator) -> None:
    # latent pre-threshold entries are all N(0, s2) a priori, so every one counts
    state.s2_l1 = sample_slab_variance(state.xl1, *cfg.l_var_prior, rng, slab_only=False)
    if data.paired:
        state.s2_l2 = sample_slab_variance(state.xl2, *cfg.l_var_prior, rng, slab_only=False)
    if not cfg.fix_rotation:
        state.s2_a = sample_slab_variance(state.xa, *cfg.a_var_prior, rng, slab_only=False)


def _adapt_pacf_history(state: ChainState) -> None:
    ad = state.adapt
    ad.pacf_count += 1
    delta = state.v - ad.pacf_mean
    ad.pacf_mean += delta / ad.pacf_count
    ad.pacf_m2 += delta[:, :, None] * (state.v - ad.pacf_mean)[:, None, :]


def _end_window(state: ChainState, data: PairedDataset, cfg: ChainConfig, it: int,
                window_rates: dict, tuning: bool) -> None:
    ad = state.adapt
    for block, att in ad.window_att.items():
        if block.startswith("lam_"):
            continue
        rate = ad.window_acc[block] / att
        window_rates.setdefault(block, []).append((it, rate))
        if not tuning:
            continue
        if block == "pacf":
            rates = ad.pacf_window_acc / att
            for i, r in enumerate(rates):
                ad.pacf_scale[i] = tune_scale(ad.pacf_scale[i], r, cfg.mh_accept_band)
        else:
            band = cfg.mala_accept_band if block in MALA_BLOCKS else cfg.mh_accept_band
            ad.scales[block] = tune_scale(ad.scales[block], rate, band)
            if block in ad.shrink:
                ad.scales[block] *= math.exp(-0.1)
    if tuning:
        for name, att in list(ad.lam_att.items()):
            if att >= 20:
                ad.scales[name] = tune_scale(ad.scales[name], ad.lam_acc[name] / att, cfg.mh_accept_band)
                ad.lam_acc[name], ad.lam_att[name] = 0.0, 0
        window = it // cfg.tune_every
        if window < cfg.precond_every or window % cfg.precond_every == 0:
            _update_preconditioners(state, data, cfg)
    ad.shrink.clear()
    ad.window_acc.clear()
    ad.window_att.clear()
    ad.pacf_window_acc[:] = 0


# ---------------------------------------------------------------- draws and driver


@dataclass
class PosteriorDraws:
    """Stored post-burn-in draws; ``l1``, ``l2``, ``a`` hold effective (thresholded) free entries."""

    p: int
    q: int
    d: np.ndarray
    l1: np.ndarray
    l2: np.ndarray | None
    a: np.ndarray
    pacf: np.ndarray
    xi: np.ndarray
    lam: np.ndarray
    s2: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.d.shape[0]

    @property
    def paired(self) -> bool:
        return self.l2 is not None

    def l_matrix(self, i: int, period: int) -> np.ndarray:
        src = self.l1 if period == 1 or self.l2 is None else self.l2
        return lower_from_free(src[i], self.p)

    def omega(self, i: int, period: int = 1) -> np.ndarray:
        return assemble_precision(self.d[i], self.l_matrix(i, period))

    def omega_mean(self, period: int = 1) -> np.ndarray:
        out = np.zeros((self.p, self.p))
        for i in range(self.n_draws):
            out += self.omega(i, period)
        return out / max(self.n_draws, 1)

    def u(self, i: int) -> np.ndarray:
        return cayley(skew_from_free(self.a[i], self.p))


@dataclass
class ChainDiagnostics:
    logpost: np.ndarray
    events: list[tuple[int, str, float]]
    window_rates: dict[str, list[tuple[int, float]]]
    final_scales: dict[str, float]

    def window_rates_after(self, it: int, block: str) -> np.ndarray:
        return np.array([r for i, r in self.window_rates.get(block, []) if i > it])

    def summary(self) -> dict:
        out = {}
        for block, rows in self.window_rates.items():
            rates = [r for _, r in rows]
            out[block] = {"windows": len(rates), "mean_rate": float(np.mean(rates)) if rates else None}
        return out

    def write_ndjson(self, path) -> None:
        lp = self.logpost
        with open(path, "w") as fh:
            for it, block, acc in self.events:
                rec = {"iteration": it, "block": block, "accepted": acc, "log_posterior": float(lp[it - 1])}
                fh.write(json.dumps(rec) + "\n")


@dataclass
class ChainResult:
    draws: PosteriorDraws
    diagnostics: ChainDiagnostics
    state: ChainState


def _store(buf: dict, state: ChainState, data: PairedDataset) -> None:
    buf["d"].append(state.d.copy())
    buf["l1"].append(state.l_free(1))
    if data.paired:
        buf["l2"].append(state.l_free(2))
    buf["a"].append(state.a_free())
    buf["pacf"].append(state.pacf)
    buf["xi"].append(state.xi)
    buf["lam"].append((state.lam_l1, state.lam_l2, state.lam_a))
    buf["s2"].append((state.s2_l1, state.s2_l2, state.s2_a))


def run_chain(data: PairedDataset, cfg: ChainConfig, state: ChainState | None = None) -> ChainResult:
    """Run the phased sampler and return post-burn-in draws with diagnostics.

    Iterations ``1..ar_only_until`` move only the PACFs; thresholds stay at
    zero through ``thresholds_zero_until``; step sizes are tuned every
    ``tune_every`` iterations during burn-in and frozen afterwards.
    """
    if cfg.single_period and data.paired:
        data = PairedDataset(data.y1)
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = hot_start(data, cfg, rng)
    p, q = data.p, cfg.order
    logpost = np.empty(cfg.total_iters)
    events: list[tuple[int, str, float]] = []
    window_rates: dict[str, list[tuple[int, float]]] = {}
    buf = {k: [] for k in ("d", "l1", "l2", "a", "pacf", "xi", "lam", "s2")}

    for it in range(1, cfg.total_iters + 1):
        acc = adaptive_mh_step_pacf(state, data, cfg, rng)
        events.append((it, "pacf", float(acc.mean())))
        if it > cfg.ar_only_until:
            if not cfg.fix_rotation:
                events.append((it, "a", float(mh_step_a(state, data, cfg, rng))))
            events.append((it, "l1", float(mala_step_l(state, data, 1, cfg, rng))))
            if data.paired:
                events.append((it, "l2", float(mala_step_l(state, data, 2, cfg, rng))))
            events.append((it, "logd", float(mala_step_logd(state, data, cfg, rng))))
            update_slab_variances(state, data, cfg, rng)
        if it > cfg.thresholds_zero_until:
            for name, ok in update_thresholds(state, data, it, cfg, rng).items():
                events.append((it, name, float(ok)))
            events.append((it, "xi", float(mh_step_xi(state, cfg, rng))))
        if it <= cfg.burn_in:
            _adapt_pacf_history(state)
        if it % cfg.tune_every == 0:
            _end_window(state, data, cfg, it, window_rates, tuning=it <= cfg.burn_in)
        logpost[it - 1] = log_target(state, data, cfg)
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            _store(buf, state, data)

    m = p * (p - 1) // 2
    n = len(buf["d"])
    draws = PosteriorDraws(
        p=p, q=q,
        d=np.array(buf["d"]).reshape(n, p),
        l1=np.array(buf["l1"]).reshape(n, m),
        l2=np.array(buf["l2"]).reshape(n, m) if data.paired else None,
        a=np.array(buf["a"]).reshape(n, m),
        pacf=np.array(buf["pacf"]).reshape(n, p, q),
        xi=np.array(buf["xi"]).reshape(n),
        lam=np.array(buf["lam"]).reshape(n, 3),
        s2=np.array(buf["s2"]).reshape(n, 3),
    )
    diag = ChainDiagnostics(logpost, events, window_rates, dict(state.adapt.scales))
    if cfg.log_path:
        diag.write_ndjson(cfg.log_path)
    return ChainResult(draws, diag, state)
