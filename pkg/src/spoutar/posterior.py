"""Posterior summaries: precision differences, edge shifts, partial correlations, forecasts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arproc import levinson_pacf_to_ar
from .factorization import assemble_precision, from_latent, lower_from_free, to_latent


def omega_diff_draws(draws) -> np.ndarray:
    """``Omega_2 - Omega_1`` per draw, shape ``(n_draws, p, p)``."""
    if draws.n_draws == 0:
        raise ValueError("no posterior draws")
    if not draws.paired:
        raise ValueError("precision differences need a two-period fit")
    out = np.empty((draws.n_draws, draws.p, draws.p))
    for i in range(draws.n_draws):
        out[i] = draws.omega(i, 2) - draws.omega(i, 1)
    return out


@dataclass
class EdgeShiftReport:
    """Per-pair summaries of ``Omega_2 - Omega_1`` over ``i < j``."""

    pairs: np.ndarray          # (m, 2) int, row-major upper-triangle order
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float
    names: list[str] | None = None
    classes: np.ndarray = field(init=False)   # +1 positive, -1 negative, 0 none

    LABELS = {1: "positive", -1: "negative", 0: "none"}

    def __post_init__(self):
        self.classes = np.where(self.lo > 0, 1, np.where(self.hi < 0, -1, 0)).astype(int)

    @property
    def p(self) -> int:
        m = self.pairs.shape[0]
        return int(round((1 + np.sqrt(1 + 8 * m)) / 2))

    def label(self, k: int) -> str:
        return self.LABELS[int(self.classes[k])]

    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.classes != 0)

    def adjacency(self) -> np.ndarray:
        p = self.p
        adj = np.zeros((p, p), dtype=int)
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        adj[i, j] = adj[j, i] = self.classes
        return adj

    def _name(self, i: int) -> str:
        return self.names[i] if self.names else f"V{i}"

    def to_dict(self) -> dict:
        edges = []
        for k in range(self.pairs.shape[0]):
            i, j = map(int, self.pairs[k])
            edges.append({
                "i": i, "j": j, "name_i": self._name(i), "name_j": self._name(j),
                "mean": float(self.mean[k]), "lo": float(self.lo[k]), "hi": float(self.hi[k]),
                "shift": self.label(k),
            })
        return {"level": self.level, "p": self.p, "n_flagged": int(self.flagged().size), "edges": edges}

    def to_dot(self) -> str:
        lines = ["graph edge_shifts {"]
        for i in range(self.p):
            lines.append(f'  n{i} [label="{self._name(i)}"];')
        for k in self.flagged():
            i, j = map(int, self.pairs[k])
            sign = self.label(k)
            colour = "blue" if sign == "positive" else "red"
            lines.append(f'  n{i} -- n{j} [sign={sign}, color={colour}, weight="{self.mean[k]:.6g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def classify_edges(diffs: np.ndarray, level: float = 0.95, names=None) -> EdgeShiftReport:
    """Equal-tailed credible intervals per upper-triangle entry and their sign class."""
    diffs = np.asarray(diffs, dtype=float)
    if diffs.ndim != 3 or diffs.shape[0] < 2:
        raise ValueError("need at least 2 draws of p x p matrices")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    p = diffs.shape[1]
    iu = np.triu_indices(p, 1)
    ent = diffs[:, iu[0], iu[1]]
    alpha = 1.0 - level
    lo, hi = np.quantile(ent, [alpha / 2, 1 - alpha / 2], axis=0)
    return EdgeShiftReport(np.column_stack(iu), ent.mean(axis=0), lo, hi, level, names)


def top_k_edges(report: EdgeShiftReport, k: int = 10, means=None) -> list[dict]:
    """Flagged edges by descending ``|mean|``, ties by ``(i, j)``; at most ``k``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    means = report.mean if means is None else np.asarray(means)
    idx = report.flagged()
    order = sorted(idx, key=lambda e: (-abs(means[e]), int(report.pairs[e, 0]), int(report.pairs[e, 1])))
    out = []
    for rank, e in enumerate(order[:k], start=1):
        i, j = map(int, report.pairs[e])
        out.append({"rank": rank, "i": i, "j": j, "name_i": report._name(i), "name_j": report._name(j),
                    "mean": float(means[e]), "shift": report.label(e)})
    return out


def partial_correlations(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1] or not np.allclose(omega, omega.T):
        raise ValueError("precision matrix must be square and symmetric")
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise ValueError("precision matrix is not positive definite") from None
    s = 1.0 / np.sqrt(np.diag(omega))
    out = -omega * s[:, None] * s[None, :]
    np.fill_diagonal(out, 1.0)
    return np.clip(out, -1.0, 1.0)


def rmse(omega_bar, omega_true) -> float:
    """``||omega_bar - omega_true||_F / p``."""
    a, b = np.asarray(omega_bar, dtype=float), np.asarray(omega_true, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b) / a.shape[0])


@dataclass
class ForecastResult:
    mean: np.ndarray                  # (horizon, p)
    paths: np.ndarray | None = None   # (n_draws, horizon, p)

    def __post_init__(self):
        if self.mean.ndim != 2 or self.mean.shape[0] < 1:
            raise ValueError("forecast needs at least one horizon step")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("non-finite forecast")

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]


def predict(draws, y_history, horizon: int = 1, rng=None, innovations: bool = True,
            keep_paths: bool = False, period: int | None = None) -> ForecastResult:
    """Posterior-mean ``horizon``-step forecast.

    Each draw maps the history to the latent scale with its own factors
    (period 2 when available), rolls the AR recursions forward, and maps
    back.  With ``innovations=False`` the latent steps use the conditional
    mean, which makes the output deterministic.
    """
    y = np.atleast_2d(np.asarray(y_history, dtype=float))
    p, q = draws.p, draws.q
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if y.shape[0] != p:
        raise ValueError(f"history has {y.shape[0]} variables, draws have {p}")
    if y.shape[1] < q:
        raise ValueError(f"history has {y.shape[1]} time points; need at least q={q}")
    if draws.n_draws == 0:
        raise ValueError("no posterior draws")
    if period is None:
        period = 2 if draws.paired else 1
    if innovations and rng is None:
        rng = np.random.default_rng(0)
    hist = y[:, -q:]
    paths = np.empty((draws.n_draws, horizon, p))
    for i in range(draws.n_draws):
        d, l, u = draws.d[i], draws.l_matrix(i, period), draws.u(i)
        rho = draws.pacf[i]
        psi = levinson_pacf_to_ar(rho)
        sigma = np.sqrt(np.prod(1.0 - rho**2, axis=1))
        z = np.empty((p, q + horizon))
        z[:, :q] = to_latent(hist, d, l, u=u)
        for h in range(horizon):
            t = q + h
            # psi[:, k-1] multiplies z_{t-k}
            z[:, t] = np.einsum("ik,ik->i", psi, z[:, t - q : t][:, ::-1])
            if innovations:
                z[:, t] += sigma * rng.standard_normal(p)
        paths[i] = from_latent(z[:, q:], d, l, u=u).T
    return ForecastResult(paths.mean(axis=0), paths if keep_paths else None)


def omega_from_free(d, l_free, p) -> np.ndarray:
    return assemble_precision(d, lower_from_free(l_free, p))
