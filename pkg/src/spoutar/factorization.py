"""Modified-Cholesky precision factors, Cayley rotation and latent transforms.

Convention throughout: ``Omega = (I - L)^T D^2 (I - L)`` and
``Z = U^T D (I - L) Y`` with ``U = (I - A)(I + A)^{-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular


def lower_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    return np.tril_indices(p, -1)


def n_free(p: int) -> int:
    return p * (p - 1) // 2


def lower_from_free(vals: np.ndarray, p: int) -> np.ndarray:
    """Strictly lower-triangular matrix from its row-major free entries."""
    out = np.zeros((p, p))
    out[lower_indices(p)] = vals
    return out


def free_from_lower(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat)[lower_indices(mat.shape[0])].copy()


def skew_from_free(vals: np.ndarray, p: int) -> np.ndarray:
    low = lower_from_free(vals, p)
    return low - low.T


@dataclass
class PrecisionFactors:
    """``d`` (shared diagonal), ``l1``/``l2`` strictly lower, ``a`` skew-symmetric."""

    d: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    a: np.ndarray
    _u: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if np.any(self.d <= 0):
            raise ValueError("diagonal entries of D must be positive")
        for name in ("l1", "l2"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if np.any(np.triu(mat) != 0):
                raise ValueError(f"{name} must be strictly lower-triangular")
            setattr(self, name, mat)
        self.a = np.asarray(self.a, dtype=float)
        if not np.array_equal(self.a, -self.a.T):
            raise ValueError("a must be skew-symmetric")

    @property
    def p(self) -> int:
        return self.d.size

    @property
    def u(self) -> np.ndarray:
        if self._u is None:
            self._u = cayley(self.a)
        return self._u

    def omega(self, period: int) -> np.ndarray:
        return assemble_precision(self.d, self.l1 if period == 1 else self.l2)


@dataclass
class PairedDataset:
    """Pre-period ``y1`` (p x n1) and post-period ``y2`` (p x n2); columns are time.

    ``y2`` may be ``None`` for single-period fits.
    """

    y1: np.ndarray
    y2: np.ndarray | None = None

    def __post_init__(self):
        self.y1 = np.atleast_2d(np.asarray(self.y1, dtype=float))
        if self.y2 is not None:
            self.y2 = np.atleast_2d(np.asarray(self.y2, dtype=float))
            if self.y2.shape[0] != self.y1.shape[0]:
                raise ValueError("both periods must have the same number of variables")
        for y in self.periods():
            if not np.all(np.isfinite(y)):
                raise ValueError("data contain non-finite values")

    @property
    def p(self) -> int:
        return self.y1.shape[0]

    @property
    def paired(self) -> bool:
        return self.y2 is not None

    def periods(self) -> list[np.ndarray]:
        return [self.y1] if self.y2 is None else [self.y1, self.y2]

    def check_order(self, q: int) -> None:
        for k, y in enumerate(self.periods(), start=1):
            if y.shape[1] <= q:
                raise ValueError(f"period {k} has {y.shape[1]} time points; need more than q={q}")


@dataclass
class LatentSeries:
    z1: np.ndarray
    z2: np.ndarray | None = None


def cayley(a: np.ndarray) -> np.ndarray:
    """Rotation ``U = (I - A)(I + A)^{-1}`` for skew-symmetric ``A``."""
    a = np.asarray(a, dtype=float)
    p = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite skew-symmetric input")
    eye = np.eye(p)
    # (I - A) and (I + A)^{-1} commute, so one solve suffices
    try:
        u = np.linalg.solve(eye + a, eye - a)
    except np.linalg.LinAlgError as exc:
        raise ValueError("I + A is numerically singular") from exc
    if not np.all(np.isfinite(u)):
        raise ValueError("I + A is numerically singular")
    return u


def assemble_precision(d: np.ndarray, l: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("diagonal entries of D must be positive")
    w = d[:, None] * (np.eye(d.size) - l)
    return w.T @ w


def decompose_precision(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`assemble_precision` for symmetric positive definite input."""
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValueError("precision matrix must be square")
    if not np.allclose(omega, omega.T, rtol=1e-10, atol=1e-12):
        raise ValueError("precision matrix must be symmetric")
    flip = omega[::-1, ::-1]
    try:
        c = np.linalg.cholesky(flip)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(omega).min()
        raise ValueError(f"precision matrix is not positive definite (min eigenvalue {lam:.3g})") from None
    # Omega = M^T M with M = J C^T J lower-triangular
    m = c.T[::-1, ::-1]
    d = np.diag(m).copy()
    l = np.eye(omega.shape[0]) - m / d[:, None]
    l = np.tril(l, -1)
    return d, l


def to_latent(y, d, l, a=None, u=None) -> np.ndarray:
    """``Z = U^T D (I - L) Y``."""
    y = np.atleast_2d(y)
    d = np.asarray(d, dtype=float)
    if y.shape[0] != d.size or l.shape != (d.size, d.size):
        raise ValueError("dimension mismatch between data and factors")
    w = d[:, None] * (y - l @ y)
    if u is None:
        if a is None:
            return w
        u = cayley(a)
    return u.T @ w


def from_latent(z, d, l, a=None, u=None) -> np.ndarray:
    """Inverse of :func:`to_latent`."""
    z = np.atleast_2d(z)
    d = np.asarray(d, dtype=float)
    if z.shape[0] != d.size or l.shape != (d.size, d.size):
        raise ValueError("dimension mismatch between latent series and factors")
    if u is None and a is not None:
        u = cayley(a)
    w = z if u is None else u @ z
    return solve_triangular(np.eye(d.size) - l, w / d[:, None], lower=True, unit_diagonal=True)
