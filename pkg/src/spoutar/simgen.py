"""Synthetic scenarios: small-world supports, sparse precisions, latent AR series."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .arproc import pacf_to_ar
from .factorization import PairedDataset
from .posterior import rmse

logger = logging.getLogger(__name__)


@dataclass
class GraphSpec:
    n_blocks: int = 3
    nodes_per_block: int = 20
    ring_degree: int = 4
    rewire_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.nodes_per_block < self.ring_degree + 1:
            raise ValueError("nodes_per_block must be at least ring_degree + 1")
        if not 0.0 <= self.rewire_prob <= 1.0:
            raise ValueError("rewire_prob must lie in [0, 1]")

    @property
    def p(self) -> int:
        return self.n_blocks * self.nodes_per_block


@dataclass
class ScenarioSpec:
    """One simulation cell.

    ``mixed`` gives the number of series of orders 2, 5 and 8 (then ``q`` is
    ignored for generation).  ``fit_order`` defaults to the generating
    order; ``oracle_orders`` fits with each series' true order.  With
    ``shift_edges > 0`` a second period is generated whose precision differs
    on that many edges by ``+-shift_size``.
    """

    p: int = 30
    n: int = 150
    q: int = 2
    sparsity: float = 0.90
    mixed: tuple[int, int, int] | None = None
    seed: int = 0
    fit_order: int | None = None
    oracle_orders: bool = False
    n_blocks: int = 3
    ring_degree: int = 4
    rewire_prob: float = 0.1
    wishart_df: int = 10
    paired: bool = False
    n2: int | None = None
    shift_edges: int = 0
    shift_size: float = 0.5

    MIXED_ORDERS = (2, 5, 8)

    def __post_init__(self):
        if self.p <= 0 or self.n <= 0:
            raise ValueError("p and n must be positive")
        if not 0.0 < self.sparsity < 1.0:
            raise ValueError("sparsity must lie in (0, 1)")
        if self.mixed is not None:
            self.mixed = tuple(int(m) for m in self.mixed)
            if len(self.mixed) != 3 or sum(self.mixed) != self.p:
                raise ValueError("mixed counts must be three numbers summing to p")
        if self.p % self.n_blocks:
            raise ValueError("p must be divisible by n_blocks")

    @property
    def orders(self) -> np.ndarray:
        if self.mixed is None:
            return np.full(self.p, self.q)
        return np.repeat(self.MIXED_ORDERS, self.mixed)

    @property
    def max_order(self) -> int:
        return int(self.orders.max())

    @property
    def fitted_order(self) -> int:
        if self.oracle_orders:
            return self.max_order
        return self.fit_order if self.fit_order is not None else self.max_order

    def graph_spec(self) -> GraphSpec:
        return GraphSpec(self.n_blocks, self.p // self.n_blocks, self.ring_degree, self.rewire_prob, self.seed)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mixed"] = list(self.mixed) if self.mixed is not None else None
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if d.get("mixed") is not None:
            d["mixed"] = tuple(d["mixed"])
        return cls(**d)


@dataclass
class Scenario:
    spec: ScenarioSpec
    data: PairedDataset
    omega1: np.ndarray
    omega2: np.ndarray | None
    pacf: np.ndarray           # p x max_order, zero beyond each series' order
    orders: np.ndarray
    achieved_sparsity: float
    shifted: list = field(default_factory=list)   # (i, j, delta) with i > j

    @property
    def omega0(self) -> np.ndarray:
        return self.omega1


def watts_strogatz(nodes: int, k: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Ring lattice of even degree ``k`` with each edge rewired with probability ``beta``."""
    if k % 2 or k < 0 or k >= nodes:
        raise ValueError("k must be even and smaller than the number of nodes")
    adj = np.zeros((nodes, nodes), dtype=np.int8)
    for j in range(1, k // 2 + 1):
        for u in range(nodes):
            v = (u + j) % nodes
            adj[u, v] = adj[v, u] = 1
    for j in range(1, k // 2 + 1):
        for u in range(nodes):
            v = (u + j) % nodes
            if rng.random() >= beta or not adj[u, v]:
                continue
            free = np.flatnonzero((adj[u] == 0) & (np.arange(nodes) != u))
            if free.size == 0:
                continue
            w = int(rng.choice(free))
            adj[u, v] = adj[v, u] = 0
            adj[u, w] = adj[w, u] = 1
    return adj


def block_graph(spec: GraphSpec, rng: np.random.Generator) -> np.ndarray:
    """Block-diagonal union of independent small-world components."""
    b = spec.nodes_per_block
    adj = np.zeros((spec.p, spec.p), dtype=np.int8)
    for i in range(spec.n_blocks):
        adj[i * b : (i + 1) * b, i * b : (i + 1) * b] = watts_strogatz(b, spec.ring_degree, spec.rewire_prob, rng)
    return adj


def offdiag_zero_fraction(mat: np.ndarray) -> float:
    p = mat.shape[0]
    il = np.tril_indices(p, -1)
    return float(np.mean(mat[il] == 0)) if p > 1 else 1.0


def precision_from_graph(adjacency, sparsity_target: float, rng: np.random.Generator,
                         min_eig: float = 0.1) -> tuple[np.ndarray, float]:
    """Random SPD precision supported on (a pruned subset of) ``adjacency``.

    Edges are dropped uniformly at random until the off-diagonal zero
    fraction reaches ``sparsity_target`` (kept as is when the graph is
    already sparser).  Magnitudes are uniform on [0.3, 0.8] with random
    signs; the diagonal is 1, raised if needed so the smallest eigenvalue is
    at least ``min_eig``.  Returns the matrix and its achieved sparsity.
    """
    adj = np.asarray(adjacency)
    p = adj.shape[0]
    il = np.tril_indices(p, -1)
    edges = np.flatnonzero(adj[il] != 0)
    n_pairs = il[0].size
    keep = int(round((1.0 - sparsity_target) * n_pairs))
    if edges.size > keep:
        edges = np.sort(rng.choice(edges, size=keep, replace=False))
    elif edges.size < keep:
        logger.info("graph has %d edges, fewer than the %d the target needs; using it as is", edges.size, keep)
    vals = rng.uniform(0.3, 0.8, edges.size) * rng.choice([-1.0, 1.0], edges.size)
    off = np.zeros((p, p))
    off[il[0][edges], il[1][edges]] = vals
    off = off + off.T
    lam_min = np.linalg.eigvalsh(off).min() if p else 0.0
    diag = max(1.0, min_eig - lam_min)
    omega = off + diag * np.eye(p)
    return omega, offdiag_zero_fraction(omega)


def simulate_ar(pacf: np.ndarray, n: int, rng: np.random.Generator, burn: int | None = None) -> np.ndarray:
    """Unit-variance stationary AR series, one per row of ``pacf``.

    The first ``q`` values come from the exact stationary law; a further
    ``10 q`` steps are then discarded.
    """
    p, q = pacf.shape
    ar = pacf_to_ar(pacf)
    burn = 10 * q if burn is None else burn
    total = n + burn
    z = np.zeros((p, total + q))
    acf = np.concatenate([np.ones((p, 1)), ar.gamma], axis=1)
    for i in range(p):
        idx = np.abs(np.subtract.outer(np.arange(q), np.arange(q)))
        cov = acf[i][idx]
        z[i, :q] = np.linalg.cholesky(cov + 1e-12 * np.eye(q)) @ rng.standard_normal(q)
    eps = rng.standard_normal((p, total)) * ar.sigma[:, None]
    for t in range(q, total + q):
        z[:, t] = np.einsum("ik,ik->i", ar.psi, z[:, t - q : t][:, ::-1]) + eps[:, t - q]
    return z[:, q + burn :]


def draw_pacf(orders: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """PACFs uniform on (-1, -0.9) U (0.9, 1), zero beyond each series' order."""
    q = int(np.max(orders))
    mag = rng.uniform(0.9, 1.0, (orders.size, q))
    mag = np.where(mag <= 0.9, np.nextafter(0.9, 1.0), mag)
    rho = mag * rng.choice([-1.0, 1.0], (orders.size, q))
    return np.where(np.arange(q)[None, :] < orders[:, None], rho, 0.0)


def _mix(omega: np.ndarray, z: np.ndarray) -> np.ndarray:
    # Y = Sigma^{1/2} Z with Sigma^{1/2} the lower Cholesky factor of Omega^{-1}
    return np.linalg.cholesky(np.linalg.inv(omega)) @ z


def _shift_precision(omega: np.ndarray, n_edges: int, size: float, rng) -> tuple[np.ndarray, list]:
    p = omega.shape[0]
    il = np.tril_indices(p, -1)
    pick = rng.choice(il[0].size, size=n_edges, replace=False)
    out = omega.copy()
    shifted = []
    for idx in pick:
        i, j = int(il[0][idx]), int(il[1][idx])
        delta = size * rng.choice([-1.0, 1.0])
        out[i, j] += delta
        out[j, i] += delta
        shifted.append((i, j, float(delta)))
    return out, shifted


def simulate_scenario(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> Scenario:
    """Generate data and ground truth for one cell; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    adj = block_graph(spec.graph_spec(), rng)
    omega1, achieved = precision_from_graph(adj, spec.sparsity, rng)
    orders = spec.orders
    pacf = draw_pacf(orders, rng)
    omega2, shifted = None, []
    if spec.paired:
        omega2 = omega1
        if spec.shift_edges:
            omega2, shifted = _shift_precision(omega1, spec.shift_edges, spec.shift_size, rng)
            lam = min(np.linalg.eigvalsh(omega1).min(), np.linalg.eigvalsh(omega2).min())
            if lam < 0.1:
                boost = (0.1 - lam) * np.eye(spec.p)
                omega1, omega2 = omega1 + boost, omega2 + boost
    y1 = _mix(omega1, simulate_ar(pacf, spec.n, rng))
    y2 = None
    if spec.paired:
        y2 = _mix(omega2, simulate_ar(pacf, spec.n2 or spec.n, rng))
    return Scenario(spec, PairedDataset(y1, y2), omega1, omega2, pacf, orders, achieved, shifted)


# ---------------------------------------------------------------- benchmark


def _run_cell(args) -> dict:
    from .sampler import ChainConfig, run_chain

    spec, rep, base_cfg = args
    seed = int(np.random.SeedSequence([spec.seed, rep]).generate_state(1)[0])
    rep_spec = ScenarioSpec.from_dict({**spec.to_dict(), "seed": seed})
    scen = simulate_scenario(rep_spec)
    cfg_kwargs = {**base_cfg, "order": spec.fitted_order, "seed": seed, "single_period": True}
    if spec.oracle_orders:
        cfg_kwargs["series_orders"] = tuple(int(k) for k in scen.orders)
    cfg = ChainConfig(**cfg_kwargs)
    t0 = time.perf_counter()
    try:
        res = run_chain(scen.data, cfg)
    except Exception as exc:  # a failing cell must not abort the grid
        logger.exception("cell %s rep %d failed", spec, rep)
        return {"rep": rep, "seed": seed, "error": repr(exc)}
    omega_bar = res.draws.omega_mean(1)
    return {
        "rep": rep,
        "seed": seed,
        "rmse": rmse(omega_bar, scen.omega0),
        "identity_rmse": rmse(np.eye(spec.p), scen.omega0),
        "achieved_sparsity": scen.achieved_sparsity,
        "seconds": time.perf_counter() - t0,
    }


def run_benchmark(grid: list[ScenarioSpec], replications: int, cfg: dict | None = None,
                  workers: int = 1) -> dict:
    """Average RMSE of the posterior-mean precision per grid cell (single-period fits).

    ``cfg`` holds :class:`ChainConfig` keyword overrides shared by every fit.
    Rows lead with ``p, n, q, sparsity, rmse``.
    """
    cfg = dict(cfg or {})
    jobs = [(spec, rep, cfg) for spec in grid for rep in range(replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = []
    for c, spec in enumerate(grid):
        reps = results[c * replications : (c + 1) * replications]
        ok = [r["rmse"] for r in reps if "rmse" in r]
        rows.append({
            "p": spec.p, "n": spec.n, "q": spec.fitted_order, "sparsity": spec.sparsity,
            "mixed": list(spec.mixed) if spec.mixed else None,
            "rmse": float(np.mean(ok)) if ok else None,
            "identity_rmse": float(np.mean([r["identity_rmse"] for r in reps if "rmse" in r])) if ok else None,
            "replications": reps,
            "spec": spec.to_dict(),
        })
    return {"columns": ["p", "n", "q", "sparsity", "rmse"], "chain_config": cfg,
            "replications": replications, "rows": rows}


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")
