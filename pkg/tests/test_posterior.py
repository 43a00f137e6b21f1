import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spoutar.factorization import assemble_precision, from_latent, lower_from_free, to_latent
from spoutar.posterior import (
    EdgeShiftReport,
    classify_edges,
    omega_diff_draws,
    partial_correlations,
    predict,
    rmse,
    top_k_edges,
)
from spoutar.sampler import PosteriorDraws

from conftest import random_spd


def make_draws(rng, n=5, p=3, q=1, same_l=False, pacf=None, a_scale=0.2):
    m = p * (p - 1) // 2
    l1 = rng.normal(0, 0.5, (n, m))
    l2 = l1.copy() if same_l else rng.normal(0, 0.5, (n, m))
    pac = rng.uniform(-0.8, 0.8, (n, p, q)) if pacf is None else np.broadcast_to(pacf, (n, p, q)).copy()
    return PosteriorDraws(p=p, q=q, d=rng.uniform(0.5, 2, (n, p)), l1=l1, l2=l2,
                          a=rng.normal(0, a_scale, (n, m)), pacf=pac, xi=np.zeros(n),
                          lam=np.zeros((n, 3)), s2=np.ones((n, 3)))


def test_diff_zero_when_l_shared(rng):
    diffs = omega_diff_draws(make_draws(rng, same_l=True))
    assert not diffs.any()


def test_diff_matches_naive_and_is_symmetric(rng):
    dr = make_draws(rng, n=4)
    diffs = omega_diff_draws(dr)
    for i in range(4):
        w1 = dr.d[i][:, None] * (np.eye(3) - lower_from_free(dr.l1[i], 3))
        w2 = dr.d[i][:, None] * (np.eye(3) - lower_from_free(dr.l2[i], 3))
        np.testing.assert_allclose(diffs[i], w2.T @ w2 - w1.T @ w1, atol=1e-12)
        assert np.linalg.norm(diffs[i] - diffs[i].T) < 1e-12


def test_structural_zero_when_rows_agree(rng):
    # entry (i, j) of (I-L)^T D^2 (I-L) depends on columns i and j of L only
    p = 4
    dr = make_draws(rng, n=3, p=p)
    for k in range(3):
        L1 = lower_from_free(dr.l1[k], p)
        L2 = L1.copy()
        L2[3, 2] += 0.7          # touches columns 2 only
        dr.l2[k] = L2[np.tril_indices(p, -1)]
    diffs = omega_diff_draws(dr)
    assert not diffs[:, 0, 1].any() and not diffs[:, 0, 3].any()
    assert diffs[:, 2, 3].all()


def test_classification_trivial_cases():
    zero = classify_edges(np.zeros((10, 3, 3)))
    assert (zero.classes == 0).all()
    ones = np.ones((10, 3, 3))
    rep = classify_edges(ones)
    assert (rep.classes == 1).all() and np.all(rep.lo == 1) and np.all(rep.hi == 1)
    with pytest.raises(ValueError):
        classify_edges(np.zeros((1, 3, 3)))


def test_classification_calibration(rng):
    # draws centred on an N(0, 1) offset: the 95% interval excludes 0 iff |offset| > 1.96
    flags = []
    for _ in range(400):
        centre = rng.standard_normal()
        draws = centre + rng.standard_normal((400, 2, 2))
        flags.append(classify_edges(draws).classes[0] != 0)
    assert abs(np.mean(flags) - 0.05) < 0.035


def test_monotone_in_level(rng):
    diffs = rng.normal(0.3, 1.0, (500, 6, 6))
    d = (diffs + diffs.transpose(0, 2, 1)) / 2
    r95, r99 = classify_edges(d, 0.95), classify_edges(d, 0.99)
    assert set(r99.flagged()) <= set(r95.flagged())


def _report(means):
    m = len(means)
    p = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    iu = np.triu_indices(p, 1)
    means = np.asarray(means, float)
    return EdgeShiftReport(np.column_stack(iu), means, means - 0.1, means + 0.1, 0.95)


def test_top_k_ordering():
    rep = _report([3.0, -5.0, 0.0])
    top = top_k_edges(rep, 10)
    assert [(e["i"], e["j"]) for e in top] == [(0, 2), (0, 1)]
    assert top_k_edges(_report([0.0, 0.0, 0.0]), 3) == []
    with pytest.raises(ValueError):
        top_k_edges(rep, 0)


def test_top_k_matches_full_sort(rng):
    vals = rng.choice([-2.0, -1.0, 1.0, 2.0, 3.0], 10)
    rep = _report(vals)
    top = top_k_edges(rep, 10)
    oracle = sorted(range(10), key=lambda e: (-abs(vals[e]), tuple(rep.pairs[e])))
    assert [(e["i"], e["j"]) for e in top] == [tuple(map(int, rep.pairs[e])) for e in oracle]
    assert len(top_k_edges(rep, 4)) == 4


def test_partial_correlation_cases():
    assert not (partial_correlations(np.diag([1.0, 2.0, 3.0])) - np.eye(3)).any()
    pc = partial_correlations(np.array([[1.0, -0.5], [-0.5, 1.0]]))
    assert pc[0, 1] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        partial_correlations(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_partial_correlation_regression_oracle(rng):
    omega = random_spd(rng, 4, cond=5)
    cov = np.linalg.inv(omega)
    x = rng.multivariate_normal(np.zeros(4), cov, size=400_000)
    pc = partial_correlations(omega)
    for i, j in [(0, 1), (1, 3), (2, 3)]:
        rest = [k for k in range(4) if k not in (i, j)]
        # population residual correlation computed exactly from the covariance
        s = cov
        b_i = np.linalg.solve(s[np.ix_(rest, rest)], s[rest, i])
        b_j = np.linalg.solve(s[np.ix_(rest, rest)], s[rest, j])
        c_ij = s[i, j] - s[i, rest] @ b_j
        c_ii = s[i, i] - s[i, rest] @ b_i
        c_jj = s[j, j] - s[j, rest] @ b_j
        assert pc[i, j] == pytest.approx(c_ij / np.sqrt(c_ii * c_jj), abs=1e-10)
        # and the sample version agrees to Monte-Carlo accuracy
        ri = x[:, i] - x[:, rest] @ b_i
        rj = x[:, j] - x[:, rest] @ b_j
        assert np.corrcoef(ri, rj)[0, 1] == pytest.approx(pc[i, j], abs=0.01)


@given(st.integers(0, 10_000))
def test_property_partial_corr_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    omega = random_spd(rng, 5)
    s = np.diag(rng.uniform(0.1, 10, 5))
    pc = partial_correlations(omega)
    np.testing.assert_allclose(partial_correlations(s @ omega @ s), pc, atol=1e-12)
    assert np.all(np.abs(pc) <= 1) and np.allclose(np.diag(pc), 1) and np.allclose(pc, pc.T)


def test_rmse_cases(rng):
    assert rmse(np.eye(3), np.eye(3)) == 0
    assert rmse(np.eye(4) * 2, np.eye(4)) == pytest.approx(0.5)
    a, b = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
    assert rmse(a, b) == pytest.approx(np.sqrt(sum((a[i, j] - b[i, j]) ** 2 for i in range(5) for j in range(5))) / 5)
    with pytest.raises(ValueError):
        rmse(np.eye(2), np.eye(3))


def test_predict_zero_ar_gives_zero(rng):
    dr = make_draws(rng, pacf=np.zeros((3, 1)))
    fc = predict(dr, rng.standard_normal((3, 5)), horizon=3, innovations=False)
    np.testing.assert_allclose(fc.mean, 0.0, atol=1e-12)


def test_predict_ar1_hand_recursion(rng):
    dr = make_draws(rng, n=1, pacf=np.array([[0.7], [-0.2], [0.4]]))
    hist = rng.standard_normal((3, 6))
    fc = predict(dr, hist, horizon=2, innovations=False)
    l2 = lower_from_free(dr.l2[0], 3)
    u = dr.u(0)
    z = to_latent(hist[:, -1:], dr.d[0], l2, u=u)[:, 0]
    phi = np.array([0.7, -0.2, 0.4])
    z1 = phi * z
    z2 = phi * z1
    np.testing.assert_allclose(fc.mean[0], from_latent(z1[:, None], dr.d[0], l2, u=u)[:, 0], atol=1e-12)
    np.testing.assert_allclose(fc.mean[1], from_latent(z2[:, None], dr.d[0], l2, u=u)[:, 0], atol=1e-12)


def test_predict_deterministic_without_innovations(rng):
    dr = make_draws(rng, n=3, q=2)
    hist = rng.standard_normal((3, 4))
    a = predict(dr, hist, 4, innovations=False)
    b = predict(dr, hist, 4, innovations=False)
    assert a.mean.tobytes() == b.mean.tobytes()


def test_predict_monte_carlo_convergence(rng):
    dr1 = make_draws(rng, n=1, pacf=np.array([[0.5], [0.5], [0.5]]))
    n = 10_000
    dr = make_draws(rng, n=n, pacf=np.array([[0.5], [0.5], [0.5]]))
    for name in ("d", "l1", "l2", "a", "pacf"):
        getattr(dr, name)[:] = getattr(dr1, name)[0]
    hist = rng.standard_normal((3, 3))
    fc = predict(dr, hist, 1, rng=rng, keep_paths=True)
    exact = predict(dr1, hist, 1, innovations=False).mean
    se = fc.paths[:, 0, :].std(axis=0) / np.sqrt(n)
    sigma_max = fc.paths[:, 0, :].std(axis=0).max()
    assert np.all(se <= sigma_max / 100 + 1e-12)
    assert np.all(np.abs(fc.mean - exact) < 4 * se)


def test_predict_validation(rng):
    dr = make_draws(rng, q=3)
    with pytest.raises(ValueError, match="history"):
        predict(dr, rng.standard_normal((3, 2)), 1)
    with pytest.raises(ValueError, match="horizon"):
        predict(dr, rng.standard_normal((3, 5)), 0)


def test_report_serialisation_and_dot():
    rep = _report([1.0, -2.0, 0.0])
    rep.names = ["a", "b", "c"]
    d = rep.to_dict()
    assert d["n_flagged"] == 2 and {e["shift"] for e in d["edges"]} == {"positive", "negative", "none"}
    dot = rep.to_dot()
    assert "sign=positive" in dot and "sign=negative" in dot and dot.count("--") == 2
    empty = _report([0.0, 0.0, 0.0]).to_dot()
    assert "--" not in empty and empty.startswith("graph")
