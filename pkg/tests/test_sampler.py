import math

import numpy as np
import pytest
from scipy import stats

from spoutar.arproc import pacf_to_ar
from spoutar.factorization import PairedDataset
from spoutar.sampler import (
    ChainConfig,
    DensePrecond,
    RowBlockPrecond,
    _threshold_step,
    adaptive_mh_step_pacf,
    hot_start,
    mala_step,
    mala_step_l,
    mala_step_logd,
    mh_step,
    mh_step_a,
    run_chain,
    run_toy,
    tune_scale,
    update_thresholds,
)
from spoutar.simgen import ScenarioSpec, simulate_ar, simulate_scenario


def small_data(seed=0, p=4, n=60, paired=True):
    spec = ScenarioSpec(p=p, n=n, q=2, sparsity=0.5, n_blocks=1, ring_degree=2, seed=seed, paired=paired)
    return simulate_scenario(spec).data


FAST = dict(total_iters=400, burn_in=200, ar_only_until=50, thresholds_zero_until=100, tune_every=50)


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(ar_only_until=3000, thresholds_zero_until=2500)
    with pytest.raises(ValueError):
        ChainConfig(mh_accept_band=(0.5, 0.4))
    with pytest.raises(ValueError):
        ChainConfig(order=2, series_orders=(1, 3))
    cfg = ChainConfig()
    assert (cfg.total_iters, cfg.burn_in, cfg.ar_only_until, cfg.thresholds_zero_until) == (10000, 5000, 1500, 2500)
    assert (cfg.tune_every, cfg.lambda_l_every, cfg.lambda_a_every) == (100, 20, 30)
    assert cfg.mh_accept_band == (0.15, 0.40) and cfg.mala_accept_band == (0.45, 0.70)


def test_tune_scale_moves_towards_band():
    band = (0.15, 0.40)
    assert tune_scale(1.0, 0.9, band) > 1.0
    assert tune_scale(1.0, 0.01, band) < 1.0
    assert tune_scale(1.0, 0.275, band) == 1.0
    # never overshoots into a change of sign of the correction for rates in band
    assert tune_scale(1.0, 0.2, band) < 1.0 and tune_scale(1.0, 0.36, band) > 1.0


def test_mh_zero_scale_always_accepts(rng):
    x = np.array([0.3])
    for _ in range(50):
        ok, x2, _, _ = mh_step(x, 0.0, lambda v: (0.0, None), 0.0, rng)
        assert ok and np.array_equal(x2, x)


def test_mala_zero_gradient_small_step_accepts(rng):
    acc = [mala_step(np.zeros(3), 0.0, np.zeros(3), lambda v: (0.0, np.zeros(3), None), 1e-8, rng)[0]
           for _ in range(50)]
    assert all(acc)


def test_invalid_proposal_leaves_state(rng):
    x = np.array([1.0, 2.0])
    ok, x2, lp, aux = mh_step(x, -1.0, lambda v: None, 1.0, rng, aux="keep")
    assert not ok and x2 is x and lp == -1.0 and aux == "keep"
    ok, x2, lp, g, aux, finite = mala_step(x, -1.0, np.ones(2), lambda v: (0.0, np.full(2, np.nan), None), 0.1, rng)
    assert not ok and x2 is x and not finite


def test_mh_detailed_balance_chi_square(rng):
    # correlated 2-D Gaussian; bin the first coordinate into deciles of its marginal
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    prec = np.linalg.inv(cov)
    logp = lambda v: -0.5 * v @ prec @ v
    run = run_toy("mh", logp, np.zeros(2), 100_000, 2000, rng, scale=2.0)
    thin = run.samples[::20, 0]
    edges = stats.norm(0, 1).ppf(np.linspace(0, 1, 11))
    counts = np.histogram(thin, bins=edges)[0]
    chi2 = stats.chisquare(counts).pvalue
    assert chi2 > 0.01


def test_precond_objects_consistent(rng):
    p = 5
    covs = [np.zeros((0, 0))]
    for i in range(1, p):
        a = rng.standard_normal((i, i))
        covs.append(a @ a.T + i * np.eye(i))
    rows = RowBlockPrecond(covs)
    m = p * (p - 1) // 2
    full = np.zeros((m, m))
    off = 0
    for i in range(1, p):
        full[off : off + i, off : off + i] = covs[i]
        off += i
    dense = DensePrecond(np.linalg.inv(full))
    v = rng.standard_normal(m)
    for pre in (rows, dense):
        np.testing.assert_allclose(pre.apply(v), full @ v, atol=1e-10)
        assert pre.quad(v) == pytest.approx(v @ np.linalg.solve(full, v), rel=1e-10)
    e = rng.standard_normal((20000, m))
    for pre in (rows, dense):
        s = np.array([pre.sample(x) for x in e[:4000]])
        np.testing.assert_allclose(np.cov(s.T), full, atol=0.15 * np.abs(full).max())


def test_hot_start_initialisation():
    data = small_data()
    cfg = ChainConfig(order=2)
    st = hot_start(data, cfg, np.random.default_rng(0))
    assert not st.xa.any() and np.array_equal(st.u, np.eye(data.p))
    assert st.lam_l1 == st.lam_l2 == st.lam_a == 0.0
    assert np.all(st.d > 0)


def test_hot_start_near_identity_for_white_data(rng):
    data = PairedDataset(rng.standard_normal((3, 4000)), rng.standard_normal((3, 4000)))
    st = hot_start(data, ChainConfig(order=1), rng)
    np.testing.assert_allclose(st.d, 1.0, atol=0.08)
    assert np.max(np.abs(st.xl1)) < 0.08


def test_hot_start_rejects_degenerate():
    y = np.vstack([np.ones(30), np.random.default_rng(0).standard_normal(30)])
    with pytest.raises(ValueError, match="degenerate"):
        hot_start(PairedDataset(y), ChainConfig(order=1), np.random.default_rng(0))


def test_rejected_blocks_do_not_mutate():
    data = small_data()
    cfg = ChainConfig(order=2)
    st = hot_start(data, cfg, np.random.default_rng(0))
    # a huge step makes rejection essentially certain
    st.adapt.scales.update(a=1e3, l1=1e3, l2=1e3, logd=1e3)
    before = st.param_bytes()
    rng = np.random.default_rng(1)
    assert not mh_step_a(st, data, cfg, rng)
    assert not mala_step_l(st, data, 1, cfg, rng)
    assert not mala_step_logd(st, data, cfg, rng)
    assert st.param_bytes() == before


def test_l1_update_leaves_period_two_untouched():
    data = small_data()
    cfg = ChainConfig(order=2)
    st = hot_start(data, cfg, np.random.default_rng(0))
    st.adapt.scales["l1"] = 1e-3
    z2, ll2, xl2 = st.z[1].copy(), st.ll[1].copy(), st.xl2.copy()
    rng = np.random.default_rng(2)
    for _ in range(20):
        mala_step_l(st, data, 1, cfg, rng)
    assert np.array_equal(z2, st.z[1]) and np.array_equal(ll2, st.ll[1]) and np.array_equal(xl2, st.xl2)


def test_logd_step_uses_both_periods(monkeypatch):
    import spoutar.sampler as smp

    data = small_data()
    cfg = ChainConfig(order=2)
    ratios = []

    def spy(x, logp_x, grad_x, target, eps, rng, precond=None, aux=None):
        prop = x + 0.01
        ratios.append(target(prop)[0] - logp_x)
        return False, x, logp_x, grad_x, aux, True

    monkeypatch.setattr(smp, "mala_step", spy)
    for y2_scale in (1.0, 3.0):
        d2 = PairedDataset(data.y1, data.y2 * y2_scale)
        st = hot_start(data, cfg, np.random.default_rng(0))
        st.refresh(d2, cfg)
        mala_step_logd(st, d2, cfg, np.random.default_rng(5))
    assert ratios[0] != pytest.approx(ratios[1])


def test_threshold_schedule_and_upper_bound():
    data = small_data()
    cfg = ChainConfig(order=2, lambda_upper=0.5)
    st = hot_start(data, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    assert update_thresholds(st, data, 2000, cfg, rng) == {}
    assert update_thresholds(st, data, 2501, cfg, rng) == {}
    st.lam_l1 = 0.49
    st.adapt.scales["lam_l1"] = 5.0
    accepted = [_threshold_step(st, data, cfg, rng, "lam_l1") for _ in range(40)]
    assert st.lam_l1 <= 0.5
    assert not all(accepted)


def test_phase_discipline_from_event_log():
    data = small_data()
    cfg = ChainConfig(order=2, **FAST)
    res = run_chain(data, cfg)
    for it, block, _ in res.diagnostics.events:
        if block in ("a", "l1", "l2", "logd"):
            assert it > cfg.ar_only_until
        if block.startswith("lam_") or block == "xi":
            assert it > cfg.thresholds_zero_until
    assert res.draws.n_draws == cfg.total_iters - cfg.burn_in
    assert np.all(res.draws.lam[:, :][res.draws.lam[:, 0] > 0]) >= 0


def test_reproducible_bitwise():
    data = small_data()
    cfg = ChainConfig(order=2, seed=11, **FAST)
    a, b = run_chain(data, cfg), run_chain(data, cfg)
    for name in ("d", "l1", "l2", "a", "pacf", "lam", "s2"):
        assert getattr(a.draws, name).tobytes() == getattr(b.draws, name).tobytes()


def test_zero_draws_when_total_equals_burn_in():
    data = small_data()
    cfg = ChainConfig(order=2, total_iters=200, burn_in=200, ar_only_until=50, thresholds_zero_until=100,
                      tune_every=50)
    res = run_chain(data, cfg)
    assert res.draws.n_draws == 0
    assert res.diagnostics.logpost.size == 200


def test_thinning_count():
    data = small_data()
    cfg = ChainConfig(order=2, thin=3, **FAST)
    assert run_chain(data, cfg).draws.n_draws == (cfg.total_iters - cfg.burn_in) // 3


def test_pacf_recovery_single_series():
    rho = np.array([[0.6, -0.3]])
    z = simulate_ar(rho, 600, np.random.default_rng(3))
    data = PairedDataset(z)
    cfg = ChainConfig(order=2, total_iters=3000, burn_in=1000, ar_only_until=500, thresholds_zero_until=1000,
                      tune_every=100, single_period=True)
    st = hot_start(data, cfg, np.random.default_rng(0))
    st.d = np.ones(1)
    st.refresh(data, cfg)
    rng = np.random.default_rng(4)
    psi = []
    for it in range(3000):
        adaptive_mh_step_pacf(st, data, cfg, rng)
        if it >= 1000:
            psi.append(st.psi[0].copy())
    psi = np.array(psi)
    truth = pacf_to_ar(rho).psi[0]
    assert np.all(np.abs(psi.mean(0) - truth) < 3 * psi.std(0))


def test_series_orders_mask_keeps_higher_lags_zero():
    data = small_data(paired=False)
    cfg = ChainConfig(order=3, series_orders=(1, 2, 3, 3), **FAST)
    res = run_chain(data, cfg)
    assert not res.draws.pacf[:, 0, 1:].any()
    assert not res.draws.pacf[:, 1, 2:].any()


def test_ndjson_log(tmp_path):
    import json
    data = small_data()
    path = tmp_path / "diag.ndjson"
    cfg = ChainConfig(order=2, log_path=str(path), **FAST)
    run_chain(data, cfg)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert {"iteration", "block", "accepted", "log_posterior"} <= set(recs[0])
    assert recs[-1]["iteration"] == cfg.total_iters


@pytest.mark.slow
def test_toy_posterior_against_long_reference():
    # p=2, q=1, fixed rotation, thresholds pinned at zero
    spec = ScenarioSpec(p=2, n=400, q=1, sparsity=0.5, n_blocks=1, ring_degree=0, seed=8)
    data = simulate_scenario(spec).data
    base = dict(order=1, fix_rotation=True, lambda_upper=0.0, single_period=True)
    short = run_chain(data, ChainConfig(total_iters=4000, burn_in=2000, ar_only_until=300,
                                        thresholds_zero_until=600, seed=1, **base))
    ref = run_chain(data, ChainConfig(total_iters=40000, burn_in=20000, ar_only_until=300,
                                      thresholds_zero_until=600, seed=2, **base))
    om_s = np.array([short.draws.omega(i) for i in range(short.draws.n_draws)])
    om_r = np.array([ref.draws.omega(i) for i in range(ref.draws.n_draws)])
    assert np.all(np.abs(om_s.mean(0) - om_r.mean(0)) <= 3 * om_r.std(0) + 1e-12)
    assert not short.draws.a.any()
    assert not short.draws.lam.any()


def test_dense_fisher_matches_naive_sum(rng):
    from spoutar.factorization import lower_indices
    from spoutar.sampler import _filtered_gram, _fisher_full_l

    p, q = 5, 2
    y = rng.standard_normal((p, 30))
    d = rng.uniform(0.5, 2, p)
    u = np.linalg.qr(rng.standard_normal((p, p)))[0]
    psi, sig = rng.uniform(-0.5, 0.5, (p, q)), rng.uniform(0.5, 1, p)
    g = _filtered_gram(y, psi, sig)
    rows, cols = lower_indices(p)
    m = rows.size
    h = np.eye(m) / 3.0
    for a in range(m):
        for b in range(m):
            for k in range(p):
                h[a, b] += d[rows[a]] * d[rows[b]] * u[rows[a], k] * u[rows[b], k] * g[k][cols[a], cols[b]]
    pre = _fisher_full_l(y, d, u, psi, sig, 3.0)
    np.testing.assert_allclose(pre.h, h, atol=1e-12)
    np.testing.assert_allclose(pre.cov @ h, np.eye(m), atol=1e-10)
