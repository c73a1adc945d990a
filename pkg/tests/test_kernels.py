import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpir import kernels
from dpir.oracle import rng_stream
from dpir.schedule import VarianceParam, build_linear_schedule, schedule_from_betas

mpmath.mp.dps = 40


def mp_compose(betas, t, k, tilde):
    """k single reverse steps from t composed as affine Gaussian maps, in extended precision."""
    ab = [mpmath.mpf(1)]
    for b in betas:
        ab.append(ab[-1] * (1 - mpmath.mpf(float(b))))
    c_x0, c_xt, var = mpmath.mpf(0), mpmath.mpf(1), mpmath.mpf(0)
    for u in range(t, t - k, -1):
        beta = mpmath.mpf(float(betas[u - 1]))
        a_x0 = mpmath.sqrt(ab[u - 1]) * beta / (1 - ab[u])
        a_xt = mpmath.sqrt(1 - beta) * (1 - ab[u - 1]) / (1 - ab[u])
        s2 = (1 - ab[u - 1]) / (1 - ab[u]) * beta if tilde else beta
        c_x0 = a_xt * c_x0 + a_x0
        c_xt = a_xt * c_xt
        var = a_xt**2 * var + s2
    return float(c_x0), float(c_xt), float(var)


def rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a)


def test_gamma_small_examples():
    s = schedule_from_betas([0.1, 0.2])
    assert kernels.gamma_small(s, 1) == pytest.approx(1.0, rel=1e-15)
    assert kernels.gamma_small(s, 2) == pytest.approx(0.2 * math.sqrt(0.9) / 0.28, rel=1e-14)


def test_gamma_cap_empty_product(sched):
    assert kernels.gamma_cap(sched, 5, 9) == 1.0
    with pytest.raises(ValueError):
        kernels.gamma_cap(sched, 1001, 3)


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_gamma_cap_factorizes(sched, data):
    j = data.draw(st.integers(1, 999))
    m = data.draw(st.integers(j, 999))
    i = data.draw(st.integers(m + 1, 1000))
    # ratio (1 - abar_{j-1}) / (1 - abar_i) telescopes through m
    lhs = kernels.gamma_cap(sched, i, j)
    rhs = kernels.gamma_cap(sched, i, m + 1) * kernels.gamma_cap(sched, m, j)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("tilde", [False, True])
def test_merged_five_step_composition(five_step, tilde):
    vp = VarianceParam.TILDE_BETA if tilde else VarianceParam.BETA
    c = kernels.merged_coeffs(five_step, 5, 3, vp)
    ref = mp_compose(five_step.betas, 5, 3, tilde)
    assert rel(c.c_x0, ref[0]) < 1e-13
    assert rel(c.c_xt, ref[1]) < 1e-13
    assert rel(c.var, ref[2]) < 1e-13


@pytest.mark.parametrize("t,k", [(1000, 1), (1000, 5), (1000, 250), (1000, 1000), (1, 1), (317, 200)])
@pytest.mark.parametrize("tilde", [False, True])
def test_merged_matches_extended_precision(sched, t, k, tilde):
    vp = VarianceParam.TILDE_BETA if tilde else VarianceParam.BETA
    c = kernels.merged_coeffs(sched, t, k, vp)
    ref = mp_compose(sched.betas, t, k, tilde)
    assert rel(c.c_x0, ref[0]) < 1e-11
    assert rel(c.c_xt, ref[1]) < 1e-11
    assert rel(c.var, ref[2]) < 1e-11


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_merged_consistency_identity(sched, data):
    t = data.draw(st.integers(1, 1000))
    k = data.draw(st.integers(1, t))
    c = kernels.merged_coeffs(sched, t, k)
    lhs = c.c_x0 + c.c_xt * math.sqrt(sched.alpha_bars[t])
    assert lhs == pytest.approx(math.sqrt(sched.alpha_bars[t - k]), rel=1e-12)


def test_merged_full_jump_keeps_no_state(sched):
    # k = t lands on x0 exactly: c_xt = 0 because abar_0 = 1
    c = kernels.merged_coeffs(sched, 1000, 1000)
    assert c.c_xt == 0.0
    assert c.c_x0 == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("t,k", [(10, 0), (10, 11), (0, 1)])
def test_merged_rejects_bad_steps(sched, t, k):
    with pytest.raises(ValueError):
        kernels.merged_coeffs(sched, t, k)


@pytest.mark.parametrize("target", [0, 5, 250, 999])
def test_table_lookup_matches_direct(sched_tilde, target):
    tab = kernels.MergedTable(sched_tilde, target)
    for t in {target + 1, (target + 1000) // 2 + 1, 1000}:
        a, b = tab(t), kernels.merged_coeffs(sched_tilde, t, t - target)
        assert a.k == b.k
        for x, y in ((a.c_x0, b.c_x0), (a.c_xt, b.c_xt), (a.var, b.var)):
            assert rel(x, y) < 1e-12
    with pytest.raises(ValueError):
        tab(target)


def test_forward_marginal(sched):
    x0 = np.array([1.0, -2.0])
    m1 = kernels.forward_marginal(sched, x0, 1)
    assert m1.stddev == pytest.approx(1e-2, rel=1e-12)
    np.testing.assert_allclose(m1.mean, math.sqrt(0.9999) * x0, rtol=1e-15)
    mT = kernels.forward_marginal(sched, x0, 1000)
    assert mT.stddev == pytest.approx(1.0, abs=1e-4)
    np.testing.assert_allclose(mT.mean, math.sqrt(sched.alpha_bars[1000]) * x0, rtol=1e-15)
    assert math.sqrt(sched.alpha_bars[1000]) < 1e-2


def test_posterior_step_mean_at_t1_is_x0():
    s = schedule_from_betas([0.3, 0.4])
    # gamma_1 = 1 and the x_t weight vanishes because abar_0 = 1
    out = kernels.posterior_step(s, np.array([5.0]), np.array([2.0]), 1)
    assert out[0] == pytest.approx(2.0, rel=1e-15)


def test_two_posterior_steps_equal_merged_pair(five_step):
    xt, x0 = np.array([0.7, -1.1]), np.array([0.2, 0.4])
    mid = kernels.posterior_step(five_step, xt, x0, 4)
    two = kernels.posterior_step(five_step, mid, x0, 3)
    c = kernels.merged_coeffs(five_step, 4, 2)
    np.testing.assert_allclose(two, c.mean(xt, x0), rtol=1e-13)


def test_posterior_step_shape_checks(sched):
    with pytest.raises(ValueError):
        kernels.posterior_step(sched, np.zeros(3), np.zeros(2), 10)
    with pytest.raises(ValueError):
        kernels.posterior_step(sched, np.zeros(3), np.zeros(3), 10, noise=np.zeros(2))


def test_posterior_step_distribution(sched):
    rng = rng_stream(5, 0)
    n = 100_000
    xt, x0 = np.array([0.5, -0.2, 1.0]), np.array([1.0, 0.0, -1.0])
    draws = kernels.posterior_step(sched, xt, x0, 400, noise=rng.standard_normal((n, 3)))
    c = kernels.merged_coeffs(sched, 400, 1)
    mean = c.mean(xt, x0)
    se = math.sqrt(c.var / n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
    np.testing.assert_allclose(draws.var(axis=0, ddof=1), c.var, rtol=0.03)


def test_score_from_x0_one_dimension():
    s = schedule_from_betas([0.25])
    # (sqrt(0.75) * x0 - xt) / 0.25 with x0 = 0, xt = 1/3
    out = kernels.score_from_x0(s, np.array([0.0]), np.array([1.0 / 3.0]), 1)
    assert out[0] == pytest.approx(-4.0 / 3.0, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(t=st.integers(1, 1000), seed=st.integers(0, 2**31))
def test_score_and_x0_parametrizations_agree(sched, t, seed):
    rng = np.random.default_rng(seed)
    xt, x0 = rng.standard_normal(4), rng.standard_normal(4)
    via_score = kernels.mean_from_score(sched, xt, kernels.score_from_x0(sched, x0, xt, t), t)
    direct = kernels.posterior_step(sched, xt, x0, t)
    np.testing.assert_allclose(via_score, direct, atol=1e-12 * max(1.0, np.max(np.abs(direct))), rtol=1e-10)


def test_ddim_eta_zero_is_deterministic(sched):
    xt, x0 = np.array([0.3, 0.1]), np.array([1.0, -1.0])
    a = kernels.ddim_step(sched, xt, x0, 250, 245, 0.0, noise=np.ones(2))
    b = kernels.ddim_step(sched, xt, x0, 250, 245, 0.0)
    np.testing.assert_array_equal(a, b)
    # with xt on the forward path, the update reproduces that path
    eps = np.array([0.4, -0.9])
    xt = math.sqrt(sched.alpha_bars[250]) * x0 + math.sqrt(sched.one_minus_alpha_bars[250]) * eps
    want = math.sqrt(sched.alpha_bars[245]) * x0 + math.sqrt(sched.one_minus_alpha_bars[245]) * eps
    np.testing.assert_allclose(kernels.ddim_step(sched, xt, x0, 250, 245), want, rtol=1e-12)


@pytest.mark.parametrize("t", [2, 17, 250, 1000])
def test_ddim_eta_one_single_step_is_tilde_posterior(sched, t):
    sd = kernels.ddim_sigma(sched, t, t - 1, 1.0)
    assert sd**2 == pytest.approx(sched.reverse_sigma2(t, VarianceParam.TILDE_BETA), rel=1e-10)
    xt, x0 = np.array([0.3]), np.array([-0.5])
    m = kernels.ddim_step(sched, xt, x0, t, t - 1, 1.0)
    np.testing.assert_allclose(m, kernels.posterior_step(sched, xt, x0, t), rtol=1e-10)


def test_ddim_rejects_bad_args(sched):
    z = np.zeros(2)
    with pytest.raises(ValueError):
        kernels.ddim_step(sched, z, z, 10, 10)
    with pytest.raises(ValueError):
        kernels.ddim_step(sched, z, z, 10, 5, eta=1.5)


def test_merged_csv(sched):
    text = kernels.merged_coeffs_csv(sched, [(1000, 5), (10, 10)])
    lines = text.strip().split("\n")
    assert lines[0] == "t,k,c_x0,c_xt,var"
    t, k, cx0, cxt, var = lines[1].split(",")
    assert (int(t), int(k)) == (1000, 5)
    assert float(cx0) == kernels.merged_coeffs(sched, 1000, 5).c_x0


def test_single_linear_step_helper():
    s = build_linear_schedule(1, 1e-4, 1e-4)
    c = kernels.merged_coeffs(s, 1, 1)
    assert (c.c_x0, c.c_xt) == pytest.approx((1.0, 0.0))
