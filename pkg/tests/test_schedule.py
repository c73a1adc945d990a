from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpir.schedule import VarianceParam, build_linear_schedule, schedule_from_betas

mpmath.mp.dps = 50


def mp_alpha_bars(betas):
    """Extended-precision running product, t = 0..T."""
    out = [mpmath.mpf(1)]
    for b in betas:
        out.append(out[-1] * (1 - mpmath.mpf(float(b))))
    return out


def test_linear_endpoints(sched):
    assert sched.beta(1) == 1e-4
    assert sched.beta(1000) == 2e-2
    assert sched.T == 1000


def test_linear_midpoint_formula(sched):
    expected = Fraction(1e-4) + Fraction(499, 999) * (Fraction(2e-2) - Fraction(1e-4))
    assert sched.beta(500) == pytest.approx(float(expected), rel=1e-15)


def test_single_step_schedule():
    s = build_linear_schedule(1, 1e-4, 1e-4)
    assert s.T == 1
    assert s.alpha_bar(1) == 0.9999


@pytest.mark.parametrize(
    "args",
    [(0, 1e-4, 2e-2), (10, 0.0, 2e-2), (10, 1e-4, 1.0), (10, 2e-2, 1e-4), (10, -1e-3, 1e-2)],
)
def test_rejects_bad_construction(args):
    with pytest.raises(ValueError):
        build_linear_schedule(*args)


def test_alpha_bar_values(sched):
    ref = mp_alpha_bars(sched.betas)
    assert sched.alpha_bar(0) == 1.0
    assert sched.alpha_bar(1) == 0.9999
    assert sched.alpha_bar(1000) == pytest.approx(float(ref[1000]), rel=1e-13)


@pytest.mark.parametrize("t", [-1, 1001])
def test_alpha_bar_range(sched, t):
    with pytest.raises(ValueError):
        sched.alpha_bar(t)


def test_tilde_sigma(sched):
    ref = mp_alpha_bars(sched.betas)
    assert sched.tilde_sigma(250) * 255 == pytest.approx(244.3, abs=1.5)
    expected = float(mpmath.sqrt((1 - ref[1000]) / ref[1000]))
    assert sched.tilde_sigma(1000) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        sched.tilde_sigma(0)


def test_tilde_sigma_half():
    # alpha_bar_2 = 0.5 exactly
    s = schedule_from_betas([0.5, 0.0 + 1e-300])
    assert s.tilde_sigma(1) == pytest.approx(1.0, rel=1e-15)


def test_reverse_sigma2(sched):
    assert sched.reverse_sigma2(7) == sched.beta(7)
    tb = sched.with_variance_param(VarianceParam.TILDE_BETA)
    assert tb.reverse_sigma2(1) == 0.0
    ref = mp_alpha_bars(sched.betas)
    expected = (1 - ref[499]) / (1 - ref[500]) * mpmath.mpf(float(sched.betas[499]))
    assert tb.reverse_sigma2(500) == pytest.approx(float(expected), rel=1e-12)


def test_schedule_invariants(sched):
    ab = sched.alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab <= 1))
    assert np.all(np.diff(sched.betas) >= 0)
    # identity (1 - abar_t) - alpha_t (1 - abar_{t-1}) = beta_t
    om = sched.one_minus_alpha_bars
    resid = om[1:] - sched.alphas * om[:-1] - sched.betas
    assert np.max(np.abs(resid)) < 1e-12
    tilde = sched.reverse_sigma2_array(VarianceParam.TILDE_BETA)[1:]
    assert np.all(tilde <= sched.betas)


def test_running_product_is_one_rounding_per_step(sched):
    ab = sched.alpha_bars
    assert np.array_equal(ab[1:], ab[:-1] * sched.alphas)


@settings(max_examples=25, deadline=None)
@given(
    T=st.integers(1, 10_000),
    b0=st.floats(1e-5, 1e-3),
    b1=st.floats(1e-3, 3e-2),
)
def test_log_space_matches_direct_product(T, b0, b1):
    s = build_linear_schedule(T, b0, b1)
    direct = s.alpha_bars
    via_log = np.exp(s.log_alpha_bars)
    assert np.max(np.abs(via_log / direct - 1.0)) < 1e-12


def test_csv_dump(sched):
    text = sched.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "t,beta,alpha,alpha_bar,tilde_sigma,reverse_sigma2"
    assert len(lines) == 1001
    row = lines[500].split(",")
    assert int(row[0]) == 500
    assert float(row[3]) == sched.alpha_bar(500)  # round-trips exactly


def test_schedule_is_immutable(sched):
    with pytest.raises(ValueError):
        sched.betas[0] = 0.5


def test_unit_beta_needs_flag():
    with pytest.raises(ValueError):
        schedule_from_betas([0.1, 1.0])
    s = schedule_from_betas([0.1, 1.0], allow_unit_beta=True)
    assert s.alpha_bar(2) == 0.0
