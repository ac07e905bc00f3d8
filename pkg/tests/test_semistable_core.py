import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from semistable_dk.semistable_core import (
    DomainError,
    FiniteLevyLaw,
    QuadratureConfig,
    SemistableLaw,
    cdf,
    char_fn,
    constant_m,
    fibonacci_m,
    levy_tail,
    log_floor,
    mellin_log_char_fn,
    nu_lambda,
    sample,
    small_x_band,
    st_petersburg_m,
    uniform_subexp_gap,
    wang_m,
    wang_noncontinuous_m,
)

POISSON = FiniteLevyLaw((1.0,), (1.0,))
AMPLITUDES = [constant_m(0.5, 2.0, 0.7), st_petersburg_m(0.5), wang_m(0.5), wang_noncontinuous_m(0.5),
              fibonacci_m(0.7), st_petersburg_m(0.3)]


@pytest.mark.parametrize("m", AMPLITUDES, ids=lambda m: f"{m.label}-{m.alpha:.2f}")
def test_amplitude_is_log_periodic_positive_and_admissible(m):
    rep = m.check()
    assert rep["ok"], rep


def test_log_floor_exact_at_powers():
    for k in range(-40, 41):
        assert log_floor(2.0**k, 2.0) == k
        assert log_floor(np.nextafter(2.0**k, 0), 2.0) == k - 1
    assert log_floor(4.0 ** (1 / 0.5) * 3, 4.0**2) == 1


def test_levy_tail_st_petersburg_at_one():
    assert float(levy_tail(SemistableLaw(st_petersburg_m(0.5), 1.0), 1.0)) == 1.0


@given(st.floats(0.05, 0.95), st.floats(0.1, 5.0), st.floats(1e-3, 1e3))
def test_levy_tail_constant_amplitude(alpha, m0, x):
    law = SemistableLaw(constant_m(alpha, 2.0, m0), 1.0)
    assert float(levy_tail(law, x)) == pytest.approx(m0 * x ** -alpha, rel=1e-12)


def test_st_petersburg_levy_measure_is_a_step_function():
    law = SemistableLaw(st_petersburg_m(0.5), 1.0)
    for k in range(8):
        lo, hi = 4.0**k, 4.0 ** (k + 1)
        inner = np.linspace(lo, hi, 50, endpoint=False)
        assert np.allclose(levy_tail(law, inner), 2.0**-k, rtol=1e-12, atol=0)
        # atom of mass 2^-(k+1) at 4^(k+1)
        jump = float(levy_tail(law, np.nextafter(hi, 0))) - float(levy_tail(law, hi))
        assert jump == pytest.approx(2.0 ** -(k + 1), rel=1e-12)


@settings(max_examples=60)
@given(st.sampled_from(AMPLITUDES[:4]), st.floats(0.51, 1.0), st.floats(1e-3, 1e4))
def test_levy_tail_period_identity(m, lam, x):
    law = SemistableLaw(m, lam)
    P = m.period
    lhs = float(levy_tail(law, P * x)) * (P * x) ** m.alpha
    rhs = float(levy_tail(law, x)) * x**m.alpha
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_levy_tail_rejects_nonpositive():
    with pytest.raises(DomainError):
        levy_tail(SemistableLaw(wang_m(0.5), 1.0), 0.0)


def test_char_fn_poisson_closed_form():
    t = np.linspace(-20, 20, 81)
    assert np.allclose(char_fn(POISSON, t), np.exp(np.expm1(1j * t)), atol=1e-15)


def test_char_fn_constant_matches_stable_subordinator():
    m0, a = 0.7, 0.5
    t = np.array([-30.0, -3.0, -0.5, 0.2, 0.7, 5.0, 40.0])
    law = SemistableLaw(constant_m(a, 2.0, m0), 0.8)
    ref = np.exp(-m0 * gamma_fn(1 - a) * np.abs(t) ** a * np.exp(-0.5j * math.pi * a * np.sign(t)))
    assert np.max(np.abs(char_fn(law, t) - ref)) < 1e-10


def test_char_fn_wang_agrees_with_mellin_modes():
    m = wang_m(0.5)
    t = np.array([-3.0, -0.5, 0.01, 0.7, 5.0, 60.0])
    for lam in (0.55, 0.8, 1.0):
        got = char_fn(SemistableLaw(m, lam), t)
        assert np.max(np.abs(got - np.exp(mellin_log_char_fn(m, lam, t)))) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(AMPLITUDES[:4]), st.floats(0.51, 1.0), st.floats(-200, 200))
def test_char_fn_bounded_and_conjugate_symmetric(m, lam, t):
    law = SemistableLaw(m, lam)
    v = complex(char_fn(law, t))
    assert abs(v) <= 1 + 1e-12
    assert complex(char_fn(law, -t)) == pytest.approx(v.conjugate(), abs=1e-12)
    assert complex(char_fn(law, 0.0)) == 1


def test_cdf_poisson_surrogate():
    assert float(cdf(POISSON, 1.5)) == pytest.approx(2 / math.e, abs=1e-12)


@pytest.mark.parametrize("m", AMPLITUDES[:4], ids=lambda m: m.label)
def test_cdf_in_unit_interval_and_monotone(m):
    x = np.geomspace(0.05, 200, 80)
    r = cdf(SemistableLaw(m, 0.8), x)
    v = np.asarray(r.value)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) >= -2 * r.error_bound)
    assert r.error_bound < 1e-9


def test_cdf_endpoint_positions_coincide():
    # lambda = 1/c and lambda = 1 are the same point of the circle
    m = wang_m(0.5)
    x = np.array([0.1, 0.5, 2.0])
    assert np.allclose(cdf(SemistableLaw(m, 0.5), x).value, cdf(SemistableLaw(m, 1.0), x).value, atol=1e-12)


@pytest.mark.parametrize("m,x", [(wang_m(0.5), np.geomspace(0.02, 0.2, 6)),
                                 (st_petersburg_m(0.5), np.geomspace(0.15, 0.4, 6))], ids=["wang", "stp"])
def test_small_x_band_is_negative_and_bounded(m, x):
    rows = np.array([small_x_band(SemistableLaw(m, lam), x) for lam in (0.55, 0.75, 1.0)])
    assert np.all(np.isfinite(rows))
    assert np.all(rows < 0)
    # one fixed band for all positions
    assert rows.min() > 5 * rows.max()


def test_sample_poisson_mean():
    v = sample(POISSON, seed=3, n=100_000).values
    assert abs(v.mean() - 1.0) <= 3 * math.sqrt(1.0 / v.size)


def test_sample_bias_bound_shrinks_with_cut():
    law = SemistableLaw(wang_m(0.5), 1.0)
    b1 = sample(law, 0, 1, QuadratureConfig(small_jump_cut=1e-4)).bias_bound
    b2 = sample(law, 0, 1, QuadratureConfig(small_jump_cut=5e-5)).bias_bound
    assert b1 / b2 >= 2 ** (1 - 0.5) * (1 - 1e-9)


def test_sample_deterministic_and_thread_independent():
    law = SemistableLaw(st_petersburg_m(0.5), 0.75)
    a = sample(law, 11, 40_000, chunk=8192).values
    b = sample(law, 11, 40_000, chunk=8192, threads=3).values
    assert np.array_equal(a, b)
    assert np.all(a > 0)


def test_sample_against_inversion_small():
    law = SemistableLaw(st_petersburg_m(0.5), 1.0)
    v = np.sort(sample(law, 5, 100_000).values)
    grid = np.quantile(v, np.linspace(0.01, 0.99, 40))
    emp = np.searchsorted(v, grid, side="right") / v.size
    ref = np.asarray(cdf(law, grid).value)
    assert np.max(np.abs(emp - ref)) < 0.01


def test_nu_lambda_examples():
    sp = SemistableLaw(st_petersburg_m(0.5), 1.0)
    assert nu_lambda(sp, 1.0) == 0.0
    assert nu_lambda(sp, 4.0) == pytest.approx(0.5, abs=1e-15)
    c = SemistableLaw(constant_m(0.5, 2.0, 0.3), 0.7)
    x = np.array([1.0, 2.0, 10.0, 1e4])
    assert np.allclose(nu_lambda(c, x), 1 - x**-0.5, atol=1e-15)
    with pytest.raises(DomainError):
        nu_lambda(sp, 0.9)


@settings(max_examples=40)
@given(st.sampled_from(AMPLITUDES[:4]), st.floats(0.51, 1.0))
def test_nu_lambda_is_a_distribution_function(m, lam):
    x = np.geomspace(1.0, 1e5, 300)
    v = nu_lambda(SemistableLaw(m, lam), x)
    assert v[0] == 0.0
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) >= -1e-12)


def test_uniform_subexp_gap():
    w = wang_m(0.5)
    grid = [0.6, 0.8, 1.0]
    g10, g1000 = uniform_subexp_gap(w, 10.0, grid), uniform_subexp_gap(w, 1e3, grid)
    assert 0 <= g1000 < g10
    c = constant_m(0.5, 2.0, 0.7)
    assert uniform_subexp_gap(c, 50.0, [0.6]) == pytest.approx(uniform_subexp_gap(c, 50.0, [1.0]), abs=1e-9)


def test_quadrature_config_validation():
    with pytest.raises(DomainError):
        QuadratureConfig(n_nodes=10)
    with pytest.raises(DomainError):
        QuadratureConfig(small_jump_cut=1.5)
    with pytest.raises(DomainError):
        QuadratureConfig(t_max=-1.0)


@pytest.mark.parametrize("m", [wang_m(0.5, 2.0, 0.04), st_petersburg_m(0.5)], ids=["wang", "st_petersburg"])
def test_cdf_routes_agree_in_overlap(m):
    law = SemistableLaw(m, 1.0)
    x = np.array([60.0, 100.0, 300.0, 500.0])
    gp = cdf(law, x)
    lat = cdf(law, x, QuadratureConfig(direct_max=50.0))
    assert gp.route == "gil-pelaez" and lat.route == "lattice-fft"
    assert np.max(np.abs(gp.value - lat.value)) <= 1e-6
