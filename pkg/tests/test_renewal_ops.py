import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from semistable_dk.semistable_core import DomainError, constant_m, st_petersburg_m, wang_m
from semistable_dk.renewal_ops import (
    HorizonError,
    LogPeriodicP,
    laplace_F,
    op_A,
    op_B,
    operator_karamata_gap,
    q0_of_M,
    renewal_scaling_p,
    renewal_sequence,
    safe_z_grid,
    transfer_matrix,
    verify_A_alpha_p,
)
from semistable_dk.tail_models import fibonacci, pareto, st_petersburg, wang_continuous

WANG = wang_continuous(0.5)


def _delta(k: int, N: int = 10) -> np.ndarray:
    f = np.zeros(N + 1)
    f[k] = 1.0
    return f


# --- renewal sequence ------------------------------------------------------


def test_unit_step_gives_constant_sequence():
    assert np.array_equal(renewal_sequence(_delta(1), 200).u, np.ones(201))
    assert np.allclose(renewal_sequence(_delta(1), 200, "fft").u, 1.0, rtol=0, atol=1e-12)


def test_period_two_alternates():
    u = renewal_sequence(_delta(2), 300, "fft").u
    assert np.allclose(u, (np.arange(301) % 2 == 0).astype(float), atol=1e-15)
    assert np.array_equal(renewal_sequence(_delta(2), 300).u, (np.arange(301) % 2 == 0).astype(float))


def test_two_convolution_routes_agree_on_wang():
    a = renewal_sequence(WANG, 5000, "direct").u
    b = renewal_sequence(WANG, 5000, "fft").u
    assert np.max(np.abs(a - b)) <= 1e-12
    assert a[0] == 1.0 and np.all((a >= 0) & (a <= 1))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.integers(1, 700))
def test_recursion_identity_and_route_agreement(w, N):
    w = np.array(w)
    if w.sum() == 0:
        w[0] = 1.0
    f = np.concatenate([[0.0], w / w.sum()])
    r = renewal_sequence(f, N)
    u = r.u
    assert u[0] == 1.0
    for n in (1, N // 2, N):
        if n >= 1:
            assert u[n] == pytest.approx(float(np.dot(r.f[1:n + 1], u[n - 1::-1])), abs=1e-13)
    assert np.all(u >= -1e-15) and np.all(u <= 1 + 1e-12)
    assert np.max(np.abs(renewal_sequence(f, N, "fft").u - u)) <= 1e-12


def test_renewal_sequence_input_checks():
    with pytest.raises(DomainError):
        renewal_sequence([0.5, 0.5], 5)
    with pytest.raises(DomainError):
        renewal_sequence([0.0, -0.1, 1.1], 5)
    with pytest.raises(DomainError):
        renewal_sequence([0.0, 0.7, 0.7], 5)
    with pytest.raises(DomainError):
        renewal_sequence(_delta(1), 0)
    with pytest.raises(ValueError):
        renewal_sequence(_delta(1), 5, "bogus")


# --- B and A transforms -----------------------------------------------------


ONE = constant_m(0.5, 2.0, 1.0)


@pytest.mark.parametrize("rho", [0.3, 0.5, 1.0, 2.0])
def test_B_of_constant(rho):
    x = np.geomspace(1e-3, 1e3, 13)
    assert np.allclose(op_B(ONE, rho, x), 1.0 / rho, rtol=1e-13)


def test_B_smooths_the_st_petersburg_jumps():
    m = st_petersburg_m(0.5)
    for j in (1.0, 4.0, 16.0):
        lo, hi = op_B(m, 0.5, np.nextafter(j, 0)), op_B(m, 0.5, j)
        assert abs(lo - hi) <= 1e-10
        # and the amplitude itself really jumps there
        assert abs(float(m(np.nextafter(j, 0))) - float(m(j))) > 0.1


@pytest.mark.parametrize("m", [wang_m(0.5), st_petersburg_m(0.5)], ids=["wang", "stp"])
def test_B_is_log_periodic_with_the_same_period(m):
    x = np.geomspace(0.3, 30, 17)
    P = m.period
    assert np.allclose(op_B(m, 0.5, P * x), op_B(m, 0.5, x), rtol=1e-12)


def test_B_matches_direct_integral():
    from scipy.integrate import quad
    m, rho = wang_m(0.5), 0.5
    for x in (0.7, 3.0):
        # int_0^x y^(rho-1) M(y) dy; the part below 1e-12 is bounded by max M * 1e-12^rho / rho
        head, _ = quad(lambda y: y ** (rho - 1) * float(m(y)), 1e-12, x, limit=400, points=[1.0])
        assert op_B(m, rho, x) == pytest.approx(x ** -rho * head, rel=2e-6)


def test_B_rejects_bad_input():
    with pytest.raises(DomainError):
        op_B(ONE, 0.0, 1.0)
    with pytest.raises(DomainError):
        op_B(ONE, 0.5, -1.0)


@pytest.mark.parametrize("rho", [0.5, 1.0, 1.7])
def test_A_of_constant_is_gamma(rho):
    K = 3.0
    p = constant_m(0.5, 2.0, K)
    s = np.geomspace(1e-3, 1e2, 7)
    assert np.allclose(op_A(p, rho, s), K * gamma_fn(rho + 1), rtol=1e-12)


def test_A_rho_one_exact():
    assert op_A(ONE, 1.0, 0.37) == pytest.approx(1.0, abs=1e-13)


def test_AB_of_wang_positive_and_log_periodic():
    m = wang_m(0.5)
    q0 = q0_of_M(m, 0.5)
    s = np.geomspace(0.1, 1.0, 9)
    v = q0(s)
    assert np.all(v > 0)
    assert np.allclose(q0(s / m.period), v, rtol=1e-11)
    # the two transforms smooth M a lot, but q0 is not constant
    assert np.ptp(v) > 5e-5 * v.mean()


def test_q0_constant_amplitude():
    q0 = q0_of_M(constant_m(0.3, 2.0, 0.8), 0.3)
    assert np.allclose(q0(np.array([0.01, 0.5, 3.0])), 0.8 * gamma_fn(0.7), rtol=1e-12)
    assert q0_of_M(ONE, 0.5)(0.2) == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    with pytest.raises(DomainError):
        q0_of_M(ONE, 1.0)


def test_q0_matches_laplace_side_for_wang():
    q0 = q0_of_M(WANG.m, 0.5)
    for n in range(8, 13):
        s = 2.0 ** (-n / 0.5)
        lv = laplace_F(WANG, s)
        r = lv.value / (s**0.5 * q0(s))
        assert abs(r - 1) <= 0.05
        assert lv.error_bound < 1e-9 * lv.value


# --- Laplace side -----------------------------------------------------------


def test_laplace_unit_step():
    for s in (1e-3, 0.5, 4.0):
        assert float(laplace_F(_delta(1, 1), s)) == pytest.approx(-math.expm1(-s), rel=1e-15)
    with pytest.raises(DomainError):
        laplace_F(_delta(1, 1), 0.0)


@pytest.mark.parametrize("spec", [WANG, st_petersburg(0.5), fibonacci(0.7)], ids=["wang", "stp", "fib"])
def test_laplace_monotone_in_s(spec):
    s = np.geomspace(1e-5, 2, 12)
    v = np.array([laplace_F(spec, x).value for x in s])
    assert np.all(np.diff(v) > 0) and np.all((v > 0) & (v < 1))


def test_laplace_small_s_within_q0_range():
    q0 = q0_of_M(WANG.m, 0.5)
    band = q0(np.geomspace(1.0, 4.0, 65))
    for s in np.geomspace(1e-6, 1e-5, 5):
        r = laplace_F(WANG, s).value / s**0.5
        assert band.min() * 0.98 <= r <= band.max() * 1.02


# --- scaling of the renewal function -----------------------------------------


def test_constant_amplitude_classical_renewal_limit():
    a = 0.5
    useq = renewal_sequence(pareto(a, 1.0), 2**17, "fft")
    z = safe_z_grid(0.375, 8, a, 2.0)
    lp, rep = renewal_scaling_p(useq, a, 2.0, z, [7, 8])
    classical = 1.0 / (gamma_fn(1 - a) * gamma_fn(1 + a))
    assert np.max(np.abs(rep.p_hat[-1] / classical - 1)) <= 0.01
    # product identity in its closed-form case
    assert verify_A_alpha_p(LogPeriodicP(z, np.full(z.size, classical), a, 2.0), gamma_fn(1 - a),
                            [0.5, 1.0, 3.0]) <= 1e-12


def test_scaling_index_shift_equals_period_shift():
    useq = renewal_sequence(WANG, 20_000, "fft")
    z = safe_z_grid(0.4, 6, 0.5, 2.0)
    _, a = renewal_scaling_p(useq, 0.5, 2.0, z * 4.0, [5])
    _, b = renewal_scaling_p(useq, 0.5, 2.0, z, [6])
    assert np.allclose(a.p_hat, b.p_hat, rtol=1e-14)


def test_scaling_horizon_and_report(tmp_path):
    useq = renewal_sequence(WANG, 1000, "fft")
    with pytest.raises(HorizonError):
        renewal_scaling_p(useq, 0.5, 2.0, [0.99], [5])
    lp1, _ = renewal_scaling_p(useq, 0.5, 2.0, [0.9], [5])
    assert lp1 is None
    lp, rep = renewal_scaling_p(useq, 0.5, 2.0, safe_z_grid(0.4, 5, 0.5, 2.0), [3, 4])
    assert np.all(np.isnan(rep.delta_to_prev[0])) and np.all(rep.delta_to_prev[1] >= 0)
    assert isinstance(lp, LogPeriodicP)
    path = tmp_path / "s.csv"
    rep.to_csv(str(path))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["z", "n", "p_hat", "delta_to_prev_n"] and len(rows) == 11


def test_safe_grid_avoids_jumps():
    z = safe_z_grid(1.0, 16, 0.5, 2.0, jump_phases=[0.5 / 16 + 1e-4], guard=1e-3)
    ph = np.mod(np.log(z) / math.log(4.0), 1.0)
    assert np.min(np.abs(ph - (0.5 / 16 + 1e-4))) >= 1e-3 - 1e-12
    assert np.all(np.diff(z) > 0) and z[-1] < 4.0


def test_log_periodic_p_validation_and_monotonicity():
    z = np.array([1.0, 2.0, 3.0])
    p = LogPeriodicP(z, np.array([1.0, 0.9, 0.8]), 0.5, 2.0)
    assert p(4.0) == pytest.approx(1.0) and p(8.0) == pytest.approx(p(2.0))
    assert p.monotone_check() == 0.0
    bad = LogPeriodicP(z, np.array([1.0, 0.2, 0.8]), 0.5, 2.0)
    assert bad.monotone_check() > 0
    with pytest.raises(DomainError):
        LogPeriodicP(np.array([1.0, 5.0]), np.ones(2), 0.5, 2.0)
    with pytest.raises(DomainError):
        LogPeriodicP(z, np.array([1.0, 0.0, 1.0]), 0.5, 2.0)


# --- Markov shift -----------------------------------------------------------


def test_transfer_matrix_minimal_case():
    T = transfer_matrix(_delta(1, 1), 1)
    # state 1 is reachable only through tail mass, which is zero here
    assert T.matrix.toarray().tolist() == [[1.0, 0.0], [1.0, 0.0]]
    assert np.array_equal(T.readout(1), [1.0, 1.0])


@pytest.mark.parametrize("spec", [WANG, st_petersburg(0.5), fibonacci(0.7), pareto(0.5)],
                         ids=["wang", "stp", "fib", "pareto"])
def test_matrix_powers_reproduce_renewal_sequence(spec):
    K = 1500
    T = transfer_matrix(spec, K)
    assert np.max(np.abs(T.row_sums() - 1)) <= 1e-15
    u = renewal_sequence(spec, K).u
    assert np.max(np.abs(T.readout(K) - u)) <= 1e-12
    assert T.stationarity_residual() <= 1e-15


def test_matrix_rejects_empty_state_space():
    with pytest.raises(DomainError):
        transfer_matrix(WANG, 0)


def test_operator_sums_coincide_with_scalar_scaling():
    K = 5000
    T = transfer_matrix(WANG, K)
    useq = renewal_sequence(WANG, K)
    z = safe_z_grid(0.6, 8, 0.5, 2.0)
    _, scalar = renewal_scaling_p(useq, 0.5, 2.0, z, [3, 4, 5])
    kr = operator_karamata_gap(T, 0.5, 2.0, None, z, [3, 4, 5], scalar=scalar)
    assert kr.match_scalar <= 1e-12
    assert kr.min_partial_sum >= 1.0
    kr2 = operator_karamata_gap(useq, 0.5, 2.0, None, z, [3, 4, 5], scalar=scalar)
    assert kr2.match_scalar == 0.0
    with pytest.raises(HorizonError):
        operator_karamata_gap(T, 0.5, 2.0, None, z, [7])


def test_operator_sums_with_slowly_varying_weight():
    useq = renewal_sequence(WANG, 3000)
    z = safe_z_grid(0.6, 4, 0.5, 2.0)
    plain = operator_karamata_gap(useq, 0.5, 2.0, None, z, [4])
    ell = operator_karamata_gap(useq, 0.5, 2.0, None, z, [4], ell=lambda x: np.log(x))
    x = np.floor(4.0**4 * z)
    assert np.allclose(ell.scaling.p_hat / plain.scaling.p_hat, np.log(4.0**4 * z), rtol=1e-14)
    assert np.all(x < 3000)
