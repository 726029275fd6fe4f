import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latlab.dani_transform import (
    PsiFunction,
    cauchy_tail_converged,
    dani_forward,
    dani_inverse,
    dani_residual,
    integral_probe,
    quasi_increasing_check,
    rate_from_callable,
    rate_integral_probe,
)
from latlab.errors import DomainError, ValidationError

MN = [(1, 1), (2, 1), (1, 2), (2, 3)]


@pytest.mark.parametrize("m,n", MN)
@pytest.mark.parametrize("eps", [0.5, 0.1, 1.0])
def test_eps_over_x_gives_constant_rate(m, n, eps):
    r = dani_forward(PsiFunction.power_log(c=eps, a=1.0), m, n)
    ts = np.linspace(r.t0, r.t0 + 30, 50)
    assert np.max(np.abs(r(ts) - math.log(1 / eps) / (m + n))) <= 1e-9


@pytest.mark.parametrize("m,n", MN)
@pytest.mark.parametrize("a", [0.5, 2.0, 3.0])
def test_pure_power_closed_form(m, n, a):
    r = dani_forward(PsiFunction.power_log(a=a), m, n)
    ts = np.linspace(0.0, 25.0, 40)
    assert np.allclose(r(ts), (a - 1) * ts / (m + a * n), atol=1e-9)


def test_cube_example_details():
    r = dani_forward(PsiFunction.power_log(a=3.0), 1, 1)
    ts = np.array([0.0, 1.0, 4.0])
    assert np.allclose(r(ts), ts / 2)
    assert np.allclose(r.lam(ts), ts / 2)
    assert np.allclose(r.L(ts), 1.5 * ts)


def test_forward_errors():
    with pytest.raises(ValidationError):
        PsiFunction.power_log(a=-1.0)
    bumpy = PsiFunction.from_callable(lambda x: 2.0 + np.sin(x), 1.0)
    with pytest.raises(ValidationError):
        dani_forward(bumpy, 1, 1)
    r = dani_forward(PsiFunction.power_log(c=1, a=1, q=2, x0=2), 1, 1)
    with pytest.raises(DomainError):
        r(r.t0 - 1.0)


def test_parse_strings():
    psi = PsiFunction.parse("power_log:c=1,a=1,q=2,x0=2")
    assert psi.params == {"c": 1.0, "a": 1.0, "q": 2.0, "x0": 2.0}
    assert psi(10.0) == pytest.approx(1 / (10 * math.log(10) ** 2))
    assert psi(1.5) == psi(2.0)
    with pytest.raises(ValidationError):
        PsiFunction.parse("gauss:s=1")


FAMILY = [(a, q) for a in (1.0, 1.5, 3.0) for q in (0.0, 1.0)]


@pytest.mark.parametrize("a,q", FAMILY)
@pytest.mark.parametrize("m,n", [(1, 1), (2, 1)])
def test_residual_and_monotone_lambda(a, q, m, n):
    psi = PsiFunction.power_log(c=0.7, a=a, q=q, x0=2.0)
    r = dani_forward(psi, m, n)
    ts = np.sort(r.t0 + np.random.default_rng(0).uniform(0, 40, 1000))
    assert dani_residual(psi, r, ts).max() <= 1e-8
    assert np.all(np.diff(r.lam(ts)) > 0)
    assert np.all(np.diff(r.L(ts)) >= 0)
    assert quasi_increasing_check(r, 1.0 / m + 1e-9, ts)


@pytest.mark.parametrize("a,q", FAMILY)
def test_round_trips(a, q):
    psi = PsiFunction.power_log(c=0.7, a=a, q=q, x0=2.0)
    r = dani_forward(psi, 1, 1)
    psi2 = dani_inverse(r, 1, 1, t_max=r.t0 + 40)
    lam = np.linspace(psi.lam0, psi.lam0 + 15, 3000)
    x = np.exp(lam)
    assert not psi2.extrapolated(x).any()
    assert np.max(np.abs(psi2(x) / psi(x) - 1)) <= 1e-6
    r2 = dani_forward(psi2, 1, 1)
    ts = np.linspace(r.t0, r.t0 + 30, 500)
    assert np.max(np.abs(r2(ts) - r(ts))) <= 1e-6


def test_inverse_of_constant_and_linear_rates():
    rho0 = 0.4
    r = rate_from_callable(lambda t: np.full_like(t, rho0), 0.0, 1, 1)
    psi = dani_inverse(r, 1, 1, t_max=30)
    assert psi.x0 == pytest.approx(math.exp(-rho0))
    x = np.geomspace(2, 1e10, 50)
    assert np.allclose(psi(x), math.exp(-2 * rho0) / x, rtol=1e-12)
    half = rate_from_callable(lambda t: t / 2, 0.0, 1, 1)
    cube = dani_inverse(half, 1, 1, t_max=30)
    assert np.allclose(cube(x[x < 1e6]), x[x < 1e6] ** -3.0, rtol=1e-10)


def test_inverse_rejects_bad_rates():
    steep = rate_from_callable(lambda t: 2 * t, 0.0, 1, 1)   # t - r decreasing
    with pytest.raises(ValidationError):
        dani_inverse(steep, 1, 1, t_max=5)
    falling = rate_from_callable(lambda t: -2 * t, 0.0, 1, 1)   # t + r decreasing
    with pytest.raises(ValidationError):
        dani_inverse(falling, 1, 1, t_max=5)


def test_extrapolation_is_flagged():
    r = dani_forward(PsiFunction.power_log(a=2.0), 1, 1)
    psi = dani_inverse(r, 1, 1, t_max=10)
    far = np.exp(50.0)
    assert psi.extrapolated(far) and not psi.extrapolated(2.0)
    assert psi(far) == pytest.approx(far**-2.0, rel=1e-9)


def test_integral_probes_closed_forms():
    inv_sq = PsiFunction.power_log(a=2.0)
    assert integral_probe(inv_sq, 0, 1e6) == pytest.approx(1 - 1e-6, rel=1e-8)
    eps = 0.3
    flat = PsiFunction.power_log(c=eps, a=1.0)
    for X in (1e3, 1e6):
        assert integral_probe(flat, 0, X) == pytest.approx(eps * math.log(X), rel=1e-8)
    r = dani_forward(flat, 1, 1)
    I = [rate_integral_probe(r, 0, 1, 1, T) for T in (10.0, 20.0, 40.0)]
    assert np.allclose(np.diff(I) / np.array([10.0, 20.0]), eps, rtol=1e-8)


def test_joint_convergence_log_squared():
    psi = PsiFunction.power_log(a=1.0, q=2.0, x0=2.0)
    limit = 1 / math.log(2)
    I1 = [integral_probe(psi, 0, log_X=L) for L in (10.0, 1e3, 1e6)]
    assert I1[-1] == pytest.approx(limit - 1e-6, rel=1e-7)
    assert cauchy_tail_converged(lambda L: integral_probe(psi, 0, log_X=L), 1e7)
    r = dani_forward(psi, 1, 1)
    I2 = [rate_integral_probe(r, 0, 1, 1, T) for T in (1e2, 1e4, 1e6)]
    assert I2[0] < I2[1] < I2[2] < 2 * I2[0]
    assert cauchy_tail_converged(lambda T: rate_integral_probe(r, 0, 1, 1, T), 2e6)
    assert not cauchy_tail_converged(lambda T: rate_integral_probe(dani_forward(PsiFunction.power_log(c=0.5), 1, 1), 0, 1, 1, T), 1e3)


def test_quasi_increasing_examples():
    grid = np.linspace(0, 10, 201)
    assert quasi_increasing_check(lambda t: np.full_like(t, 3.0), 1e-6, grid)
    assert quasi_increasing_check(lambda t: t / 2, 1.0, grid)
    assert not quasi_increasing_check(lambda t: -t, 0.5, grid)


def test_time_of_lambda_inverts_lambda():
    r = dani_forward(PsiFunction.power_log(c=1, a=1, q=2, x0=2), 2, 1)
    ts = np.linspace(r.t0, r.t0 + 20, 30)
    assert np.allclose(r.time_of_lambda(r.lam(ts)), ts, atol=1e-9)
    generic = rate_from_callable(lambda t: np.log1p(t), 0.0, 1, 1)
    assert np.allclose(generic.time_of_lambda(generic.lam(ts)), ts, atol=1e-9)


def test_csv_export():
    r = dani_forward(PsiFunction.power_log(a=3.0), 1, 1)
    buf = io.StringIO()
    r.to_csv([0.0, 2.0], buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,r,lambda,L"
    assert [float(x) for x in lines[2].split(",")] == pytest.approx([2.0, 1.0, 1.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 4.0), st.floats(0.0, 3.0), st.integers(1, 3), st.integers(1, 3))
def test_forward_properties(c, a, q, m, n):
    psi = PsiFunction.power_log(c=c, a=a, q=q, x0=3.0)
    r = dani_forward(psi, m, n)
    ts = r.t0 + np.linspace(0.0, 25.0, 60)
    assert dani_residual(psi, r, ts).max() <= 1e-8
    assert np.all(np.diff(r.lam(ts)) > 0)
    assert quasi_increasing_check(r, 1.0 / m + 1e-9, ts)
