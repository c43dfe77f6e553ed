import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from radialvp.structfn import (
    ConvergenceError,
    DomainError,
    G_large,
    G_small,
    H_large,
    eval_G,
    eval_G_offset,
    eval_H,
    eval_H_minus_one,
    eval_H_prime,
    eval_H_second,
    radial_action_factor,
    solve_w,
)

G2 = np.sqrt(2.0) + np.log(1.0 + np.sqrt(2.0))


def test_G_reference_values():
    assert eval_G(1.0) == 0.0
    assert eval_G(2.0) == pytest.approx(2.2955871493926382, rel=1e-15)
    assert eval_G(2.0) == pytest.approx(G2, rel=1e-15)
    hbar = 1e-6
    assert eval_G(1.0 + hbar) == pytest.approx(2.0 * np.sqrt(hbar), rel=1e-5)


def test_H_reference_values():
    assert eval_H(0.0) == 1.0
    assert eval_H(G2) == pytest.approx(2.0, rel=1e-14)
    expected = 100 - 0.5 * np.log(100) - np.log(2) + 0.5 + 0.25 * np.log(100) / 100
    assert abs(eval_H(100.0) - expected) < 0.02


def test_H_derivatives_reference_values():
    assert eval_H_prime(0.0) == 0.0
    assert eval_H_second(0.0) == 0.5
    assert eval_H_prime(G2) == pytest.approx(np.sqrt(0.5), rel=1e-13)


def test_scalar_in_scalar_out():
    assert isinstance(eval_G(3.0), float)
    assert isinstance(eval_H(3.0), float)
    assert eval_H(np.array([0.0, 1.0])).shape == (2,)


@pytest.mark.parametrize("bad", [0.999, -1.0, np.nan])
def test_G_domain(bad):
    with pytest.raises(DomainError):
        eval_G(bad)


@pytest.mark.parametrize("fn", [eval_H, eval_H_prime, eval_H_second, eval_H_minus_one])
def test_H_domain(fn):
    with pytest.raises(DomainError):
        fn(-1e-12)


def test_domain_error_is_value_error():
    assert issubclass(DomainError, ValueError)
    assert issubclass(ConvergenceError, RuntimeError)


def test_bounds_on_grid():
    s = np.concatenate([[1.0], np.logspace(-12, 6, 5000) + 1.0])
    G = eval_G(s)
    assert np.all(s - 1.0 <= G)
    assert np.all(G <= s + np.log(2.0 * np.sqrt(s)))
    assert np.all(s + np.log(2.0 * np.sqrt(s)) <= 2.0 * s)
    x = np.concatenate([[0.0], np.logspace(-12, 6, 5000)])
    H = eval_H(x)
    assert np.all(x / 2.0 <= H)
    assert np.all(H <= x + 1.0)


def test_monotone_on_grid():
    s = 1.0 + np.logspace(-10, 6, 4000)
    assert np.all(np.diff(eval_G(s)) > 0)
    x = np.logspace(-5, 6, 4000)
    assert np.all(np.diff(eval_H(x)) > 0)
    # below that H rounds to 1; H - 1 keeps the ordering
    x = np.logspace(-14, -5, 2000)
    assert np.all(np.diff(eval_H_minus_one(x)) > 0)


def test_inverse_residuals():
    x = np.concatenate([[0.0], np.logspace(-14, 6, 20000)])
    back = eval_G_offset(eval_H_minus_one(x))
    assert np.all(np.abs(back - x) <= 1e-12 * np.maximum(1.0, x))
    x = np.logspace(-3, 6, 20000)
    assert np.all(np.abs(eval_G(eval_H(x)) - x) <= 1e-12 * np.maximum(1.0, x))
    s = 1.0 + np.logspace(-14, 6, 20000)
    assert np.allclose(eval_H(eval_G(s)), s, rtol=1e-12, atol=0)


def test_H_minus_one_is_accurate_near_zero():
    x = np.logspace(-12, -4, 50)
    # H - 1 = x^2/4 - x^4/48 + ... from G(1+u) = 2 sqrt(u) + u^(3/2)/3 + ...
    assert np.allclose(eval_H_minus_one(x), x**2 / 4 - x**4 / 48, rtol=1e-10)


def test_H_prime_matches_finite_differences():
    x = np.logspace(-3, 5, 200)
    h = 1e-4 * x
    fd = (eval_H(x + h) - eval_H(x - h)) / (2 * h)
    assert np.allclose(eval_H_prime(x), fd, rtol=1e-6)


def test_H_second_matches_finite_differences():
    x = np.logspace(-2, 4, 100)
    h = 1e-3 * x
    fd = (eval_H_prime(x + h) - eval_H_prime(x - h)) / (2 * h)
    assert np.allclose(eval_H_second(x), fd, rtol=1e-5)


def test_H_prime_range_and_lower_bound():
    x = np.concatenate([[0.0], np.logspace(-8, 6, 3000)])
    hp = eval_H_prime(x)
    assert np.all((hp >= 0.0) & (hp <= 1.0))
    assert np.all(hp >= 1.0 - 1.0 / eval_H(x) - 1e-15)


def test_series_and_closed_form_agree_in_overlap():
    # the periapsis series is used below 1e-8; both paths must agree around it
    u = np.logspace(-11, -6, 40)
    closed = np.sqrt(u * (1 + u)) + np.arcsinh(np.sqrt(u))
    assert np.allclose(eval_G(1.0 + u), closed, rtol=1e-8)
    exact = 2 * np.sqrt(u) + u**1.5 / 3 - u**2.5 / 20
    assert np.allclose(eval_G(1.0 + u), exact, rtol=1e-14)


def test_offset_form_matches_G():
    s = 1.0 + np.logspace(-12, 5, 500)
    assert np.allclose(eval_G_offset(s - 1.0), eval_G(s), rtol=1e-15)
    with pytest.raises(DomainError):
        eval_G_offset(-1e-300)


def test_G_small_expansion_order():
    hbar = np.logspace(-8, -2, 300)
    err = np.abs(eval_G(1.0 + hbar) - G_small(hbar))
    assert np.all(err <= 10 * hbar**1.5)


def test_H_large_expansion_order():
    x = np.logspace(np.log10(50), 6, 300)
    assert np.all(np.abs(eval_H(x) - H_large(x)) <= 5.0 / x)
    s = np.logspace(np.log10(50), 6, 300)
    assert np.all(np.abs(eval_G(s) - G_large(s)) <= 1.0 / s)


def test_radial_action_factor_against_quadrature():
    # x H'(x) - H(x) = -1 + 1/2 int_0^x s / H(s)^2 ds
    for x in [0.0, 1e-3, 0.7, 3.0, 25.0, 400.0]:
        integral, _ = quad(lambda s: s / eval_H(s) ** 2, 0.0, x, epsabs=1e-14, epsrel=1e-13, limit=200)
        w = solve_w(x)
        assert radial_action_factor(w) == pytest.approx(-1.0 + 0.5 * integral, rel=1e-10, abs=1e-12)


def test_H_solves_its_ode():
    # H'' = 1 / (2 H^2) together with H(0) = 1, H'(0) = 0
    x = np.linspace(0.05, 30, 200)
    h = 1e-3
    fd2 = (eval_H(x + h) - 2 * eval_H(x) + eval_H(x - h)) / h**2
    assert np.allclose(fd2, 0.5 / eval_H(x) ** 2, rtol=1e-5)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=0.0, max_value=1e8, allow_nan=False))
def test_property_inverse_pair(x):
    H = eval_H(x)
    assert abs(eval_G_offset(eval_H_minus_one(x)) - x) <= 1e-12 * max(1.0, x)
    if x >= 1e-3:
        assert abs(eval_G(H) - x) <= 1e-12 * max(1.0, x)
    assert x / 2 <= H <= x + 1


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=1.0, max_value=1e8, allow_nan=False))
def test_property_G_bounds(s):
    G = eval_G(s)
    assert s - 1 <= G <= 2 * s
    assert eval_H(G) == pytest.approx(s, rel=1e-12)
