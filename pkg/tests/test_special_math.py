import math

import numpy as np
import pytest

from datatypes import QuadratureSettings
from errors import DomainError, InvalidSpecError, QuadratureError
from special_math import (
    SeededRng,
    draw_gamma,
    draw_standard_normal,
    draw_student_t,
    draw_uniform,
    integrate,
    log_gamma,
    standard_normal_logpdf,
    student_t_cdf,
    student_t_logpdf,
    student_t_quantile,
)


def test_log_gamma_reference_values():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-13)
    assert log_gamma(0.5) == pytest.approx(0.5723649429247001, rel=1e-13)


def test_log_gamma_recurrence():
    x = np.linspace(0.5, 50.0, 200)
    np.testing.assert_allclose(log_gamma(x + 1.0), np.log(x) + log_gamma(x), atol=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_log_gamma_domain(bad):
    with pytest.raises(DomainError):
        log_gamma(bad)


def test_student_t_logpdf_values():
    assert student_t_logpdf(0.0, 1.0) == pytest.approx(math.log(1.0 / math.pi), rel=1e-13)
    assert student_t_logpdf(0.0, 5.0) == pytest.approx(math.log(0.3796067), abs=1e-6)


def test_student_t_logpdf_normal_limit():
    x = np.linspace(-4.0, 4.0, 81)
    np.testing.assert_allclose(student_t_logpdf(x, 1e8), standard_normal_logpdf(x), atol=1e-6)
    assert student_t_logpdf(1.3, math.inf) == standard_normal_logpdf(1.3)


def test_student_t_logpdf_domain():
    with pytest.raises(DomainError):
        student_t_logpdf(0.0, 0.0)


def test_student_t_cdf_values():
    assert student_t_cdf(0.0, 7.0) == 0.5
    assert student_t_cdf(math.inf, 3.0) == 1.0
    assert student_t_cdf(2.015048, 5.0) == pytest.approx(0.95, abs=1e-6)
    with pytest.raises(DomainError):
        student_t_cdf(0.0, -2.0)


def test_student_t_cdf_is_monotone():
    x = np.linspace(-10.0, 10.0, 401)
    assert np.all(np.diff(student_t_cdf(x, 3.0)) > 0)


@pytest.mark.parametrize("nu", [2.5, 3.0, 5.0, 10.0, 50.0])
@pytest.mark.parametrize("x", [-10.0, -1.5, 0.3, 4.0, 10.0])
def test_student_t_cdf_matches_quadrature(nu, x):
    expected = integrate(lambda t: math.exp(student_t_logpdf(t, nu)), -math.inf, x)
    assert student_t_cdf(x, nu) == pytest.approx(expected, abs=1e-8)


def test_student_t_quantile_inverts_cdf():
    p = np.array([0.01, 0.2, 0.5, 0.9, 0.999])
    np.testing.assert_allclose(student_t_cdf(student_t_quantile(p, 4.0), 4.0), p, atol=1e-12)
    with pytest.raises(DomainError):
        student_t_quantile(1.0, 4.0)


def test_integrate_reference_integrals():
    assert integrate(lambda x: math.exp(standard_normal_logpdf(x)), -math.inf, math.inf) == \
        pytest.approx(1.0, abs=1e-10)
    assert integrate(lambda x: x * math.exp(student_t_logpdf(x, 5.0)), -math.inf, math.inf,
                     breakpoints=[0.0]) == pytest.approx(0.0, abs=1e-10)
    assert integrate(lambda x: x * x * math.exp(student_t_logpdf(x, 5.0)), -math.inf, math.inf,
                     breakpoints=[0.0]) == pytest.approx(5.0 / 3.0, rel=1e-8)


def test_integrate_reversed_and_empty_ranges():
    assert integrate(lambda x: x, 1.0, 0.0) == pytest.approx(-0.5)
    assert integrate(lambda x: x, 2.0, 2.0) == 0.0


def test_integrate_raises_when_subdivisions_run_out():
    with pytest.raises(QuadratureError):
        integrate(lambda x: abs(math.sin(50.0 * x)), 0.0, 10.0, QuadratureSettings(max_subdivisions=1))


def test_quadrature_settings_validation():
    with pytest.raises(InvalidSpecError):
        QuadratureSettings(abs_tol=0.0)
    with pytest.raises(InvalidSpecError):
        QuadratureSettings(max_subdivisions=0)


def test_streams_are_reproducible_and_independent():
    a = draw_standard_normal(SeededRng(42, 7), 1000)
    b = draw_standard_normal(SeededRng(42, 7), 1000)
    c = draw_standard_normal(SeededRng(42, 8), 1000)
    d = draw_standard_normal(SeededRng(42, 7).child(0), 1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_seeded_rng_rejects_negative_seed():
    with pytest.raises(DomainError):
        SeededRng(-1)


def test_draw_moments():
    n = 1_000_000
    normal = draw_standard_normal(SeededRng(1), n)
    assert abs(np.mean(normal)) < 0.004

    t10 = draw_student_t(SeededRng(2), 10.0, n)
    # Var(X^2) = E X^4 - (E X^2)^2 = 6.25 - 1.5625 for t with 10 degrees of freedom
    assert abs(np.var(t10) - 1.25) < 4 * math.sqrt(4.6875 / n)

    g = draw_gamma(SeededRng(3), 2.0, 2.0, n)
    assert abs(np.mean(g) - 1.0) < 4 * math.sqrt(0.5 / n)

    u = draw_uniform(SeededRng(4), n)
    assert abs(np.mean(u) - 0.5) < 4 * math.sqrt(1.0 / 12.0 / n)


def test_draw_domain_errors():
    with pytest.raises(DomainError):
        draw_gamma(SeededRng(1), 0.0, 1.0, 5)
    with pytest.raises(DomainError):
        draw_student_t(SeededRng(1), -1.0, 5)
