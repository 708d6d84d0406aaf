"""Kernel evaluation, admissibility, singularity classification, m*."""
import math

import numpy as np
import pytest
from scipy import integrate

from aggdiff import kernel as K


def test_eval_closed_forms():
    assert K.eval_kernel(K.Newtonian(3), 2.0).k == pytest.approx(1 / (8 * math.pi), rel=1e-15)
    assert K.eval_kernel(K.Logarithmic(2, 1.0), 1.0).k == 0.0
    assert K.eval_kernel(K.PowerLaw(3, 1.0, 1.0), 2.0).k == pytest.approx(0.5, rel=1e-15)


def test_eval_derivatives_match_finite_differences():
    for spec in (K.Newtonian(3), K.Logarithmic(2), K.PowerLaw(4, 2.0, 1.5), K.Gaussian(3, 0.7)):
        r, h = 0.8, 1e-5
        v = K.eval_kernel(spec, np.array([r - h, r, r + h]))
        assert v.dk[1] == pytest.approx((v.k[2] - v.k[0]) / (2 * h), rel=1e-7)
        assert v.d2k[1] == pytest.approx((v.dk[2] - v.dk[0]) / (2 * h), rel=1e-6)


def test_eval_domain_errors():
    with pytest.raises(K.KernelError):
        K.eval_kernel(K.Newtonian(3), 0.0)
    tab = K.TabulatedRadial(3, np.geomspace(0.1, 1, 20), 1 / np.geomspace(0.1, 1, 20))
    with pytest.raises(K.KernelError):
        K.eval_kernel(tab, 2.0)


def test_tabulated_uses_monotone_interpolation():
    r = np.geomspace(1e-3, 2, 40)
    tab = K.TabulatedRadial(3, r, 1 / (4 * math.pi * r))
    rr = np.geomspace(2e-3, 1.9, 301)
    k = K.eval_kernel(tab, rr).k
    assert np.all(np.diff(k) <= 0)
    assert np.allclose(k, 1 / (4 * math.pi * rr), rtol=1e-3)


@pytest.mark.parametrize("spec", [K.Newtonian(3), K.Newtonian(4), K.Logarithmic(2), K.Gaussian(2),
                                  K.Gaussian(3), K.PowerLaw(3, 1.0, 0.5), K.PowerLaw(5, 2.0, 3.0),
                                  K.bessel_potential_table(3)])
def test_builtin_families_admissible(spec):
    for samples in (200, 400, 800):
        assert K.check_admissible(spec, K.ProbePlan(samples=samples)).overall


def test_r_minus_d_not_locally_integrable():
    # oracle: int_eps^1 r^{-d} r^{d-1} dr = ln(1/eps) grows without bound
    vals = [integrate.quad(lambda r: r ** -3 * r ** 2, eps, 1)[0] for eps in (1e-2, 1e-4, 1e-6)]
    assert vals[1] - vals[0] == pytest.approx(math.log(100), rel=1e-8)
    rep = K.check_admissible(K.PowerLaw(3, 1.0, 3.0))
    assert not rep.l1loc and not rep.overall


def test_increasing_table_fails_kn():
    r = np.linspace(0.01, 2, 50)
    rep = K.check_admissible(K.TabulatedRadial(3, r, r))
    assert not rep.radial_nonincreasing and not rep.overall


def test_report_is_deterministic():
    a = K.check_admissible(K.Newtonian(3))
    b = K.check_admissible(K.Newtonian(3))
    assert a.rows() == b.rows()


def test_singular_order_examples():
    s = K.singular_order(K.Newtonian(3))
    assert s.kind == "power"
    assert s.c == pytest.approx(1 / (4 * math.pi), rel=1e-6) and s.alpha == pytest.approx(1.0, abs=1e-6)
    s = K.singular_order(K.Logarithmic(2, 1 / (2 * math.pi)))
    assert s.kind == "logarithmic" and s.c == pytest.approx(1 / (2 * math.pi), rel=1e-6)
    assert K.singular_order(K.Gaussian(3, 1.0)).kind == "bounded"


def test_singular_order_unclassifiable():
    r = np.geomspace(1e-5, 1, 200)
    wiggle = K.TabulatedRadial(3, r, 2 + np.sin(40 * np.log(r)) * 0.5 - 1e-3 * np.log(r))
    with pytest.raises(K.KernelClassificationError):
        K.singular_order(wiggle, window=(1e-4, 1e-2))


def test_critical_exponent_examples():
    assert K.critical_exponent(K.Newtonian(3)) == 4 / 3
    assert K.critical_exponent(K.Newtonian(4)) == 3 / 2
    assert math.isclose(K.critical_exponent(K.Newtonian(3)), 2 - 2 / 3, rel_tol=1e-15)
    assert K.critical_exponent(K.Logarithmic(2)) == 1.0
    assert K.critical_exponent(K.Gaussian(2)) == 1.0
    assert K.critical_exponent(K.Gaussian(3)) == 1.0
    with pytest.raises(K.KernelError):
        K.critical_exponent(K.PowerLaw(3, 1.0, 2.5))


def test_critical_exponent_scale_invariant():
    r = np.geomspace(1e-6, 4, 400)
    base = K.TabulatedRadial(3, r, 1 / (4 * math.pi * r))
    m0 = K.critical_exponent(base)
    assert m0 == pytest.approx(4 / 3, abs=1e-6)
    for a, b in ((3.0, 1.0), (1.0, 2.0), (0.2, 0.5)):
        scaled = K.TabulatedRadial(3, r / b, a / (4 * math.pi * r))  # a k(b r) sampled at r/b
        assert K.critical_exponent(scaled) == pytest.approx(m0, abs=1e-9)


def test_mollified_kernel_is_bounded():
    m = K.mollify(K.Newtonian(3), 0.1, r_max=2.0)
    assert K.singular_order(m).kind == "bounded"
    r = np.array([0.5, 1.0, 1.5])
    assert np.allclose(K.eval_kernel(m, r).k, 1 / (4 * math.pi * r), rtol=1e-3)
