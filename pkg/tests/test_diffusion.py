"""Diffusion admissibility, entropy density, regularization, criticality."""
import math

import numpy as np
import pytest
from scipy import integrate

from aggdiff import diffusion as D

SPECS = [D.PowerLaw(2.0), D.PowerLaw(4 / 3), D.PowerLaw(1.1), D.PowerLaw(3.0, 0.5), D.SaturatedLinear()]


def _phi_oracle(spec, z):
    """Nested scipy quadrature: Phi(z) = int_0^z h, h(s) = int_1^s A'(t)/t dt."""
    g = lambda t: float(spec.dA(t)) / t
    h = lambda s: integrate.quad(g, 1.0, s, epsabs=0, epsrel=1e-12, limit=200)[0]
    return integrate.quad(h, 0.0, z, epsabs=0, epsrel=1e-11, limit=200)[0]


def test_admissibility_examples():
    assert D.check_admissible_diffusion(D.PowerLaw(2.0)).overall
    rep = D.check_admissible_diffusion(D.PowerLaw(1.0))
    assert rep.d1 and not rep.d3 and not rep.overall
    assert D.check_admissible_diffusion(D.SaturatedLinear()).overall


def test_saturated_linear_d3_by_quadrature():
    # oracle: A'(z)/z = (z+2)/(1+z)^2 is integrable on (0,1), value 1/2 + ln 2
    val = integrate.quad(lambda z: (z + 2) / (1 + z) ** 2, 0, 1)[0]
    assert val == pytest.approx(0.5 + math.log(2), rel=1e-12)
    assert D.check_admissible_diffusion(D.SaturatedLinear()).d3


@pytest.mark.parametrize("m", [4 / 3, 1.5, 2.0, 3.0])
def test_entropy_matches_analytic(m):
    phi = D.entropy_density(D.PowerLaw(m))
    z = np.geomspace(1e-3, 1e3, 1001)
    ref = (z ** m - m * z) / (m - 1)
    assert np.all(np.abs(phi(z) - ref) <= 1e-8 * np.abs(ref))


def test_entropy_examples():
    phi = D.entropy_density(D.PowerLaw(2.0))
    assert abs(float(phi(np.array(2.0)))) < 1e-12
    for spec in SPECS:
        p = D.entropy_density(spec)
        assert float(p(np.array(0.0))) == 0.0
        assert abs(float(p.h(np.array(1.0)))) < 1e-14
    for m in (1.1, 4 / 3, 2.0, 3.0):
        assert float(D.entropy_density(D.PowerLaw(m))(np.array(1.0))) == pytest.approx(-1.0, rel=1e-12)


@pytest.mark.parametrize("spec", [D.SaturatedLinear(), D.PowerLaw(1.7, 2.5)])
def test_entropy_against_nested_quadrature(spec):
    phi = D.entropy_density(spec)
    for z in (0.01, 0.5, 3.0, 40.0):
        assert float(phi(np.array(z))) == pytest.approx(_phi_oracle(spec, z), rel=1e-8, abs=1e-12)


def test_entropy_refuses_linear_at_vacuum():
    for spec in (D.PowerLaw(1.0), D.PowerPlusLinear(2.0, 1.0), D.PowerPlusLinear(1.5, 0.5)):
        assert not D.check_admissible_diffusion(spec).d3
        with pytest.raises(D.DiffusionError):
            D.entropy_density(spec)


@pytest.mark.parametrize("spec", SPECS)
def test_convexity_and_second_derivative(spec):
    phi = D.entropy_density(spec)
    z = np.geomspace(1e-2, 1e3, 400)
    v = phi(z)
    # second divided differences on a non-uniform grid
    d1 = np.diff(v) / np.diff(z)
    assert np.all(np.diff(d1) > 0)
    zz = np.geomspace(0.1, 1e3, 50)
    hh = 1e-4 * zz
    fd = (phi.h(zz + hh) - phi.h(zz - hh)) / (2 * hh)
    assert np.allclose(fd, spec.dA(zz) / zz, rtol=1e-6)


def test_regularize_sandwich():
    a = D.regularize(D.PowerLaw(2.0), 0.1)
    assert 2.1 <= float(a.dA(1.0)) <= 2.2
    z = np.geomspace(1e-6, 1e6, 10_000)
    for spec in SPECS:
        for eps in (1e-3, 0.1, 1.0):
            r = D.regularize(spec, eps)
            base = spec.dA(z)
            diff = r.dA(z) - base
            ulp = 1e-15 * (np.abs(base) + eps)  # rounding of the subtraction
            assert np.all(diff >= eps - ulp) and np.all(diff <= 2 * eps + ulp)
    with pytest.raises(D.DiffusionError):
        D.regularize(D.PowerLaw(2.0), 0.0)


def test_criticality_examples():
    ms = 4 / 3
    assert D.classify_criticality(D.PowerLaw(2.0), ms).kind == "subcritical"
    c = D.classify_criticality(D.PowerLaw(ms), ms)
    assert c.kind == "critical" and c.ell == pytest.approx(4 / 3, rel=1e-12)
    assert D.classify_criticality(D.PowerLaw(1.1), ms).kind == "supercritical"
    assert D.classify_criticality(D.SaturatedLinear(), 1.0).kind == "critical"


def test_class_independent_of_coefficient():
    for m in (1.1, 4 / 3, 2.0):
        assert D.classify_criticality(D.PowerLaw(m), 4 / 3).kind == \
            D.classify_criticality(D.PowerLaw(m, 5.0), 4 / 3).kind


def test_oscillatory_tail_indeterminate():
    z = np.geomspace(1e-4, 1e9, 2000)
    A = z ** (4 / 3) * (1 + 0.5 * np.sin(3 * np.log(z)))
    spec = D.Custom(z, A)
    with pytest.raises(D.IndeterminateError):
        D.classify_criticality(spec, 4 / 3)


def test_entropy_growth_limit_examples():
    ms = 4 / 3
    assert D.entropy_growth_limit(D.entropy_density(D.PowerLaw(ms)), ms) == pytest.approx(1 / (ms - 1), rel=1e-6)
    lin = D.entropy_density(D.PowerLaw(1.0), strict=False)
    assert D.entropy_growth_limit(lin, 1.0) == pytest.approx(1.0, rel=1e-6)
    assert D.entropy_growth_limit(D.entropy_density(D.PowerLaw(3.0)), ms) == math.inf


@pytest.mark.parametrize("abar", [1.0, 2.0])
def test_growth_limit_consistent_with_abar(abar):
    ms = 4 / 3
    L = D.entropy_growth_limit(D.entropy_density(D.PowerLaw(ms, abar)), ms)
    assert L == pytest.approx(abar / (ms - 1), rel=1e-6)
