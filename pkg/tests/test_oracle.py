import numpy as np
import pytest

from warpcurve import oracle
from warpcurve.errors import DomainError, HypothesisError
from warpcurve.geometry import FlatTorus, GridFunction, WarpingFunction
from warpcurve.problem import (CoefficientFamily, CoefficientTerm, PhiFunction,
                               ProblemSpec, residual)


def test_brute_sigma_known_values():
    assert oracle.brute_sigma([1.0, 2.0, 3.0], 3) == 6.0
    assert oracle.brute_sigma([1.0, 1.0, 1.0, 1.0], 2) == 6.0
    assert oracle.brute_sigma([1.0, 2.0, 3.0], 0) == 1.0


def test_brute_sigma_guards():
    with pytest.raises(DomainError):
        oracle.brute_sigma(np.ones(13), 2)
    with pytest.raises(DomainError):
        oracle.brute_sigma(np.ones(3), 4)


def test_radial_root_hyperbolic():
    p = oracle.RadialProblem(WarpingFunction("hyperbolic", 1.0), 3, 2,
                             (6.0, 1.0), 1.0, 1.6)
    root = oracle.radial_root(p)
    # 3 cosh^2 u - 3 cosh u - 6 = 0 has cosh u = 2
    assert abs(root - np.arccosh(2.0)) < 1e-10
    assert abs(p.scalar_equation(root)) <= 1e-12


def test_radial_root_power_warping():
    # f = t^2: 12 u^2 - 6 u - 3 = 0 inside (0.5, 1.0)
    p = oracle.RadialProblem(WarpingFunction("power", 2.0), 3, 2,
                             (3.0, 1.0), 0.5, 1.0)
    root = oracle.radial_root(p)
    expected = (6.0 + np.sqrt(180.0)) / 24.0
    assert abs(root - expected) < 1e-10


def test_radial_root_degenerate_euclidean():
    # f = t makes the scalar equation u-independent: no bracketing sign change
    p = oracle.RadialProblem(WarpingFunction("euclidean"), 3, 2,
                             (1.0, 1.0), 1.0, 1.6)
    with pytest.raises(HypothesisError):
        oracle.radial_root(p)


def test_radial_root_consistency_with_residual():
    p = oracle.RadialProblem(WarpingFunction("hyperbolic", 1.0), 3, 2,
                             (6.0, 1.0), 1.0, 1.6)
    root = oracle.radial_root(p)
    grid = FlatTorus((6, 6, 6))
    coeffs = CoefficientFamily([CoefficientTerm(6.0), CoefficientTerm(1.0)], 2)
    spec = ProblemSpec(grid=grid, warping=p.warping, k=2, coeffs=coeffs,
                       phi=PhiFunction(1.3), r1=1.0, r2=1.6)
    u = GridFunction.constant(root, grid)
    assert np.abs(residual(u, 1.0, spec).values).max() <= 1e-10


def make_spec():
    grid = FlatTorus((6, 6, 6))
    coeffs = CoefficientFamily([CoefficientTerm(6.0), CoefficientTerm(1.0)], 2)
    return ProblemSpec(grid=grid, warping=WarpingFunction("hyperbolic", 1.0),
                       k=2, coeffs=coeffs, phi=PhiFunction(1.3),
                       r1=1.0, r2=1.6)


def test_fd_directional_zero_direction():
    spec = make_spec()
    u = GridFunction.constant(1.3, spec.grid)
    d = GridFunction.constant(0.0, spec.grid)
    assert np.all(oracle.fd_directional(u, d, 0.5, spec).values == 0.0)


def test_fd_directional_constant_direction_matches_calculus():
    spec = make_spec()
    c = 1.3
    u = GridFunction.constant(c, spec.grid)
    d = GridFunction.constant(1.0, spec.grid)
    got = oracle.fd_directional(u, d, 0.0, spec).values
    # d/dc of ratio_e * (f'/f) (1 - phi(c)) at constant leaves
    h = 1e-7
    def F(cv):
        f, fp, _ = np.sinh(cv), np.cosh(cv), np.sinh(cv)
        return spec.ratio_e * fp / f * (1.0 - spec.phi(cv))
    expected = (F(c + h) - F(c - h)) / (2 * h)
    np.testing.assert_allclose(got, expected, rtol=1e-4)
