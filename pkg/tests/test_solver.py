import io
import json

import numpy as np
import pytest

from warpcurve import solver
from warpcurve.errors import ConfigError, ContinuationError
from warpcurve.geometry import FlatTorus, GridFunction, WarpingFunction
from warpcurve.oracle import RadialProblem, radial_root
from warpcurve.problem import (CoefficientFamily, CoefficientTerm, PhiFunction,
                               ProblemSpec, residual)


def hyperbolic_spec(resolution=(6, 6, 6), **kwargs):
    grid = FlatTorus(resolution)
    coeffs = CoefficientFamily([CoefficientTerm(6.0), CoefficientTerm(1.0)], 2)
    return ProblemSpec(grid=grid, warping=WarpingFunction("hyperbolic", 1.0),
                       k=2, coeffs=coeffs, phi=PhiFunction(1.3),
                       r1=1.0, r2=1.6, **kwargs)


def test_initial_solution_is_constant_pivot():
    spec = hyperbolic_spec()
    u0 = solver.initial_solution(spec)
    assert np.all(u0.values == spec.phi.pivot)
    assert np.abs(residual(u0, 0.0, spec).values).max() <= 1e-12


def test_newton_at_exact_root_returns_immediately():
    spec = hyperbolic_spec()
    root = radial_root(RadialProblem(spec.warping, 3, 2, (6.0, 1.0), 1.0, 1.6))
    u, stats = solver.newton_solve(GridFunction.constant(root, spec.grid), 1.0, spec)
    assert stats.iterations <= 1
    assert np.abs(u.values - root).max() <= 1e-10


def test_newton_converges_back_to_pivot():
    spec = hyperbolic_spec()
    pert = 0.05 * np.sin(spec.grid.coords[:, 0])
    u_init = GridFunction(spec.phi.pivot + pert, spec.grid)
    u, stats = solver.newton_solve(u_init, 0.0, spec)
    assert np.abs(u.values - spec.phi.pivot).max() <= 1e-8
    assert stats.residual_norms[-1] <= spec.newton_tol


def test_newton_quadratic_convergence_tail():
    spec = hyperbolic_spec()
    pert = 0.04 * np.sin(spec.grid.coords[:, 0])
    _, stats = solver.newton_solve(
        GridFunction(spec.phi.pivot + pert, spec.grid), 0.0, spec, tol=1e-13)
    norms = [r for r in stats.residual_norms if r > 1e-14]
    # estimated convergence order from the last three residuals
    if len(norms) >= 3:
        p = np.log(norms[-1] / norms[-2]) / np.log(norms[-2] / norms[-3])
        assert p > 1.5


def test_continuation_radial_reaches_oracle_root():
    spec = hyperbolic_spec((8, 8, 8))
    stream = io.StringIO()
    state = solver.continuation(spec, log_stream=stream)
    assert state.t == 1.0
    assert np.abs(state.u.values - np.arccosh(2.0)).max() <= 1e-8
    # log records carry the documented fields
    lines = [json.loads(s) for s in stream.getvalue().splitlines()]
    assert len(lines) == len(state.steps)
    for rec in lines:
        assert set(rec) == {"t", "newton_iters", "residual_norm",
                            "u_min", "u_max", "tau_min", "lambda_abs_max"}
    assert lines[0]["t"] == 0.0 and lines[-1]["t"] == 1.0


def test_continuation_frozen_at_zero():
    spec = hyperbolic_spec()
    state = solver.continuation(spec, t_final=0.0)
    assert state.t == 0.0
    assert np.all(state.u.values == spec.phi.pivot)


def test_continuation_underflow_serializes_last_state():
    # Newton capped at one iteration with a tiny tolerance cannot accept any
    # step, so the step size collapses below dt_min immediately
    spec = hyperbolic_spec(max_newton=1, newton_tol=1e-16, dt_min=0.09)
    with pytest.raises(ContinuationError) as err:
        solver.continuation(spec)
    assert err.value.last_state is not None
    assert err.value.last_state.t == 0.0


def test_diagnostics_constant_solution():
    spec = hyperbolic_spec()
    u = GridFunction.constant(np.arccosh(2.0), spec.grid)
    diag = solver.diagnostics(u, spec)
    assert diag.u_min == diag.u_max == pytest.approx(np.arccosh(2.0))
    assert diag.tau_min == pytest.approx(np.sinh(np.arccosh(2.0)), rel=1e-12)
    # leaf curvature coth(u*) = 2/sqrt(3)
    assert diag.lambda_abs_max == pytest.approx(2.0 / np.sqrt(3.0), rel=1e-12)
    assert diag.cone_margin_min > 0.0
    assert diag.newton_maclaurin_min >= -1e-10
    assert diag.flags == ()


def test_diagnostics_flags_outside_annulus():
    spec = hyperbolic_spec()
    diag = solver.diagnostics(GridFunction.constant(1.7, spec.grid), spec)
    assert "height-outside-annulus" in diag.flags
    d = diag.as_dict()
    assert d["u_max"] == 1.7 and isinstance(d["flags"], list)


def test_initial_solution_requires_interior_pivot():
    grid = FlatTorus((4, 4, 4))
    coeffs = CoefficientFamily([CoefficientTerm(6.0), CoefficientTerm(1.0)], 2)
    with pytest.raises(ConfigError):
        ProblemSpec(grid=grid, warping=WarpingFunction("hyperbolic", 1.0),
                    k=2, coeffs=coeffs, phi=PhiFunction(0.9), r1=1.0, r2=1.6)


def test_continuation_xdependent_stays_in_box():
    grid = FlatTorus((10, 10))
    coeffs = CoefficientFamily(
        [CoefficientTerm(3.0, 0.05, {"kind": "cos", "axis": 0}),
         CoefficientTerm(0.5, 0.05, {"kind": "cos", "axis": 0})], 2)
    spec = ProblemSpec(grid=grid, warping=WarpingFunction("hyperbolic", 1.0),
                       k=2, coeffs=coeffs, phi=PhiFunction(1.3), r1=1.0, r2=1.6)
    state = solver.continuation(spec)
    u = state.u.values
    assert u.max() - u.min() > 1e-6  # genuinely non-constant
    assert u.min() >= spec.r1 - 1e-6 and u.max() <= spec.r2 + 1e-6
    assert np.abs(residual(state.u, 1.0, spec).values).max() <= 1e-8
