import numpy as np
import pytest

from warpcurve import geometry
from warpcurve.errors import ConfigError, DomainError, GeometryError
from warpcurve.geometry import (FlatTorus, GridFunction, Sphere2,
                                WarpingFunction, fundamental_forms, make_grid,
                                principal_curvatures, warp_eval)


# ---------------------------------------------------------------------------
# warping functions
# ---------------------------------------------------------------------------

def test_warp_eval_euclidean():
    f, fp, fpp = warp_eval(WarpingFunction("euclidean"), 2.0)
    assert (f, fp, fpp) == (2.0, 1.0, 0.0)


def test_warp_eval_hyperbolic():
    f, fp, fpp = warp_eval(WarpingFunction("hyperbolic", 1.0), 1.0)
    assert f == pytest.approx(np.sinh(1.0), rel=1e-15)
    assert fp == pytest.approx(np.cosh(1.0), rel=1e-15)
    assert fpp == pytest.approx(np.sinh(1.0), rel=1e-15)


def test_warp_eval_sphere_domain_capped():
    w = WarpingFunction("sphere", 1.0)
    # f' = cos vanishes at pi/2, which the domain cap excludes
    with pytest.raises(DomainError):
        warp_eval(w, np.pi / 2)
    f, fp, _ = warp_eval(w, 0.5)
    assert f == pytest.approx(np.sin(0.5)) and fp == pytest.approx(np.cos(0.5))


def test_warp_eval_power():
    f, fp, fpp = warp_eval(WarpingFunction("power", 2.0), 3.0)
    assert (f, fp, fpp) == (9.0, 6.0, 2.0)


def test_warp_eval_table_matches_samples():
    t = np.linspace(0.5, 2.0, 40)
    w = WarpingFunction("table", table_t=t, table_f=np.sinh(t))
    f, fp, _ = warp_eval(w, 1.3)
    assert f == pytest.approx(np.sinh(1.3), rel=1e-6)
    assert fp == pytest.approx(np.cosh(1.3), rel=1e-4)


def test_warp_eval_rejects_outside_domain():
    w = WarpingFunction("hyperbolic", 1.0, t_min=0.5, t_max=2.0)
    for t in (0.4, 2.5):
        with pytest.raises(DomainError):
            warp_eval(w, t)


def test_warping_validation():
    with pytest.raises(ConfigError):
        WarpingFunction("spiral")
    with pytest.raises(ConfigError):
        WarpingFunction("sphere", -1.0)
    with pytest.raises(ConfigError):
        WarpingFunction("table")


# ---------------------------------------------------------------------------
# grids and derivatives
# ---------------------------------------------------------------------------

def test_flat_torus_validation():
    with pytest.raises(ConfigError):
        FlatTorus((4, 4, 4, 4))
    with pytest.raises(ConfigError):
        FlatTorus((3, 4))
    with pytest.raises(ConfigError):
        FlatTorus(8)  # scalar resolution needs explicit n
    grid = FlatTorus(8, n=2)
    assert grid.shape == (8, 8) and grid.num_nodes == 64


def test_sphere2_validation():
    with pytest.raises(ConfigError):
        Sphere2(8, 15)  # odd longitude count breaks the pole closure
    grid = Sphere2(8, 16)
    assert grid.num_nodes == 128
    assert grid.coords[:, 0].min() > 0.0 and grid.coords[:, 0].max() < np.pi


def test_constant_field_has_zero_derivatives():
    for grid in (FlatTorus((6, 6, 6)), Sphere2(8, 16)):
        du, d2u = grid.gradient_hessian(np.full(grid.num_nodes, 1.7))
        assert np.abs(du).max() == 0.0
        assert np.abs(d2u).max() == 0.0


def test_torus_second_derivative_of_sine():
    grid = FlatTorus((64, 4), periods=(2 * np.pi, 2 * np.pi))
    x = grid.coords[:, 0]
    _, d2u = grid.gradient_hessian(np.sin(x))
    err = np.abs(d2u[:, 0, 0] + np.sin(x)).max()
    assert err < 5e-3  # O(h^2) at h = 2 pi / 64


def test_sphere_covariant_derivatives_of_cos_theta():
    grid = Sphere2(48, 96)
    th = grid.coords[:, 0]
    u = np.cos(th)
    du, d2u = grid.gradient_hessian(u)
    gradsq = np.einsum("nij,ni,nj->n", grid.ginv, du, du)
    assert np.abs(gradsq - np.sin(th) ** 2).max() < 5e-3
    # covariant Hessian of cos(theta): u_;tt = -cos, u_;pp = -sin^2 cos
    assert np.abs(d2u[:, 0, 0] + np.cos(th)).max() < 5e-3
    assert np.abs(d2u[:, 1, 1] + np.sin(th) ** 2 * np.cos(th)).max() < 5e-3
    assert np.abs(d2u[:, 0, 1]).max() < 5e-3


def test_gradient_hessian_wrapper():
    grid = FlatTorus((6, 6))
    u = GridFunction(np.cos(grid.coords[:, 1]), grid)
    du, d2u = geometry.gradient_hessian(u)
    du2, d2u2 = grid.gradient_hessian(u.values)
    np.testing.assert_array_equal(du, du2)
    np.testing.assert_array_equal(d2u, d2u2)


def test_inject_from():
    coarse = FlatTorus((6, 6))
    fine = FlatTorus((12, 12))
    field = np.cos(fine.coords[:, 0])
    vals = coarse.inject_from(field, fine)
    np.testing.assert_allclose(vals, np.cos(coarse.coords[:, 0]), atol=1e-14)
    with pytest.raises(ConfigError):
        coarse.inject_from(field[: fine.num_nodes], FlatTorus((10, 10)))


def test_make_grid_roundtrip():
    for grid in (FlatTorus((6, 8), periods=(1.0, 2.0)), Sphere2(8, 16)):
        clone = make_grid(grid.describe())
        assert clone.shape == grid.shape
        np.testing.assert_allclose(clone.coords, grid.coords)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

def test_grid_function_validation():
    grid = FlatTorus((4, 4))
    with pytest.raises(ConfigError):
        GridFunction(np.zeros(5), grid)
    with pytest.raises(ConfigError):
        GridFunction(np.full(16, np.nan), grid)
    u = GridFunction.constant(1.2, grid)
    assert u.with_values(u.values + 1.0).values[0] == 2.2


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

WARPINGS = [WarpingFunction("hyperbolic", 1.0),
            WarpingFunction("euclidean"),
            WarpingFunction("sphere", 1.0)]


def test_leaf_identity_constant_graphs():
    for grid in (FlatTorus((6, 6, 6)), Sphere2(8, 16)):
        for w in WARPINGS:
            for c in (0.5, 0.9, 1.3):
                f, fp, _ = warp_eval(w, c)
                rec = fundamental_forms(GridFunction.constant(c, grid), w)
                assert np.abs(rec.lam - fp / f).max() <= 1e-12
                assert np.abs(rec.tau - f).max() <= 1e-12
                np.testing.assert_allclose(rec.gtilde, f ** 2 * grid.g, atol=1e-13)
                np.testing.assert_allclose(rec.h, (f * fp) * grid.g, atol=1e-13)


def test_constant_hyperbolic_leaf_value():
    grid = FlatTorus((4, 4, 4))
    rec = fundamental_forms(GridFunction.constant(1.0, grid),
                            WarpingFunction("hyperbolic", 1.0))
    assert np.abs(rec.lam - 1.0 / np.tanh(1.0)).max() <= 1e-12


def test_identity_pencil():
    N = 7
    rng = np.random.default_rng(6)
    A = rng.standard_normal((N, 3, 3))
    gtilde = A @ np.swapaxes(A, -1, -2) + 3.0 * np.eye(3)
    lam = principal_curvatures(gtilde, gtilde)
    np.testing.assert_allclose(lam, 1.0, atol=1e-12)


def test_principal_curvatures_rejects_indefinite_metric():
    g = -np.eye(3)[None]
    with pytest.raises(GeometryError):
        principal_curvatures(g, np.eye(3)[None])


def test_pencil_eigensystem_orthonormality():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((5, 3, 3))
    gtilde = A @ np.swapaxes(A, -1, -2) + 3.0 * np.eye(3)
    B = rng.standard_normal((5, 3, 3))
    h = 0.5 * (B + np.swapaxes(B, -1, -2))
    lam, V = geometry.pencil_eigensystem(gtilde, h)
    gram = np.swapaxes(V, -1, -2) @ gtilde @ V
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(3), (5, 3, 3)), atol=1e-12)
    hv = h @ V
    gv = gtilde @ V * lam[:, None, :]
    np.testing.assert_allclose(hv, gv, atol=1e-10)


def test_small_perturbation_matches_directional_difference():
    grid = FlatTorus((16, 4, 4))
    w = WarpingFunction("hyperbolic", 1.0)
    c = 1.3
    eps = 1e-6
    bump = np.sin(grid.coords[:, 0])
    rec_p = fundamental_forms(GridFunction(c + eps * bump, grid), w)
    rec_m = fundamental_forms(GridFunction(c - eps * bump, grid), w)
    dh_fd = (rec_p.h - rec_m.h) / (2 * eps)
    # first variation of h at a constant leaf along the bump b:
    # dh_ij = -b_;ij + (f'^2 + f f'') b g_ij
    f, fp, fpp = warp_eval(w, c)
    _, d2b = grid.gradient_hessian(bump)
    eye = np.broadcast_to(np.eye(3), dh_fd.shape)
    dh_exact = -d2b + (fp ** 2 + f * fpp) * bump[:, None, None] * eye
    np.testing.assert_allclose(dh_fd, dh_exact, atol=1e-5)


def test_curvature_convergence_order_on_torus():
    # principal curvatures of a smooth graph converge at O(h^2)
    w = WarpingFunction("hyperbolic", 1.0)
    errs = []
    for N in (16, 32, 64):
        grid = FlatTorus((N, N))
        x = grid.coords[:, 0]
        u = 1.3 + 0.05 * np.sin(x)
        rec = fundamental_forms(GridFunction(u, grid), w)
        # exact curvatures from analytic derivatives of u
        f, fp, _ = warp_eval(w, u)
        du = np.zeros((grid.num_nodes, 2))
        du[:, 0] = 0.05 * np.cos(x)
        d2u = np.zeros((grid.num_nodes, 2, 2))
        d2u[:, 0, 0] = -0.05 * np.sin(x)
        v = np.sqrt(f ** 2 + du[:, 0] ** 2)
        uu = du[:, :, None] * du[:, None, :]
        eye = np.broadcast_to(np.eye(2), d2u.shape)
        gtilde = f[:, None, None] ** 2 * eye + uu
        h = (-f[:, None, None] * d2u + 2 * fp[:, None, None] * uu
             + (f ** 2 * fp)[:, None, None] * eye) / v[:, None, None]
        lam_exact = principal_curvatures(gtilde, h)
        errs.append(np.abs(rec.lam - lam_exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8) and np.all(orders < 2.2)


def test_sphere_frame_covariance():
    # a rotation-equivariant field sampled before and after swapping the
    # polar axis gives the same sorted curvatures up to discretization error
    grid = Sphere2(32, 64)
    w = WarpingFunction("euclidean")
    th, ph = grid.coords[:, 0], grid.coords[:, 1]
    z = np.cos(th)
    x = np.sin(th) * np.cos(ph)
    lam_z = fundamental_forms(GridFunction(1.3 + 0.05 * z, grid), w).lam
    lam_x = fundamental_forms(GridFunction(1.3 + 0.05 * x, grid), w).lam
    # compare distributions through sorted samples
    for col in range(2):
        a = np.sort(lam_z[:, col])
        b = np.sort(lam_x[:, col])
        assert np.abs(a - b).max() < 5e-3
