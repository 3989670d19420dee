import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epsolver.errors import GridMismatch, StencilError
from epsolver.grid import (
    ScalarField,
    SlabGrid,
    VectorField,
    boundary_norm,
    curl,
    diff,
    divergence,
    gradient,
    integrate,
    l2_norm,
    sobolev_norm,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        SlabGrid(0, 1, 8)
    with pytest.raises(ValueError):
        SlabGrid(1, 1, 3)
    with pytest.raises(ValueError):
        SlabGrid(1, 1, 8, 0.0)


def test_coordinates_hit_both_faces():
    g = SlabGrid(4, 2, 9, 2.5)
    assert g.x3[0] == 0.0 and g.x3[-1] == 2.5
    assert g.mesh().shape == (3, 4, 2, 9)
    assert np.isclose(g.weights.sum(), 2.5)


def test_fd4_stencil_needs_five_nodes():
    g = SlabGrid(1, 1, 4)
    with pytest.raises(StencilError):
        diff(np.zeros(g.shape), 2, g)


@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5), st.integers(8, 40))
def test_fd4_exact_on_quartics(coeffs, n3):
    g = SlabGrid(1, 1, n3, 1.3)
    x = g.x3
    p = np.polynomial.Polynomial(coeffs)
    vals = np.broadcast_to(p(x), g.shape)
    d = diff(vals, 2, g)
    assert np.allclose(d[0, 0], p.deriv()(x), atol=1e-9 * n3 * n3)


@given(st.integers(1, 3), st.integers(0, 3), st.floats(0, 2 * np.pi))
def test_spectral_derivative_exact_on_trig(k1, k2, phase):
    g = SlabGrid(8, 8, 6)
    X1, X2, _ = g.coords()
    th = 2 * np.pi * (k1 * X1 + k2 * X2) + phase
    f = np.broadcast_to(np.sin(th), g.shape)
    assert np.allclose(diff(f, 0, g), np.broadcast_to(2 * np.pi * k1 * np.cos(th), g.shape), atol=1e-10)
    assert np.allclose(diff(f, 1, g), np.broadcast_to(2 * np.pi * k2 * np.cos(th), g.shape), atol=1e-10)


def test_fd4_fourth_order():
    errs = []
    for n3 in (17, 33, 65):
        g = SlabGrid(1, 1, n3)
        f = np.broadcast_to(np.sin(3 * g.x3), g.shape)
        errs.append(np.max(np.abs(diff(f, 2, g)[0, 0] - 3 * np.cos(3 * g.x3))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.7)


def test_curl_of_gradient_vanishes():
    g = SlabGrid(8, 8, 24)
    X1, X2, X3 = g.coords()
    f = ScalarField(g, np.cos(2 * np.pi * X1) * np.sin(2 * np.pi * X2) * X3**2)
    assert curl(gradient(f)).max_abs() < 1e-10


def test_divergence_of_curl_vanishes():
    g = SlabGrid(8, 8, 24)
    X = g.mesh()
    A = VectorField(g, np.stack([np.sin(2 * np.pi * X[1]) * X[2] ** 3, np.cos(2 * np.pi * X[0]) * X[2], X[2] ** 2]))
    assert divergence(curl(A)).max_abs() < 1e-10


def test_integrate_and_norms():
    g = SlabGrid(4, 4, 129, 2.0)
    one = ScalarField(g, 1.0)
    assert np.isclose(integrate(one.values, g), 2.0)
    assert np.isclose(l2_norm(one), np.sqrt(2.0))
    s = ScalarField(g, np.broadcast_to(np.sin(np.pi * g.x3 / 2.0), g.shape))
    # ||sin||_1^2 = (1 + (pi/2)^2) * L/2
    assert np.isclose(sobolev_norm(s, 1, squared=True), (1 + (np.pi / 2) ** 2), rtol=1e-4)
    with pytest.raises(ValueError):
        sobolev_norm(s, 5)
    with pytest.raises(ValueError):
        l2_norm(s, weight=-np.ones(g.shape))


def test_boundary_norm_counts_both_faces():
    g = SlabGrid(4, 4, 8)
    faces = np.ones((2, 4, 4))
    assert np.isclose(boundary_norm(faces, g, 0, squared=True), 2.0)
    assert np.isclose(boundary_norm(faces, g, 2, squared=True), 2.0)


def test_field_arithmetic_checks_grids():
    a = ScalarField(SlabGrid(1, 1, 8), 1.0)
    b = ScalarField(SlabGrid(1, 1, 9), 1.0)
    with pytest.raises(GridMismatch):
        a + b
    c = a * 3.0 - 1.0
    assert np.all(c.values == 2.0)
    assert not c.values.flags.writeable


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_l2_norm_homogeneous(a, b):
    g = SlabGrid(2, 2, 9)
    f = VectorField(g, np.broadcast_to(np.array([a, b, 1.0])[:, None, None, None], (3,) + g.shape))
    assert np.isclose(l2_norm(f * 2.0), 2 * l2_norm(f))
