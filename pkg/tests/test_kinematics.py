import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epsolver.errors import InvertibilityLost
from epsolver.grid import SlabGrid, VectorField, grad_array, identity_map
from epsolver.kinematics import (
    build_deformation,
    cofactor,
    curl_eta,
    curlmat_eta,
    ddt_finv_over_j,
    ddt_identity_decompose,
    div_eta,
    finv_rate,
    jacobian_rate,
    piola_residual,
)
from epsolver.verify import linear_map, sine_deformation

small = st.floats(-0.2, 0.2)


@given(st.lists(small, min_size=3, max_size=3))
def test_linear_maps_are_piola_exact(b):
    g = SlabGrid(8, 8, 32)
    pack = build_deformation(linear_map(g, b))
    assert np.max(np.abs(piola_residual(pack).values)) < 1e-12
    assert np.allclose(pack.J.values, 1.0 + b[2])


@given(st.integers(0, 2**32 - 1))
def test_cofactor_identity(seed):
    g = SlabGrid(6, 6, 16)
    pack = build_deformation(sine_deformation(g, np.random.default_rng(seed)))
    prod = np.einsum("ik...,jk...->ij...", pack.F.values, pack.Fstar.values)
    target = np.eye(3)[:, :, None, None, None] * pack.J.values
    assert np.max(np.abs(prod - target)) < 1e-12
    inv = np.einsum("ik...,kj...->ij...", pack.Finv.values, pack.F.values)
    assert np.allclose(inv, np.broadcast_to(np.eye(3)[:, :, None, None, None], inv.shape), atol=1e-12)


@given(st.lists(st.floats(-2, 2), min_size=9, max_size=9))
def test_cofactor_of_constant_matrix(entries):
    A = np.array(entries).reshape(3, 3)
    C = cofactor(A[:, :, None])[:, :, 0]
    assert np.allclose(A @ C.T, np.linalg.det(A) * np.eye(3), atol=1e-10)


def test_piola_residual_fourth_order():
    res = []
    for n3 in (32, 64):
        g = SlabGrid(16, 16, n3)
        pack = build_deformation(sine_deformation(g, np.random.default_rng(3)))
        res.append(np.max(np.abs(piola_residual(pack).values)))
    assert np.log2(res[0] / res[1]) > 3.5


def test_identity_map_is_trivial():
    g = SlabGrid(4, 4, 12)
    pack = build_deformation(identity_map(g))
    assert np.all(pack.J.values == 1.0)
    assert np.max(np.abs(piola_residual(pack).values)) == 0.0


def test_folded_map_raises_invertibility_lost():
    g = SlabGrid(1, 1, 16)
    X = g.mesh()
    eta = VectorField(g, np.stack([X[0], X[1], -X[2]]))
    with pytest.raises(InvertibilityLost) as info:
        build_deformation(eta)
    assert info.value.value <= 0


def _velocity(g, rng):
    X = g.mesh()
    a = rng.uniform(-1, 1, size=(3, 2))
    return VectorField(
        g,
        np.stack([a[c, 0] * np.sin(2 * np.pi * X[0]) * X[2] + a[c, 1] * np.cos(2 * np.pi * X[1] + X[2]) for c in range(3)]),
    )


def test_jacobian_rate_matches_finite_difference():
    g = SlabGrid(8, 8, 24)
    rng = np.random.default_rng(11)
    eta = sine_deformation(g, rng)
    v = _velocity(g, rng)
    pack = build_deformation(eta)
    eps = 1e-5
    jp = build_deformation(VectorField(g, eta.values + eps * v.values)).J.values
    jm = build_deformation(VectorField(g, eta.values - eps * v.values)).J.values
    fd = (jp - jm) / (2 * eps)
    assert np.max(np.abs(jacobian_rate(v, pack).values - fd)) < 1e-8
    Ap = build_deformation(VectorField(g, eta.values + eps * v.values)).Finv.values
    Am = build_deformation(VectorField(g, eta.values - eps * v.values)).Finv.values
    assert np.max(np.abs(finv_rate(v, pack) - (Ap - Am) / (2 * eps))) < 1e-7


def test_finv_over_j_rate_decomposes():
    g = SlabGrid(8, 8, 24)
    rng = np.random.default_rng(5)
    pack = build_deformation(sine_deformation(g, rng))
    v = _velocity(g, rng)
    parts = ddt_identity_decompose(v, pack)
    total = sum(p.values for p in parts)
    assert np.max(np.abs(total - ddt_finv_over_j(v, pack).values)) < 1e-10


def test_eulerian_operators_on_identity():
    g = SlabGrid(8, 8, 24)
    pack = build_deformation(identity_map(g))
    X = g.mesh()
    U = VectorField(g, np.stack([np.sin(2 * np.pi * X[1]), np.zeros_like(X[0]), X[2] ** 2]))
    Du = grad_array(U.values, g)
    assert np.allclose(div_eta(U, pack).values, np.einsum("ii...->...", Du))
    C = curlmat_eta(U, pack).values
    assert np.allclose(C, -np.swapaxes(C, 0, 1))
    w = curl_eta(U, pack).values
    assert np.allclose(w[2], -2 * np.pi * np.cos(2 * np.pi * X[1]), atol=1e-10)
