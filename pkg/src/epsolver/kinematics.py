"""Deformation quantities and Eulerian operators in Lagrangian variables.

Storage: F[i, k] = d eta^i / d x_k, Finv is the matrix inverse (so the
Eulerian derivative is D_{eta^i} = Finv[k, i] d_k), and Fstar[i, k] is the
cofactor matrix, i.e. Fstar = J * Finv^T.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvertibilityLost
from .grid import ScalarField, SlabGrid, TensorField, VectorField, grad_array, same_grid

EPS = np.zeros((3, 3, 3))
EPS[0, 1, 2] = EPS[1, 2, 0] = EPS[2, 0, 1] = 1.0
EPS[0, 2, 1] = EPS[2, 1, 0] = EPS[1, 0, 2] = -1.0


@dataclass(frozen=True)
class DeformationPack:
    F: TensorField
    J: ScalarField
    Finv: TensorField
    Fstar: TensorField
    checksum: str

    @property
    def grid(self) -> SlabGrid:
        return self.J.grid


def displacement(eta: VectorField) -> np.ndarray:
    return eta.values - eta.grid.mesh()


def checksum_of(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()[:16]


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix from cross products of the columns eta_{,k} of F."""
    c0 = cross(F[:, 1], F[:, 2])
    c1 = cross(F[:, 2], F[:, 0])
    c2 = cross(F[:, 0], F[:, 1])
    return np.stack([c0, c1, c2], axis=1)


def cofactor_rate(F: np.ndarray, Fdot: np.ndarray) -> np.ndarray:
    """Time derivative of the cofactor matrix along Fdot."""
    c0 = cross(Fdot[:, 1], F[:, 2]) + cross(F[:, 1], Fdot[:, 2])
    c1 = cross(Fdot[:, 2], F[:, 0]) + cross(F[:, 2], Fdot[:, 0])
    c2 = cross(Fdot[:, 0], F[:, 1]) + cross(F[:, 0], Fdot[:, 1])
    return np.stack([c0, c1, c2], axis=1)


def deformation_gradient(eta: VectorField) -> np.ndarray:
    g = eta.grid
    g.check_n3_for_stencil()
    F = grad_array(displacement(eta), g)
    for i in range(3):
        F[i, i] += 1.0
    return F


def pack_from_gradient(F: np.ndarray, grid: SlabGrid, checksum: str = "") -> DeformationPack:
    cof = cofactor(F)
    J = np.einsum("ik...,ik...->...", F, cof) / 3.0
    if np.any(J <= 0) or not np.all(np.isfinite(J)):
        bad = np.where(~(J > 0))
        node = tuple(int(b[0]) for b in bad)
        raise InvertibilityLost(node, float(J[node]))
    Finv = np.swapaxes(cof, 0, 1) / J
    return DeformationPack(
        F=TensorField(grid, F),
        J=ScalarField(grid, J),
        Finv=TensorField(grid, Finv),
        Fstar=TensorField(grid, cof),
        checksum=checksum,
    )


def build_deformation(eta: VectorField) -> DeformationPack:
    """F, J, Finv and the cofactor Fstar of the flow map eta."""
    F = deformation_gradient(eta)
    return pack_from_gradient(F, eta.grid, checksum_of(eta.values))


def piola_residual(pack: DeformationPack) -> VectorField:
    """Row divergence of the cofactor, d_k Fstar[i, k], per component i."""
    g = pack.grid
    dcof = grad_array(pack.Fstar.values, g)  # [i, k, m]
    return VectorField(g, np.einsum("ikk...->i...", dcof))


# ---------------------------------------------------------------- Eulerian operators


def eulerian_jacobian(U: VectorField, pack: DeformationPack) -> np.ndarray:
    """P[i, r] = D_{eta^r} U^i = U^i_{,s} Finv[s, r]."""
    same_grid(U, pack.J)
    DU = grad_array(U.values, U.grid)
    return np.einsum("is...,sr...->ir...", DU, pack.Finv.values)


def div_eta(U: VectorField, pack: DeformationPack) -> ScalarField:
    P = eulerian_jacobian(U, pack)
    return ScalarField(U.grid, np.einsum("ii...->...", P))


def curl_from_jacobian(P: np.ndarray) -> np.ndarray:
    """[curl]^i = eps_{ijk} P[k, j]."""
    return np.einsum("ijk,kj...->i...", EPS, P)


def curl_eta(U: VectorField, pack: DeformationPack) -> VectorField:
    return VectorField(U.grid, curl_from_jacobian(eulerian_jacobian(U, pack)))


def curlmat_eta(U: VectorField, pack: DeformationPack) -> TensorField:
    """[Curl_eta U][i, j] = D_{eta^j} U^i - D_{eta^i} U^j."""
    P = eulerian_jacobian(U, pack)
    return TensorField(U.grid, P - np.swapaxes(P, 0, 1))


# ---------------------------------------------------------------- time derivatives


def jacobian_rate(v: VectorField, pack: DeformationPack) -> ScalarField:
    """J_t = Fstar[i, k] v^i_{,k}."""
    Dv = grad_array(v.values, v.grid)
    return ScalarField(v.grid, np.einsum("ik...,ik...->...", pack.Fstar.values, Dv))


def finv_rate(v: VectorField, pack: DeformationPack) -> np.ndarray:
    """d/dt Finv = -Finv (Dv) Finv."""
    Dv = grad_array(v.values, v.grid)
    A = pack.Finv.values
    return -np.einsum("ks...,sp...,pi...->ki...", A, Dv, A)


def cofactor_time_rate(v: VectorField, pack: DeformationPack) -> np.ndarray:
    Dv = grad_array(v.values, v.grid)
    return cofactor_rate(pack.F.values, Dv)


def ddt_finv_over_j(v: VectorField, pack: DeformationPack) -> TensorField:
    """d/dt (Finv / J), assembled from the dJ and dFinv identities."""
    same_grid(v, pack.J)
    J = pack.J.values
    Jt = jacobian_rate(v, pack).values
    out = finv_rate(v, pack) / J - pack.Finv.values * Jt / J**2
    return TensorField(v.grid, out)


def ddt_identity_decompose(v: VectorField, pack: DeformationPack):
    """Gradient, divergence and curl-matrix parts of d/dt (Finv / J).

    Their sum equals ddt_finv_over_j; entries are indexed like Finv.
    """
    same_grid(v, pack.J)
    J = pack.J.values
    A = pack.Finv.values
    P = eulerian_jacobian(v, pack)
    div = np.einsum("ii...->...", P)
    C = P - np.swapaxes(P, 0, 1)
    grad_part = -np.einsum("kr...,ir...->ki...", A, P) / J
    div_part = -A * div / J
    curl_part = -np.einsum("kr...,ri...->ki...", A, C) / J
    g = v.grid
    return TensorField(g, grad_part), TensorField(g, div_part), TensorField(g, curl_part)
