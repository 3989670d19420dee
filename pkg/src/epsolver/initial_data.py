"""Physical-vacuum density profiles, smoothing operators and the initial acceleration u1."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .errors import SmoothingBrokeVacuum
from .grid import ScalarField, SlabGrid, VectorField, diff, grad_array
from .gravity import GravityConfig, force_and_rate
from .kinematics import build_deformation

log = logging.getLogger(__name__)

PROFILE_KINDS = ("sine", "parabolic", "lane_emden_slab", "custom-table")
VELOCITY_KINDS = ("zero", "mode", "irrotational", "shear", "vortex")
LANE_EMDEN_HEIGHT = np.sqrt(2.0) * np.pi


@dataclass(frozen=True)
class DensityProfile:
    gamma: float
    rho0: ScalarField
    omega0: ScalarField
    kind: str = "custom"
    slope_bottom: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    slope_top: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    @property
    def grid(self) -> SlabGrid:
        return self.rho0.grid

    @property
    def c_gamma(self) -> float:
        return self.gamma / (self.gamma - 1.0)


def _check_gamma(gamma: float) -> None:
    if not 1.0 < gamma < 3.0:
        raise ValueError(f"gamma must lie in (1, 3), got {gamma}")


def normal_slopes(f: np.ndarray, grid: SlabGrid) -> tuple[np.ndarray, np.ndarray]:
    """Outward normal derivatives of f at the bottom (N = -e3) and top (N = +e3) faces."""
    d3 = diff(f, 2, grid)
    return -d3[..., 0], d3[..., -1]


def profile_from_omega(omega: np.ndarray, gamma: float, grid: SlabGrid, kind: str) -> DensityProfile:
    _check_gamma(gamma)
    omega = np.array(omega, dtype=float)
    omega[..., 0] = 0.0
    omega[..., -1] = 0.0
    rho = np.maximum(omega, 0.0) ** (1.0 / (gamma - 1.0))
    bottom, top = normal_slopes(omega, grid)
    return DensityProfile(gamma, ScalarField(grid, rho), ScalarField(grid, omega), kind, bottom, top)


def profile_from_rho(rho: np.ndarray, gamma: float, grid: SlabGrid, kind: str) -> DensityProfile:
    _check_gamma(gamma)
    rho = np.array(rho, dtype=float)
    omega = np.maximum(rho, 0.0) ** (gamma - 1.0)
    bottom, top = normal_slopes(omega, grid)
    return DensityProfile(gamma, ScalarField(grid, rho), ScalarField(grid, omega), kind, bottom, top)


def make_profile(
    kind: str,
    gamma: float,
    grid: SlabGrid,
    amplitude: float = 1.0,
    table: str | Path | None = None,
    modulation: float = 0.0,
) -> DensityProfile:
    """Density profile vanishing on both faces.

    Profiles are given through omega0 = rho0^(gamma-1), which is smooth up to
    the boundary: sine omega0 = A sin(pi x3 / L3), parabolic omega0 = A x3 (L3 - x3).
    lane_emden_slab is the gamma = 2 hydrostatic slab rho0 = A sin(x3 / sqrt 2)
    on L3 = sqrt(2) pi.  modulation adds a tangential factor
    1 + m cos(2 pi x1) cos(2 pi x2) to omega0.
    """
    _check_gamma(gamma)
    if kind not in PROFILE_KINDS:
        raise ValueError(f"unknown profile kind {kind!r}; expected one of {PROFILE_KINDS}")
    x = grid.mesh()
    L = grid.length3
    tang = 1.0 + modulation * np.cos(2 * np.pi * x[0]) * np.cos(2 * np.pi * x[1])
    if kind == "sine":
        return profile_from_omega(amplitude * np.sin(np.pi * x[2] / L) * tang, gamma, grid, kind)
    if kind == "parabolic":
        return profile_from_omega(amplitude * x[2] * (L - x[2]) * tang, gamma, grid, kind)
    if kind == "lane_emden_slab":
        if gamma != 2.0:
            raise ValueError("lane_emden_slab requires gamma = 2")
        if abs(L - LANE_EMDEN_HEIGHT) > 1e-9:
            raise ValueError(f"lane_emden_slab requires length3 = sqrt(2)*pi, got {L}")
        if modulation:
            raise ValueError("lane_emden_slab is plane-symmetric; modulation must be 0")
        return profile_from_rho(amplitude * np.sin(x[2] / np.sqrt(2.0)), gamma, grid, kind)
    if table is None:
        raise ValueError("custom-table profile needs a table path")
    data = np.loadtxt(table)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("profile table must have two columns (x3, rho0)")
    rho = np.interp(x[2], data[:, 0], data[:, 1]) * tang
    prof = profile_from_rho(rho, gamma, grid, kind)
    report = vacuum_check(prof)
    if not report.passed:
        raise ValueError(f"custom table fails the vacuum check: {'; '.join(report.reasons)}")
    return prof


@dataclass(frozen=True)
class VacuumReport:
    slope_bottom: float
    slope_top: float
    band_slope_min: float
    C: float
    passed: bool
    reasons: tuple[str, ...]


def vacuum_check(profile: DensityProfile, band: float = 0.1, face_tol: float = 1e-12) -> VacuumReport:
    """Physical vacuum test on omega0.

    Requires omega0 = 0 on both faces, omega0 > 0 inside, the outward normal
    derivative strictly negative on both faces, |d omega0 / dx3| bounded
    below on the band dist <= band, and reports
    C = min over interior nodes of omega0 / dist.
    """
    g = profile.grid
    w = profile.omega0.values
    x3 = g.x3
    dist = np.minimum(x3, g.length3 - x3)
    reasons = []
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if np.max(np.abs(w[..., 0])) > face_tol * scale or np.max(np.abs(w[..., -1])) > face_tol * scale:
        reasons.append("density does not vanish on the boundary")
    inner = w[..., 1:-1]
    if np.any(inner <= 0):
        reasons.append("density is not positive in the interior")
    bottom, top = normal_slopes(w, g)
    sb, st = float(np.max(bottom)), float(np.max(top))
    if not (sb < 0 and st < 0):
        reasons.append(f"normal slope not strictly negative (bottom {sb:.3g}, top {st:.3g})")
    d3 = diff(w, 2, g)
    in_band = dist <= band
    outward = np.where(x3 <= 0.5 * g.length3, -d3, d3)
    band_min = float(np.min(-outward[..., in_band])) if np.any(in_band) else float("nan")
    if not band_min > 0:
        reasons.append(f"slope lower bound on the band fails ({band_min:.3g})")
    C = float(np.min(inner / dist[1:-1])) if inner.size else float("nan")
    if not C > 0:
        reasons.append("no positive linear floor omega0 >= C dist")
    return VacuumReport(sb, st, band_min, C, not reasons, tuple(reasons))


# ---------------------------------------------------------------- velocities


def make_velocity(kind: str, grid: SlabGrid, amplitude: float = 0.0) -> VectorField:
    """Initial velocity u0 of a named family."""
    if kind not in VELOCITY_KINDS:
        raise ValueError(f"unknown velocity kind {kind!r}; expected one of {VELOCITY_KINDS}")
    x = grid.mesh()
    L = grid.length3
    a = amplitude
    z = np.zeros_like(x[0])
    s3 = np.sin(np.pi * x[2] / L)
    c3 = np.cos(np.pi * x[2] / L)
    if kind == "zero":
        return VectorField(grid, np.stack([z, z, z]))
    if kind == "mode":
        return VectorField(grid, np.stack([z, z, a * c3]))
    if kind == "irrotational":
        # u0 = D psi with the grid derivative, so the discrete curl vanishes to round-off
        c1 = np.cos(2 * np.pi * x[0])
        c2 = np.cos(2 * np.pi * x[1])
        psi = c1 * c2 * s3 / (2 * np.pi) + L * s3 / np.pi
        return VectorField(grid, a * grad_array(psi, grid))
    if kind == "shear":
        return VectorField(grid, np.stack([a * s3, z, z]))
    # vortex: rotational and divergence-free in x1, x2
    return VectorField(
        grid,
        a * np.stack([-np.sin(2 * np.pi * x[1]) * s3, np.sin(2 * np.pi * x[0]) * s3, 0.1 * c3]),
    )


# ---------------------------------------------------------------- mollifiers


def bump_weights(eps: float, h: float) -> np.ndarray:
    """Discrete weights of the standard bump exp(-1/(1-r^2)) of radius eps, unit sum."""
    n = int(np.floor(eps / h))
    if n < 1:
        return np.ones(1)
    r = np.arange(-n, n + 1) * h / eps
    w = np.zeros_like(r)
    inside = np.abs(r) < 1
    w[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return w / w.sum()


def _smooth_axis(a: np.ndarray, eps: float, h: float, axis: int, mode: str) -> np.ndarray:
    w = bump_weights(eps, h)
    if w.size == 1:
        return a
    if mode == "wrap" and w.size > a.shape[axis]:
        # wrap the kernel onto the period
        n = a.shape[axis]
        folded = np.zeros(n)
        half = w.size // 2
        for j, wj in enumerate(w):
            folded[(j - half) % n] += wj
        F = np.fft.fft(folded)
        return np.real(np.fft.ifft(np.fft.fft(a, axis=axis) * np.expand_dims(F, tuple(d for d in range(a.ndim) if d != axis % a.ndim)), axis=axis))
    return convolve1d(a, w, axis=axis, mode=mode)


def mollify_interior(f, eps: float):
    """Convolution with a product of standard bumps of radius eps.

    Periodic in x1, x2; across the faces the field is continued by even
    reflection.  Returns the same field type.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = f.grid
    if eps < g.active_spacing:
        warnings.warn(f"mollifier radius {eps:g} is below the grid spacing", RuntimeWarning, stacklevel=2)
    v = f.values
    out = v
    if g.n1 > 1:
        out = _smooth_axis(out, eps, g.h1, -3, "wrap")
    if g.n2 > 1:
        out = _smooth_axis(out, eps, g.h2, -2, "wrap")
    out = _smooth_axis(out, eps, g.h3, -1, "mirror")
    return type(f)(g, out)


def boundary_convolution(face_values: np.ndarray, theta: float, grid: SlabGrid) -> np.ndarray:
    """Periodic 2D mollification of boundary data, shape (..., n1, n2)."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    out = np.asarray(face_values, dtype=float)
    if grid.n1 > 1:
        out = _smooth_axis(out, theta, grid.h1, -2, "wrap")
    if grid.n2 > 1:
        out = _smooth_axis(out, theta, grid.h2, -1, "wrap")
    return out


# ---------------------------------------------------------------- biharmonic smoothing


def _biharmonic_matrix(n: int, h: float, k2: float) -> np.ndarray:
    """(D2 - k2)^2 on interior nodes 1..n-2 with zero Dirichlet data, ghosts excluded."""
    m = n - 2
    D2 = (np.diag(np.full(m, -2.0)) + np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)) / h**2
    A = D2 - k2 * np.eye(m)
    B = A @ A
    # the face value of (D2 - k2) f is (f_{-1} + f_1) / h^2 with the ghost
    # f_{-1} = f_1 - 2 h f'(0); likewise at the top
    B[0, 0] += 2.0 / h**4
    B[-1, -1] += 2.0 / h**4
    return B


def _ghost_terms(n: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of f'(0) and f'(L) in the interior biharmonic equations."""
    cb = np.zeros(n - 2)
    cb[0] = -2.0 / h**3
    ct = np.zeros(n - 2)
    ct[-1] = 2.0 / h**3
    return cb, ct


def apply_biharmonic(f: np.ndarray, grid: SlabGrid, d3_bottom: np.ndarray, d3_top: np.ndarray) -> np.ndarray:
    """Discrete biharmonic used by smooth_density, on interior x3 nodes (tangentially spectral)."""
    n, h = grid.n3, grid.h3
    fh = np.fft.fft2(f, axes=(0, 1))
    gb = np.fft.fft2(d3_bottom, axes=(0, 1))
    gt = np.fft.fft2(d3_top, axes=(0, 1))
    k1 = 2 * np.pi * np.fft.fftfreq(grid.n1, d=1.0 / grid.n1)
    k2 = 2 * np.pi * np.fft.fftfreq(grid.n2, d=1.0 / grid.n2)
    out = np.zeros(fh.shape[:2] + (n - 2,), dtype=complex)
    cb, ct = _ghost_terms(n, h)
    for a in range(grid.n1):
        for b in range(grid.n2):
            K = k1[a] ** 2 + k2[b] ** 2
            B = _biharmonic_matrix(n, h, K)
            out[a, b] = B @ fh[a, b, 1:-1] + cb * gb[a, b] + ct * gt[a, b]
    return np.real(np.fft.ifft2(out, axes=(0, 1)))


def solve_biharmonic(rhs: np.ndarray, grid: SlabGrid, d3_bottom: np.ndarray, d3_top: np.ndarray) -> np.ndarray:
    """Solve the discrete biharmonic with f = 0 and prescribed d f / d x3 on both faces."""
    n, h = grid.n3, grid.h3
    rh = np.fft.fft2(rhs, axes=(0, 1))
    gb = np.fft.fft2(d3_bottom, axes=(0, 1))
    gt = np.fft.fft2(d3_top, axes=(0, 1))
    k1 = 2 * np.pi * np.fft.fftfreq(grid.n1, d=1.0 / grid.n1)
    k2 = 2 * np.pi * np.fft.fftfreq(grid.n2, d=1.0 / grid.n2)
    out = np.zeros(rh.shape[:2] + (n,), dtype=complex)
    cb, ct = _ghost_terms(n, h)
    for a in range(grid.n1):
        for b in range(grid.n2):
            K = k1[a] ** 2 + k2[b] ** 2
            B = _biharmonic_matrix(n, h, K)
            out[a, b, 1:-1] = np.linalg.solve(B, rh[a, b] - cb * gb[a, b] - ct * gt[a, b])
    return np.real(np.fft.ifft2(out, axes=(0, 1)))


def smooth_density(profile: DensityProfile, kappa: float, band: float = 0.1) -> DensityProfile:
    """Smoothed profile solving Delta^2 f = alpha_eps * Delta^2 f0, f = 0 and
    d f / dN = Lambda_eps (d f0 / dN) on both faces, eps = 1 / |ln kappa|.

    f is omega0; for gamma = 2 this is rho0 itself.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    g = profile.grid
    eps = 1.0 / abs(np.log(kappa))
    w = profile.omega0.values
    d3 = diff(w, 2, g)
    gb, gt = d3[..., 0], d3[..., -1]
    inner = apply_biharmonic(w, g, gb, gt)
    full = np.concatenate([2 * inner[..., :1] - inner[..., 1:2], inner, 2 * inner[..., -1:] - inner[..., -2:-1]], axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rhs = mollify_interior(ScalarField(g, full), eps).values[..., 1:-1]
    gb_s = boundary_convolution(gb, eps, g)
    gt_s = boundary_convolution(gt, eps, g)
    omega = solve_biharmonic(rhs, g, gb_s, gt_s)
    omega[..., 0] = 0.0
    omega[..., -1] = 0.0
    out = profile_from_omega(omega, profile.gamma, g, profile.kind + "-smoothed")
    report = vacuum_check(out, band)
    if not report.passed:
        raise SmoothingBrokeVacuum("; ".join(report.reasons))
    return out


# ---------------------------------------------------------------- initial acceleration


def first_time_derivative(
    u0: VectorField, profile: DensityProfile, kappa: float, gravity: GravityConfig
) -> VectorField:
    """u1 = v_t at t = 0 from v_t + w + kappa w_t = 0 with eta = identity, v = u0.

    For gamma = 2 this is
    u1 = -2 D rho0 + G + kappa [2 (rho0 Div u0)_{,i} + 2 u0^k_{,i} rho0_{,k} + G_t].
    """
    g = u0.grid
    mesh = VectorField(g, g.mesh())
    pack = build_deformation(mesh)
    if not gravity.enabled:
        log.info("gravity disabled: kernel terms in u1 set to zero")
    G, Gt = force_and_rate(profile, mesh, u0, pack, gravity)
    cg = profile.c_gamma
    omega = profile.omega0.values
    Dh = grad_array(cg * omega, g)
    Du = grad_array(u0.values, g)
    divu = np.einsum("ii...->...", Du)
    hdot = -profile.gamma * omega * divu
    wdot = -np.einsum("ki...,k...->i...", Du, Dh) + grad_array(hdot, g) - Gt.values
    w0 = Dh - G.values
    return VectorField(g, -w0 - kappa * wdot)
