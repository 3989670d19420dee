"""Lagrangian Newtonian force G, its time derivative, and the Poisson check.

G^i(x) = c * sum_images int_Omega s^i(z) / |eta(x) - eta(z) - image| dz,
s^i = Fstar[i, k] d_k(rho0 / J).

Images are taken in the periodic directions for |m|, |n| <= M.  The part
of the image lattice beyond M is added as a continuous sheet carrying the
layer-averaged source (far_field = "sheet"); this uses that the total
source integrates to zero, so the divergent constant of the planar kernel
drops out.  On plane-symmetric grids (n1 = n2 = 1) the tangential integral
is evaluated in closed form.  Otherwise nodes are summed directly and the
singular self cell is integrated separately.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import OracleDiverged
from .grid import ScalarField, SlabGrid, VectorField, grad_array
from .kinematics import DeformationPack, cofactor_rate

SELFCELL_RULES = ("polar-subgrid", "analytic-cell")
FAR_FIELD_MODES = ("sheet", "none")
CHUNK = 32


@dataclass(frozen=True)
class GravityConfig:
    kernel_constant: float = 1.0 / (4.0 * np.pi)
    image_layers: int = 2
    selfcell_rule: str = "polar-subgrid"
    enabled: bool = True
    far_field: str = "sheet"
    subgrid_order: int = 16

    def __post_init__(self):
        if not self.kernel_constant > 0:
            raise ValueError("kernel_constant must be positive")
        if self.image_layers < 0:
            raise ValueError("image_layers must be >= 0")
        if self.selfcell_rule not in SELFCELL_RULES:
            raise ValueError(f"selfcell_rule must be one of {SELFCELL_RULES}")
        if self.far_field not in FAR_FIELD_MODES:
            raise ValueError(f"far_field must be one of {FAR_FIELD_MODES}")


def _rho_values(rho0) -> np.ndarray:
    r = getattr(rho0, "rho0", rho0)
    return r.values if hasattr(r, "values") else np.asarray(r, dtype=float)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("EPSOLVER_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- sources


def source_density(rho0, pack: DeformationPack) -> np.ndarray:
    """s^i = Fstar[i, k] d_k(rho0 / J), shape (3, n1, n2, n3)."""
    g = pack.grid
    f = _rho_values(rho0) / pack.J.values
    return np.einsum("ik...,k...->i...", pack.Fstar.values, grad_array(f, g))


def source_rate(rho0, pack: DeformationPack, v: VectorField) -> np.ndarray:
    """Time derivative of s along velocity v."""
    g = pack.grid
    rho = _rho_values(rho0)
    J = pack.J.values
    Dv = grad_array(v.values, g)
    cof = pack.Fstar.values
    Jt = np.einsum("ik...,ik...->...", cof, Dv)
    cof_t = cofactor_rate(pack.F.values, Dv)
    df = grad_array(rho / J, g)
    dft = grad_array(-rho * Jt / J**2, g)
    return np.einsum("ik...,k...->i...", cof_t, df) + np.einsum("ik...,k...->i...", cof, dft)


# ---------------------------------------------------------------- closed-form planar integrals


def _corner_terms(x, y, a):
    """Antiderivative of 1/sqrt(x^2 + y^2 + a^2) over a rectangle corner, a >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rx = np.sqrt(x * x + a * a)
        ry = np.sqrt(y * y + a * a)
        R = np.sqrt(x * x + y * y + a * a)
        t1 = np.where(x != 0, x * np.arcsinh(y / np.where(rx > 0, rx, 1.0)), 0.0)
        t2 = np.where(y != 0, y * np.arcsinh(x / np.where(ry > 0, ry, 1.0)), 0.0)
        t3 = np.where(a > 0, a * np.arctan(x * y / np.where(a > 0, a * R, 1.0)), 0.0)
    return t1 + t2 - t3


def rect_integral(x0, x1, y0, y1, a):
    """Integral of 1/sqrt(x^2 + y^2 + a^2) over [x0, x1] x [y0, y1]."""
    a = np.abs(a)
    return (
        _corner_terms(x1, y1, a)
        - _corner_terms(x0, y1, a)
        - _corner_terms(x1, y0, a)
        + _corner_terms(x0, y0, a)
    )


def _line_term(x, y0, y1, a):
    """Integral over y in [y0, y1] of 1/sqrt(x^2 + y^2 + a^2)."""
    rho = np.sqrt(x * x + a * a)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(rho > 0, rho, 1.0)
        return np.arcsinh(y1 / safe) - np.arcsinh(y0 / safe)


def rect_derivatives(x0, x1, y0, y1, delta):
    """d/d delta of rect_integral, and d/du_1, d/du_2 for a rigid shift by -u."""
    a = np.abs(delta)

    def q(x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            R = np.sqrt(x * x + y * y + a * a)
            return np.where(a > 0, np.arctan(x * y / np.where(a > 0, a * R, 1.0)), 0.0)

    d_delta = -np.sign(delta) * (q(x1, y1) - q(x0, y1) - q(x1, y0) + q(x0, y0))
    d_u1 = -(_line_term(x1, y0, y1, a) - _line_term(x0, y0, y1, a))
    d_u2 = -(_line_term(y1, x0, x1, a) - _line_term(y0, x0, x1, a))
    return d_delta, d_u1, d_u2


# ---------------------------------------------------------------- self-cell rules


@lru_cache(maxsize=64)
def _pyramid_nodes(half1: float, half2: float, lo: float, hi: float, order: int):
    """Points y and weights for integrating degree -1 homogeneous f over a box.

    Uses int_box f = 1/2 sum_faces int_face f(y) (y . n) dA, with a
    Gauss-Legendre rule on each face.
    """
    gx, gw = np.polynomial.legendre.leggauss(order)
    bounds = [(-half1, half1), (-half2, half2), (lo, hi)]
    pts, wts = [], []
    for axis in range(3):
        for side, sign in ((0, -1.0), (1, 1.0)):
            plane = bounds[axis][side]
            dist = plane * sign
            if dist <= 0:
                continue
            others = [d for d in range(3) if d != axis]
            (a0, a1), (b0, b1) = bounds[others[0]], bounds[others[1]]
            ua = 0.5 * (a1 - a0) * gx + 0.5 * (a1 + a0)
            ub = 0.5 * (b1 - b0) * gx + 0.5 * (b1 + b0)
            wa = 0.5 * (a1 - a0) * gw
            wb = 0.5 * (b1 - b0) * gw
            UA, UB = np.meshgrid(ua, ub, indexing="ij")
            W = np.outer(wa, wb)
            y = np.zeros((UA.size, 3))
            y[:, axis] = plane
            y[:, others[0]] = UA.ravel()
            y[:, others[1]] = UB.ravel()
            pts.append(y)
            wts.append(0.5 * dist * W.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _box_inv_r_octant(a, b, c):
    """int_0^a int_0^b int_0^c 1/r, for a, b, c >= 0."""
    if a == 0 or b == 0 or c == 0:
        return 0.0
    r = np.sqrt(a * a + b * b + c * c)
    return (
        b * c * np.log((a + r) / np.hypot(b, c))
        + a * c * np.log((b + r) / np.hypot(a, c))
        + a * b * np.log((c + r) / np.hypot(a, b))
        - 0.5 * a * a * np.arctan(b * c / (a * r))
        - 0.5 * b * b * np.arctan(a * c / (b * r))
        - 0.5 * c * c * np.arctan(a * b / (c * r))
    )


def box_inv_r(half1: float, half2: float, lo: float, hi: float) -> float:
    """Closed-form integral of 1/|y| over [-half1, half1] x [-half2, half2] x [lo, hi]."""
    total = 0.0
    for c_len in (max(hi, 0.0), max(-lo, 0.0)):
        total += 4.0 * _box_inv_r_octant(half1, half2, c_len)
    return total


def _cell_bounds(grid: SlabGrid, i3: int) -> tuple[float, float, float, float]:
    h3 = grid.h3
    lo = 0.0 if i3 == 0 else -0.5 * h3
    hi = 0.0 if i3 == grid.n3 - 1 else 0.5 * h3
    return 0.5 * grid.h1, 0.5 * grid.h2, lo, hi


def selfcell_integrals(grid: SlabGrid, F_t: np.ndarray, Fdot_t, i3: np.ndarray, cfg: GravityConfig):
    """Self-cell integrals of 1/|F y| and of (F y).(Fdot y)/|F y|^3 for each target."""
    T = F_t.shape[0]
    S = np.zeros(T)
    Sd = np.zeros(T)
    for kind in np.unique(i3):
        sel = np.nonzero(i3 == kind)[0]
        bounds = _cell_bounds(grid, int(kind))
        if cfg.selfcell_rule == "analytic-cell":
            S[sel] = box_inv_r(*bounds)
            continue
        y, w = _pyramid_nodes(*bounds, cfg.subgrid_order)
        Fy = np.einsum("tij,qj->tqi", F_t[sel], y)
        nrm = np.sqrt(np.sum(Fy * Fy, axis=-1))
        S[sel] = (w / nrm).sum(axis=1)
        if Fdot_t is not None:
            Fdy = np.einsum("tij,qj->tqi", Fdot_t[sel], y)
            Sd[sel] = (w * np.sum(Fy * Fdy, axis=-1) / nrm**3).sum(axis=1)
    return S, Sd


# ---------------------------------------------------------------- kernel sums


def _planar_sum(grid, eta, s, cfg, v=None, sdot=None):
    """Plane-symmetric evaluation; returns G (3, n3) and optionally dG/dt."""
    M = cfg.image_layers
    c = cfg.kernel_constant
    e = eta[:, 0, 0, :]
    w3 = grid.weights3
    ws = s[:, 0, 0, :] * w3
    delta = e[2][:, None] - e[2][None, :]
    off1 = e[0][None, :] - e[0][:, None]
    off2 = e[1][None, :] - e[1][:, None]
    half = M + 0.5
    X0, X1, Y0, Y1 = -half + off1, half + off1, -half + off2, half + off2
    if cfg.far_field == "sheet":
        K = -2.0 * np.pi * np.abs(delta)
    else:
        K = rect_integral(X0, X1, Y0, Y1, delta)
    G = c * (K @ ws.T).T
    if v is None:
        return G, None
    vv = v[:, 0, 0, :]
    wsd = sdot[:, 0, 0, :] * w3
    dv3 = vv[2][:, None] - vv[2][None, :]
    if cfg.far_field == "sheet":
        Kd = -2.0 * np.pi * np.sign(delta) * dv3
    else:
        dd, du1, du2 = rect_derivatives(X0, X1, Y0, Y1, delta)
        du = (vv[0][:, None] - vv[0][None, :], vv[1][:, None] - vv[1][None, :])
        Kd = dd * dv3 + du1 * du[0] + du2 * du[1]
    Gd = c * ((K @ wsd.T).T + (Kd @ ws.T).T)
    return G, Gd


def _sheet_tail(grid, eta, s, cfg, targets, v=None, sdot=None):
    """Far-field contribution of images beyond M for a general grid."""
    M = cfg.image_layers
    h1, h2 = grid.h1, grid.h2
    mesh = grid.mesh()
    W = grid.weights
    S_layer = np.einsum("ixyz,xyz->iz", s, W)
    a_layer = (eta - mesh).mean(axis=(1, 2))
    eflat = eta.reshape(3, -1)[:, targets]
    X0 = -M - 0.5 * h1 + a_layer[0][None, :] - eflat[0][:, None]
    X1 = M + 1.0 - 0.5 * h1 + a_layer[0][None, :] - eflat[0][:, None]
    Y0 = -M - 0.5 * h2 + a_layer[1][None, :] - eflat[1][:, None]
    Y1 = M + 1.0 - 0.5 * h2 + a_layer[1][None, :] - eflat[1][:, None]
    eta3_layer = eta[2].mean(axis=(0, 1))
    delta = eflat[2][:, None] - eta3_layer[None, :]
    E = -2.0 * np.pi * np.abs(delta) - rect_integral(X0, X1, Y0, Y1, delta)
    tail = E @ S_layer.T
    if v is None:
        return tail, None
    Sd_layer = np.einsum("ixyz,xyz->iz", sdot, W)
    vflat = v.reshape(3, -1)[:, targets]
    v_layer = v.mean(axis=(1, 2))
    dd, du1, du2 = rect_derivatives(X0, X1, Y0, Y1, delta)
    rate = (
        (-2.0 * np.pi * np.sign(delta) - dd) * (vflat[2][:, None] - v_layer[2][None, :])
        - du1 * (vflat[0][:, None] - v_layer[0][None, :])
        - du2 * (vflat[1][:, None] - v_layer[1][None, :])
    )
    tail_d = E @ Sd_layer.T + rate @ S_layer.T
    return tail, tail_d


def _direct_chunk(args):
    (tidx, eflat, ws, M, vflat, wsd) = args
    et = eflat[:, tidx].T
    d = et[:, None, :] - eflat.T[None, :, :]
    B = tidx.size
    G = np.zeros((B, 3))
    Gd = np.zeros((B, 3)) if vflat is not None else None
    if vflat is not None:
        dv = vflat[:, tidx].T[:, None, :] - vflat.T[None, :, :]
    rows = np.arange(B)
    for m in range(-M, M + 1):
        for n in range(-M, M + 1):
            dx = d[..., 0] - m
            dy = d[..., 1] - n
            dz = d[..., 2]
            r2 = dx * dx + dy * dy + dz * dz
            if m == 0 and n == 0:
                r2[rows, tidx] = np.inf
            inv = 1.0 / np.sqrt(r2)
            G += inv @ ws
            if Gd is not None:
                q = (dx * dv[..., 0] + dy * dv[..., 1] + dz * dv[..., 2]) * inv**3
                Gd += inv @ wsd - q @ ws
    return G, Gd


def _direct_sum(grid, eta, s, cfg, targets, pack, v=None, sdot=None):
    eflat = eta.reshape(3, -1)
    W = grid.weights.ravel()
    ws = (s.reshape(3, -1) * W).T.copy()
    wsd = (sdot.reshape(3, -1) * W).T.copy() if v is not None else None
    vflat = v.reshape(3, -1) if v is not None else None
    chunks = [targets[i : i + CHUNK] for i in range(0, targets.size, CHUNK)]
    jobs = [(c, eflat, ws, cfg.image_layers, vflat, wsd) for c in chunks]
    nthreads = worker_count()
    if nthreads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(_direct_chunk, jobs))
    else:
        results = [_direct_chunk(j) for j in jobs]
    G = np.concatenate([r[0] for r in results]).T
    Gd = np.concatenate([r[1] for r in results]).T if v is not None else None

    F = pack.F.values.reshape(3, 3, -1)[:, :, targets].transpose(2, 0, 1)
    Fdot = None
    if v is not None:
        Fdot = grad_array(v.reshape((3,) + grid.shape), grid).reshape(3, 3, -1)[:, :, targets].transpose(2, 0, 1)
    i3 = np.unravel_index(targets, grid.shape)[2]
    S, Sd = selfcell_integrals(grid, F, Fdot, i3, cfg)
    st = s.reshape(3, -1)[:, targets]
    G = G + st * S
    if v is not None:
        sdt = sdot.reshape(3, -1)[:, targets]
        Gd = Gd + sdt * S - st * Sd
    return G, Gd


def _evaluate(rho0, eta: VectorField, pack: DeformationPack, cfg: GravityConfig, targets, v=None):
    grid = eta.grid
    s = source_density(rho0, pack)
    sdot = source_rate(rho0, pack, v) if v is not None else None
    e = eta.values
    vv = v.values if v is not None else None
    c = cfg.kernel_constant
    if grid.planar:
        G, Gd = _planar_sum(grid, e, s, cfg, vv, sdot)
        G = G.reshape(3, 1, 1, -1)
        Gd = Gd.reshape(3, 1, 1, -1) if Gd is not None else None
        if targets is None:
            return G, Gd
        flat = lambda a: a.reshape(3, -1)[:, targets]  # noqa: E731
        return flat(G), (flat(Gd) if Gd is not None else None)
    tg = np.arange(grid.size) if targets is None else np.asarray(targets)
    G, Gd = _direct_sum(grid, e, s, cfg, tg, pack, vv, sdot)
    G = c * G
    Gd = c * Gd if Gd is not None else None
    tail, tail_d = _sheet_tail(grid, e, s, cfg, tg, vv, sdot)
    if cfg.far_field == "sheet":
        G = G + c * tail.T
        if Gd is not None:
            Gd = Gd + c * tail_d.T
    else:
        scale = max(np.max(np.abs(G)), 1e-300)
        if np.max(np.abs(c * tail)) > 1e-3 * scale:
            warnings.warn(
                f"image_layers={cfg.image_layers} leaves a far-field contribution of "
                f"{np.max(np.abs(c * tail)) / scale:.2e} relative",
                RuntimeWarning,
                stacklevel=3,
            )
    if targets is None:
        G = G.reshape((3,) + grid.shape)
        Gd = Gd.reshape((3,) + grid.shape) if Gd is not None else None
    return G, Gd


def force(rho0, eta: VectorField, pack: DeformationPack, cfg: GravityConfig, targets=None):
    """Gravitational force G.  Returns a VectorField, or a (3, T) array for flat node targets."""
    grid = eta.grid
    if not cfg.enabled:
        return VectorField(grid, 0.0) if targets is None else np.zeros((3, len(targets)))
    G, _ = _evaluate(rho0, eta, pack, cfg, targets)
    return VectorField(grid, G) if targets is None else G


def force_time_derivative(rho0, eta: VectorField, v: VectorField, pack: DeformationPack, cfg: GravityConfig, targets=None):
    """dG/dt along the velocity v (exact derivative of the discrete force)."""
    grid = eta.grid
    if not cfg.enabled:
        return VectorField(grid, 0.0) if targets is None else np.zeros((3, len(targets)))
    _, Gd = _evaluate(rho0, eta, pack, cfg, targets, v=v)
    return VectorField(grid, Gd) if targets is None else Gd


def force_and_rate(rho0, eta, v, pack, cfg):
    grid = eta.grid
    if not cfg.enabled:
        z = VectorField(grid, 0.0)
        return z, z
    G, Gd = _evaluate(rho0, eta, pack, cfg, None, v=v)
    return VectorField(grid, G), VectorField(grid, Gd)


def poisson_identity_residual(G: VectorField, rho0, pack: DeformationPack) -> ScalarField:
    """Fstar[i, j] d_j G^i + rho0.

    The force is the Eulerian gradient of the potential Phi with
    -Delta_eta Phi = rho0 / J, so Fstar[i, j] G^i_{,j} = -rho0.
    """
    DG = grad_array(G.values, G.grid)
    lhs = np.einsum("ij...,ij...->...", pack.Fstar.values, DG)
    return ScalarField(G.grid, lhs + _rho_values(rho0))


# ---------------------------------------------------------------- brute-force oracle


def _square_radius(theta, X0, X1, Y0, Y1):
    """Distance from the origin to the boundary of a rectangle containing it."""
    ct, st = np.cos(theta), np.sin(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(ct > 0, X1 / ct, np.where(ct < 0, X0 / ct, np.inf))
        ty = np.where(st > 0, Y1 / st, np.where(st < 0, Y0 / st, np.inf))
    return np.minimum(tx, ty)


def _adaptive_1d(fn, a: float, b: float, tol: float, max_levels: int = 24) -> float:
    """Composite midpoint rule, doubled until successive levels agree to tol."""
    n = 16
    prev = None
    scale = None
    for _ in range(max_levels):
        x = a + (np.arange(n) + 0.5) * (b - a) / n
        val = float(np.sum(fn(x)) * (b - a) / n)
        if prev is not None:
            # Richardson-corrected estimate of the remaining error
            scale = max(abs(val), scale or 0.0, 1e-300)
            if abs(val - prev) / 3.0 <= tol * scale:
                return val + (val - prev) / 3.0
        prev = val
        n *= 2
    raise OracleDiverged(f"1D midpoint quadrature did not reach {tol:g}")


def _plane_kernel(delta: float, M: int, x_t: np.ndarray, far_field: str, tol: float) -> float:
    """Tangential integral of 1/sqrt(r^2 + delta^2) matching the force's image truncation.

    "sheet": the full plane minus the divergent constant, -2 pi |delta|.
    "none": the square of images |m|, |n| <= M, written in polar form about
    the target as int dtheta (sqrt(R(theta)^2 + delta^2) - |delta|).
    """
    if far_field == "sheet":
        return -2.0 * np.pi * abs(delta)
    X0, X1 = -M - 0.5 - x_t[0], M + 0.5 - x_t[0]
    Y0, Y1 = -M - 0.5 - x_t[1], M + 0.5 - x_t[1]
    corners = np.sort(np.mod(np.arctan2([Y0, Y0, Y1, Y1], [X0, X1, X1, X0]), 2 * np.pi))
    edges = np.concatenate([corners, [corners[0] + 2 * np.pi]])

    def g(theta):
        R = _square_radius(theta, X0, X1, Y0, Y1)
        return np.sqrt(R * R + delta * delta) - abs(delta)

    return sum(_adaptive_1d(g, a, b, tol) for a, b in zip(edges[:-1], edges[1:]))


def _complex_step_gradient(fn, z: np.ndarray, h: float = 1e-30) -> np.ndarray:
    out = np.empty_like(z)
    for k in range(3):
        zc = z.astype(complex)
        zc[k] += 1j * h
        out[k] = np.imag(fn(zc)) / h
    return out


def brute_force_oracle(
    rho0_fn,
    points: np.ndarray,
    length3: float,
    cfg: GravityConfig,
    tol: float = 1e-6,
    max_levels: int = 30,
    tangential_samples: int = 32,
) -> np.ndarray:
    """Independent evaluation of the force at up to 64 points, for eta = identity.

    rho0_fn(z) takes reference points of shape (3, P) and must accept complex
    input (the source is its gradient, taken by complex-step
    differentiation).  The source is split into its tangential mean and the
    remainder.  The mean part is integrated in x3 by a midpoint rule
    refined until successive levels agree to tol, against the tangentially
    integrated kernel; the remainder is integrated over the near images by
    adaptive octree midpoint cubature.  Remainder images farther than three
    periods are dropped: they decay like exp(-2 pi distance).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] != 3 and pts.shape[-1] == 3:
        pts = pts.T
    if pts.shape[1] > 64:
        raise ValueError("brute_force_oracle takes at most 64 points")
    M = cfg.image_layers
    c = cfg.kernel_constant
    if not cfg.enabled:
        return np.zeros_like(pts)

    n_t = tangential_samples
    tq = (np.arange(n_t) + 0.0) / n_t
    T1, T2 = np.meshgrid(tq, tq, indexing="ij")

    def source(z):
        return _complex_step_gradient(rho0_fn, z)

    def layer_mean(z3):
        z3 = np.atleast_1d(np.asarray(z3, dtype=float))
        Z = np.stack(
            [
                np.broadcast_to(T1[..., None], T1.shape + z3.shape),
                np.broadcast_to(T2[..., None], T1.shape + z3.shape),
                np.broadcast_to(z3, T1.shape + z3.shape),
            ]
        ).reshape(3, -1)
        return source(Z)[2].reshape(T1.shape + z3.shape).mean(axis=(0, 1))

    cheb = np.polynomial.chebyshev.Chebyshev.interpolate(layer_mean, 96, domain=[0.0, length3])

    def mean_source3(z3):
        return cheb(np.asarray(z3, dtype=float))

    def fluctuation(z):
        s = source(z)
        s[2] -= mean_source3(z[2])
        return s

    out = np.zeros((3, pts.shape[1]))
    for p in range(pts.shape[1]):
        x = pts[:, p]
        if cfg.far_field == "sheet":
            kern = lambda dz: -2.0 * np.pi * np.abs(dz)  # noqa: E731
        else:
            kern = np.vectorize(lambda dz, x=x: _plane_kernel(dz, M, x, "none", tol * 1e-2))
        sb = lambda z3, x=x, kern=kern: mean_source3(z3) * kern(x[2] - z3)  # noqa: E731
        pieces = [(0.0, x[2]), (x[2], length3)]
        out[2, p] = sum(_adaptive_1d(sb, a, b, tol) for a, b in pieces if b - a > 0)
    floor = max(float(np.max(np.abs(out[2]))), 1e-12)
    for p in range(pts.shape[1]):
        out[:, p] += _oracle_fluctuation(fluctuation, pts[:, p], length3, min(M, 3), tol, max_levels, floor)
    return c * out


def _oracle_fluctuation(src, x, length3, M, tol, max_levels, floor):
    lo = np.array([np.floor(x[0]) - M, np.floor(x[1]) - M, 0.0])
    hi = lo + np.array([2 * M + 1.0, 2 * M + 1.0, length3])
    n_start = np.array([2 * (2 * M + 1), 2 * (2 * M + 1), 8])
    axes = [np.linspace(lo[d], hi[d], n_start[d] + 1) for d in range(3)]
    A, Bm, C = np.meshgrid(*[0.5 * (a[:-1] + a[1:]) for a in axes], indexing="ij")
    centers = np.stack([A.ravel(), Bm.ravel(), C.ravel()])
    sizes = np.tile(((hi - lo) / n_start)[:, None], (1, centers.shape[1]))
    volume = float(np.prod(hi - lo))

    def cell_values(cen, siz):
        if cen.shape[1] > 200_000:
            return np.concatenate(
                [cell_values(cen[:, i : i + 200_000], siz[:, i : i + 200_000]) for i in range(0, cen.shape[1], 200_000)],
                axis=1,
            )
        zc = cen.copy()
        zc[0] = np.mod(zc[0], 1.0)
        zc[1] = np.mod(zc[1], 1.0)
        d = x[:, None] - cen
        r = np.sqrt(np.sum(d * d, axis=0))
        with np.errstate(divide="ignore"):
            k = np.where(r > 0, 1.0 / r, 0.0)
        return src(zc) * (k * np.prod(siz, axis=0))

    offs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float).T

    def split(cen, siz):
        cc = cen[:, :, None] + 0.25 * siz[:, :, None] * offs[:, None, :]
        cs = np.repeat(0.5 * siz[:, :, None], 8, axis=2)
        return cc.reshape(3, -1), cs.reshape(3, -1)

    def corrected(cen, siz):
        """Two-level midpoint values with the h^2 term removed by Richardson extrapolation."""
        coarse = cell_values(cen, siz)
        cc, cs = split(cen, siz)
        fine = cell_values(cc, cs).reshape(3, -1, 8).sum(axis=2)
        return fine + (fine - coarse) / 3.0

    value = corrected(centers, sizes)
    scale = max(float(np.max(np.abs(value.sum(axis=1)))), floor)
    done = np.zeros(3)
    active_c, active_s, active_v = centers, sizes, value
    prev_total = value.sum(axis=1)
    for _ in range(max_levels):
        cc, cs = split(active_c, active_s)
        child = corrected(cc, cs).reshape(3, -1, 8)
        refined = child.sum(axis=2)
        err = np.max(np.abs(refined - active_v), axis=0)
        total = done + refined.sum(axis=1)
        change = float(np.max(np.abs(total - prev_total)))
        if change <= tol * scale and err.sum() <= tol * scale:
            return total
        prev_total = total
        # equidistributed share of the tolerance per active cell
        accept = err <= tol * scale / err.size
        done = done + refined[:, accept].sum(axis=1)
        keep = np.nonzero(~accept)[0]
        if keep.size == 0:
            return total
        active_c = cc.reshape(3, -1, 8)[:, keep].reshape(3, -1)
        active_s = cs.reshape(3, -1, 8)[:, keep].reshape(3, -1)
        active_v = child[:, keep].reshape(3, -1)
        if active_c.shape[1] > 1_000_000:
            break
    raise OracleDiverged(f"adaptive cubature did not converge to {tol:g}")
