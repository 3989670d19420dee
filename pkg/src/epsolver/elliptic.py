"""Slab Poisson solver, Hodge reconstruction, Galerkin solver for the X-equation and the fixed-point defect."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_banded

from .errors import CoercivityViolation, CompatibilityDefect, MassMatrixDegenerate, StageError
from .grid import ScalarField, SlabGrid, VectorField, curl_array, diff, face_integral, grad_array, integrate, l2_norm
from .kinematics import EPS, curl_from_jacobian, eulerian_jacobian, finv_rate, jacobian_rate, cofactor_time_rate

COERCIVITY_FLOOR = 7.0 / 8.0

# ---------------------------------------------------------------- slab Poisson


def _wavenumbers(grid: SlabGrid) -> np.ndarray:
    k1 = 2 * np.pi * np.fft.fftfreq(grid.n1, d=1.0 / grid.n1)
    k2 = 2 * np.pi * np.fft.fftfreq(grid.n2, d=1.0 / grid.n2)
    return k1[:, None] ** 2 + k2[None, :] ** 2


def _face(data, grid: SlabGrid) -> np.ndarray:
    return np.broadcast_to(np.asarray(data, dtype=float), (grid.n1, grid.n2)).copy()


def slab_poisson(
    rhs: np.ndarray,
    grid: SlabGrid,
    bc: str = "dirichlet",
    bottom=0.0,
    top=0.0,
    tol: float = 1e-6,
) -> ScalarField:
    """Solve Laplace(phi) = rhs, Fourier in x1, x2 and second-order differences in x3.

    Dirichlet data are face values; Neumann data are d phi / d x3 on each face.
    A Neumann problem needs trapz(rhs) = int(top) - int(bottom); a defect up to
    tol times the data scale is removed from the mean mode, a larger one raises
    CompatibilityDefect.  The Neumann solution has zero mean.
    """
    if bc not in ("dirichlet", "neumann"):
        raise ValueError("bc must be 'dirichlet' or 'neumann'")
    n3 = grid.n3
    h = grid.h3
    f = np.asarray(rhs, dtype=float)
    gb = _face(bottom, grid)
    gt = _face(top, grid)
    if bc == "neumann":
        defect = integrate(f, grid) - (face_integral(gt, grid) - face_integral(gb, grid))
        scale = max(integrate(np.abs(f), grid), face_integral(np.abs(gt) + np.abs(gb), grid), 1e-300)
        if abs(defect) > tol * scale:
            raise CompatibilityDefect(0.5 * defect, tol * scale)
        f = f - defect / grid.length3
    fh = np.fft.fft2(f, axes=(0, 1))
    gbh = np.fft.fft2(gb)
    gth = np.fft.fft2(gt)
    K2 = _wavenumbers(grid)
    out = np.empty_like(fh)
    inv_h2 = 1.0 / (h * h)
    for i in range(grid.n1):
        for j in range(grid.n2):
            k2 = K2[i, j]
            ab = np.zeros((3, n3))
            ab[0, 1:] = inv_h2
            ab[1, :] = -2.0 * inv_h2 - k2
            ab[2, :-1] = inv_h2
            b = fh[i, j].copy()
            if bc == "dirichlet":
                ab[1, 0] = ab[1, -1] = 1.0
                ab[0, 1] = 0.0
                ab[2, -2] = 0.0
                b[0] = gbh[i, j]
                b[-1] = gth[i, j]
            else:
                ab[0, 1] = 2.0 * inv_h2
                ab[2, -2] = 2.0 * inv_h2
                b[0] = b[0] + 2.0 * gbh[i, j] / h
                b[-1] = b[-1] - 2.0 * gth[i, j] / h
                if k2 == 0.0:
                    # singular mode: pin phi_0 = 0, the dropped row holds by compatibility
                    ab[1, 0] = 1.0
                    ab[0, 1] = 0.0
                    b[0] = 0.0
            sol = solve_banded((1, 1), ab, np.stack([b.real, b.imag], axis=1))
            out[i, j] = sol[:, 0] + 1j * sol[:, 1]
    phi = np.fft.ifft2(out, axes=(0, 1)).real
    if bc == "neumann":
        phi = phi - integrate(phi, grid) / grid.volume
    return ScalarField(grid, phi)


# ---------------------------------------------------------------- Hodge reconstruction


@dataclass(frozen=True)
class HodgeResult:
    field: VectorField
    shift: float
    div_defect: float


def hodge_reconstruct(
    div: ScalarField,
    curl_data: VectorField,
    trace: np.ndarray,
    means: tuple[float, float],
    tol: float = 1e-2,
    project_curl: bool = True,
) -> HodgeResult:
    """Field w with Div w = div, curl w = curl_data, w^3 = trace on the faces, int w^a = means.

    trace has shape (2, n1, n2) with the bottom face first.  w = D phi + curl Psi + (harmonic constant):
    phi solves the Neumann problem with the trace, Psi^1, Psi^2 vanish on the faces and
    d3 Psi^3 = 0 there, so curl Psi carries no normal trace and no tangential mean.
    The flux defect of the data is absorbed by a constant shift of the trace along the
    outward normal (reported); beyond tol times the data scale it raises CompatibilityDefect.
    With project_curl the curl data are first made divergence-free by a gradient correction.
    """
    g = div.grid
    f = div.values
    tr = np.asarray(trace, dtype=float)
    gb, gt = tr[0], tr[1]
    area = 1.0
    defect = integrate(f, g) - (face_integral(gt, g) - face_integral(gb, g))
    shift = 0.5 * defect / area
    scale = max(integrate(np.abs(f), g), face_integral(np.abs(gt) + np.abs(gb), g), 1e-300)
    if abs(shift) > tol * scale:
        raise CompatibilityDefect(shift, tol * scale)
    phi = slab_poisson(f, g, "neumann", gb - shift, gt + shift, tol=1e-8)
    om = curl_data.values
    div_defect = 0.0
    if project_curl:
        dom = sum(diff(om[k], k, g) for k in range(3))
        div_defect = l2_norm(ScalarField(g, dom))
        if div_defect > 0:
            chi = slab_poisson(dom, g, "dirichlet")
            om = om - grad_array(chi.values, g)
    psi = np.empty_like(om)
    psi[0] = slab_poisson(-om[0], g, "dirichlet").values
    psi[1] = slab_poisson(-om[1], g, "dirichlet").values
    m3 = integrate(om[2], g) / g.volume
    psi[2] = slab_poisson(-(om[2] - m3), g, "neumann", tol=1e-6).values
    w = grad_array(phi.values, g) + curl_array(psi, g)
    for a in range(2):
        w[a] += (means[a] - integrate(w[a], g)) / g.volume
    return HodgeResult(VectorField(g, w), float(shift), float(div_defect))


def face_minus_half_sq(face_values: np.ndarray, grid: SlabGrid) -> float:
    """|dbar f|^2_{-1/2} on the faces: sum of |k|^2 (1 + |k|^2)^(-1/2) |f_k|^2 over Fourier modes."""
    fh = np.fft.fft2(np.asarray(face_values, dtype=float), axes=(-2, -1)) / (grid.n1 * grid.n2)
    K2 = _wavenumbers(grid)
    return float(np.sum(K2 / np.sqrt(1.0 + K2) * np.abs(fh) ** 2))


def hodge_bound_ratio(w: VectorField) -> float:
    """||w||_1 / (||w||_0 + ||curl w||_0 + ||Div w||_0 + |dbar w^3|_{-1/2})."""
    from .grid import curl, divergence, sobolev_norm

    g = w.grid
    tr = np.stack([w.values[2][..., 0], w.values[2][..., -1]])
    denom = l2_norm(w) + l2_norm(curl(w)) + l2_norm(divergence(w)) + np.sqrt(face_minus_half_sq(tr, g))
    return sobolev_norm(w, 1) / denom


# ---------------------------------------------------------------- Galerkin basis


@dataclass(frozen=True)
class GalerkinBasis:
    """Real Dirichlet eigenfunctions T(x1, x2) sin(m pi x3 / L3).

    T runs over 1 and cos/sin of 2 pi (k1 x1 + k2 x2) for (k1, k2) in a half plane
    with |k1|, |k2| <= kmax; m = 1..mmax.  Each mode is (k1, k2, m, kind) with kind
    'c' or 's'.
    """

    grid: SlabGrid
    kmax: int = 2
    mmax: int = 12

    def __post_init__(self):
        g = self.grid
        if self.mmax < 1:
            raise ValueError("mmax must be >= 1")
        if self.mmax > g.n3 - 2:
            raise ValueError("mmax exceeds the resolvable normal modes")
        k1max = min(self.kmax, (g.n1 - 1) // 2)
        k2max = min(self.kmax, (g.n2 - 1) // 2)
        object.__setattr__(self, "_kcaps", (k1max, k2max))

    @property
    def modes(self) -> list[tuple[int, int, int, str]]:
        k1max, k2max = self._kcaps
        tang = [(0, 0, "c")]
        for k1 in range(0, k1max + 1):
            for k2 in range(-k2max, k2max + 1):
                if k1 == 0 and k2 <= 0:
                    continue
                tang.append((k1, k2, "c"))
                tang.append((k1, k2, "s"))
        return [(k1, k2, m, kind) for m in range(1, self.mmax + 1) for (k1, k2, kind) in tang]

    def __len__(self) -> int:
        return len(self.modes)

    def eigenvalues(self) -> np.ndarray:
        L = self.grid.length3
        return np.array([(2 * np.pi * k1) ** 2 + (2 * np.pi * k2) ** 2 + (m * np.pi / L) ** 2 for k1, k2, m, _ in self.modes])

    def _factors(self, k1, k2, m, kind):
        X1, X2, X3 = self.grid.coords()
        L = self.grid.length3
        th = 2 * np.pi * (k1 * X1 + k2 * X2)
        T = np.cos(th) if kind == "c" else np.sin(th)
        dT = -np.sin(th) if kind == "c" else np.cos(th)
        S = np.sin(m * np.pi * X3 / L)
        dS = (m * np.pi / L) * np.cos(m * np.pi * X3 / L)
        return T, dT, S, dS

    def values(self) -> np.ndarray:
        out = np.empty((len(self),) + self.grid.shape)
        for n, mode in enumerate(self.modes):
            T, _, S, _ = self._factors(*mode)
            out[n] = T * S
        return out

    def gradients(self) -> np.ndarray:
        """Exact gradients, shape (nb, 3, n1, n2, n3)."""
        out = np.empty((len(self), 3) + self.grid.shape)
        for n, (k1, k2, m, kind) in enumerate(self.modes):
            T, dT, S, dS = self._factors(k1, k2, m, kind)
            out[n, 0] = 2 * np.pi * k1 * dT * S
            out[n, 1] = 2 * np.pi * k2 * dT * S
            out[n, 2] = T * dS
        return out

    def normal_derivative_faces(self) -> np.ndarray:
        """d3 e on the faces, shape (nb, 2, n1, n2)."""
        gr = self.gradients()[:, 2]
        return np.stack([gr[..., 0], gr[..., -1]], axis=1)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return np.tensordot(coeffs, self.values(), axes=1)


# ---------------------------------------------------------------- X-problem


@dataclass(frozen=True)
class XProblem:
    """J^gamma X_t / weight - gamma kappa [B^{jk} X_{,k}]_{,j} + kappa r X = W, X = 0 on the faces.

    weight: rho0 (gamma = 2), omega0, or any weight positive inside.
    jbar: J; bbar: B^{jk} = Fstar[i, j] Finv[k, i], shape (3, 3, n1, n2, n3).
    reaction: r, defaults to jbar.  forcing: callable t -> field, or None.
    """

    grid: SlabGrid
    weight: np.ndarray
    jbar: np.ndarray
    bbar: np.ndarray
    kappa: float
    x0: np.ndarray
    forcing: Callable[[float], np.ndarray] | None = None
    gamma: float = 2.0
    reaction: np.ndarray | None = None
    coercivity_floor: float = COERCIVITY_FLOOR

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        w = np.asarray(self.weight, dtype=float)
        if np.any(w[..., 1:-1] <= 0):
            raise ValueError("weight must be positive inside the slab")
        c = self.coercivity()
        if c < self.coercivity_floor - 1e-12:
            raise CoercivityViolation(c, self.coercivity_floor)

    def coercivity(self) -> float:
        B = np.moveaxis(np.asarray(self.bbar, dtype=float), (0, 1), (-2, -1))
        Bs = 0.5 * (B + np.swapaxes(B, -1, -2))
        return float(np.linalg.eigvalsh(Bs).min())

    @property
    def reaction_field(self) -> np.ndarray:
        return np.asarray(self.jbar if self.reaction is None else self.reaction, dtype=float)

    def forcing_at(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.grid.shape)
        return np.asarray(self.forcing(t), dtype=float)


def coefficients_from_pack(pack) -> tuple[np.ndarray, np.ndarray]:
    """(J, B) with B^{jk} = Fstar[i, j] Finv[k, i] = J (Finv Finv^T)[j, k]."""
    A = pack.Finv.values
    J = pack.J.values
    B = np.einsum("ji...,ki...->jk...", A, A) * J
    return J, B


def verification_problem(grid: SlabGrid, kappa: float, gamma: float = 2.0) -> XProblem:
    """weight = 1, J = 1, B = I, X0 = sin(pi x3 / L3), no forcing."""
    one = np.ones(grid.shape)
    B = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        B[i, i] = 1.0
    x0 = np.broadcast_to(np.sin(np.pi * grid.x3 / grid.length3), grid.shape).copy()
    return XProblem(grid, one, one, B, kappa, x0, None, gamma)


@dataclass(frozen=True)
class GalerkinSystem:
    mass: np.ndarray
    stiffness: np.ndarray
    gram: np.ndarray
    h1: np.ndarray
    alpha: float | None


def weight_ratio(values: np.ndarray, weight: np.ndarray, grid: SlabGrid, face_normal: np.ndarray | None = None) -> np.ndarray:
    """e / weight on the nodes, with face values from the limit d3 e / d3 weight."""
    w = np.asarray(weight, dtype=float)
    out = np.zeros_like(values)
    out[..., 1:-1] = values[..., 1:-1] / w[..., 1:-1]
    if face_normal is not None:
        dw = diff(w, 2, grid)
        with np.errstate(divide="ignore", invalid="ignore"):
            for idx, j in ((0, 0), (1, -1)):
                face_ok = np.abs(w[..., j]) < 1e-14 * max(float(np.abs(w).max()), 1e-300)
                lim = np.where(np.abs(dw[..., j]) > 0, face_normal[:, idx] / dw[..., j], 0.0)
                direct = values[..., j] / np.where(face_ok, 1.0, w[..., j])
                out[..., j] = np.where(face_ok, lim, direct)
    return out


def assemble(problem: XProblem, basis: GalerkinBasis) -> GalerkinSystem:
    """Mass (J^gamma e_m / weight, e_l), stiffness gamma kappa (B De_m, De_l) + kappa (r e_m, e_l).

    Product trapezoid quadrature; the mass integrand e_l e_m / weight vanishes on the
    faces because the face value of e_l / weight is finite and e_m = 0 there.
    """
    g = problem.grid
    E = basis.values()
    D = basis.gradients()
    wq = g.weights
    nb = E.shape[0]
    Ew = E.reshape(nb, -1)
    ratio = weight_ratio(E, problem.weight, g, basis.normal_derivative_faces())
    Jg = problem.jbar ** problem.gamma
    mass = (ratio * Jg * wq).reshape(nb, -1) @ Ew.T
    mass = 0.5 * (mass + mass.T)
    d = np.diag(mass)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        bad = int(np.argmin(np.where(np.isfinite(d), d, -np.inf)))
        raise MassMatrixDegenerate(bad, float(d[bad]))
    BD = np.einsum("jk...,nk...->nj...", problem.bbar, D)
    Dq = (D * wq).reshape(nb, -1)
    stiff = problem.gamma * problem.kappa * (Dq @ BD.reshape(nb, -1).T)
    r = problem.reaction_field
    stiff = stiff + problem.kappa * (Ew * (r * wq).ravel()) @ Ew.T
    stiff = 0.5 * (stiff + stiff.T)
    gram = (Ew * wq.ravel()) @ Ew.T
    flat_stiff = Dq @ D.reshape(nb, -1).T
    h1 = gram + flat_stiff
    cB = problem.coercivity()
    r_min = float(r.min())
    alpha = None
    if r_min >= 0:
        lam1 = (np.pi / g.length3) ** 2
        alpha = problem.kappa * max(min(problem.gamma * cB, r_min), problem.gamma * cB / (1.0 + 1.0 / lam1))
    return GalerkinSystem(mass, stiff, gram, h1, alpha)


LEDGER_HEADER = ("t", "mass_norm", "dissipation", "lhs", "initial", "forcing", "rhs")


@dataclass
class XSolution:
    basis: GalerkinBasis
    times: np.ndarray
    coeffs: np.ndarray
    ledger: list = field(default_factory=list)
    system: GalerkinSystem | None = None

    def field_at(self, n: int) -> np.ndarray:
        return self.basis.synthesize(self.coeffs[n])

    def ledger_ok(self, rtol: float = 1e-12) -> bool:
        return all(row[3] <= row[6] * (1 + rtol) + 1e-300 for row in self.ledger)

    def ledger_csv(self) -> str:
        lines = [",".join(LEDGER_HEADER)]
        for row in self.ledger:
            lines.append(",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def project(values: np.ndarray, basis: GalerkinBasis, gram: np.ndarray | None = None) -> np.ndarray:
    """L2 projection onto the span (trapezoid inner product)."""
    g = basis.grid
    E = basis.values().reshape(len(basis), -1)
    wq = g.weights.ravel()
    if gram is None:
        gram = (E * wq) @ E.T
    b = E @ (np.asarray(values, dtype=float).ravel() * wq)
    return np.linalg.solve(gram, b)


def solve_x(problem: XProblem, basis: GalerkinBasis, T: float, dt: float, x0_coeffs: np.ndarray | None = None) -> XSolution:
    """Implicit Euler in the Galerkin coefficients: (M + dt K) a^{n+1} = M a^n + dt b^{n+1}.

    Ledger rows at every step, with H the H^1 Gram matrix on the span, |b|_* = (b^T H^-1 b)^(1/2)
    the dual norm of the forcing on the span and alpha = kappa min(gamma c_B, r_min) (or the
    Poincare form when larger):
      lhs = a^T M a + alpha sum dt |a|_H^2,  rhs = a0^T M a0 + (1/alpha) sum dt |b|_*^2.
    The implicit Euler step makes lhs <= rhs hold exactly in exact arithmetic.
    """
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    g = problem.grid
    sysm = assemble(problem, basis)
    E = basis.values().reshape(len(basis), -1)
    wq = g.weights.ravel()
    a = project(problem.x0, basis, sysm.gram) if x0_coeffs is None else np.asarray(x0_coeffs, dtype=float)
    nsteps = int(np.ceil(T / dt - 1e-12))
    dt = T / nsteps
    try:
        lhs_fac = cho_factor(sysm.mass + dt * sysm.stiffness)
        h1_fac = cho_factor(sysm.h1)
    except np.linalg.LinAlgError as exc:
        d = np.diag(sysm.mass)
        bad = int(np.argmin(d))
        raise MassMatrixDegenerate(bad, float(d[bad])) from exc
    times = [0.0]
    coeffs = [a.copy()]
    initial = float(a @ sysm.mass @ a)
    alpha = sysm.alpha
    diss = 0.0
    forc = 0.0
    ledger = [(0.0, initial, 0.0, initial, initial, 0.0, initial)]
    for n in range(1, nsteps + 1):
        t = n * dt
        b = E @ (problem.forcing_at(t).ravel() * wq)
        a = cho_solve(lhs_fac, sysm.mass @ a + dt * b)
        times.append(t)
        coeffs.append(a.copy())
        mn = float(a @ sysm.mass @ a)
        if alpha is not None:
            diss += alpha * dt * float(a @ sysm.h1 @ a)
            forc += dt * float(b @ cho_solve(h1_fac, b)) / alpha
            ledger.append((t, mn, diss, mn + diss, initial, forc, initial + forc))
    return XSolution(basis, np.array(times), np.array(coeffs), ledger, sysm)


def decay_rate(solution: XSolution, mode_index: int = 0) -> float:
    """Observed exponential rate -ln(a(T) / a(0)) / T of one coefficient."""
    a0 = solution.coeffs[0, mode_index]
    aT = solution.coeffs[-1, mode_index]
    return float(-np.log(aT / a0) / solution.times[-1])


def random_forcing(grid: SlabGrid, seed: int, n_terms: int = 6) -> Callable[[float], np.ndarray]:
    """Seeded band-limited forcing W(x, t) = sum a_j cos(omega_j t + p_j) mode_j(x)."""
    rng = np.random.default_rng(seed)
    X1, X2, X3 = grid.coords()
    L = grid.length3
    terms = []
    for _ in range(n_terms):
        k1 = int(rng.integers(0, 2)) if grid.n1 > 1 else 0
        k2 = int(rng.integers(0, 2)) if grid.n2 > 1 else 0
        m = int(rng.integers(1, 5))
        amp = rng.normal()
        om = rng.uniform(0, 10)
        ph = rng.uniform(0, 2 * np.pi)
        shape = np.cos(2 * np.pi * (k1 * X1 + k2 * X2) + rng.uniform(0, 2 * np.pi)) * np.sin(m * np.pi * X3 / L)
        terms.append((amp, om, ph, np.broadcast_to(shape, grid.shape)))

    def forcing(t: float) -> np.ndarray:
        return sum(a * np.cos(om * t + ph) * s for a, om, ph, s in terms)

    return forcing


# ---------------------------------------------------------------- fixed-point defect


@dataclass(frozen=True)
class FixedPointReport:
    t: float
    defect: float
    c_t: float
    shift: float
    frak_residual: float
    x_step: float
    div_projection: float


def _fstar_div(vec: np.ndarray, pack) -> np.ndarray:
    """Fstar[i, j] d_j vec^i."""
    return np.einsum("ij...,ij...->...", pack.Fstar.values, grad_array(vec, pack.grid))


def x_forcing(state) -> np.ndarray:
    """Forcing of the X-equation implied by the evolution law at a state.

    W = -gamma J_t^2 / J + (d_t Fstar[i, j]) v^i_{,j} - Fstar[i, j] d_j (w + kappa q)^i,
    q^i = (d_t Finv[k, i]) pi_{,k} - G_t^i, pi = c_gamma omega0 J^(1-gamma).
    With this W, J^gamma X_t / omega0 - gamma kappa [B X_{,k}]_{,j} = W holds without a reaction term.
    """
    from .dynamics import enthalpy
    from .gravity import force_and_rate

    prof = state.model.profile
    pack = state.pack
    g = state.grid
    gam = prof.gamma
    J = pack.J.values
    Jt = jacobian_rate(state.v, pack).values
    Dv = grad_array(state.v.values, g)
    cof_t = cofactor_time_rate(state.v, pack)
    dpi = grad_array(enthalpy(prof, pack), g)
    At = finv_rate(state.v, pack)
    _, Gt = force_and_rate(prof, state.eta, state.v, pack, state.model.gravity)
    q = np.einsum("ki...,k...->i...", At, dpi) - Gt.values
    total = state.w.values + state.kappa * q
    return -gam * Jt**2 / J + np.einsum("ij...,ij...->...", cof_t, Dv) - _fstar_div(total, pack)


def fixed_point_defect(state, basis: GalerkinBasis | None = None, dt: float | None = None) -> FixedPointReport:
    """One application of the divergence/curl/trace map at a running state.

    1. X = omega0 J^-gamma J_t; one implicit Galerkin step of the X-problem with the
       state's coefficients gives X^{n+1}, and the strong form gives X_t / omega0.
    2. Div of the new acceleration from the time-differentiated divergence identity,
       curl from the vorticity law with the integrating-factor field, normal trace from the
       boundary formula, tangential means from the evolution law.
    3. Hodge reconstruction; report ||v~_t - v_t||_0, c(t), the trace shift and
       ||frak - w||_0.
    """
    from .dynamics import acceleration, boundary_normal_acceleration, compute_X, enthalpy_gradient_rate

    g = state.grid
    prof = state.model.profile
    pack = state.pack
    kap = state.kappa
    gam = prof.gamma
    if dt is None:
        hist = state.history
        dt = hist[-1].t - hist[-2].t if len(hist) > 1 else 1e-3
    basis = basis or GalerkinBasis(g, kmax=2, mmax=min(12, g.n3 - 2))
    a_vec = acceleration(state, dt)
    J = pack.J.values
    try:
        X = compute_X(state).values
        W = x_forcing(state)
        Jc, B = coefficients_from_pack(pack)
        if kap > 0:
            problem = XProblem(g, prof.omega0.values, Jc, B, kap, X, lambda t: W, gam, reaction=np.zeros(g.shape))
            sol = solve_x(problem, basis, dt, dt)
            Xn = sol.field_at(-1)
        else:
            Xn = X
        x_step = float(l2_norm(ScalarField(g, Xn - X)))
        DX = grad_array(Xn, g)
        diffusion = sum(diff(np.einsum("jk...,k...->j...", B, DX)[j], j, g) for j in range(3))
        xt_over_om = J ** (-gam) * (W + gam * kap * diffusion)
    except Exception as exc:  # tag the stage and propagate
        raise StageError("x-problem", exc) from exc
    try:
        P = eulerian_jacobian(state.v, pack)
        div_eta_v = np.einsum("ii...->...", P)
        Jt = jacobian_rate(state.v, pack).values
        At = finv_rate(state.v, pack)
        Dv = grad_array(state.v.values, g)
        lag_div = J ** (gam - 1.0) * xt_over_om + (gam - 1.0) * Jt / J * div_eta_v - np.einsum("ji...,ij...->...", At, Dv)
        a_field = VectorField(g, a_vec)
        Pa = eulerian_jacobian(a_field, pack)
        div_plain = sum(diff(a_vec[k], k, g) for k in range(3))
        div_data = div_plain - np.einsum("ii...->...", Pa) + lag_div
        Rf = eulerian_jacobian(state.frak, pack)
        Qf = -kap * np.einsum("kji,rj...,ri...->k...", EPS, P, Rf)
        curl_data = curl_array(a_vec, g) - curl_from_jacobian(Pa) + Qf
        trace = boundary_normal_acceleration(state)
        wdot = enthalpy_gradient_rate(state).values
        rhs_mean = -(state.w.values + kap * wdot)
        means = (integrate(rhs_mean[0], g), integrate(rhs_mean[1], g))
        res = hodge_reconstruct(ScalarField(g, div_data), VectorField(g, curl_data), trace, means, tol=1.0)
    except Exception as exc:
        raise StageError("hodge", exc) from exc
    vt = res.field.values
    defect = l2_norm(VectorField(g, vt - a_vec))
    flux = state.w.values[2] + kap * wdot[2]
    c_top = face_integral(vt[2][..., -1] - res.shift + flux[..., -1], g)
    c_bot = face_integral(-(vt[2][..., 0] + res.shift + flux[..., 0]), g)
    c_t = 0.5 * (c_top + c_bot)
    frak_res = l2_norm(VectorField(g, state.frak.values - state.w.values))
    return FixedPointReport(state.t, float(defect), float(c_t), res.shift, float(frak_res), x_step, res.div_defect)
