"""Time integration of the kappa-regularized Euler-Poisson system in Lagrangian form.

Evolution law: v_t + w + kappa w_t = 0, eta_t = v, with
w = D_eta(c_gamma omega0 J^(1-gamma)) - G and c_gamma = gamma / (gamma - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvertibilityLost
from .grid import ScalarField, VectorField, grad_array, integrate
from .gravity import GravityConfig, force, force_and_rate
from .initial_data import DensityProfile
from .kinematics import (
    EPS,
    DeformationPack,
    build_deformation,
    cofactor_rate,
    curl_from_jacobian,
    eulerian_jacobian,
    jacobian_rate,
    piola_residual,
)

STATUS_OK = "ok"
STATUS_J_EXIT = "j-window-exit"
STATUS_LOST = "invertibility-lost"
J_WINDOW = (7.0 / 8.0, 9.0 / 8.0)
# largest modified wavenumber (times h) of the 4th-order centered first derivative
FD4_MAX_WAVENUMBER = 1.3722


@dataclass(frozen=True)
class Model:
    profile: DensityProfile
    gravity: GravityConfig = field(default_factory=GravityConfig)
    kappa: float = 0.0
    history_depth: int = 5
    j_window: tuple[float, float] = J_WINDOW

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.history_depth < 1:
            raise ValueError("history_depth must be >= 1")


@dataclass(frozen=True)
class HistoryEntry:
    t: float
    eta: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class FlowState:
    t: float
    eta: VectorField
    v: VectorField
    w: VectorField
    w_prev: VectorField
    frak: VectorField
    model: Model
    pack: DeformationPack
    history: tuple[HistoryEntry, ...] = ()
    status: str = STATUS_OK
    step_index: int = 0

    @property
    def grid(self):
        return self.eta.grid

    @property
    def kappa(self) -> float:
        return self.model.kappa


@dataclass(frozen=True)
class StepReport:
    step: int
    t: float
    dt: float
    cfl: float
    j_min: float
    j_max: float
    piola_max: float
    status: str
    energy: object = None

    CSV_HEADER = ("step", "t", "dt", "cfl", "j_min", "j_max", "piola_max", "status")

    def csv_row(self) -> tuple:
        return (self.step, self.t, self.dt, self.cfl, self.j_min, self.j_max, self.piola_max, self.status)


# ---------------------------------------------------------------- enthalpy gradient


def enthalpy(profile: DensityProfile, pack: DeformationPack) -> np.ndarray:
    """h = c_gamma omega0 J^(1-gamma)."""
    return profile.c_gamma * profile.omega0.values * pack.J.values ** (1.0 - profile.gamma)


def pressure_gradient(profile: DensityProfile, pack: DeformationPack) -> np.ndarray:
    """D_eta h, with h = c_gamma omega0 J^(1-gamma)."""
    Dh = grad_array(enthalpy(profile, pack), pack.grid)
    return np.einsum("ki...,k...->i...", pack.Finv.values, Dh)


def enthalpy_gradient(profile: DensityProfile, eta: VectorField, pack: DeformationPack, gravity: GravityConfig) -> VectorField:
    """w = D_eta(c_gamma omega0 J^(1-gamma)) - G."""
    G = force(profile, eta, pack, gravity)
    return VectorField(eta.grid, pressure_gradient(profile, pack) - G.values)


def enthalpy_gradient_divided_form(
    profile: DensityProfile, eta: VectorField, pack: DeformationPack, gravity: GravityConfig, threshold: float = 1e-3
) -> tuple[VectorField, np.ndarray]:
    """w = rho0^-1 Fstar[i, k] d_k(rho0^gamma J^-gamma) - G, valid where rho0 > threshold.

    Returns the field (zero where rho0 <= threshold) and the mask.
    """
    rho = profile.rho0.values
    P = grad_array(rho**profile.gamma * pack.J.values ** (-profile.gamma), pack.grid)
    mask = rho > threshold * max(float(rho.max()), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        pg = np.where(mask, np.einsum("ik...,k...->i...", pack.Fstar.values, P) / rho, 0.0)
    G = force(profile, eta, pack, gravity)
    return VectorField(eta.grid, np.where(mask, pg - G.values, 0.0)), mask


def enthalpy_gradient_rate(state: FlowState, v: VectorField | None = None) -> VectorField:
    """w_t along velocity v (default state.v), assembled from the Finv and J rate identities."""
    v = state.v if v is None else v
    prof = state.model.profile
    pack = state.pack
    g = state.grid
    P = eulerian_jacobian(v, pack)
    Jt = jacobian_rate(v, pack).values
    J = pack.J.values
    pg = pressure_gradient(prof, pack)
    hdot = prof.c_gamma * prof.omega0.values * (1.0 - prof.gamma) * J ** (-prof.gamma) * Jt
    Dhdot = np.einsum("ki...,k...->i...", pack.Finv.values, grad_array(hdot, g))
    _, Gt = force_and_rate(prof, state.eta, v, pack, state.model.gravity)
    return VectorField(g, -np.einsum("s...,si...->i...", pg, P) + Dhdot - Gt.values)


# ---------------------------------------------------------------- state construction


def _check_window(pack: DeformationPack, window: tuple[float, float]) -> bool:
    J = pack.J.values
    return bool(np.all(J >= window[0]) and np.all(J <= window[1]))


def initial_state(model: Model, u0: VectorField) -> FlowState:
    """t = 0: eta = identity, v = u0, w_prev = w(0), integrating-factor field = w(0)."""
    g = u0.grid
    if g != model.profile.grid:
        raise ValueError("velocity and profile live on different grids")
    eta = VectorField(g, g.mesh())
    pack = build_deformation(eta)
    w = enthalpy_gradient(model.profile, eta, pack, model.gravity)
    hist = (HistoryEntry(0.0, eta.values, u0.values),)
    return FlowState(0.0, eta, u0, w, w, w, model, pack, hist)


def acceleration(state: FlowState, dt: float) -> np.ndarray:
    """a^n = -(w^n + kappa (w^n - w^{n-1}) / dt)."""
    w = state.w.values
    return -(w + state.kappa * (w - state.w_prev.values) / dt)


def step(state: FlowState, dt: float) -> tuple[FlowState, StepReport]:
    """One step: v^{n+1} = v^n + dt a^n, eta^{n+1} = eta^n + dt v^{n+1}."""
    if state.status != STATUS_OK:
        raise RuntimeError(f"state has status {state.status}; no further steps accepted")
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.grid
    model = state.model
    a = acceleration(state, dt)
    v1 = VectorField(g, state.v.values + dt * a)
    eta1 = VectorField(g, state.eta.values + dt * v1.values)
    t1 = state.t + dt
    n1 = state.step_index + 1
    cfl = dt * max_signal_speed(state) / g.active_spacing
    try:
        pack1 = build_deformation(eta1)
    except InvertibilityLost:
        J = state.pack.J.values
        bad = replace(state, status=STATUS_LOST)
        return bad, StepReport(n1, t1, dt, cfl, float(J.min()), float(J.max()), float("nan"), STATUS_LOST)
    w1 = enthalpy_gradient(model.profile, eta1, pack1, model.gravity)
    decay = np.exp(-dt / model.kappa) if model.kappa > 0 else 0.0
    frak1 = VectorField(g, decay * state.frak.values - (1.0 - decay) * a)
    hist = (state.history + (HistoryEntry(t1, eta1.values, v1.values),))[-model.history_depth :]
    status = STATUS_OK if _check_window(pack1, model.j_window) else STATUS_J_EXIT
    new = FlowState(t1, eta1, v1, w1, state.w, frak1, model, pack1, hist, status, n1)
    J = pack1.J.values
    report = StepReport(
        n1,
        t1,
        dt,
        cfl,
        float(J.min()),
        float(J.max()),
        float(np.max(np.abs(piola_residual(pack1).values))),
        status,
    )
    return new, report


# ---------------------------------------------------------------- time step policy


def sound_speed(state: FlowState) -> np.ndarray:
    """c = sqrt(gamma rho^(gamma-1)) with rho = rho0 / J."""
    prof = state.model.profile
    rho = prof.rho0.values / state.pack.J.values
    return np.sqrt(prof.gamma * np.maximum(rho, 0.0) ** (prof.gamma - 1.0))


def max_signal_speed(state: FlowState) -> float:
    speed = np.sqrt(np.sum(state.v.values**2, axis=0))
    return max(float(sound_speed(state).max()), float(speed.max()), 1e-300)


def cfl_dt(state: FlowState, safety: float) -> float:
    """Advective limit safety * h / max(c, |v|), capped by the kappa-term stability limit.

    The lagged kappa term is stable on an acoustic mode of frequency omega when
    kappa omega^2 dt + (omega dt)^2 / 2 <= 2; omega_max uses the largest
    resolved wavenumber of each active direction.
    """
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    g = state.grid
    dt_adv = safety * g.active_spacing / max_signal_speed(state)
    c = float(sound_speed(state).max())
    k2 = (FD4_MAX_WAVENUMBER / g.h3) ** 2
    if g.n1 > 1:
        k2 += (np.pi / g.h1) ** 2
    if g.n2 > 1:
        k2 += (np.pi / g.h2) ** 2
    om2 = c * c * k2
    kap = state.kappa
    if om2 > 0:
        dt_kappa = -kap + np.sqrt(kap * kap + 4.0 / om2)
        return float(min(dt_adv, safety * dt_kappa))
    return float(dt_adv)


# ---------------------------------------------------------------- X, vorticity, boundary


def compute_X_forms(state: FlowState, pack: DeformationPack | None = None, profile: DensityProfile | None = None):
    """X = omega0 J^(1-gamma) Div_eta v in the J_t form and in the Div_eta form."""
    pack = pack or state.pack
    prof = profile or state.model.profile
    J = pack.J.values
    Jt = jacobian_rate(state.v, pack).values
    P = eulerian_jacobian(state.v, pack)
    div = np.einsum("ii...->...", P)
    om = prof.omega0.values
    form_jt = om * J ** (-prof.gamma) * Jt
    form_div = om * J ** (1.0 - prof.gamma) * div
    return ScalarField(state.grid, form_jt), ScalarField(state.grid, form_div)


def compute_X(state: FlowState, pack: DeformationPack | None = None, profile: DensityProfile | None = None) -> ScalarField:
    """X = omega0 J^(-gamma) J_t (for gamma = 2, rho0 J^-2 J_t = rho0 J^-1 Div_eta v)."""
    a, b = compute_X_forms(state, pack, profile)
    scale = max(float(np.max(np.abs(a.values))), 1e-300)
    if np.max(np.abs(a.values - b.values)) > 1e-10 * scale:
        raise AssertionError("the two forms of X disagree")
    return a


def curl_transport_integrand(eta: VectorField, v: VectorField, w: VectorField, kappa: float, pack=None) -> np.ndarray:
    """B + Q, the time derivative of curl_eta v implied by the evolution law.

    B^i = -eps_{ijk} (P P)[k, j] with P = D_eta v, and
    Q^k = -kappa eps_{kji} P[r, j] (D_eta w)[r, i].
    """
    pack = pack or build_deformation(eta)
    P = eulerian_jacobian(v, pack)
    B = -curl_from_jacobian(np.einsum("ks...,sj...->kj...", P, P))
    if kappa == 0:
        return B
    Rw = eulerian_jacobian(w, pack)
    Q = -kappa * np.einsum("kji,rj...,ri...->k...", EPS, P, Rw)
    return B + Q


def vorticity_rhs(state: FlowState, pack: DeformationPack | None = None, profile: DensityProfile | None = None) -> VectorField:
    """Q^k = -kappa eps_{kji} (D_eta v)[r, j] (D_eta w)[r, i]."""
    pack = pack or state.pack
    if state.kappa == 0:
        return VectorField(state.grid, 0.0)
    P = eulerian_jacobian(state.v, pack)
    Rw = eulerian_jacobian(state.w, pack)
    return VectorField(state.grid, -state.kappa * np.einsum("kji,rj...,ri...->k...", EPS, P, Rw))


def boundary_normal_acceleration(state: FlowState, profile: DensityProfile | None = None, kappa: float | None = None) -> np.ndarray:
    """v_t^3 on the faces, shape (2, n1, n2) (bottom, top).

    With omega0 = 0 on the faces only the normal derivative of the enthalpy
    survives:
    v_t^3 = -c omega0_{,3} Fstar33 J^-gamma - kappa c omega0_{,3} d/dt(Fstar33 J^-gamma)
            + G^3 + kappa G^3_t,  c = c_gamma.
    """
    prof = profile or state.model.profile
    kap = state.kappa if kappa is None else kappa
    pack = state.pack
    g = state.grid
    gam = prof.gamma
    dom = grad_array(prof.omega0.values, g)[2]
    cof33 = pack.Fstar.values[2, 2]
    Dv = grad_array(state.v.values, g)
    cof33_t = cofactor_rate(pack.F.values, Dv)[2, 2]
    J = pack.J.values
    Jt = jacobian_rate(state.v, pack).values
    m = cof33 * J ** (-gam)
    m_t = cof33_t * J ** (-gam) - gam * cof33 * J ** (-gam - 1.0) * Jt
    G, Gt = force_and_rate(prof, state.eta, state.v, pack, state.model.gravity)
    cg = prof.c_gamma
    full = -cg * dom * m - kap * cg * dom * m_t + G.values[2] + kap * Gt.values[2]
    return np.stack([full[..., 0], full[..., -1]])


def mass(profile: DensityProfile) -> float:
    """Total mass int rho0 dx; the Eulerian density rho0 / J carries it unchanged."""
    return float(integrate(profile.rho0.values, profile.grid))
