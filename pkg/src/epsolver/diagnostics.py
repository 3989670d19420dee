"""Energy functional, curl transport residual, a-priori window monitors and inequality verifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .dynamics import FlowState, HistoryEntry, curl_transport_integrand
from .grid import (
    ScalarField,
    SlabGrid,
    VectorField,
    derivative_along,
    diff,
    grad_array,
    l2_norm,
    multi_indices,
    sobolev_norm,
)
from .initial_data import DensityProfile
from .kinematics import build_deformation, curl_eta

# ---------------------------------------------------------------- time differences


def backward_weights(times: np.ndarray, order: int) -> np.ndarray:
    """Weights of the order-th derivative at times[-1] from the given (nonuniform) levels.

    Exact for polynomials of degree len(times) - 1.
    """
    t = np.asarray(times, dtype=float)
    n = t.size
    if n < order + 1:
        raise ValueError("not enough levels")
    V = np.vander(t - t[-1], n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


def time_derivative(levels: list[np.ndarray], times: list[float], order: int) -> np.ndarray | None:
    """order-th time derivative at the newest level using order + 1 newest levels; None if absent."""
    if order == 0:
        return levels[-1]
    if len(levels) < order + 1:
        return None
    w = backward_weights(np.array(times[-(order + 1) :]), order)
    return sum(wi * a for wi, a in zip(w, levels[-(order + 1) :]))


# ---------------------------------------------------------------- energy


ENERGY_FAMILIES = ("eta", "rho_F", "v", "rho_J", "kappa_diss")


@dataclass(frozen=True)
class EnergyReport:
    t: float
    s_max: int
    terms: dict
    kappa: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(v for v in self.terms.values() if v is not None))

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.terms.values())

    def names(self) -> list[str]:
        return list(self.terms)

    def csv_row(self) -> list:
        return [self.t] + [("absent" if v is None else v) for v in self.terms.values()] + [self.total]


def _eta_norm_sq(eta_vals: np.ndarray, order: int, grid: SlabGrid, is_position: bool) -> float:
    """||eta||_k^2 = ||eta||_0^2 + ||D eta||_{k-1}^2, with D eta from the periodic displacement."""
    vf = VectorField(grid, eta_vals)
    total = l2_norm(vf, squared=True)
    if order == 0:
        return total
    disp = eta_vals - grid.mesh() if is_position else eta_vals
    F = grad_array(disp, grid)
    if is_position:
        for i in range(3):
            F[i, i] += 1.0
    from .grid import TensorField

    return total + sobolev_norm(TensorField(grid, F), order - 1, squared=True)


def _tangential_sq(a: np.ndarray, order: int, grid: SlabGrid, weight: np.ndarray) -> float:
    total = 0.0
    for combo in multi_indices(order, dims=2):
        d = derivative_along(a, combo, grid)
        comp = np.sum(np.abs(d.reshape((-1,) + grid.shape)) ** 2, axis=0)
        total += float(np.sum(comp * weight * grid.weights))
    return total


def energy_terms(
    history: list[HistoryEntry],
    profile: DensityProfile,
    s_max: int,
    kappa: float = 0.0,
    dissipation: dict | None = None,
) -> EnergyReport:
    """Terms of the higher-order energy at the newest history level.

    For s = 0..s_max:
      eta_s      ||d_t^{2s} eta||_{4-s}^2
      rho_F_s    ||rho0 d_t^{2s} dbar^{4-s} D eta||_0^2
      v_s        ||sqrt(rho0) d_t^{2s} dbar^{4-s} v||_0^2
      rho_J_s    ||rho0 d_t^{2s} J^-2||_{4-s}^2
      kappa_diss_s  accumulated int_0^t ||sqrt(kappa) rho0 d_t^{2s} dbar^{4-s} D v||_0^2
    plus curl3 = ||curl_eta v||_3^2 and rho_curl = ||rho0 dbar^4 curl_eta v||_0^2.
    Time derivatives come from backward differences on the history; orders
    that need more levels than stored are reported as None.
    """
    if not 0 <= s_max <= 2:
        raise ValueError("s_max must be 0, 1 or 2")
    g = profile.grid
    rho = profile.rho0.values
    times = [h.t for h in history]
    etas = [h.eta for h in history]
    vs = [h.v for h in history]
    terms: dict = {}
    Js = None
    for s in range(s_max + 1):
        k = 4 - s
        m = 2 * s
        e = time_derivative(etas, times, m)
        terms[f"eta_{s}"] = None if e is None else _eta_norm_sq(e, k, g, is_position=(m == 0))
        if e is None:
            terms[f"rho_F_{s}"] = None
        else:
            disp = e - g.mesh() if m == 0 else e
            F = grad_array(disp, g)
            terms[f"rho_F_{s}"] = _tangential_sq(F, k, g, rho**2)
        vv = time_derivative(vs, times, m)
        terms[f"v_{s}"] = None if vv is None else _tangential_sq(vv, k, g, rho)
        if Js is None:
            Js = [build_deformation(VectorField(g, et)).J.values ** -2.0 for et in etas[-(2 * s_max + 1) :]]
        jd = time_derivative(Js, times[-len(Js) :], m)
        terms[f"rho_J_{s}"] = None if jd is None else sobolev_norm(ScalarField(g, rho * jd), k, squared=True)
        key = f"kappa_diss_{s}"
        terms[key] = (dissipation or {}).get(key, 0.0) if kappa > 0 else 0.0
    eta = VectorField(g, etas[-1])
    pack = build_deformation(eta)
    cv = curl_eta(VectorField(g, vs[-1]), pack)
    terms["curl3"] = sobolev_norm(cv, 3, squared=True)
    terms["rho_curl"] = _tangential_sq(cv.values, 4, g, rho**2)
    return EnergyReport(times[-1], s_max, terms, kappa)


def dissipation_rate(history: list[HistoryEntry], profile: DensityProfile, s_max: int, kappa: float) -> dict:
    """Integrands ||sqrt(kappa) rho0 d_t^{2s} dbar^{4-s} D v||_0^2 at the newest level (None if absent)."""
    g = profile.grid
    rho = profile.rho0.values
    times = [h.t for h in history]
    vs = [h.v for h in history]
    out = {}
    for s in range(s_max + 1):
        vv = time_derivative(vs, times, 2 * s)
        key = f"kappa_diss_{s}"
        out[key] = None if vv is None else kappa * _tangential_sq(grad_array(vv, g), 4 - s, g, rho**2)
    return out


class EnergyMonitor:
    """Accumulates the kappa-dissipation integrals and the reference value E(0).

    The reference is taken at the first level where every requested order is
    available, since higher time derivatives need several stored levels.
    """

    def __init__(self, profile: DensityProfile, s_max: int, kappa: float):
        self.profile = profile
        self.s_max = s_max
        self.kappa = kappa
        self.accum = {f"kappa_diss_{s}": 0.0 for s in range(s_max + 1)}
        self._last_rate = None
        self._last_t = None
        self.reference: EnergyReport | None = None

    def update(self, history: list[HistoryEntry]) -> EnergyReport:
        t = history[-1].t
        if self.kappa > 0:
            rate = dissipation_rate(history, self.profile, self.s_max, self.kappa)
            if self._last_rate is not None:
                dt = t - self._last_t
                for key, val in rate.items():
                    prev = self._last_rate.get(key)
                    if val is not None and prev is not None:
                        self.accum[key] += 0.5 * dt * (val + prev)
            self._last_rate, self._last_t = rate, t
        rep = energy_terms(history, self.profile, self.s_max, self.kappa, self.accum)
        if self.reference is None and rep.complete:
            self.reference = rep
        return rep


def energy(history, profile: DensityProfile, s_max: int, kappa: float = 0.0) -> EnergyReport:
    """Energy report at the newest level of a history (sequence of HistoryEntry or FlowState)."""
    hist = [h if isinstance(h, HistoryEntry) else HistoryEntry(h.t, h.eta.values, h.v.values) for h in history]
    return energy_terms(hist, profile, s_max, kappa)


# ---------------------------------------------------------------- curl transport


class CurlTransportTracker:
    """Residual of curl_eta v(t) = curl u0 + int_0^t (B + Q), evaluated along a run.

    The stepper stores eta at integer times and v^{n+1} on the interval
    (t_n, t_{n+1}); the velocity at t_n is read as (v^n + v^{n+1}) / 2 and the
    time integral uses the trapezoid rule.  Feed every step in order.
    """

    def __init__(self, state: FlowState):
        g = state.grid
        self.kappa = state.kappa
        self.model = state.model
        self.curl0 = curl_eta(state.v, state.pack).values
        self._pending = state
        self._integral = np.zeros((3,) + g.shape)
        self._last_S = None
        self._last_t = None
        self.series: list[tuple[float, float]] = []

    def feed(self, new: FlowState) -> None:
        prev = self._pending
        g = prev.grid
        v_mid = VectorField(g, 0.5 * (prev.v.values + new.v.values))
        S = curl_transport_integrand(prev.eta, v_mid, prev.w, self.kappa, prev.pack)
        if self._last_S is not None:
            self._integral = self._integral + 0.5 * (prev.t - self._last_t) * (self._last_S + S)
        self._last_S, self._last_t = S, prev.t
        r = curl_eta(v_mid, prev.pack).values - self.curl0 - self._integral
        self.series.append((prev.t, l2_norm(VectorField(g, r))))
        self._pending = new


def curl_transport_residual(states: list[FlowState]) -> list[tuple[float, float]]:
    """Residual L2 norms at t_0 .. t_{N-1} for a list of consecutive states."""
    if len(states) < 2:
        return []
    tr = CurlTransportTracker(states[0])
    for s in states[1:]:
        tr.feed(s)
    return tr.series


# ---------------------------------------------------------------- a-priori window


@dataclass(frozen=True)
class WindowRecord:
    t: float
    j_min: float
    j_max: float
    coercivity_min: float
    lipschitz_min: float
    lipschitz_max: float
    window: tuple[float, float] = (7.0 / 8.0, 9.0 / 8.0)

    @property
    def j_ok(self) -> bool:
        return self.window[0] <= self.j_min and self.j_max <= self.window[1]

    @property
    def coercivity_ok(self) -> bool:
        return self.coercivity_min >= self.window[0]

    @property
    def lipschitz_ok(self) -> bool:
        return self.window[0] <= self.lipschitz_min and self.lipschitz_max <= self.window[1]

    @property
    def ok(self) -> bool:
        return self.j_ok and self.coercivity_ok and self.lipschitz_ok

    def margins(self) -> dict:
        lo, hi = self.window
        return {
            "J": min(self.j_min - lo, hi - self.j_max),
            "coercivity": self.coercivity_min - lo,
            "lipschitz": min(self.lipschitz_min - lo, hi - self.lipschitz_max),
        }


def _pair_sample(grid: SlabGrid, n_pairs: int, seed: int):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, grid.size, n_pairs)
    b = rng.integers(0, grid.size, n_pairs)
    keep = a != b
    return a[keep], b[keep]


def apriori_window(state: FlowState, n_pairs: int = 512, seed: int = 0, window=(7.0 / 8.0, 9.0 / 8.0)) -> WindowRecord:
    """J range, min eigenvalue of J^2 Finv Finv^T, and bi-Lipschitz ratios on sampled node pairs."""
    g = state.grid
    pack = state.pack
    J = pack.J.values
    A = pack.Finv.values
    M = np.einsum("ik...,jk...->...ij", A, A) * (J**2)[..., None, None]
    coer = float(np.linalg.eigvalsh(M).min())
    a, b = _pair_sample(g, n_pairs, seed)
    X = g.mesh().reshape(3, -1)
    E = state.eta.values.reshape(3, -1)
    dx = X[:, a] - X[:, b]
    shift = np.zeros_like(dx)
    shift[0] = -np.round(dx[0]) if g.n1 > 1 else 0.0
    shift[1] = -np.round(dx[1]) if g.n2 > 1 else 0.0
    dx = dx + shift
    de = E[:, a] - E[:, b] + shift
    ratio = np.sqrt(np.sum(de**2, axis=0) / np.sum(dx**2, axis=0))
    return WindowRecord(state.t, float(J.min()), float(J.max()), coer, float(ratio.min()), float(ratio.max()), tuple(window))


class WindowMonitor:
    """Tracks first-violation times of each window check."""

    def __init__(self, n_pairs: int = 512, seed: int = 0):
        self.n_pairs = n_pairs
        self.seed = seed
        self.first_violation: dict[str, float | None] = {"J": None, "coercivity": None, "lipschitz": None}
        self.records: list[WindowRecord] = []

    def update(self, state: FlowState) -> WindowRecord:
        rec = apriori_window(state, self.n_pairs, self.seed, state.model.j_window)
        for name, ok in (("J", rec.j_ok), ("coercivity", rec.coercivity_ok), ("lipschitz", rec.lipschitz_ok)):
            if not ok and self.first_violation[name] is None:
                self.first_violation[name] = rec.t
        self.records.append(rec)
        return rec

    @property
    def clean(self) -> bool:
        return all(v is None for v in self.first_violation.values())


# ---------------------------------------------------------------- inequality verifiers

HARDY_FAMILY_VERSION = 1
EMBEDDING_FAMILY_VERSION = 1
# largest ratios over the versioned families (seed 2024, 100 samples), times 1.25
HARDY_FAMILY_BOUND = {1: 1.44, 2: 0.74}
EMBEDDING_FAMILY_BOUND = {1: 4.32, 2: 12.78}


def smooth_distance(grid: SlabGrid, band: float | None = None) -> np.ndarray:
    """d~ = (1 - S) x3 + S (L3 - x3), S a quintic smoothstep across the midplane band.

    Equals the distance to the faces outside the band, is smooth and positive inside.
    """
    L = grid.length3
    band = 0.25 * L if band is None else band
    x3 = grid.x3
    s = np.clip((x3 - (0.5 * L - band)) / (2 * band), 0.0, 1.0)
    S = s**3 * (10 - 15 * s + 6 * s * s)
    return (1 - S) * x3 + S * (L - x3)


def _divide_by_distance(u: np.ndarray, grid: SlabGrid, dt: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    out[..., 1:-1] = u[..., 1:-1] / dt[1:-1]
    d3 = diff(u, 2, grid)
    out[..., 0] = d3[..., 0]
    out[..., -1] = -d3[..., -1]
    return out


def hardy_verifier(u: ScalarField, s: int = 1, dtilde: np.ndarray | None = None, tol: float = 1e-10) -> float:
    """||u / d~||_{s-1} / ||u||_s for u vanishing on both faces; face values of u / d~ by the limit."""
    if s not in (1, 2):
        raise ValueError("s must be 1 or 2")
    g = u.grid
    vals = u.values
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if np.max(np.abs(vals[..., 0])) > tol * scale or np.max(np.abs(vals[..., -1])) > tol * scale:
        raise ValueError("hardy_verifier needs u = 0 on the boundary")
    dt = smooth_distance(g) if dtilde is None else np.asarray(dtilde)
    q = ScalarField(g, _divide_by_distance(vals, g, dt))
    return sobolev_norm(q, s - 1) / sobolev_norm(u, s)


def half_norm_sq(f: ScalarField) -> float:
    """H^{1/2} norm squared from cosine modes in x3 and Fourier modes in x1, x2."""
    g = f.grid
    n3 = g.n3
    L = g.length3
    c = np.fft.fft2(f.values, axes=(0, 1)) / (g.n1 * g.n2)
    y = dct(c.real, type=1, axis=-1) + 1j * dct(c.imag, type=1, axis=-1)
    a = y / (n3 - 1)
    a[..., 0] *= 0.5
    a[..., -1] *= 0.5
    wm = np.full(n3, 0.5)
    wm[0] = 1.0
    wm[-1] = 1.0
    k1 = np.fft.fftfreq(g.n1, d=1.0 / g.n1)
    k2 = np.fft.fftfreq(g.n2, d=1.0 / g.n2)
    m = np.arange(n3)
    lam = (2 * np.pi * k1)[:, None, None] ** 2 + (2 * np.pi * k2)[None, :, None] ** 2 + (m * np.pi / L)[None, None, :] ** 2
    return float(L * np.sum(np.sqrt(1.0 + lam) * wm * np.abs(a) ** 2))


def embedding_verifier(f: ScalarField, p: int) -> float:
    """||f||_{1-p/2}^2 / int d^p (|f|^2 + |Df|^2), d the distance to the faces."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    g = f.grid
    d = np.minimum(g.x3, g.length3 - g.x3)
    num = l2_norm(f, squared=True) if p == 2 else half_norm_sq(f)
    Df = grad_array(f.values, g)
    dens = f.values**2 + np.sum(Df**2, axis=0)
    den = float(np.sum(d**p * dens * g.weights))
    return num / den


def hardy_family(grid: SlabGrid, seed: int = 2024, size: int = 100) -> list[ScalarField]:
    """Versioned random family of functions vanishing on both faces."""
    rng = np.random.default_rng([seed, HARDY_FAMILY_VERSION])
    x = grid.mesh()
    L = grid.length3
    out = []
    for _ in range(size):
        f = np.zeros(grid.shape)
        for m in range(1, 5):
            for k1 in range(0, 2 if grid.n1 > 1 else 1):
                for k2 in range(0, 2 if grid.n2 > 1 else 1):
                    a = rng.normal() / (m * m * (1 + k1 + k2))
                    ph = rng.uniform(0, 2 * np.pi)
                    f += a * np.sin(m * np.pi * x[2] / L) * np.cos(2 * np.pi * (k1 * x[0] + k2 * x[1]) + ph)
        out.append(ScalarField(grid, f))
    return out


def embedding_family(grid: SlabGrid, seed: int = 2024, size: int = 100) -> list[ScalarField]:
    """Versioned random family of smooth functions (no boundary condition)."""
    rng = np.random.default_rng([seed, EMBEDDING_FAMILY_VERSION])
    x = grid.mesh()
    L = grid.length3
    out = []
    for _ in range(size):
        f = np.full(grid.shape, rng.normal())
        for m in range(0, 4):
            for k1 in range(0, 2 if grid.n1 > 1 else 1):
                for k2 in range(0, 2 if grid.n2 > 1 else 1):
                    a = rng.normal() / ((1 + m) ** 2 * (1 + k1 + k2))
                    ph = rng.uniform(0, 2 * np.pi)
                    f += a * np.cos(m * np.pi * x[2] / L) * np.cos(2 * np.pi * (k1 * x[0] + k2 * x[1]) + ph)
        out.append(ScalarField(grid, f))
    return out


# ---------------------------------------------------------------- vacuum persistence


@dataclass(frozen=True)
class SlopeSample:
    t: float
    bottom: float
    top: float

    @property
    def worst(self) -> float:
        return max(self.bottom, self.top)


def vacuum_slope(eta_or_state, profile: DensityProfile) -> tuple[float, float]:
    """Largest outward normal derivative of (rho0 / J)^(gamma-1) on each face."""
    eta = eta_or_state.eta if hasattr(eta_or_state, "eta") else eta_or_state
    pack = eta_or_state.pack if hasattr(eta_or_state, "pack") else build_deformation(eta)
    g = profile.grid
    f = profile.omega0.values * pack.J.values ** (1.0 - profile.gamma)
    d3 = diff(f, 2, g)
    return float(np.max(-d3[..., 0])), float(np.max(d3[..., -1]))


def vacuum_persistence(states, profile: DensityProfile) -> list[SlopeSample]:
    """Face slopes along a run; negative values mean the vacuum condition holds."""
    out = []
    for st in states:
        b, t = vacuum_slope(st, profile)
        out.append(SlopeSample(st.t, b, t))
    return out
