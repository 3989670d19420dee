import numpy as np
import pytest

from epsolver.dynamics import (
    STATUS_J_EXIT,
    STATUS_LOST,
    Model,
    boundary_normal_acceleration,
    cfl_dt,
    compute_X,
    enthalpy_gradient,
    enthalpy_gradient_divided_form,
    enthalpy_gradient_rate,
    initial_state,
    mass,
    step,
)
from epsolver.grid import SlabGrid, VectorField, integrate
from epsolver.gravity import GravityConfig
from epsolver.initial_data import LANE_EMDEN_HEIGHT, first_time_derivative, make_profile, make_velocity
from epsolver.kinematics import build_deformation
from epsolver.verify import sine_deformation

OFF = GravityConfig(enabled=False)


def advance(state, dt, n):
    for _ in range(n):
        state, _ = step(state, dt)
    return state


def sine_state(kappa, amplitude=0.01, n3=64, gravity=OFF, window=None):
    g = SlabGrid(1, 1, n3)
    kw = {} if window is None else {"j_window": window}
    model = Model(make_profile("sine", 2.0, g), gravity, kappa, **kw)
    return initial_state(model, make_velocity("mode", g, amplitude))


def physical_energy(s):
    p = s.model.profile
    J = s.pack.J.values
    dens = 0.5 * p.rho0.values * np.sum(s.v.values**2, axis=0)
    dens = dens + p.rho0.values * p.omega0.values * J ** (1.0 - p.gamma) / (p.gamma - 1.0)
    return integrate(dens, s.grid)


def test_model_validation():
    prof = make_profile("sine", 2.0, SlabGrid(1, 1, 16))
    with pytest.raises(ValueError):
        Model(prof, kappa=-1.0)
    with pytest.raises(ValueError):
        Model(prof, history_depth=0)


def test_equilibrium_one_step_bound():
    g = SlabGrid(1, 1, 128, LANE_EMDEN_HEIGHT)
    s0 = initial_state(Model(make_profile("lane_emden_slab", 2.0, g), GravityConfig(image_layers=8)), make_velocity("zero", g))
    dt = 1e-3
    s1, rep = step(s0, dt)
    residual = np.max(np.abs(s0.w.values))
    assert np.max(np.abs(s1.v.values)) <= dt * residual * (1 + 1e-12)
    assert residual < 5e-3
    assert rep.status == "ok"


@pytest.mark.parametrize("kappa", [0.0, 2e-3])
def test_first_step_matches_taylor_velocity(kappa):
    # w_prev = w(0) seeds the lagged difference, so the kappa w_t(0) part of u1 is absent on step one
    g = SlabGrid(1, 1, 64)
    prof = make_profile("sine", 2.0, g)
    grav = GravityConfig(image_layers=4)
    u0 = make_velocity("mode", g, 0.01)
    s0 = initial_state(Model(prof, grav, kappa), u0)
    u1 = first_time_derivative(u0, prof, kappa, grav).values
    missing = kappa * enthalpy_gradient_rate(s0).values
    for dt in (1e-2, 5e-3, 2.5e-3):
        s1, _ = step(s0, dt)
        assert np.max(np.abs(s1.v.values - (u0.values + dt * u1) - dt * missing)) < 1e-15


@pytest.mark.parametrize("kappa", [0.0, 2e-3])
def test_local_error_against_fine_steps(kappa):
    s0 = sine_state(kappa)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        coarse = advance(s0, dt, 1)
        fine = advance(s0, dt / 64, 64)
        errs.append(np.max(np.abs(coarse.eta.values - fine.eta.values)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 3.6)


def test_physical_energy_damped_by_kappa():
    finals = []
    for kappa in (0.0, 1e-2, 5e-2):
        s = sine_state(kappa, amplitude=0.05, window=(0.5, 1.5))
        es = [physical_energy(s)]
        for _ in range(200):
            s, _ = step(s, 1e-3)
            es.append(physical_energy(s))
        es = np.array(es)
        if kappa > 0:
            assert np.all(np.diff(es) <= 1e-14 * es[0])
        else:
            assert np.max(np.abs(es - es[0])) < 2e-3 * es[0]
        finals.append(es[-1])
    assert finals[0] > finals[1] > finals[2]


def test_mass_of_sine_profile():
    # gamma = 2: rho0 = sin(pi x3), total mass 2 / pi
    assert np.isclose(mass(make_profile("sine", 2.0, SlabGrid(2, 2, 257))), 2 / np.pi, rtol=2e-5)


@pytest.mark.parametrize("gravity", [OFF, GravityConfig(image_layers=4)])
def test_boundary_normal_acceleration_matches_face_trace(gravity):
    diffs = []
    for n3 in (32, 64, 128):
        s = advance(sine_state(1e-2, amplitude=0.05, n3=n3, gravity=gravity), 1e-3, 5)
        full = -(s.w.values + 1e-2 * enthalpy_gradient_rate(s).values)[2]
        ref = np.stack([full[..., 0], full[..., -1]])
        diffs.append(np.max(np.abs(boundary_normal_acceleration(s) - ref)))
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-6


def test_enthalpy_gradient_forms_agree_inside():
    # products of the deformation modes alias below 32 tangential points
    g = SlabGrid(32, 32, 64)
    prof = make_profile("sine", 2.0, g)
    eta = sine_deformation(g, np.random.default_rng(1), 0.02)
    pack = build_deformation(eta)
    w = enthalpy_gradient(prof, eta, pack, OFF).values
    wd, mask = enthalpy_gradient_divided_form(prof, eta, pack, OFF, threshold=0.2)
    assert np.max(np.abs((w - wd.values)[:, mask])) < 1e-3


def test_X_forms_agree():
    s = advance(sine_state(1e-2, amplitude=0.05), 1e-3, 3)
    X = compute_X(s)
    assert np.all(np.isfinite(X.values))


def test_cfl_scales_with_resolution():
    dts = [cfl_dt(sine_state(0.0, n3=n3), 0.5) for n3 in (33, 65)]
    assert np.isclose(dts[0] / dts[1], 2.0, rtol=1e-2)
    with pytest.raises(ValueError):
        cfl_dt(sine_state(0.0), 0.0)
    # the kappa-term limit tightens the step
    assert cfl_dt(sine_state(5e-2, n3=129), 1.0) < cfl_dt(sine_state(0.0, n3=129), 1.0)


def test_window_exit_and_halt():
    s = sine_state(0.0, amplitude=0.5, window=(0.99, 1.01))
    for _ in range(50):
        if s.status != "ok":
            break
        s, rep = step(s, 1e-3)
    assert s.status == STATUS_J_EXIT and rep.status == STATUS_J_EXIT
    assert rep.j_min < 0.99 or rep.j_max > 1.01
    with pytest.raises(RuntimeError):
        step(s, 1e-3)


def test_invertibility_lost_status():
    g = SlabGrid(1, 1, 16)
    X = g.mesh()
    u = VectorField(g, np.stack([0 * X[0], 0 * X[0], -50.0 * X[2] * (1 - X[2])]))
    s0 = initial_state(Model(make_profile("sine", 2.0, g), OFF, j_window=(0.0, 10.0)), u)
    s1, rep = step(s0, 0.1)
    assert s1.status == STATUS_LOST and rep.status == STATUS_LOST


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(sine_state(0.0), 0.0)
