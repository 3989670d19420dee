from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epsolver.diagnostics import (
    EMBEDDING_FAMILY_BOUND,
    HARDY_FAMILY_BOUND,
    EnergyMonitor,
    apriori_window,
    backward_weights,
    curl_transport_residual,
    embedding_family,
    embedding_verifier,
    energy,
    hardy_family,
    hardy_verifier,
    smooth_distance,
    time_derivative,
    vacuum_persistence,
    vacuum_slope,
)
from epsolver.dynamics import Model, initial_state, step
from epsolver.grid import ScalarField, SlabGrid, VectorField
from epsolver.gravity import GravityConfig
from epsolver.initial_data import make_profile, make_velocity
from epsolver.kinematics import build_deformation

OFF = GravityConfig(enabled=False)


def run_states(kappa=1e-2, n=6, dt=1e-3, velocity="mode", grid=None):
    g = grid or SlabGrid(1, 1, 32)
    s = initial_state(Model(make_profile("sine", 2.0, g), OFF, kappa), make_velocity(velocity, g, 0.02))
    states = [s]
    for _ in range(n):
        s, _ = step(s, dt)
        states.append(s)
    return states


@given(
    st.lists(st.floats(0.1, 1.0), min_size=5, max_size=5),
    st.lists(st.floats(-3, 3), min_size=5, max_size=5),
    st.integers(0, 4),
)
def test_backward_weights_exact_on_polynomials(steps, coeffs, order):
    t = np.cumsum(steps)
    p = np.polynomial.Polynomial(coeffs)
    w = backward_weights(t, order)
    assert np.isclose(w @ p(t), p.deriv(order)(t[-1]), rtol=1e-6, atol=1e-6 * np.abs(coeffs).sum() / min(steps) ** order)


def test_time_derivative_absent_without_levels():
    assert time_derivative([np.zeros(2)], [0.0], 2) is None
    with pytest.raises(ValueError):
        backward_weights(np.array([0.0, 1.0]), 2)


def test_energy_terms_and_reference():
    # tangential derivatives vanish on a planar grid, so use a 3D vortex
    states = run_states(n=5, velocity="vortex", grid=SlabGrid(4, 4, 32))
    mon = EnergyMonitor(states[0].model.profile, 2, 1e-2)
    hist = []
    reports = []
    for s in states:
        hist.append(s.history[-1])
        reports.append(mon.update(hist[-5:]))
    assert not reports[0].complete
    assert reports[4].complete
    assert mon.reference is reports[4]
    assert reports[-1].terms["kappa_diss_0"] > 0
    assert all(v >= 0 for v in reports[-1].terms.values())
    assert reports[-1].csv_row()[0] == states[-1].t
    with pytest.raises(ValueError):
        energy(states, states[0].model.profile, 3)


def test_energy_at_rest_on_identity():
    g = SlabGrid(1, 1, 32)
    s = initial_state(Model(make_profile("sine", 2.0, g), OFF), make_velocity("zero", g))
    rep = energy([s], s.model.profile, 0)
    assert rep.terms["v_0"] == 0.0 and rep.terms["curl3"] == 0.0
    assert rep.terms["eta_0"] > 0


def test_curl_transport_vanishes_for_plane_flow():
    res = curl_transport_residual(run_states(kappa=0.0, n=4))
    assert len(res) == 4
    assert max(r for _, r in res) < 1e-12


def test_window_record_on_identity_and_stretch():
    states = run_states(n=1)
    rec = apriori_window(states[0], n_pairs=64, seed=3)
    assert rec.ok and np.isclose(rec.j_min, 1.0) and np.isclose(rec.lipschitz_max, 1.0)
    X = states[0].grid.mesh()
    eta = VectorField(states[0].grid, np.stack([X[0], X[1], 1.2 * X[2]]))
    stretched = replace(states[0], eta=eta, pack=build_deformation(eta))
    rec = apriori_window(stretched, n_pairs=64, seed=3)
    assert not rec.j_ok and np.isclose(rec.j_max, 1.2)
    assert rec.margins()["J"] < 0


def test_smooth_distance_matches_distance_near_faces():
    g = SlabGrid(1, 1, 65)
    d = smooth_distance(g)
    near = np.minimum(g.x3, 1 - g.x3) <= 0.25
    assert np.allclose(d[near], np.minimum(g.x3, 1 - g.x3)[near])
    assert np.all(d[1:-1] > 0)


@pytest.mark.parametrize("s", [1, 2])
def test_hardy_family_below_bound(s):
    g = SlabGrid(4, 4, 64)
    worst = max(hardy_verifier(u, s) for u in hardy_family(g, size=20))
    assert worst <= HARDY_FAMILY_BOUND[s]


def test_hardy_rejects_nonvanishing_input():
    g = SlabGrid(1, 1, 32)
    with pytest.raises(ValueError):
        hardy_verifier(ScalarField(g, 1.0))
    with pytest.raises(ValueError):
        hardy_verifier(ScalarField(g, 0.0), s=3)


def test_hardy_on_distance_times_smooth():
    # u = d~ p gives u / d~ = p exactly away from the faces
    g = SlabGrid(1, 1, 129)
    d = smooth_distance(g)
    u = ScalarField(g, np.broadcast_to(d * (1 + g.x3), g.shape))
    assert 0 < hardy_verifier(u, 1) < 4


@pytest.mark.parametrize("p", [1, 2])
def test_embedding_family_below_bound(p):
    g = SlabGrid(4, 4, 64)
    worst = max(embedding_verifier(f, p) for f in embedding_family(g, size=20))
    assert worst <= EMBEDDING_FAMILY_BOUND[p]


@given(st.floats(0.1, 10.0))
def test_embedding_ratio_is_scale_invariant(c):
    g = SlabGrid(1, 1, 64)
    f = ScalarField(g, np.broadcast_to(np.cos(np.pi * g.x3) + 2.0, g.shape))
    for p in (1, 2):
        assert np.isclose(embedding_verifier(f * c, p), embedding_verifier(f, p), rtol=1e-12)
    with pytest.raises(ValueError):
        embedding_verifier(f, 3)


def test_constant_embedding_ratio():
    # f = 1: ||1||_0^2 / int d^2 = 1 / (2 (1/2)^3 / 3) = 12
    g = SlabGrid(1, 1, 257)
    assert np.isclose(embedding_verifier(ScalarField(g, 1.0), 2), 12.0, rtol=1e-3)


def test_vacuum_slope_persists():
    states = run_states(n=4)
    prof = states[0].model.profile
    b0, t0 = vacuum_slope(states[0], prof)
    assert b0 < 0 and t0 < 0
    samples = vacuum_persistence(states, prof)
    assert len(samples) == len(states)
    assert all(s.worst < 0 for s in samples)
    assert np.allclose(vacuum_slope(states[-1].eta, prof), vacuum_slope(states[-1], prof))
