import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epsolver.grid import SlabGrid, curl
from epsolver.gravity import GravityConfig
from epsolver.initial_data import (
    LANE_EMDEN_HEIGHT,
    VELOCITY_KINDS,
    first_time_derivative,
    make_profile,
    make_velocity,
    profile_from_rho,
    smooth_density,
    vacuum_check,
)


@given(st.sampled_from(["sine", "parabolic"]), st.floats(1.05, 2.95), st.floats(0.0, 0.3))
def test_profiles_pass_vacuum_check(kind, gamma, modulation):
    g = SlabGrid(4, 4, 32)
    prof = make_profile(kind, gamma, g, modulation=modulation)
    assert np.all(prof.rho0.values[..., 0] == 0) and np.all(prof.rho0.values[..., -1] == 0)
    rep = vacuum_check(prof)
    assert rep.passed, rep.reasons
    assert rep.slope_bottom < 0 and rep.slope_top < 0 and rep.C > 0


@pytest.mark.parametrize("gamma", [1.0, 3.0, 0.5])
def test_gamma_range(gamma):
    with pytest.raises(ValueError):
        make_profile("sine", gamma, SlabGrid(1, 1, 16))


def test_lane_emden_requirements():
    with pytest.raises(ValueError):
        make_profile("lane_emden_slab", 2.0, SlabGrid(1, 1, 16))
    with pytest.raises(ValueError):
        make_profile("lane_emden_slab", 1.5, SlabGrid(1, 1, 16, LANE_EMDEN_HEIGHT))
    prof = make_profile("lane_emden_slab", 2.0, SlabGrid(1, 1, 32, LANE_EMDEN_HEIGHT))
    assert vacuum_check(prof).passed


def test_vacuum_check_flags_bad_profiles():
    g = SlabGrid(1, 1, 32)
    x3 = g.x3
    # quadratic vanishing: zero normal slope on the faces
    flat = profile_from_rho(np.broadcast_to(np.sin(np.pi * x3) ** 2, g.shape), 2.0, g, "flat")
    rep = vacuum_check(flat)
    assert not rep.passed
    assert any("slope" in r for r in rep.reasons)
    lifted = profile_from_rho(np.broadcast_to(0.1 + np.sin(np.pi * x3), g.shape), 2.0, g, "lifted")
    assert any("vanish" in r for r in vacuum_check(lifted).reasons)


def test_custom_table(tmp_path):
    x = np.linspace(0, 1, 101)
    path = tmp_path / "rho.txt"
    np.savetxt(path, np.column_stack([x, np.sin(np.pi * x)]))
    prof = make_profile("custom-table", 2.0, SlabGrid(1, 1, 33), table=path)
    assert vacuum_check(prof).passed
    with pytest.raises(ValueError):
        make_profile("custom-table", 2.0, SlabGrid(1, 1, 33))


@pytest.mark.parametrize("kind", VELOCITY_KINDS)
def test_velocity_kinds(kind):
    g = SlabGrid(8, 8, 16)
    u = make_velocity(kind, g, 0.1)
    assert u.values.shape == (3,) + g.shape
    if kind == "zero":
        assert np.all(u.values == 0)
    if kind == "irrotational":
        assert curl(u).max_abs() < 1e-12
    if kind == "vortex":
        assert curl(u).max_abs() > 1e-2
    with pytest.raises(ValueError):
        make_velocity("spiral", g)


@pytest.mark.parametrize("kappa", [1e-2, 1e-3])
def test_smoothing_keeps_vacuum(kappa):
    g = SlabGrid(1, 1, 64)
    prof = make_profile("sine", 2.0, g)
    sm = smooth_density(prof, kappa)
    assert vacuum_check(sm).passed
    assert np.max(np.abs(sm.rho0.values - prof.rho0.values)) < 0.1
    with pytest.raises(ValueError):
        smooth_density(prof, 1.5)


def test_first_time_derivative_at_rest_on_lane_emden():
    g = SlabGrid(1, 1, 128, LANE_EMDEN_HEIGHT)
    prof = make_profile("lane_emden_slab", 2.0, g)
    u0 = make_velocity("zero", g)
    u1 = first_time_derivative(u0, prof, 0.0, GravityConfig(image_layers=8))
    # hydrostatic: pressure gradient balances gravity up to discretisation error
    assert np.max(np.abs(u1.values)) < 5e-3
    u1_free = first_time_derivative(u0, prof, 0.0, GravityConfig(enabled=False))
    assert np.max(np.abs(u1_free.values)) > 0.5
