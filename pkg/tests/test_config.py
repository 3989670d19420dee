import pytest
from hypothesis import given
from hypothesis import strategies as st

from epsolver.config import ScenarioConfig, echo_config, known_keys, parse_config
from epsolver.errors import ConfigError


@given(
    st.integers(1, 64),
    st.integers(5, 512),
    st.floats(0.1, 10.0),
    st.floats(1.01, 2.99),
    st.floats(0.0, 1.0),
    st.booleans(),
    st.integers(0, 2**31),
)
def test_echo_round_trip(n1, n3, length3, gamma, kappa, enabled, seed):
    text = (
        f"grid.n1 = {n1}\ngrid.n3 = {n3}\ngrid.length3 = {length3!r}\n"
        f"profile.gamma = {gamma!r}\ndynamics.kappa = {kappa!r}\n"
        f"gravity.enabled = {'true' if enabled else 'false'}\nseed = {seed}\n"
    )
    cfg = parse_config(text)
    echo = echo_config(cfg)
    assert parse_config(echo) == cfg
    assert echo_config(parse_config(echo)) == echo
    assert len(echo.splitlines()) == len(known_keys())


def test_defaults_and_comments():
    cfg = parse_config("# a comment\n\n  dynamics.kappa = 1e-3   # trailing\n")
    assert cfg.dynamics.kappa == 1e-3
    assert cfg.grid == ScenarioConfig().grid


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("grid.n3 = 64\ndynamics.kapa = 1\n", "dynamics.kapa", 2),
        ("grid.n3 = 64\ngrid.n3 = 32\n", "grid.n3", 2),
        ("grid.n3 = sixty\n", "grid.n3", 1),
        ("profile.gamma = 3\n", "profile.gamma", 1),
        ("grid.n3 = 4\n", "grid.n3", 1),
        ("profile.kind = cube\n", "profile.kind", 1),
        ("gravity.enabled = maybe\n", "gravity.enabled", 1),
        ("dynamics.s_max = 2\ndynamics.history_depth = 3\n", "dynamics.history_depth", 2),
    ],
)
def test_rejections_name_line_and_key(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    msg = str(info.value)
    assert f"line {line}" in msg and key in msg


def test_missing_equals_sign():
    with pytest.raises(ConfigError) as info:
        parse_config("grid.n3 64\n")
    assert "line 1" in str(info.value)


def test_with_value_validates():
    cfg = ScenarioConfig()
    assert cfg.with_value("dynamics.kappa", 2).dynamics.kappa == 2.0
    with pytest.raises(ConfigError):
        cfg.with_value("dynamics.kappa", -1.0)
    with pytest.raises(ConfigError):
        cfg.with_value("nope.key", 1)
