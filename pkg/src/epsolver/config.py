"""Scenario configuration: flat text with dotted keys, strict parsing, exact echo.

Lines look like `dynamics.kappa = 1e-3`; `#` starts a comment.  Unknown keys,
duplicates and malformed values are rejected with the line number and key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .gravity import FAR_FIELD_MODES, SELFCELL_RULES, GravityConfig
from .initial_data import PROFILE_KINDS, VELOCITY_KINDS


@dataclass(frozen=True)
class GridBlock:
    n1: int = 1
    n2: int = 1
    n3: int = 128
    length3: float = 1.0


@dataclass(frozen=True)
class ProfileBlock:
    kind: str = "sine"
    gamma: float = 2.0
    amplitude: float = 1.0
    modulation: float = 0.0
    table: str = ""
    smooth: bool = False


@dataclass(frozen=True)
class VelocityBlock:
    kind: str = "zero"
    amplitude: float = 0.0


@dataclass(frozen=True)
class DynamicsBlock:
    kappa: float = 0.0
    cfl_safety: float = 0.4
    dt: float = 0.0
    t_end: float = 0.05
    max_steps: int = 100000
    history_depth: int = 5
    s_max: int = 0


@dataclass(frozen=True)
class GravityBlock:
    enabled: bool = True
    image_layers: int = 8
    selfcell_rule: str = "polar-subgrid"
    far_field: str = "sheet"


@dataclass(frozen=True)
class EllipticBlock:
    kmax_tangential: int = 2
    mmax_normal: int = 12
    fixed_point: bool = False


@dataclass(frozen=True)
class OutputBlock:
    cadence: int = 1
    directory: str = "out"
    snapshot: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    profile: ProfileBlock = field(default_factory=ProfileBlock)
    velocity: VelocityBlock = field(default_factory=VelocityBlock)
    dynamics: DynamicsBlock = field(default_factory=DynamicsBlock)
    gravity: GravityBlock = field(default_factory=GravityBlock)
    elliptic: EllipticBlock = field(default_factory=EllipticBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    seed: int = 0

    def gravity_config(self) -> GravityConfig:
        g = self.gravity
        return GravityConfig(image_layers=g.image_layers, selfcell_rule=g.selfcell_rule, enabled=g.enabled, far_field=g.far_field)

    def get(self, key: str):
        if key == "seed":
            return self.seed
        block, name = key.split(".", 1)
        return getattr(getattr(self, block), name)

    def with_value(self, key: str, value) -> ScenarioConfig:
        """Copy with one key replaced; the value is checked like a parsed one."""
        return _apply(self, {key: (value, None)})


BLOCKS = tuple(f.name for f in fields(ScenarioConfig) if f.name != "seed")
CHOICES = {
    "profile.kind": PROFILE_KINDS,
    "velocity.kind": VELOCITY_KINDS,
    "gravity.selfcell_rule": SELFCELL_RULES,
    "gravity.far_field": FAR_FIELD_MODES,
}


def known_keys() -> list[str]:
    keys = []
    base = ScenarioConfig()
    for block in BLOCKS:
        for f in fields(getattr(base, block)):
            keys.append(f"{block}.{f.name}")
    keys.append("seed")
    return keys


def _field_type(key: str):
    if key == "seed":
        return int
    block, name = key.split(".", 1)
    obj = getattr(ScenarioConfig(), block)
    return type(getattr(obj, name))


def _convert(key: str, raw, line: int | None):
    typ = _field_type(key)
    if not isinstance(raw, str):
        if typ is float and isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, typ):
            return raw
        raw = str(raw)
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {typ.__name__}", key, line) from None


def _validate(cfg: ScenarioConfig, lines: dict) -> None:
    def err(msg, key):
        raise ConfigError(msg, key, lines.get(key))

    for key, choices in CHOICES.items():
        if cfg.get(key) not in choices:
            err(f"must be one of {choices}", key)
    gam = cfg.profile.gamma
    if not 1.0 < gam < 3.0:
        err(f"gamma must lie in (1, 3), got {gam}", "profile.gamma")
    g = cfg.grid
    for key in ("grid.n1", "grid.n2"):
        if cfg.get(key) < 1:
            err("must be >= 1", key)
    if g.n3 < 5:
        err("must be >= 5 for the x3 stencil", "grid.n3")
    if not g.length3 > 0:
        err("must be positive", "grid.length3")
    d = cfg.dynamics
    if d.kappa < 0:
        err("must be >= 0", "dynamics.kappa")
    if not 0 < d.cfl_safety <= 1:
        err("must lie in (0, 1]", "dynamics.cfl_safety")
    if d.dt < 0:
        err("must be >= 0 (0 selects the CFL step)", "dynamics.dt")
    if not d.t_end > 0:
        err("must be positive", "dynamics.t_end")
    if d.max_steps < 1:
        err("must be >= 1", "dynamics.max_steps")
    if d.history_depth < 1:
        err("must be >= 1", "dynamics.history_depth")
    if not 0 <= d.s_max <= 2:
        err("must be 0, 1 or 2", "dynamics.s_max")
    if d.history_depth < 2 * d.s_max + 1:
        err("history_depth must be >= 2 * s_max + 1", "dynamics.history_depth")
    if cfg.gravity.image_layers < 0:
        err("must be >= 0", "gravity.image_layers")
    if cfg.elliptic.kmax_tangential < 0:
        err("must be >= 0", "elliptic.kmax_tangential")
    if cfg.elliptic.mmax_normal < 1:
        err("must be >= 1", "elliptic.mmax_normal")
    if cfg.output.cadence < 1:
        err("must be >= 1", "output.cadence")
    if cfg.profile.kind == "custom-table" and not cfg.profile.table:
        err("custom-table needs profile.table", "profile.table")


def _apply(base: ScenarioConfig, values: dict) -> ScenarioConfig:
    valid = set(known_keys())
    updates: dict[str, dict] = {}
    seed = base.seed
    lines = {}
    for key, (raw, line) in values.items():
        if key not in valid:
            raise ConfigError("unknown key", key, line)
        lines[key] = line
        val = _convert(key, raw, line)
        if key == "seed":
            seed = val
            continue
        block, name = key.split(".", 1)
        updates.setdefault(block, {})[name] = val
    kwargs = {b: dataclasses.replace(getattr(base, b), **updates.get(b, {})) for b in BLOCKS}
    cfg = ScenarioConfig(**kwargs, seed=seed)
    _validate(cfg, lines)
    return cfg


def parse_config(text: str) -> ScenarioConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", None, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", None, lineno)
        if key in values:
            raise ConfigError("duplicate key", key, lineno)
        values[key] = (value, lineno)
    return _apply(ScenarioConfig(), values)


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(cfg: ScenarioConfig) -> str:
    """Every key with its materialized value, in a fixed order; parses back to an equal config."""
    out = []
    for key in known_keys():
        out.append(f"{key} = {_format(cfg.get(key))}")
    return "\n".join(out) + "\n"
