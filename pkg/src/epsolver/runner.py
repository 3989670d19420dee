"""Run orchestration: build the model from a scenario, step it, write CSVs and a manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, echo_config
from .diagnostics import CurlTransportTracker, EnergyMonitor, WindowMonitor, vacuum_slope
from .dynamics import STATUS_J_EXIT, STATUS_LOST, STATUS_OK, FlowState, Model, StepReport, cfl_dt, initial_state, step
from .elliptic import GalerkinBasis, fixed_point_defect
from .grid import SlabGrid, VectorField, l2_norm
from .initial_data import make_profile, make_velocity, smooth_density
from .snapshot import write_snapshot

log = logging.getLogger(__name__)

EXIT_CODES = {STATUS_OK: 0, "error": 1, STATUS_J_EXIT: 2, STATUS_LOST: 3}
MONITOR_HEADER = ("t", "name", "value", "pass")
SLOPE_MARGIN = 0.5


@dataclass
class RunResult:
    status: str
    config: ScenarioConfig
    directory: Path | None = None
    state: FlowState | None = None
    steps: list[StepReport] = field(default_factory=list)
    monitors: list[tuple] = field(default_factory=list)
    energy_rows: list[tuple] = field(default_factory=list)
    energy_header: tuple = ()
    energy_reference: float | None = None
    files: dict = field(default_factory=dict)
    error: str = ""

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.status, 1)

    def monitor_series(self, name: str) -> list[tuple[float, float, bool]]:
        return [(t, v, p) for (t, n, v, p) in self.monitors if n == name]


def build_model(cfg: ScenarioConfig) -> tuple[Model, VectorField]:
    gb = cfg.grid
    grid = SlabGrid(gb.n1, gb.n2, gb.n3, gb.length3)
    pb = cfg.profile
    prof = make_profile(pb.kind, pb.gamma, grid, pb.amplitude, pb.table or None, pb.modulation)
    if pb.smooth and cfg.dynamics.kappa > 0:
        prof = smooth_density(prof, cfg.dynamics.kappa)
    model = Model(prof, cfg.gravity_config(), cfg.dynamics.kappa, cfg.dynamics.history_depth)
    u0 = make_velocity(cfg.velocity.kind, grid, cfg.velocity.amplitude)
    return model, u0


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Collector:
    """Per-step diagnostics of a run, written in production order."""

    def __init__(self, state: FlowState, cfg: ScenarioConfig):
        self.cfg = cfg
        prof = state.model.profile
        self.energy = EnergyMonitor(prof, cfg.dynamics.s_max, cfg.dynamics.kappa)
        self.window = WindowMonitor(seed=cfg.seed)
        self.curl = CurlTransportTracker(state)
        self.slope0 = vacuum_slope(state, prof)
        self.monitors: list[tuple] = []
        self.energy_rows: list[tuple] = []
        self._energy_names: list[str] = []
        self.basis = None
        if cfg.elliptic.fixed_point and cfg.dynamics.kappa > 0:
            g = state.grid
            self.basis = GalerkinBasis(g, cfg.elliptic.kmax_tangential, min(cfg.elliptic.mmax_normal, g.n3 - 2))
        self.observe(state)

    def _mon(self, t, name, value, ok=""):
        self.monitors.append((t, name, float(value), ok))

    def observe(self, state: FlowState) -> None:
        t = state.t
        prof = state.model.profile
        rec = self.window.update(state)
        self._mon(t, "j_min", rec.j_min, rec.j_ok)
        self._mon(t, "j_max", rec.j_max, rec.j_ok)
        self._mon(t, "coercivity", rec.coercivity_min, rec.coercivity_ok)
        self._mon(t, "lipschitz_min", rec.lipschitz_min, rec.lipschitz_ok)
        self._mon(t, "lipschitz_max", rec.lipschitz_max, rec.lipschitz_ok)
        sb, st = vacuum_slope(state, prof)
        self._mon(t, "slope_bottom", sb, sb < 0 and sb <= SLOPE_MARGIN * self.slope0[0])
        self._mon(t, "slope_top", st, st < 0 and st <= SLOPE_MARGIN * self.slope0[1])
        self._mon(t, "v_l2", l2_norm(state.v))
        rep = self.energy.update(list(state.history))
        ref = self.energy.reference
        self._energy_names = rep.names()
        self.energy_rows.append(tuple(rep.csv_row()))
        if ref is not None and rep.complete:
            self._mon(t, "energy_ratio", rep.total / ref.total, rep.total <= 2.0 * ref.total)
        if self.basis is not None and len(state.history) > 1:
            fp = fixed_point_defect(state, self.basis)
            self._mon(t, "fixed_point_defect", fp.defect)
            self._mon(t, "fixed_point_c", fp.c_t)
            self._mon(t, "frak_residual", fp.frak_residual)

    def feed(self, state: FlowState, observe: bool) -> None:
        n_before = len(self.curl.series)
        self.curl.feed(state)
        for t, r in self.curl.series[n_before:]:
            self._mon(t, "curl_residual", r)
        if observe:
            self.observe(state)

    @property
    def energy_header(self) -> tuple:
        return ("t", *self._energy_names, "total")


def simulate(cfg: ScenarioConfig) -> RunResult:
    """Run a scenario in memory (no files)."""
    model, u0 = build_model(cfg)
    state = initial_state(model, u0)
    col = Collector(state, cfg)
    d = cfg.dynamics
    steps: list[StepReport] = []
    status = STATUS_OK
    n = 0
    while state.t < d.t_end * (1 - 1e-12) and n < d.max_steps:
        dt = d.dt if d.dt > 0 else cfl_dt(state, d.cfl_safety)
        dt = min(dt, d.t_end - state.t)
        new, rep = step(state, dt)
        steps.append(rep)
        n += 1
        if new.status == STATUS_LOST:
            status = STATUS_LOST
            break
        state = new
        last = state.t >= d.t_end * (1 - 1e-12)
        col.feed(state, observe=(n % cfg.output.cadence == 0) or last)
        if state.status == STATUS_J_EXIT:
            status = STATUS_J_EXIT
            break
    res = RunResult(status, cfg, None, state, steps, col.monitors, col.energy_rows, col.energy_header)
    ref = col.energy.reference
    res.energy_reference = None if ref is None else ref.total
    return res


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None, dry_run: bool = False) -> RunResult:
    """Run a scenario and write config echo, CSVs, optional snapshot and manifest to out_dir."""
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, bytes] = {"config.cfg": echo_config(cfg).encode()}
    t0 = time.perf_counter()
    if dry_run:
        res = RunResult("dry-run", cfg, out)
    else:
        try:
            res = simulate(cfg)
        except Exception as exc:  # reported through the exit status and the manifest
            log.error("run failed: %s", exc)
            res = RunResult("error", cfg, out, error=f"{type(exc).__name__}: {exc}")
        if res.status != "error":
            files["steps.csv"] = csv_text(StepReport.CSV_HEADER, [r.csv_row() for r in res.steps]).encode()
            files["energy.csv"] = csv_text(res.energy_header, res.energy_rows).encode()
            files["monitors.csv"] = csv_text(MONITOR_HEADER, res.monitors).encode()
    elapsed = time.perf_counter() - t0
    for name, data in files.items():
        (out / name).write_bytes(data)
    if cfg.output.snapshot and res.state is not None:
        write_snapshot(out / "final_v.epfs", res.state.v)
        write_snapshot(out / "final_eta.epfs", res.state.eta)
        for name in ("final_v.epfs", "final_eta.epfs"):
            files[name] = (out / name).read_bytes()
    manifest = {
        "build": build_id(),
        "status": res.status,
        "error": res.error,
        "wall_clock_seconds": round(elapsed, 3),
        "steps": len(res.steps),
        "files": {name: _sha(data) for name, data in sorted(files.items())},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    res.directory = out
    res.files = {name: out / name for name in files}
    return res


# ---------------------------------------------------------------- sweep


@dataclass
class SweepRow:
    value: object
    status: str
    t: float
    v_l2: float
    j_min: float
    j_max: float
    diff_prev: float | None
    error: str = ""


SWEEP_HEADER = ("value", "status", "t", "v_l2", "j_min", "j_max", "v_diff_prev", "error")


def sweep(cfg: ScenarioConfig, key: str, values, out_dir: str | Path | None = None) -> list[SweepRow]:
    """Run each value of one numeric key; report final diagnostics and ||v_i - v_{i-1}||_0 at the end."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if not isinstance(cfg.get(key), (int, float)) or isinstance(cfg.get(key), bool):
        raise ValueError(f"sweep key {key} is not numeric")
    rows: list[SweepRow] = []
    prev_v = None
    for val in values:
        try:
            res = simulate(cfg.with_value(key, val))
        except Exception as exc:  # collected, the sweep continues
            rows.append(SweepRow(val, "error", float("nan"), float("nan"), float("nan"), float("nan"), None, str(exc)))
            prev_v = None
            continue
        st = res.state
        J = st.pack.J.values
        diff = None
        if prev_v is not None and prev_v.grid == st.v.grid:
            diff = l2_norm(st.v - prev_v)
        rows.append(SweepRow(val, res.status, st.t, l2_norm(st.v), float(J.min()), float(J.max()), diff))
        prev_v = st.v
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = [(r.value, r.status, r.t, r.v_l2, r.j_min, r.j_max, "" if r.diff_prev is None else r.diff_prev, r.error) for r in rows]
        (out / "sweep.csv").write_text(csv_text(SWEEP_HEADER, table))
    return rows
