"""Command line: run, sweep and verify."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ScenarioConfig, load_config
from .errors import ConfigError
from .runner import run, sweep
from .verify import FAULTS, SUITES, summary_json, verify

log = logging.getLogger("epsolver")


def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.scenario) if args.scenario else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_value("seed", args.seed)
    return cfg


def _parse_values(text: str) -> list[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epsolver", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", metavar="PATH", help="scenario file (key = value lines)")
        sp.add_argument("--seed", type=int, help="root seed, overrides the scenario")
        sp.add_argument("--out", metavar="DIR", help="output directory")

    r = sub.add_parser("run", help="run one scenario")
    common(r)
    r.add_argument("--dry-run", action="store_true", help="echo the config and manifest only")

    s = sub.add_parser("sweep", help="run a scenario over values of one numeric key")
    common(s)
    s.add_argument("--key", required=True, help="dotted key, e.g. dynamics.kappa")
    s.add_argument("--values", required=True, type=_parse_values, help="comma-separated values")

    v = sub.add_parser("verify", help="property suites with fixed seeds")
    v.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", metavar="DIR", help="also write verify.json here")
    v.add_argument("--inject-fault", choices=FAULTS, help="corrupt an input to exercise the failure path")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = _scenario(args)
            res = run(cfg, args.out, dry_run=args.dry_run)
            print(f"status {res.status} steps {len(res.steps)} out {res.directory}")
            if res.error:
                print(res.error, file=sys.stderr)
            return 0 if res.status == "dry-run" else res.exit_code
        if args.command == "sweep":
            cfg = _scenario(args)
            out = args.out or cfg.output.directory
            rows = sweep(cfg, args.key, args.values, out)
            for r in rows:
                diff = "" if r.diff_prev is None else f" v_diff_prev {r.diff_prev:.6e}"
                print(f"{args.key}={r.value!r} status {r.status} v_l2 {r.v_l2:.6e}{diff}")
            print(f"table {Path(out) / 'sweep.csv'}")
            return 0 if all(r.status == "ok" for r in rows) else 1
        summary = verify(args.suite, args.seed, args.inject_fault)
        text = summary_json(summary)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "verify.json").write_text(text)
        sys.stdout.write(text)
        return 0 if summary["passed"] else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
