"""Run every scenario file next to this script and print one status line each.

Usage: python3 scripts/run_scenarios.py [OUT_ROOT]   (default out/)
Exit status is 0 only when every run finishes with status ok.
"""

import sys
from pathlib import Path

from epsolver.config import load_config
from epsolver.runner import run

HERE = Path(__file__).resolve().parent


def main(out_root: Path) -> int:
    worst = 0
    for path in sorted(HERE.glob("*.cfg")):
        cfg = load_config(path)
        res = run(cfg, out_root / path.stem)
        fails = sorted({row[1] for row in res.monitors if row[3] != "" and not row[3]})
        note = f" failing monitors {fails}" if fails else ""
        print(f"{path.stem:16s} {res.status:20s} steps {len(res.steps):5d} t {res.state.t if res.state else float('nan'):.4f}{note}")
        worst = max(worst, res.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out")))
