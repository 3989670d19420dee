"""Halve kappa on the perturbation scenario and report the Cauchy differences of the final velocity.

Usage: python3 scripts/kappa_sweep.py [OUT]   (default out/kappa_sweep)
A ratio near 2 between consecutive differences means the velocity converges at rate O(kappa).
"""

import sys
from pathlib import Path

from epsolver.config import load_config
from epsolver.runner import sweep

HERE = Path(__file__).resolve().parent
KAPPAS = [8e-3, 4e-3, 2e-3, 1e-3]


def main(out: Path) -> int:
    cfg = load_config(HERE / "perturbation.cfg")
    rows = sweep(cfg, "dynamics.kappa", KAPPAS, out)
    prev = None
    for r in rows:
        ratio = "" if prev is None or r.diff_prev is None else f" ratio {prev / r.diff_prev:.4f}"
        diff = "" if r.diff_prev is None else f" diff {r.diff_prev:.6e}"
        print(f"kappa {r.value:.1e} status {r.status} v_l2 {r.v_l2:.6e}{diff}{ratio}")
        prev = r.diff_prev
    print(f"table {out / 'sweep.csv'}")
    return 0 if all(r.status == "ok" for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out/kappa_sweep")))
