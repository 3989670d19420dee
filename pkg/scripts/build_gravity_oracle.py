"""Evaluate the brute-force gravity oracle on the planar sine profile and cache it as JSON.

Usage: python scripts/build_gravity_oracle.py [OUT]   (default tests/data/gravity_oracle.json)
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

from epsolver.gravity import GravityConfig, brute_force_oracle

N3 = 128
LAYERS = 8
SAMPLES = 32


def sample_indices() -> list[int]:
    return [int(i) for i in np.round(np.linspace(0, N3 - 1, SAMPLES))]


def main(out: Path) -> None:
    x3 = np.arange(N3) / (N3 - 1)
    x3[-1] = 1.0
    idx = sample_indices()
    pts = np.zeros((3, SAMPLES))
    pts[2] = x3[idx]
    t0 = time.perf_counter()
    # gamma = 2 sine profile: rho0 = omega0 = sin(pi x3)
    values = brute_force_oracle(lambda z: np.sin(np.pi * z[2]), pts, 1.0, GravityConfig(image_layers=LAYERS))
    elapsed = time.perf_counter() - t0
    data = {
        "profile": "sine",
        "gamma": 2.0,
        "n3": N3,
        "image_layers": LAYERS,
        "indices": idx,
        "points": pts.T.tolist(),
        "force": values.T.tolist(),
        "seconds": round(elapsed, 2),
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {out} ({elapsed:.1f} s)")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "data" / "gravity_oracle.json")
