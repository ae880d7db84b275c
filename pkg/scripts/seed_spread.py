"""Spread of the fitted desk-scale rate over several shift seeds.

With R random shifts the RMSE estimate itself fluctuates by roughly
1/sqrt(2(R-1)), so the fitted slope carries sampling noise.  This script
measures it directly.
"""
import argparse
import dataclasses
from pathlib import Path

import numpy as np

from dgqmc.cli import parse_config
from dgqmc.experiment import run_convergence

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(ROOT / "configs" / "desk_affine.yaml"))
    p.add_argument("--seeds", type=int, nargs="+", default=[12345, 12346, 12347, 12348, 12349])
    p.add_argument("--mesh-m", type=int, help="override the mesh size for a quicker look")
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    base = parse_config(args.config)
    if args.mesh_m:
        base = dataclasses.replace(base, mesh_m=args.mesh_m)
    rates = []
    for seed in args.seeds:
        rep = run_convergence(dataclasses.replace(base, seed=seed), threads=args.threads)
        rates.append(rep.fit.rate)
        print(f"seed {seed}: r={rep.fit.rate:.4f}", flush=True)
    rates = np.array(rates)
    print(f"mean {rates.mean():.4f}  sd {rates.std(ddof=1):.4f}  spread {np.ptp(rates):.4f}")


if __name__ == "__main__":
    main()
