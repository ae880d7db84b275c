"""Desk-scale convergence studies (affine and lognormal, NIPG, s=20, m=8).

Writes ``results/<name>.txt`` tables and prints the fitted rates.  Each study
takes roughly 1.5 minutes on one core.
"""
import argparse
import time
from pathlib import Path

from dgqmc.cli import parse_config
from dgqmc.experiment import emit_table, run_convergence

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("names", nargs="*", default=["desk_affine", "desk_lognormal"])
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--outdir", default=str(ROOT / "results"))
    args = p.parse_args()
    for name in args.names:
        config = parse_config(ROOT / "configs" / f"{name}.yaml")
        t0 = time.perf_counter()
        report = run_convergence(config, threads=args.threads)
        path = emit_table(report, Path(args.outdir) / f"{name}.txt")
        print(f"{name}: r={report.fit.rate:.4f} C={report.fit.C:.4g} "
              f"({time.perf_counter() - t0:.0f} s) -> {path}")
        for n, e in zip(report.n, report.errors):
            print(f"  n={n:6d}  rmse={e:.4e}")


if __name__ == "__main__":
    main()
