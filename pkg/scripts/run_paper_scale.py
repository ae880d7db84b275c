"""Full-scale studies (s=100, m=16, n up to 2^19, R=16).

These take many hours on one core.  Use ``--threads`` to spread the PDE solves.
Results are written next to the configured ``out`` path with a run manifest.
"""
import argparse
import sys
from pathlib import Path

from dgqmc.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
NAMES = ["paper_affine_nipg", "paper_affine_sipg100", "paper_lognormal_nipg"]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("names", nargs="*", default=NAMES)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    for name in args.names:
        print(f"== {name}", flush=True)
        code = cli_main(["--threads", str(args.threads), "qmc-run", str(ROOT / "configs" / f"{name}.yaml")])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
