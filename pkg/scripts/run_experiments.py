"""Run a set of simulation configs through the CLI and print each results table.

Example:
    python3 scripts/run_experiments.py configs/mcar_scenarios.yaml configs/mar_scenarios.yaml --out results
    python3 scripts/run_experiments.py --all --replications 10
"""

import argparse
import sys
from pathlib import Path

from twophasecox.cli import main as cli_main

sys.path.insert(0, str(Path(__file__).parent))
from summarize_results import main as summarize  # noqa: E402

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("configs", nargs="*")
    ap.add_argument("--all", action="store_true", help="every config in configs/ except smoke.yaml")
    ap.add_argument("--replications", type=int)
    ap.add_argument("--jobs", type=int)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    configs = [Path(c) for c in args.configs]
    if args.all:
        configs += [p for p in sorted(CONFIG_DIR.glob("*.yaml")) if p.name != "smoke.yaml"]
    if not configs:
        ap.error("name at least one config or pass --all")
    status = 0
    for cfg in configs:
        out = Path(args.out) / cfg.stem
        argv = ["simulate", "--config", str(cfg), "--out", str(out)]
        if args.replications:
            argv += ["--replications", str(args.replications)]
        if args.jobs:
            argv += ["--jobs", str(args.jobs)]
        print(f"== {cfg.name}")
        rc = cli_main(argv)
        status = status or rc
        if rc == 0:
            summarize(out / "results.csv")
    return status


if __name__ == "__main__":
    sys.exit(main())
