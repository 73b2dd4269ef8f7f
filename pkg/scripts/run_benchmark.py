"""Run the strategy benchmark and print the comparison table.

    python3 scripts/run_benchmark.py                    # bundled default config
    python3 scripts/run_benchmark.py --config smoke.json --out runs/smoke
"""
import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

from rntforge.evalharness import ExperimentConfig, run_experiment
from rntforge.evalharness.experiment import render_table


def load(name):
    p = Path(name)
    if p.exists():
        return json.loads(p.read_text())
    return json.loads(resources.files("rntforge.configs").joinpath(p.name).read_text())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="default.json")
    ap.add_argument("--out", default="runs/benchmark")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    cfg = load(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    start = time.perf_counter()
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    result = run_experiment(ExperimentConfig.from_dict(cfg), out=args.out, log=log)
    print(render_table(result))
    print(f"total {time.perf_counter() - start:.0f} s; outputs in {args.out}")


if __name__ == "__main__":
    main()
