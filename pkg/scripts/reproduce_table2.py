"""Run all three simulation presets and print the combined metrics table.

    python scripts/reproduce_table2.py --reps 1000 --seed 1 [--gdelta estimate]
"""

import argparse
import time
from dataclasses import replace

from xtrial.report import markdown, table2_rows
from xtrial.sim import PRESETS, load_preset, run_monte_carlo


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--gdelta", choices=("known", "estimate"), default="known")
    ap.add_argument("--presets", default=",".join(PRESETS))
    args = ap.parse_args()
    records = []
    for name in args.presets.split(","):
        t0 = time.perf_counter()
        spec = replace(load_preset(name), base_seed=args.seed)
        records += run_monte_carlo(spec, replicates=args.reps, gdelta=args.gdelta).records()
        print(f"{name}: {time.perf_counter() - t0:.1f}s")
    print(markdown(table2_rows(records)))


if __name__ == "__main__":
    main()
