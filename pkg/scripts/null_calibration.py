"""Type-I error of the 0.05-level contrast test when both vaccines share the
same effect (true standardized difference is zero).

    python scripts/null_calibration.py --preset scenario1 --reps 1000
"""

import argparse
from dataclasses import replace

from xtrial.sim import contrast_monte_carlo, load_preset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="scenario1")
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--ref-trials", default="1")
    args = ap.parse_args()
    spec = replace(load_preset(args.preset), base_seed=args.seed)
    t_ref = {int(t) for t in args.ref_trials.split(",")}
    draws = contrast_monte_carlo(spec, t_ref, 1, 2, replicates=args.reps)
    diff, se, p = draws.T
    print(f"replicates used  {len(draws)}/{args.reps}")
    print(f"mean difference  {diff.mean():+.4f}")
    print(f"sd / mean se     {diff.std(ddof=1):.4f} / {se.mean():.4f}")
    print(f"rejection rate   {(p < 0.05).mean():.3f}")


if __name__ == "__main__":
    main()
