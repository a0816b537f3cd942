"""Write a synthetic three-trial stacked CSV (one case-control sampled
efficacy trial, two fully sampled early-phase trials) and print the
command that produces the two-vaccine comparison table from it.
"""

import argparse

from xtrial.synthetic import write_hvtn_like_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="synthetic_hvtn.csv")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    write_hvtn_like_csv(args.out, args.seed)
    print(f"wrote {args.out}")
    print(f"xtrial estimate --input {args.out} --vaccine 1,2 --ref-trials 702 "
          "--ws age,female,bmi,region --categorical region --scale binary,log10 "
          "--s-col binary=resp --s-col log10=mag --out hvtn_results")


if __name__ == "__main__":
    main()
