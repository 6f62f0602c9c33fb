"""Ablation toggles: parameter counts, and optionally a short overfit per variant.

    python3 scripts/ablation.py             # counts and init-output deltas only
    python3 scripts/ablation.py --steps 300 # also train each variant on one patch
"""

import argparse

from sdwnet.experiments import ablation_variants, desk_pair, init_output_delta, overfit_pair
from sdwnet.network import SDWNetConfig, count_params, init_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--steps", type=int, default=0)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    variants = ablation_variants(SDWNetConfig(depth=args.depth, width=args.width))
    base = variants["base"]
    base_count = count_params(init_params(base))
    pair = desk_pair(seed=args.seed) if args.steps else None
    print(f"{'variant':<20} {'params':>8} {'delta':>7} {'out_diff':>9}" + ("  psnr_gain" if args.steps else ""))
    for name, cfg in variants.items():
        n = count_params(init_params(cfg))
        line = f"{name:<20} {n:8d} {n - base_count:+7d} {init_output_delta(base, cfg):9.2e}"
        if args.steps:
            line += f"  {overfit_pair(*pair, cfg, args.steps).gain:+9.2f}"
        print(line)


if __name__ == "__main__":
    main()
