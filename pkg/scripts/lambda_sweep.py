"""Single-patch overfit for several SSIM weights; prints PSNR per lambda.

    python3 scripts/lambda_sweep.py --steps 500 --out runs/lambda_sweep.json
"""

import argparse
import json
from pathlib import Path

from sdwnet.experiments import lambda_sweep
from sdwnet.network import SDWNetConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = SDWNetConfig(depth=args.depth, width=args.width)
    results = lambda_sweep(args.lambdas, args.steps, args.size, args.seed, cfg)
    rows = []
    print(f"{'lambda':>7} {'psnr_in':>8} {'psnr_out':>9} {'gain':>6} {'ssim':>6} {'secs':>6}")
    for lam, r in results.items():
        print(f"{lam:7.2f} {r.psnr_input:8.2f} {r.psnr_output:9.2f} {r.gain:6.2f} {r.ssim_output:6.3f} {r.seconds:6.1f}")
        rows.append({"lambda": lam, "psnr_input": r.psnr_input, "psnr_output": r.psnr_output,
                     "ssim_output": r.ssim_output, "seconds": r.seconds})
    best = max(rows, key=lambda row: row["psnr_output"])
    print(f"best lambda: {best['lambda']}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
