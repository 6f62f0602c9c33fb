"""Write a synthetic motion-blur dataset (PNG pairs + pairs.jsonl).

    python3 scripts/make_synthetic.py --out data/train --count 32 --height 240 --width 320
"""

import argparse

from sdwnet.synthetic import write_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--height", type=int, default=240)
    ap.add_argument("--width", type=int, default=320)
    ap.add_argument("--blur-length", type=int, default=9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    manifest = write_synthetic_dataset(args.out, args.count, args.height, args.width, args.seed, args.blur_length)
    print(manifest)


if __name__ == "__main__":
    main()
