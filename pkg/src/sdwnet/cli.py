"""``sdwnet`` command line: crop, train, infer, eval, dwt, summary.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure during
training. Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .data import DataError, crop_dataset, load_png, read_pair_manifest, save_png
from .losses import LossConfig
from .network import SDWNetConfig, count_params, init_params, layer_table, sdwnet_forward
from .trainer import NonFiniteLossError, evaluate, model_from_checkpoint, train
from .wavelet import BANDS, dwt_haar

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_crop(args) -> int:
    records = crop_dataset(args.manifest, args.out, args.patch, args.stride, workers=args.workers)
    _emit({"patches": len(records), "manifest": str(Path(args.out) / "manifest.jsonl")})
    return 0


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    cfg = cfg.override("loss", **{"lambda": args.lambda_})
    cfg = cfg.override("train", max_steps=args.steps, seed=args.seed, workers=args.workers)
    cfg = cfg.override("data", out_dir=args.out, train_manifest=args.train_manifest,
                       val_manifest=args.val_manifest)
    return cfg


def cmd_train(args) -> int:
    cfg = _run_config(args)
    _emit({"effective_config": cfg.to_dict()})
    if not cfg.data.train_manifest:
        raise UsageError("no training manifest (set data.train_manifest or --train-manifest)")
    records = read_pair_manifest(cfg.data.train_manifest)
    val = read_pair_manifest(cfg.data.val_manifest) if cfg.data.val_manifest else []
    out_dir = Path(cfg.data.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    res = train(cfg.model, cfg.train, records, cfg.loss, out_dir=out_dir, val_records=val,
                resume=args.resume, init=args.init)
    _emit({"steps": res.steps, "checkpoint": str(res.checkpoint),
           "final_loss": res.log[-1]["loss"] if res.log else None})
    return 0


def _model(args, ckpt=None):
    expect = load_run_config(args.config).model if getattr(args, "config", None) else None
    return model_from_checkpoint(ckpt or args.ckpt, "single", expect)


def cmd_infer(args) -> int:
    cfg, params = _model(args)
    img = load_png(args.input)
    out = sdwnet_forward(img, params, cfg)
    if not out.is_finite():
        raise FloatingPointError("restored image contains non-finite values")
    save_png(out, args.output)
    _emit({"output": args.output, "height": img.shape[2], "width": img.shape[3]})
    return 0


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.ckpt)
    cfg, params = _model(args, ck)
    loss_cfg = LossConfig(**ck.header["loss"]) if "loss" in ck.header else None
    report = evaluate(params, cfg, read_pair_manifest(args.manifest), loss_cfg, workers=args.workers,
                      report_path=args.report)
    _emit(report)
    return 0


def _normalise(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi - lo == 0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def cmd_dwt(args) -> int:
    img = load_png(args.input, np.float64)
    x, _ = ad.pad_to_even(img)
    bands = dwt_haar(x)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "subbands.npz", **{b: t.data[0] for b, t in zip(BANDS, bands)})
    for b, t in zip(BANDS, bands):
        save_png(_normalise(t.data), out / f"{b}.png")
    _emit({"subbands": [str(out / f"{b}.png") for b in BANDS], "raw": str(out / "subbands.npz")})
    return 0


def cmd_summary(args) -> int:
    model_cfg = load_run_config(args.config).model if args.config else SDWNetConfig()
    params = init_params(model_cfg)
    rows = layer_table(params)
    width = max(len(n) for n, _, _ in rows)
    for name, shape, n in rows:
        print(f"{name:<{width}}  {str(tuple(shape)):<18} {n:>10d}")
    print(f"{'total':<{width}}  {'':<18} {count_params(params):>10d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdwnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("crop", help="sliding-window crop of a pair manifest")
    c.add_argument("--in", dest="manifest", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--patch", type=int, default=480)
    c.add_argument("--stride", type=int, default=240)
    c.add_argument("--workers", type=int, default=0)
    c.set_defaults(func=cmd_crop)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config")
    t.add_argument("--resume", help="checkpoint to continue (weights, optimiser, step)")
    t.add_argument("--init", help="checkpoint to start from (weights only)")
    t.add_argument("--out")
    t.add_argument("--train-manifest")
    t.add_argument("--val-manifest")
    t.add_argument("--lambda", dest="lambda_", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="deblur one PNG")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--out", dest="output", required=True)
    i.add_argument("--config", help="fail unless the checkpoint matches this config's model")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM report over a pair manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report")
    e.add_argument("--config")
    e.add_argument("--workers", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dwt", help="write the four Haar subbands of a PNG")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dwt)

    s = sub.add_parser("summary", help="parameter count and per-layer table")
    s.add_argument("--config")
    s.set_defaults(func=cmd_summary)
    return p


def _fail(code: int, kind: str, err: Exception) -> int:
    print(json.dumps({"error": kind, "message": str(err)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLossError as e:
        return _fail(EXIT_NUMERIC, "non_finite_loss", e)
    except FloatingPointError as e:
        return _fail(EXIT_NUMERIC, "numeric", e)
    except (DataError, ConfigError, CheckpointError, UsageError, ad.ShapeError, ValueError) as e:
        return _fail(EXIT_INPUT, type(e).__name__, e)
    except OSError as e:
        return _fail(EXIT_INPUT, "io", e)


if __name__ == "__main__":
    sys.exit(main())
