"""Command-line entry point: degrade, train, eval, and sr subcommands."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .imaging import DegradationSpec, load_png, save_png, write_manifest
from .model import EpsrConfig, build_params, count_blocks, count_parameters
from .tensor import ConfigError
from .trainer import (BicubicUpscaler, Dataset, DivergenceError, EpsrModel,
                      TrainConfig, evaluate, super_resolve, train)

_MODEL_KEYS = ("fractal_depth", "channels", "eca_kernel", "scale", "attention",
               "reduction", "ep_source")
_TRAIN_KEYS = ("batch_size", "lr0", "lr_halving_period", "beta1", "beta2",
               "adam_eps", "lr_patch", "epochs", "steps_per_epoch", "seed",
               "eval_interval", "checkpoint_interval")
_RUN_KEYS = ("manifest", "out", "dtype")

_DEFAULTS = {
    "fractal_depth": 7, "channels": 64, "eca_kernel": 9, "scale": 2,
    "attention": "eca", "reduction": 16, "ep_source": "fe",
    "batch_size": 8, "lr0": 1e-4, "lr_halving_period": 200, "beta1": 0.9,
    "beta2": 0.99, "adam_eps": 1e-8, "lr_patch": 48, "epochs": 1,
    "steps_per_epoch": 1000, "seed": 0, "eval_interval": 0,
    "checkpoint_interval": 0, "manifest": "", "out": "run", "dtype": "float32",
}

_INT_KEYS = {"fractal_depth", "channels", "eca_kernel", "scale", "reduction",
             "batch_size", "lr_halving_period", "lr_patch", "epochs",
             "steps_per_epoch", "seed", "eval_interval", "checkpoint_interval"}
_FLOAT_KEYS = {"lr0", "beta1", "beta2", "adam_eps"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def read_config_file(path) -> dict:
    """Parse a plain 'key=value' config file (comments with #)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def resolve_config(args) -> dict:
    """Defaults, then config file, then explicit command-line flags."""
    values = dict(_DEFAULTS)
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def write_config_echo(path, values: dict) -> None:
    lines = [f"{k}={values[k]}" for k in (*_MODEL_KEYS, *_TRAIN_KEYS, *_RUN_KEYS)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def model_config_from(values: dict) -> EpsrConfig:
    return EpsrConfig(
        fractal_depth=values["fractal_depth"], channels=values["channels"],
        eca_kernel=values["eca_kernel"], scale=values["scale"],
        attention=values["attention"], reduction=values["reduction"],
        ep_residual_source=values["ep_source"])


def train_config_from(values: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=values["batch_size"], lr0=values["lr0"],
        lr_halving_period=values["lr_halving_period"], beta1=values["beta1"],
        beta2=values["beta2"], adam_eps=values["adam_eps"],
        lr_patch=values["lr_patch"], epochs=values["epochs"],
        steps_per_epoch=values["steps_per_epoch"], seed=values["seed"],
        eval_interval=values["eval_interval"],
        checkpoint_interval=values["checkpoint_interval"])


def _degradation_from(tag: str, scale: int, bd_downsample: str) -> DegradationSpec:
    tag = tag.lower()
    if tag == "bi":
        return DegradationSpec.bi(scale)
    if tag == "bd":
        return DegradationSpec.bd(downsample=bd_downsample)
    if tag == "dn":
        return DegradationSpec.dn()
    raise ConfigError(f"unknown degradation tag {tag!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_degrade(args) -> int:
    from .imaging import degrade, read_manifest

    spec = _degradation_from(args.tag, args.scale, args.bd_downsample)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(args.manifest)
    pairs = []
    failures = 0
    for i, (hr_path, _) in enumerate(entries):
        try:
            hr = load_png(hr_path)
            lr = degrade(hr, spec, seed=args.seed + i)
        except Exception as exc:
            print(f"error: {hr_path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        lr_path = out_dir / f"{Path(hr_path).stem}_x{spec.scale}_{spec.tag}.png"
        save_png(lr, lr_path)
        pairs.append((Path(hr_path).resolve(), lr_path.resolve()))
        print(f"{hr_path} -> {lr_path}")
    write_manifest(out_dir / "pairs.txt", pairs)
    return 1 if failures else 0


def cmd_train(args) -> int:
    values = resolve_config(args)
    if not values["manifest"]:
        print("error: no dataset manifest given (use --manifest or a config file)",
              file=sys.stderr)
        return 2
    if not Path(values["manifest"]).exists():
        print(f"error: manifest {values['manifest']} not found", file=sys.stderr)
        return 2
    values["manifest"] = str(Path(values["manifest"]).resolve())
    run_dir = Path(values["out"])
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(run_dir / "config.txt", values)

    model_cfg = model_config_from(values)
    train_cfg = train_config_from(values)
    dataset = Dataset.from_manifest(values["manifest"])
    dtype = np.float64 if values["dtype"] == "float64" else np.float32
    params = build_params(model_cfg, seed=train_cfg.seed, dtype=dtype)
    print(f"model: {count_blocks(model_cfg)} blocks, "
          f"{count_parameters(params)} parameters")
    try:
        result = train(params, model_cfg, dataset, train_cfg, run_dir=run_dir)
    except DivergenceError as exc:
        print(f"error: training diverged at step {exc.step}: {exc}",
              file=sys.stderr)
        return 3
    from .report import plot_history, write_history_tsv
    write_history_tsv(run_dir / "history.tsv", result.history)
    plot_history(run_dir / "loss_curve.png", result.history)
    print(f"final loss: {result.history[-1].total:.6f} "
          f"after {result.steps_run} steps")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _load_model(args):
    if args.model == "bicubic":
        if args.checkpoint:
            raise ConfigError("--model bicubic takes no checkpoint")
        return BicubicUpscaler(args.scale), None
    if not args.checkpoint:
        raise ConfigError("give --checkpoint PATH or --model bicubic")
    params, config = load_checkpoint(args.checkpoint)
    return EpsrModel(params, config), config


def cmd_eval(args) -> int:
    model, model_cfg = _load_model(args)
    scale = model_cfg.scale if model_cfg is not None else args.scale
    spec = _degradation_from(args.tag, scale, args.bd_downsample)
    dataset = Dataset.from_manifest(args.manifest)
    report = evaluate(model, dataset, spec, shave=args.shave,
                      ensemble=args.ensemble, seed=args.seed)
    name = Path(args.manifest).stem
    for row in report:
        print(f"{row.name}\t{row.psnr:.4f}\t{row.ssim:.4f}")
    print(f"mean\t{report.psnr_mean:.4f}\t{report.ssim_mean:.4f}")
    if args.out:
        from .report import plot_eval, write_eval_tsv
        out_dir = Path(args.out)
        write_eval_tsv(out_dir / "report.tsv", report, dataset_name=name)
        plot_eval(out_dir / "report.png", report, dataset_name=name)
        print(f"report written to {out_dir}/report.tsv and {out_dir}/report.png")
    return 0


def cmd_sr(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    model = EpsrModel(params, config)
    lr = load_png(args.input)
    sr = super_resolve(model, lr, ensemble=args.ensemble)
    save_png(sr, args.output)
    print(f"{args.input} ({lr.width}x{lr.height}) -> "
          f"{args.output} ({sr.width}x{sr.height}), x{config.scale}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_model_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--fractal-depth", dest="fractal_depth", type=int)
    g.add_argument("--channels", type=int)
    g.add_argument("--eca-kernel", dest="eca_kernel", type=int)
    g.add_argument("--scale", type=int)
    g.add_argument("--attention", choices=("eca", "ca"))
    g.add_argument("--reduction", type=int)
    g.add_argument("--ep-source", dest="ep_source", choices=("fe", "recab"))
    t = p.add_argument_group("training")
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--lr-halving-period", dest="lr_halving_period", type=int)
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--adam-eps", dest="adam_eps", type=float)
    t.add_argument("--lr-patch", dest="lr_patch", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    t.add_argument("--eval-interval", dest="eval_interval", type=int)
    t.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    t.add_argument("--dtype", choices=("float32", "float64"))
    t.add_argument("--manifest")
    t.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epsr",
        description="Edge-profile single-image super-resolution engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="generate LR images from an HR manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tag", required=True, choices=("bi", "bd", "dn"))
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--bd-downsample", default="bicubic",
                   choices=("bicubic", "decimate"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out")
    _add_model_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the bicubic baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--model", choices=("bicubic",),
                   help="built-in pseudo-model instead of a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tag", default="bi", choices=("bi", "bd", "dn"))
    p.add_argument("--scale", type=int, default=2,
                   help="scale for the bicubic pseudo-model")
    p.add_argument("--bd-downsample", default="bicubic",
                   choices=("bicubic", "decimate"))
    p.add_argument("--shave", type=int, default=None)
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for report.tsv and report.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sr", help="super-resolve one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sr)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
