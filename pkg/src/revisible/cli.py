"""Command-line entry point: train, denoise, eval, and synth subcommands.

Configuration files are line-based ``key = value`` UTF-8 text with ``#``
comments; unknown keys are rejected and command-line flags override file
keys. Exit codes: 0 success, 2 usage or config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .dataio import ImageFile, read_image, write_image
from .errors import ConfigError, FormatError, ManifestError, RevisibleError, ShapeError
from .inference import denoise_direct, denoise_weighted, evaluate, write_report
from .losses import LossConfig
from .network import NetConfig
from .noise import corrupt, parse_noise_spec
from .training import ABLATION_MODES, TrainerConfig, train

_INT = ("epochs", "batch_size", "grid_s", "patch", "seed", "in_channels",
        "base_channels", "depth")
_FLOAT = ("lr0", "weight_decay", "eta", "lambda_s", "lambda_f", "leaky_slope")
_STR = ("noise", "ablation_mode", "lambda_granularity")
KNOWN_KEYS = (*_INT, *_FLOAT, *_STR)

DEFAULTS = {
    "epochs": 100,
    "batch_size": 4,
    "lr0": 3e-4,
    "weight_decay": 1e-8,
    "grid_s": 2,
    "patch": 64,
    "seed": 0,
    "noise": "gauss25",
    "ablation_mode": "full",
    "eta": 1.0,
    "lambda_s": 2.0,
    "lambda_f": 20.0,
    "lambda_granularity": "epoch",
    "in_channels": 1,
    "base_channels": 16,
    "depth": 2,
    "leaky_slope": 0.1,
}


def parse_config_file(path) -> dict:
    """Read key = value lines; unknown keys are an error."""
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            if key in _INT:
                values[key] = int(value)
            elif key in _FLOAT:
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {value!r} for key {key!r}")
    return values


def build_trainer_config(values: dict) -> TrainerConfig:
    merged = {**DEFAULTS, **values}
    return TrainerConfig(
        epochs=merged["epochs"],
        batch_size=merged["batch_size"],
        lr0=merged["lr0"],
        weight_decay=merged["weight_decay"],
        grid_s=merged["grid_s"],
        patch=merged["patch"],
        seed=merged["seed"],
        noise=parse_noise_spec(merged["noise"]),
        loss=LossConfig(
            eta=merged["eta"],
            lambda_s=merged["lambda_s"],
            lambda_f=merged["lambda_f"],
            total_epochs=merged["epochs"],
        ),
        ablation_mode=merged["ablation_mode"],
        net=NetConfig(
            in_channels=merged["in_channels"],
            base_channels=merged["base_channels"],
            depth=merged["depth"],
            leaky_slope=merged["leaky_slope"],
        ),
        lambda_granularity=merged["lambda_granularity"],
    )


def _cmd_train(args) -> int:
    values = parse_config_file(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    config = build_trainer_config(values)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config.canonical_text() + "\n", encoding="utf-8")
    train(args.data, config, out_dir, resume_from=args.resume)
    print(f"training complete; checkpoints and log in {out_dir}")
    return 0


def _cmd_denoise(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    image = read_image(args.input)
    if args.weighted:
        out = denoise_weighted(ckpt, image.pixels, lam=args.lam, grid_s=args.grid_s)
    else:
        out = denoise_direct(ckpt, image.pixels)
    write_image(args.output, ImageFile(pixels=out, bit_depth=image.bit_depth,
                                       channels=image.channels))
    print(f"wrote {args.output}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    spec = parse_noise_spec(args.noise)
    report = evaluate(
        ckpt, args.clean, spec,
        seed=args.seed, mode=args.mode, repeats=args.repeats,
        lam=args.lam, grid_s=args.grid_s,
    )
    write_report(report, args.report)
    print(f"mean psnr {report.mean_psnr:.4f} dB, mean ssim {report.mean_ssim:.4f} "
          f"over {len(report.results)} scored image(s); report at {args.report}")
    return 0


def _cmd_synth(args) -> int:
    spec = parse_noise_spec(args.noise)
    image = read_image(args.input)
    noisy, drawn = corrupt(image.pixels, spec, args.seed)
    write_image(args.output, ImageFile(pixels=noisy, bit_depth=image.bit_depth,
                                       channels=image.channels))
    print(f"drawn parameter: {drawn}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revisible",
        description="Self-supervised image denoising with visible blind spots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", help="train a denoiser on a manifest of clean images",
                       formatter_class=fmt)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--data", required=True, help="manifest of training images")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("denoise", help="denoise one image with a trained checkpoint",
                       formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="noisy PGM/PPM image")
    p.add_argument("--output", required=True, help="where to write the denoised image")
    p.add_argument("--weighted", action="store_true",
                   help="mix the blind-mapped output with the direct one")
    p.add_argument("--lambda", dest="lam", type=float, default=20.0,
                   help="visible weight for --weighted")
    p.add_argument("--grid-s", type=int, default=2, help="mask cell size for --weighted")
    p.set_defaults(fn=_cmd_denoise)

    p = sub.add_parser("eval", help="score a checkpoint on a clean manifest",
                       formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--clean", required=True, help="manifest of clean reference images")
    p.add_argument("--noise", required=True,
                   help="noise spec: gauss<v>, gauss<lo>_<hi>, poisson<v>, poisson<lo>_<hi>")
    p.add_argument("--repeats", type=int, default=1, help="seeded corruptions per image")
    p.add_argument("--mode", choices=["direct", "weighted"], default="direct",
                   help="inference mode")
    p.add_argument("--report", required=True, help="output TSV path")
    p.add_argument("--seed", type=int, default=0, help="evaluation seed")
    p.add_argument("--lambda", dest="lam", type=float, default=20.0,
                   help="visible weight for weighted mode")
    p.add_argument("--grid-s", type=int, default=2, help="mask cell size for weighted mode")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("synth", help="corrupt one clean image with synthetic noise",
                       formatter_class=fmt)
    p.add_argument("--input", required=True, help="clean PGM/PPM image")
    p.add_argument("--noise", required=True, help="noise spec string")
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.add_argument("--output", required=True, help="where to write the noisy image")
    p.set_defaults(fn=_cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, ManifestError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RevisibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
