"""Command-line entry points: train, colorize, probmap, eval.

Configs are flat `section.key = value` files (sections: model, train, data)
with `#` comments; any value can be overridden on the command line with
repeated --set section.key=value. Values parse as JSON scalars when possible,
otherwise as strings. Model architecture travels inside checkpoints, so the
generation commands only need a checkpoint directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core as core_mod
from . import data as data_mod
from . import training as train_mod
from . import upsamplers as ups
from .conditional import AblationFlags
from .core import ModelConfig
from .errors import ColtranError, ConfigError, ResolutionError
from .training import TrainConfig, load_checkpoint, restore_params

EVAL_PRESETS: dict[str, AblationFlags] = {
    "full": AblationFlags(),
    "no_catt": AblationFlags(use_catt=False),
    "no_cmlp": AblationFlags(use_cmlp=False),
    "no_cln": AblationFlags(use_cln=False),
    "scale_only": AblationFlags(cond_mode="scale_only"),
    "shift_only": AblationFlags(cond_mode="shift_only"),
    "v_only": AblationFlags(catt_targets="v_only"),
    "mean_pool": AblationFlags(cln_pool="fixed_mean"),
    "baseline_additive": AblationFlags(use_catt=False, use_cmlp=False, use_cln=False),
}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data_dir: Path | None = None
    holdout_fraction: float = 0.1
    data_seed: int = 0


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)} - {"ablation"}
_FLAG_FIELDS = {f.name for f in dataclasses.fields(AblationFlags)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def build_run_config(pairs: dict[str, str]) -> RunConfig:
    model_kw: dict = {}
    flag_kw: dict = {}
    train_kw: dict = {}
    data_dir = None
    holdout = 0.1
    data_seed = 0
    for key, raw in pairs.items():
        value = _coerce(raw)
        section, _, name = key.partition(".")
        if section == "model" and name in _MODEL_FIELDS:
            model_kw[name] = value
        elif section == "model" and name in _FLAG_FIELDS:
            flag_kw[name] = value
        elif section == "train" and name in _TRAIN_FIELDS:
            train_kw[name] = value
        elif key == "data.dir":
            data_dir = Path(str(value))
        elif key == "data.holdout_fraction":
            holdout = float(value)
        elif key == "data.seed":
            data_seed = int(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    model = ModelConfig(ablation=AblationFlags(**flag_kw), **model_kw)
    return RunConfig(
        model=model,
        train=TrainConfig(**train_kw),
        data_dir=data_dir,
        holdout_fraction=holdout,
        data_seed=data_seed,
    )


def load_run_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    pairs: dict[str, str] = {}
    if config_path:
        pairs.update(parse_config_file(config_path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        pairs[key] = value
    return RunConfig(model=ModelConfig(), train=TrainConfig()) if not pairs else build_run_config(pairs)


def _dataset(rc: RunConfig, split: str) -> list:
    if rc.data_dir is None:
        raise ConfigError("data.dir is required for this command")
    spec = data_mod.DatasetSpec(
        directory=rc.data_dir, split=split,
        holdout_fraction=rc.holdout_fraction, seed=rc.data_seed,
    )
    m = rc.model
    return data_mod.load_dataset(spec, m.rows, m.cols, m.height, m.width)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    rc = load_run_config(args.config, args.set)
    stages = train_mod.STAGES if args.stage == "all" else (args.stage,)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    examples = _dataset(rc, "train")
    print(f"training on {len(examples)} images from {rc.data_dir}")
    for stage in stages:
        lines: list[str] = []

        def log_fn(record, _lines=lines, _stage=stage):
            line = train_mod.format_log_line(record)
            _lines.append(line)
            print(f"[{_stage}] {line}")

        result = train_mod.train_stage(stage, examples, rc.model, rc.train, log_fn)
        ckpt_path = out_dir / f"{stage}.ckpt"
        train_mod.save_checkpoint(result.checkpoint, ckpt_path)
        log_path = out_dir / f"{stage}.log"
        tmp = log_path.with_name(log_path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, log_path)
        print(f"[{stage}] wrote {ckpt_path}")
    return 0


def _restore_stage(ckpt_dir: Path, stage: str, use_ema: bool):
    ckpt = load_checkpoint(ckpt_dir / f"{stage}.ckpt")
    if ckpt.stage != stage:
        raise ConfigError(f"{stage}.ckpt holds a {ckpt.stage!r} stage checkpoint")
    params = train_mod.build_stage_params(stage, ckpt.config, seed=0)
    restore_params(params, ckpt, use_ema=use_ema)
    return ckpt, params


def _load_trio(ckpt_dir: str, use_ema: bool):
    ckpt_dir = Path(ckpt_dir)
    core_ck, core_params = _restore_stage(ckpt_dir, "core", use_ema)
    color_ck, color_params = _restore_stage(ckpt_dir, "color", use_ema)
    spatial_ck, spatial_params = _restore_stage(ckpt_dir, "spatial", use_ema)
    cfg = core_ck.config
    for other in (color_ck.config, spatial_ck.config):
        if (other.rows, other.cols, other.height, other.width) != (cfg.rows, cfg.cols, cfg.height, cfg.width):
            raise ConfigError("checkpoint stages disagree on grid or output resolution")
    return cfg, core_params, color_params, spatial_params


def _load_gray_input(path: str, cfg: ModelConfig):
    rgb = data_mod.load_png(path)
    if rgb.shape[:2] != (cfg.height, cfg.width):
        raise ResolutionError(
            f"input is {rgb.shape[0]}x{rgb.shape[1]}, model expects {cfg.height}x{cfg.width}"
        )
    gray_hi = data_mod.to_grayscale(rgb)
    gray_lo = data_mod.area_downsample(gray_hi, cfg.height // cfg.rows, cfg.width // cfg.cols)
    return rgb, gray_hi, gray_lo


def cmd_colorize(args) -> int:
    cfg, core_params, color_params, spatial_params = _load_trio(args.checkpoints, args.weights == "ema")
    _, gray_hi, gray_lo = _load_gray_input(args.input, cfg)
    n = args.samples
    if n < 1:
        raise ConfigError(f"--samples must be at least 1, got {n}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gray_lo_b = np.repeat(gray_lo[None], n, axis=0)
    gray_hi_b = np.repeat(gray_hi[None], n, axis=0)
    coarse = core_mod.sample_core(gray_lo_b, core_params, cfg, seed=args.seed, top_k=args.top_k)
    rgb = ups.apply_upsamplers(coarse, gray_lo_b, gray_hi_b, color_params, spatial_params, cfg)
    for i in range(n):
        path = out_dir / f"sample_{i:02d}.png"
        data_mod.save_png(path, rgb[i])
        print(f"wrote {path}")
    return 0


def cmd_probmap(args) -> int:
    ckpt_dir = Path(args.checkpoints)
    core_ck, core_params = _restore_stage(ckpt_dir, "core", args.weights == "ema")
    cfg = core_ck.config
    rgb, _, gray_lo = _load_gray_input(args.input, cfg)
    if args.coarse:
        ref = data_mod.load_png(args.coarse)
        if ref.shape[:2] != (cfg.rows, cfg.cols):
            raise ResolutionError(
                f"--coarse is {ref.shape[0]}x{ref.shape[1]}, expected the {cfg.rows}x{cfg.cols} grid"
            )
        coarse = data_mod.quantize_coarse(ref)
    else:
        rgb_lo = data_mod.area_downsample(rgb, cfg.height // cfg.rows, cfg.width // cfg.cols)
        coarse = data_mod.quantize_coarse(rgb_lo)
    maxp = core_mod.max_color_probability(gray_lo[None], coarse[None], core_params, cfg)[0]
    img = data_mod.round_half_up(255.0 * maxp).astype(np.int64)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.save_png(out, img)
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    rc = load_run_config(args.config, args.set)
    examples = _dataset(rc, args.split)
    ckpt_dir = Path(args.checkpoints)
    use_ema = args.weights == "ema"
    stages = train_mod.STAGES if args.stage == "all" else (args.stage,)
    rows = [("stage", "preset", "metric", "value")]
    for stage in stages:
        ckpt, params = _restore_stage(ckpt_dir, stage, use_ema)
        metrics = train_mod.evaluate_stage(stage, examples, params, ckpt.config, rc.train.lam)
        for k, v in sorted(metrics.items()):
            rows.append((stage, "checkpoint", k, f"{v:.6f}"))
        if stage == "core" and args.sweep:
            # Same weights, different live-flag combinations; a conditioning
            # ablation sweep without retraining.
            for preset, flags in EVAL_PRESETS.items():
                swept = dataclasses.replace(ckpt.config, ablation=flags)
                metrics = train_mod.evaluate_stage(stage, examples, params, swept, rc.train.lam)
                for k, v in sorted(metrics.items()):
                    rows.append((stage, preset, k, f"{v:.6f}"))
    text = "\n".join("\t".join(r) for r in rows) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        tmp = out.with_name(out.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="coltran",
        description="Train and run a desk-scale autoregressive colorizer.",
        epilog="Quality reporting here is NLL-based; no perceptual metrics are computed.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one stage or all three")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--stage", choices=("all",) + train_mod.STAGES, default="all")
    p.add_argument("--out", required=True, help="directory for checkpoints and logs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("colorize", help="sample colorizations for a grayscale image")
    p.add_argument("--checkpoints", required=True, help="directory with core/color/spatial.ckpt")
    p.add_argument("--input", required=True, help="input PNG at the model resolution")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=None, dest="top_k")
    p.add_argument("--weights", choices=("raw", "ema"), default="raw")
    p.set_defaults(fn=cmd_colorize)

    p = sub.add_parser("probmap", help="write the per-pixel max-probability map")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--input", required=True, help="input PNG at the model resolution")
    p.add_argument("--coarse", default=None, help="optional PNG at the coarse grid to condition on")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--weights", choices=("raw", "ema"), default="raw")
    p.set_defaults(fn=cmd_probmap)

    p = sub.add_parser("eval", help="report NLL metrics on a dataset split")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--stage", choices=("all",) + train_mod.STAGES, default="all")
    p.add_argument("--split", choices=("train", "holdout", "all"), default="holdout")
    p.add_argument("--sweep", action="store_true", help="re-evaluate the core under ablation presets")
    p.add_argument("--weights", choices=("raw", "ema"), default="raw")
    p.add_argument("--out", default=None, help="optional TSV output file")
    p.set_defaults(fn=cmd_eval)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ColtranError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
