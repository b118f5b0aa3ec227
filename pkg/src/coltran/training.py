"""Optimization, weight averaging, checkpoints, and the per-stage train loop.

The three stages (core, color upsampler, spatial upsampler) train
independently; nothing backpropagates across stage boundaries. The core's
loss mixes its two heads, (1 - lam) * autoregressive + lam * parallel.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core as core_mod
from . import tensor as T
from . import upsamplers as ups
from .conditional import AblationFlags
from .core import CoreParams, ModelConfig, init_core_params
from .errors import CheckpointError, ConfigError
from .upsamplers import UpsamplerParams, init_color_upsampler, init_spatial_upsampler

STAGES = ("core", "color", "spatial")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 4
    learning_rate: float = 3e-4
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    ema_decay: float = 0.999
    lam: float = 0.01  # weight of the parallel head inside the core loss
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.rmsprop_rho < 1.0:
            raise ConfigError(f"rmsprop_rho must be in [0, 1), got {self.rmsprop_rho}")
        if self.rmsprop_eps <= 0:
            raise ConfigError(f"rmsprop_eps must be positive, got {self.rmsprop_eps}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("steps, batch_size, and eval_every must all be at least 1")


def total_loss(nll_ar: float, nll_parallel: float, nll_color: float, nll_spatial: float,
               lam: float) -> float:
    """Scalar objective across all stages; the upsampler terms enter unweighted."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lam must be in [0, 1], got {lam}")
    return (1.0 - lam) * nll_ar + lam * nll_parallel + nll_color + nll_spatial


class RmsProp:
    """Running mean of squared gradients; step = lr * g / (sqrt(v) + eps)."""

    def __init__(self, params_obj, learning_rate: float, rho: float = 0.9, eps: float = 1e-8):
        self.named = T.named_parameters(params_obj)
        self.lr = float(learning_rate)
        self.rho = float(rho)
        self.eps = float(eps)
        self.v = {p.name: np.zeros_like(p.value.data) for p in self.named}

    def step(self):
        for p in self.named:
            g = p.value.grad
            if g is None:
                continue
            v = self.v[p.name]
            v *= self.rho
            v += (1.0 - self.rho) * (g * g)
            p.value.data -= (self.lr * g / (np.sqrt(v) + self.eps)).astype(p.value.data.dtype)


def init_ema(params_obj) -> dict[str, np.ndarray]:
    # float64 shadow: a float32 running average drifts by ~1e-6 within tens
    # of steps, which would swamp the averaged weights on long runs
    return {p.name: p.value.data.astype(np.float64) for p in T.named_parameters(params_obj)}


def ema_update(shadow: dict[str, np.ndarray], params_obj, decay: float):
    """shadow <- decay * shadow + (1 - decay) * current weights."""
    for p in T.named_parameters(params_obj):
        s = shadow[p.name]
        s *= decay
        s += (1.0 - decay) * p.value.data


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"AXCOLTRN"


@dataclass
class Checkpoint:
    stage: str
    step: int
    config: ModelConfig
    raw: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["ablation"] = AblationFlags(**d.get("ablation", {}))
    return ModelConfig(**d)


def save_checkpoint(ckpt: Checkpoint, path: str | Path):
    """Binary file: magic, uint32-LE header length, JSON header, float32-LE payload."""
    entries = []
    chunks = []
    offset = 0
    for set_name, tensors in (("raw", ckpt.raw), ("ema", ckpt.ema)):
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            entries.append({"name": name, "set": set_name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        "version": 1,
        "stage": ckpt.stage,
        "step": ckpt.step,
        "config": config_to_dict(ckpt.config),
        "tensors": entries,
        "payload_bytes": offset,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.array(len(blob), dtype="<u4").tobytes())
        f.write(blob)
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    hlen = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    if 12 + hlen > len(data):
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    payload = data[12 + hlen :]
    if len(payload) < header.get("payload_bytes", 0):
        raise CheckpointError(f"{path} is truncated inside the payload")
    sets: dict[str, dict[str, np.ndarray]] = {"raw": {}, "ema": {}}
    for e in header["tensors"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = e["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=start).reshape(shape)
        sets[e["set"]][e["name"]] = arr.astype(np.float32)
    return Checkpoint(
        stage=header["stage"],
        step=int(header["step"]),
        config=config_from_dict(header["config"]),
        raw=sets["raw"],
        ema=sets["ema"],
    )


def restore_params(params_obj, ckpt: Checkpoint, use_ema: bool = False):
    """Copy a checkpoint's tensors into an already-built parameter tree.

    Fails on the first name that is missing or whose shape disagrees, so a
    model built with the wrong width reports the offending tensor.
    """
    source = ckpt.ema if use_ema else ckpt.raw
    for p in T.named_parameters(params_obj):
        if p.name not in source:
            raise CheckpointError(f"checkpoint is missing tensor {p.name!r}")
        arr = source[p.name]
        if arr.shape != p.value.data.shape:
            raise CheckpointError(
                f"tensor {p.name!r} has shape {arr.shape} in the checkpoint "
                f"but {p.value.data.shape} in the model"
            )
        p.value.data = arr.astype(p.value.data.dtype).copy()


def build_stage_params(stage: str, cfg: ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    if stage == "core":
        return init_core_params(rng, cfg)
    if stage == "color":
        return init_color_upsampler(rng, cfg)
    if stage == "spatial":
        return init_spatial_upsampler(rng, cfg)
    raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")


# ---------------------------------------------------------------------------
# the loop


def stage_loss(stage: str, params, batch: dict[str, np.ndarray], cfg: ModelConfig, lam: float):
    """Scalar loss Tensor plus float metrics for one already-stacked batch."""
    if stage == "core":
        nll_ar, nll_par = core_mod.core_nll(batch["gray_lo"], batch["coarse"], params, cfg)
        loss = T.add(T.scale(nll_ar, 1.0 - lam), T.scale(nll_par, lam))
        return loss, {"nll_ar": nll_ar.item(), "nll_parallel": nll_par.item()}
    if stage == "color":
        dist = ups.color_upsampler_forward(batch["coarse"], batch["gray_lo"], params, cfg)
        loss = ups.upsampler_nll(dist, batch["rgb_lo"])
        return loss, {"nll_color": loss.item()}
    if stage == "spatial":
        dist = ups.spatial_upsampler_forward(batch["rgb_lo"], batch["gray_hi"], params, cfg)
        loss = ups.upsampler_nll(dist, batch["rgb_hi"])
        return loss, {"nll_spatial": loss.item()}
    raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")


def stack_batch(examples, idx) -> dict[str, np.ndarray]:
    picked = [examples[i] for i in idx]
    return {
        "gray_lo": np.stack([e.gray_lo for e in picked]),
        "gray_hi": np.stack([e.gray_hi for e in picked]),
        "coarse": np.stack([e.coarse for e in picked]),
        "rgb_lo": np.stack([e.rgb_lo for e in picked]),
        "rgb_hi": np.stack([e.rgb_hi for e in picked]),
    }


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    params: CoreParams | UpsamplerParams
    ema: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)


def train_stage(stage: str, examples: list, cfg: ModelConfig, tc: TrainConfig,
                log_fn=None) -> TrainResult:
    """Train one stage from scratch. Deterministic given configs and data order."""
    if not examples:
        raise ConfigError("cannot train on an empty dataset")
    params = build_stage_params(stage, cfg, tc.seed)
    opt = RmsProp(params, tc.learning_rate, tc.rmsprop_rho, tc.rmsprop_eps)
    shadow = init_ema(params)
    picker = np.random.default_rng(tc.seed + 1)
    n = len(examples)
    history: list[dict] = []

    for step in range(tc.steps):
        if tc.batch_size >= n:
            idx = np.arange(n)
        else:
            idx = picker.choice(n, size=tc.batch_size, replace=False)
        batch = stack_batch(examples, idx)
        T.zero_grads(params)
        loss, metrics = stage_loss(stage, params, batch, cfg, tc.lam)
        T.backward(loss)
        if step % tc.eval_every == 0 or step == tc.steps - 1:
            record = {"step": step, "loss": loss.item(), **metrics}
            history.append(record)
            if log_fn is not None:
                log_fn(record)
        opt.step()
        ema_update(shadow, params, tc.ema_decay)

    ckpt = Checkpoint(
        stage=stage,
        step=tc.steps,
        config=cfg,
        raw={p.name: p.value.data.copy() for p in T.named_parameters(params)},
        ema={k: v.copy() for k, v in shadow.items()},
    )
    return TrainResult(checkpoint=ckpt, params=params, ema=shadow, history=history)


def evaluate_stage(stage: str, examples: list, params, cfg: ModelConfig, lam: float,
                   batch_size: int = 8) -> dict[str, float]:
    """Dataset-mean metrics under no_grad, batches weighted by size."""
    if not examples:
        raise ConfigError("cannot evaluate on an empty dataset")
    totals: dict[str, float] = {}
    count = 0
    with T.no_grad():
        for start in range(0, len(examples), batch_size):
            idx = range(start, min(start + batch_size, len(examples)))
            batch = stack_batch(examples, idx)
            loss, metrics = stage_loss(stage, params, batch, cfg, lam)
            k = len(list(idx))
            for key, val in {"loss": loss.item(), **metrics}.items():
                totals[key] = totals.get(key, 0.0) + val * k
            count += k
    return {k: v / count for k, v in totals.items()}


def format_log_line(record: dict) -> str:
    keys = [k for k in record if k != "step"]
    parts = [f"step={record['step']}"] + [f"{k}={record[k]:.6f}" for k in keys]
    return "\t".join(parts)
