"""Dataset pipeline, Adam optimisation, the training loop, and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .imaging import (DegradationSpec, ImageRGB, apply_dihedral, augment,
                      crop_to_multiple, degrade, image_from_float, imresize,
                      invert_dihedral, load_png, read_manifest)
from .losses import total_loss
from .metrics import psnr_y, ssim_y
from .model import EpsrConfig, ParamStore, epsr_forward
from .tensor import ConfigError, Tensor

_MAX_SAMPLE_RETRIES = 20


class SamplingError(RuntimeError):
    """No crop of the requested size could be drawn from the dataset."""


class MissingGradientError(RuntimeError):
    """An optimizer step was requested before gradients were populated."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exploded; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings; epochs are counted in optimizer steps."""

    batch_size: int = 8
    lr0: float = 1e-4
    lr_halving_period: int = 200
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    lr_patch: int = 48
    epochs: int = 1
    steps_per_epoch: int = 1000
    seed: int = 0
    eval_interval: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        positive = ("batch_size", "lr0", "lr_halving_period", "beta1", "beta2",
                    "adam_eps", "lr_patch", "epochs", "steps_per_epoch")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class Dataset:
    """HR images with optional paired LR counterparts, held in memory."""

    def __init__(self, entries: list[tuple[ImageRGB, ImageRGB | None]],
                 names: list[str] | None = None):
        if not entries:
            raise ConfigError("dataset is empty")
        self._entries = entries
        self.names = names or [f"image{i:03d}" for i in range(len(entries))]

    @classmethod
    def from_manifest(cls, path) -> "Dataset":
        entries = []
        names = []
        for hr_path, lr_path in read_manifest(path):
            hr = load_png(hr_path)
            lr = load_png(lr_path) if lr_path is not None else None
            entries.append((hr, lr))
            names.append(Path(hr_path).stem)
        return cls(entries, names)

    @classmethod
    def from_images(cls, images, names=None) -> "Dataset":
        return cls([(img, None) for img in images], names)

    def __len__(self) -> int:
        return len(self._entries)

    def hr(self, i: int) -> ImageRGB:
        return self._entries[i][0]

    def lr(self, i: int) -> ImageRGB | None:
        return self._entries[i][1]


@dataclass(frozen=True)
class SampleBatch:
    """Aligned LR/HR crops plus where each sample came from."""

    lr: Tensor
    hr: Tensor
    provenance: tuple  # (image index, lr row, lr col, transform id) per sample


def sample_batch(dataset: Dataset, scale: int, rng: np.random.Generator,
                 batch_size: int = 8, patch: int = 48,
                 dtype=np.float32) -> SampleBatch:
    """Draw a batch of random aligned crops with random dihedral transforms.

    Paired entries crop the stored LR file; unpaired entries crop the HR
    image and synthesise the LR patch by bicubic downscale of that crop, so
    the pair is aligned by construction.  Images smaller than the patch are
    resampled a bounded number of times.
    """
    lr_stack = np.empty((batch_size, patch, patch, 3), dtype=np.float64)
    hr_stack = np.empty((batch_size, patch * scale, patch * scale, 3),
                        dtype=np.float64)
    provenance = []
    for b in range(batch_size):
        for attempt in range(_MAX_SAMPLE_RETRIES):
            idx = int(rng.integers(0, len(dataset)))
            hr_img = dataset.hr(idx)
            lr_img = dataset.lr(idx)
            if lr_img is not None:
                lr_h, lr_w = lr_img.height, lr_img.width
            else:
                lr_h, lr_w = hr_img.height // scale, hr_img.width // scale
            if lr_h >= patch and lr_w >= patch:
                break
        else:
            raise SamplingError(
                f"no image large enough for a {patch}x{patch} LR patch "
                f"after {_MAX_SAMPLE_RETRIES} draws")
        y = int(rng.integers(0, lr_h - patch + 1))
        x = int(rng.integers(0, lr_w - patch + 1))
        tid = int(rng.integers(0, 8))
        hy, hx, hp = y * scale, x * scale, patch * scale
        hr_crop = hr_img.pixels[hy:hy + hp, hx:hx + hp].astype(np.float64)
        if lr_img is not None:
            lr_crop = lr_img.pixels[y:y + patch, x:x + patch].astype(np.float64)
        else:
            lr_crop = imresize(hr_crop, patch, patch)
        hr_crop, lr_crop = augment(hr_crop, lr_crop, tid)
        hr_stack[b] = hr_crop
        lr_stack[b] = lr_crop
        provenance.append((idx, y, x, tid))
    to_tensor = lambda a: Tensor(
        np.ascontiguousarray(a.transpose(0, 3, 1, 2) / 255.0).astype(dtype))
    return SampleBatch(lr=to_tensor(lr_stack), hr=to_tensor(hr_stack),
                       provenance=tuple(provenance))


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

def lr_at(epoch: int, config: TrainConfig) -> float:
    """Step-decayed learning rate: halves every ``lr_halving_period`` epochs."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * 0.5 ** (epoch // config.lr_halving_period)


def adam_step(params: ParamStore, lr: float, config: TrainConfig) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
        m = params.adam_m.get(name)
        v = params.adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        params.adam_m[name] = m
        params.adam_v[name] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryRow:
    step: int
    l1: float
    gradient: float
    total: float
    lr: float


@dataclass
class TrainResult:
    history: list[HistoryRow]
    checkpoint_path: Path | None
    rng_state: dict
    steps_run: int
    diverged_at: int | None = None


def format_history(rows) -> str:
    lines = [f"{r.step}\t{r.l1!r}\t{r.gradient!r}\t{r.total!r}\t{r.lr!r}"
             for r in rows]
    return "\n".join(lines) + ("\n" if lines else "")


def _save_run_state(run_dir: Path, rng: np.random.Generator, step: int) -> None:
    state = {"rng_state": rng.bit_generator.state, "next_step": step + 1}
    (run_dir / "train_state.json").write_text(json.dumps(state))


def train(params: ParamStore, model_config: EpsrConfig, dataset: Dataset,
          config: TrainConfig, run_dir=None, start_step: int = 0,
          rng_state: dict | None = None) -> TrainResult:
    """Optimise ``params`` on random patches of ``dataset``.

    Iterates sample -> forward -> loss -> backward -> Adam, recording one
    history row per step.  A non-finite loss, or one that exceeds 1000x the
    running median, aborts with a diagnostic checkpoint and
    :class:`DivergenceError`.  With a ``run_dir`` the loop emits the history
    file, periodic and final checkpoints, and a resumable RNG state.
    ``start_step``/``rng_state`` continue a previous run bit-exactly.
    """
    rng = np.random.default_rng(config.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
    history: list[HistoryRow] = []
    totals: list[float] = []
    total_steps = config.epochs * config.steps_per_epoch
    checkpoint_path = None

    for step in range(start_step + 1, total_steps + 1):
        epoch = (step - 1) // config.steps_per_epoch
        lr = lr_at(epoch, config)
        batch = sample_batch(dataset, model_config.scale, rng,
                             batch_size=config.batch_size,
                             patch=config.lr_patch)
        tape = T.GradTape()
        reason = None
        try:
            with tape:
                sr = epsr_forward(batch.lr, params, model_config)
                report = total_loss(sr, batch.hr)
        except T.NumericError as exc:
            reason = f"non-finite values in the forward pass ({exc})"
        if reason is None and not np.isfinite(report.total):
            reason = f"non-finite loss {report.total}"
        if reason is None and len(totals) >= 20 \
                and report.total > 1000.0 * float(np.median(totals)):
            reason = f"exploding loss {report.total}"
        if reason is not None:
            if run_dir is not None:
                checkpoint_path = run_dir / f"checkpoint_diverged_step{step}.ckpt"
                save_checkpoint(checkpoint_path, params, model_config,
                                include_adam=True)
                _save_run_state(run_dir, rng, step - 1)
            raise DivergenceError(f"{reason} at step {step}", step)
        T.backward(report.total_tensor, tape)
        adam_step(params, lr, config)
        history.append(HistoryRow(step, report.l1, report.gradient,
                                  report.total, lr))
        totals.append(report.total)
        if run_dir is not None and config.checkpoint_interval > 0 \
                and step % config.checkpoint_interval == 0 and step < total_steps:
            save_checkpoint(run_dir / f"checkpoint_step{step:06d}.ckpt",
                            params, model_config, include_adam=True)
        if run_dir is not None and config.eval_interval > 0 \
                and step % config.eval_interval == 0:
            snapshot = evaluate(EpsrModel(params, model_config), dataset,
                                DegradationSpec.bi(model_config.scale))
            with open(run_dir / "eval.tsv", "a") as fh:
                fh.write(f"{step}\t{snapshot.psnr_mean:.4f}\t"
                         f"{snapshot.ssim_mean:.4f}\n")

    if run_dir is not None:
        checkpoint_path = run_dir / "checkpoint_final.ckpt"
        save_checkpoint(checkpoint_path, params, model_config, include_adam=True)
        with open(run_dir / "history.tsv", "a") as fh:
            fh.write(format_history(history))
        _save_run_state(run_dir, rng, total_steps)
    return TrainResult(history=history, checkpoint_path=checkpoint_path,
                       rng_state=rng.bit_generator.state, steps_run=len(history))


# ---------------------------------------------------------------------------
# Inference models and evaluation
# ---------------------------------------------------------------------------

class EpsrModel:
    """Trained network as a plain array-in, array-out callable."""

    def __init__(self, params: ParamStore, config: EpsrConfig):
        self.params = params
        self.config = config
        self.scale = config.scale

    def __call__(self, lr01: np.ndarray) -> np.ndarray:
        return epsr_forward(Tensor(lr01.astype(np.float32)),
                            self.params, self.config).data


class BicubicUpscaler:
    """Reference interpolation baseline; needs no parameters."""

    def __init__(self, scale: int):
        self.scale = scale

    def __call__(self, lr01: np.ndarray) -> np.ndarray:
        n, c, h, w = lr01.shape
        out = np.empty((n, c, h * self.scale, w * self.scale), np.float64)
        for i in range(n):
            hwc = lr01[i].transpose(1, 2, 0)
            out[i] = imresize(hwc, h * self.scale, w * self.scale).transpose(2, 0, 1)
        return out


class IdentityModel:
    """Pass-through pseudo-model (scale 1); handy for metric sanity checks."""

    scale = 1

    def __call__(self, lr01: np.ndarray) -> np.ndarray:
        return lr01


def ensemble_forward(model, lr01: np.ndarray) -> np.ndarray:
    """Average a model over the 8 dihedral transforms of its input."""
    acc = None
    for tid in range(8):
        warped = np.ascontiguousarray(apply_dihedral(lr01, tid, axes=(2, 3)))
        restored = invert_dihedral(model(warped), tid, axes=(2, 3))
        acc = restored.copy() if acc is None else acc + restored
    return acc / 8.0


@dataclass(frozen=True)
class EvalRow:
    name: str
    psnr: float
    ssim: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple
    psnr_mean: float
    ssim_mean: float
    scale: int
    tag: str

    def __iter__(self):
        return iter(self.rows)


def super_resolve(model, lr_img: ImageRGB, ensemble: bool = False) -> ImageRGB:
    """LR image file -> SR image file semantics: forward, clamp, quantise."""
    lr01 = lr_img.to_float().transpose(2, 0, 1)[None] / 255.0
    out = ensemble_forward(model, lr01) if ensemble else model(lr01)
    sr01 = np.clip(out[0].transpose(1, 2, 0), 0.0, 1.0)
    return image_from_float(sr01 * 255.0)


def evaluate(model, dataset: Dataset, spec: DegradationSpec,
             shave: int | None = None, ensemble: bool = False,
             seed: int = 0) -> EvalReport:
    """Metric means over a dataset under one degradation.

    Paired LR images are used when the dataset carries them; otherwise each
    HR image is degraded on the fly.  SR output is clamped and quantised to
    8 bits before metrics, mirroring what emitted files would score.
    """
    if shave is None:
        shave = spec.scale
    rows = []
    for i in range(len(dataset)):
        hr_ref = crop_to_multiple(dataset.hr(i), spec.scale)
        lr_img = dataset.lr(i)
        if lr_img is None:
            lr_img = degrade(dataset.hr(i), spec, seed=seed + i)
        sr_img = super_resolve(model, lr_img, ensemble=ensemble)
        if (sr_img.height, sr_img.width) != (hr_ref.height, hr_ref.width):
            raise T.ShapeError(
                f"{dataset.names[i]}: SR {sr_img.width}x{sr_img.height} vs "
                f"HR {hr_ref.width}x{hr_ref.height}")
        rows.append(EvalRow(dataset.names[i],
                            psnr_y(sr_img, hr_ref, shave=shave),
                            ssim_y(sr_img, hr_ref, shave=shave)))
    return EvalReport(rows=tuple(rows),
                      psnr_mean=float(np.mean([r.psnr for r in rows])),
                      ssim_mean=float(np.mean([r.ssim for r in rows])),
                      scale=spec.scale, tag=spec.tag)
