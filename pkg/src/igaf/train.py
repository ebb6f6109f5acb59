"""Deterministic training loop, evaluation, and ablation runs."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .blocks import ModelConfig, ParamStore, count_params, init_params, model_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, Sample, load_sample, random_crop, upsample_lr, denormalize
from .errors import ConfigError, DataError, NumericalError
from .optim import AdamState, Schedule, adam_step, l1_loss, lr_at, rmse
from .reference import VARIANT_REFERENCE_RMSE
from .resize import bicubic_resize
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: Schedule = field(default_factory=Schedule)
    batch_size: int = 1
    patch: int = 256
    epochs: int = 200
    seed: int = 0
    eval_every: int = 0  # checkpoint period in epochs; 0 = final only
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch < 1 or self.patch % self.model.scale:
            raise ConfigError(f"patch ({self.patch}) must be a positive multiple of scale ({self.model.scale})")
        if self.epochs < 0 or self.epochs > self.schedule.total_epochs:
            raise ConfigError(f"epochs ({self.epochs}) must lie in [0, schedule.total_epochs={self.schedule.total_epochs}]")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "schedule": self.schedule.to_dict(),
            "batch_size": self.batch_size,
            "patch": self.patch,
            "epochs": self.epochs,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "checkpoint_dir": self.checkpoint_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        sched = d.pop("schedule", {})
        unknown_s = set(sched) - {f.name for f in dataclasses.fields(Schedule)}
        if unknown_s:
            raise ConfigError(f"unknown schedule key(s): {sorted(unknown_s)}")
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(model=model, schedule=Schedule(**sched), **d)


@dataclass
class TrainResult:
    params: ParamStore
    state: AdamState
    loss_log: list  # (epoch, mean_l1, lr)
    checkpoint: Optional[Path] = None


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def load_samples(manifest: DatasetManifest, scale: int) -> list[Sample]:
    samples = []
    for entry in manifest:
        try:
            samples.append(load_sample(entry, scale))
        except DataError as exc:
            raise DataError(f"failed to load sample {entry.id!r}: {exc}") from exc
    return samples


def _batch(crops: Sequence[Sample]) -> tuple[Tensor, Tensor, Tensor]:
    g = np.concatenate([c.rgb.data for c in crops])
    lr = np.concatenate([c.lr_depth.data for c in crops])
    hr = np.concatenate([c.hr_depth.data for c in crops])
    l_up = bicubic_resize(lr, hr.shape[-2], hr.shape[-1])
    return Tensor(g), Tensor(l_up), Tensor(hr)


def write_loss_log(path, loss_log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_l1", "lr"])
        for epoch, loss, lr in loss_log:
            w.writerow([epoch, repr(float(loss)), repr(float(lr))])


def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    resume: Optional[str | Path] = None,
    samples: Optional[list[Sample]] = None,
) -> TrainResult:
    """Train from scratch (or from ``resume``) for ``cfg.epochs`` epochs.

    Single-threaded and deterministic in ``cfg.seed``: the shuffle/crop
    generator and the dropout generator are both seeded from it and
    checkpointed with the weights.
    """
    if len(manifest) == 0:
        raise DataError("training manifest is empty")
    s = cfg.model.scale
    if samples is None:
        samples = load_samples(manifest, s)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None

    if resume is not None:
        params, state, meta = load_checkpoint(resume, cfg.model)
        if state is None:
            state = AdamState.for_params(params)
        start = int(meta["epoch"])
        data_rng = _restore_rng(meta["rng"]["data"])
        drop_rng = _restore_rng(meta["rng"]["dropout"])
        loss_log = [tuple(row) for row in meta.get("loss_log", [])]
    else:
        params = init_params(cfg.model, cfg.seed)
        state = AdamState.for_params(params)
        start = 0
        data_rng = np.random.default_rng([cfg.seed, 1])
        drop_rng = np.random.default_rng([cfg.seed, 2])
        loss_log = []

    def checkpoint(epoch: int, name: str) -> Optional[Path]:
        if ckpt_dir is None:
            return None
        meta = {
            "epoch": epoch,
            # the output location is not part of the run's identity
            "train_config": {k: v for k, v in cfg.to_dict().items() if k != "checkpoint_dir"},
            "rng": {"data": _rng_state(data_rng), "dropout": _rng_state(drop_rng)},
            "loss_log": [list(row) for row in loss_log],
        }
        return save_checkpoint(ckpt_dir / name, params, state, meta)

    step = 0
    for epoch in range(start, cfg.epochs):
        lr = lr_at(cfg.schedule, epoch)
        order = data_rng.permutation(len(samples))
        total = 0.0
        n_batches = 0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b : b + cfg.batch_size]
            crops = [random_crop(samples[i], cfg.patch, data_rng, s) for i in idx]
            g, l_up, hr = _batch(crops)
            with Tape() as tape:
                pred = model_forward(params, g, l_up, training=True, rng=drop_rng)
                loss = l1_loss(pred, hr)
            value = loss.item()
            if not np.isfinite(value):
                ids = ", ".join(samples[i].id for i in idx)
                raise NumericalError(f"non-finite loss at step {step} (epoch {epoch}, samples {ids})")
            backward(tape, loss)
            adam_step(params, state, lr)
            total += value
            n_batches += 1
            step += 1
        mean = total / n_batches
        loss_log.append((epoch, mean, lr))
        log.info("epoch %d  mean_l1 %.6f  lr %.3g", epoch, mean, lr)
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0 and epoch + 1 < cfg.epochs:
            checkpoint(epoch + 1, f"epoch_{epoch + 1:04d}")

    final = checkpoint(max(cfg.epochs, start), "final")
    return TrainResult(params=params, state=state, loss_log=loss_log, checkpoint=final)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (id, rmse_model, rmse_bicubic)

    @property
    def mean_model(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_bicubic(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "rmse_model", "rmse_bicubic"])
        for sid, m, b in self.rows:
            w.writerow([sid, repr(m), repr(b)])


def evaluate(ckpt, manifest: DatasetManifest, scale: int, samples: Optional[list[Sample]] = None) -> EvalReport:
    """Whole-image RMSE (denormalised units) of the model and of plain bicubic.

    ``ckpt`` is a checkpoint path or an in-memory :class:`ParamStore`.
    """
    params = ckpt if isinstance(ckpt, ParamStore) else load_checkpoint(ckpt)[0]
    if params.config.scale != scale:
        raise ConfigError(f"checkpoint was trained for scale {params.config.scale}, asked to evaluate x{scale}")
    if samples is None:
        samples = load_samples(manifest, scale)
    report = EvalReport()
    for sample in samples:
        l_up = upsample_lr(sample).astype(params["stem_depth.weight"].dtype)
        pred = model_forward(params, sample.rgb.astype(l_up.dtype), l_up)
        hr = denormalize(sample.hr_depth, sample.anchors)
        report.rows.append(
            (
                sample.id,
                rmse(denormalize(pred, sample.anchors), hr),
                rmse(denormalize(l_up, sample.anchors), hr),
            )
        )
    return report


# --------------------------------------------------------------------------
# ablation
# --------------------------------------------------------------------------

ABLATION_VARIANTS = {
    "fusion=add": {"fusion_kind": "add"},
    "fusion=concat": {"fusion_kind": "concat"},
    "num_igaf=4": {"num_igaf": 4},
    "saf_weighted=false": {"saf_weighted": False},
    "saf_mlp_layers=1": {"saf_mlp_layers": 1},
    "skip_location=after_wf": {"skip_location": "after_wf"},
    "use_wf=false": {"use_wf": False},
}

VARIANT_ALIASES = {
    "addition": "fusion=add",
    "add": "fusion=add",
    "concatenation": "fusion=concat",
    "concat": "fusion=concat",
    "extra_igaf": "num_igaf=4",
    "without_weights": "saf_weighted=false",
    "one_layer_mlp": "saf_mlp_layers=1",
    "relocated_skip": "skip_location=after_wf",
    "without_wf": "use_wf=false",
    "fusion_kind=add": "fusion=add",
    "fusion_kind=concat": "fusion=concat",
}


def resolve_variant(name: str) -> str:
    key = name.strip().lower()
    key = VARIANT_ALIASES.get(key, key)
    if key not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r}; choose from {sorted(ABLATION_VARIANTS)}")
    return key


@dataclass
class AblationRow:
    variant: str
    params: int
    final_l1: float
    rmse_model: float
    rmse_bicubic: float
    reference_rmse: Optional[float]


def ablate(
    base_cfg: TrainConfig,
    manifest: DatasetManifest,
    variants: Sequence[str],
    eval_manifest: Optional[DatasetManifest] = None,
) -> list[AblationRow]:
    """Train the base config and each variant with the same seed and schedule.

    The ``reference_rmse`` column is published full-scale context, not a target.
    """
    keys = ["full"] + [resolve_variant(v) for v in variants]
    samples = load_samples(manifest, base_cfg.model.scale)
    eval_samples = samples if eval_manifest is None else load_samples(eval_manifest, base_cfg.model.scale)
    rows = []
    for key in keys:
        model = base_cfg.model if key == "full" else base_cfg.model.replace(**ABLATION_VARIANTS[key])
        cfg = dataclasses.replace(base_cfg, model=model, checkpoint_dir=None)
        result = train(cfg, manifest, samples=samples)
        report = evaluate(result.params, eval_manifest or manifest, model.scale, samples=eval_samples)
        final_l1 = result.loss_log[-1][1] if result.loss_log else float("nan")
        rows.append(
            AblationRow(
                variant=key,
                params=count_params(model),
                final_l1=final_l1,
                rmse_model=report.mean_model,
                rmse_bicubic=report.mean_bicubic,
                reference_rmse=VARIANT_REFERENCE_RMSE.get(key),
            )
        )
        log.info("ablation %s: %d params, rmse %.4f", key, rows[-1].params, rows[-1].rmse_model)
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    head = f"{'variant':<24} {'params':>9} {'final_l1':>10} {'rmse':>10} {'bicubic':>10} {'reference*':>11}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ref = f"{r.reference_rmse:.2f}" if r.reference_rmse is not None else "-"
        lines.append(
            f"{r.variant:<24} {r.params:>9d} {r.final_l1:>10.5f} {r.rmse_model:>10.4f} {r.rmse_bicubic:>10.4f} {ref:>11}"
        )
    lines.append("* published NYU v2 x4 figures at full scale; reference only, not reproducible here")
    return "\n".join(lines)
