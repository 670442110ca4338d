"""Loss composition, learning-rate warmup, and the training loop."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .checkpoint import save_checkpoint
from .model import ActivityModel, ForwardResult
from .optim import Adam
from .synthdata import SceneSample
from .tensor import NumericError, ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    """Default ratios: individual : relation : aux = 1:1:1 and
    social : global : count = 3:2:5."""

    individual: float = 1.0
    relation: float = 1.0
    aux: float = 1.0
    social: float = 3.0
    global_: float = 2.0
    count: float = 5.0

    def to_dict(self) -> dict[str, float]:
        return {"individual": self.individual, "relation": self.relation,
                "aux": self.aux, "social": self.social, "global": self.global_,
                "count": self.count}

    @classmethod
    def from_dict(cls, d: dict[str, float]) -> "LossWeights":
        kwargs = dict(d)
        if "global" in kwargs:
            kwargs["global_"] = kwargs.pop("global")
        return cls(**kwargs)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    warmup_epochs: int = 15
    lr: float = 4e-5
    weight_decay: float = 1e-2
    batch: int = 4
    seed: int = 0
    teacher_forcing: bool = True

    def __post_init__(self):
        if self.warmup_epochs > self.epochs:
            raise ShapeError(
                f"warmup ({self.warmup_epochs}) cannot exceed epochs ({self.epochs})"
            )

    def to_dict(self) -> dict[str, Any]:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        return cls(**d)


_CLIP = 1e-7


def bce_elements(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy; scores are clipped to [1e-7, 1-1e-7]."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != scores.shape:
        raise ShapeError(f"scores {scores.shape} vs targets {t.shape}")
    s = scores.clip(_CLIP, 1.0 - _CLIP)
    return -(Tensor(t) * s.log() + Tensor(1.0 - t) * (1.0 - s).log())


def bce_loss(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over all entries."""
    return bce_elements(scores, targets).mean()


def relation_loss(similarity: Tensor, gt_relation: np.ndarray) -> Tensor:
    """BCE between the similarity matrix and same-group indicators,
    off-diagonal entries only (the diagonal is trivially self-similar)."""
    n = similarity.shape[0]
    if n <= 1:
        return Tensor(0.0)
    mask = 1.0 - np.eye(n)
    per_entry = bce_elements(similarity, np.asarray(gt_relation, dtype=np.float64))
    return (per_entry * mask).sum() / (n * (n - 1))


def count_loss(group_fraction: Tensor, gt_count: int, n_individuals: int) -> Tensor:
    """Squared error against the normalized ground-truth group count."""
    diff = group_fraction - (gt_count / n_individuals)
    return diff * diff


def social_targets(result: ForwardResult, sample: SceneSample) -> np.ndarray:
    """Targets for the social scores: GT rows when the grouping matches the
    GT partition, otherwise best-IoU matched GT labels (zeros if unmatched)."""
    used = result.groups
    if np.array_equal(used.labels, sample.groups.labels):
        return sample.labels_group
    from .evaluation import match_groups  # local import to avoid a cycle

    pred_sets = used.as_sets()
    gt_sets = sample.groups.as_sets()
    targets = np.zeros((used.n_groups, sample.labels_group.shape[1]))
    for gt_i, pred_i, iou in match_groups(pred_sets, gt_sets):
        if iou > 0.0:
            targets[pred_i] = sample.labels_group[gt_i]
    return targets


def scene_loss(result: ForwardResult, sample: SceneSample,
               weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Weighted six-term loss; returns the scalar and per-term values."""
    l_idv = bce_loss(result.scores_individual, sample.labels_individual)
    l_rel = relation_loss(result.similarity, sample.gt_relation())
    l_aux = bce_loss(result.scores_aux, sample.labels_individual)
    l_sg = bce_loss(result.scores_social, social_targets(result, sample))
    l_glb = bce_loss(result.scores_global, sample.labels_global)
    l_cnt = count_loss(result.group_fraction, sample.groups.n_groups,
                       sample.n_individuals)
    total = (weights.individual * l_idv + weights.relation * l_rel
             + weights.aux * l_aux + weights.social * l_sg
             + weights.global_ * l_glb + weights.count * l_cnt)
    parts = {
        "individual": l_idv.item(), "relation": l_rel.item(), "aux": l_aux.item(),
        "social": l_sg.item(), "global": l_glb.item(), "count": l_cnt.item(),
    }
    return total, parts


def lr_schedule(step: int, warmup_steps: int, base_lr: float) -> float:
    """Linear ramp from 0 over `warmup_steps` optimizer steps, then constant."""
    if step >= warmup_steps or warmup_steps == 0:
        return base_lr
    return base_lr * step / warmup_steps


@dataclass
class TrainResult:
    log: list[dict[str, Any]]
    best_arrays: dict[str, np.ndarray]
    best_f_a: float
    best_epoch: int
    final_step: int


def train(model: ActivityModel, train_set: list[SceneSample], config: TrainConfig,
          weights: LossWeights | None = None, val_set: list[SceneSample] | None = None,
          out_dir: str | Path | None = None, optimizer: Adam | None = None,
          run_config: dict[str, Any] | None = None) -> TrainResult:
    """Deterministic training loop with per-epoch metric logging.

    Gradients accumulate over `config.batch` scenes per optimizer step; the
    best checkpoint (by F_a on the evaluation split) is kept and written to
    `out_dir/best.ckpt` when a directory is given.
    """
    from .evaluation import evaluate  # local import to avoid a cycle

    if not train_set:
        raise ValueError("training set is empty")
    weights = weights or LossWeights()
    eval_set = val_set if val_set else train_set
    opt = optimizer or Adam(model.parameter_dict(), lr=0.0,
                            weight_decay=config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([31_415, config.seed]))
    steps_per_epoch = math.ceil(len(train_set) / config.batch)
    warmup_steps = config.warmup_epochs * steps_per_epoch
    grouping = "teacher" if config.teacher_forcing else "predicted"

    log: list[dict[str, Any]] = []
    best_arrays = {k: v.data.copy() for k, v in model.parameter_dict().items()}
    best_f_a = -1.0
    best_epoch = -1
    log_path = Path(out_dir) / "log.jsonl" if out_dir is not None else None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("")

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_losses: list[float] = []
        part_sums: dict[str, float] = {}
        for start in range(0, len(order), config.batch):
            chunk = order[start:start + config.batch]
            opt.zero_grad()
            for idx in chunk:
                sample = train_set[int(idx)]
                result = model.forward(sample, grouping=grouping)
                loss, parts = scene_loss(result, sample, weights)
                if not np.isfinite(loss.item()):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, sample {int(idx)}: {parts}"
                    )
                (loss * (1.0 / len(chunk))).backward()
                epoch_losses.append(loss.item())
                for k, v in parts.items():
                    part_sums[k] = part_sums.get(k, 0.0) + v
            opt.lr = lr_schedule(opt.step_count, warmup_steps, config.lr)
            opt.step()

        scores = evaluate(model, eval_set, grouping="predicted")
        row: dict[str, Any] = {
            "epoch": epoch,
            "loss": float(np.mean(epoch_losses)),
            "lr": opt.lr,
        }
        for k, v in part_sums.items():
            row[f"loss_{k}"] = v / len(train_set)
        row.update({
            "F_i": scores.f_individual, "F_p": scores.f_social,
            "F_g": scores.f_global, "F_a": scores.f_overall,
            "IoU@0.5": scores.iou_at_half, "Mat.IoU": scores.mat_iou,
        })
        log.append(row)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")
        if scores.f_overall > best_f_a:
            best_f_a = scores.f_overall
            best_epoch = epoch
            best_arrays = {k: v.data.copy() for k, v in model.parameter_dict().items()}
            if out_dir is not None:
                arrays = dict(best_arrays)
                arrays.update(opt.state_arrays())
                save_checkpoint(
                    Path(out_dir) / "best.ckpt", arrays, step=opt.step_count,
                    config=model.config.to_dict(),
                    meta={"epoch": epoch, "F_a": best_f_a,
                          "train": config.to_dict(),
                          "run_config": run_config or {}},
                )

    return TrainResult(log=log, best_arrays=best_arrays, best_f_a=best_f_a,
                       best_epoch=best_epoch, final_step=opt.step_count)
