"""Scoring: per-granularity precision/recall/F1 and group detection metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dpatr import predict_sets
from .relation import GroupAssignment

AUC_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(11))  # 0.50 .. 1.00

CSV_COLUMNS = ["P_i", "R_i", "F_i", "P_p", "R_p", "F_p", "P_g", "R_g", "F_g",
               "F_a", "IoU@0.5", "IoU@AUC", "Mat.IoU"]


def prf_instance(pred: set, gt: set) -> tuple[float, float, float]:
    """Set precision/recall/F1 for one instance; empty sides score 0."""
    hit = len(pred & gt)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gt) if gt else 0.0
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f


def multilabel_prf(pred_sets: Sequence[set], gt_sets: Sequence[set]) -> tuple[float, float, float]:
    """Instance-averaged precision/recall/F1 over aligned label sets."""
    if len(pred_sets) != len(gt_sets):
        raise ValueError(f"{len(pred_sets)} predictions vs {len(gt_sets)} ground truths")
    if not pred_sets:
        return 0.0, 0.0, 0.0
    rows = [prf_instance(p, g) for p, g in zip(pred_sets, gt_sets)]
    arr = np.asarray(rows)
    return tuple(float(v) for v in arr.mean(axis=0))


def group_set_iou(a: Iterable[int], b: Iterable[int]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def match_groups(pred_groups: Sequence[frozenset | set],
                 gt_groups: Sequence[frozenset | set]) -> list[tuple[int, int, float]]:
    """Hungarian matching maximizing total member-set IoU.

    Returns (gt_index, pred_index, iou) triples sorted by gt index.
    """
    if not pred_groups or not gt_groups:
        return []
    iou = np.zeros((len(gt_groups), len(pred_groups)))
    for i, g in enumerate(gt_groups):
        for j, p in enumerate(pred_groups):
            iou[i, j] = group_set_iou(g, p)
    # Tiny index-ordered perturbation so ties resolve toward low (gt, pred).
    eps = 1e-12 / (iou.size + 1)
    bias = eps * (np.arange(iou.size).reshape(iou.shape))
    rows, cols = linear_sum_assignment(-(iou - bias))
    matches = [(int(i), int(j), float(iou[i, j])) for i, j in zip(rows, cols)]
    return sorted(matches)


def comembership(groups: Sequence[frozenset | set], individuals: Sequence[int]) -> np.ndarray:
    """Binary same-group matrix over `individuals` (diagonal set to 0)."""
    index = {ind: k for k, ind in enumerate(individuals)}
    n = len(individuals)
    mat = np.zeros((n, n), dtype=bool)
    for group in groups:
        members = [index[m] for m in group if m in index]
        for a in members:
            for b in members:
                mat[a, b] = True
    np.fill_diagonal(mat, False)
    return mat


@dataclass(frozen=True)
class GroupDetScores:
    iou_at_half: float
    iou_auc: float
    mat_iou: float


def group_detection_scores(pred_groups: Sequence[frozenset | set],
                           gt_groups: Sequence[frozenset | set]) -> GroupDetScores:
    """Half-metric F1 at 0.5, its 11-threshold average, and the pairwise
    co-membership IoU (off-diagonal only)."""
    matches = match_groups(pred_groups, gt_groups)
    ious = [m[2] for m in matches]

    def f1_at(k: float) -> float:
        correct = sum(1 for v in ious if v >= k)
        p = correct / len(pred_groups) if pred_groups else 0.0
        r = correct / len(gt_groups) if gt_groups else 0.0
        return 2 * p * r / (p + r) if (p + r) > 0 else 0.0

    iou_at_half = f1_at(0.5)
    iou_auc = float(np.mean([f1_at(k) for k in AUC_THRESHOLDS]))

    individuals = sorted(set().union(*pred_groups, *gt_groups)) if (pred_groups or gt_groups) else []
    pred_mat = comembership(pred_groups, individuals)
    gt_mat = comembership(gt_groups, individuals)
    inter = int(np.sum(pred_mat & gt_mat))
    union = int(np.sum(pred_mat | gt_mat))
    mat_iou = inter / union if union > 0 else 1.0
    return GroupDetScores(iou_at_half=iou_at_half, iou_auc=iou_auc, mat_iou=mat_iou)


@dataclass(frozen=True)
class EvalScores:
    p_individual: float
    r_individual: float
    f_individual: float
    p_social: float
    r_social: float
    f_social: float
    p_global: float
    r_global: float
    f_global: float
    f_overall: float
    iou_at_half: float
    iou_auc: float
    mat_iou: float

    def as_row(self) -> list[float]:
        return [self.p_individual, self.r_individual, self.f_individual,
                self.p_social, self.r_social, self.f_social,
                self.p_global, self.r_global, self.f_global,
                self.f_overall, self.iou_at_half, self.iou_auc, self.mat_iou]

    def to_json_dict(self) -> dict:
        return {
            "activity": {
                "individual": {"precision": self.p_individual,
                               "recall": self.r_individual, "f1": self.f_individual},
                "social": {"precision": self.p_social,
                           "recall": self.r_social, "f1": self.f_social},
                "global": {"precision": self.p_global,
                           "recall": self.r_global, "f1": self.f_global},
                "overall_f1": self.f_overall,
            },
            "group_detection": {
                "iou_at_0.5": self.iou_at_half,
                "iou_auc": self.iou_auc,
                "mat_iou": self.mat_iou,
            },
        }


def _sets_from_multihot(scores: np.ndarray) -> list[set[int]]:
    return [set(np.flatnonzero(row > 0.5).tolist()) for row in np.atleast_2d(scores)]


def _social_instances(pred_sets: list[set[int]], pred_groups: list[frozenset],
                      gt_sets: list[set[int]], gt_groups: list[frozenset]
                      ) -> list[tuple[float, float, float]]:
    """Label-set P/R/F per matched group pair; unmatched groups on either
    side contribute zero instances."""
    matches = [m for m in match_groups(pred_groups, gt_groups) if m[2] > 0.0]
    matched_gt = {m[0] for m in matches}
    matched_pred = {m[1] for m in matches}
    rows = [prf_instance(pred_sets[pj], gt_sets[gi]) for gi, pj, _ in matches]
    rows += [(0.0, 0.0, 0.0) for gi in range(len(gt_groups)) if gi not in matched_gt]
    rows += [(0.0, 0.0, 0.0) for pj in range(len(pred_groups)) if pj not in matched_pred]
    return rows


def evaluate(model, dataset, grouping: str = "predicted") -> EvalScores:
    """Run the model over `dataset` and score all three granularities plus
    group detection.  `grouping` selects the partition fed to the social
    path: predicted count + k-means, ground-truth partition, or k-means with
    the ground-truth count."""
    individual_rows: list[tuple[float, float, float]] = []
    social_rows: list[tuple[float, float, float]] = []
    global_rows: list[tuple[float, float, float]] = []
    det_rows: list[GroupDetScores] = []

    for sample in dataset:
        result = model.forward(sample, grouping=grouping)
        pred_idv = predict_sets(result.scores_individual.data)
        gt_idv = _sets_from_multihot(sample.labels_individual)
        individual_rows += [prf_instance(p, g) for p, g in zip(pred_idv, gt_idv)]

        pred_glb = predict_sets(result.scores_global.data)[0]
        gt_glb = _sets_from_multihot(sample.labels_global)[0]
        global_rows.append(prf_instance(pred_glb, gt_glb))

        pred_groups = result.groups.as_sets()
        gt_groups = sample.groups.as_sets()
        pred_sg = predict_sets(result.scores_social.data)
        gt_sg = _sets_from_multihot(sample.labels_group)
        social_rows += _social_instances(pred_sg, pred_groups, gt_sg, gt_groups)
        det_rows.append(group_detection_scores(pred_groups, gt_groups))

    def agg(rows: list[tuple[float, float, float]]) -> tuple[float, float, float]:
        if not rows:
            return 0.0, 0.0, 0.0
        arr = np.asarray(rows)
        return tuple(float(v) for v in arr.mean(axis=0))

    p_i, r_i, f_i = agg(individual_rows)
    p_p, r_p, f_p = agg(social_rows)
    p_g, r_g, f_g = agg(global_rows)
    f_a = (f_i + f_p + f_g) / 3.0
    return EvalScores(
        p_individual=p_i, r_individual=r_i, f_individual=f_i,
        p_social=p_p, r_social=r_p, f_social=f_p,
        p_global=p_g, r_global=r_g, f_global=f_g, f_overall=f_a,
        iou_at_half=float(np.mean([d.iou_at_half for d in det_rows])) if det_rows else 0.0,
        iou_auc=float(np.mean([d.iou_auc for d in det_rows])) if det_rows else 0.0,
        mat_iou=float(np.mean([d.mat_iou for d in det_rows])) if det_rows else 0.0,
    )


def baseline_overall_f1(dataset) -> float:
    """Best of the all-negative and single-majority-class predictors."""
    def majority_class(rows: np.ndarray) -> int:
        return int(np.argmax(rows.sum(axis=0)))

    idv = np.concatenate([s.labels_individual for s in dataset], axis=0)
    sg = np.concatenate([s.labels_group for s in dataset], axis=0)
    glb = np.stack([s.labels_global for s in dataset], axis=0)

    best = 0.0  # the all-negative predictor scores zero everywhere
    maj = (majority_class(idv), majority_class(sg), majority_class(glb))
    fs = []
    for rows, cls in zip((idv, sg, glb), maj):
        sets = _sets_from_multihot(rows)
        _, _, f = multilabel_prf([{cls}] * len(sets), sets)
        fs.append(f)
    return max(best, float(np.mean(fs)))


def scores_to_csv(rows: list[tuple[dict, EvalScores]]) -> str:
    """CSV with optional leading metadata columns followed by the 13 score
    columns in canonical order."""
    meta_keys: list[str] = []
    for meta, _ in rows:
        for k in meta:
            if k not in meta_keys:
                meta_keys.append(k)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(meta_keys + CSV_COLUMNS)
    for meta, scores in rows:
        writer.writerow([meta.get(k, "") for k in meta_keys]
                        + [f"{v:.6f}" for v in scores.as_row()])
    return buf.getvalue()


def scores_to_json(scores: EvalScores) -> str:
    return json.dumps(scores.to_json_dict(), indent=2)
