"""End-to-end model: relation encoding, group detection, activity heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import geometry
from .dpatr import ActivityHeads, DualPathTransformer, TriBlockStructure, STRUCTURES
from .nn import Linear, Module
from .relation import (
    GroupAssignment,
    AxialAttention,
    GroupCountHead,
    PanoramicEmbedding,
    PPE_MODES,
    RELATION_MODES,
    SimilarityHead,
    kmeans_groups,
    pool_individuals,
    predicted_group_count,
    reduce_channels,
    roi_align,
    select_relation,
)
from .synthdata import SceneSample
from .tensor import ShapeError, Tensor

GROUPING_SOURCES = ("predicted", "gt_groups", "gt_count")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 256
    heads: int = 4
    layers: int = 4
    ffn_mult: int = 4
    crop_h: int = 2
    crop_w: int = 2
    frames: int = 3
    grid_h: int = 24
    grid_w: int = 64
    classes: tuple[int, int, int] = (27, 11, 7)
    ppe: str = "both"
    proximity: str = "tgiou"
    relation: str = "both"
    structure: str = "dpatr"
    kmeans_seed: int = 0
    kmeans_restarts: int = 4

    def __post_init__(self):
        if self.ppe not in PPE_MODES:
            raise ShapeError(f"ppe must be one of {PPE_MODES}, got {self.ppe!r}")
        if self.proximity not in geometry.PROXIMITY_METRICS:
            raise ShapeError(
                f"proximity must be one of {geometry.PROXIMITY_METRICS}, got {self.proximity!r}"
            )
        if self.relation not in RELATION_MODES:
            raise ShapeError(f"relation must be one of {RELATION_MODES}, got {self.relation!r}")
        if self.structure not in STRUCTURES:
            raise ShapeError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small preset that trains in minutes on one core."""
        base: dict[str, Any] = dict(dim=32, heads=4, layers=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict[str, Any]:
        d = dict(vars(self))
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        kwargs = dict(d)
        if "classes" in kwargs:
            kwargs["classes"] = tuple(kwargs["classes"])
        return cls(**kwargs)


@dataclass
class ForwardResult:
    pooled: Tensor                 # (N, d) individual features after axial attention
    similarity: Tensor             # (N, N) row-stochastic
    proximity: np.ndarray          # (N, N) symmetric, constant
    relation: Tensor               # (N, N) fused per config
    group_fraction: Tensor         # scalar in (0, 1)
    predicted_count: int
    groups: GroupAssignment        # grouping actually used downstream
    scores_individual: Tensor      # (N, C_idv)
    scores_social: Tensor          # (n_groups, C_sg)
    scores_global: Tensor          # (C_glb,)
    scores_aux: Tensor             # (N, C_idv)


class ActivityModel(Module):
    """Full pipeline from per-individual features to three-level activity scores."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([20_101, seed]))
        c = config
        self.config = c
        self.axial = AxialAttention(c.dim, c.heads, rng)
        self.similarity = SimilarityHead(c.dim, rng)
        self.count_head = GroupCountHead(c.dim, rng)
        if c.structure == "dpatr":
            self.granular = DualPathTransformer(c.dim, c.heads, c.layers, rng, c.ffn_mult)
        else:
            self.granular = TriBlockStructure(c.dim, c.heads, c.structure, rng, c.ffn_mult)
        self.heads = ActivityHeads(c.dim, *c.classes, rng)
        self.aux_head = Linear(c.dim, c.classes[0], rng)
        self.embedding = PanoramicEmbedding(c.grid_h, c.grid_w, c.frames, c.dim)

    # -- input preparation --------------------------------------------------

    def crop_features(self, sample: SceneSample) -> np.ndarray:
        c = self.config
        if sample.flavor == "grid":
            scene = np.asarray(sample.features, dtype=np.float64)
            crops = roi_align(scene, sample.boxes, c.crop_h, c.crop_w)
        else:
            crops = np.asarray(sample.features, dtype=np.float64)
        if crops.shape[2] != c.dim:
            crops = reduce_channels(crops, c.dim, seed=0)
        if crops.shape[1] != c.frames:
            raise ShapeError(
                f"sample has {crops.shape[1]} frames but the model expects {c.frames}"
            )
        return crops

    def positional_term(self, sample: SceneSample, crops: np.ndarray) -> np.ndarray | None:
        c = self.config
        out_h, out_w = crops.shape[3], crops.shape[4]
        return self.embedding.combined(sample.boxes, out_h, out_w, c.ppe)

    # -- forward --------------------------------------------------------------

    def forward(self, sample: SceneSample, grouping: str = "predicted") -> ForwardResult:
        if grouping not in GROUPING_SOURCES and grouping != "teacher":
            raise ShapeError(
                f"grouping must be one of {GROUPING_SOURCES + ('teacher',)}, got {grouping!r}"
            )
        c = self.config
        crops = self.crop_features(sample)
        position = self.positional_term(sample, crops)
        attended = self.axial(Tensor(crops), position)
        pooled = pool_individuals(attended)

        rs = self.similarity(pooled)
        rp = geometry.proximity_matrix(sample.boxes, c.proximity)
        rel = select_relation(rs, Tensor(rp), c.relation)
        frac = self.count_head(rel, pooled)
        n = sample.n_individuals
        predicted = predicted_group_count(frac.item(), n)

        if grouping in ("teacher", "gt_groups"):
            groups = sample.groups
        else:
            count = sample.groups.n_groups if grouping == "gt_count" else predicted
            groups = kmeans_groups(rel.data, pooled.data, count, c.kmeans_seed,
                                   restarts=c.kmeans_restarts)

        individuals, socials, scene = self.granular(pooled, groups)
        y_idv, y_sg, y_glb = self.heads(individuals, socials, scene)
        y_aux = self.aux_head(pooled).sigmoid()
        return ForwardResult(
            pooled=pooled, similarity=rs, proximity=rp, relation=rel,
            group_fraction=frac, predicted_count=predicted, groups=groups,
            scores_individual=y_idv, scores_social=y_sg, scores_global=y_glb,
            scores_aux=y_aux,
        )
