"""Synthetic panoramic scene generator with known group structure.

Each scene lays out social groups across the panorama, moves them by a
motion archetype (walk / stand / converge / diverge), optionally plants
distractor individuals that start next to a foreign group and wander off,
and renders per-individual feature prototypes into either a scene grid or
pre-cropped feature stacks.  Labels at all three granularities follow
deterministically from archetypes and member roles, so a trained model has
real signal to recover.

Scenes are bitwise-reproducible from their seed; box layout, labels, and
feature noise draw from independent seeded streams, so changing the noise
level never moves a bounding box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .relation import GroupAssignment, roi_align

ARCHETYPES = ("walk", "stand", "converge", "diverge")
FLAVORS = ("cropped", "grid")

# Individual roles: one leader + one member role per archetype, plus the
# distractor role.  Each role owns a 3-class slice of the action label space.
N_ROLES = 2 * len(ARCHETYPES) + 1
DISTRACTOR_ROLE = N_ROLES - 1
DISTRACTOR_ARCHETYPE = ARCHETYPES.index("diverge")


class DatasetError(ValueError):
    """Invalid scene spec or malformed dataset file."""


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_individuals: int = 6
    n_groups: int = 2
    frames: int = 3
    grid_h: int = 24
    grid_w: int = 64
    feat_dim: int = 32
    noise: float = 0.1
    distractors: int = 0
    archetypes: tuple[str, ...] = ARCHETYPES
    crop_h: int = 2
    crop_w: int = 2
    flavor: str = "cropped"
    classes: tuple[int, int, int] = (27, 11, 7)
    box_height: tuple[float, float] = (0.10, 0.16)
    box_width: tuple[float, float] = (0.04, 0.07)
    member_spread: float = 0.03

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "n_individuals": self.n_individuals,
            "n_groups": self.n_groups, "frames": self.frames,
            "grid_h": self.grid_h, "grid_w": self.grid_w,
            "feat_dim": self.feat_dim, "noise": self.noise,
            "distractors": self.distractors, "archetypes": list(self.archetypes),
            "crop_h": self.crop_h, "crop_w": self.crop_w, "flavor": self.flavor,
            "classes": list(self.classes),
            "box_height": list(self.box_height), "box_width": list(self.box_width),
            "member_spread": self.member_spread,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        kwargs = dict(d)
        for key in ("archetypes", "classes", "box_height", "box_width"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class SceneSample:
    features: np.ndarray          # cropped: (N,T,d,h,w); grid: (T,d,H,W); float32
    flavor: str
    boxes: np.ndarray             # (N,T,4) float64, within [0,1]
    groups: GroupAssignment
    labels_individual: np.ndarray  # (N, C_idv) multi-hot
    labels_group: np.ndarray       # (n_groups, C_sg) multi-hot, row per GT group
    labels_global: np.ndarray      # (C_glb,) multi-hot

    @property
    def n_individuals(self) -> int:
        return self.boxes.shape[0]

    def gt_relation(self) -> np.ndarray:
        """Binary same-group matrix (diagonal 1)."""
        lab = self.groups.labels
        return (lab[:, None] == lab[None, :]).astype(np.float64)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _prototype(kind: int, index: int, dim: int) -> np.ndarray:
    """Fixed unit vector shared by every scene (kind 0: archetype, 1: role)."""
    rng = np.random.default_rng(np.random.SeedSequence([875_001 + kind, index, dim]))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def archetype_prototype(arch_id: int, dim: int) -> np.ndarray:
    return _prototype(0, arch_id, dim)


def role_prototype(role_id: int, dim: int) -> np.ndarray:
    return _prototype(1, role_id, dim)


def individual_fill(arch_id: int, role_id: int, dim: int) -> np.ndarray:
    return archetype_prototype(arch_id, dim) + 0.5 * role_prototype(role_id, dim)


def _individual_labels(role: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    allowed = [(3 * role + j) % n_classes for j in range(3)]
    count = int(rng.integers(1, 4))
    picks = rng.choice(3, size=count, replace=False)
    vec = np.zeros(n_classes)
    for p in picks:
        vec[allowed[int(p)]] = 1.0
    return vec


def _group_labels(arch_id: int, size: int, n_classes: int) -> np.ndarray:
    vec = np.zeros(n_classes)
    vec[arch_id % n_classes] = 1.0
    vec[(4 + min(size - 1, 6)) % n_classes] = 1.0
    return vec


def _global_labels(arch_ids: list[int], n_distractors: int, n_individuals: int,
                   n_classes: int) -> np.ndarray:
    vec = np.zeros(n_classes)
    for a in arch_ids:
        vec[a % n_classes] = 1.0
    if len(set(arch_ids)) >= 2:
        vec[4 % n_classes] = 1.0
    if n_distractors > 0:
        vec[5 % n_classes] = 1.0
    if n_individuals >= 8:
        vec[6 % n_classes] = 1.0
    return vec


def _validate_spec(spec: SceneSpec) -> int:
    if spec.flavor not in FLAVORS:
        raise DatasetError(f"unknown flavor {spec.flavor!r}; choose from {FLAVORS}")
    if spec.frames < 1:
        raise DatasetError("need at least one frame")
    if not set(spec.archetypes) <= set(ARCHETYPES):
        raise DatasetError(f"unknown archetypes in {spec.archetypes}")
    if spec.n_groups > spec.n_individuals:
        raise DatasetError(
            f"{spec.n_groups} groups cannot partition {spec.n_individuals} individuals"
        )
    if spec.distractors >= spec.n_groups:
        raise DatasetError("need at least one non-distractor group")
    social_groups = spec.n_groups - spec.distractors
    members = spec.n_individuals - spec.distractors
    if members < social_groups:
        raise DatasetError("not enough non-distractor individuals for the social groups")
    slot = 1.0 / social_groups
    largest = -(-members // social_groups)  # sizes come from an even split
    half_span = spec.member_spread
    if spec.flavor == "grid":
        half_span = max(half_span, 0.046 * (largest - 1))
    span = spec.box_width[1] + 2.0 * half_span
    if spec.box_width[1] > 1.0 or spec.box_height[1] > 1.0 or span > slot:
        raise DatasetError(
            f"overcrowded scene: group footprint {span:.3f} exceeds slot width {slot:.3f}"
        )
    return social_groups


def generate_scene(spec: SceneSpec) -> SceneSample:
    social_groups = _validate_spec(spec)
    ss = np.random.SeedSequence(spec.seed)
    layout_rng, motion_rng, label_rng, noise_rng = (
        np.random.default_rng(s) for s in ss.spawn(4)
    )
    n = spec.n_individuals
    t_frames = spec.frames
    members_total = n - spec.distractors

    # Group sizes: even split, remainder to a random prefix of groups.
    sizes = np.full(social_groups, members_total // social_groups, dtype=int)
    sizes[: members_total % social_groups] += 1
    layout_rng.shuffle(sizes)

    arch_ids = [int(layout_rng.integers(len(spec.archetypes))) for _ in range(social_groups)]
    arch_ids = [ARCHETYPES.index(spec.archetypes[a]) for a in arch_ids]

    # Groups take alternating vertical bands so neighbors in adjacent slots
    # stay clear of each other even while walking.
    slot_order = layout_rng.permutation(social_groups)
    centroids = np.empty((social_groups, 2))
    for g in range(social_groups):
        slot = 1.0 / social_groups
        cx = (slot_order[g] + 0.5) * slot + layout_rng.uniform(-0.05, 0.05) * slot
        if social_groups == 1:
            cy = layout_rng.uniform(0.40, 0.60)
        elif slot_order[g] % 2 == 0:
            cy = layout_rng.uniform(0.28, 0.40)
        else:
            cy = layout_rng.uniform(0.60, 0.72)
        centroids[g] = (cx, cy)

    group_of = np.empty(n, dtype=np.intp)
    roles = np.empty(n, dtype=np.intp)
    arch_of = np.empty(n, dtype=np.intp)
    offsets = np.empty((n, 2))
    box_w = layout_rng.uniform(spec.box_width[0], spec.box_width[1], size=n)
    box_h = layout_rng.uniform(spec.box_height[0], spec.box_height[1], size=n)

    idx = 0
    for g in range(social_groups):
        size = int(sizes[g])
        half_span = spec.member_spread
        if spec.flavor == "grid":
            # Rendered scenes need visual separation so boxes do not fully
            # occlude each other; pre-cropped scenes can pack tighter.
            half_span = max(half_span, 0.046 * (size - 1))
        xs = np.linspace(-half_span, half_span, size) if size > 1 else np.zeros(1)
        for m in range(size):
            group_of[idx] = g
            arch_of[idx] = arch_ids[g]
            roles[idx] = 2 * arch_ids[g] + (0 if m == 0 else 1)
            offsets[idx] = (
                xs[m] + layout_rng.uniform(-0.004, 0.004),
                layout_rng.uniform(-0.015, 0.015),
            )
            idx += 1
    for d_i in range(spec.distractors):
        group_of[idx] = social_groups + d_i
        arch_of[idx] = DISTRACTOR_ARCHETYPE
        roles[idx] = DISTRACTOR_ROLE
        offsets[idx] = (0.0, 0.0)
        idx += 1

    # Per-frame centers by archetype.  Walk speed is scaled by the slot
    # width so neighboring groups cannot meet within the clip.
    centers = np.empty((n, t_frames, 2))
    group_velocity = np.zeros((social_groups, 2))
    slot = 1.0 / social_groups
    for g in range(social_groups):
        if ARCHETYPES[arch_ids[g]] == "walk":
            direction = 1.0 if centroids[g, 0] < 0.5 else -1.0
            group_velocity[g] = (
                direction * motion_rng.uniform(0.05, 0.09) * slot,
                motion_rng.uniform(-0.01, 0.01),
            )

    denom = max(t_frames - 1, 1)
    for i in range(members_total):
        g = group_of[i]
        kind = ARCHETYPES[arch_of[i]]
        for t in range(t_frames):
            scale = 1.0
            if kind == "converge":
                scale = 1.0 - 0.5 * t / denom
            elif kind == "diverge":
                scale = 1.0 + 1.2 * t / denom
            jitter = motion_rng.uniform(-0.004, 0.004, size=2)
            centers[i, t] = centroids[g] + group_velocity[g] * t + offsets[i] * scale + jitter

    for d_i in range(spec.distractors):
        i = members_total + d_i
        target = int(motion_rng.integers(social_groups))
        anchors = np.flatnonzero(group_of[:members_total] == target)
        anchor = int(anchors[motion_rng.integers(anchors.size)])
        start = centers[anchor, 0] + motion_rng.uniform(-0.01, 0.01, size=2)
        escape = -1.0 if start[1] < 0.5 else 1.0
        velocity = np.array([
            motion_rng.uniform(-0.01, 0.01),
            escape * motion_rng.uniform(0.20, 0.26),
        ])
        for t in range(t_frames):
            centers[i, t] = start + velocity * t

    # Clip centers so boxes stay inside the unit scene.
    half = np.stack([box_w / 2, box_h / 2], axis=1)  # (n, 2)
    centers = np.clip(centers, half[:, None, :], 1.0 - half[:, None, :])
    boxes = np.empty((n, t_frames, 4))
    boxes[..., 0] = centers[..., 0] - half[:, None, 0]
    boxes[..., 1] = centers[..., 1] - half[:, None, 1]
    boxes[..., 2] = centers[..., 0] + half[:, None, 0]
    boxes[..., 3] = centers[..., 1] + half[:, None, 1]

    c_idv, c_sg, c_glb = spec.classes
    labels_individual = np.stack(
        [_individual_labels(int(roles[i]), c_idv, label_rng) for i in range(n)]
    )
    labels_group = np.stack(
        [_group_labels(arch_ids[g], int(sizes[g]), c_sg) for g in range(social_groups)]
        + [_group_labels(DISTRACTOR_ARCHETYPE, 1, c_sg) for _ in range(spec.distractors)]
    )
    labels_global = _global_labels(
        arch_ids + [DISTRACTOR_ARCHETYPE] * spec.distractors,
        spec.distractors, n, c_glb,
    )

    fills = np.stack(
        [individual_fill(int(arch_of[i]), int(roles[i]), spec.feat_dim) for i in range(n)]
    )

    if spec.flavor == "cropped":
        feats = np.empty((n, t_frames, spec.feat_dim, spec.crop_h, spec.crop_w))
        feats[...] = fills[:, None, :, None, None]
        feats += spec.noise * noise_rng.normal(size=feats.shape)
    else:
        feats = _render_grid(spec, boxes, fills, noise_rng)

    # Shuffle individual order so group members are not index-contiguous.
    perm = layout_rng.permutation(n)
    boxes = boxes[perm]
    labels_individual = labels_individual[perm]
    if spec.flavor == "cropped":
        feats = feats[perm]
    raw_groups = group_of[perm] + 1
    dense = GroupAssignment.from_labels(raw_groups)
    # Reorder group label rows to match the dense renumbering.
    row_for_new = np.empty(spec.n_groups, dtype=np.intp)
    for i in range(n):
        row_for_new[dense.labels[i] - 1] = raw_groups[i] - 1
    labels_group = labels_group[row_for_new]

    sample = SceneSample(
        features=np.ascontiguousarray(feats, dtype="<f4"),
        flavor=spec.flavor,
        boxes=boxes,
        groups=dense,
        labels_individual=labels_individual,
        labels_group=labels_group,
        labels_global=labels_global,
    )
    if spec.flavor == "grid" and spec.distractors == 0 and spec.noise <= 0.15:
        _validate_rendering(spec, sample, fills[perm])
    return sample


def _render_grid(spec: SceneSpec, boxes: np.ndarray, fills: np.ndarray,
                 noise_rng: np.random.Generator) -> np.ndarray:
    """Paint each box footprint (dilated a little so bilinear samples stay
    inside the fill) with its individual's prototype; later indices win
    overlaps.  Noise lands only on painted cells."""
    t_frames = spec.frames
    grid = np.zeros((t_frames, spec.feat_dim, spec.grid_h, spec.grid_w))
    painted = np.zeros((t_frames, spec.grid_h, spec.grid_w), dtype=bool)
    row_centers = (np.arange(spec.grid_h) + 0.5) / spec.grid_h
    col_centers = (np.arange(spec.grid_w) + 0.5) / spec.grid_w
    pad_y = 1.0 / spec.grid_h
    pad_x = 1.0 / spec.grid_w
    for i in range(boxes.shape[0]):
        for t in range(t_frames):
            x1, y1, x2, y2 = boxes[i, t]
            rows = (row_centers >= y1 - pad_y) & (row_centers <= y2 + pad_y)
            cols = (col_centers >= x1 - pad_x) & (col_centers <= x2 + pad_x)
            mask = np.outer(rows, cols)
            grid[t][:, mask] = fills[i][:, None]
            painted[t] |= mask
    noise = noise_rng.normal(size=grid.shape)
    grid += spec.noise * noise * painted[:, None, :, :]
    return grid


def _validate_rendering(spec: SceneSpec, sample: SceneSample, fills: np.ndarray) -> None:
    crops = roi_align(sample.features.astype(np.float64), sample.boxes,
                      spec.crop_h, spec.crop_w)
    pooled = crops.mean(axis=(1, 3, 4))
    for i in range(pooled.shape[0]):
        denom = np.linalg.norm(pooled[i]) * np.linalg.norm(fills[i])
        cos = float(pooled[i] @ fills[i] / denom) if denom > 0 else 0.0
        if cos <= 0.9:
            raise DatasetError(
                f"rendered features for individual {i} drifted from prototype "
                f"(cosine {cos:.3f}); scene too crowded for clean rendering"
            )


def generate_dataset(spec: SceneSpec, count: int, split_key: int = 0) -> list[SceneSample]:
    """`count` scenes with per-sample seeds derived from (spec.seed, split_key, i)."""
    out = []
    for i in range(count):
        sample_spec = replace(spec, seed=derive_seed(spec.seed, split_key, i))
        out.append(generate_scene(sample_spec))
    return out


def distractor_spec(seed: int, noise: float = 0.1) -> SceneSpec:
    """Two tight co-moving groups plus one distractor that starts inside a
    foreign group and wanders off: spatial-only proximity is ambiguous at
    frame 0 while the temporal average separates cleanly."""
    return SceneSpec(
        seed=seed, n_individuals=7, n_groups=3, distractors=1,
        frames=3, noise=noise, archetypes=("walk", "stand"),
        member_spread=0.008,
    )


def make_distractor_suite(count: int, noise: float = 0.1,
                          base_seed: int = 0) -> list[SceneSample]:
    return [
        generate_scene(distractor_spec(derive_seed(base_seed, 1001, i), noise))
        for i in range(count)
    ]


# -- dataset files ----------------------------------------------------------

DATASET_FORMAT = "panact-dataset-v1"


def _blob_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".blob")


def write_dataset(samples: list[SceneSample], path: str | Path,
                  spec: SceneSpec | None = None) -> None:
    """Manifest + per-sample JSON lines at `path`; float32 features in a
    sidecar .blob file."""
    path = Path(path)
    flavors = {s.flavor for s in samples}
    if len(flavors) > 1:
        raise DatasetError(f"cannot mix flavors in one dataset: {sorted(flavors)}")
    records = []
    offset = 0
    chunks = []
    for i, s in enumerate(samples):
        feats = np.ascontiguousarray(s.features, dtype="<f4")
        raw = feats.tobytes()
        records.append({
            "index": i,
            "boxes": s.boxes.tolist(),
            "groups": s.groups.labels.tolist(),
            "labels": {
                "individual": [np.flatnonzero(row).tolist() for row in s.labels_individual],
                "group": [np.flatnonzero(row).tolist() for row in s.labels_group],
                "global": np.flatnonzero(s.labels_global).tolist(),
            },
            "classes": [s.labels_individual.shape[1], s.labels_group.shape[1],
                        s.labels_global.shape[0]],
            "feature_shape": list(feats.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": DATASET_FORMAT,
        "dtype": "<f4",
        "count": len(samples),
        "flavor": samples[0].flavor if samples else "cropped",
        "blob_bytes": offset,
        "spec": spec.to_dict() if spec is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    with open(_blob_path(path), "wb") as fh:
        for raw in chunks:
            fh.write(raw)


def _multi_hot(indices: list[int], n: int) -> np.ndarray:
    vec = np.zeros(n)
    vec[np.asarray(indices, dtype=int)] = 1.0
    return vec


def read_dataset(path: str | Path) -> tuple[list[SceneSample], dict]:
    """Read samples and the manifest; offsets are validated against the blob."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty dataset file (missing manifest line)")
    try:
        manifest = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:1: manifest is not valid JSON ({exc.msg})") from None
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{path}: unrecognized format {manifest.get('format')!r}")
    blob_file = _blob_path(path)
    if not blob_file.exists():
        raise DatasetError(f"missing feature blob: {blob_file}")
    blob = blob_file.read_bytes()
    declared = int(manifest.get("blob_bytes", -1))
    if declared != len(blob):
        raise DatasetError(
            f"{blob_file}: expected {declared} bytes, found {len(blob)}"
        )
    count = int(manifest["count"])
    if len(lines) - 1 != count:
        raise DatasetError(
            f"{path}: manifest declares {count} samples, file has {len(lines) - 1} records"
        )
    samples = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{line_no}: record is not valid JSON ({exc.msg})") from None
        i = rec.get("index", line_no - 2)
        shape = tuple(rec["feature_shape"])
        nbytes = int(rec["nbytes"])
        offset = int(rec["offset"])
        expected = int(np.prod(shape)) * 4
        if nbytes != expected:
            raise DatasetError(
                f"sample {i}: record declares {nbytes} bytes but shape {shape} needs {expected}"
            )
        if offset < 0 or offset + nbytes > len(blob):
            raise DatasetError(
                f"sample {i}: blob truncated (needs bytes [{offset}, {offset + nbytes}), "
                f"blob has {len(blob)})"
            )
        feats = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(shape)
        c_idv, c_sg, c_glb = rec["classes"]
        groups = GroupAssignment.from_labels(rec["groups"])
        samples.append(SceneSample(
            features=feats.copy(),
            flavor=manifest["flavor"],
            boxes=np.asarray(rec["boxes"], dtype=np.float64),
            groups=groups,
            labels_individual=np.stack(
                [_multi_hot(idx, c_idv) for idx in rec["labels"]["individual"]]
            ),
            labels_group=np.stack(
                [_multi_hot(idx, c_sg) for idx in rec["labels"]["group"]]
            ),
            labels_global=_multi_hot(rec["labels"]["global"], c_glb),
        ))
    return samples, manifest
