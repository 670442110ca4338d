"""Per-individual relation encoding and social group detection.

Pipeline: crop per-individual features from the scene grid, inject a
scene-level sinusoidal positional signal, run axial self-attention along
time / height / width, then derive the pairwise relation matrices and the
group partition (learned count + k-means).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .nn import Linear, Module, MultiHeadSelfAttention, sinusoidal_embedding
from .tensor import ShapeError, Tensor, softmax

PPE_MODES = ("off", "spatial", "temporal", "both")
RELATION_MODES = ("none", "rs_only", "rp_only", "both")


# -- feature cropping ------------------------------------------------------


def _bilinear_axis(coord: np.ndarray, extent: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map normalized coords to pixel-center space; return lo/hi indices and weight."""
    px = coord * extent - 0.5
    lo = np.floor(px).astype(np.intp)
    frac = px - lo
    lo_c = np.clip(lo, 0, extent - 1)
    hi_c = np.clip(lo + 1, 0, extent - 1)
    return lo_c, hi_c, frac


def roi_align(scene: np.ndarray, tracks: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Crop (N, T, d, out_h, out_w) from a (T, d, H, W) grid by bilinear sampling.

    One sample per output bin, taken at the bin center.  Border values are
    replicated for samples that fall within half a cell of the edge.
    """
    scene = np.asarray(scene, dtype=np.float64)
    if scene.ndim != 4:
        raise ShapeError(f"scene grid must be (T, d, H, W), got {scene.shape}")
    t_frames, dim, grid_h, grid_w = scene.shape
    if grid_h < 1 or grid_w < 1 or dim < 1:
        raise ShapeError(f"scene grid has an empty axis: {scene.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output bins must be positive, got {out_h}x{out_w}")
    tracks = np.asarray(tracks, dtype=np.float64)
    n = tracks.shape[0]
    if tracks.shape[1] != t_frames:
        raise ShapeError(f"track frames {tracks.shape[1]} != scene frames {t_frames}")

    bins_y = (np.arange(out_h) + 0.5) / out_h
    bins_x = (np.arange(out_w) + 0.5) / out_w
    out = np.empty((n, t_frames, dim, out_h, out_w))
    for i in range(n):
        for t in range(t_frames):
            x1, y1, x2, y2 = tracks[i, t]
            ys = y1 + bins_y * (y2 - y1)
            xs = x1 + bins_x * (x2 - x1)
            ylo, yhi, fy = _bilinear_axis(ys, grid_h)
            xlo, xhi, fx = _bilinear_axis(xs, grid_w)
            grid = scene[t]  # (d, H, W)
            top = grid[:, ylo][:, :, xlo] * (1 - fx) + grid[:, ylo][:, :, xhi] * fx
            bot = grid[:, yhi][:, :, xlo] * (1 - fx) + grid[:, yhi][:, :, xhi] * fx
            out[i, t] = top * (1 - fy)[None, :, None] + bot * fy[None, :, None]
    return out


def reduce_channels(features: np.ndarray, out_dim: int, seed: int = 0) -> np.ndarray:
    """Fixed seeded linear projection over the channel axis (axis 2)."""
    in_dim = features.shape[2]
    if in_dim == out_dim:
        return features
    rng = np.random.default_rng(np.random.SeedSequence([7_3031, seed, in_dim, out_dim]))
    proj = rng.normal(scale=1.0 / np.sqrt(in_dim), size=(in_dim, out_dim))
    return np.einsum("ntdhw,de->ntehw", features, proj)


# -- panoramic positional embedding ---------------------------------------


class PanoramicEmbedding:
    """Fixed sinusoidal embedding of the whole scene grid plus a temporal table.

    Channels split evenly: the first half encodes the row index, the second
    half the column index.  Cropping an individual's region keeps its
    scene-level position visible after RoI pooling.
    """

    def __init__(self, grid_h: int, grid_w: int, frames: int, dim: int):
        if dim % 4 != 0:
            raise ShapeError(f"panoramic embedding dim must be divisible by 4, got {dim}")
        half = dim // 2
        rows = sinusoidal_embedding(grid_h, half).data  # (H, d/2)
        cols = sinusoidal_embedding(grid_w, half).data  # (W, d/2)
        grid = np.empty((frames, dim, grid_h, grid_w))
        grid[:, :half] = rows.T[None, :, :, None]
        grid[:, half:] = cols.T[None, :, None, :]
        self.grid = grid
        self.temporal = sinusoidal_embedding(frames, dim).data  # (T, d)
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.frames = frames
        self.dim = dim

    def crop(self, tracks: np.ndarray, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
        """Spatial term (N, T, d, h, w) cropped from the scene sinusoids,
        plus the per-frame temporal table (T, d)."""
        spatial = roi_align(self.grid, tracks, out_h, out_w)
        return spatial, self.temporal

    def combined(self, tracks: np.ndarray, out_h: int, out_w: int, mode: str) -> np.ndarray | None:
        if mode not in PPE_MODES:
            raise ShapeError(f"unknown ppe mode {mode!r}; choose from {PPE_MODES}")
        if mode == "off":
            return None
        spatial, temporal = self.crop(tracks, out_h, out_w)
        if mode == "spatial":
            return spatial
        broadcast_t = np.broadcast_to(
            temporal[None, :, :, None, None], spatial.shape
        )
        if mode == "temporal":
            return np.ascontiguousarray(broadcast_t)
        return spatial + broadcast_t


# -- axial attention -------------------------------------------------------

_AXIAL_PERMS = {
    "t": ((0, 3, 4, 1, 2), (0, 3, 4, 1, 2)),  # (N,T,d,h,w) -> (N,h,w,T,d) and back
    "h": ((0, 1, 4, 3, 2), (0, 1, 4, 3, 2)),  # -> (N,T,w,h,d)
    "w": ((0, 1, 3, 4, 2), (0, 1, 4, 2, 3)),  # -> (N,T,h,w,d)
}


class AxialAttention(Module):
    """Sequential self-attention over the time, height, and width axes.

    The positional signal is added to each stage's input ahead of the
    query/key/value projections; a single residual restores the original
    features after the final stage.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.attn_t = MultiHeadSelfAttention(dim, heads, rng)
        self.attn_h = MultiHeadSelfAttention(dim, heads, rng)
        self.attn_w = MultiHeadSelfAttention(dim, heads, rng)

    def __call__(self, features: Tensor, position: np.ndarray | None) -> Tensor:
        if features.ndim != 5:
            raise ShapeError(f"axial attention expects (N, T, d, h, w), got {features.shape}")
        if position is not None and tuple(position.shape) != features.shape:
            raise ShapeError(
                f"positional term shape {position.shape} != features {features.shape}"
            )
        x = features
        for axis, attn in (("t", self.attn_t), ("h", self.attn_h), ("w", self.attn_w)):
            fwd, back = _AXIAL_PERMS[axis]
            staged = x if position is None else x + Tensor(position)
            staged = staged.transpose(fwd)
            staged = attn(staged)
            x = staged.transpose(back)
        return x + features


def pool_individuals(features: Tensor) -> Tensor:
    """Mean over (T, h, w): (N, T, d, h, w) -> (N, d)."""
    return features.mean(axis=(1, 3, 4))


# -- relation matrices and group head --------------------------------------


class SimilarityHead(Module):
    """Row-stochastic visual similarity from two learned projections."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.theta = Linear(dim, dim, rng, bias=False)
        self.phi = Linear(dim, dim, rng, bias=False)

    def __call__(self, pooled: Tensor) -> Tensor:
        logits = self.theta(pooled) @ self.phi(pooled).transpose()
        return softmax(logits, axis=-1)


def fuse_relations(similarity: Tensor, proximity: Tensor) -> Tensor:
    """Average the learned and geometric relation matrices."""
    if similarity.shape != proximity.shape:
        raise ShapeError(
            f"relation shapes differ: {similarity.shape} vs {proximity.shape}"
        )
    return (similarity + proximity) * 0.5


def select_relation(similarity: Tensor, proximity: Tensor, mode: str) -> Tensor:
    if mode == "both":
        return fuse_relations(similarity, proximity)
    if mode == "rs_only":
        return similarity
    if mode == "rp_only":
        return proximity
    if mode == "none":
        # No relational mixing: clustering and counting see raw features.
        return Tensor(np.eye(similarity.shape[0]))
    raise ShapeError(f"unknown relation mode {mode!r}; choose from {RELATION_MODES}")


class GroupCountHead(Module):
    """Normalized group count from relation-attended, individual-averaged features."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, 1, rng)

    def __call__(self, relation: Tensor, pooled: Tensor) -> Tensor:
        mixed = (relation @ pooled).mean(axis=0, keepdims=True)  # (1, d)
        return self.fc2(self.fc1(mixed).relu()).sigmoid().reshape(())


def predicted_group_count(normalized: float, n_individuals: int) -> int:
    """Round half up and clamp to [1, N]."""
    raw = int(np.floor(n_individuals * float(normalized) + 0.5))
    return max(1, min(n_individuals, raw))


# -- k-means social grouping -----------------------------------------------


@dataclass(frozen=True)
class GroupAssignment:
    """Dense 1-based group labels over individuals."""

    labels: np.ndarray  # (N,) ints in [1, n_groups]
    n_groups: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        object.__setattr__(self, "labels", labels)
        used = np.unique(labels)
        if used.size != self.n_groups or used.min() != 1 or used.max() != self.n_groups:
            raise ValueError(
                f"labels must cover 1..{self.n_groups} densely, got {sorted(used.tolist())}"
            )

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.labels == group)

    def as_sets(self) -> list[frozenset[int]]:
        return [frozenset(self.members(g).tolist()) for g in range(1, self.n_groups + 1)]

    @classmethod
    def from_labels(cls, labels) -> "GroupAssignment":
        dense = relabel_dense(np.asarray(labels, dtype=np.intp))
        return cls(labels=dense, n_groups=int(dense.max()))


def relabel_dense(labels: np.ndarray) -> np.ndarray:
    """Rename labels to 1..K in order of first occurrence."""
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        key = int(lab)
        if key not in mapping:
            mapping[key] = len(mapping) + 1
        out[i] = mapping[key]
    return out


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _sse(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum((points - centers[labels]) ** 2))


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iters: int) -> tuple[np.ndarray, float]:
    n = points.shape[0]
    centers = _kmeans_pp_init(points, k, rng)
    labels = _assign(points, centers)
    for _ in range(max_iters):
        # Repair empty clusters: steal the globally farthest point, lowest
        # index on ties, without re-stealing within the same pass.
        stolen: set[int] = set()
        for c in range(k):
            if np.any(labels == c):
                continue
            dists = np.sum((points - centers[labels]) ** 2, axis=1)
            for i in stolen:
                dists[i] = -1.0
            victim = int(np.argmax(dists))
            labels[victim] = c
            stolen.add(victim)
        for c in range(k):
            members = labels == c
            if np.any(members):
                centers[c] = points[members].mean(axis=0)
        new_labels = _assign(points, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    # Final repair so every cluster id is used even on early convergence.
    stolen = set()
    for c in range(k):
        if np.any(labels == c):
            continue
        dists = np.sum((points - centers[labels]) ** 2, axis=1)
        for i in stolen:
            dists[i] = -1.0
        victim = int(np.argmax(dists))
        labels[victim] = c
        centers[c] = points[victim]
        stolen.add(victim)
    for c in range(k):
        members = labels == c
        if np.any(members):
            centers[c] = points[members].mean(axis=0)
    return labels, _sse(points, centers, labels)


def kmeans_labels(points: np.ndarray, k: int, seed: int, max_iters: int = 100,
                  restarts: int = 1) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best SSE over `restarts` runs.

    Returns dense 1-based labels ordered by first occurrence.  Deterministic
    for fixed (points, k, seed).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"k-means expects (N, d) points, got {points.shape}")
    n = points.shape[0]
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if k < 1:
        raise ValueError("cluster count must be at least 1")
    best_labels: np.ndarray | None = None
    best_sse = np.inf
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([11_000 + r, seed]))
        labels, sse = _lloyd(points, k, rng, max_iters)
        if sse < best_sse - 1e-15 or best_labels is None:
            best_sse = sse
            best_labels = labels
    return relabel_dense(best_labels)


def kmeans_groups(relation: np.ndarray, pooled: np.ndarray, n_groups: int,
                  seed: int, max_iters: int = 100, restarts: int = 1) -> GroupAssignment:
    """Cluster relation-attended features (rows of relation @ pooled)."""
    points = np.asarray(relation, dtype=np.float64) @ np.asarray(pooled, dtype=np.float64)
    labels = kmeans_labels(points, n_groups, seed, max_iters, restarts)
    return GroupAssignment(labels=labels, n_groups=int(labels.max()))
