"""Box geometry and pairwise proximity metrics.

Boxes are (x1, y1, x2, y2) arrays in normalized scene coordinates; tracks
are (T, 4) arrays of per-frame boxes.  All metrics are oriented so that
larger means closer, letting downstream code stay metric-agnostic.
"""

from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    pass


PROXIMITY_METRICS = ("giou_s", "tgiou", "euclid_s", "euclid_st")


def validate_boxes(boxes: np.ndarray) -> None:
    """Check x1<=x2, y1<=y2 and coordinates within [0, 1]."""
    b = np.asarray(boxes, dtype=np.float64)
    if b.shape[-1] != 4:
        raise GeometryError(f"boxes must have a trailing axis of 4, got shape {b.shape}")
    if np.any(b < -1e-12) or np.any(b > 1.0 + 1e-12):
        raise GeometryError("box coordinates fall outside [0, 1]")
    if np.any(b[..., 2] < b[..., 0]) or np.any(b[..., 3] < b[..., 1]):
        raise GeometryError("found a box with x2 < x1 or y2 < y1")


def box_area(box) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


def box_center(box) -> tuple[float, float]:
    x1, y1, x2, y2 = box
    return (0.5 * (x1 + x2), 0.5 * (y1 + y2))


def giou(a, b) -> float:
    """Generalized IoU: overlap ratio minus the enclosing-box penalty.

    Degenerate inputs stay total: two identical zero-area boxes score 1
    (maximal self-similarity); distinct zero-area boxes score like empty
    overlap with the usual penalty.  A zero-area enclosing box contributes
    no penalty.
    """
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(0.0, iw) * max(0.0, ih)
    union = box_area((ax1, ay1, ax2, ay2)) + box_area((bx1, by1, bx2, by2)) - inter
    if union > 0.0:
        iou = inter / union
    else:
        iou = 1.0 if (ax1, ay1, ax2, ay2) == (bx1, by1, bx2, by2) else 0.0
    enclosing = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    if enclosing > 0.0:
        return iou - (enclosing - union) / enclosing
    return iou


def tgiou(track_a, track_b) -> float:
    """Mean per-frame GIoU of two equal-length tracks."""
    ta = np.asarray(track_a, dtype=np.float64)
    tb = np.asarray(track_b, dtype=np.float64)
    if ta.shape != tb.shape:
        raise GeometryError(f"track shapes differ: {ta.shape} vs {tb.shape}")
    if ta.shape[0] == 0:
        raise GeometryError("tracks must contain at least one frame")
    return float(np.mean([giou(ta[t], tb[t]) for t in range(ta.shape[0])]))


def euclid_proximity(track_a, track_b, spatio_temporal: bool = False) -> float:
    """Negated center distance (frame 0, or averaged over frames)."""
    ta = np.asarray(track_a, dtype=np.float64)
    tb = np.asarray(track_b, dtype=np.float64)
    if ta.shape != tb.shape:
        raise GeometryError(f"track shapes differ: {ta.shape} vs {tb.shape}")
    frames = range(ta.shape[0]) if spatio_temporal else (0,)
    dists = []
    for t in frames:
        cax, cay = box_center(ta[t])
        cbx, cby = box_center(tb[t])
        dists.append(np.hypot(cax - cbx, cay - cby))
    return -float(np.mean(dists))


def _pairwise(metric: str):
    if metric == "giou_s":
        return lambda a, b: giou(a[0], b[0])
    if metric == "tgiou":
        return tgiou
    if metric == "euclid_s":
        return lambda a, b: euclid_proximity(a, b, spatio_temporal=False)
    if metric == "euclid_st":
        return lambda a, b: euclid_proximity(a, b, spatio_temporal=True)
    raise GeometryError(f"unknown proximity metric {metric!r}; choose from {PROXIMITY_METRICS}")


def proximity_matrix(tracks, metric: str = "tgiou") -> np.ndarray:
    """Symmetric N x N matrix of pairwise track proximity under `metric`."""
    t = np.asarray(tracks, dtype=np.float64)
    if t.ndim != 3 or t.shape[-1] != 4:
        raise GeometryError(f"tracks must be (N, T, 4), got {t.shape}")
    n = t.shape[0]
    if n < 1:
        raise GeometryError("need at least one individual")
    fn = _pairwise(metric)
    out = np.empty((n, n))
    for i in range(n):
        out[i, i] = fn(t[i], t[i])
        for j in range(i + 1, n):
            v = fn(t[i], t[j])
            out[i, j] = v
            out[j, i] = v
    return out
