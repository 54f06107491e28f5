"""Scene-context and object-object context features.

Layouts (all fixed order):

* unary (6): objectness, proposal rank, mean depth, distance from the back
  wall, min height, max height
* pair (6): IoU, size ratio, centroid distance, |d back|, |d min height|,
  |d max height|
* state: unary || per-class min-pooled pair features (6*C) || bias
"""

from __future__ import annotations

import math

import numpy as np

from .config import BACKGROUND, ClassCatalog
from .scene import Region, Scene

N_UNARY = 6
N_PAIR = 6

UNARY_SCHEMA = "unary-v1"
FULL_SCHEMA_PREFIX = "full-v1"


def full_schema(catalog: ClassCatalog) -> str:
    return f"{FULL_SCHEMA_PREFIX}:{','.join(catalog.classes)}"


def schema_length(schema: str) -> int:
    if schema == UNARY_SCHEMA:
        return N_UNARY + 1
    prefix, _, classes = schema.partition(":")
    if prefix != FULL_SCHEMA_PREFIX or not classes:
        raise ValueError(f"unknown feature schema {schema!r}")
    return N_UNARY + N_PAIR * len(classes.split(",")) + 1


def unary_features(region: Region) -> np.ndarray:
    return np.array([
        region.objectness_score,
        float(region.proposal_rank),
        region.mean_depth,
        region.mean_dist_back,
        region.min_height,
        region.max_height,
    ])


def iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def pair_features(r_j: Region, r_k: Region) -> np.ndarray:
    if r_j.area <= 0 or r_k.area <= 0:
        raise ValueError("pair features need boxes with positive area")
    (cxj, cyj), (cxk, cyk) = r_j.centroid, r_k.centroid
    return np.array([
        iou(r_j.bbox, r_k.bbox),
        min(r_j.area, r_k.area) / max(r_j.area, r_k.area),
        math.hypot(cxj - cxk, cyj - cyk),
        abs(r_j.mean_dist_back - r_k.mean_dist_back),
        abs(r_j.min_height - r_k.min_height),
        abs(r_j.max_height - r_k.max_height),
    ])


def sentinel_vector(scene: Scene) -> np.ndarray:
    """Pair-feature values for a class with no explored instance."""
    diag = math.hypot(scene.image_width, scene.image_height)
    return np.array([0.0, 0.0, diag, scene.room_depth, scene.room_height, scene.room_height])


def non_maximal_suppress(explored, iou_threshold: float = 0.3):
    """Greedy per-class suppression over explored (Region, Detection) pairs.

    Background entries pass through untouched.  Survivors keep their
    original order.
    """
    order = sorted(range(len(explored)), key=lambda i: -explored[i][1].confidence)
    kept_by_class: dict[int, list[Region]] = {}
    drop = set()
    for i in order:
        region, det = explored[i]
        if det.predicted_class == BACKGROUND:
            continue
        kept = kept_by_class.setdefault(det.predicted_class, [])
        if any(iou(region.bbox, k.bbox) > iou_threshold for k in kept):
            drop.add(i)
        else:
            kept.append(region)
    return [e for i, e in enumerate(explored) if i not in drop]


def aggregate_pair_features(r_j: Region, kept, catalog: ClassCatalog,
                            sentinel: np.ndarray) -> np.ndarray:
    """Per-class element-wise min of pair features against explored objects."""
    agg = np.tile(np.asarray(sentinel, dtype=float), len(catalog))
    seen = set()
    for r_k, det in kept:
        c = det.predicted_class
        # context comes only from explored regions labelled as objects
        if c == BACKGROUND:
            continue
        pf = pair_features(r_j, r_k)
        sl = slice(N_PAIR * c, N_PAIR * (c + 1))
        agg[sl] = pf if c not in seen else np.minimum(agg[sl], pf)
        seen.add(c)
    return agg


def assemble_state_features(r_j: Region, explored, catalog: ClassCatalog,
                            iou_threshold: float, sentinel: np.ndarray) -> np.ndarray:
    kept = non_maximal_suppress(explored, iou_threshold)
    return np.concatenate([
        unary_features(r_j),
        aggregate_pair_features(r_j, kept, catalog, sentinel),
        [1.0],
    ])


def unary_state_features(r_j: Region) -> np.ndarray:
    return np.append(unary_features(r_j), 1.0)


# -- batched versions used by the search loop --------------------------------

class SceneArrays:
    """Column arrays for one scene, indexed by position in ``scene.regions``."""

    def __init__(self, scene: Scene):
        self.scene = scene
        regs = scene.regions
        self.ids = np.array([r.id for r in regs])
        self.pos = {r.id: i for i, r in enumerate(regs)}
        self.boxes = np.array([r.bbox for r in regs], dtype=float).reshape(-1, 4)
        self.unary = np.array([unary_features(r) for r in regs]).reshape(-1, N_UNARY)
        self.area = (self.boxes[:, 2] - self.boxes[:, 0]) * (self.boxes[:, 3] - self.boxes[:, 1])
        self.cx = (self.boxes[:, 0] + self.boxes[:, 2]) / 2.0
        self.cy = (self.boxes[:, 1] + self.boxes[:, 3]) / 2.0
        self.gt = np.array([r.gt_class for r in regs], dtype=int)
        self.sentinel = sentinel_vector(scene)


def pair_feature_block(arr: SceneArrays, rows, cols) -> np.ndarray:
    """Pair features for every (rows[i], cols[j]) combination: (m, K, 6)."""
    rows, cols = np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)
    a, b = arr.boxes[rows][:, None, :], arr.boxes[cols][None, :, :]
    ix = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    iy = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = ix * iy
    area_a, area_b = arr.area[rows][:, None], arr.area[cols][None, :]
    out = np.empty((len(rows), len(cols), N_PAIR))
    out[..., 0] = inter / (area_a + area_b - inter)
    out[..., 1] = np.minimum(area_a, area_b) / np.maximum(area_a, area_b)
    out[..., 2] = np.hypot(arr.cx[rows][:, None] - arr.cx[cols][None, :],
                           arr.cy[rows][:, None] - arr.cy[cols][None, :])
    ua, ub = arr.unary[rows][:, None, 3:], arr.unary[cols][None, :, 3:]
    out[..., 3:] = np.abs(ua - ub)
    return out


def state_feature_matrix(arr: SceneArrays, rows, explored, catalog: ClassCatalog,
                         iou_threshold: float) -> np.ndarray:
    """Full-schema state features for many candidate regions at once.

    Row i equals ``assemble_state_features`` of ``scene.regions[rows[i]]``.
    """
    rows = np.asarray(rows, dtype=int)
    kept = [(r, d) for r, d in non_maximal_suppress(explored, iou_threshold)
            if d.predicted_class != BACKGROUND]
    n_cls = len(catalog)
    agg = np.tile(arr.sentinel, (len(rows), n_cls))
    if kept and len(rows):
        cols = [arr.pos[r.id] for r, _ in kept]
        labels = np.array([d.predicted_class for _, d in kept])
        block = pair_feature_block(arr, rows, cols)
        for c in np.unique(labels):
            agg[:, N_PAIR * c:N_PAIR * (c + 1)] = block[:, labels == c, :].min(axis=1)
    return np.hstack([arr.unary[rows], agg, np.ones((len(rows), 1))])


def unary_feature_matrix(arr: SceneArrays, rows=None) -> np.ndarray:
    u = arr.unary if rows is None else arr.unary[np.asarray(rows, dtype=int)]
    return np.hstack([u, np.ones((len(u), 1))])
