"""Synthetic indoor scenes: region proposals with planted object context.

Every object instance yields one proposal carrying its groundtruth class;
the rest of the top-k list is background clutter.  Proposal ranks follow
objectness with rank noise, so the proposal order is informative but weak.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .config import (
    BACKGROUND,
    ClassCatalog,
    ClassifierNoise,
    GenConfig,
)


@dataclass(frozen=True)
class Region:
    id: int
    bbox: tuple[float, float, float, float]
    proposal_rank: int
    objectness_score: float
    mean_depth: float
    mean_dist_back: float
    min_height: float
    max_height: float
    gt_class: int = BACKGROUND

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)

    @property
    def centroid(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass(frozen=True)
class Detection:
    region_id: int
    predicted_class: int
    confidence: float

    @property
    def is_background(self) -> bool:
        return self.predicted_class == BACKGROUND


@dataclass(frozen=True)
class Scene:
    id: int
    image_width: int
    image_height: int
    regions: tuple[Region, ...]
    catalog: ClassCatalog
    seed: int
    room_depth: float = 6.0
    room_height: float = 3.0
    noise: ClassifierNoise | None = None

    @cached_property
    def _by_id(self) -> dict[int, Region]:
        return {r.id: r for r in self.regions}

    def region(self, region_id: int) -> Region:
        try:
            return self._by_id[region_id]
        except KeyError:
            raise KeyError(f"scene {self.id} has no region {region_id}") from None

    def positives(self, query_class: int) -> list[Region]:
        return [r for r in self.regions if r.gt_class == query_class]


def derive_seed(seed: int, index: int) -> int:
    """Child seed for scene ``index`` of a corpus seeded with ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint32)[0])


def _normal(rng, spec, lo, hi) -> float:
    mean, spread = spec
    return float(min(max(rng.normal(mean, spread), lo), hi))


def _present_classes(cfg: GenConfig, rng) -> list[int]:
    classes = cfg.catalog.classes
    present = [rng.random() < cfg.presence.get(c, 0.0) for c in classes]
    queue = [i for i, p in enumerate(present) if p]
    while queue:
        a = queue.pop(0)
        for b, p in cfg.cooccur.get(classes[a], {}).items():
            j = classes.index(b)
            if not present[j] and rng.random() < p:
                present[j] = True
                queue.append(j)
    return [i for i, p in enumerate(present) if p]


def _placement_order(cfg: GenConfig, present: list[int]) -> list[tuple[int, int | None]]:
    """Order present classes so that each class follows its proximity anchor.

    Returns (class, anchor-or-None) pairs; cycles are broken by placing the
    first remaining class freely.
    """
    classes = cfg.catalog.classes
    anchors = {}
    for b in present:
        for a in present:
            if a != b and classes[b] in cfg.proximity.get(classes[a], {}):
                anchors[b] = a
                break
    order, placed = [], set()
    remaining = list(present)
    while remaining:
        for b in remaining:
            a = anchors.get(b)
            if a is None or a in placed:
                break
        else:
            b, a = remaining[0], None
            anchors.pop(b, None)
        order.append((b, anchors.get(b)))
        placed.add(b)
        remaining.remove(b)
    return order


def _fit_box(cx, cy, w, h, width, height):
    # shrink symmetrically so the centroid stays where it was sampled
    hw = max(min(w / 2.0, cx, width - cx), 0.5)
    hh = max(min(h / 2.0, cy, height - cy), 0.5)
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def generate_scene(config: GenConfig, seed: int, scene_id: int = 0) -> Scene:
    cfg = config.validate()
    rng = np.random.default_rng(seed)
    W, H = float(cfg.image_width), float(cfg.image_height)
    classes = cfg.catalog.classes

    raw = []  # (bbox, objectness, depth, back, min_h, max_h, gt)
    centroids: dict[int, tuple[float, float]] = {}

    def unary(prof_depth, prof_base, prof_extent, objectness):
        depth = _normal(rng, prof_depth, 0.3, cfg.room_depth)
        back = min(max(cfg.room_depth - depth + rng.normal(0.0, cfg.back_noise), 0.0),
                   cfg.room_depth)
        min_h = _normal(rng, prof_base, 0.0, cfg.room_height)
        max_h = min(min_h + abs(rng.normal(*prof_extent)), cfg.room_height)
        return objectness, depth, back, min_h, max_h

    present = _present_classes(cfg, rng)
    for cls, anchor in _placement_order(cfg, present):
        prof = cfg.profile(classes[cls])
        lo, hi = cfg.instances.get(classes[cls], (1, 1))
        for _ in range(int(rng.integers(lo, hi + 1))):
            w = _normal(rng, prof.width, 8.0, 0.9 * W)
            h = _normal(rng, prof.height, 8.0, 0.9 * H)
            if anchor is None:
                cx, cy = rng.uniform(w / 2, W - w / 2), rng.uniform(h / 2, H - h / 2)
            else:
                ax, ay = centroids[anchor]
                mean, spread = cfg.proximity[classes[anchor]][classes[cls]]
                dist = abs(rng.normal(mean, spread))
                for _ in range(20):
                    theta = rng.uniform(0.0, 2.0 * math.pi)
                    cx, cy = ax + dist * math.cos(theta), ay + dist * math.sin(theta)
                    if 0.0 < cx < W and 0.0 < cy < H:
                        break
                else:
                    cx, cy = min(max(cx, 1.0), W - 1.0), min(max(cy, 1.0), H - 1.0)
            centroids.setdefault(cls, (cx, cy))
            obj = _normal(rng, prof.objectness, 0.0, 1.0)
            raw.append((_fit_box(cx, cy, w, h, W, H),
                        *unary(prof.depth, prof.base, prof.extent, obj), cls))

    n_obj = len(raw)
    if cfg.background_count is None:
        n_bg = max(cfg.top_k - n_obj, 0)
    else:
        lo, hi = cfg.background_count
        n_bg = int(rng.integers(lo, hi + 1))
    for _ in range(n_bg):
        w, h = rng.uniform(20.0, W / 2), rng.uniform(20.0, H / 2)
        cx, cy = rng.uniform(w / 2, W - w / 2), rng.uniform(h / 2, H - h / 2)
        depth = rng.uniform(0.5, cfg.room_depth)
        base = rng.uniform(0.0, 0.8 * cfg.room_height)
        extent = rng.uniform(0.05, cfg.room_height - base)
        obj = _normal(rng, cfg.background_objectness, 0.0, 1.0)
        o, d, b, mn, mx = unary((depth, 0.0), (base, 0.0), (extent, 0.0), obj)
        raw.append((_fit_box(cx, cy, w, h, W, H), o, d, b, mn, mx, BACKGROUND))

    keys = np.array([r[1] for r in raw]) + rng.normal(0.0, cfg.rank_noise, len(raw))
    order = sorted(range(len(raw)), key=lambda i: (-keys[i], i))[: cfg.top_k]
    ids = rng.permutation(len(order))
    regions = []
    for rank, i in enumerate(order):
        bbox, obj, depth, back, min_h, max_h, gt = raw[i]
        regions.append(Region(
            id=int(ids[rank]),
            bbox=tuple(float(v) for v in bbox),
            proposal_rank=rank,
            objectness_score=float(obj),
            mean_depth=float(depth),
            mean_dist_back=float(back),
            min_height=float(min_h),
            max_height=float(max_h),
            gt_class=int(gt),
        ))
    return Scene(
        id=scene_id,
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        regions=tuple(regions),
        catalog=cfg.catalog,
        seed=int(seed),
        room_depth=float(cfg.room_depth),
        room_height=float(cfg.room_height),
        noise=cfg.classifier_noise(),
    )


def generate_corpus(config: GenConfig, n: int, seed: int) -> list[Scene]:
    if n <= 0:
        raise ValueError(f"corpus size must be positive, got {n}")
    return [generate_scene(config, derive_seed(seed, i), scene_id=i) for i in range(n)]


def split_corpus(scenes, test_fraction: float = 0.2):
    """Split by index: the trailing ``test_fraction`` of scenes is held out."""
    n_test = int(round(len(scenes) * test_fraction))
    cut = len(scenes) - n_test
    return list(scenes[:cut]), list(scenes[cut:])


def classify_region(scene: Scene, region_id: int, noise_seed: int = 0) -> Detection:
    """Simulated region classifier; a pure function of its arguments."""
    region = scene.region(region_id)
    noise = scene.noise
    n = len(scene.catalog)
    row = n if region.gt_class == BACKGROUND else region.gt_class
    rng = np.random.default_rng([scene.seed, region_id, noise_seed])
    pred = int(rng.choice(n + 1, p=noise.confusion[row]))
    correct = pred == row
    conf = float(rng.beta(*(noise.conf_correct if correct else noise.conf_wrong)))
    return Detection(region_id, BACKGROUND if pred == n else pred, conf)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "image_width": scene.image_width,
        "image_height": scene.image_height,
        "room_depth": scene.room_depth,
        "room_height": scene.room_height,
        "seed": scene.seed,
        "catalog": list(scene.catalog.classes),
        "noise": scene.noise.to_dict() if scene.noise is not None else None,
        "regions": [{**asdict(r), "bbox": list(r.bbox)} for r in scene.regions],
    }


def scene_from_dict(d: dict) -> Scene:
    regions = tuple(
        Region(**{**r, "bbox": tuple(r["bbox"])}) for r in d["regions"]
    )
    noise = d.get("noise")
    return Scene(
        id=d["id"],
        image_width=d["image_width"],
        image_height=d["image_height"],
        regions=regions,
        catalog=ClassCatalog(tuple(d["catalog"])),
        seed=d["seed"],
        room_depth=d.get("room_depth", 6.0),
        room_height=d.get("room_height", 3.0),
        noise=ClassifierNoise.from_dict(noise) if noise is not None else None,
    )


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene))


def write_corpus(path, scenes) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            fh.write(dumps_scene(s) + "\n")


def read_corpus(path) -> list[Scene]:
    with open(path) as fh:
        return [scene_from_dict(json.loads(line)) for line in fh if line.strip()]
