"""Average precision as a function of the number of processed regions."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .features import UNARY_SCHEMA, SceneArrays, iou, unary_feature_matrix
from .policy import DatasetAggregate, Policy, SchemaError, TrainConfig, train_cost_sensitive
from .scene import Scene, classify_region
from .search import POLICY, ExplorationTrace, TraceStep, _map, seq_explore

PROPOSAL_RANK = "proposal_rank"
SCENE_CONTEXT = "scene_context"
FULL_STRATEGY = "scene_plus_objects"
METHODS = (PROPOSAL_RANK, SCENE_CONTEXT, FULL_STRATEGY)

CSV_HEADER = ("method", "query_class", "regions_processed", "ap")


@dataclass
class APCurve:
    query_class: int
    method: str
    points: list = field(default_factory=list)  # (regions_processed, ap)

    def ap_at(self, budget: int) -> float:
        return dict(self.points)[budget]


def average_precision(confidences, is_tp, n_groundtruth: int) -> float:
    """All-points interpolated AP of a ranked detection list.

    Ties in confidence keep their input order.  Groundtruth never detected
    counts against recall.
    """
    if n_groundtruth <= 0:
        return 0.0
    conf = np.asarray(confidences, dtype=float)
    tp = np.asarray(is_tp, dtype=bool)
    if len(conf) == 0:
        return 0.0
    order = np.argsort(-conf, kind="stable")
    tp = tp[order]
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_groundtruth
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def match_detections(scene: Scene, steps, query_class: int, matching: str = "id",
                     iou_threshold: float = 0.5):
    """(confidence, is_tp) for explored detections of ``query_class``.

    ``matching="id"`` scores a detection by its own region's groundtruth;
    ``"iou"`` greedily matches each detection (highest confidence first) to
    an unmatched positive region overlapping it by at least ``iou_threshold``.
    """
    dets = [s.detection for s in steps if s.detection.predicted_class == query_class]
    if matching == "id":
        return [(d.confidence, scene.region(d.region_id).gt_class == query_class)
                for d in dets]
    if matching != "iou":
        raise ValueError(f"unknown matching {matching!r}")
    gts = scene.positives(query_class)
    used = set()
    out = []
    for d in sorted(dets, key=lambda d: -d.confidence):
        box = scene.region(d.region_id).bbox
        best, best_iou = None, iou_threshold
        for g in gts:
            if g.id in used:
                continue
            v = iou(box, g.bbox)
            if v >= best_iou:
                best, best_iou = g.id, v
        if best is not None:
            used.add(best)
        out.append((d.confidence, best is not None))
    return out


def corpus_ap(scenes, traces, query_class: int, budget: int | None = None,
              matching: str = "id", pooling: str = "pooled") -> float:
    """AP over the first ``budget`` steps of every trace.

    ``pooling="pooled"`` ranks all detections of the corpus together;
    ``"per_image"`` averages per-scene AP over scenes with positives.
    """
    per_scene = []
    for scene, trace in zip(scenes, traces):
        steps = trace.steps if budget is None else trace.steps[:budget]
        per_scene.append((match_detections(scene, steps, query_class, matching),
                          len(scene.positives(query_class))))
    if pooling == "per_image":
        aps = [average_precision([c for c, _ in m], [t for _, t in m], g)
               for m, g in per_scene if g > 0]
        return float(np.mean(aps)) if aps else 0.0
    if pooling != "pooled":
        raise ValueError(f"unknown pooling {pooling!r}")
    matches = [x for m, _ in per_scene for x in m]
    n_gt = sum(g for _, g in per_scene)
    return average_precision([c for c, _ in matches], [t for _, t in matches], n_gt)


def budgets_for(top_k: int, interval: int = 10) -> list[int]:
    if interval < 1:
        raise ValueError("interval must be >= 1")
    return list(range(interval, top_k + 1, interval))


def _classify_order(scene: Scene, order, noise_seed: int) -> ExplorationTrace:
    trace = ExplorationTrace(scene.id, -1)
    for pos in order:
        r = scene.regions[pos]
        trace.steps.append(TraceStep(r.id, None, classify_region(scene, r.id, noise_seed)))
    return trace


def _curve(method, scenes, traces, query_class, budgets, matching, pooling) -> APCurve:
    return APCurve(query_class, method, [
        (b, corpus_ap(scenes, traces, query_class, b, matching, pooling)) for b in budgets
    ])


def _top_k(corpus) -> int:
    return max(len(s.regions) for s in corpus)


def proposal_rank_traces(corpus, noise_seed: int = 0):
    return [_classify_order(s, range(len(s.regions)), noise_seed) for s in corpus]


def curve_proposal_rank(corpus, query_class: int, interval: int = 10, *, budgets=None,
                        noise_seed: int = 0, matching: str = "id",
                        pooling: str = "pooled") -> APCurve:
    budgets = budgets or budgets_for(_top_k(corpus), interval)
    traces = proposal_rank_traces(corpus, noise_seed)
    return _curve(PROPOSAL_RANK, corpus, traces, query_class, budgets, matching, pooling)


def scene_context_order(policy: Policy, scene: Scene) -> list[int]:
    """Region positions sorted by one-shot unary belief, ties to lower rank."""
    if policy.schema != UNARY_SCHEMA:
        raise SchemaError(f"scene-context ranking needs the {UNARY_SCHEMA!r} schema, "
                          f"got {policy.schema!r}")
    if not scene.regions:
        return []
    scores = policy.scores(unary_feature_matrix(SceneArrays(scene)))
    return list(np.lexsort((np.arange(len(scores)), -scores)))


def scene_context_traces(policy: Policy, corpus, noise_seed: int = 0):
    return [_classify_order(s, scene_context_order(policy, s), noise_seed) for s in corpus]


def curve_scene_context(policy: Policy, corpus, query_class: int, interval: int = 10, *,
                        budgets=None, noise_seed: int = 0, matching: str = "id",
                        pooling: str = "pooled") -> APCurve:
    budgets = budgets or budgets_for(_top_k(corpus), interval)
    traces = scene_context_traces(policy, corpus, noise_seed)
    return _curve(SCENE_CONTEXT, corpus, traces, query_class, budgets, matching, pooling)


def full_strategy_traces(policy: Policy, corpus, query_class: int, N: int,
                         noise_seed: int = 0, threads: int = 1):
    return _map(lambda s: seq_explore(policy, s, query_class, N, POLICY,
                                      noise_seed=noise_seed), corpus, threads)


def curve_full_strategy(policy: Policy, corpus, query_class: int, interval: int = 10,
                        N: int | None = None, *, budgets=None, noise_seed: int = 0,
                        matching: str = "id", pooling: str = "pooled",
                        threads: int = 1) -> APCurve:
    N = N or _top_k(corpus)
    budgets = budgets or budgets_for(N, interval)
    traces = full_strategy_traces(policy, corpus, query_class, N, noise_seed, threads)
    return _curve(FULL_STRATEGY, corpus, traces, query_class, budgets, matching, pooling)


def train_scene_context(corpus, query_class: int, config: TrainConfig | None = None,
                        example_filter: dict | None = None) -> Policy:
    """One-shot region classifier on unary features (no exploration state)."""
    config = dataclasses.replace(config or TrainConfig(query_class=query_class),
                                 schema=UNARY_SCHEMA)
    agg = DatasetAggregate()
    for i, scene in enumerate(corpus):
        arr = SceneArrays(scene)
        rows = np.arange(len(scene.regions))
        if example_filter is not None:
            rows = rows[np.isin(arr.ids, list(example_filter.get(scene.id, ())))]
        if len(rows):
            agg.append(unary_feature_matrix(arr, rows), arr.gt[rows] == query_class,
                       key=(i,))
    return train_cost_sensitive(agg, config)


def write_curves(path, curves, catalog=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in curves:
            name = catalog.name(c.query_class) if catalog is not None else c.query_class
            for b, ap in c.points:
                w.writerow((c.method, name, b, repr(float(ap))))
