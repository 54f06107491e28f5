"""Sequential region exploration and DAgger training of the search policy."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import BACKGROUND
from .features import (
    UNARY_SCHEMA,
    SceneArrays,
    assemble_state_features,
    full_schema,
    sentinel_vector,
    state_feature_matrix,
    unary_feature_matrix,
    unary_state_features,
)
from .policy import (
    DatasetAggregate,
    DegenerateDataError,
    Policy,
    SchemaError,
    TrainConfig,
    predict,
    train_cost_sensitive,
)
from .scene import Detection, Region, Scene, classify_region, split_corpus

log = logging.getLogger(__name__)

ORACLE = "oracle"
POLICY = "policy"


@dataclass
class SearchState:
    explored: list = field(default_factory=list)  # (Region, Detection)
    unexplored: set = field(default_factory=set)  # region ids
    t: int = 0
    classification_call_count: int = 0


@dataclass(frozen=True)
class TraceStep:
    region_id: int
    belief: float | None  # score that selected this region; None for the forced first step
    detection: Detection


@dataclass
class ExplorationTrace:
    scene_id: int
    query_class: int
    steps: list = field(default_factory=list)
    classification_calls: int = 0

    @property
    def region_ids(self) -> list[int]:
        return [s.region_id for s in self.steps]

    @property
    def detections(self) -> list[Detection]:
        return [s.detection for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)

    def truncated(self, budget: int) -> "ExplorationTrace":
        return ExplorationTrace(self.scene_id, self.query_class, self.steps[:budget],
                                self.classification_calls)


def _check_schema(policy: Policy, scene: Scene) -> None:
    if policy.schema != UNARY_SCHEMA and policy.schema != full_schema(scene.catalog):
        raise SchemaError(
            f"policy schema {policy.schema!r} does not match scene catalog "
            f"{full_schema(scene.catalog)!r}"
        )


def _features(schema: str, arr: SceneArrays, rows, explored, iou_threshold) -> np.ndarray:
    if schema == UNARY_SCHEMA:
        return unary_feature_matrix(arr, rows)
    return state_feature_matrix(arr, rows, explored, arr.scene.catalog, iou_threshold)


def classify_step(r_j: Region, explored, policy: Policy | None, query_class: int,
                  scene: Scene, iou_threshold: float | None = None) -> float:
    """Belief that unexplored ``r_j`` holds the query class; ``policy=None`` is the oracle."""
    if policy is None:
        return 1.0 if r_j.gt_class == query_class else 0.0
    _check_schema(policy, scene)
    if policy.schema == UNARY_SCHEMA:
        x = unary_state_features(r_j)
    else:
        thr = policy.iou_threshold if iou_threshold is None else iou_threshold
        x = assemble_state_features(r_j, explored, scene.catalog, thr, sentinel_vector(scene))
    return predict(policy, x)[1]


def seq_explore(policy: Policy | None, scene: Scene, query_class: int, N: int,
                mode=POLICY, *, noise_seed: int = 0, background_skip: bool = True,
                rng_seed: int = 0, recorder=None, schema: str | None = None,
                iou_threshold: float | None = None) -> ExplorationTrace:
    """Explore ``scene`` for ``query_class`` with at most ``N`` classifications.

    ``mode`` is ``"policy"``, ``"oracle"`` or ``("mixture", beta)``; in the
    mixture each step follows the oracle with probability beta.  The rank-0
    proposal is always explored first.  ``recorder(rows, X, oracle_labels,
    predicted_labels)`` is called on every scoring round (training).
    """
    if N < 1:
        raise ValueError(f"budget N must be >= 1, got {N}")
    beta = None
    if isinstance(mode, tuple):
        if mode[0] != "mixture" or not (0.0 <= mode[1] <= 1.0):
            raise ValueError(f"bad mode {mode!r}")
        beta = float(mode[1])
    elif mode not in (POLICY, ORACLE):
        raise ValueError(f"bad mode {mode!r}")
    use_policy = mode == POLICY or (beta is not None and beta < 1.0)
    if use_policy:
        if policy is None:
            raise ValueError(f"mode {mode!r} needs a policy")
        _check_schema(policy, scene)
    trace = ExplorationTrace(scene.id, query_class)
    n = len(scene.regions)
    if n == 0:
        return trace

    feat_schema = schema or (policy.schema if policy is not None else None)
    if recorder is not None and feat_schema is None:
        raise ValueError("recording needs a feature schema")
    need_features = use_policy or recorder is not None
    thr = iou_threshold if iou_threshold is not None else (
        policy.iou_threshold if policy is not None else 0.3)
    arr = SceneArrays(scene)
    oracle_score = (arr.gt == query_class).astype(float)
    rng = np.random.default_rng([rng_seed, scene.seed]) if beta is not None else None

    state = SearchState(unexplored={r.id for r in scene.regions[1:]})
    mask = np.ones(n, dtype=bool)
    policy_score = np.zeros(n)
    curr, curr_belief = 0, None
    scored = False
    while curr is not None and state.t < N:
        region = scene.regions[curr]
        det = classify_region(scene, region.id, noise_seed)
        mask[curr] = False
        state.unexplored.discard(region.id)
        state.explored.append((region, det))
        state.t += 1
        trace.steps.append(TraceStep(region.id, curr_belief, det))
        rows = np.flatnonzero(mask)
        if len(rows) == 0 or state.t >= N:
            break
        # an explored background region leaves every context feature unchanged
        if not scored or not (background_skip and det.predicted_class == BACKGROUND):
            state.classification_call_count += len(rows)
            scored = True
            if need_features:
                X = _features(feat_schema, arr, rows, state.explored, thr)
                if use_policy:
                    policy_score[rows] = policy.scores(X)
                if recorder is not None:
                    pred = (policy_score[rows] > policy.threshold).astype(int) if use_policy \
                        else oracle_score[rows].astype(int)
                    recorder(rows, X, oracle_score[rows].astype(int), pred)
        follow_oracle = mode == ORACLE or (beta is not None and rng.random() < beta)
        score = oracle_score if follow_oracle else policy_score
        # argmax over unexplored; np.argmax takes the first, i.e. the lowest rank
        curr = int(rows[np.argmax(score[rows])])
        curr_belief = float(score[curr])
    trace.classification_calls = state.classification_call_count
    return trace


# -- trace files ---------------------------------------------------------------

def trace_to_dict(trace: ExplorationTrace) -> dict:
    return {
        "scene_id": trace.scene_id,
        "query_class": trace.query_class,
        "classification_calls": trace.classification_calls,
        "steps": [
            {"step": i, "region_id": s.region_id, "belief": s.belief,
             "predicted_class": s.detection.predicted_class,
             "confidence": s.detection.confidence}
            for i, s in enumerate(trace.steps)
        ],
    }


def trace_from_dict(d: dict) -> ExplorationTrace:
    steps = [TraceStep(s["region_id"], s["belief"],
                       Detection(s["region_id"], s["predicted_class"], s["confidence"]))
             for s in d["steps"]]
    return ExplorationTrace(d["scene_id"], d["query_class"], steps, d["classification_calls"])


def write_traces(path, traces) -> None:
    with open(path, "w") as fh:
        for t in traces:
            fh.write(json.dumps(trace_to_dict(t)) + "\n")


def read_traces(path) -> list[ExplorationTrace]:
    with open(path) as fh:
        return [trace_from_dict(json.loads(line)) for line in fh if line.strip()]


# -- DAgger --------------------------------------------------------------------

@dataclass
class DaggerConfig:
    train: TrainConfig
    beta0: float = 0.0
    val_fraction: float = 0.2
    noise_seed: int = 0
    seed: int = 0
    threads: int = 1
    background_skip: bool = True
    # {scene_id: allowed region ids}; None keeps every region
    example_filter: dict | None = None


@dataclass(frozen=True)
class IterationDiagnostics:
    iteration: int
    beta: float
    examples_added: int
    aggregate_size: int
    train_hamming: float
    val_hamming: float


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def validation_hamming(policy: Policy, scenes, query_class: int, N: int,
                       noise_seed: int = 0, threads: int = 1) -> float:
    """Mean Hamming loss per scored state on the policy's own rollouts."""

    def one(scene):
        losses = []
        seq_explore(policy, scene, query_class, N, POLICY, noise_seed=noise_seed,
                    recorder=lambda rows, X, y, p: losses.append(int(np.sum(y != p))))
        return losses

    losses = [x for xs in _map(one, scenes, threads) for x in xs]
    return float(np.mean(losses)) if losses else 0.0


def dagger_train(corpus, query_class: int, n_iterations: int, N: int,
                 config: DaggerConfig):
    """Learn a search policy by dataset aggregation.

    Iteration 1 rolls out the oracle; iteration i follows the oracle with
    probability beta0**(i-1).  Every scoring round contributes one example
    per unexplored region, labelled by groundtruth.  Returns the iteration
    policy with the lowest validation Hamming loss, the per-iteration
    diagnostics and the policies of every iteration.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    if len(corpus) >= 2:
        train, val = split_corpus(corpus, config.val_fraction)
        if not val:
            train, val = corpus[:-1], corpus[-1:]
    else:
        train, val = list(corpus), list(corpus)
    if not any(r.gt_class == query_class for s in train for r in s.regions):
        raise DegenerateDataError("no positives of the query class in the training scenes")

    agg = DatasetAggregate()
    policy = None
    diagnostics, policies = [], []
    for it in range(1, n_iterations + 1):
        beta = config.beta0 ** (it - 1) if policy is not None else 1.0
        mode = ORACLE if beta >= 1.0 else (POLICY if beta <= 0.0 else ("mixture", beta))

        def rollout(item):
            idx, scene = item
            blocks, losses = [], []
            allowed = None
            if config.example_filter is not None:
                allowed = np.isin([r.id for r in scene.regions],
                                  list(config.example_filter.get(scene.id, ())))

            def record(rows, X, y, p):
                losses.append(int(np.sum(y != p)))
                keep = slice(None) if allowed is None else allowed[rows]
                blocks.append((X[keep], y[keep]))

            seq_explore(policy, scene, query_class, N, mode, noise_seed=config.noise_seed,
                        background_skip=config.background_skip,
                        rng_seed=config.seed * 1_000_003 + it, recorder=record,
                        schema=config.train.schema, iou_threshold=config.train.iou_threshold)
            return idx, blocks, losses

        results = _map(rollout, list(enumerate(train)), config.threads)
        before = len(agg)
        all_losses = []
        for idx, blocks, losses in results:
            all_losses.extend(losses)
            for j, (X, y) in enumerate(blocks):
                if len(y):
                    agg.append(X, y, tag=it, key=(idx, j))
        policy = train_cost_sensitive(agg, config.train)
        policies.append(policy)
        val_loss = validation_hamming(policy, val, query_class, N, config.noise_seed,
                                      config.threads)
        diag = IterationDiagnostics(it, beta, len(agg) - before, len(agg),
                                    float(np.mean(all_losses)) if all_losses else 0.0,
                                    val_loss)
        log.info("dagger iteration %d: %s", it, diag)
        diagnostics.append(diag)

    best = min(range(len(policies)), key=lambda i: (diagnostics[i].val_hamming, i))
    return policies[best], diagnostics, policies
