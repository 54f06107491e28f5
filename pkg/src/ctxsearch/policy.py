"""Linear cost-sensitive search policy, the groundtruth oracle and Hamming loss."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .config import ClassCatalog
from .features import UNARY_SCHEMA, full_schema, schema_length
from .scene import Scene

MODEL_FORMAT = "ctxsearch-policy"
MODEL_VERSION = 1


class SchemaError(ValueError):
    """Feature vector or model file does not match the expected schema."""


class DegenerateDataError(ValueError):
    """Training data lacks one of the two labels."""


@dataclass(frozen=True)
class Policy:
    weights: np.ndarray
    schema: str
    mean: np.ndarray
    scale: np.ndarray
    threshold: float = 0.0
    catalog: ClassCatalog | None = None
    query_class: int = 0
    iou_threshold: float = 0.3

    def __post_init__(self):
        n = schema_length(self.schema)
        for name in ("weights", "mean", "scale"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise SchemaError(f"{name} has shape {v.shape}, schema {self.schema!r} needs ({n},)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("policy weights must be finite")

    @classmethod
    def zeros(cls, schema: str, **kw) -> "Policy":
        n = schema_length(schema)
        return cls(np.zeros(n), schema, np.zeros(n), np.ones(n), **kw)

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise SchemaError(
                f"features of length {X.shape[1]} do not match schema {self.schema!r}"
            )
        return ((X - self.mean) / self.scale) @ self.weights

    def scaled(self, factor: float) -> "Policy":
        return Policy(self.weights * factor, self.schema, self.mean, self.scale,
                      self.threshold * factor, self.catalog, self.query_class,
                      self.iou_threshold)


def predict(policy: Policy, features) -> tuple[int, float]:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise SchemaError("predict takes a single feature vector")
    belief = float(policy.scores(features)[0])
    return int(belief > policy.threshold), belief


@dataclass(frozen=True)
class PredictionList:
    """(region_id, label, belief) over the unexplored regions of a state."""

    entries: tuple[tuple[int, int, float], ...]

    @property
    def ids(self) -> list[int]:
        return [e[0] for e in self.entries]

    @property
    def labels(self) -> dict[int, int]:
        return {rid: lab for rid, lab, _ in self.entries}


def oracle_predict(scene: Scene, query_class: int, unexplored) -> PredictionList:
    regs = sorted((scene.region(i) for i in unexplored), key=lambda r: r.proposal_rank)
    return PredictionList(tuple(
        (r.id, int(r.gt_class == query_class), 1.0 if r.gt_class == query_class else 0.0)
        for r in regs
    ))


def select_next(scene: Scene, preds: PredictionList) -> int:
    """Highest-belief region, ties to the lowest proposal rank."""
    if not preds.entries:
        raise ValueError("no unexplored region to select")
    best = min(preds.entries, key=lambda e: (-e[2], scene.region(e[0]).proposal_rank))
    return best[0]


def hamming_loss(predicted: PredictionList, oracle: PredictionList) -> int:
    p, o = predicted.labels, oracle.labels
    if p.keys() != o.keys() or len(p) != len(predicted.entries):
        raise ValueError("prediction lists cover different regions")
    return sum(p[k] != o[k] for k in p)


# -- training -----------------------------------------------------------------

@dataclass
class DatasetAggregate:
    """Append-only pool of (features, oracle label, cost) examples.

    Blocks are tagged with the iteration that produced them.  Appends may
    come from several threads; ``arrays`` sorts blocks so that the result is
    independent of append order.
    """

    blocks: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def append(self, features, labels, costs=None, tag=0, key=()) -> None:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        y = np.asarray(labels, dtype=int).reshape(-1)
        c = np.ones(len(y)) if costs is None else np.asarray(costs, dtype=float).reshape(-1)
        if not (len(X) == len(y) == len(c)):
            raise ValueError("features, labels and costs differ in length")
        if len(y) and (not np.all(np.isfinite(c)) or np.any(c <= 0)):
            raise ValueError("cost weights must be finite and positive")
        with self._lock:
            self.blocks.append(((tag, *key), X, y, c))

    def __len__(self) -> int:
        return sum(len(b[2]) for b in self.blocks)

    def size_through(self, tag) -> int:
        return sum(len(b[2]) for b in self.blocks if b[0][0] <= tag)

    def arrays(self):
        if not self.blocks:
            raise DegenerateDataError("empty dataset")
        blocks = sorted(self.blocks, key=lambda b: b[0])
        return (np.vstack([b[1] for b in blocks]),
                np.concatenate([b[2] for b in blocks]),
                np.concatenate([b[3] for b in blocks]))


@dataclass
class TrainConfig:
    schema: str = UNARY_SCHEMA
    l2: float = 1e-4
    tol: float = 1e-8
    max_iter: int = 100
    # "uniform" weights every region alike, as the Hamming loss does
    class_weight: str = "uniform"
    seed: int = 0
    catalog: ClassCatalog | None = None
    query_class: int = 0
    iou_threshold: float = 0.3

    @classmethod
    def for_catalog(cls, catalog: ClassCatalog, full: bool = True, **kw) -> "TrainConfig":
        return cls(schema=full_schema(catalog) if full else UNARY_SCHEMA,
                   catalog=catalog, **kw)


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(X, y, costs, l2=1e-4, tol=1e-8, max_iter=100, reg_mask=None):
    """Cost-weighted L2 logistic regression by damped Newton.

    Minimises sum_i c_i log(1 + exp(-s_i x_i.w)) / sum_i c_i + l2/2 |w_reg|^2
    with s_i in {-1, +1}.  The normalisation makes the optimum invariant to
    duplicating the data.
    """
    X = np.asarray(X, dtype=float)
    s = 2.0 * np.asarray(y, dtype=float) - 1.0
    c = np.asarray(costs, dtype=float)
    c = c / c.sum()
    d = X.shape[1]
    mask = np.ones(d) if reg_mask is None else np.asarray(reg_mask, dtype=float)
    w = np.zeros(d)

    def objective(w):
        return c @ _log1pexp(-s * (X @ w)) + 0.5 * l2 * np.sum(mask * w * w)

    f = objective(w)
    for _ in range(max_iter):
        z = X @ w
        g = X.T @ (c * -s * _sigmoid(-s * z)) + l2 * mask * w
        if np.max(np.abs(g)) < tol:
            break
        p = _sigmoid(z)
        H = (X * (c * p * (1.0 - p))[:, None]).T @ X
        H[np.diag_indices(d)] += l2 * mask + 1e-12
        step = np.linalg.solve(H, g)
        t = 1.0
        while t > 1e-10:
            w_new = w - t * step
            f_new = objective(w_new)
            if f_new <= f - 1e-4 * t * (g @ step):
                break
            t *= 0.5
        else:
            break
        w, f = w_new, f_new
    return w


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean/std; the trailing bias column and constant columns keep scale 1."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    mean[-1] = 0.0
    scale[-1] = 1.0
    scale[scale < 1e-12] = 1.0
    return mean, scale


def train_cost_sensitive(agg: DatasetAggregate, config: TrainConfig) -> Policy:
    X, y, c = agg.arrays()
    if X.shape[1] != schema_length(config.schema):
        raise SchemaError(f"examples of width {X.shape[1]} vs schema {config.schema!r}")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateDataError("training data needs both positive and negative labels")
    if config.class_weight == "balanced":
        c = c * np.where(y == 1, len(y) / (2.0 * n_pos), len(y) / (2.0 * (len(y) - n_pos)))
    elif config.class_weight != "uniform":
        raise ValueError(f"unknown class_weight {config.class_weight!r}")
    mean, scale = standardization(X)
    mask = np.ones(X.shape[1])
    mask[-1] = 0.0  # bias is not shrunk
    w = fit_logistic((X - mean) / scale, y, c, config.l2, config.tol,
                     config.max_iter, mask)
    return Policy(w, config.schema, mean, scale, 0.0, config.catalog,
                  config.query_class, config.iou_threshold)


# -- model files --------------------------------------------------------------

def policy_to_dict(policy: Policy) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema": policy.schema,
        "catalog": list(policy.catalog.classes) if policy.catalog else None,
        "query_class": policy.query_class,
        "iou_threshold": policy.iou_threshold,
        "threshold": policy.threshold,
        "mean": policy.mean.tolist(),
        "scale": policy.scale.tolist(),
        "weights": policy.weights.tolist(),
    }


def policy_from_dict(d: dict) -> Policy:
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise SchemaError("not a ctxsearch policy file (format/version mismatch)")
    catalog = ClassCatalog(tuple(d["catalog"])) if d.get("catalog") else None
    schema = d["schema"]
    if schema != UNARY_SCHEMA and (catalog is None or schema != full_schema(catalog)):
        raise SchemaError(f"schema {schema!r} does not match the stored catalog")
    try:
        return Policy(np.asarray(d["weights"], dtype=float), schema,
                      np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float),
                      float(d["threshold"]), catalog, int(d["query_class"]),
                      float(d["iou_threshold"]))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def save_policy(path, policy: Policy) -> None:
    with open(path, "w") as fh:
        json.dump(policy_to_dict(policy), fh, indent=1)
        fh.write("\n")


def load_policy(path) -> Policy:
    with open(path) as fh:
        return policy_from_dict(json.load(fh))
