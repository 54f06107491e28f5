"""Generation config for the synthetic scene simulator.

The on-disk format is flat ``key=value`` text with dotted namespaces::

    classes=bed,sofa,table,lamp,pillow,nightstand,counter,chair
    presence.bed=0.5
    cooccur.bed.pillow=0.9
    proximity.bed.pillow=40,15
    profile.pillow.depth=3.2,0.3
    confusion.bed.bed=0.9
    confusion.bed.background=0.1

Blank lines and ``#`` comments are ignored.  Later keys win, which is how
command-line overrides are layered on top of a file.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

BACKGROUND = -1
BACKGROUND_NAME = "background"

DEFAULT_CLASSES = (
    "bed", "sofa", "table", "lamp", "pillow", "nightstand", "counter", "chair",
)

PROFILE_FIELDS = ("width", "height", "depth", "base", "extent", "objectness")


class ConfigError(ValueError):
    """Invalid generation config; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ClassCatalog:
    classes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("classes", "class names must be unique")
        if BACKGROUND_NAME in self.classes:
            raise ConfigError("classes", f"'{BACKGROUND_NAME}' is reserved")
        if not self.classes:
            raise ConfigError("classes", "catalog is empty")

    def __len__(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        if name == BACKGROUND_NAME:
            return BACKGROUND
        try:
            return self.classes.index(name)
        except ValueError:
            raise KeyError(
                f"unknown class {name!r}; catalog: {', '.join(self.classes)}"
            ) from None

    def name(self, index: int) -> str:
        return BACKGROUND_NAME if index == BACKGROUND else self.classes[index]


@dataclass(frozen=True)
class ClassProfile:
    """Per-class (mean, spread) pairs for the unary geometry of an instance.

    ``base`` is the minimum height above the floor and ``extent`` the
    vertical extent, so max height = base + extent.
    """

    width: tuple[float, float] = (120.0, 30.0)
    height: tuple[float, float] = (100.0, 25.0)
    depth: tuple[float, float] = (3.0, 0.8)
    base: tuple[float, float] = (0.3, 0.2)
    extent: tuple[float, float] = (0.8, 0.3)
    objectness: tuple[float, float] = (0.7, 0.12)


@dataclass(frozen=True)
class ClassifierNoise:
    """Noisy region classifier: confusion rows and Beta confidence params.

    ``confusion`` is (C+1)x(C+1); the last row/column is background.
    """

    confusion: np.ndarray
    conf_correct: tuple[float, float] = (8.0, 2.0)
    conf_wrong: tuple[float, float] = (2.0, 5.0)

    def __eq__(self, other):
        if not isinstance(other, ClassifierNoise):
            return NotImplemented
        return (
            np.array_equal(self.confusion, other.confusion)
            and self.conf_correct == other.conf_correct
            and self.conf_wrong == other.conf_wrong
        )

    def __hash__(self):
        return hash((self.confusion.tobytes(), self.conf_correct, self.conf_wrong))

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "conf_correct": list(self.conf_correct),
            "conf_wrong": list(self.conf_wrong),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierNoise":
        return cls(
            confusion=np.asarray(d["confusion"], dtype=float),
            conf_correct=tuple(d["conf_correct"]),
            conf_wrong=tuple(d["conf_wrong"]),
        )


def _default_profiles() -> dict[str, ClassProfile]:
    p = ClassProfile
    return {
        "bed": p(width=(260, 40), height=(150, 25), depth=(3.2, 0.4),
                 base=(0.0, 0.05), extent=(0.6, 0.1), objectness=(0.8, 0.1)),
        "sofa": p(width=(220, 35), height=(120, 20), depth=(3.5, 0.5),
                  base=(0.0, 0.05), extent=(0.85, 0.1), objectness=(0.75, 0.1)),
        "table": p(width=(160, 30), height=(90, 20), depth=(2.8, 0.6),
                   base=(0.0, 0.05), extent=(0.75, 0.08), objectness=(0.7, 0.12)),
        "lamp": p(width=(40, 10), height=(70, 15), depth=(3.6, 0.6),
                  base=(0.6, 0.15), extent=(0.5, 0.1), objectness=(0.55, 0.15)),
        "pillow": p(width=(60, 15), height=(40, 10), depth=(3.3, 0.5),
                    base=(0.55, 0.1), extent=(0.25, 0.05), objectness=(0.5, 0.15)),
        "nightstand": p(width=(60, 12), height=(60, 12), depth=(3.4, 0.5),
                        base=(0.0, 0.05), extent=(0.6, 0.08), objectness=(0.6, 0.12)),
        "counter": p(width=(300, 50), height=(110, 20), depth=(2.5, 0.6),
                     base=(0.0, 0.05), extent=(0.9, 0.05), objectness=(0.7, 0.12)),
        "chair": p(width=(70, 15), height=(110, 20), depth=(2.6, 0.7),
                   base=(0.0, 0.05), extent=(0.95, 0.1), objectness=(0.6, 0.12)),
    }


@dataclass
class GenConfig:
    top_k: int = 100
    n_scenes: int = 100
    image_width: int = 640
    image_height: int = 480
    room_depth: float = 6.0
    room_height: float = 3.0
    catalog: ClassCatalog = field(default_factory=lambda: ClassCatalog(DEFAULT_CLASSES))
    # independent base presence probability per class
    presence: dict[str, float] = field(default_factory=dict)
    # cooccur[a][b] = P(b forced present | a present)
    cooccur: dict[str, dict[str, float]] = field(default_factory=dict)
    # proximity[a][b] = (mean, spread) of the centroid distance of b from a, pixels
    proximity: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    instances: dict[str, tuple[int, int]] = field(default_factory=dict)
    profiles: dict[str, ClassProfile] = field(default_factory=dict)
    # None fills the scene up to top_k
    background_count: tuple[int, int] | None = None
    background_objectness: tuple[float, float] = (0.35, 0.15)
    rank_noise: float = 0.05
    back_noise: float = 0.3
    # classifier noise; explicit confusion rows override the two rates
    accuracy: float = 0.9
    false_positive: float = 0.02
    confusion_rows: dict[str, dict[str, float]] = field(default_factory=dict)
    conf_correct: tuple[float, float] = (8.0, 2.0)
    conf_wrong: tuple[float, float] = (2.0, 5.0)

    def profile(self, cls: str) -> ClassProfile:
        return self.profiles.get(cls) or _default_profiles().get(cls) or ClassProfile()

    def classifier_noise(self) -> ClassifierNoise:
        names = list(self.catalog.classes) + [BACKGROUND_NAME]
        c = len(self.catalog)
        m = np.zeros((c + 1, c + 1))
        for i in range(c):
            m[i, i] = self.accuracy
            m[i, c] = 1.0 - self.accuracy
        m[c, :c] = self.false_positive / c
        m[c, c] = 1.0 - self.false_positive
        for gt, row in self.confusion_rows.items():
            i = names.index(gt)
            m[i, :] = 0.0
            for pred, p in row.items():
                m[i, names.index(pred)] = p
        return ClassifierNoise(m, tuple(self.conf_correct), tuple(self.conf_wrong))

    def validate(self) -> "GenConfig":
        classes = set(self.catalog.classes)
        names = classes | {BACKGROUND_NAME}
        if self.top_k < 1:
            raise ConfigError("top_k", "must be >= 1")
        if self.n_scenes < 1:
            raise ConfigError("n_scenes", "must be >= 1")
        if self.image_width <= 1 or self.image_height <= 1:
            raise ConfigError("image", "dimensions must exceed one pixel")
        if self.room_depth <= 0 or self.room_height <= 0:
            raise ConfigError("room", "bounds must be positive")

        def prob(key, p):
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ConfigError(key, f"probability {p} outside [0, 1]")

        def known(key, name, allowed):
            if name not in allowed:
                raise ConfigError(key, f"unknown class {name!r}")

        for cls, p in self.presence.items():
            known(f"presence.{cls}", cls, classes)
            prob(f"presence.{cls}", p)
        for a, row in self.cooccur.items():
            for b, p in row.items():
                known(f"cooccur.{a}.{b}", a, classes)
                known(f"cooccur.{a}.{b}", b, classes)
                prob(f"cooccur.{a}.{b}", p)
        for a, row in self.proximity.items():
            for b, (mean, spread) in row.items():
                key = f"proximity.{a}.{b}"
                known(key, a, classes)
                known(key, b, classes)
                if mean < 0 or spread < 0:
                    raise ConfigError(key, "mean and spread must be >= 0")
        for cls, (lo, hi) in self.instances.items():
            known(f"instances.{cls}", cls, classes)
            if lo < 1 or hi < lo:
                raise ConfigError(f"instances.{cls}", "need 1 <= min <= max")
        for cls in self.profiles:
            known(f"profile.{cls}", cls, classes)
        if self.background_count is not None:
            lo, hi = self.background_count
            if lo < 0 or hi < lo:
                raise ConfigError("background.count", "need 0 <= min <= max")
        prob("classifier.accuracy", self.accuracy)
        prob("classifier.false_positive", self.false_positive)
        if self.rank_noise < 0:
            raise ConfigError("rank_noise", "must be >= 0")
        for key, (a, b) in (("classifier.conf_correct", self.conf_correct),
                            ("classifier.conf_wrong", self.conf_wrong)):
            if a <= 0 or b <= 0:
                raise ConfigError(key, "Beta parameters must be positive")
        for gt, row in self.confusion_rows.items():
            for pred, p in row.items():
                known(f"confusion.{gt}.{pred}", gt, names)
                known(f"confusion.{gt}.{pred}", pred, names)
                prob(f"confusion.{gt}.{pred}", p)
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"confusion.{gt}", f"row sums to {total}, expected 1")
        return self


def default_config() -> GenConfig:
    """A small indoor-scene world with planted co-occurrence and proximity."""
    return GenConfig(
        presence={"bed": 0.5, "sofa": 0.4, "table": 0.5, "lamp": 0.3,
                  "pillow": 0.2, "nightstand": 0.3, "counter": 0.3, "chair": 0.4},
        cooccur={"bed": {"pillow": 0.9, "nightstand": 0.6},
                 "nightstand": {"lamp": 0.8},
                 "table": {"chair": 0.9},
                 "sofa": {"pillow": 0.5, "lamp": 0.3}},
        proximity={"bed": {"pillow": (40.0, 15.0), "nightstand": (120.0, 30.0)},
                   "nightstand": {"lamp": (30.0, 10.0)},
                   "table": {"chair": (80.0, 20.0)},
                   "sofa": {"pillow": (40.0, 15.0)}},
    )


def _floats(key: str, value: str, n: int) -> tuple[float, ...]:
    parts = [s.strip() for s in value.split(",")]
    if len(parts) != n:
        raise ConfigError(key, f"expected {n} comma-separated numbers, got {value!r}")
    try:
        return tuple(float(s) for s in parts)
    except ValueError:
        raise ConfigError(key, f"not a number: {value!r}") from None


def _scalar(key: str, value: str, cast=float):
    try:
        return cast(value)
    except ValueError:
        raise ConfigError(key, f"cannot parse {value!r} as {cast.__name__}") from None


def parse_pairs(lines) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def apply_pairs(cfg: GenConfig, pairs) -> GenConfig:
    """Apply ``(key, value)`` overrides to a config; returns a new config."""
    cfg = dataclasses.replace(
        cfg,
        presence=dict(cfg.presence),
        cooccur={k: dict(v) for k, v in cfg.cooccur.items()},
        proximity={k: dict(v) for k, v in cfg.proximity.items()},
        instances=dict(cfg.instances),
        profiles=dict(cfg.profiles),
        confusion_rows={k: dict(v) for k, v in cfg.confusion_rows.items()},
    )
    for key, value in pairs:
        parts = key.split(".")
        head = parts[0]
        if key in ("top_k", "n_scenes"):
            setattr(cfg, key, _scalar(key, value, int))
        elif key == "image.width":
            cfg.image_width = _scalar(key, value, int)
        elif key == "image.height":
            cfg.image_height = _scalar(key, value, int)
        elif key == "room.depth":
            cfg.room_depth = _scalar(key, value)
        elif key == "room.height":
            cfg.room_height = _scalar(key, value)
        elif key == "classes":
            # a new catalog starts from an empty world; per-class keys must follow
            cfg.catalog = ClassCatalog(tuple(s.strip() for s in value.split(",") if s.strip()))
            for table in (cfg.presence, cfg.cooccur, cfg.proximity, cfg.instances,
                          cfg.profiles, cfg.confusion_rows):
                table.clear()
        elif head == "presence" and len(parts) == 2:
            cfg.presence[parts[1]] = _scalar(key, value)
        elif head == "cooccur" and len(parts) == 3:
            cfg.cooccur.setdefault(parts[1], {})[parts[2]] = _scalar(key, value)
        elif head == "proximity" and len(parts) == 3:
            cfg.proximity.setdefault(parts[1], {})[parts[2]] = _floats(key, value, 2)
        elif head == "instances" and len(parts) == 2:
            lo, hi = _floats(key, value, 2)
            cfg.instances[parts[1]] = (int(lo), int(hi))
        elif head == "profile" and len(parts) == 3 and parts[2] in PROFILE_FIELDS:
            prof = cfg.profile(parts[1])
            cfg.profiles[parts[1]] = dataclasses.replace(
                prof, **{parts[2]: _floats(key, value, 2)})
        elif key == "background.count":
            lo, hi = _floats(key, value, 2)
            cfg.background_count = (int(lo), int(hi))
        elif key == "background.objectness":
            cfg.background_objectness = _floats(key, value, 2)
        elif key == "rank_noise":
            cfg.rank_noise = _scalar(key, value)
        elif key == "back_noise":
            cfg.back_noise = _scalar(key, value)
        elif key == "classifier.accuracy":
            cfg.accuracy = _scalar(key, value)
        elif key == "classifier.false_positive":
            cfg.false_positive = _scalar(key, value)
        elif key == "classifier.conf_correct":
            cfg.conf_correct = _floats(key, value, 2)
        elif key == "classifier.conf_wrong":
            cfg.conf_wrong = _floats(key, value, 2)
        elif head == "confusion" and len(parts) == 3:
            cfg.confusion_rows.setdefault(parts[1], {})[parts[2]] = _scalar(key, value)
        else:
            raise ConfigError(key, "unknown key")
    return cfg


def load_config(path, overrides=()) -> GenConfig:
    """Read a key=value config file on top of the defaults and validate it."""
    with open(path) as fh:
        pairs = parse_pairs(fh)
    return apply_pairs(default_config(), list(pairs) + list(overrides)).validate()


def parse_config(text: str, base: GenConfig | None = None) -> GenConfig:
    base = default_config() if base is None else base
    return apply_pairs(base, parse_pairs(text.splitlines())).validate()
