"""Context-guided sequential object search on synthetic indoor scenes."""

from .config import BACKGROUND, ClassCatalog, ConfigError, GenConfig, default_config
from .policy import Policy, predict
from .scene import Detection, Region, Scene, classify_region, generate_corpus, generate_scene
from .search import ExplorationTrace, dagger_train, seq_explore

__all__ = [
    "BACKGROUND", "ClassCatalog", "ConfigError", "GenConfig", "default_config",
    "Policy", "predict",
    "Detection", "Region", "Scene", "classify_region", "generate_corpus", "generate_scene",
    "ExplorationTrace", "dagger_train", "seq_explore",
]
