import numpy as np
import pytest

from ctxsearch.config import BACKGROUND, ClassCatalog, ClassifierNoise, parse_config
from ctxsearch.scene import Region, Scene

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def make_region(id, bbox=(0, 0, 10, 10), rank=None, gt=BACKGROUND, objectness=0.5,
                depth=2.0, back=1.0, min_h=0.0, max_h=1.0):
    return Region(id=id, bbox=tuple(float(v) for v in bbox),
                  proposal_rank=id if rank is None else rank,
                  objectness_score=objectness, mean_depth=depth, mean_dist_back=back,
                  min_height=min_h, max_height=max_h, gt_class=gt)


def identity_noise(n_classes):
    return ClassifierNoise(np.eye(n_classes + 1))


def make_scene(regions, classes=("table", "chair"), seed=0, noise=None, id=0):
    regions = sorted(regions, key=lambda r: r.proposal_rank)
    return Scene(id=id, image_width=640, image_height=480, regions=tuple(regions),
                 catalog=ClassCatalog(tuple(classes)), seed=seed,
                 noise=noise or identity_noise(len(classes)))


def anchor_config(**extra):
    """Chair always within ~40px of a table that is proposal rank 0 and never misdetected."""
    text = """
        classes=table,chair,lamp,sofa
        presence.table=1
        presence.lamp=0.5
        presence.sofa=0.5
        cooccur.table.chair=1
        proximity.table.chair=40,10
        profile.table.objectness=0.98,0.01
        profile.chair.objectness=0.35,0.15
        rank_noise=0.02
        confusion.table.table=1
    """
    text += "\n".join(f"{k}={v}" for k, v in extra.items())
    return parse_config(text)


def unary_signature_config(**extra):
    """Beds sit deep in the room at floor level, but look like clutter to objectness."""
    text = """
        classes=bed,lamp,table
        presence.bed=1
        presence.lamp=0.5
        presence.table=0.5
        profile.bed.objectness=0.35,0.15
        profile.bed.depth=5.5,0.2
        profile.bed.base=0.0,0.02
        profile.bed.extent=0.5,0.05
    """
    text += "\n".join(f"{k}={v}" for k, v in extra.items())
    return parse_config(text)


@pytest.fixture
def small_config():
    return parse_config("top_k=20")
