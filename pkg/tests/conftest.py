import numpy as np
import pytest

from ris_match import CouplingSpec, build_scene
from ris_match.config import resolve_config


def make_config(grid_side=12, n_focus=160, n_outer=240, **section_overrides):
    """Desk-profile config shrunk to unit-test scale, with section overrides."""
    cfg = resolve_config("desk")
    cfg["ris"]["grid_side"] = grid_side
    cfg["sampling"]["focus_count"] = n_focus
    cfg["sampling"]["outer_count"] = n_outer
    for section, overrides in section_overrides.items():
        cfg[section].update(overrides)
    return cfg


def make_scene(grid_side=12, n_focus=160, n_outer=240, **section_overrides):
    return build_scene(make_config(grid_side, n_focus, n_outer, **section_overrides))


@pytest.fixture(scope="session")
def mini_scene():
    """12x12 panel with reduced sampling; the workhorse for model tests."""
    return make_scene()


@pytest.fixture(scope="session")
def tiny_scene():
    """8x8 panel for brute-force oracles that scale poorly."""
    return make_scene(grid_side=8, n_focus=60, n_outer=90)


@pytest.fixture(scope="session")
def coupling():
    return CouplingSpec(alpha=0.15)


@pytest.fixture(scope="session")
def no_coupling():
    return CouplingSpec(alpha=0.0)


def random_points_inside(scene, count, seed, margin=0.02):
    """Observation points in the room interior, clear of the panel wall."""
    rng = np.random.default_rng(seed)
    side = scene.room.side_length
    pts = rng.uniform(margin, side - margin, size=(count, 3))
    pts[:, 0] = rng.uniform(0.05, side - margin, size=count)  # stay off the x_min panel
    return pts


def random_phase_vector(scene, rng):
    return rng.uniform(0.0, 2.0 * np.pi, scene.element_count)
