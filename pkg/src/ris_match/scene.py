"""Simulation geometry: room, walls, transmitter, RIS grid, focus regions.

All geometry is immutable after construction (arrays are locked read-only)
and safe to share across threads.  Observation-point sampling is seeded and
single-threaded so that equal ``(config, seed)`` pairs reproduce the exact
same point sets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .config import WALL_IDS, resolve_config, scene_hash_bytes
from .errors import SceneError

SPEED_OF_LIGHT_M_PER_S = 299792458.0

# Region labels for sampling points.
REGION_FOCUS = 0
REGION_NEAR_OUT = 1
REGION_FAR_OUT = 2
REGION_NAMES = ("focus", "near_out", "far_out")


def _locked(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Wall:
    """One axis-aligned room face.

    ``normal`` is the unit vector pointing into the room; ``axis`` and
    ``offset`` locate the face plane (coordinate ``axis`` equals ``offset``).
    """

    wall_id: str
    axis: int
    offset: float
    normal: np.ndarray
    reflectivity: float
    ris_mounted: bool = False


@dataclass(frozen=True)
class Room:
    side_length: float
    walls: tuple[Wall, ...]

    def wall(self, wall_id: str) -> Wall:
        for w in self.walls:
            if w.wall_id == wall_id:
                return w
        raise KeyError(wall_id)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= 0.0) & (pts <= self.side_length), axis=1)


@dataclass(frozen=True)
class Transmitter:
    position: np.ndarray
    boresight: np.ndarray
    pattern_exponent: float
    frequency: float

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT_M_PER_S / self.frequency

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength


@dataclass(frozen=True)
class RisPanel:
    grid_side: int
    spacing: float
    element_centers: np.ndarray  # (N, 3), row-major over the grid
    wall_id: str
    cosine_exponent: float

    @property
    def count(self) -> int:
        return self.element_centers.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.element_centers.mean(axis=0)


@dataclass(frozen=True)
class FocusRegion:
    centers: np.ndarray  # (L, 3)
    radius: float

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        d = np.linalg.norm(pts[:, None, :] - self.centers[None, :, :], axis=2)
        return np.any(d <= self.radius, axis=1)


@dataclass(frozen=True)
class SamplingSets:
    """Deterministic observation points: dense in-focus, lattice outside.

    ``region_labels`` covers the concatenation ``[focus_points; outer_points]``
    with exactly one label per point.
    """

    focus_points: np.ndarray   # (N_F, 3)
    focus_weights: np.ndarray  # (N_F,), uniform 1/N_F
    outer_points: np.ndarray   # (N_O, 3)
    outer_weights: np.ndarray  # (N_O,), uniform 1/N_O
    region_labels: np.ndarray  # (N_F + N_O,), int8 REGION_* codes

    @property
    def all_points(self) -> np.ndarray:
        return np.vstack([self.focus_points, self.outer_points])


@dataclass
class Scene:
    """Immutable bundle of the full simulation geometry.

    ``cache`` is an internal memo dict used by field evaluation for derived
    arrays (propagation matrices, baseline illumination); it never changes
    observable behavior.
    """

    room: Room
    transmitter: Transmitter
    panel: RisPanel
    focus: FocusRegion
    sampling: SamplingSets
    corridor_multiplier: float
    config_hash: bytes
    reference_field: float = 1.0
    # init=False: a dataclasses.replace() derivative starts with a fresh memo
    cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def element_count(self) -> int:
        return self.panel.count

    @property
    def wavenumber(self) -> float:
        return self.transmitter.wavenumber


def _build_walls(side: float, reflectivity_default: float, overrides: Mapping[str, float], ris_wall: str):
    walls = []
    for wall_id in WALL_IDS:
        axis = "xyz".index(wall_id[0])
        is_min = wall_id.endswith("_min")
        offset = 0.0 if is_min else side
        normal = np.zeros(3)
        normal[axis] = 1.0 if is_min else -1.0
        walls.append(
            Wall(
                wall_id=wall_id,
                axis=axis,
                offset=offset,
                normal=_locked(normal),
                reflectivity=float(overrides.get(wall_id, reflectivity_default)),
                ris_mounted=(wall_id == ris_wall),
            )
        )
    return tuple(walls)


def _panel_grid(wall: Wall, side: float, grid_side: int, spacing: float) -> np.ndarray:
    """Element centers on the wall plane: uniform grid_side x grid_side, row-major."""
    extent = (grid_side - 1) * spacing
    if extent >= side:
        raise SceneError([("ris", f"panel extent {extent:.6g} m does not fit the {side:.6g} m face", None)])
    offsets = (np.arange(grid_side) - (grid_side - 1) / 2.0) * spacing + side / 2.0
    in_plane_axes = [a for a in range(3) if a != wall.axis]
    u, v = np.meshgrid(offsets, offsets, indexing="ij")
    centers = np.empty((grid_side * grid_side, 3))
    centers[:, wall.axis] = wall.offset
    centers[:, in_plane_axes[0]] = u.ravel()
    centers[:, in_plane_axes[1]] = v.ravel()
    return centers


def mirror_point(point: np.ndarray, wall: Wall) -> np.ndarray:
    """Reflect a point across a wall plane (exact involution)."""
    out = np.array(point, dtype=float)
    out[wall.axis] = 2.0 * wall.offset - out[wall.axis]
    return out


def mirror_transmitter(scene: Scene, wall: Wall) -> np.ndarray:
    """Image of the transmitter across ``wall``; basis of the secondary paths."""
    return mirror_point(scene.transmitter.position, wall)


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the segment [a, b]."""
    pts = np.atleast_2d(points)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    nearest = a + t[:, None] * ab
    return np.linalg.norm(pts - nearest, axis=1)


def classify_points(
    points: np.ndarray,
    focus: FocusRegion,
    panel_center: np.ndarray,
    corridor_multiplier: float,
) -> np.ndarray:
    """Label points as focus / near-out / far-out.

    Focus: inside any focus sphere.  Near-out: outside all spheres but
    within the beam corridor, a capsule of radius ``corridor_multiplier * r``
    around the segment from the panel center to a focus center.  Far-out:
    everything else.
    """
    pts = np.atleast_2d(points)
    labels = np.full(pts.shape[0], REGION_FAR_OUT, dtype=np.int8)
    corridor = np.full(pts.shape[0], np.inf)
    for c in focus.centers:
        corridor = np.minimum(corridor, segment_distance(pts, panel_center, c))
    labels[corridor <= corridor_multiplier * focus.radius] = REGION_NEAR_OUT
    labels[focus.contains(pts)] = REGION_FOCUS
    return labels


def classify_region(point: np.ndarray, scene: Scene) -> str:
    """Region name for a single point inside the room."""
    label = classify_points(
        np.asarray(point, dtype=float), scene.focus, scene.panel.center, scene.corridor_multiplier
    )[0]
    return REGION_NAMES[label]


def _sample_focus_points(focus: FocusRegion, n_focus: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded rejection sampling, uniform per sphere, even allocation across spheres."""
    n_spheres = focus.count
    base, extra = divmod(n_focus, n_spheres)
    points = []
    for i, center in enumerate(focus.centers):
        need = base + (1 if i < extra else 0)
        got = []
        while len(got) < need:
            draw = rng.uniform(-focus.radius, focus.radius, size=(max(need * 2, 16), 3))
            keep = draw[np.linalg.norm(draw, axis=1) <= focus.radius]
            got.extend(center + keep[: need - len(got)])
        points.extend(got)
    return np.asarray(points)


def _outer_lattice(side: float, focus: FocusRegion, n_outer: int) -> np.ndarray:
    """Smallest cell-centered cubic lattice with >= n_outer points outside the
    focus spheres, truncated to exactly n_outer in row-major index order."""
    q = max(2, int(np.ceil(n_outer ** (1.0 / 3.0))))
    while True:
        ticks = (np.arange(q) + 0.5) * (side / q)
        gx, gy, gz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
        lattice = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        survivors = lattice[~focus.contains(lattice)]
        if survivors.shape[0] >= n_outer:
            return survivors[:n_outer]
        q += 1


def sample_points(
    side_length: float,
    focus: FocusRegion,
    n_focus: int,
    n_outer: int,
    seed: int,
    panel_center: np.ndarray,
    corridor_multiplier: float,
) -> SamplingSets:
    """Generate the deterministic sampling sets and their region labels."""
    if n_focus <= 0 or n_outer <= 0:
        raise SceneError([("sampling", "focus_count and outer_count must be positive", None)])
    if focus.radius < 1e-9:
        raise SceneError([("focus.radius_m", "degenerate focus volume (radius below tolerance)", None)])
    rng = np.random.default_rng(seed)
    focus_points = _sample_focus_points(focus, n_focus, rng)
    outer_points = _outer_lattice(side_length, focus, n_outer)
    labels = np.concatenate(
        [
            np.full(n_focus, REGION_FOCUS, dtype=np.int8),
            classify_points(outer_points, focus, panel_center, corridor_multiplier),
        ]
    )
    return SamplingSets(
        focus_points=_locked(focus_points),
        focus_weights=_locked(np.full(n_focus, 1.0 / n_focus)),
        outer_points=_locked(outer_points),
        outer_weights=_locked(np.full(n_outer, 1.0 / n_outer)),
        region_labels=_locked(labels),
    )


def build_scene(config: Mapping[str, Any]) -> Scene:
    """Validate a resolved configuration and construct the immutable Scene."""
    diags: list = []
    side = float(config["room"]["side_length_m"])
    walls = _build_walls(
        side,
        float(config["room"]["reflectivity_default"]),
        config["room"]["reflectivity"],
        config["ris"]["wall"],
    )
    room = Room(side_length=side, walls=walls)

    tx_cfg = config["transmitter"]
    position = np.asarray(tx_cfg["position_m"], dtype=float)
    if not bool(np.all((position > 0.0) & (position < side))):
        diags.append(("transmitter.position_m", "transmitter must lie strictly inside the room", None))

    frequency = float(tx_cfg["frequency_hz"])
    wavelength = SPEED_OF_LIGHT_M_PER_S / frequency
    spacing = float(config["ris"]["spacing_wavelengths"]) * wavelength
    grid_side = int(config["ris"]["grid_side"])
    if grid_side < 1:
        diags.append(("ris.grid_side", "panel needs at least one element", None))
    if spacing > wavelength / 4.0 + 1e-15:
        warnings.warn(
            f"element spacing {spacing:.6g} m exceeds a quarter wavelength "
            f"({wavelength / 4.0:.6g} m); spatial sampling of the incident field may alias",
            stacklevel=2,
        )

    ris_wall = room.wall(config["ris"]["wall"])
    centers = np.asarray(config["focus"]["centers_m"], dtype=float).reshape(-1, 3)
    radius = float(config["focus"]["radius_m"])
    for i, c in enumerate(centers):
        if np.any(c - radius <= 0.0) or np.any(c + radius >= side):
            diags.append((f"focus.centers_m[{i}]", "focus sphere intersects a wall", None))
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if np.linalg.norm(centers[i] - centers[j]) <= 2.0 * radius:
                diags.append((f"focus.centers_m[{j}]", f"focus sphere overlaps sphere {i}", None))
    if diags:
        raise SceneError(diags)

    try:
        element_centers = _panel_grid(ris_wall, side, grid_side, spacing)
    except SceneError:
        raise
    panel = RisPanel(
        grid_side=grid_side,
        spacing=spacing,
        element_centers=_locked(element_centers),
        wall_id=ris_wall.wall_id,
        cosine_exponent=float(config["ris"]["cosine_exponent"]),
    )

    boresight_cfg = tx_cfg["boresight"]
    if isinstance(boresight_cfg, str):  # "auto": aim at the panel center
        boresight = panel.center - position
    else:
        boresight = np.asarray(boresight_cfg, dtype=float)
    norm = np.linalg.norm(boresight)
    if norm == 0.0:
        raise SceneError([("transmitter.boresight", "boresight vector must be nonzero", None)])
    transmitter = Transmitter(
        position=_locked(position),
        boresight=_locked(boresight / norm),
        pattern_exponent=float(tx_cfg["pattern_exponent"]),
        frequency=frequency,
    )

    focus = FocusRegion(centers=_locked(centers), radius=radius)
    sampling_cfg = config["sampling"]
    corridor_multiplier = float(sampling_cfg["corridor_radius_multiplier"])
    sampling = sample_points(
        side,
        focus,
        int(sampling_cfg["focus_count"]),
        int(sampling_cfg["outer_count"]),
        int(sampling_cfg["seed"]),
        panel.center,
        corridor_multiplier,
    )

    return Scene(
        room=room,
        transmitter=transmitter,
        panel=panel,
        focus=focus,
        sampling=sampling,
        corridor_multiplier=corridor_multiplier,
        config_hash=scene_hash_bytes(config),
        reference_field=float(config["normalization"]["reference_field_v_per_m"]),
    )


def build_profile_scene(profile: str = "desk", **overrides: Any) -> Scene:
    """Convenience constructor used by demos and tests: profile + keyword
    section overrides, e.g. ``build_profile_scene("desk", ris={"grid_side": 12})``."""
    cfg = resolve_config(profile)
    for section, mapping in overrides.items():
        cfg[section].update(mapping)
    return build_scene(cfg)
