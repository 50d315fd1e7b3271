"""Scattered-field model: element illumination, mutual coupling, and the
coherent field at observation points, plus the energy partition metrics.

Model summary
-------------
Each unit cell n at position p_n re-radiates the incident field E_inc,n
scaled by its reflection coefficient Gamma_n = exp(i*phi_n) (unit amplitude).
The incident field decomposes into

* direct illumination: a spherical wave exp(ikr)/r shaped by the transmitter
  pattern |d_hat . u_tx|^m and the element cosine law max(0, cos(theta))^p,
  where theta is the incidence angle at the panel;
* image-source wall reflections: for each reflective non-RIS wall, the
  transmitter mirrored across the wall radiates exp(ikr)/r scaled by the
  wall reflectivity and the cosine factor |d_hat . n_w|^p;
* inter-element mutual coupling: each cell is re-illuminated by its grid
  neighbors.  The coupling propagation factor is the dimensionless
  free-space amplitude gain lambda*exp(ikr)/(4*pi*r), so the strength knob
  alpha in [0, 1] stays a pure ratio and the fixed-point iteration below is
  contractive at quarter-wavelength pitch.

Coupling makes the incident field implicit: E = b + alpha*K(Gamma)*E with b
the direct-plus-secondary illumination.  It is solved by fixed-point
iteration starting from b, with the relative step norm as the residual.

The total field at a point r is the coherent sum over elements of
Gamma_n * E_inc,n * exp(ik|r-p_n|)/|r-p_n|, evaluated in fixed element-index
order (vectorized, deterministic for equal inputs).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sparse

from .errors import CouplingConvergenceError, FieldEnergyError, FieldPointError
from .scene import REGION_FAR_OUT, REGION_FOCUS, REGION_NEAR_OUT, Scene, mirror_point

TWO_PI = 2.0 * np.pi

#: Observation points may not sit closer than this to an element center.
MIN_POINT_DISTANCE = 1e-6
#: The transmitter may not sit closer than this to an element center.
MIN_SOURCE_DISTANCE = 1e-9
#: Largest cached propagation matrix (complex entries) per sampling set.
GREEN_CACHE_MAX_ENTRIES = 30_000_000
#: Streaming evaluation bounds the (points x elements) block to this many
#: entries, keeping broadcast temporaries of order 100 MB at any panel size.
_CHUNK_ENTRIES = 4_000_000


def wrap_phase(phases: np.ndarray | float) -> np.ndarray:
    """Canonical wrap into [0, 2*pi)."""
    wrapped = np.mod(np.asarray(phases, dtype=float), TWO_PI)
    return np.where(wrapped == TWO_PI, 0.0, wrapped)


@dataclass(frozen=True)
class PhaseConfig:
    """The optimization variable: one phase per unit cell, wrapped to [0, 2*pi)."""

    phases: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.phases, dtype=float)
        if arr.ndim != 1:
            raise ValueError("phases must be a 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("phases must be finite")
        arr = wrap_phase(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "phases", arr)

    def __len__(self) -> int:
        return self.phases.shape[0]

    @property
    def gammas(self) -> np.ndarray:
        """Unit-amplitude reflection coefficients exp(i*phi)."""
        return np.exp(1j * self.phases)

    def shifted(self, index: int, delta: float) -> "PhaseConfig":
        phases = self.phases.copy()
        phases[index] += delta
        return PhaseConfig(phases)


@dataclass(frozen=True)
class CouplingSpec:
    """Mutual-coupling model parameters."""

    alpha: float = 0.15
    neighborhood: str = "moore8"  # or "vonneumann4"
    max_iterations: int = 50
    tolerance: float = 1e-10
    single_bounce: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.neighborhood not in ("moore8", "vonneumann4"):
            raise ValueError(f"unknown neighborhood {self.neighborhood!r}")


NO_COUPLING = CouplingSpec(alpha=0.0)


@dataclass(frozen=True)
class IncidentField:
    """Per-element illumination for one phase configuration."""

    direct: np.ndarray                 # (N,) complex
    secondary: dict                    # wall_id -> (N,) complex
    incident: np.ndarray               # (N,) complex, coupled total
    iterations: int
    residual: float
    converged: bool

    @property
    def baseline(self) -> np.ndarray:
        """Direct plus secondary illumination (the coupling-free field)."""
        total = self.direct.copy()
        for contribution in self.secondary.values():
            total = total + contribution
        return total


@dataclass(frozen=True)
class FieldMap:
    points: np.ndarray     # (P, 3)
    values: np.ndarray     # (P,) complex
    reference: float = 1.0  # normalization reference E_n in V/m


@dataclass(frozen=True)
class EnergyReport:
    """Normalized energy fractions plus the mean-field objectives."""

    eta_focus: float
    eta_dir_out: float
    eta_unexp: float
    mean_focus: float
    mean_outer: float
    focal_energy: float

    def as_dict(self) -> dict:
        return {
            "eta_focus": self.eta_focus,
            "eta_dirOut": self.eta_dir_out,
            "eta_unexp": self.eta_unexp,
            "mean_focus": self.mean_focus,
            "mean_outer": self.mean_outer,
        }


def greens(points: np.ndarray, centers: np.ndarray, k: float) -> np.ndarray:
    """Spherical-wave propagation matrix exp(ikr)/r, shape (P, N)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    if np.any(r < MIN_POINT_DISTANCE):
        raise FieldPointError(
            f"observation point within {MIN_POINT_DISTANCE} m of an element center"
        )
    return np.exp(1j * k * r) / r


def _greens_matvec(points: np.ndarray, centers: np.ndarray, k: float, v: np.ndarray) -> np.ndarray:
    """Chunked G @ v for point sets too large to cache."""
    step = max(64, _CHUNK_ENTRIES // max(centers.shape[0], 1))
    out = np.empty(points.shape[0], dtype=complex)
    for start in range(0, points.shape[0], step):
        block = points[start : start + step]
        out[start : start + step] = greens(block, centers, k) @ v
    return out


def direct_field(scene: Scene) -> np.ndarray:
    """Direct spherical-wave illumination of each element (phase-independent)."""
    key = "direct_field"
    if key in scene.cache:
        return scene.cache[key]
    s = scene.transmitter.position
    p = scene.panel.element_centers
    d = p - s
    r = np.linalg.norm(d, axis=1)
    if np.any(r < MIN_SOURCE_DISTANCE):
        raise FieldPointError("transmitter coincides with an element center")
    d_hat = d / r[:, None]
    pattern = np.abs(d_hat @ scene.transmitter.boresight) ** scene.transmitter.pattern_exponent
    normal = scene.room.wall(scene.panel.wall_id).normal
    # Incidence cosine at the element: positive for sources in front of the panel.
    cos_inc = np.maximum(0.0, -(d_hat @ normal))
    values = np.exp(1j * scene.wavenumber * r) / r * pattern * cos_inc ** scene.panel.cosine_exponent
    values.flags.writeable = False
    scene.cache[key] = values
    return values


def secondary_field(scene: Scene) -> dict:
    """Image-source contribution per reflective non-RIS wall (phase-independent)."""
    key = "secondary_field"
    if key in scene.cache:
        return scene.cache[key]
    p = scene.panel.element_centers
    k = scene.wavenumber
    out = {}
    for wall in scene.room.walls:
        if wall.ris_mounted or wall.reflectivity <= 0.0:
            continue
        image = mirror_point(scene.transmitter.position, wall)
        d = p - image
        r = np.linalg.norm(d, axis=1)
        d_hat = d / r[:, None]
        cosine = np.abs(d_hat @ wall.normal) ** scene.panel.cosine_exponent
        values = wall.reflectivity * np.exp(1j * k * r) / r * cosine
        values.flags.writeable = False
        out[wall.wall_id] = values
    scene.cache[key] = out
    return out


def incident_baseline(scene: Scene) -> np.ndarray:
    """Coupling-free illumination b = direct + sum of wall images."""
    key = "incident_baseline"
    if key in scene.cache:
        return scene.cache[key]
    b = direct_field(scene).copy()
    for contribution in secondary_field(scene).values():
        b += contribution
    b.flags.writeable = False
    scene.cache[key] = b
    return b


def _neighbor_offsets(neighborhood: str):
    if neighborhood == "vonneumann4":
        return ((-1, 0), (1, 0), (0, -1), (0, 1))
    return ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def coupling_kernel(scene: Scene, neighborhood: str) -> sparse.csr_matrix:
    """Sparse neighbor propagation matrix K with the dimensionless gain
    lambda*exp(ikr)/(4*pi*r); the coupling operator is alpha * K * diag(Gamma)."""
    key = ("coupling_kernel", neighborhood)
    if key in scene.cache:
        return scene.cache[key]
    side = scene.panel.grid_side
    centers = scene.panel.element_centers
    lam = scene.transmitter.wavelength
    k = scene.wavenumber
    rows, cols = [], []
    for di, dj in _neighbor_offsets(neighborhood):
        i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        ni, nj = i + di, j + dj
        ok = (ni >= 0) & (ni < side) & (nj >= 0) & (nj < side)
        rows.append((i * side + j)[ok].ravel())
        cols.append((ni * side + nj)[ok].ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    dist = np.linalg.norm(centers[rows] - centers[cols], axis=1)
    vals = lam * np.exp(1j * k * dist) / (4.0 * np.pi * dist)
    kernel = sparse.csr_matrix((vals, (rows, cols)), shape=(centers.shape[0],) * 2)
    scene.cache[key] = kernel
    return kernel


def solve_incident(scene: Scene, config: PhaseConfig, coupling: CouplingSpec = NO_COUPLING) -> IncidentField:
    """Solve the implicit coupled illumination E = b + alpha*K*(Gamma*E).

    Fixed-point iteration starting from b; the residual is the relative
    change between successive iterates measured in the 2-norm.  Raises
    :class:`CouplingConvergenceError` (carrying the last iterate) when the
    tolerance is not reached within ``max_iterations``.
    """
    if len(config) != scene.element_count:
        raise ValueError(f"phase vector length {len(config)} != element count {scene.element_count}")
    b = incident_baseline(scene)
    base = IncidentField(
        direct=direct_field(scene),
        secondary=secondary_field(scene),
        incident=b,
        iterations=1,
        residual=0.0,
        converged=True,
    )
    if coupling.alpha == 0.0:
        return base
    kernel = coupling_kernel(scene, coupling.neighborhood)
    gammas = config.gammas
    if coupling.single_bounce:
        once = b + coupling.alpha * (kernel @ (gammas * b))
        return replace(base, incident=once)
    current = b
    for iteration in range(1, coupling.max_iterations + 1):
        nxt = b + coupling.alpha * (kernel @ (gammas * current))
        residual = float(np.linalg.norm(nxt - current) / np.linalg.norm(current))
        current = nxt
        if residual < coupling.tolerance:
            return replace(base, incident=current, iterations=iteration, residual=residual)
    raise CouplingConvergenceError(
        f"coupling fixed point not converged after {coupling.max_iterations} iterations "
        f"(residual {residual:.3e} > tolerance {coupling.tolerance:.3e})",
        last_iterate=replace(
            base, incident=current, iterations=coupling.max_iterations, residual=residual, converged=False
        ),
        residual=residual,
        iterations=coupling.max_iterations,
    )


def coupling_system_matrix(scene: Scene, config: PhaseConfig, coupling: CouplingSpec) -> np.ndarray:
    """Dense coupling operator A = alpha * K * diag(Gamma), for direct solves
    of (I - A) E = b on small panels (test oracle and diagnostics)."""
    kernel = coupling_kernel(scene, coupling.neighborhood).toarray()
    return coupling.alpha * kernel * config.gammas[None, :]


def sampling_green(scene: Scene) -> np.ndarray | None:
    """Cached propagation matrix from elements to all sampling points, or
    None when it would exceed the cache cap (callers then stream in chunks)."""
    key = "sampling_green"
    if key not in scene.cache:
        pts = scene.sampling.all_points
        if pts.shape[0] * scene.element_count > GREEN_CACHE_MAX_ENTRIES:
            scene.cache[key] = None
        else:
            g = greens(pts, scene.panel.element_centers, scene.wavenumber)
            g.flags.writeable = False
            scene.cache[key] = g
    return scene.cache[key]


def total_field(
    scene: Scene,
    config: PhaseConfig,
    incident: IncidentField,
    points: np.ndarray,
) -> FieldMap:
    """Coherent re-radiated field at arbitrary observation points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = config.gammas * incident.incident
    values = _greens_matvec(pts, scene.panel.element_centers, scene.wavenumber, v)
    return FieldMap(points=pts, values=values, reference=scene.reference_field)


def sampling_field(scene: Scene, config: PhaseConfig, incident: IncidentField) -> FieldMap:
    """Total field on the scene's sampling sets (focus then outer points)."""
    v = config.gammas * incident.incident
    g = sampling_green(scene)
    pts = scene.sampling.all_points
    if g is None:
        values = _greens_matvec(pts, scene.panel.element_centers, scene.wavenumber, v)
    else:
        values = g @ v
    return FieldMap(points=pts, values=values, reference=scene.reference_field)


def evaluate_configuration(
    scene: Scene, config: PhaseConfig, coupling: CouplingSpec = NO_COUPLING
) -> tuple[FieldMap, IncidentField]:
    """Convenience: coupled illumination plus field on the sampling sets."""
    incident = solve_incident(scene, config, coupling)
    return sampling_field(scene, config, incident), incident


def energy_report(scene: Scene, fmap: FieldMap) -> EnergyReport:
    """Energy partition and mean-field objectives over the sampling sets.

    The fractions are region-wise sums of |E|^2 normalized by the total over
    all sampling points; they add to one by construction.
    """
    sampling = scene.sampling
    if fmap.values.shape[0] != sampling.region_labels.shape[0] or not np.array_equal(
        fmap.points, sampling.all_points
    ):
        raise ValueError("field map was not evaluated on the scene's sampling points")
    magnitude = np.abs(fmap.values)
    power = magnitude**2
    total = float(power.sum())
    if total <= 0.0:
        raise FieldEnergyError("total scattered energy is zero")
    labels = sampling.region_labels
    n_focus = sampling.focus_points.shape[0]
    focal_energy = float(power[labels == REGION_FOCUS].sum())
    return EnergyReport(
        eta_focus=focal_energy / total,
        eta_dir_out=float(power[labels == REGION_NEAR_OUT].sum()) / total,
        eta_unexp=float(power[labels == REGION_FAR_OUT].sum()) / total,
        mean_focus=float(sampling.focus_weights @ magnitude[:n_focus]),
        mean_outer=float(sampling.outer_weights @ magnitude[n_focus:]),
        focal_energy=focal_energy,
    )


def mean_focus_field(scene: Scene, config: PhaseConfig, incident: IncidentField) -> float:
    """Weighted mean |E| over the focus samples only (stage-loop objective)."""
    v = config.gammas * incident.incident
    g = sampling_green(scene)
    n_focus = scene.sampling.focus_points.shape[0]
    if g is None:
        values = _greens_matvec(
            scene.sampling.focus_points, scene.panel.element_centers, scene.wavenumber, v
        )
    else:
        values = g[:n_focus] @ v
    return float(scene.sampling.focus_weights @ np.abs(values))


def gain_db(before: EnergyReport, after: EnergyReport) -> float:
    """Focal-energy ratio in decibels."""
    if before.focal_energy <= 0.0:
        raise FieldEnergyError("baseline focal energy is zero")
    return 10.0 * np.log10(after.focal_energy / before.focal_energy)


def plane_grid(side_length: float, axis: str, offset: float, resolution: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Cell-centered grid on an axis-aligned plane inside the room.

    Returns the points in row-major order over the two in-plane axes (taken
    in coordinate order) and the (rows, cols) shape.
    """
    axis_index = "xyz".index(axis)
    if not 0.0 <= offset <= side_length:
        raise ValueError(f"plane {axis}={offset} lies outside the room")
    ticks = (np.arange(resolution) + 0.5) * (side_length / resolution)
    in_plane = [a for a in range(3) if a != axis_index]
    u, v = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.empty((resolution * resolution, 3))
    pts[:, axis_index] = offset
    pts[:, in_plane[0]] = u.ravel()
    pts[:, in_plane[1]] = v.ravel()
    return pts, (resolution, resolution)


def export_fieldmap_csv(fmap: FieldMap, path: str | Path) -> None:
    """CSV export: header x,y,z,re,im,abs; meters and V/m (scaled by the
    normalization reference); row order equals point order."""
    scale = 1.0 / fmap.reference
    with Path(path).open("w", encoding="ascii", newline="\n") as handle:
        handle.write("x,y,z,re,im,abs\n")
        for (x, y, z), value in zip(fmap.points, fmap.values):
            re, im = value.real * scale, value.imag * scale
            handle.write(f"{x:.17g},{y:.17g},{z:.17g},{re:.17g},{im:.17g},{abs(value) * scale:.17g}\n")


def export_plane_pgm(magnitudes: np.ndarray, path: str | Path) -> float:
    """8-bit binary PGM of a planar magnitude map, linearly max-normalized.

    Returns the scale factor (the maximum magnitude mapped to gray 255).
    """
    mags = np.asarray(magnitudes, dtype=float)
    peak = float(mags.max())
    gray = np.zeros(mags.shape, dtype=np.uint8)
    if peak > 0.0:
        gray = np.floor(mags / peak * 255.0 + 0.5).astype(np.uint8)
    with Path(path).open("wb") as handle:
        handle.write(f"P5\n{mags.shape[1]} {mags.shape[0]}\n255\n".encode("ascii"))
        handle.write(gray.tobytes())
    return peak
