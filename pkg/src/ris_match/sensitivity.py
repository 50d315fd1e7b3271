"""Analytic phase sensitivities of the focusing objective.

The field at a point responds to a single element's phase through
d E(r) / d phi_n = i * Gamma_n * E_inc,n * G(r, p_n), with G the
spherical-wave factor exp(ikr)/r.  The incident field is treated as
constant with respect to the phases, so with coupling enabled the analytic
gradient is an approximation whose gap grows with the coupling strength;
the finite-difference oracle here re-solves the full model and quantifies
that gap.

The magnitude responds as d|E|/d phi_n = Re{ conj(E)/|E| * dE/dphi_n }
(zero by convention at the nonsmooth origin |E| = 0; such points are
flagged and excluded from aggregates).  Aggregating over the weighted focus
samples gives the objective gradient C, the per-element influence diagonal
diag(H), and optionally the dense correlation matrix H as a Gram sum of the
per-point sensitivity rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MemoryGuardError
from .field import (
    MIN_POINT_DISTANCE,
    CouplingSpec,
    IncidentField,
    PhaseConfig,
    greens,
    sampling_green,
    solve_incident,
)
from .scene import Scene

#: |E| at or below this counts as the nonsmooth origin: derivative 0, flagged.
ZERO_FIELD_FLOOR = 1e-15

#: Default cap on N for materializing the dense correlation matrix.
DENSE_H_CAP = 4096

_MAGIC = b"RISH"
_VERSION = 1
_FLAG_DENSE = 1


@dataclass(frozen=True)
class SensitivityReport:
    """Gradient and influence data at one phase configuration."""

    per_element: np.ndarray        # (N,) objective gradient C
    diag_h: np.ndarray             # (N,) influence diagonal of H
    dense_h: np.ndarray | None     # (N, N) Gram matrix, None above the cap
    frozen_mask: np.ndarray        # (N,) bool, elements excluded from search
    flagged_points: int            # focus samples skipped for |E| ~ 0
    n_focus: int

    @property
    def element_count(self) -> int:
        return self.per_element.shape[0]


def field_phase_derivative(
    scene: Scene, config: PhaseConfig, incident: IncidentField, point: np.ndarray, n: int
) -> complex:
    """d E(point) / d phi_n with the incident field held fixed."""
    p = scene.panel.element_centers[n]
    r = float(np.linalg.norm(np.asarray(point, dtype=float) - p))
    if r < MIN_POINT_DISTANCE:
        raise ValueError("observation point coincides with the element center")
    g = np.exp(1j * scene.wavenumber * r) / r
    return 1j * config.gammas[n] * incident.incident[n] * g


def magnitude_derivative(field_value: complex, field_derivative: complex) -> float:
    """d|E|/dphi from the complex field and its derivative; 0 at |E| ~ 0."""
    magnitude = abs(field_value)
    if magnitude <= ZERO_FIELD_FLOOR:
        return 0.0
    return float(np.real(np.conjugate(field_value) / magnitude * field_derivative))


def _chunk_size(n_elements: int) -> int:
    return max(64, min(2048, 4_000_000 // max(n_elements, 1)))


def _focus_green_rows(scene: Scene, start: int, stop: int) -> np.ndarray:
    cached = sampling_green(scene)
    if cached is not None:
        return cached[start:stop]
    return greens(
        scene.sampling.focus_points[start:stop], scene.panel.element_centers, scene.wavenumber
    )


def _sensitivity_pass(
    scene: Scene,
    config: PhaseConfig,
    incident: IncidentField,
    want_dense: bool,
):
    """One streamed pass over the focus samples.

    Accumulates the weighted gradient C by direct per-point aggregation, the
    influence diagonal, and optionally the dense Gram matrix, folding chunks
    in fixed point order.
    """
    v = config.gammas * incident.incident
    n = v.shape[0]
    weights = scene.sampling.focus_weights
    n_focus = weights.shape[0]
    grad = np.zeros(n)
    diag = np.zeros(n)
    dense = np.zeros((n, n)) if want_dense else None
    flagged = 0
    step = _chunk_size(n)
    for start in range(0, n_focus, step):
        stop = min(start + step, n_focus)
        w_block = _focus_green_rows(scene, start, stop)
        field = w_block @ v
        magnitude = np.abs(field)
        ok = magnitude > ZERO_FIELD_FLOOR
        flagged += int((~ok).sum())
        ratio = np.zeros(field.shape[0], dtype=complex)
        ratio[ok] = np.conjugate(field[ok]) / magnitude[ok]
        rows = np.real(1j * ratio[:, None] * w_block * v[None, :])
        grad += weights[start:stop] @ rows
        diag += np.einsum("jn,jn->n", rows, rows)
        if dense is not None:
            dense += rows.T @ rows
    return grad, diag, dense, flagged


def mean_field_gradient(
    scene: Scene,
    config: PhaseConfig,
    incident: IncidentField,
    points: np.ndarray,
    weights: np.ndarray,
    green_rows: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Gradient of the weighted mean |E| over an arbitrary point set.

    Factorized form: C = Re{ i * v * (W^T (w conj(E)/|E|)) }, one matvec pair
    per chunk, no per-point row matrix.  Returns (gradient, flagged count).
    """
    v = config.gammas * incident.incident
    n = v.shape[0]
    accum = np.zeros(n, dtype=complex)
    flagged = 0
    step = _chunk_size(n)
    pts = np.atleast_2d(points)
    for start in range(0, pts.shape[0], step):
        stop = min(start + step, pts.shape[0])
        if green_rows is not None:
            w_block = green_rows[start:stop]
        else:
            w_block = greens(pts[start:stop], scene.panel.element_centers, scene.wavenumber)
        field = w_block @ v
        magnitude = np.abs(field)
        ok = magnitude > ZERO_FIELD_FLOOR
        flagged += int((~ok).sum())
        u = np.zeros(field.shape[0], dtype=complex)
        u[ok] = weights[start:stop][ok] * np.conjugate(field[ok]) / magnitude[ok]
        accum += u @ w_block
    return np.real(1j * v * accum), flagged


def objective_gradient(
    scene: Scene, config: PhaseConfig, incident: IncidentField
) -> tuple[np.ndarray, int]:
    """Gradient of the mean focus field; near-zero samples are excluded and
    their count reported."""
    cached = sampling_green(scene)
    n_focus = scene.sampling.focus_points.shape[0]
    return mean_field_gradient(
        scene,
        config,
        incident,
        scene.sampling.focus_points,
        scene.sampling.focus_weights,
        green_rows=None if cached is None else cached[:n_focus],
    )


def correlation_matrix(
    scene: Scene,
    config: PhaseConfig,
    incident: IncidentField,
    mode: str = "auto",
    dense_cap: int = DENSE_H_CAP,
) -> np.ndarray:
    """Gram matrix of per-point sensitivity rows over the focus samples.

    ``mode="dense"`` returns the (N, N) matrix and refuses N above the cap;
    ``mode="diag"`` returns only its diagonal; ``mode="auto"`` picks dense
    when it fits.  The diagonal is all the freezing rule consumes.
    """
    n = scene.element_count
    if mode not in ("auto", "dense", "diag"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "dense" and n > dense_cap:
        raise MemoryGuardError(f"dense correlation matrix refused for N={n} > cap {dense_cap}")
    want_dense = mode == "dense" or (mode == "auto" and n <= dense_cap)
    _, diag, dense, _ = _sensitivity_pass(scene, config, incident, want_dense)
    return dense if want_dense else diag


def sensitivity_report(
    scene: Scene,
    config: PhaseConfig,
    incident: IncidentField,
    dense_cap: int = DENSE_H_CAP,
) -> SensitivityReport:
    """Full sensitivity snapshot at one configuration (dense H when it fits)."""
    n = scene.element_count
    want_dense = n <= dense_cap
    grad, diag, dense, flagged = _sensitivity_pass(scene, config, incident, want_dense)
    return SensitivityReport(
        per_element=grad,
        diag_h=diag,
        dense_h=dense,
        frozen_mask=np.zeros(n, dtype=bool),
        flagged_points=flagged,
        n_focus=scene.sampling.focus_points.shape[0],
    )


def rank_influence(h_diag: np.ndarray, active_mask: np.ndarray) -> np.ndarray:
    """Active element indices sorted by ascending influence, ties by index."""
    diag = np.asarray(h_diag, dtype=float)
    mask = np.asarray(active_mask, dtype=bool)
    if diag.shape != mask.shape:
        raise ValueError("influence diagonal and active mask must have equal length")
    idx = np.flatnonzero(mask)
    return idx[np.lexsort((idx, diag[idx]))]


def finite_difference_gradient(
    scene: Scene,
    config: PhaseConfig,
    coupling: CouplingSpec,
    delta: float = 1e-5,
    points: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Central finite differences of the weighted mean |E| under the full
    model (the incident field is re-solved for every perturbation).

    Independent check of the analytic gradient; with coupling enabled the
    difference between the two measures the held-fixed-illumination
    approximation.
    """
    if points is None:
        points = scene.sampling.focus_points
        weights = scene.sampling.focus_weights
    pts = np.atleast_2d(points)
    green = greens(pts, scene.panel.element_centers, scene.wavenumber)

    def mean_field(cfg: PhaseConfig) -> float:
        inc = solve_incident(scene, cfg, coupling)
        return float(weights @ np.abs(green @ (cfg.gammas * inc.incident)))

    grad = np.empty(len(config))
    for n in range(len(config)):
        up = mean_field(config.shifted(n, +delta))
        down = mean_field(config.shifted(n, -delta))
        grad[n] = (up - down) / (2.0 * delta)
    return grad


def save_report(report: SensitivityReport, path: str | Path) -> None:
    """Binary export: RISH magic, version, N, N_F, dense-presence flags, then
    little-endian float64 arrays C and diag(H), plus the dense H block when
    present."""
    flags = _FLAG_DENSE if report.dense_h is not None else 0
    with Path(path).open("wb") as handle:
        handle.write(struct.pack("<4sHIIH", _MAGIC, _VERSION, report.element_count, report.n_focus, flags))
        handle.write(report.per_element.astype("<f8").tobytes())
        handle.write(report.diag_h.astype("<f8").tobytes())
        if report.dense_h is not None:
            handle.write(report.dense_h.astype("<f8").tobytes())


def load_report(path: str | Path) -> SensitivityReport:
    """Read a RISH file back; the frozen mask and flag counts are not part of
    the format and come back empty."""
    raw = Path(path).read_bytes()
    header = struct.calcsize("<4sHIIH")
    magic, version, n, n_focus, flags = struct.unpack_from("<4sHIIH", raw)
    if magic != _MAGIC:
        raise ValueError("not a sensitivity report file")
    if version != _VERSION:
        raise ValueError(f"unsupported sensitivity report version {version}")
    offset = header
    per_element = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
    offset += 8 * n
    diag = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
    offset += 8 * n
    dense = None
    if flags & _FLAG_DENSE:
        dense = np.frombuffer(raw, dtype="<f8", count=n * n, offset=offset).reshape(n, n).copy()
    return SensitivityReport(
        per_element=per_element,
        diag_h=diag,
        dense_h=dense,
        frozen_mask=np.zeros(n, dtype=bool),
        flagged_points=0,
        n_focus=n_focus,
    )
