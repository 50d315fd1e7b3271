import cmath
import math

import numpy as np
import pytest

from ris_match import (
    CouplingConvergenceError,
    build_scene,
    CouplingSpec,
    EnergyReport,
    FieldEnergyError,
    FieldPointError,
    IncidentField,
    PhaseConfig,
    direct_field,
    energy_report,
    evaluate_configuration,
    gain_db,
    secondary_field,
    solve_incident,
    total_field,
    wrap_phase,
)
from ris_match.field import (
    TWO_PI,
    coupling_system_matrix,
    export_fieldmap_csv,
    export_plane_pgm,
    mean_focus_field,
    plane_grid,
    sampling_field,
)
from ris_match.scene import mirror_point

from conftest import make_config, make_scene, random_phase_vector, random_points_inside


# --- independent scalar oracles -------------------------------------------

def direct_oracle(scene, n):
    """Straight-line evaluation of the direct illumination for one element."""
    s = scene.transmitter.position
    p = scene.panel.element_centers[n]
    d = p - s
    r = math.sqrt(d @ d)
    d_hat = d / r
    pattern = abs(float(d_hat @ scene.transmitter.boresight)) ** scene.transmitter.pattern_exponent
    normal = scene.room.wall(scene.panel.wall_id).normal
    cos_inc = max(0.0, float(-(d_hat @ normal)))
    k = scene.wavenumber
    return cmath.exp(1j * k * r) / r * pattern * cos_inc ** scene.panel.cosine_exponent


def secondary_oracle(scene, wall, n):
    image = mirror_point(scene.transmitter.position, wall)
    p = scene.panel.element_centers[n]
    d = p - image
    r = math.sqrt(d @ d)
    d_hat = d / r
    cosine = abs(float(d_hat @ wall.normal)) ** scene.panel.cosine_exponent
    return wall.reflectivity * cmath.exp(1j * scene.wavenumber * r) / r * cosine


def total_field_oracle(scene, config, incident, points):
    """Naive double loop over points and elements in index order."""
    k = scene.wavenumber
    gammas = config.gammas
    values = []
    for point in points:
        acc = 0.0 + 0.0j
        for n in range(scene.element_count):
            r = math.dist(point, scene.panel.element_centers[n])
            acc += gammas[n] * incident.incident[n] * cmath.exp(1j * k * r) / r
        values.append(acc)
    return np.array(values)


# --- direct and secondary illumination -------------------------------------

def test_direct_bare_spherical_wave():
    cfg = make_config(
        grid_side=1,
        transmitter={"position_m": [1.0, 0.75, 0.75], "pattern_exponent": 0.0},
        ris={"grid_side": 1, "cosine_exponent": 0.0},
    )
    scene = build_scene(cfg)
    values = direct_field(scene)
    assert values.shape == (1,)
    assert abs(abs(values[0]) - 1.0) < 1e-12  # r = 1 m exactly


def test_direct_grazing_source_suppressed():
    # cosine clamp boundary: a source almost in the panel plane illuminates ~0
    cfg = make_config(transmitter={"position_m": [1e-6, 0.75, 0.3]})
    scene = build_scene(cfg)
    assert np.max(np.abs(direct_field(scene))) < 1e-4


def test_direct_clamps_source_behind_panel(mini_scene):
    # white box: a source behind the panel plane sees the clamp exactly
    import dataclasses

    from ris_match.scene import Transmitter

    behind = Transmitter(
        position=np.array([-0.5, 0.75, 0.75]),
        boresight=np.array([1.0, 0.0, 0.0]),
        pattern_exponent=mini_scene.transmitter.pattern_exponent,
        frequency=mini_scene.transmitter.frequency,
    )
    shadowed = dataclasses.replace(mini_scene, transmitter=behind)
    assert shadowed.cache == {}  # fresh memo, not shared with mini_scene
    assert np.all(direct_field(shadowed) == 0.0)


def test_direct_matches_scalar_oracle(mini_scene):
    values = direct_field(mini_scene)
    oracle = np.array([direct_oracle(mini_scene, n) for n in range(mini_scene.element_count)])
    assert np.max(np.abs(values - oracle)) / np.max(np.abs(oracle)) < 1e-13


def test_secondary_zero_reflectivity():
    scene = make_scene(room={"reflectivity_default": 0.0})
    assert secondary_field(scene) == {}
    inc = solve_incident(scene, PhaseConfig(np.zeros(scene.element_count)))
    assert np.array_equal(inc.incident, direct_field(scene))


def test_secondary_single_wall_unity_cosine():
    cfg = make_config(
        room={"reflectivity_default": 0.0, "reflectivity": {"y_min": 0.6}},
        ris={"cosine_exponent": 0.0},
    )
    scene = build_scene(cfg)
    fields = secondary_field(scene)
    assert set(fields) == {"y_min"}
    image = mirror_point(scene.transmitter.position, scene.room.wall("y_min"))
    r = np.linalg.norm(scene.panel.element_centers - image, axis=1)
    assert np.max(np.abs(np.abs(fields["y_min"]) - 0.6 / r)) < 1e-12


def test_secondary_matches_scalar_oracle(mini_scene):
    fields = secondary_field(mini_scene)
    assert set(fields) == {"x_max", "y_min", "y_max", "z_min", "z_max"}
    for wall_id, values in fields.items():
        wall = mini_scene.room.wall(wall_id)
        oracle = np.array(
            [secondary_oracle(mini_scene, wall, n) for n in range(mini_scene.element_count)]
        )
        assert np.max(np.abs(values - oracle)) / np.max(np.abs(oracle)) < 1e-13


# --- coupling solve ---------------------------------------------------------

def test_coupling_off_returns_baseline(mini_scene, no_coupling):
    cfg = PhaseConfig(np.linspace(0, 5, mini_scene.element_count))
    inc = solve_incident(mini_scene, cfg, no_coupling)
    assert inc.iterations == 1
    assert inc.residual == 0.0
    assert np.array_equal(inc.incident, inc.baseline)


def test_coupling_single_element_has_no_neighbors():
    scene = make_scene(grid_side=1)
    cfg = PhaseConfig(np.array([1.0]))
    inc = solve_incident(scene, cfg, CouplingSpec(alpha=0.5))
    assert np.allclose(inc.incident, inc.baseline, rtol=0, atol=0)


@pytest.mark.parametrize("alpha", [0.05, 0.15, 0.3])
def test_coupling_fixed_point_matches_dense_solve(mini_scene, alpha):
    rng = np.random.default_rng(7)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    coupling = CouplingSpec(alpha=alpha, max_iterations=100, tolerance=1e-13)
    inc = solve_incident(mini_scene, cfg, coupling)
    a = coupling_system_matrix(mini_scene, cfg, coupling)
    dense = np.linalg.solve(np.eye(mini_scene.element_count) - a, inc.baseline)
    rel = np.linalg.norm(inc.incident - dense) / np.linalg.norm(dense)
    assert rel < 1e-8


def test_coupling_converges_quickly_at_default_strength(mini_scene):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    inc = solve_incident(mini_scene, cfg, CouplingSpec(alpha=0.15, tolerance=1e-10))
    assert inc.converged
    assert inc.iterations <= 25
    assert inc.residual < 1e-10


def test_coupling_solution_self_consistent(mini_scene, coupling):
    from ris_match.field import coupling_kernel

    rng = np.random.default_rng(3)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, coupling)
    kernel = coupling_kernel(mini_scene, coupling.neighborhood)
    resub = inc.baseline + coupling.alpha * (kernel @ (cfg.gammas * inc.incident))
    rel = np.linalg.norm(resub - inc.incident) / np.linalg.norm(inc.incident)
    assert rel < 10 * coupling.tolerance


def test_coupling_nonconvergence_is_recoverable(mini_scene):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    with pytest.raises(CouplingConvergenceError) as err:
        solve_incident(mini_scene, cfg, CouplingSpec(alpha=1.0, max_iterations=30))
    assert err.value.last_iterate is not None
    assert not err.value.last_iterate.converged
    assert err.value.iterations == 30


def test_coupling_single_bounce_variant(mini_scene):
    from ris_match.field import coupling_kernel

    cfg = PhaseConfig(np.linspace(0, 3, mini_scene.element_count))
    spec = CouplingSpec(alpha=0.15, single_bounce=True)
    inc = solve_incident(mini_scene, cfg, spec)
    kernel = coupling_kernel(mini_scene, spec.neighborhood)
    expected = inc.baseline + 0.15 * (kernel @ (cfg.gammas * inc.baseline))
    assert np.allclose(inc.incident, expected, rtol=0, atol=1e-15)


def test_vonneumann_neighborhood_smaller_coupling(mini_scene):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    moore = solve_incident(mini_scene, cfg, CouplingSpec(alpha=0.15)).incident
    von = solve_incident(mini_scene, cfg, CouplingSpec(alpha=0.15, neighborhood="vonneumann4")).incident
    baseline = solve_incident(mini_scene, cfg).incident
    assert np.linalg.norm(moore - baseline) > np.linalg.norm(von - baseline) > 0


# --- total field ------------------------------------------------------------

def test_total_field_single_term():
    scene = make_scene(grid_side=1)
    cfg = PhaseConfig(np.array([0.0]))
    element = scene.panel.element_centers[0]
    inc = IncidentField(
        direct=np.array([1.0 + 0.0j]), secondary={}, incident=np.array([1.0 + 0.0j]),
        iterations=1, residual=0.0, converged=True,
    )
    point = element + np.array([1.3, 0.5, 0.2]) / np.linalg.norm([1.3, 0.5, 0.2]) * 2.0
    fmap = total_field(scene, cfg, inc, point[None, :])
    expected = cmath.exp(2j * scene.wavenumber) / 2.0
    assert abs(fmap.values[0] - expected) < 1e-12


def test_total_field_global_phase_invariance(mini_scene, no_coupling):
    rng = np.random.default_rng(11)
    phases = random_phase_vector(mini_scene, rng)
    points = random_points_inside(mini_scene, 50, seed=12)
    shift = 1.234
    base_inc = solve_incident(mini_scene, PhaseConfig(phases), no_coupling)
    shifted_inc = solve_incident(mini_scene, PhaseConfig(phases + shift), no_coupling)
    base = total_field(mini_scene, PhaseConfig(phases), base_inc, points)
    shifted = total_field(mini_scene, PhaseConfig(phases + shift), shifted_inc, points)
    assert np.max(np.abs(shifted.values - base.values * np.exp(1j * shift))) / np.max(
        np.abs(base.values)
    ) < 1e-12
    assert np.max(np.abs(np.abs(shifted.values) - np.abs(base.values))) / np.max(
        np.abs(base.values)
    ) < 1e-12


def test_total_field_matches_double_loop(mini_scene, coupling):
    rng = np.random.default_rng(21)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, coupling)
    points = random_points_inside(mini_scene, 100, seed=22)
    fmap = total_field(mini_scene, cfg, inc, points)
    oracle = total_field_oracle(mini_scene, cfg, inc, points)
    assert np.max(np.abs(fmap.values - oracle)) / np.max(np.abs(oracle)) < 1e-12


def test_total_field_rejects_point_on_element(mini_scene, no_coupling):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    inc = solve_incident(mini_scene, cfg, no_coupling)
    with pytest.raises(FieldPointError):
        total_field(mini_scene, cfg, inc, mini_scene.panel.element_centers[3][None, :])


def test_linearity_in_single_reflection_coefficient(mini_scene, no_coupling):
    rng = np.random.default_rng(31)
    phases = random_phase_vector(mini_scene, rng)
    n, delta = 17, 0.8
    points = random_points_inside(mini_scene, 20, seed=32)
    inc = solve_incident(mini_scene, PhaseConfig(phases), no_coupling)
    base = total_field(mini_scene, PhaseConfig(phases), inc, points)
    bumped_phases = phases.copy()
    bumped_phases[n] += delta
    bumped = total_field(mini_scene, PhaseConfig(bumped_phases), inc, points)
    r = np.linalg.norm(points - mini_scene.panel.element_centers[n], axis=1)
    green = np.exp(1j * mini_scene.wavenumber * r) / r
    gamma_n = np.exp(1j * phases[n])
    predicted = base.values + (np.exp(1j * delta) - 1.0) * gamma_n * inc.incident[n] * green
    assert np.max(np.abs(bumped.values - predicted)) / np.max(np.abs(base.values)) < 1e-12


# --- energy partition -------------------------------------------------------

def test_energy_uniform_field_fractions(mini_scene):
    from ris_match.field import FieldMap
    from ris_match.scene import REGION_FOCUS, REGION_NEAR_OUT, REGION_FAR_OUT

    pts = mini_scene.sampling.all_points
    fmap = FieldMap(points=pts, values=np.ones(pts.shape[0], dtype=complex))
    rep = energy_report(mini_scene, fmap)
    labels = mini_scene.sampling.region_labels
    total = labels.shape[0]
    assert rep.eta_focus == pytest.approx(np.sum(labels == REGION_FOCUS) / total, abs=1e-12)
    assert rep.eta_dir_out == pytest.approx(np.sum(labels == REGION_NEAR_OUT) / total, abs=1e-12)
    assert rep.eta_unexp == pytest.approx(np.sum(labels == REGION_FAR_OUT) / total, abs=1e-12)
    assert rep.mean_focus == pytest.approx(1.0, abs=1e-12)
    assert rep.mean_outer == pytest.approx(1.0, abs=1e-12)


def test_energy_fractions_sum_to_one(mini_scene, coupling):
    rng = np.random.default_rng(41)
    for _ in range(20):
        cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
        fmap, _ = evaluate_configuration(mini_scene, cfg, coupling)
        rep = energy_report(mini_scene, fmap)
        assert abs(rep.eta_focus + rep.eta_dir_out + rep.eta_unexp - 1.0) < 1e-9


def test_energy_zero_field_rejected(mini_scene):
    from ris_match.field import FieldMap

    pts = mini_scene.sampling.all_points
    with pytest.raises(FieldEnergyError):
        energy_report(mini_scene, FieldMap(points=pts, values=np.zeros(pts.shape[0], complex)))


def test_energy_requires_sampling_points(mini_scene):
    from ris_match.field import FieldMap

    with pytest.raises(ValueError):
        energy_report(mini_scene, FieldMap(points=np.zeros((5, 3)), values=np.ones(5, complex)))


def test_mean_focus_field_matches_report(mini_scene, coupling):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    fmap, inc = evaluate_configuration(mini_scene, cfg, coupling)
    rep = energy_report(mini_scene, fmap)
    assert mean_focus_field(mini_scene, cfg, inc) == pytest.approx(rep.mean_focus, rel=1e-12)


def test_gain_db_identity_and_log_law():
    before = EnergyReport(0.5, 0.3, 0.2, 1.0, 1.0, 2.0)
    assert gain_db(before, before) == pytest.approx(0.0, abs=1e-12)
    after = EnergyReport(0.5, 0.3, 0.2, 1.0, 1.0, 200.0)
    assert gain_db(before, after) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(FieldEnergyError):
        gain_db(EnergyReport(0, 0, 0, 0, 0, 0.0), after)


def test_global_phase_invariance_of_energy_report(mini_scene, no_coupling):
    rng = np.random.default_rng(51)
    phases = random_phase_vector(mini_scene, rng)
    rep_a = energy_report(
        mini_scene, sampling_field(mini_scene, PhaseConfig(phases),
                                   solve_incident(mini_scene, PhaseConfig(phases), no_coupling))
    )
    shifted = PhaseConfig(phases + 0.7)
    rep_b = energy_report(
        mini_scene, sampling_field(mini_scene, shifted, solve_incident(mini_scene, shifted, no_coupling))
    )
    assert rep_b.eta_focus == pytest.approx(rep_a.eta_focus, rel=1e-12)
    assert rep_b.mean_focus == pytest.approx(rep_a.mean_focus, rel=1e-12)
    assert rep_b.mean_outer == pytest.approx(rep_a.mean_outer, rel=1e-12)


# --- helpers and exports ----------------------------------------------------

def test_wrap_phase_canonical_range():
    rng = np.random.default_rng(61)
    values = rng.uniform(-50, 50, 1000)
    wrapped = wrap_phase(values)
    assert np.all((wrapped >= 0.0) & (wrapped < TWO_PI))
    assert wrap_phase(TWO_PI) == 0.0
    assert np.allclose(np.exp(1j * wrapped), np.exp(1j * values), atol=1e-9)


def test_phase_config_validation():
    with pytest.raises(ValueError):
        PhaseConfig(np.array([np.nan, 1.0]))
    with pytest.raises(ValueError):
        PhaseConfig(np.zeros((2, 2)))
    cfg = PhaseConfig(np.array([-0.5, 7.0]))
    assert np.all((cfg.phases >= 0) & (cfg.phases < TWO_PI))
    assert len(cfg) == 2


def test_csv_export_format(tmp_path, mini_scene, no_coupling):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    inc = solve_incident(mini_scene, cfg, no_coupling)
    points = random_points_inside(mini_scene, 7, seed=71)
    fmap = total_field(mini_scene, cfg, inc, points)
    path = tmp_path / "map.csv"
    export_fieldmap_csv(fmap, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,re,im,abs"
    assert len(lines) == 8
    x, y, z, re, im, mag = (float(v) for v in lines[1].split(","))
    assert (x, y, z) == tuple(points[0])
    assert mag == pytest.approx(abs(complex(re, im)), rel=1e-12)


def test_pgm_export(tmp_path):
    mags = np.array([[0.0, 1.0], [2.0, 4.0]])
    path = tmp_path / "map.pgm"
    scale = export_plane_pgm(mags, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert list(raw[-4:]) == [0, 64, 128, 255]
    assert scale == 4.0


def test_sampling_field_chunked_path_matches_cached(coupling, monkeypatch):
    """Scenes too large to cache the propagation matrix stream in chunks;
    both paths must agree to machine precision."""
    import ris_match.field as field_mod

    scene_cached = make_scene(grid_side=6, n_focus=50, n_outer=70)
    scene_streamed = make_scene(grid_side=6, n_focus=50, n_outer=70)
    rng = np.random.default_rng(81)
    phases = random_phase_vector(scene_cached, rng)
    cached_map, _ = evaluate_configuration(scene_cached, PhaseConfig(phases), coupling)
    monkeypatch.setattr(field_mod, "GREEN_CACHE_MAX_ENTRIES", 10)
    streamed_map, _ = evaluate_configuration(scene_streamed, PhaseConfig(phases), coupling)
    assert scene_streamed.cache["sampling_green"] is None
    assert np.max(np.abs(cached_map.values - streamed_map.values)) / np.max(
        np.abs(cached_map.values)
    ) < 1e-13


def test_plane_grid_shape_and_bounds():
    pts, shape = plane_grid(1.5, "z", 0.75, 20)
    assert shape == (20, 20)
    assert pts.shape == (400, 3)
    assert np.all(pts[:, 2] == 0.75)
    assert pts[:, 0].min() > 0 and pts[:, 0].max() < 1.5
    with pytest.raises(ValueError):
        plane_grid(1.5, "z", 2.0, 20)
