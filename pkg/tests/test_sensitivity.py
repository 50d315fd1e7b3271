import cmath

import numpy as np
import pytest

from ris_match import (
    CouplingSpec,
    IncidentField,
    MemoryGuardError,
    PhaseConfig,
    correlation_matrix,
    field_phase_derivative,
    finite_difference_gradient,
    magnitude_derivative,
    objective_gradient,
    rank_influence,
    sensitivity_report,
    solve_incident,
    total_field,
)
from ris_match.sensitivity import load_report, mean_field_gradient, save_report, _sensitivity_pass

from conftest import make_scene, random_phase_vector, random_points_inside


def _unit_incident(scene):
    n = scene.element_count
    ones = np.ones(n, dtype=complex)
    return IncidentField(direct=ones, secondary={}, incident=ones,
                         iterations=1, residual=0.0, converged=True)


def test_derivative_unit_factors():
    scene = make_scene(grid_side=1)
    cfg = PhaseConfig(np.array([0.0]))
    inc = _unit_incident(scene)
    direction = np.array([1.0, 0.2, -0.1])
    point = scene.panel.element_centers[0] + direction / np.linalg.norm(direction)
    value = field_phase_derivative(scene, cfg, inc, point, 0)
    assert abs(value - 1j * cmath.exp(1j * scene.wavenumber)) < 1e-12


def test_derivative_matches_fd_without_coupling(mini_scene, no_coupling):
    rng = np.random.default_rng(5)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, no_coupling)
    delta = 1e-6
    for n, point in [(0, [0.9, 0.8, 0.7]), (77, [0.4, 1.1, 0.3]), (143, [1.2, 0.2, 0.9])]:
        point = np.asarray(point)
        analytic = field_phase_derivative(mini_scene, cfg, inc, point, n)
        up = total_field(mini_scene, cfg.shifted(n, +delta), inc, point[None, :]).values[0]
        down = total_field(mini_scene, cfg.shifted(n, -delta), inc, point[None, :]).values[0]
        fd = (up - down) / (2 * delta)
        assert abs(analytic - fd) / abs(fd) < 1e-6


def test_derivative_coupling_gap_scales_with_alpha(mini_scene):
    """The held-fixed-illumination approximation: its finite-difference gap
    grows about linearly with the coupling strength."""
    rng = np.random.default_rng(6)
    pairs = [(int(rng.integers(mini_scene.element_count)), random_points_inside(mini_scene, 1, seed=i)[0])
             for i in range(50)]
    gaps = {}
    for alpha in (0.075, 0.15):
        coupling = CouplingSpec(alpha=alpha)
        worst = 0.0
        scale = 0.0
        for n, point in pairs:
            cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
            inc = solve_incident(mini_scene, cfg, coupling)
            analytic = field_phase_derivative(mini_scene, cfg, inc, point, n)
            delta = 1e-6
            up_cfg, down_cfg = cfg.shifted(n, +delta), cfg.shifted(n, -delta)
            up = total_field(mini_scene, up_cfg, solve_incident(mini_scene, up_cfg, coupling),
                             point[None, :]).values[0]
            down = total_field(mini_scene, down_cfg, solve_incident(mini_scene, down_cfg, coupling),
                               point[None, :]).values[0]
            fd = (up - down) / (2 * delta)
            worst = max(worst, abs(analytic - fd))
            scale = max(scale, abs(fd))
        gaps[alpha] = worst / scale
    print(f"coupling-feedback gap: alpha=0.075 -> {gaps[0.075]:.3e}, alpha=0.15 -> {gaps[0.15]:.3e}")
    assert gaps[0.15] <= 4.0 * gaps[0.075] + 1e-12
    assert gaps[0.15] < 0.2


def test_magnitude_derivative_basics():
    assert magnitude_derivative(1.0 + 0.0j, 1j) == pytest.approx(0.0, abs=1e-15)
    assert magnitude_derivative(1.0 + 0.0j, 1.0 + 0.0j) == pytest.approx(1.0)
    assert magnitude_derivative(0.0j, 123.0 + 0.0j) == 0.0


def test_magnitude_derivative_matches_scalar_fd():
    rng = np.random.default_rng(8)
    for _ in range(50):
        e = complex(rng.normal(), rng.normal())
        de = complex(rng.normal(), rng.normal())
        eps = 1e-8
        fd = (abs(e + eps * de) - abs(e - eps * de)) / (2 * eps)
        assert abs(magnitude_derivative(e, de) - fd) < 1e-6 * max(abs(fd), 1.0)


def test_objective_gradient_single_element_single_point(no_coupling):
    scene = make_scene(grid_side=1, n_focus=1, n_outer=20)
    cfg = PhaseConfig(np.array([0.4]))
    inc = solve_incident(scene, cfg, no_coupling)
    grad, flagged = objective_gradient(scene, cfg, inc)
    point = scene.sampling.focus_points[0]
    field = total_field(scene, cfg, inc, point[None, :]).values[0]
    expected = magnitude_derivative(field, field_phase_derivative(scene, cfg, inc, point, 0))
    assert grad.shape == (1,)
    assert flagged == 0
    assert grad[0] == pytest.approx(expected, rel=1e-12)


def test_gradient_argmax_invariant_under_global_shift(mini_scene, no_coupling):
    rng = np.random.default_rng(9)
    phases = random_phase_vector(mini_scene, rng)
    a = PhaseConfig(phases)
    b = PhaseConfig(phases + 1.1)
    grad_a, _ = objective_gradient(mini_scene, a, solve_incident(mini_scene, a, no_coupling))
    grad_b, _ = objective_gradient(mini_scene, b, solve_incident(mini_scene, b, no_coupling))
    assert int(np.argmax(grad_a)) == int(np.argmax(grad_b))


def test_gradient_matches_finite_differences(mini_scene, no_coupling):
    rng = np.random.default_rng(10)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, no_coupling)
    analytic, _ = objective_gradient(mini_scene, cfg, inc)
    fd = finite_difference_gradient(mini_scene, cfg, no_coupling, delta=1e-5)
    cosine = analytic @ fd / (np.linalg.norm(analytic) * np.linalg.norm(fd))
    assert cosine > 0.999
    assert np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)) < 1e-5


def test_gradient_aggregation_consistency(mini_scene, coupling):
    """Factorized matvec aggregation equals direct per-point accumulation."""
    rng = np.random.default_rng(12)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, coupling)
    fast, _ = objective_gradient(mini_scene, cfg, inc)
    direct, _, _, _ = _sensitivity_pass(mini_scene, cfg, inc, want_dense=False)
    assert np.max(np.abs(fast - direct)) < 1e-10


def test_correlation_single_point_rank_one(no_coupling):
    scene = make_scene(grid_side=4, n_focus=1, n_outer=20)
    cfg = PhaseConfig(np.linspace(0, 2, scene.element_count))
    inc = solve_incident(scene, cfg, no_coupling)
    h = correlation_matrix(scene, cfg, inc, mode="dense")
    point = scene.sampling.focus_points[0]
    field = total_field(scene, cfg, inc, point[None, :]).values[0]
    c = np.array([
        magnitude_derivative(field, field_phase_derivative(scene, cfg, inc, point, n))
        for n in range(scene.element_count)
    ])
    assert np.max(np.abs(h - np.outer(c, c))) < 1e-12
    assert np.linalg.matrix_rank(h, tol=1e-10) <= 1


def test_correlation_matches_brute_force_gram(tiny_scene, coupling):
    rng = np.random.default_rng(13)
    cfg = PhaseConfig(random_phase_vector(tiny_scene, rng))
    inc = solve_incident(tiny_scene, cfg, coupling)
    h = correlation_matrix(tiny_scene, cfg, inc, mode="dense")
    # oracle: explicit outer-product sum over focus points
    expected = np.zeros((tiny_scene.element_count,) * 2)
    for point in tiny_scene.sampling.focus_points:
        field = total_field(tiny_scene, cfg, inc, point[None, :]).values[0]
        c = np.array([
            magnitude_derivative(field, field_phase_derivative(tiny_scene, cfg, inc, point, n))
            for n in range(tiny_scene.element_count)
        ])
        expected += np.outer(c, c)
    assert np.max(np.abs(h - expected)) < 1e-12


def test_correlation_symmetry_and_psd(mini_scene, coupling):
    rng = np.random.default_rng(14)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, coupling)
    h = correlation_matrix(mini_scene, cfg, inc, mode="dense")
    assert np.max(np.abs(h - h.T)) < 1e-10
    eigenvalues = np.linalg.eigvalsh(h)
    assert eigenvalues.min() >= -1e-8 * np.trace(h)
    diag = correlation_matrix(mini_scene, cfg, inc, mode="diag")
    assert np.allclose(diag, np.diag(h), atol=1e-12)
    assert np.all(diag >= 0)


def test_correlation_memory_guard(mini_scene, no_coupling):
    cfg = PhaseConfig(np.zeros(mini_scene.element_count))
    inc = solve_incident(mini_scene, cfg, no_coupling)
    with pytest.raises(MemoryGuardError):
        correlation_matrix(mini_scene, cfg, inc, mode="dense", dense_cap=10)
    diag = correlation_matrix(mini_scene, cfg, inc, mode="auto", dense_cap=10)
    assert diag.shape == (mini_scene.element_count,)


def test_rank_influence_ordering():
    diag = np.array([3.0, 1.0, 1.0, 0.0, 2.0])
    active = np.array([True, True, True, True, True])
    assert rank_influence(diag, active).tolist() == [3, 1, 2, 4, 0]
    # equal diagonal: index order
    assert rank_influence(np.ones(4), np.ones(4, bool)).tolist() == [0, 1, 2, 3]
    # masked elements never appear
    masked = rank_influence(diag, np.array([True, False, True, False, True]))
    assert masked.tolist() == [2, 4, 0]


def test_rank_influence_matches_reference_sort():
    rng = np.random.default_rng(15)
    diag = rng.uniform(0, 1, 200)
    active = rng.random(200) > 0.3
    got = rank_influence(diag, active)
    expected = sorted(np.flatnonzero(active), key=lambda i: (diag[i], i))
    assert got.tolist() == list(expected)
    assert sorted(got.tolist()) == sorted(np.flatnonzero(active).tolist())


def test_outer_gradient_route(mini_scene, coupling):
    rng = np.random.default_rng(16)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, coupling)
    grad, flagged = mean_field_gradient(
        mini_scene, cfg, inc, mini_scene.sampling.outer_points, mini_scene.sampling.outer_weights
    )
    fd = finite_difference_gradient(
        mini_scene, cfg, CouplingSpec(alpha=0.0), delta=1e-5,
        points=mini_scene.sampling.outer_points, weights=mini_scene.sampling.outer_weights,
    )
    # direction only: coupling feedback differs between the two routes
    cosine = grad @ fd / (np.linalg.norm(grad) * np.linalg.norm(fd))
    assert flagged == 0
    assert cosine > 0.9


def test_report_roundtrip(tmp_path, mini_scene, coupling):
    rng = np.random.default_rng(17)
    cfg = PhaseConfig(random_phase_vector(mini_scene, rng))
    inc = solve_incident(mini_scene, cfg, coupling)
    report = sensitivity_report(mini_scene, cfg, inc)
    assert report.dense_h is not None
    assert np.allclose(report.per_element, objective_gradient(mini_scene, cfg, inc)[0], atol=1e-10)
    path = tmp_path / "report.rish"
    save_report(report, path)
    loaded = load_report(path)
    assert np.array_equal(loaded.per_element, report.per_element)
    assert np.array_equal(loaded.diag_h, report.diag_h)
    assert np.array_equal(loaded.dense_h, report.dense_h)
    assert loaded.n_focus == report.n_focus
    assert path.read_bytes()[:4] == b"RISH"
    with pytest.raises(ValueError):
        bad = tmp_path / "bad.rish"
        bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
        load_report(bad)
