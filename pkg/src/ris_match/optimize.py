"""Four-stage codebook compilation pipeline.

Stages, in order:

1. Geometric initialization: each element phase cancels the propagation
   path length transmitter -> element -> focus center, ignoring coupling
   and wall reflections.
2. Local refinement: raster sweeps of +/- delta-phi trials per element
   under the full propagation model, keeping only updates that raise the
   mean focus field; stops when a full sweep improves it by less than the
   local tolerance.
3. Pareto exploration: NSGA-II over (maximize mean focus field, minimize
   mean outer field), warm-started from the refined configuration, with
   progressive freezing of the least influential elements at scheduled
   generation checkpoints.
4. Final ascent: normalized gradient steps on all phases with per-iteration
   step halving, driving the scalar objective J = E_focus - mu * E_outer
   (or E_focus alone when outer minimization is disabled).

Every stage is deterministic for fixed inputs and seed; stage telemetry is
collected in a StageTrace whose JSON form carries only run-independent
fields, so repeated runs serialize byte-identically.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field as dataclass_field, replace
from math import ceil

import numpy as np

from .codebook import CodebookEntry, entry_key_from_scene
from .errors import CouplingConvergenceError, StageError
from .field import (
    TWO_PI,
    CouplingSpec,
    EnergyReport,
    PhaseConfig,
    energy_report,
    gain_db,
    mean_focus_field,
    sampling_field,
    sampling_green,
    solve_incident,
    wrap_phase,
)
from .nsga2 import (
    crowding_distance,
    environmental_selection,
    fast_non_dominated_sort,
    polynomial_mutation,
    sbx_crossover,
    tournament_selection,
)
from .scene import Scene
from .sensitivity import (
    SensitivityReport,
    correlation_matrix,
    mean_field_gradient,
    objective_gradient,
    rank_influence,
    sensitivity_report,
)

_TINY = 1e-300
_MIN_STEP_SHRINK = 2.0**-30


@dataclass(frozen=True)
class MatchParams:
    """Stage parameters; defaults follow the shipped profiles."""

    delta_phi_stage1: float = 0.2
    eps_local: float = 1e-2
    delta_phi_stage3: float = 0.1
    eps_final: float = 1e-5
    max_iterations: int = 10_000
    minimize_outer: bool = True
    outer_weight: float = 1.0
    freeze_fraction: float = 0.05
    freeze_period_fraction: float = 0.25
    rng_seed: int = 1

    def __post_init__(self):
        if min(self.delta_phi_stage1, self.eps_local, self.delta_phi_stage3, self.eps_final) <= 0:
            raise ValueError("step sizes and tolerances must be positive")
        if not 0.0 <= self.freeze_fraction < 1.0:
            raise ValueError("freeze_fraction must lie in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    @classmethod
    def from_config(cls, cfg) -> "MatchParams":
        o = cfg["optimizer"]
        return cls(
            delta_phi_stage1=float(o["delta_phi_stage1"]),
            eps_local=float(o["eps_local"]),
            delta_phi_stage3=float(o["delta_phi_stage3"]),
            eps_final=float(o["eps_final"]),
            max_iterations=int(o["max_iterations"]),
            minimize_outer=bool(o["minimize_outer"]),
            outer_weight=float(o["outer_weight"]),
            freeze_fraction=float(o["freeze_fraction"]),
            freeze_period_fraction=float(o["freeze_period_fraction"]),
            rng_seed=int(o["rng_seed"]),
        )


@dataclass(frozen=True)
class Nsga2Params:
    """Search parameters.

    ``mutation_probability`` is interpreted according to
    ``mutation_scheme``: applied per gene, or per individual (a mutated
    individual then changes about one gene).  On genomes with hundreds of
    phases the per-gene reading perturbs so many genes at once that
    offspring can never refine a warm-started solution, so the profiles ship
    the per-individual scheme.
    """

    population: int = 300
    generations: int = 75
    crossover_index: float = 8.0
    mutation_index: float = 8.0
    mutation_probability: float = 0.25
    crossover_probability: float = 0.9
    mutation_scheme: str = "per_individual"

    def __post_init__(self):
        if self.population < 4 or self.population % 2 != 0:
            raise ValueError("population must be even and at least 4")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        if self.crossover_index <= 0 or self.mutation_index <= 0:
            raise ValueError("distribution indices must be positive")
        if not 0.0 <= self.mutation_probability <= 1.0:
            raise ValueError("mutation_probability must lie in [0, 1]")
        if not 0.0 <= self.crossover_probability <= 1.0:
            raise ValueError("crossover_probability must lie in [0, 1]")
        if self.mutation_scheme not in ("per_gene", "per_individual"):
            raise ValueError(f"unknown mutation scheme {self.mutation_scheme!r}")

    @classmethod
    def from_config(cls, cfg) -> "Nsga2Params":
        g = cfg["nsga2"]
        return cls(
            population=int(g["population"]),
            generations=int(g["generations"]),
            crossover_index=float(g["crossover_index"]),
            mutation_index=float(g["mutation_index"]),
            mutation_probability=float(g["mutation_probability"]),
            crossover_probability=float(g["crossover_probability"]),
            mutation_scheme=str(g["mutation_scheme"]),
        )


@dataclass(frozen=True)
class FrontMember:
    config: PhaseConfig
    mean_focus: float
    mean_outer: float
    rank: int
    crowding: float


@dataclass(frozen=True)
class ParetoFront:
    members: tuple[FrontMember, ...]

    def rank0(self) -> tuple[FrontMember, ...]:
        return tuple(m for m in self.members if m.rank == 0)


@dataclass(frozen=True)
class FreezeEvent:
    generation: int
    indices: np.ndarray
    phases: np.ndarray


@dataclass
class StageRecord:
    """Telemetry for one pipeline stage.

    ``objective_history`` is the accepted-update objective sequence (stage 1
    and 3) or the per-generation best focus objective (stage 2);
    ``wall_clock_s`` and ``front`` are runtime-only and never serialized.
    """

    name: str
    config: PhaseConfig
    energy: EnergyReport
    gain_db: float | None
    iterations: int
    wall_clock_s: float
    objective_history: list = dataclass_field(default_factory=list)
    flags: list = dataclass_field(default_factory=list)
    freeze_events: list = dataclass_field(default_factory=list)
    front: ParetoFront | None = None

    def as_dict(self) -> dict:
        payload = {"name": self.name}
        payload.update(self.energy.as_dict())
        payload["gain_db"] = self.gain_db
        payload["iterations"] = self.iterations
        payload["flags"] = list(self.flags)
        return payload


@dataclass
class StageTrace:
    records: list
    seed: int
    scene_hash_hex: str
    ablation: bool = False

    def record(self, name: str) -> StageRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "schema_version": 1,
            "scene_hash": self.scene_hash_hex,
            "seed": self.seed,
            "ablation": self.ablation,
            "stages": [rec.as_dict() for rec in self.records],
        }


def default_created_at() -> int:
    """Deterministic artifact timestamp: SOURCE_DATE_EPOCH or zero, so equal
    runs produce byte-identical outputs."""
    return int(os.environ.get("SOURCE_DATE_EPOCH", "0"))


def go_init(scene: Scene) -> PhaseConfig:
    """Phase profile canceling the transmitter->element->focus path length.

    With several focus centers, elements are assigned round-robin by index.
    Coupling and wall reflections are deliberately ignored here.
    """
    centers = scene.panel.element_centers
    k = scene.wavenumber
    d_tx = np.linalg.norm(centers - scene.transmitter.position, axis=1)
    focus_centers = scene.focus.centers
    assigned = focus_centers[np.arange(centers.shape[0]) % focus_centers.shape[0]]
    d_focus = np.linalg.norm(centers - assigned, axis=1)
    return PhaseConfig(wrap_phase(-k * (d_tx + d_focus)))


def _evaluate(scene: Scene, config: PhaseConfig, coupling: CouplingSpec):
    """(mean_focus, mean_outer, report) at one configuration; raises on
    coupling non-convergence."""
    incident = solve_incident(scene, config, coupling)
    fmap = sampling_field(scene, config, incident)
    report = energy_report(scene, fmap)
    return report, incident


def stage1_refine(
    scene: Scene,
    config0: PhaseConfig,
    params: MatchParams,
    coupling: CouplingSpec,
) -> tuple[PhaseConfig, SensitivityReport, StageRecord]:
    """Raster coordinate refinement of the mean focus field.

    Each element tries +delta and -delta perturbations under the full model;
    the best of the three candidates is kept, so the accepted objective
    sequence is non-decreasing.  Sweeps repeat until the per-sweep relative
    improvement drops below ``eps_local`` or the element-visit budget
    ``max_iterations`` is exhausted.
    """
    start_time = time.perf_counter()
    flags: list[str] = []
    phases = config0.phases.copy()
    try:
        current_cfg = PhaseConfig(phases)
        incident = solve_incident(scene, current_cfg, coupling)
    except CouplingConvergenceError as exc:
        raise StageError(f"stage1: initial configuration failed to converge: {exc}") from exc
    current = mean_focus_field(scene, current_cfg, incident)
    history = [current]
    n_elements = scene.element_count
    delta = params.delta_phi_stage1
    visits = 0
    accepted = 0
    rejected_trials = 0
    budget_hit = False
    while True:
        sweep_start = current
        for n in range(n_elements):
            if visits >= params.max_iterations:
                budget_hit = True
                break
            visits += 1
            best_value = current
            best_phases = None
            for signed in (delta, -delta):
                trial = phases.copy()
                trial[n] = float(wrap_phase(trial[n] + signed))
                trial_cfg = PhaseConfig(trial)
                try:
                    trial_inc = solve_incident(scene, trial_cfg, coupling)
                except CouplingConvergenceError:
                    rejected_trials += 1
                    continue
                value = mean_focus_field(scene, trial_cfg, trial_inc)
                if value > best_value:
                    best_value = value
                    best_phases = trial
            if best_phases is not None:
                phases = best_phases
                current = best_value
                history.append(current)
                accepted += 1
        improvement = (current - sweep_start) / max(abs(sweep_start), _TINY)
        if budget_hit or improvement < params.eps_local:
            break
    if budget_hit:
        flags.append("iteration_budget_exhausted")
    if rejected_trials:
        flags.append(f"coupling_nonconverged_trials={rejected_trials}")

    final_cfg = PhaseConfig(phases)
    report_energy, incident = _evaluate(scene, final_cfg, coupling)
    sens = sensitivity_report(scene, final_cfg, incident)
    record = StageRecord(
        name="stage1",
        config=final_cfg,
        energy=report_energy,
        gain_db=None,
        iterations=visits,
        wall_clock_s=time.perf_counter() - start_time,
        objective_history=history,
        flags=flags,
    )
    return final_cfg, sens, record


def freeze_checkpoints(generations: int, period_fraction: float) -> list[int]:
    """Generation indices after which freezing runs: every ``period_fraction``
    of the budget, excluding the final generation."""
    if period_fraction <= 0.0:
        return []
    marks = int(ceil(1.0 / period_fraction)) - 1
    gens = {int(ceil(m * period_fraction * generations)) for m in range(1, marks + 1)}
    return sorted(g for g in gens if 1 <= g < generations)


def _knee_index(mean_focus: np.ndarray, mean_outer: np.ndarray) -> int:
    """Balanced member of a non-dominated set: maximize the difference of
    min-max normalized objectives, ties by raw focus value then index."""
    ef = np.asarray(mean_focus, dtype=float)
    eo = np.asarray(mean_outer, dtype=float)
    ef_span = ef.max() - ef.min()
    eo_span = eo.max() - eo.min()
    ef_norm = (ef - ef.min()) / ef_span if ef_span > 0 else np.zeros_like(ef)
    eo_norm = (eo - eo.min()) / eo_span if eo_span > 0 else np.zeros_like(eo)
    score = ef_norm - eo_norm
    return min(range(ef.shape[0]), key=lambda i: (-score[i], -ef[i], i))


def select_knee(front: ParetoFront) -> PhaseConfig:
    """Knee of the rank-0 front under the normalized-difference rule."""
    rank0 = front.rank0()
    if not rank0:
        raise ValueError("empty front")
    idx = _knee_index(
        np.array([m.mean_focus for m in rank0]), np.array([m.mean_outer for m in rank0])
    )
    return rank0[idx].config


def nsga2_run(
    scene: Scene,
    seed_config: PhaseConfig,
    report: SensitivityReport,
    nsga: Nsga2Params,
    params: MatchParams,
    coupling: CouplingSpec,
) -> tuple[ParetoFront, StageRecord]:
    """Pareto exploration with progressive freezing.

    The genome is the phases of the active (non-frozen) elements.  The
    initial population is the seed configuration plus mutated copies with
    wrapped Gaussian per-gene noise.  At each checkpoint generation the
    influence diagonal is recomputed at the current knee and the least
    influential active elements are frozen at the knee's phases.
    """
    start_time = time.perf_counter()
    rng = np.random.default_rng(params.rng_seed)
    n_elements = scene.element_count
    if len(seed_config) != n_elements:
        raise ValueError("seed configuration does not match the panel size")
    active = ~report.frozen_mask.copy()
    background = seed_config.phases.copy()
    pop_size = nsga.population
    flags: list[str] = []
    nonconverged = 0

    def evaluate_rows(rows: np.ndarray) -> np.ndarray:
        nonlocal nonconverged
        out = np.empty((rows.shape[0], 2))
        for i, row in enumerate(rows):
            cfg = PhaseConfig(row)
            try:
                incident = solve_incident(scene, cfg, coupling)
            except CouplingConvergenceError:
                nonconverged += 1
                out[i] = (-np.inf, np.inf)
                continue
            fmap = sampling_field(scene, cfg, incident)
            n_focus = scene.sampling.focus_points.shape[0]
            magnitude = np.abs(fmap.values)
            out[i, 0] = float(scene.sampling.focus_weights @ magnitude[:n_focus])
            out[i, 1] = float(scene.sampling.outer_weights @ magnitude[n_focus:])
        return out

    def min_objectives(raw: np.ndarray) -> np.ndarray:
        if params.minimize_outer:
            return np.column_stack([-raw[:, 0], raw[:, 1]])
        return -raw[:, 0:1]

    def rank_and_crowd(raw: np.ndarray):
        objs = min_objectives(raw)
        ranks, fronts = fast_non_dominated_sort(objs)
        crowding = np.zeros(objs.shape[0])
        for front in fronts:
            crowding[front] = crowding_distance(objs[front])
        return ranks, crowding

    genomes = np.tile(background, (pop_size, 1))
    n_active = int(active.sum())
    noise = rng.normal(0.0, params.delta_phi_stage1, size=(pop_size - 1, n_active))
    genomes[1:, active] = wrap_phase(background[active][None, :] + noise)
    raw = evaluate_rows(genomes)
    ranks, crowding = rank_and_crowd(raw)

    checkpoints = set(freeze_checkpoints(nsga.generations, params.freeze_period_fraction))
    freeze_events: list[FreezeEvent] = []
    history: list[float] = [float(raw[:, 0].max())]

    for generation in range(1, nsga.generations + 1):
        parent_idx = tournament_selection(rng, ranks, crowding, pop_size)
        pa = genomes[parent_idx[0::2]][:, active]
        pb = genomes[parent_idx[1::2]][:, active]
        child_a, child_b = sbx_crossover(rng, pa, pb, nsga.crossover_index, nsga.crossover_probability)
        children = np.empty((pop_size, pa.shape[1]))
        children[0::2] = child_a
        children[1::2] = child_b
        children = wrap_phase(children)
        children = polynomial_mutation(
            rng, children, nsga.mutation_index, nsga.mutation_probability, 0.0, TWO_PI,
            scheme=nsga.mutation_scheme,
        )
        offspring = np.tile(background, (pop_size, 1))
        offspring[:, active] = wrap_phase(children)
        off_raw = evaluate_rows(offspring)

        combined = np.vstack([genomes, offspring])
        combined_raw = np.vstack([raw, off_raw])
        chosen, ranks, crowding = environmental_selection(min_objectives(combined_raw), pop_size)
        genomes = combined[chosen]
        raw = combined_raw[chosen]
        history.append(float(raw[:, 0].max()))

        if generation in checkpoints and params.freeze_fraction > 0.0 and active.any():
            front0 = np.flatnonzero(ranks == 0)
            knee_row = front0[_knee_index(raw[front0, 0], raw[front0, 1])]
            knee_phases = genomes[knee_row].copy()
            knee_cfg = PhaseConfig(knee_phases)
            try:
                knee_incident = solve_incident(scene, knee_cfg, coupling)
            except CouplingConvergenceError:
                flags.append(f"freeze_skipped_gen{generation}_nonconverged")
                continue
            diag = correlation_matrix(scene, knee_cfg, knee_incident, mode="diag")
            order = rank_influence(diag, active)
            n_freeze = int(ceil(params.freeze_fraction * int(active.sum())))
            to_freeze = order[:n_freeze]
            active[to_freeze] = False
            background[to_freeze] = knee_phases[to_freeze]
            genomes[:, to_freeze] = knee_phases[to_freeze]
            # overwriting genes invalidates stored objectives: re-evaluate
            raw = evaluate_rows(genomes)
            ranks, crowding = rank_and_crowd(raw)
            freeze_events.append(
                FreezeEvent(generation=generation, indices=to_freeze, phases=knee_phases[to_freeze].copy())
            )

    ranks, crowding = rank_and_crowd(raw)
    members = tuple(
        FrontMember(
            config=PhaseConfig(genomes[i]),
            mean_focus=float(raw[i, 0]),
            mean_outer=float(raw[i, 1]),
            rank=int(ranks[i]),
            crowding=float(crowding[i]),
        )
        for i in range(pop_size)
    )
    front = ParetoFront(members=members)
    if nonconverged:
        flags.append(f"coupling_nonconverged_candidates={nonconverged}")
    knee_cfg = select_knee(front)
    knee_energy, _ = _evaluate(scene, knee_cfg, coupling)
    record = StageRecord(
        name="stage2",
        config=knee_cfg,
        energy=knee_energy,
        gain_db=None,
        iterations=nsga.generations,
        wall_clock_s=time.perf_counter() - start_time,
        objective_history=history,
        flags=flags,
        freeze_events=freeze_events,
        front=front,
    )
    return front, record


def stage3_ascent(
    scene: Scene,
    config: PhaseConfig,
    params: MatchParams,
    coupling: CouplingSpec,
) -> tuple[PhaseConfig, StageRecord]:
    """Gradient ascent on all phases with per-iteration step halving.

    The step direction is the objective gradient normalized by its infinity
    norm, scaled by ``delta_phi_stage3``.  A step that fails to improve is
    retried at half length (for that iteration only); running out of step
    length stops the stage with a flag.  Accepted objective values are
    strictly increasing.
    """
    start_time = time.perf_counter()
    flags: list[str] = []
    mu = params.outer_weight if params.minimize_outer else 0.0
    cached_green = sampling_green(scene)
    n_focus = scene.sampling.focus_points.shape[0]
    outer_rows = None if cached_green is None else cached_green[n_focus:]

    def objective(report: EnergyReport) -> float:
        return report.mean_focus - mu * report.mean_outer

    phases = config.phases.copy()
    current_cfg = PhaseConfig(phases)
    try:
        current_energy, incident = _evaluate(scene, current_cfg, coupling)
    except CouplingConvergenceError as exc:
        raise StageError(f"stage3: initial configuration failed to converge: {exc}") from exc
    current = objective(current_energy)
    history = [current]
    iterations = 0
    for _ in range(params.max_iterations):
        iterations += 1
        grad, _ = objective_gradient(scene, current_cfg, incident)
        if mu != 0.0:
            outer_grad, _ = mean_field_gradient(
                scene,
                current_cfg,
                incident,
                scene.sampling.outer_points,
                scene.sampling.outer_weights,
                green_rows=outer_rows,
            )
            grad = grad - mu * outer_grad
        scale = float(np.max(np.abs(grad)))
        if scale == 0.0:
            flags.append("zero_gradient")
            break
        direction = grad / scale
        step = params.delta_phi_stage3
        accepted = False
        while step >= params.delta_phi_stage3 * _MIN_STEP_SHRINK:
            candidate_cfg = PhaseConfig(wrap_phase(phases + step * direction))
            try:
                cand_energy, cand_incident = _evaluate(scene, candidate_cfg, coupling)
            except CouplingConvergenceError:
                step *= 0.5
                continue
            value = objective(cand_energy)
            if value > current:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            flags.append("no_improvement_at_min_step")
            break
        improvement = (value - current) / max(abs(current), _TINY)
        phases = candidate_cfg.phases.copy()
        current_cfg = candidate_cfg
        current_energy = cand_energy
        incident = cand_incident
        current = value
        history.append(current)
        if improvement < params.eps_final:
            break

    record = StageRecord(
        name="stage3",
        config=current_cfg,
        energy=current_energy,
        gain_db=None,
        iterations=iterations,
        wall_clock_s=time.perf_counter() - start_time,
        objective_history=history,
        flags=flags,
    )
    return current_cfg, record


def _go_record(scene: Scene, coupling: CouplingSpec) -> StageRecord:
    start_time = time.perf_counter()
    cfg = go_init(scene)
    try:
        energy, _ = _evaluate(scene, cfg, coupling)
    except CouplingConvergenceError as exc:
        raise StageError(f"go: initial configuration failed to converge: {exc}") from exc
    return StageRecord(
        name="go",
        config=cfg,
        energy=energy,
        gain_db=None,
        iterations=0,
        wall_clock_s=time.perf_counter() - start_time,
        objective_history=[energy.mean_focus],
        flags=[],
    )


def _entry_from(scene: Scene, params: MatchParams, records: list, final: StageRecord, created_at: int):
    return CodebookEntry(
        key=entry_key_from_scene(scene),
        phases=final.config.phases.copy(),
        scene_hash=scene.config_hash,
        seed=params.rng_seed,
        metrics=final.energy,
        created_at=created_at,
        stage_summary=[
            (rec.name, rec.energy.eta_focus, rec.energy.eta_dir_out, rec.energy.eta_unexp)
            for rec in records
        ],
    )


def compile_entry(
    scene: Scene,
    params: MatchParams,
    nsga: Nsga2Params,
    coupling: CouplingSpec,
    created_at: int | None = None,
) -> tuple[CodebookEntry, StageTrace]:
    """Run the full pipeline and emit the compiled codebook entry.

    A stage failure raises :class:`StageError` carrying the partial trace of
    the stages completed so far.
    """
    created = default_created_at() if created_at is None else int(created_at)
    trace = StageTrace(records=[], seed=params.rng_seed, scene_hash_hex=scene.config_hash.hex())
    try:
        go_rec = _go_record(scene, coupling)
        trace.records.append(go_rec)
        cfg1, sens, rec1 = stage1_refine(scene, go_rec.config, params, coupling)
        rec1.gain_db = gain_db(go_rec.energy, rec1.energy)
        trace.records.append(rec1)
        front, rec2 = nsga2_run(scene, cfg1, sens, nsga, params, coupling)
        rec2.gain_db = gain_db(rec1.energy, rec2.energy)
        trace.records.append(rec2)
        cfg3, rec3 = stage3_ascent(scene, rec2.config, params, coupling)
        rec3.gain_db = gain_db(rec2.energy, rec3.energy)
        trace.records.append(rec3)
    except StageError as exc:
        exc.partial_trace = trace
        raise
    entry = _entry_from(scene, params, trace.records, rec3, created)
    return entry, trace


def compile_ablation(
    scene: Scene,
    params: MatchParams,
    nsga: Nsga2Params,
    coupling: CouplingSpec,
    created_at: int | None = None,
) -> tuple[CodebookEntry, StageTrace]:
    """Run the with/without outer-minimization pair at matched budget.

    The first two stages do not depend on the ablation switch and are shared;
    both arms branch from the same refined configuration with the same seed.
    The emitted entry is the with-minimization product; all six stage records
    land in the trace (go, stage1, stage2/3 with and without suffixes).
    """
    created = default_created_at() if created_at is None else int(created_at)
    trace = StageTrace(
        records=[], seed=params.rng_seed, scene_hash_hex=scene.config_hash.hex(), ablation=True
    )
    try:
        go_rec = _go_record(scene, coupling)
        trace.records.append(go_rec)
        cfg1, sens, rec1 = stage1_refine(scene, go_rec.config, params, coupling)
        rec1.gain_db = gain_db(go_rec.energy, rec1.energy)
        trace.records.append(rec1)

        stage2_records, stage3_records = {}, {}
        for suffix, minimize in (("with", True), ("without", False)):
            arm_params = replace(params, minimize_outer=minimize)
            front, rec2 = nsga2_run(scene, cfg1, sens, nsga, arm_params, coupling)
            rec2.name = f"stage2_{suffix}"
            rec2.gain_db = gain_db(rec1.energy, rec2.energy)
            stage2_records[suffix] = rec2
            cfg3, rec3 = stage3_ascent(scene, rec2.config, arm_params, coupling)
            rec3.name = f"stage3_{suffix}"
            rec3.gain_db = gain_db(rec2.energy, rec3.energy)
            stage3_records[suffix] = rec3
        # rows grouped by stage, with-arm first
        for group in (stage2_records, stage3_records):
            trace.records.append(group["with"])
            trace.records.append(group["without"])
    except StageError as exc:
        exc.partial_trace = trace
        raise
    entry = _entry_from(scene, params, trace.records, stage3_records["with"], created)
    return entry, trace


def ablation_comparison(trace: StageTrace) -> list[dict]:
    """Stage-by-stage energy-fraction rows for the two ablation arms."""
    rows = []
    for rec in trace.records:
        if rec.name.endswith("_without"):
            base, variant = rec.name[: -len("_without")], "without"
        elif rec.name.endswith("_with"):
            base, variant = rec.name[: -len("_with")], "with"
        else:
            base, variant = rec.name, "both"
        rows.append(
            {
                "stage": base,
                "variant": variant,
                "eta_focus": rec.energy.eta_focus,
                "eta_dirOut": rec.energy.eta_dir_out,
                "eta_unexp": rec.energy.eta_unexp,
            }
        )
    return rows
