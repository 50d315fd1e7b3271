"""Indoor RIS codebook compiler.

A semi-analytic near-field scattering model (spherical-wave illumination,
image-source wall reflections, inter-element mutual coupling) paired with a
four-stage phase optimizer that concentrates scattered energy inside
receiver focus regions while suppressing leakage, and a binary codebook
store for the compiled configurations.
"""

from .codebook import Codebook, CodebookEntry, EntryKey, entry_key_from_scene, lookup, put
from .config import profile_config, resolve_config, scene_hash_bytes, scene_hash_hex
from .errors import (
    CodebookError,
    CodebookIntegrityError,
    CodebookVersionError,
    ConfigError,
    CouplingConvergenceError,
    FieldEnergyError,
    FieldPointError,
    KeyConflictError,
    MemoryGuardError,
    RisMatchError,
    SceneError,
    StageError,
)
from .field import (
    CouplingSpec,
    EnergyReport,
    FieldMap,
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
from .optimize import (
    FrontMember,
    MatchParams,
    Nsga2Params,
    ParetoFront,
    StageRecord,
    StageTrace,
    compile_ablation,
    compile_entry,
    go_init,
    nsga2_run,
    select_knee,
    stage1_refine,
    stage3_ascent,
)
from .scene import (
    FocusRegion,
    RisPanel,
    Room,
    SamplingSets,
    Scene,
    Transmitter,
    Wall,
    build_profile_scene,
    build_scene,
    classify_region,
    mirror_transmitter,
    sample_points,
)
from .sensitivity import (
    SensitivityReport,
    correlation_matrix,
    field_phase_derivative,
    finite_difference_gradient,
    magnitude_derivative,
    objective_gradient,
    rank_influence,
    sensitivity_report,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
