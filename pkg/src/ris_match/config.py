"""Run configuration: profiles, TOML loading, validation, and hashing.

A run is described by a nested key/value mapping with the sections below.
Two built-in profiles ship with the package: ``paper`` (the full-scale
default parameter set) and ``desk`` (a reduced workstation-scale variant of
the same scene).  A user TOML file overlays the selected profile; unknown
keys are rejected with diagnostics anchored to the source line when it can
be located.

The scene hash is a SHA-256 digest over the canonicalized scene-identity
subset of the resolved configuration: room, transmitter, RIS panel,
sampling, coupling, normalization, and the focus radius.  Focus centers are
deliberately excluded (they live in codebook entry keys, and a sweep over
focus centers must produce entries sharing one scene hash), as are the
optimizer and NSGA-II sections (algorithm settings, not scene identity).
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Mapping

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib

from .errors import ConfigError

WALL_IDS = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")
NEIGHBORHOODS = ("moore8", "vonneumann4")

#: Full-scale defaults; every key a config file may set appears here.
PAPER_PROFILE: dict[str, Any] = {
    "room": {
        "side_length_m": 1.5,
        "reflectivity_default": 0.7,
        "reflectivity": {},  # optional per-wall overrides, keys from WALL_IDS
    },
    "transmitter": {
        # low corner emitter grazing the panel wall: reflections shape the
        # illumination, so the geometric baseline leaves the stages real work
        "position_m": [0.06, 0.2, 0.3],
        "boresight": "auto",  # "auto" aims at the panel center, or a 3-vector
        "pattern_exponent": 2.0,
        "frequency_hz": 6.0e9,
    },
    "ris": {
        "wall": "x_min",
        "grid_side": 120,
        "spacing_wavelengths": 0.25,
        "cosine_exponent": 1.0,
    },
    "focus": {
        "centers_m": [[0.9, 0.9, 0.75]],
        "radius_m": 0.15,
    },
    "sampling": {
        "focus_count": 12500,
        "outer_count": 15000,
        "seed": 2024,
        "corridor_radius_multiplier": 2.0,
    },
    "coupling": {
        "alpha": 0.15,
        "neighborhood": "moore8",
        "max_iterations": 50,
        "tolerance": 1.0e-10,
        "single_bounce": False,
    },
    "optimizer": {
        "delta_phi_stage1": 0.2,
        "eps_local": 1.0e-2,
        "delta_phi_stage3": 0.1,
        "eps_final": 1.0e-5,
        "max_iterations": 10_000,
        "minimize_outer": True,
        "outer_weight": 1.0,
        "freeze_fraction": 0.05,
        "freeze_period_fraction": 0.25,
        "rng_seed": 1,
    },
    "nsga2": {
        "population": 300,
        "generations": 75,
        "crossover_index": 8.0,
        "mutation_index": 8.0,
        "mutation_probability": 0.25,
        # "per_individual": 25% of offspring mutate about one gene each;
        # "per_gene": every gene flips a 25% coin (destructive on large panels)
        "mutation_scheme": "per_individual",
        "crossover_probability": 0.9,
    },
    "sensitivity": {
        "dense_h_cap": 4096,
    },
    "normalization": {
        "reference_field_v_per_m": 1.0,
    },
}

#: Workstation-scale overrides: same scene, smaller panel and budgets.
DESK_OVERRIDES: dict[str, Any] = {
    "ris": {"grid_side": 24},
    "sampling": {"focus_count": 800, "outer_count": 1200},
    "optimizer": {"max_iterations": 2000},
    "nsga2": {"population": 60, "generations": 20},
}

PROFILES = ("paper", "desk")

#: Sections (and one extra key) that define scene identity for hashing.
_SCENE_HASH_SECTIONS = ("room", "transmitter", "ris", "sampling", "coupling", "normalization")


def profile_config(name: str) -> dict[str, Any]:
    """Return a deep copy of a built-in profile's resolved configuration."""
    if name not in PROFILES:
        raise ConfigError([("profile", f"unknown profile {name!r}; expected one of {PROFILES}", None)])
    cfg = copy.deepcopy(PAPER_PROFILE)
    if name == "desk":
        _deep_update(cfg, DESK_OVERRIDES)
    return cfg


def _deep_update(base: dict, overlay: Mapping) -> dict:
    for key, value in overlay.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def _find_line(source: str | None, key: str) -> int | None:
    """Best-effort line anchor: first assignment of ``key`` in the TOML text."""
    if not source:
        return None
    leaf = key.split(".")[-1]
    pattern = re.compile(rf"^\s*{re.escape(leaf)}\s*=", re.MULTILINE)
    match = pattern.search(source)
    if match is None:
        return None
    return source.count("\n", 0, match.start()) + 1


def _check_unknown_keys(overlay: Mapping, schema: Mapping, prefix: str, diags: list, source: str | None):
    for key, value in overlay.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            diags.append((path, "unknown key", _find_line(source, path)))
            continue
        ref = schema[key]
        if isinstance(ref, dict) and not isinstance(value, Mapping):
            diags.append((path, f"expected a section, got {type(value).__name__}", _find_line(source, path)))
        elif isinstance(ref, dict):
            if key == "reflectivity":
                for wall_key in value:
                    if wall_key not in WALL_IDS:
                        diags.append((f"{path}.{wall_key}", "unknown wall id", _find_line(source, wall_key)))
            else:
                _check_unknown_keys(value, ref, path, diags, source)


def load_config_file(path: str | Path) -> tuple[dict[str, Any], str]:
    """Parse a TOML config file, returning (mapping, source text)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([(str(path), f"TOML parse error: {exc}", None)]) from exc
    return data, text


def resolve_config(
    profile: str = "paper",
    config_path: str | Path | None = None,
    seed: int | None = None,
) -> dict[str, Any]:
    """Materialize the fully-resolved configuration.

    Precedence: built-in profile defaults < config file < explicit seed.
    The returned mapping is validated; all defaults are materialized.
    """
    cfg = profile_config(profile)
    source = None
    if config_path is not None:
        overlay, source = load_config_file(config_path)
        diags: list = []
        _check_unknown_keys(overlay, PAPER_PROFILE, "", diags, source)
        if diags:
            raise ConfigError(diags)
        _deep_update(cfg, overlay)
    if seed is not None:
        cfg["optimizer"]["rng_seed"] = int(seed)
    validate_config(cfg, source)
    return cfg


def validate_config(cfg: Mapping[str, Any], source: str | None = None) -> None:
    """Check types and value invariants; raise ConfigError listing all problems."""
    diags: list = []

    def bad(path, message):
        diags.append((path, message, _find_line(source, path)))

    def require_number(path, value, *, positive=False, nonnegative=False, unit=False):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            bad(path, f"expected a number, got {type(value).__name__}")
            return None
        v = float(value)
        if positive and not v > 0:
            bad(path, f"must be > 0 (got {v})")
        if nonnegative and v < 0:
            bad(path, f"must be >= 0 (got {v})")
        if unit and not 0.0 <= v <= 1.0:
            bad(path, f"must lie in [0, 1] (got {v})")
        return v

    def require_int(path, value, *, minimum=None):
        if not isinstance(value, int) or isinstance(value, bool):
            bad(path, f"expected an integer, got {type(value).__name__}")
            return None
        if minimum is not None and value < minimum:
            bad(path, f"must be >= {minimum} (got {value})")
        return value

    def require_vec3(path, value):
        if not isinstance(value, (list, tuple)) or len(value) != 3 or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
        ):
            bad(path, "expected a 3-vector of numbers")
            return None
        return [float(x) for x in value]

    room = cfg["room"]
    side = require_number("room.side_length_m", room["side_length_m"], positive=True)
    require_number("room.reflectivity_default", room["reflectivity_default"], unit=True)
    for wall_key, value in room["reflectivity"].items():
        if wall_key not in WALL_IDS:
            bad(f"room.reflectivity.{wall_key}", "unknown wall id")
        else:
            require_number(f"room.reflectivity.{wall_key}", value, unit=True)

    tx = cfg["transmitter"]
    pos = require_vec3("transmitter.position_m", tx["position_m"])
    if pos is not None and side is not None and not all(0.0 < p < side for p in pos):
        bad("transmitter.position_m", f"must lie strictly inside the room [0, {side}]^3")
    boresight = tx["boresight"]
    if boresight != "auto":
        vec = require_vec3("transmitter.boresight", boresight)
        if vec is not None and sum(x * x for x in vec) == 0.0:
            bad("transmitter.boresight", "must be a nonzero vector or \"auto\"")
    require_number("transmitter.pattern_exponent", tx["pattern_exponent"], nonnegative=True)
    require_number("transmitter.frequency_hz", tx["frequency_hz"], positive=True)

    ris = cfg["ris"]
    if ris["wall"] not in WALL_IDS:
        bad("ris.wall", f"unknown wall id {ris['wall']!r}")
    require_int("ris.grid_side", ris["grid_side"], minimum=1)
    require_number("ris.spacing_wavelengths", ris["spacing_wavelengths"], positive=True)
    require_number("ris.cosine_exponent", ris["cosine_exponent"], nonnegative=True)

    focus = cfg["focus"]
    centers = focus["centers_m"]
    if not isinstance(centers, (list, tuple)) or len(centers) == 0:
        bad("focus.centers_m", "expected a non-empty list of 3-vectors")
    else:
        for i, c in enumerate(centers):
            require_vec3(f"focus.centers_m[{i}]", c)
    require_number("focus.radius_m", focus["radius_m"], positive=True)

    sampling = cfg["sampling"]
    require_int("sampling.focus_count", sampling["focus_count"], minimum=1)
    require_int("sampling.outer_count", sampling["outer_count"], minimum=1)
    require_int("sampling.seed", sampling["seed"], minimum=0)
    require_number("sampling.corridor_radius_multiplier", sampling["corridor_radius_multiplier"], positive=True)

    coupling = cfg["coupling"]
    require_number("coupling.alpha", coupling["alpha"], unit=True)
    if coupling["neighborhood"] not in NEIGHBORHOODS:
        bad("coupling.neighborhood", f"expected one of {NEIGHBORHOODS}")
    require_int("coupling.max_iterations", coupling["max_iterations"], minimum=1)
    require_number("coupling.tolerance", coupling["tolerance"], positive=True)
    if not isinstance(coupling["single_bounce"], bool):
        bad("coupling.single_bounce", "expected a boolean")

    opt = cfg["optimizer"]
    require_number("optimizer.delta_phi_stage1", opt["delta_phi_stage1"], positive=True)
    require_number("optimizer.eps_local", opt["eps_local"], positive=True)
    require_number("optimizer.delta_phi_stage3", opt["delta_phi_stage3"], positive=True)
    require_number("optimizer.eps_final", opt["eps_final"], positive=True)
    require_int("optimizer.max_iterations", opt["max_iterations"], minimum=1)
    if not isinstance(opt["minimize_outer"], bool):
        bad("optimizer.minimize_outer", "expected a boolean")
    require_number("optimizer.outer_weight", opt["outer_weight"], nonnegative=True)
    ff = require_number("optimizer.freeze_fraction", opt["freeze_fraction"], nonnegative=True)
    if ff is not None and not ff < 1.0:
        bad("optimizer.freeze_fraction", f"must be < 1 (got {ff})")
    require_number("optimizer.freeze_period_fraction", opt["freeze_period_fraction"], positive=True)
    require_int("optimizer.rng_seed", opt["rng_seed"], minimum=0)

    nsga = cfg["nsga2"]
    population = require_int("nsga2.population", nsga["population"], minimum=4)
    if population is not None and population % 2 != 0:
        bad("nsga2.population", f"must be even (got {population})")
    require_int("nsga2.generations", nsga["generations"], minimum=1)
    require_number("nsga2.crossover_index", nsga["crossover_index"], positive=True)
    require_number("nsga2.mutation_index", nsga["mutation_index"], positive=True)
    require_number("nsga2.mutation_probability", nsga["mutation_probability"], unit=True)
    if nsga["mutation_scheme"] not in ("per_gene", "per_individual"):
        bad("nsga2.mutation_scheme", "expected \"per_gene\" or \"per_individual\"")
    require_number("nsga2.crossover_probability", nsga["crossover_probability"], unit=True)

    require_int("sensitivity.dense_h_cap", cfg["sensitivity"]["dense_h_cap"], minimum=1)
    require_number(
        "normalization.reference_field_v_per_m",
        cfg["normalization"]["reference_field_v_per_m"],
        positive=True,
    )

    if diags:
        raise ConfigError(diags)


def canonical_json(obj: Any) -> str:
    """Stable serialization used for hashing: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scene_hash_bytes(cfg: Mapping[str, Any]) -> bytes:
    """SHA-256 over the scene-identity subset of a resolved config (32 bytes)."""
    subset = {section: cfg[section] for section in _SCENE_HASH_SECTIONS}
    subset["focus_radius_m"] = cfg["focus"]["radius_m"]
    return hashlib.sha256(canonical_json(subset).encode("ascii")).digest()


def scene_hash_hex(cfg: Mapping[str, Any]) -> str:
    return scene_hash_bytes(cfg).hex()
