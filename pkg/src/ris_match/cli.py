"""Command-line entry point.

Subcommands: ``validate``, ``compile``, ``fieldmap``, ``sweep``, ``export``.
Global flags: ``--config`` (TOML overlay), ``--profile`` (paper or desk),
``--seed``, ``--threads`` (or env ``RIS_MATCH_THREADS``), ``--output-dir``.

Exit codes: 0 success, 2 configuration error, 3 numerical or stage failure,
4 I/O error.  Runs that produce artifacts write a ``manifest.json`` before
any heavy compute starts; all artifact timestamps honor SOURCE_DATE_EPOCH
(default 0) so identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import codebook as cb
from .config import PROFILES, resolve_config, scene_hash_bytes, scene_hash_hex
from .errors import (
    CodebookError,
    ConfigError,
    CouplingConvergenceError,
    FieldEnergyError,
    RisMatchError,
    StageError,
)
from .field import (
    CouplingSpec,
    PhaseConfig,
    export_fieldmap_csv,
    export_plane_pgm,
    plane_grid,
    solve_incident,
    total_field,
)
from .optimize import (
    MatchParams,
    Nsga2Params,
    ablation_comparison,
    compile_ablation,
    compile_entry,
    default_created_at,
)
from .scene import build_scene


def _coupling_from_config(cfg) -> CouplingSpec:
    c = cfg["coupling"]
    return CouplingSpec(
        alpha=float(c["alpha"]),
        neighborhood=c["neighborhood"],
        max_iterations=int(c["max_iterations"]),
        tolerance=float(c["tolerance"]),
        single_bounce=bool(c["single_bounce"]),
    )


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("RIS_MATCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError([("RIS_MATCH_THREADS", f"not an integer: {env!r}", None)]) from exc
    return min(4, os.cpu_count() or 1)


def _write_json(path: Path, payload) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_manifest(out_dir: Path, subcommand: str, cfg, args, outputs: dict) -> None:
    manifest = {
        "schema_version": 1,
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": cfg["optimizer"]["rng_seed"],
        "scene_hash": scene_hash_hex(cfg),
        "outputs": {name: str(path) for name, path in outputs.items()},
        "config": cfg,
        "created_at": default_created_at(),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _output_dir(args) -> Path:
    out = Path(args.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_validate(args) -> int:
    cfg = resolve_config(args.profile, args.config, args.seed)
    scene = build_scene(cfg)
    print(
        f"OK: {scene.element_count} elements on {scene.panel.wall_id}, "
        f"{scene.sampling.focus_points.shape[0]} focus / "
        f"{scene.sampling.outer_points.shape[0]} outer samples, "
        f"scene hash {scene.config_hash.hex()[:16]}"
    )
    return 0


def _format_comparison(rows) -> str:
    header = f"{'stage':<10} {'variant':<8} {'eta_focus':>10} {'eta_dirOut':>11} {'eta_unexp':>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['stage']:<10} {row['variant']:<8} "
            f"{row['eta_focus']:>10.4%} {row['eta_dirOut']:>11.4%} {row['eta_unexp']:>10.4%}"
        )
    return "\n".join(lines)


def cmd_compile(args) -> int:
    cfg = resolve_config(args.profile, args.config, args.seed)
    out_dir = _output_dir(args)
    outputs = {"codebook": out_dir / "codebook.risc", "trace": out_dir / "trace.json"}
    if args.ablation:
        outputs["comparison"] = out_dir / "comparison.json"
    _write_manifest(out_dir, "compile", cfg, args, outputs)

    scene = build_scene(cfg)
    params = MatchParams.from_config(cfg)
    nsga = Nsga2Params.from_config(cfg)
    coupling = _coupling_from_config(cfg)
    runner = compile_ablation if args.ablation else compile_entry
    try:
        entry, trace = runner(scene, params, nsga, coupling)
    except StageError as exc:
        if exc.partial_trace is not None:
            _write_json(outputs["trace"], exc.partial_trace.as_dict())
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3

    book = cb.Codebook(scene_hash=scene.config_hash)
    cb.put(book, entry)
    cb.save(book, outputs["codebook"])
    _write_json(outputs["trace"], trace.as_dict())
    for rec in trace.records:
        gain = "  --  " if rec.gain_db is None else f"{rec.gain_db:+6.2f}"
        print(
            f"{rec.name:<15} eta_focus={rec.energy.eta_focus:8.4%} "
            f"eta_dirOut={rec.energy.eta_dir_out:8.4%} eta_unexp={rec.energy.eta_unexp:8.4%} "
            f"gain_db={gain} iterations={rec.iterations}"
        )
    if args.ablation:
        rows = ablation_comparison(trace)
        _write_json(outputs["comparison"], {"schema_version": 1, "rows": rows})
        print(_format_comparison(rows))
    return 0


def _parse_key(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigError([("--key", f"expected 'x,y,z', got {text!r}", None)])
    return tuple(float(p) for p in parts)


def cmd_fieldmap(args) -> int:
    cfg = resolve_config(args.profile, args.config, args.seed)
    out_dir = _output_dir(args)
    outputs = {
        "csv": out_dir / "fieldmap.csv",
        "pgm": out_dir / "fieldmap.pgm",
        "sidecar": out_dir / "fieldmap_scale.txt",
    }
    _write_manifest(out_dir, "fieldmap", cfg, args, outputs)

    scene = build_scene(cfg)
    book = cb.load(args.codebook)
    if args.key is not None:
        query = cb.EntryKey.make(
            scene.transmitter.position, [_parse_key(args.key)],
            scene.focus.radius, scene.transmitter.frequency,
        )
    else:
        query = cb.entry_key_from_scene(scene)
    entry = cb.lookup(book, query, args.tolerance)
    if entry is None:
        print(f"no codebook entry within {args.tolerance} m of the requested key", file=sys.stderr)
        return 3

    side = scene.room.side_length
    if not 0.0 <= args.offset <= side:
        raise ConfigError([("--offset", f"plane {args.axis}={args.offset} lies outside the room", None)])
    points, shape = plane_grid(side, args.axis, args.offset, args.resolution)
    config = PhaseConfig(entry.phases)
    incident = solve_incident(scene, config, _coupling_from_config(cfg))
    fmap = total_field(scene, config, incident, points)
    export_fieldmap_csv(fmap, outputs["csv"])
    magnitudes = (np.abs(fmap.values) / fmap.reference).reshape(shape)
    scale = export_plane_pgm(magnitudes, outputs["pgm"])
    in_plane = [a for a in "xyz" if a != args.axis]
    with outputs["sidecar"].open("w", encoding="ascii", newline="\n") as handle:
        handle.write(f"scene_hash {scene.config_hash.hex()}\n")
        handle.write(f"scale_factor_v_per_m {scale:.17g}\n")
        handle.write(f"normalization_reference_v_per_m {fmap.reference:.17g}\n")
        handle.write(f"plane {args.axis}={args.offset:.17g} resolution={args.resolution}\n")
        handle.write(f"pgm_rows_axis {in_plane[0]}\npgm_cols_axis {in_plane[1]}\n")
        tx = scene.transmitter.position
        handle.write(f"transmitter {tx[0]:.17g} {tx[1]:.17g} {tx[2]:.17g}\n")
        for center in entry.key.focus_centers:
            handle.write(f"focus_center {center[0]:.17g} {center[1]:.17g} {center[2]:.17g}\n")
        handle.write(f"focus_radius {entry.key.radius:.17g}\n")
    print(f"wrote {shape[0]}x{shape[1]} field map, peak {scale:.6g} V/m")
    return 0


def _parse_grid(text: str) -> np.ndarray:
    axes = []
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError([("--grid", "expected 'x0:x1:nx,y0:y1:ny,z0:z1:nz'", None)])
    for part in parts:
        fields = part.split(":")
        if len(fields) != 3:
            raise ConfigError([("--grid", f"bad axis spec {part!r}", None)])
        lo, hi, num = float(fields[0]), float(fields[1]), int(fields[2])
        if num < 1:
            raise ConfigError([("--grid", f"axis count must be >= 1 in {part!r}", None)])
        axes.append(np.linspace(lo, hi, num) if num > 1 else np.array([(lo + hi) / 2.0]))
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def cmd_sweep(args) -> int:
    cfg = resolve_config(args.profile, args.config, args.seed)
    out_dir = _output_dir(args)
    outputs = {"codebook": out_dir / "sweep_codebook.risc", "metrics": out_dir / "sweep_metrics.jsonl"}
    _write_manifest(out_dir, "sweep", cfg, args, outputs)

    centers = _parse_grid(args.grid)
    base_seed = cfg["optimizer"]["rng_seed"]
    coupling = _coupling_from_config(cfg)
    nsga = Nsga2Params.from_config(cfg)

    def compile_one(index: int):
        center = centers[index]
        entry_cfg = copy.deepcopy(cfg)
        entry_cfg["focus"]["centers_m"] = [[float(c) for c in center]]
        # per-entry seed: base seed + grid index, deterministic for a fixed list
        entry_cfg["optimizer"]["rng_seed"] = base_seed + index
        try:
            scene = build_scene(entry_cfg)
            params = MatchParams.from_config(entry_cfg)
            entry, trace = compile_entry(scene, params, nsga, coupling)
        except RisMatchError as exc:
            failure = {
                "schema_version": 1,
                "index": index,
                "center": [float(c) for c in center],
                "error": str(exc),
            }
            return index, None, failure
        final = trace.records[-1]
        metrics = {
            "schema_version": 1,
            "index": index,
            "center": [float(c) for c in center],
            "seed": base_seed + index,
            **final.energy.as_dict(),
        }
        return index, entry, metrics

    results = {}
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        for index, entry, metrics in pool.map(compile_one, range(centers.shape[0])):
            results[index] = (entry, metrics)
            status = "failed" if entry is None else "ok"
            print(f"entry {index + 1}/{centers.shape[0]} {status}", file=sys.stderr)

    book = cb.Codebook(scene_hash=scene_hash_bytes(cfg))
    failures = 0
    with outputs["metrics"].open("w", encoding="utf-8", newline="\n") as handle:
        for index in range(centers.shape[0]):
            entry, metrics = results[index]
            handle.write(json.dumps(metrics, sort_keys=True) + "\n")
            if entry is None:
                failures += 1
            else:
                cb.put(book, entry)
    cb.save(book, outputs["codebook"])
    print(f"swept {centers.shape[0]} focus centers: {len(book)} compiled, {failures} failed")
    return 0


def cmd_export(args) -> int:
    book = cb.load(args.codebook)
    payload = cb.to_json_dict(book, include_phases=not args.no_phases)
    if args.json is not None:
        _write_json(Path(args.json), payload)
        print(f"exported {len(book)} entries to {args.json}")
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ris-match",
        description="Compile, inspect, and export indoor RIS phase codebooks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, metavar="TOML", help="config overlay file")
    common.add_argument("--profile", choices=PROFILES, default="desk", help="base parameter profile")
    common.add_argument("--seed", type=int, default=None, help="override the optimizer RNG seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads (env RIS_MATCH_THREADS)")
    common.add_argument("--output-dir", default="out", metavar="DIR")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a scene configuration")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compile", parents=[common], help="run the full pipeline, write codebook + trace")
    p.add_argument("--ablation", action="store_true", help="run the with/without outer-minimization pair")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("fieldmap", parents=[common], help="evaluate a compiled entry on a plane")
    p.add_argument("--codebook", required=True, metavar="RISC")
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--offset", type=float, default=None, help="plane coordinate (default: focus center)")
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--key", default=None, metavar="X,Y,Z", help="focus center to look up")
    p.add_argument("--tolerance", type=float, default=1e-3, help="lookup tolerance in meters")
    p.set_defaults(func=cmd_fieldmap)

    p = sub.add_parser("sweep", parents=[common], help="compile one entry per focus-center grid point")
    p.add_argument("--grid", required=True, metavar="X0:X1:NX,Y0:Y1:NY,Z0:Z1:NZ")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", parents=[common], help="emit a JSON mirror of a codebook")
    p.add_argument("--codebook", required=True, metavar="RISC")
    p.add_argument("--json", default=None, metavar="OUT")
    p.add_argument("--no-phases", action="store_true", help="omit phase arrays")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fieldmap" and args.offset is None:
            cfg = resolve_config(args.profile, args.config, args.seed)
            args.offset = float(cfg["focus"]["centers_m"][0]["xyz".index(args.axis)])
        return args.func(args)
    except ConfigError as exc:
        for line in exc.format_lines():
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except (StageError, CouplingConvergenceError, FieldEnergyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except CodebookError as exc:
        print(f"codebook error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
