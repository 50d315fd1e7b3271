"""Compiled-configuration persistence with integrity checking.

File layout (all little-endian):

    magic "RISC" | u16 format version | 32-byte scene hash | u32 entry count
    per entry: u32 payload length | payload | u32 CRC-32C of the payload

    payload: key block: f64[3] transmitter | u32 L | f64[3L] focus centers
                        | f64 radius | f64 frequency
             | u32 N | f64[N] phases
             | f64[6] metrics (eta_focus, eta_dirOut, eta_unexp,
                               mean_focus, mean_outer, focal_energy)
             | i64 seed | i64 created_at
             | u32 stage count | per stage: u8 name length, name, f64[3] etas

Key positions are rounded to 1e-6 m before storage and hashing so float
noise cannot miss a lookup.  Phases dominate the size; fixed-width binary
keeps round trips byte-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CodebookError, CodebookIntegrityError, CodebookVersionError, KeyConflictError
from .field import EnergyReport

MAGIC = b"RISC"
FORMAT_VERSION = 1
_POSITION_DECIMALS = 6

_CRC_POLY = 0x82F63B78  # CRC-32C (Castagnoli), reflected


def _make_crc_table() -> tuple[int, ...]:
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC_POLY if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _make_crc_table()


def crc32c(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFFFFFF


def _round_position(vec) -> tuple[float, float, float]:
    return tuple(round(float(x), _POSITION_DECIMALS) for x in vec)


@dataclass(frozen=True)
class EntryKey:
    """Canonicalized scenario key: transmitter, focus centers, radius, frequency."""

    transmitter: tuple
    focus_centers: tuple
    radius: float
    frequency: float

    @classmethod
    def make(cls, transmitter, focus_centers, radius, frequency) -> "EntryKey":
        return cls(
            transmitter=_round_position(transmitter),
            focus_centers=tuple(_round_position(c) for c in np.atleast_2d(focus_centers)),
            radius=round(float(radius), _POSITION_DECIMALS),
            frequency=float(frequency),
        )


def entry_key_from_scene(scene) -> EntryKey:
    return EntryKey.make(
        scene.transmitter.position,
        scene.focus.centers,
        scene.focus.radius,
        scene.transmitter.frequency,
    )


@dataclass
class CodebookEntry:
    key: EntryKey
    phases: np.ndarray
    scene_hash: bytes
    seed: int
    metrics: EnergyReport
    created_at: int
    stage_summary: list = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CodebookEntry):
            return NotImplemented
        return (
            self.key == other.key
            and np.array_equal(self.phases, other.phases)
            and self.scene_hash == other.scene_hash
            and self.seed == other.seed
            and self.metrics == other.metrics
            and self.created_at == other.created_at
            and list(self.stage_summary) == list(other.stage_summary)
        )


@dataclass
class Codebook:
    scene_hash: bytes
    entries: list = field(default_factory=list)
    version: int = FORMAT_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return (
            self.scene_hash == other.scene_hash
            and self.version == other.version
            and self.entries == other.entries
        )

    def __len__(self) -> int:
        return len(self.entries)


def put(book: Codebook, entry: CodebookEntry, overwrite: bool = False) -> Codebook:
    """Insert an entry; duplicate keys are replaced only with ``overwrite``."""
    if entry.scene_hash != book.scene_hash:
        raise CodebookError("entry scene hash does not match the codebook's scene hash")
    for i, existing in enumerate(book.entries):
        if existing.key == entry.key:
            if not overwrite:
                raise KeyConflictError(f"key already present: {entry.key}")
            book.entries[i] = entry
            return book
    book.entries.append(entry)
    return book


def _key_distance(entry_key: EntryKey, query: EntryKey) -> tuple[float, float]:
    tx_dist = float(
        np.linalg.norm(np.asarray(entry_key.transmitter) - np.asarray(query.transmitter))
    )
    centers = np.asarray(entry_key.focus_centers, dtype=float)
    targets = np.asarray(query.focus_centers, dtype=float)
    focus_dist = float(
        np.min(np.linalg.norm(centers[:, None, :] - targets[None, :, :], axis=2))
    )
    return tx_dist, focus_dist


def lookup(book: Codebook, query: EntryKey, tolerance: float) -> CodebookEntry | None:
    """Nearest entry by focus-center distance within ``tolerance``; the
    transmitter must also match within ``tolerance``.  Ties keep the earliest
    inserted entry; absence returns None."""
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    best = None
    best_dist = np.inf
    for entry in book.entries:
        tx_dist, focus_dist = _key_distance(entry.key, query)
        if tx_dist <= tolerance and focus_dist <= tolerance and focus_dist < best_dist:
            best = entry
            best_dist = focus_dist
    return best


def _pack_entry_payload(entry: CodebookEntry) -> bytes:
    parts = [struct.pack("<3d", *entry.key.transmitter)]
    parts.append(struct.pack("<I", len(entry.key.focus_centers)))
    for center in entry.key.focus_centers:
        parts.append(struct.pack("<3d", *center))
    parts.append(struct.pack("<2d", entry.key.radius, entry.key.frequency))
    phases = np.ascontiguousarray(entry.phases, dtype="<f8")
    parts.append(struct.pack("<I", phases.shape[0]))
    parts.append(phases.tobytes())
    m = entry.metrics
    parts.append(
        struct.pack(
            "<6d", m.eta_focus, m.eta_dir_out, m.eta_unexp, m.mean_focus, m.mean_outer, m.focal_energy
        )
    )
    parts.append(struct.pack("<qq", entry.seed, entry.created_at))
    parts.append(struct.pack("<I", len(entry.stage_summary)))
    for name, eta_focus, eta_dir_out, eta_unexp in entry.stage_summary:
        encoded = name.encode("ascii")
        parts.append(struct.pack("<B", len(encoded)) + encoded)
        parts.append(struct.pack("<3d", eta_focus, eta_dir_out, eta_unexp))
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, offset: int = 0):
        self.raw = raw
        self.offset = offset

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.raw):
            raise CodebookError("truncated codebook file")
        out = self.raw[self.offset : self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse_entry_payload(payload: bytes, scene_hash: bytes) -> CodebookEntry:
    reader = _Reader(payload)
    tx = reader.unpack("<3d")
    (n_centers,) = reader.unpack("<I")
    centers = tuple(reader.unpack("<3d") for _ in range(n_centers))
    radius, frequency = reader.unpack("<2d")
    (n_phases,) = reader.unpack("<I")
    phases = np.frombuffer(reader.take(8 * n_phases), dtype="<f8").copy()
    metrics = EnergyReport(*reader.unpack("<6d"))
    seed, created_at = reader.unpack("<qq")
    (n_stages,) = reader.unpack("<I")
    summary = []
    for _ in range(n_stages):
        (name_len,) = reader.unpack("<B")
        name = reader.take(name_len).decode("ascii")
        summary.append((name, *reader.unpack("<3d")))
    if reader.offset != len(payload):
        raise CodebookError("entry payload has trailing bytes")
    return CodebookEntry(
        key=EntryKey(transmitter=tx, focus_centers=centers, radius=radius, frequency=frequency),
        phases=phases,
        scene_hash=scene_hash,
        seed=seed,
        metrics=metrics,
        created_at=created_at,
        stage_summary=summary,
    )


def save(book: Codebook, path: str | Path) -> None:
    blob = [struct.pack("<4sH32sI", MAGIC, book.version, book.scene_hash, len(book.entries))]
    for entry in book.entries:
        payload = _pack_entry_payload(entry)
        blob.append(struct.pack("<I", len(payload)))
        blob.append(payload)
        blob.append(struct.pack("<I", crc32c(payload)))
    Path(path).write_bytes(b"".join(blob))


def load(path: str | Path) -> Codebook:
    reader = _Reader(Path(path).read_bytes())
    magic, version, scene_hash, count = reader.unpack("<4sH32sI")
    if magic != MAGIC:
        raise CodebookError("not a codebook file (bad magic)")
    if version > FORMAT_VERSION:
        raise CodebookVersionError(
            f"codebook format version {version} is newer than supported {FORMAT_VERSION}"
        )
    entries = []
    for index in range(count):
        (payload_len,) = reader.unpack("<I")
        payload = reader.take(payload_len)
        (stored_crc,) = reader.unpack("<I")
        if crc32c(payload) != stored_crc:
            raise CodebookIntegrityError(f"entry {index}: checksum mismatch")
        entries.append(_parse_entry_payload(payload, scene_hash))
    if reader.offset != len(reader.raw):
        raise CodebookError("codebook file has trailing bytes")
    return Codebook(scene_hash=scene_hash, entries=entries, version=version)


def to_json_dict(book: Codebook, include_phases: bool = True) -> dict:
    """Human-readable mirror of the binary content."""
    entries = []
    for entry in book.entries:
        payload = {
            "key": {
                "transmitter": list(entry.key.transmitter),
                "focus_centers": [list(c) for c in entry.key.focus_centers],
                "radius": entry.key.radius,
                "frequency": entry.key.frequency,
            },
            "seed": entry.seed,
            "created_at": entry.created_at,
            "metrics": {**entry.metrics.as_dict(), "focal_energy": entry.metrics.focal_energy},
            "stage_summary": [
                {"name": name, "eta_focus": ef, "eta_dirOut": ed, "eta_unexp": eu}
                for name, ef, ed, eu in entry.stage_summary
            ],
            "phase_count": int(entry.phases.shape[0]),
        }
        if include_phases:
            payload["phases"] = [float(p) for p in entry.phases]
        entries.append(payload)
    return {
        "schema_version": 1,
        "format_version": book.version,
        "scene_hash": book.scene_hash.hex(),
        "entries": entries,
    }


def export_json(book: Codebook, path: str | Path, include_phases: bool = True) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(to_json_dict(book, include_phases=include_phases), handle, indent=2, sort_keys=True)
        handle.write("\n")
