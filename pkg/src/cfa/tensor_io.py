"""On-disk feature tensor format and dataset manifests.

A tensor file stores one rank-3 (C, H, W) or rank-4 (C, T, H, W) float32
feature map:

    bytes 0..3    magic tag  b"CFAF"
    bytes 4..7    version    uint32 little-endian, currently 1
    byte  8       rank       uint8, 3 or 4
    next 4*rank   shape      uint32 little-endian extents, all >= 1
    rest          payload    float32 little-endian, row-major
                             (first axis slowest, last axis fastest)

A dataset manifest is a CSV text file with one record per line:

    relative/path/to/tensor.cfa,class_id,split

where split is one of base / validation / novel. Paths are resolved
relative to the manifest's own directory. Loading validates the manifest
eagerly but reads only each file's header, never the payload.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    DataError,
    ManifestError,
    PayloadMismatchError,
    TensorFormatError,
    TruncatedFileError,
)

MAGIC = b"CFAF"
VERSION = 1
SPLITS = ("base", "validation", "novel")

_HEAD = struct.Struct("<4sI B")  # magic, version, rank


def write_tensor(tensor: np.ndarray, path: str | os.PathLike) -> None:
    """Write a rank-3 or rank-4 feature map to `path`.

    The array is stored as little-endian float32; a float32 input round-trips
    bit-exactly. Non-finite values are rejected.
    """
    arr = np.asarray(tensor)
    if arr.ndim not in (3, 4):
        raise DataError(f"tensor rank must be 3 or 4, got {arr.ndim}")
    if any(e < 1 for e in arr.shape):
        raise DataError(f"all extents must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("tensor contains non-finite values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a feature map written by `write_tensor`.

    Returns a float32 array of the stored shape. Every malformed input is
    mapped to a specific TensorFormatError subclass; no byte sequence can
    crash the parser.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from None
    shape = _parse_header(data)
    payload = data[_payload_offset(len(shape)):]
    expected = 4 * int(np.prod([int(e) for e in shape], dtype=object))
    if len(payload) != expected:
        raise PayloadMismatchError(
            f"{path}: shape {shape} wants {expected} payload bytes, file has {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    return flat.reshape(shape)


def read_header(path: str | os.PathLike) -> tuple[int, ...]:
    """Read just the shape from a tensor file header."""
    max_header = _HEAD.size + 4 * 4
    try:
        with open(path, "rb") as fh:
            data = fh.read(max_header)
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from None
    return _parse_header(data)


def _payload_offset(rank: int) -> int:
    return _HEAD.size + 4 * rank


def _parse_header(data: bytes) -> tuple[int, ...]:
    if len(data) < _HEAD.size:
        raise TruncatedFileError(f"file too short for header ({len(data)} bytes)")
    magic, version, rank = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if rank not in (3, 4):
        raise TensorFormatError(f"rank must be 3 or 4, got {rank}")
    if len(data) < _payload_offset(rank):
        raise TruncatedFileError("file too short for declared shape")
    shape = struct.unpack_from(f"<{rank}I", data, _HEAD.size)
    if any(e < 1 for e in shape):
        raise TensorFormatError(f"zero extent in shape {shape}")
    return shape


@dataclass(frozen=True)
class ManifestRecord:
    path: Path  # resolved, absolute
    class_id: int
    split: str


@dataclass
class DatasetManifest:
    """Validated dataset: records plus the manifest-wide channel count.

    `channels` is None only for an empty manifest.
    """

    records: list[ManifestRecord]
    channels: int | None

    def split_records(self, split: str) -> list[ManifestRecord]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def classes_in_split(self, split: str) -> dict[int, list[ManifestRecord]]:
        """Class id -> records, ordered by class id then manifest order."""
        by_class: dict[int, list[ManifestRecord]] = {}
        for rec in self.split_records(split):
            by_class.setdefault(rec.class_id, []).append(rec)
        return dict(sorted(by_class.items()))

    @property
    def class_count(self) -> int:
        return len({r.class_id for r in self.records})


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and validate a manifest CSV.

    Rows are path,class_id,split with an optional leading header line.
    Eagerly checks that every referenced file parses as a tensor header with
    a uniform channel count, and that no class id appears in two splits.
    """
    path = Path(path)
    base_dir = path.parent
    records: list[ManifestRecord] = []
    split_of_class: dict[int, str] = {}
    channels: int | None = None

    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected path,class_id,split")
        rel, class_str, split = (p.strip() for p in parts)
        if lineno == 1 and (rel, class_str, split) == ("path", "class_id", "split"):
            continue
        try:
            class_id = int(class_str)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: bad class id {class_str!r}") from None
        if class_id < 0:
            raise ManifestError(f"{path}:{lineno}: negative class id {class_id}")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        seen = split_of_class.setdefault(class_id, split)
        if seen != split:
            raise ManifestError(
                f"{path}:{lineno}: class {class_id} appears in both {seen!r} and {split!r}"
            )
        sample = (base_dir / rel).resolve()
        shape = read_header(sample)
        if channels is None:
            channels = shape[0]
        elif shape[0] != channels:
            raise ManifestError(
                f"{path}:{lineno}: channel count {shape[0]} differs from {channels}"
            )
        records.append(ManifestRecord(sample, class_id, split))

    return DatasetManifest(records=records, channels=channels)
