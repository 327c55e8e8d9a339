"""
UNOT tensor files and manifest directories, shared by every artifact the toolkit writes.

UNOT layout: magic b"UNOT", version u16 LE, dtype code u8 (0 = float64), rank u8,
rank x u64 LE dims, row-major little-endian payload.

A manifest directory holds ``manifest.json`` plus one ``<name>.unot`` file per
tensor listed in the manifest.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from uno_errors import (
    MagicMismatchError,
    ManifestError,
    MissingCheckpointError,
    TensorFormatError,
    TruncatedPayloadError,
    VersionUnsupportedError,
)

MAGIC = b"UNOT"
UNOT_VERSION = 1
DTYPE_FLOAT64 = 0
MANIFEST_VERSION = 1
MANIFEST_FILE = "manifest.json"

_HEADER = struct.Struct("<HBB")


def encode_tensor(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f8")
    if arr.ndim > 255:
        raise TensorFormatError(f"rank {arr.ndim} exceeds the UNOT limit of 255")
    header = MAGIC + _HEADER.pack(UNOT_VERSION, DTYPE_FLOAT64, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + arr.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < len(MAGIC):
        raise TruncatedPayloadError(f"{len(buf)} bytes is shorter than the UNOT magic")
    if buf[:4] != MAGIC:
        raise MagicMismatchError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 4 + _HEADER.size:
        raise TruncatedPayloadError("UNOT header truncated")
    version, dtype, rank = _HEADER.unpack_from(buf, 4)
    if version != UNOT_VERSION:
        raise VersionUnsupportedError(f"UNOT version {version} unsupported (expected {UNOT_VERSION})")
    if dtype != DTYPE_FLOAT64:
        raise VersionUnsupportedError(f"UNOT dtype code {dtype} unsupported (expected {DTYPE_FLOAT64})")
    offset = 4 + _HEADER.size
    if len(buf) < offset + 8 * rank:
        raise TruncatedPayloadError("UNOT dims truncated")
    dims = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = offset + 8 * count
    if len(buf) < expected:
        raise TruncatedPayloadError(f"UNOT payload has {len(buf) - offset} bytes, expected {8 * count}")
    if len(buf) > expected:
        raise TensorFormatError(f"UNOT payload has {len(buf) - expected} trailing bytes")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims)


def save_tensor(path: Path, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(array))
    return path


def load_tensor(path: Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ----------------------------
# Manifest directories
# ----------------------------

class TensorManifest(BaseModel):
    """Fields every manifest carries; subclasses add their own."""

    model_config = ConfigDict(extra="forbid")

    kind: str
    format_version: int = MANIFEST_VERSION
    tensors: List[str] = []


ManifestT = TypeVar("ManifestT", bound=TensorManifest)


def _tensor_path(directory: Path, name: str) -> Path:
    return Path(directory) / f"{name}.unot"


def save_manifest_dir(directory: Path, manifest: TensorManifest, tensors: Mapping[str, np.ndarray]) -> Path:
    """Write tensors (sorted by name) and a manifest listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(tensors)
    for name in names:
        save_tensor(_tensor_path(directory, name), tensors[name])
    manifest = manifest.model_copy(update={"tensors": names})
    payload = json.dumps(manifest.model_dump(mode="json"), ensure_ascii=False, indent=2, sort_keys=True)
    (directory / MANIFEST_FILE).write_text(payload + "\n", encoding="utf-8")
    return directory


def read_manifest(directory: Path, model: Type[ManifestT]) -> ManifestT:
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_FILE} in {directory}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ManifestError(f"{path} must hold a JSON object")
    version = raw.get("format_version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise VersionUnsupportedError(f"manifest format_version {version} unsupported (expected {MANIFEST_VERSION})")
    try:
        manifest = model.model_validate(raw)
    except ValidationError as e:
        raise ManifestError(f"{path} does not match the {model.__name__} schema: {e.errors()[0]['msg']}") from e
    return manifest


def load_manifest_dir(directory: Path, model: Type[ManifestT]) -> Tuple[ManifestT, Dict[str, np.ndarray]]:
    manifest = read_manifest(directory, model)
    tensors: Dict[str, np.ndarray] = {}
    for name in manifest.tensors:
        path = _tensor_path(directory, name)
        if not path.exists():
            raise ManifestError(f"manifest lists tensor '{name}' but {path.name} is missing")
        tensors[name] = load_tensor(path)
    return manifest, tensors


def directory_digest(directory: Path) -> str:
    """SHA-256 over relative paths and contents of every file, in sorted order."""
    directory = Path(directory)
    h = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(directory)).encode("utf-8"))
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()


def manifest_kind(directory: Path) -> str:
    """The ``kind`` recorded in a manifest directory, without validating the rest."""
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise MissingCheckpointError(f"no checkpoint at {directory} ({MANIFEST_FILE} missing)")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict) or not isinstance(raw.get("kind"), str):
        raise ManifestError(f"{path} has no 'kind' field")
    return raw["kind"]
