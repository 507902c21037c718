"""Directory container: ``meta.json`` plus raw little-endian float64 arrays.

Every array ``name`` lives in ``name.f64`` (row-major) and is described in
``meta.json`` by its shape and SHA-256 digest. Datasets, checkpoints and
response histories all share this layout.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

FORMAT = "pimionet-container"
VERSION = 1
_DTYPE = np.dtype("<f8")


class ContainerError(IOError):
    """Unreadable, corrupted or incompatible container."""


def _digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def write_container(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                    meta: Mapping | None = None, kind: str = "generic") -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {"format": FORMAT, "version": VERSION, "kind": kind, "arrays": {}}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=_DTYPE))
        raw = arr.tobytes(order="C")
        (path / f"{name}.f64").write_bytes(raw)
        header["arrays"][name] = {"shape": list(arr.shape), "sha256": _digest(raw)}
    header["meta"] = dict(meta or {})
    (path / "meta.json").write_text(json.dumps(header, indent=1, sort_keys=True), encoding="utf-8")
    return path


def read_header(path: str | os.PathLike, kind: str | None = None) -> dict:
    """Parse ``meta.json`` only; array payloads are not touched."""
    path = Path(path)
    try:
        header = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ContainerError(f"{path}: missing meta.json") from exc
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{path}: meta.json is not valid JSON") from exc
    if header.get("format") != FORMAT:
        raise ContainerError(f"{path}: not a {FORMAT} directory")
    if header.get("version") != VERSION:
        raise ContainerError(f"{path}: format version {header.get('version')} != {VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {header.get('kind')!r}")
    return header


def read_array(path: Path, name: str, spec: Mapping, verify: bool = True) -> np.ndarray:
    try:
        raw = (path / f"{name}.f64").read_bytes()
    except FileNotFoundError as exc:
        raise ContainerError(f"array {name!r}: file is missing") from exc
    shape = tuple(spec["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
    if len(raw) != expected:
        raise ContainerError(f"array {name!r}: {len(raw)} bytes, expected {expected} (truncated or padded)")
    if verify and _digest(raw) != spec["sha256"]:
        raise ContainerError(f"array {name!r}: checksum mismatch")
    return np.frombuffer(raw, dtype=_DTYPE).reshape(shape).copy()


def read_container(path: str | os.PathLike, names: Iterable[str] | None = None,
                   kind: str | None = None, verify: bool = True) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    header = read_header(path, kind)
    specs = header["arrays"]
    wanted = list(specs) if names is None else list(names)
    arrays = {}
    for name in wanted:
        if name not in specs:
            raise ContainerError(f"array {name!r} is not listed in meta.json")
        arrays[name] = read_array(path, name, specs[name], verify)
    return arrays, header["meta"]
