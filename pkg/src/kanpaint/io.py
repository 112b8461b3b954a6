"""DKT1 tensor files, state directories, and checkpoints.

A DKT1 file is: the magic bytes ``DKT1``, a little-endian u32 rank, rank
little-endian u64 dimensions, then the row-major float32 payload. It is the
on-disk format for weights, images, and masks. A state directory is a set
of DKT1 files plus a plain-text ``manifest.txt`` whose ordered lines map
tensor names to shapes and file names. A checkpoint is a directory holding
a ``model`` and an ``ema`` state directory plus the run configuration text.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "write_tensor", "read_tensor", "save_state", "load_state",
    "save_checkpoint", "load_checkpoint_state",
]

MAGIC = b"DKT1"
MANIFEST = "manifest.txt"
CONFIG_FILE = "config.txt"


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a DKT1 file back as float64."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    shape = []
    for _ in range(rank):
        (dim,) = struct.unpack_from("<Q", raw, offset)
        shape.append(dim)
        offset += 8
    count = int(np.prod(shape)) if shape else 1
    if len(raw) - offset < count * 4:
        raise DataError(f"{path}: truncated payload")
    payload = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return payload.astype(np.float64).reshape(shape)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name)


def save_state(directory, state: dict[str, np.ndarray]) -> None:
    """Write an ordered name -> tensor mapping as DKT1 files plus manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, arr) in enumerate(state.items()):
        arr = np.asarray(arr)
        fname = f"{i:04d}_{_slug(name)}.dkt1"
        write_tensor(directory / fname, arr)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"{name}\t{dims}\t{fname}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def load_state(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise DataError(f"missing manifest: {manifest}")
    state: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{manifest}:{lineno}: malformed manifest line")
        name, dims, fname = parts
        arr = read_tensor(directory / fname)
        expected = tuple(int(d) for d in dims.split()) if dims else ()
        if arr.shape != expected:
            raise DataError(
                f"{manifest}:{lineno}: shape {arr.shape} does not match "
                f"manifest entry {expected}")
        state[name] = arr
    return state


def save_checkpoint(directory, model_state: dict[str, np.ndarray],
                    ema_state: dict[str, np.ndarray], config_text: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_state(directory / "model", model_state)
    save_state(directory / "ema", ema_state)
    (directory / CONFIG_FILE).write_text(config_text)


def load_checkpoint_state(directory
                          ) -> tuple[dict[str, np.ndarray],
                                     dict[str, np.ndarray], str]:
    directory = Path(directory)
    if not directory.exists():
        raise DataError(f"checkpoint not found: {directory}")
    config_path = directory / CONFIG_FILE
    if not config_path.exists():
        raise DataError(f"checkpoint missing {CONFIG_FILE}: {directory}")
    model_state = load_state(directory / "model")
    ema_state = load_state(directory / "ema")
    return model_state, ema_state, config_path.read_text()
