"""On-disk formats: video files, latent files, checkpoints, manifests, logs.

Binary layouts (all integers little-endian u32, all floats little-endian
float32):

  video file    magic b"HVID" | T | H | W   then T*H*W*3 floats in [0,1]
  latent file   magic b"HLAT" | T | k | 0   then T*k floats
  checkpoint    magic b"HCKP" | header_len  then `header_len` bytes of UTF-8
                JSON {stage, config, epoch, params: {name: {shape, offset}}}
                followed by one float32 blob holding every parameter at its
                element offset

Every read of a video or latent file is recorded in ``access_log`` so tests
can assert which stages touch pixel data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

VIDEO_MAGIC = b"HVID"
LATENT_MAGIC = b"HLAT"
CHECKPOINT_MAGIC = b"HCKP"
FORMAT_VERSION = "1"

# (kind, path) tuples appended on every binary read; tests reset and inspect.
access_log: list[tuple[str, str]] = []


def reset_access_log() -> None:
    access_log.clear()


def _read_header(f, magic: bytes, path: Path) -> tuple[int, int, int]:
    head = f.read(16)
    if len(head) != 16 or head[:4] != magic:
        raise DataError(f"{path}: not a {magic.decode()} file")
    return struct.unpack("<III", head[4:16])


def write_video(path: str | Path, frames: np.ndarray) -> None:
    """Write a T*H*W*3 float array in [0,1] as an HVID file."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ShapeError(f"expected T*H*W*3 frames, got {frames.shape}")
    t, h, w, _ = frames.shape
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(VIDEO_MAGIC + struct.pack("<III", t, h, w))
            f.write(frames.tobytes(order="C"))
    except OSError as e:
        raise DataError(f"cannot write video file {path}: {e}") from e


def read_video(path: str | Path) -> np.ndarray:
    path = Path(path)
    access_log.append(("video", str(path)))
    try:
        with open(path, "rb") as f:
            t, h, w = _read_header(f, VIDEO_MAGIC, path)
            data = np.frombuffer(f.read(t * h * w * 3 * 4), dtype="<f4")
    except OSError as e:
        raise DataError(f"cannot read video file {path}: {e}") from e
    if data.size != t * h * w * 3:
        raise DataError(f"{path}: truncated video payload")
    return data.reshape(t, h, w, 3).astype(np.float32)


def write_latents(path: str | Path, seq: np.ndarray) -> None:
    """Write a T*k float array as an HLAT file."""
    seq = np.asarray(seq, dtype=np.float32)
    if seq.ndim != 2:
        raise ShapeError(f"expected T*k latents, got {seq.shape}")
    t, k = seq.shape
    with open(path, "wb") as f:
        f.write(LATENT_MAGIC + struct.pack("<III", t, k, 0))
        f.write(seq.tobytes(order="C"))


def read_latents(path: str | Path) -> np.ndarray:
    path = Path(path)
    access_log.append(("latent", str(path)))
    with open(path, "rb") as f:
        t, k, _ = _read_header(f, LATENT_MAGIC, path)
        data = np.frombuffer(f.read(t * k * 4), dtype="<f4")
    if data.size != t * k:
        raise DataError(f"{path}: truncated latent payload")
    return data.reshape(t, k).astype(np.float32)


def write_json(path: str | Path, obj) -> None:
    """Canonical JSON (sorted keys) so identical content is byte-identical."""
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def read_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path) as f:
        return json.load(f)


# -----------------------------------------------------------------------------
# Checkpoints
# -----------------------------------------------------------------------------

def save_checkpoint(path: str | Path, stage: str, config: dict, epoch: int,
                    params: dict[str, np.ndarray]) -> None:
    """Serialize named parameter arrays with a JSON header and float32 blob."""
    registry = {}
    offset = 0
    names = sorted(params)
    for name in names:
        arr = np.asarray(params[name], dtype=np.float32)
        registry[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size
    header = json.dumps(
        {"stage": stage, "config": config, "epoch": epoch, "params": registry},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header)))
        f.write(header)
        for name in names:
            f.write(np.asarray(params[name], dtype="<f4").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[str, dict, int, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint: {path}")
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) != 8 or head[:4] != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<I", head[4:8])
        meta = json.loads(f.read(header_len).decode("utf-8"))
        blob = np.frombuffer(f.read(), dtype="<f4")
    params = {}
    for name, entry in meta["params"].items():
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        off = entry["offset"]
        if off + size > blob.size:
            raise DataError(f"{path}: parameter {name} extends past blob end")
        params[name] = blob[off:off + size].reshape(shape).copy()
    return meta["stage"], meta["config"], meta["epoch"], params


class TrainingLog:
    """JSON-lines training log, one object per epoch."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._f = open(self.path, "w")

    def write(self, record: dict) -> None:
        self._f.write(json.dumps(record, sort_keys=True) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_training_log(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
