"""Flat binary checkpoint files.

Layout: the magic string ``FFORGE1``, then one record per array:
``u64 name length | UTF-8 name | u64 rank | rank * u64 extents |
float32 little-endian data``.  Arrays are stored as float32, so round
trips of float32 training state are bit-exact.

The training configuration travels in-band as a record named
``__config__`` whose float values are the UTF-8 bytes of the config text
(each byte is exactly representable, so the text round-trips losslessly).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["CONFIG_KEY", "MAGIC", "CheckpointError", "load_checkpoint", "save_checkpoint"]

MAGIC = b"FFORGE1"
CONFIG_KEY = "__config__"


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable or malformed."""


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    config_text: str | None = None) -> None:
    items = dict(arrays)
    if config_text is not None:
        encoded = np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8)
        items[CONFIG_KEY] = encoded.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in items.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<Q", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str | None]:
    """Read a checkpoint; returns (arrays, config text or None)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")

    arrays: dict[str, np.ndarray] = {}
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path} is truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(count * 4), dtype="<f4").reshape(shape)
        arrays[name] = data.astype(np.float32)

    config_text = None
    if CONFIG_KEY in arrays:
        config_bytes = arrays.pop(CONFIG_KEY)
        config_text = config_bytes.astype(np.uint8).tobytes().decode("utf-8")
    return arrays, config_text
