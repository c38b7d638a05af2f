"""Model checkpoint serialization.

Layout: magic ``LICKPT1\\n``, a u32-length-prefixed JSON descriptor (kind,
in_channels, widths, depth, modality combo, channel order, normalization
statistics, parameter shapes), then a u32 parameter count followed by
length-prefixed names, each with its tensor in the packed-channel binary
block (leading axes folded into the channel dimension; exact shapes are
restored from the descriptor). Everything is little-endian.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .exceptions import ConfigError, DataError
from .projection import LSI_MAGIC

MAGIC = b"LICKPT1\n"


def _param_block(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 1:
        c, h, w = arr.shape[0], 1, 1
    elif arr.ndim >= 2:
        h, w = arr.shape[-2], arr.shape[-1]
        c = int(np.prod(arr.shape[:-2], dtype=np.int64)) if arr.ndim > 2 else 1
        if arr.ndim == 2:
            c, h, w = 1, arr.shape[0], arr.shape[1]
    else:
        c, h, w = 1, 1, 1
    buf = io.BytesIO()
    buf.write(LSI_MAGIC)
    buf.write(struct.pack("<III", h, w, c))
    buf.write(struct.pack("<I", 0))  # no per-channel names for parameters
    buf.write(arr.tobytes())
    return buf.getvalue()


def _read_param_block(f) -> np.ndarray:
    if f.read(4) != LSI_MAGIC:
        raise DataError("corrupt checkpoint: bad tensor block magic")
    h, w, c = struct.unpack("<III", f.read(12))
    (n_names,) = struct.unpack("<I", f.read(4))
    for _ in range(n_names):
        (ln,) = struct.unpack("<I", f.read(4))
        f.read(ln)
    data = np.frombuffer(f.read(4 * c * h * w), dtype="<f4")
    if data.size != c * h * w:
        raise DataError("corrupt checkpoint: truncated tensor block")
    return data.copy()


def save_checkpoint(path, descriptor: dict, params: dict) -> None:
    """Write descriptor + named parameter tensors. Parameter order is sorted."""
    descriptor = dict(descriptor)
    descriptor["param_shapes"] = {name: list(arr.shape) for name, arr in params.items()}
    desc_raw = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(desc_raw)))
        f.write(desc_raw)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw_name)))
            f.write(raw_name)
            f.write(_param_block(params[name]))


def load_checkpoint(path):
    """Read (descriptor, {name: array}) back; shapes come from the descriptor."""
    try:
        handle = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with handle as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (desc_len,) = struct.unpack("<I", f.read(4))
        descriptor = json.loads(f.read(desc_len).decode("utf-8"))
        (n_params,) = struct.unpack("<I", f.read(4))
        shapes = descriptor.get("param_shapes", {})
        params = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            flat = _read_param_block(f)
            if name not in shapes:
                raise DataError(f"{path}: tensor {name} missing from descriptor")
            shape = tuple(shapes[name])
            if flat.size != int(np.prod(shape, dtype=np.int64)):
                raise DataError(f"{path}: tensor {name} size does not match descriptor")
            params[name] = flat.reshape(shape)
    return descriptor, params


def validate_descriptor_combo(descriptor: dict, combo_name_str: str) -> None:
    stored = descriptor.get("combo")
    if stored != combo_name_str:
        raise ConfigError(
            f"checkpoint was trained for combo {stored!r}, requested {combo_name_str!r}"
        )
