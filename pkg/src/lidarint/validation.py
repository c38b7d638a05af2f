"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DataError, GridMismatchError, ModalityUnavailableError
from .projection import SphericalImage, channel_names


def check_frames(frames, combo=None, require_target: bool = True):
    """Validate a frame sequence; returns (H, W).

    All frames must be spherical images on the same grid. With ``combo``
    given, every frame must carry the combo's channels; with
    ``require_target`` they must also carry intensity and mask planes.
    """
    frames = list(frames)
    if not frames:
        raise DataError("empty frame sequence")
    first = frames[0]
    if not isinstance(first, SphericalImage):
        raise DataError(f"expected SphericalImage frames, got {type(first).__name__}")
    shape = first.shape
    needed = list(channel_names(combo)) if combo is not None else []
    if require_target:
        needed += ["intensity", "mask"]
    for i, frame in enumerate(frames):
        if frame.shape != shape:
            raise GridMismatchError(
                f"frame {i} grid {frame.shape} differs from {shape}"
            )
        missing = [name for name in needed if name not in frame.channels]
        if missing:
            raise ModalityUnavailableError(f"frame {i} lacks channels {missing}")
    return shape


def check_positive(value, name: str):
    if value is None or value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def check_fraction(value, name: str):
    if not 0.0 <= value < 1.0:
        raise ConfigError(f"{name} must lie in [0, 1), got {value}")
    return value


def as_plane(arr, shape, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.shape != tuple(shape):
        raise DataError(f"{name} shape {arr.shape} does not match grid {tuple(shape)}")
    return arr
