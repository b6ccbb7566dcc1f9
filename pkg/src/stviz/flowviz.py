"""Byte encoders for synthesized inputs and a minimal binary PPM writer."""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .tensor import as_tensor


@dataclass
class FlowVideo:
    frames: list[np.ndarray]  # each (H, W, 3) uint8
    scale: tuple[float, float]


def to_bytes_minmax(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map [lo, hi] -> [0, 255], rounding half up; lo == hi gives 128."""
    if hi == lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    y = np.floor((values - lo) / (hi - lo) * 255.0 + 0.5)
    return np.clip(y, 0, 255).astype(np.uint8)


def flow_channels(u, v):
    return np.stack([u, v, np.sqrt(u * u + v * v)], axis=-1)


def encode_flow(x_mot, normalization: str = "joint") -> FlowVideo:
    """R = horizontal, G = vertical, B = magnitude, min-max over the whole sequence.

    ``normalization="joint"`` uses one (min, max) across all three derived
    channels; ``"per_channel"`` normalizes R, G and B separately (the scale
    reported is then the joint range, for reference).
    """
    a = as_tensor(x_mot).data
    if a.shape[3] != 2:
        raise ShapeError(f"flow needs 2 channels (u, v), got {a.shape[3]}")
    rgb = flow_channels(a[..., 0], a[..., 1])  # (H, W, T, 3)
    lo, hi = float(rgb.min()), float(rgb.max())
    if normalization == "joint":
        out = to_bytes_minmax(rgb, lo, hi)
    elif normalization == "per_channel":
        out = np.stack([to_bytes_minmax(rgb[..., c], rgb[..., c].min(), rgb[..., c].max())
                        for c in range(3)], axis=-1)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return FlowVideo([out[:, :, k, :] for k in range(a.shape[2])], (lo, hi))


def encode_flow_hsv(x_mot) -> FlowVideo:
    """Direction as hue, magnitude (min-max over the sequence) as value."""
    a = as_tensor(x_mot).data
    if a.shape[3] != 2:
        raise ShapeError(f"flow needs 2 channels (u, v), got {a.shape[3]}")
    u, v = a[..., 0], a[..., 1]
    mag = np.sqrt(u * u + v * v)
    lo, hi = float(mag.min()), float(mag.max())
    val = np.full(mag.shape, 0.5) if hi == lo else (mag - lo) / (hi - lo)
    hue = (np.arctan2(v, u) / (2 * math.pi)) % 1.0
    H, W, T = mag.shape
    frames = []
    for k in range(T):
        f = np.empty((H, W, 3), dtype=np.uint8)
        for i in range(H):
            for j in range(W):
                rgb = colorsys.hsv_to_rgb(hue[i, j, k], 1.0, val[i, j, k])
                f[i, j] = [math.floor(c * 255.0 + 0.5) for c in rgb]
        frames.append(f)
    return FlowVideo(frames, (lo, hi))


def encode_appearance(x_app) -> np.ndarray:
    a = as_tensor(x_app).data
    if a.shape[2] != 1 or a.shape[3] != 3:
        raise ShapeError(f"appearance must be H x W x 1 x 3, got {a.shape}")
    img = a[:, :, 0, :]
    return to_bytes_minmax(img, float(img.min()), float(img.max()))


def ppm_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ShapeError(f"expected an (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    H, W = img.shape[:2]
    return f"P6\n{W} {H}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_ppm(path) -> np.ndarray:
    """Reader for exactly the files ``write_frames`` produces."""
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise FormatError("not a 'P6\\n<W> <H>\\n255\\n' file", offset=0, path=str(path))
    try:
        W, H = (int(t) for t in parts[1].split(b" "))
    except ValueError:
        raise FormatError("bad size line", offset=3, path=str(path)) from None
    body = parts[3]
    if len(body) != W * H * 3:
        raise FormatError(f"payload has {len(body)} bytes, expected {W * H * 3}",
                          offset=len(buf) - len(body), path=str(path))
    return np.frombuffer(body, dtype=np.uint8).reshape(H, W, 3).copy()


def write_frames(video, directory) -> list[Path]:
    """Write a FlowVideo (or a single image) as frame0000.ppm, frame0001.ppm, ..."""
    frames = video.frames if isinstance(video, FlowVideo) else [video]
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{d}: {exc}") from exc
    paths = []
    for k, f in enumerate(frames):
        p = d / f"frame{k:04d}.ppm"
        try:
            p.write_bytes(ppm_bytes(f))
        except OSError as exc:
            raise OSError(f"{p}: {exc}") from exc
        paths.append(p)
    return paths
