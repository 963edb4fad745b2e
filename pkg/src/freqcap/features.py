"""Precomputed video features and their binary file format.

File layout (little-endian): ``K: u32, d_v: u32, modalities: u32 (= 2)``
followed by the image block then the motion block, each ``K x d_v``
float32 row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<III")
N_MODALITIES = 2


class FeatureError(ValueError):
    pass


@dataclass
class VideoFeatures:
    image: np.ndarray
    motion: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.motion = np.asarray(self.motion, dtype=np.float32)
        if self.image.ndim != 2 or self.image.shape != self.motion.shape:
            raise FeatureError(
                f"modality shape mismatch: image {self.image.shape} vs motion {self.motion.shape}"
            )
        if not (np.isfinite(self.image).all() and np.isfinite(self.motion).all()):
            raise FeatureError("non-finite feature values")

    @property
    def K(self) -> int:
        return self.image.shape[0]

    @property
    def d_v(self) -> int:
        return self.image.shape[1]


def write_features(feats: VideoFeatures, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(feats.K, feats.d_v, N_MODALITIES))
        fh.write(feats.image.astype("<f4").tobytes())
        fh.write(feats.motion.astype("<f4").tobytes())


def read_features(path: str | Path) -> VideoFeatures:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureError(f"{path}: truncated header")
    k, d_v, mods = _HEADER.unpack_from(raw)
    if mods != N_MODALITIES:
        raise FeatureError(f"{path}: expected {N_MODALITIES} modalities, found {mods}")
    n = k * d_v
    expected = _HEADER.size + 4 * n * mods
    if len(raw) != expected:
        raise FeatureError(f"{path}: size {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    return VideoFeatures(data[:n].reshape(k, d_v), data[n:].reshape(k, d_v))
