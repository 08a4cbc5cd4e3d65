"""Estimator input features: LPS, IPD (cos/sin), steering vectors, directional features."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .acoustics import SPEED_OF_SOUND, ArrayGeometry
from .dsp import MultiChannelSpectrogram, StftConfig

LPS_FLOOR = 1e-10


@dataclass
class SteeringVector:
    values: np.ndarray  # complex [F, M]
    doa: float


@dataclass
class FeatureStack:
    lps: np.ndarray  # [T, F]
    ipd: np.ndarray  # [T, F, 2P]  cos planes then sin planes
    df: np.ndarray   # [T, F, C]

    def validate(self) -> None:
        for name in ("lps", "ipd", "df"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")
        P = self.ipd.shape[-1] // 2
        mag = self.ipd[..., :P] ** 2 + self.ipd[..., P:] ** 2
        if not np.allclose(mag, 1.0, atol=1e-9):
            raise ValueError("IPD cos/sin planes are not on the unit circle")
        if np.any(np.abs(self.df) > 1 + 1e-12):
            raise ValueError("directional features outside [-1, 1]")

    def concat(self) -> np.ndarray:
        """Per-frame estimator input [T, F*(1 + 2P + C)], frequency-major per plane."""
        T, F = self.lps.shape
        planes = [self.lps[..., None], self.ipd, self.df]
        stacked = np.concatenate(planes, axis=-1)  # [T, F, 1+2P+C]
        return stacked.transpose(0, 2, 1).reshape(T, -1)

    @property
    def width(self) -> int:
        F = self.lps.shape[1]
        return F * (1 + self.ipd.shape[-1] + self.df.shape[-1])


def default_pairs(num_mics: int) -> list[tuple[int, int]]:
    """Every mic paired with mic 0."""
    return [(0, m) for m in range(1, num_mics)]


def _phase(Y: np.ndarray) -> np.ndarray:
    # zero-magnitude bins get phase 0 (np.angle(0) == 0)
    return np.angle(Y)


def log_power_spectra(spec, ch: int = 0) -> np.ndarray:
    Y = spec.data if isinstance(spec, MultiChannelSpectrogram) else spec
    return np.log(np.abs(Y[..., ch]) ** 2 + LPS_FLOOR)


def ipd(spec, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """cos and sin of angle(Y_m1) - angle(Y_m2): [..., 2P], all cos planes first."""
    Y = spec.data if isinstance(spec, MultiChannelSpectrogram) else spec
    M = Y.shape[-1]
    for m1, m2 in pairs:
        if m1 == m2 or not (0 <= m1 < M and 0 <= m2 < M):
            raise ValueError(f"invalid mic pair ({m1}, {m2})")
    ph = _phase(Y)
    d = np.stack([ph[..., m1] - ph[..., m2] for m1, m2 in pairs], axis=-1)
    return np.concatenate([np.cos(d), np.sin(d)], axis=-1)


def steering_vector(doa_deg: float, geometry: ArrayGeometry, cfg: StftConfig,
                    speed_of_sound: float = SPEED_OF_SOUND) -> SteeringVector:
    """Far-field plane-wave steering vector exp(-j 2 pi f x_m cos(theta) / c)."""
    if not 0 <= doa_deg <= 180:
        raise ValueError("DOA must lie in [0, 180] degrees")
    x = geometry.axis_coordinates()  # raises for non-collinear arrays
    tau = x * np.cos(np.deg2rad(doa_deg)) / speed_of_sound
    f = cfg.bin_frequencies()
    return SteeringVector(np.exp(-2j * np.pi * np.outer(f, tau)), float(doa_deg))


def directional_feature(spec, steering: SteeringVector,
                        pairs: Sequence[tuple[int, int]] | None = None) -> np.ndarray:
    """Mean over pairs of cos(steering phase difference - observed phase difference)."""
    Y = spec.data if isinstance(spec, MultiChannelSpectrogram) else spec
    M = Y.shape[-1]
    if steering.values.shape[-1] != M:
        raise ValueError("steering vector length does not match channel count")
    pairs = default_pairs(M) if pairs is None else pairs
    ph = _phase(Y)
    sv = np.angle(steering.values)  # [F, M]
    acc = np.zeros(Y.shape[:-1])
    for m1, m2 in pairs:
        acc += np.cos((sv[:, m1] - sv[:, m2]) - (ph[..., m1] - ph[..., m2]))
    return acc / len(pairs)


def feature_stack(spec, doas: Sequence[float], geometry: ArrayGeometry, cfg: StftConfig,
                  pairs: Sequence[tuple[int, int]] | None = None, ref_ch: int = 0) -> FeatureStack:
    """LPS of the reference channel, IPDs and one DF plane per requested DOA."""
    Y = spec.data if isinstance(spec, MultiChannelSpectrogram) else spec
    pairs = default_pairs(Y.shape[-1]) if pairs is None else pairs
    df = np.stack([directional_feature(Y, steering_vector(d, geometry, cfg), pairs) for d in doas], axis=-1)
    return FeatureStack(log_power_spectra(Y, ref_ch), ipd(Y, pairs), df)


def dump_tensor(path, arr: np.ndarray) -> None:
    """Flat binary dump: u32 rank, rank x u64 dims, u8 dtype code (0=f64, 1=f32), values LE."""
    code = {np.dtype("float64"): 0, np.dtype("float32"): 1}[arr.dtype]
    arr = np.array(arr, dtype=arr.dtype.newbyteorder("<"), order="C")
    hdr = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape) + struct.pack("<B", code)
    Path(path).write_bytes(hdr + arr.tobytes())


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (rank,) = struct.unpack_from("<I", buf, 0)
    dims = struct.unpack_from(f"<{rank}Q", buf, 4)
    off = 4 + 8 * rank
    (code,) = struct.unpack_from("<B", buf, off)
    dt = ("<f8", "<f4")[code]
    return np.frombuffer(buf, dtype=dt, offset=off + 1).reshape(dims).copy()
