"""STFT analysis/synthesis plus audio containers with WAV I/O.

Framing convention: the signal is reflect-padded by ``fft_size // 2`` on both
sides, so frame ``t`` is centred on sample ``t * hop``.  Synthesis divides
the overlap-added frames by the overlap-added squared window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import check_COLA, get_window

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class Waveform:
    samples: np.ndarray  # [channels, num_samples]
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be [channels, num_samples] with >= 1 channel")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = s

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    window: str = "hann"
    hop: int | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE
    center: bool = True

    def __post_init__(self):
        if self.hop is None:
            object.__setattr__(self, "hop", self.fft_size // 2)
        if self.fft_size <= 0 or self.hop <= 0:
            raise ValueError("fft_size and hop must be positive")
        if self.fft_size % self.hop:
            raise ValueError("hop must divide fft_size")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        # fftbins=True gives the periodic (DFT-even) window
        return get_window(self.window, self.fft_size, fftbins=True).astype(np.float64)

    def is_cola(self) -> bool:
        return bool(check_COLA(self.window_array(), self.fft_size, self.fft_size - self.hop))

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate / self.fft_size

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "window": self.window, "hop": self.hop,
                "sample_rate": self.sample_rate, "center": self.center}


@dataclass
class MultiChannelSpectrogram:
    data: np.ndarray  # complex [T, F, M]
    config: StftConfig = field(default_factory=StftConfig)
    num_samples: int | None = None  # original signal length, for synthesis trimming

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("spectrogram data must be [T, F, M]")
        if self.data.shape[1] != self.config.num_bins:
            raise ValueError(f"expected {self.config.num_bins} bins, got {self.data.shape[1]}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


def frame_count(num_samples: int, cfg: StftConfig) -> int:
    """Number of frames ``stft`` produces for a signal of ``num_samples``."""
    if num_samples < 0:
        raise ValueError("num_samples must be >= 0")
    if num_samples == 0:
        return 0
    if cfg.center:
        return 1 + num_samples // cfg.hop
    if num_samples < cfg.fft_size:
        return 0
    return 1 + (num_samples - cfg.fft_size) // cfg.hop


def _pad(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if not cfg.center:
        return x
    half = cfg.fft_size // 2
    mode = "reflect" if x.shape[-1] > 1 else "constant"
    return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(half, half)], mode=mode)


def frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowless frames of a real signal: [..., N] -> [..., T, fft_size]."""
    xp = _pad(x, cfg)
    n_frames = frame_count(x.shape[-1], cfg)
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.fft_size)[None, :]
    return xp[..., idx]


def stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """STFT of real ``[..., N]`` signals -> complex ``[..., T, F]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("empty signal")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    fr = frames(x, cfg)
    if fr.shape[-2] == 0:
        raise ValueError("signal shorter than one frame")
    return np.fft.rfft(fr * cfg.window_array(), axis=-1)


def window_envelope(num_frames: int, cfg: StftConfig) -> np.ndarray:
    """Overlap-added squared synthesis window over the padded time axis."""
    w2 = cfg.window_array() ** 2
    n = cfg.fft_size + cfg.hop * (num_frames - 1)
    env = np.zeros(n)
    for t in range(num_frames):
        env[t * cfg.hop: t * cfg.hop + cfg.fft_size] += w2
    return env


def istft_array(X: np.ndarray, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft_array` for complex ``[..., T, F]`` input."""
    if not cfg.is_cola():
        raise ValueError(f"window {cfg.window!r} with hop {cfg.hop} is not COLA")
    T = X.shape[-2]
    win = cfg.window_array()
    fr = np.fft.irfft(X, n=cfg.fft_size, axis=-1) * win
    n = cfg.fft_size + cfg.hop * (T - 1)
    out = np.zeros(X.shape[:-2] + (n,))
    for t in range(T):
        out[..., t * cfg.hop: t * cfg.hop + cfg.fft_size] += fr[..., t, :]
    env = window_envelope(T, cfg)
    out = out / np.where(env > 1e-12, env, 1.0)
    start = cfg.fft_size // 2 if cfg.center else 0
    if length is None:
        length = cfg.hop * (T - 1) if cfg.center else n
    out = out[..., start: start + length]
    if out.shape[-1] < length:
        out = np.pad(out, [(0, 0)] * (out.ndim - 1) + [(0, length - out.shape[-1])])
    return out


def stft(w: Waveform, cfg: StftConfig | None = None) -> MultiChannelSpectrogram:
    cfg = cfg or StftConfig(sample_rate=w.sample_rate)
    X = stft_array(w.samples, cfg)  # [M, T, F]
    return MultiChannelSpectrogram(np.ascontiguousarray(X.transpose(1, 2, 0)), cfg, w.num_samples)


def istft(spec: MultiChannelSpectrogram, length: int | None = None) -> Waveform:
    length = length if length is not None else spec.num_samples
    x = istft_array(spec.data.transpose(2, 0, 1), spec.config, length)
    return Waveform(x, spec.config.sample_rate)


def parseval_weights(cfg: StftConfig) -> np.ndarray:
    """Per-bin weights making sum_f weight * |X_f|^2 equal fft_size * frame energy."""
    w = np.full(cfg.num_bins, 2.0)
    w[0] = 1.0
    if cfg.fft_size % 2 == 0:
        w[-1] = 1.0
    return w


# ---------------------------------------------------------------- WAV I/O

def read_wav(path) -> Waveform:
    """Read PCM-16 or float-32 WAV into a float64 [channels, samples] waveform."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    if x.ndim == 1:
        x = x[:, None]
    return Waveform(x.T, int(sr))


def write_wav(path, w: Waveform, subtype: str = "float32") -> None:
    """Write a waveform as ``"float32"`` or ``"pcm16"`` WAV."""
    x = w.samples.T
    if subtype == "float32":
        data = x.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(path, w.sample_rate, data)
