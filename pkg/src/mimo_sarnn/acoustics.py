"""Image-source room simulation and multi-speaker scene/corpus synthesis.

Geometry conventions
--------------------
* Linear arrays lie along +x.  Mic 0 is the reference for all delays.
* A DOA of theta degrees means the arriving plane wave propagates along
  (cos theta, sin theta, 0); the direct-path delay of mic m relative to
  mic 0 is then (x_m - x_0) * cos(theta) / c.  Sources are placed at
  ``array_centre - r * (cos theta, sin theta, 0)``.
* Speakers within a scene are ordered by ascending DOA.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import DEFAULT_SAMPLE_RATE, Waveform, write_wav

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81
SABINE_CONSTANT = 0.1611
DEFAULT_MIC_X = (0.0, 0.04, 0.12, 0.28)


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray  # [M, 3] metres

    def __post_init__(self):
        p = np.asarray(self.mic_positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError("mic_positions must be [M, 3]")
        if p.shape[0] < 2:
            raise ValueError("need at least two microphones")
        d = np.linalg.norm(p[:, None] - p[None], axis=-1)
        if np.any(d[~np.eye(len(p), dtype=bool)] == 0):
            raise ValueError("microphone positions must be distinct")
        self.mic_positions = p

    @classmethod
    def linear(cls, x_positions: Sequence[float] = DEFAULT_MIC_X, origin=(0.0, 0.0, 0.0)):
        x = np.asarray(x_positions, dtype=np.float64)
        pos = np.zeros((len(x), 3)) + np.asarray(origin, dtype=np.float64)
        pos[:, 0] += x
        return cls(pos)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def centre(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    def is_linear(self, tol: float = 1e-9) -> bool:
        p = self.mic_positions - self.mic_positions[0]
        axis = p[np.argmax(np.linalg.norm(p, axis=1))]
        axis = axis / np.linalg.norm(axis)
        resid = p - np.outer(p @ axis, axis)
        return bool(np.all(np.linalg.norm(resid, axis=1) <= tol))

    def axis_coordinates(self) -> np.ndarray:
        """Mic positions projected onto the array axis, relative to mic 0."""
        if not self.is_linear():
            raise ValueError("array is not collinear")
        p = self.mic_positions - self.mic_positions[0]
        far = p[np.argmax(np.linalg.norm(p, axis=1))]
        axis = far / np.linalg.norm(far)
        # orient the axis along +x when possible so DOA angles keep their meaning
        if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
            axis = -axis
        return p @ axis

    def translated(self, offset) -> "ArrayGeometry":
        return ArrayGeometry(self.mic_positions + np.asarray(offset, dtype=np.float64))


@dataclass
class RoomSpec:
    dimensions: tuple  # (Lx, Ly, Lz) metres
    t60: float
    reflection_order: int | None = None  # None: derived from t60, capped at max_order
    speed_of_sound: float = SPEED_OF_SOUND
    max_order: int = 12

    def __post_init__(self):
        self.dimensions = tuple(float(d) for d in self.dimensions)
        if len(self.dimensions) != 3 or min(self.dimensions) <= 0:
            raise ValueError("room dimensions must be three positive extents")
        if self.t60 < 0:
            raise ValueError("t60 must be >= 0")
        if self.reflection_order is not None and self.reflection_order < 0:
            raise ValueError("reflection_order must be >= 0")

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dimensions
        return 2 * (lx * ly + lx * lz + ly * lz)

    def reflection_coefficient(self) -> float:
        """Uniform wall reflection coefficient from Sabine's formula."""
        if self.t60 == 0:
            return 0.0
        alpha = SABINE_CONSTANT * self.volume / (self.surface * self.t60)
        if alpha > 1:
            warnings.warn(f"t60={self.t60}s is below the Sabine limit for this room; "
                          "using an anechoic room", RuntimeWarning)
            return 0.0
        return math.sqrt(1.0 - alpha)

    def effective_order(self) -> int:
        if self.reflection_order is not None:
            return self.reflection_order
        if self.reflection_coefficient() == 0:
            return 0
        order = math.ceil(self.speed_of_sound * self.t60 / min(self.dimensions))
        return int(min(order, self.max_order))

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dimensions) - margin))


def image_sources(room: RoomSpec, src, mic) -> tuple[np.ndarray, np.ndarray]:
    """Delays (seconds) and amplitudes of all images up to the reflection order.

    Image position along each axis is ``(1 - 2u) * s + 2 n L`` and hits
    ``|n - u| + |n|`` walls; the amplitude is ``beta**hits / (4 pi d)``.
    """
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    order = room.effective_order()
    beta = room.reflection_coefficient()
    L = np.asarray(room.dimensions)
    n = np.arange(-order, order + 1)
    per_axis = []
    for ax in range(3):
        nn, uu = np.meshgrid(n, [0, 1], indexing="ij")
        nn, uu = nn.ravel(), uu.ravel()
        hits = np.abs(nn - uu) + np.abs(nn)
        keep = hits <= order
        coord = (1 - 2 * uu[keep]) * src[ax] + 2 * nn[keep] * L[ax]
        per_axis.append((coord, hits[keep]))
    (cx, hx), (cy, hy), (cz, hz) = per_axis
    hits = hx[:, None, None] + hy[None, :, None] + hz[None, None, :]
    keep = hits <= order
    dx = (cx - mic[0])[:, None, None]
    dy = (cy - mic[1])[None, :, None]
    dz = (cz - mic[2])[None, None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)[keep]
    hits = hits[keep]
    if np.any(dist == 0):
        raise ValueError("source and microphone coincide")
    amp = np.where(hits == 0, 1.0, beta ** hits.astype(np.float64)) / (4 * np.pi * dist)
    if beta == 0:
        nz = hits == 0
        dist, amp = dist[nz], amp[nz]
    order_idx = np.argsort(dist, kind="stable")
    return dist[order_idx] / room.speed_of_sound, amp[order_idx]


def fractional_delay_taps(delay: np.ndarray, taps: int = SINC_TAPS) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed sinc interpolation kernels for sample delays ``delay``.

    Returns integer sample indices [K, taps] and weights [K, taps].
    """
    half = taps // 2
    base = np.floor(delay).astype(np.int64)
    idx = base[:, None] + np.arange(-half, half + 1)[None, :]
    x = idx - delay[:, None]
    win = 0.5 * (1.0 + np.cos(np.pi * x / (half + 1)))
    win[np.abs(x) >= half + 1] = 0.0
    return idx, np.sinc(x) * win


def image_source_rir(room: RoomSpec, src, mic, sample_rate: int = DEFAULT_SAMPLE_RATE,
                     length: int | None = None) -> np.ndarray:
    """Room impulse response from ``src`` to ``mic`` by the image-source method."""
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    if np.allclose(src, mic):
        raise ValueError("source and microphone coincide")
    if not room.contains(src) or not room.contains(mic):
        raise ValueError("source and microphone must lie inside the room")
    delays, amps = image_sources(room, src, mic)
    d = delays * sample_rate
    idx, w = fractional_delay_taps(d)
    n = int(np.ceil(d.max())) + SINC_TAPS // 2 + 1 if length is None else int(length)
    h = np.zeros(n)
    vals = w * amps[:, None]
    ok = (idx >= 0) & (idx < n)
    np.add.at(h, idx[ok], vals[ok])
    return h


# ---------------------------------------------------------------- scenes

@dataclass
class SourceSpec:
    position: np.ndarray
    doa_deg: float


@dataclass
class SceneConfig:
    room: RoomSpec
    array: ArrayGeometry
    sources: list  # of SourceSpec
    sir_db: list = field(default_factory=list)  # level of source 0 over each source j>=1
    snr_db: float | None = 20.0  # None: no noise
    noise_kind: str = "diffuse-white"
    noise_position: np.ndarray | None = None
    seed: int = 0
    max_speakers: int = 3
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def validate(self) -> None:
        C = len(self.sources)
        if not 1 <= C <= self.max_speakers:
            raise ValueError(f"source count {C} outside [1, {self.max_speakers}]")
        doas = sorted(s.doa_deg for s in self.sources)
        if any(b - a < 1.0 for a, b in zip(doas, doas[1:])):
            raise ValueError("source DOAs must be at least 1 degree apart")
        for s in self.sources:
            if not self.room.contains(s.position):
                raise ValueError(f"source at {s.position} is outside the room")
        for p in self.array.mic_positions:
            if not self.room.contains(p):
                raise ValueError(f"microphone at {p} is outside the room")
        if len(self.sir_db) not in (0, C - 1):
            raise ValueError("sir_db needs one entry per interfering source")
        if self.noise_kind not in ("diffuse-white", "point-source"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")


@dataclass
class SceneOutput:
    mixture: Waveform
    reverberant_refs: list  # of Waveform, one per speaker
    noise: Waveform
    doas: list

    @property
    def num_speakers(self) -> int:
        return len(self.reverberant_refs)


def source_position(array: ArrayGeometry, doa_deg: float, distance: float) -> np.ndarray:
    th = np.deg2rad(doa_deg)
    return array.centre - distance * np.array([np.cos(th), np.sin(th), 0.0])


def _energy_db(x: np.ndarray) -> float:
    return 10 * np.log10(np.sum(x * x))


def simulate_scene(cfg: SceneConfig, dry: Sequence[np.ndarray]) -> SceneOutput:
    """Reverberant per-speaker images plus noise, and their sum at every mic."""
    cfg.validate()
    if len(dry) != len(cfg.sources):
        raise ValueError("one dry signal per source required")
    n = min(len(d) for d in dry)
    if n < 1:
        raise ValueError("dry signals are empty")
    rng = np.random.default_rng(cfg.seed)
    mics = cfg.array.mic_positions
    images = []
    for s, x in zip(cfg.sources, dry):
        x = np.asarray(x, dtype=np.float64)[:n]
        img = np.stack([fftconvolve(x, image_source_rir(cfg.room, s.position, m, cfg.sample_rate))[:n]
                        for m in mics])
        images.append(img)
    if cfg.sir_db:
        e0 = _energy_db(images[0])
        for j, sir in enumerate(cfg.sir_db, start=1):
            gain_db = e0 - sir - _energy_db(images[j])
            images[j] = images[j] * 10 ** (gain_db / 20)
    speech = images[0].copy()
    for img in images[1:]:
        speech = speech + img
    if cfg.snr_db is None:
        noise = np.zeros_like(speech)
    else:
        if cfg.noise_kind == "diffuse-white":
            noise = rng.standard_normal(speech.shape)
        else:
            pos = cfg.noise_position
            if pos is None:
                pos = rng.uniform(0.3, 1.0, 3) * (np.asarray(cfg.room.dimensions) - 0.6) + 0.3
            w = rng.standard_normal(n)
            noise = np.stack([fftconvolve(w, image_source_rir(cfg.room, pos, m, cfg.sample_rate))[:n]
                              for m in mics])
        gain_db = _energy_db(speech) - cfg.snr_db - _energy_db(noise)
        noise = noise * 10 ** (gain_db / 20)
    mixture = speech + noise
    sr = cfg.sample_rate
    return SceneOutput(Waveform(mixture, sr), [Waveform(i, sr) for i in images],
                       Waveform(noise, sr), [float(s.doa_deg) for s in cfg.sources])


def summed_references(scene: SceneOutput) -> np.ndarray:
    """Sum of reverberant references in speaker order (the canonical summation)."""
    out = scene.reverberant_refs[0].samples.copy()
    for r in scene.reverberant_refs[1:]:
        out = out + r.samples
    return out


def interfering_noise(scene: SceneOutput, i: int) -> Waveform:
    """Other speakers' reverberant speech plus background noise for speaker ``i``."""
    if not 0 <= i < scene.num_speakers:
        raise IndexError(f"speaker index {i} out of range")
    acc = scene.noise.samples.copy()
    for j, r in enumerate(scene.reverberant_refs):
        if j != i:
            acc = acc + r.samples
    return Waveform(acc, scene.noise.sample_rate)


# ---------------------------------------------------------------- dry sources

def synth_speech(num_samples: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Speech-like test signal: formant-shaped harmonic syllables separated by noise bursts or pauses."""
    f0_base = rng.uniform(90, 240)
    out = np.zeros(num_samples)
    t = 0
    while t < num_samples:
        seg = int(rng.uniform(0.08, 0.28) * sample_rate)
        kind = rng.choice(3, p=[0.65, 0.15, 0.2])
        end = min(t + seg, num_samples)
        L = end - t
        if kind == 0:
            f0 = f0_base * np.exp(np.cumsum(rng.normal(0, 0.002, L)))
            f0 *= np.linspace(1.0, rng.uniform(0.8, 1.2), L)
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate
            n_harm = int(min(30, (sample_rate / 2 - 200) // f0_base))
            k = np.arange(1, n_harm + 1)
            x = (np.sin(np.outer(phase, k) + rng.uniform(0, 2 * np.pi, n_harm)) / k).sum(axis=1)
            for fc in (rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2500, 3500)):
                r = 0.97
                a = [1, -2 * r * np.cos(2 * np.pi * fc / sample_rate), r * r]
                x = x + 0.5 * lfilter([1 - r], a, x)
        elif kind == 1:
            x = rng.standard_normal(L)
            x = x - 0.9 * np.concatenate([[0.0], x[:-1]])
            x *= 0.3
        else:
            x = np.zeros(L)
        env = np.sin(np.pi * np.linspace(0, 1, L)) ** 0.5 if L > 1 else np.ones(L)
        out[t:end] = x * env * rng.uniform(0.5, 1.0)
        t = end
    out -= out.mean()
    peak = np.max(np.abs(out))
    return out / peak * 0.5 if peak > 0 else out


# ---------------------------------------------------------------- corpus

@dataclass
class CorpusRecipe:
    room_min: tuple = (4.0, 4.0, 2.5)
    room_max: tuple = (10.0, 8.0, 6.0)
    t60: tuple = (0.05, 0.7)
    sir_db: tuple = (-6.0, 6.0)
    snr_db: tuple = (18.0, 30.0)
    speakers: tuple = (1, 3)
    duration_s: float = 4.0
    source_distance: tuple = (1.0, 2.5)
    min_doa_separation: float = 15.0
    mic_x: tuple = DEFAULT_MIC_X
    max_order: int = 12
    noise_kind: str = "diffuse-white"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def validate(self) -> None:
        for name in ("t60", "sir_db", "snr_db", "speakers", "source_distance"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"recipe range {name}: min {lo} > max {hi}")
        if any(a > b for a, b in zip(self.room_min, self.room_max)):
            raise ValueError("recipe room_min exceeds room_max")
        if self.speakers[0] < 1:
            raise ValueError("at least one speaker per utterance")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusRecipe":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def utterance_seed(corpus_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(corpus_seed), int(index)]).generate_state(1)[0])


def sample_scene_params(recipe: CorpusRecipe, seed: int) -> dict:
    """Draw every random scene parameter for one utterance from ``seed``."""
    rng = np.random.default_rng(seed)
    dims = [float(rng.uniform(a, b)) for a, b in zip(recipe.room_min, recipe.room_max)]
    t60 = float(rng.uniform(*recipe.t60))
    n_spk = int(rng.integers(recipe.speakers[0], recipe.speakers[1] + 1))
    array0 = ArrayGeometry.linear(recipe.mic_x)
    span = array0.mic_positions[:, 0].max()
    room = RoomSpec(dims, t60)
    # array roughly centred, height 1.2-1.6 m
    for _ in range(1000):
        origin = np.array([rng.uniform(0.3 * dims[0], 0.7 * dims[0] - span),
                           rng.uniform(0.55 * dims[1], 0.75 * dims[1]),
                           rng.uniform(1.2, min(1.6, dims[2] - 0.5))])
        array = array0.translated(origin)
        doas = []
        ok = True
        for _ in range(n_spk):
            for _ in range(1000):
                d = float(np.round(rng.uniform(0, 180), 1))
                if all(abs(d - e) >= recipe.min_doa_separation for e in doas):
                    doas.append(d)
                    break
            else:
                ok = False
        if not ok:
            continue
        doas.sort()
        dists = [float(rng.uniform(*recipe.source_distance)) for _ in doas]
        positions = [source_position(array, th, r) for th, r in zip(doas, dists)]
        if all(room.contains(p, margin=0.2) for p in positions):
            break
    else:
        raise RuntimeError("could not place sources inside the room")
    return {
        "room_dims": dims,
        "t60": t60,
        "doas_deg": doas,
        "source_distances": dists,
        "source_positions": [p.tolist() for p in positions],
        "mic_positions": array.mic_positions.tolist(),
        "sir_db": [float(rng.uniform(*recipe.sir_db)) for _ in range(n_spk - 1)],
        "snr_db": float(rng.uniform(*recipe.snr_db)),
        "dry_seeds": [int(s) for s in rng.integers(0, 2**31 - 1, n_spk)],
        "noise_seed": int(rng.integers(0, 2**31 - 1)),
    }


def scene_from_params(params: dict, recipe: CorpusRecipe, max_speakers: int = 3) -> tuple[SceneConfig, list]:
    n = int(round(recipe.duration_s * recipe.sample_rate))
    dry = [synth_speech(n, recipe.sample_rate, np.random.default_rng(s)) for s in params["dry_seeds"]]
    room = RoomSpec(params["room_dims"], params["t60"], max_order=recipe.max_order)
    cfg = SceneConfig(
        room=room,
        array=ArrayGeometry(np.asarray(params["mic_positions"])),
        sources=[SourceSpec(np.asarray(p), d) for p, d in zip(params["source_positions"], params["doas_deg"])],
        sir_db=list(params["sir_db"]),
        snr_db=params["snr_db"],
        noise_kind=recipe.noise_kind,
        seed=params["noise_seed"],
        max_speakers=max(max_speakers, len(params["doas_deg"])),
        sample_rate=recipe.sample_rate,
    )
    return cfg, dry


def generate_corpus(recipe: CorpusRecipe, n_utts: int, seed: int, out_dir,
                    write_audio: bool = True, prefix: str = "utt") -> list[dict]:
    """Simulate ``n_utts`` scenes into ``out_dir`` and write ``manifest.jsonl``.

    Each utterance's randomness derives from ``(seed, index)`` only.
    """
    recipe.validate()
    if n_utts < 0:
        raise ValueError("n_utts must be >= 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n_utts):
        useed = utterance_seed(seed, i)
        params = sample_scene_params(recipe, useed)
        uid = f"{prefix}{i:05d}"
        paths = {"mixture": f"{uid}_mix.wav",
                 "refs": [f"{uid}_s{k}.wav" for k in range(len(params["doas_deg"]))],
                 "noise": f"{uid}_noise.wav"}
        if write_audio:
            cfg, dry = scene_from_params(params, recipe)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                scene = simulate_scene(cfg, dry)
            write_wav(out / paths["mixture"], scene.mixture)
            for p, r in zip(paths["refs"], scene.reverberant_refs):
                write_wav(out / p, r)
            write_wav(out / paths["noise"], scene.noise)
        rows.append({"id": uid, "paths": paths, "seed": useed, "sample_rate": recipe.sample_rate,
                     **params})
    with open(out / "manifest.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    return rows


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
