"""Separate a multichannel WAV into one mono WAV per requested DOA."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..dsp import Waveform, read_wav, write_wav
from .system import SeparationSystem


def separate_waveform(model: SeparationSystem, mixture: np.ndarray, doas) -> np.ndarray:
    """mixture [M, N] -> estimates [len(doas), N] in the order the DOAs were given.

    Slots are filled in ascending-DOA order; unused slots get the padding DOA
    and their outputs are discarded.
    """
    doas = [float(d) for d in doas]
    M = model.cfg.num_mics
    if mixture.ndim != 2 or mixture.shape[0] != M:
        raise ValueError(f"input has {mixture.shape[0] if mixture.ndim == 2 else '?'} channels; "
                         f"the checkpoint expects {M}")
    if not 1 <= len(doas) <= model.cfg.num_speakers:
        raise ValueError(f"need 1..{model.cfg.num_speakers} DOAs, got {len(doas)}")
    if any(not 0 <= d <= 180 for d in doas):
        raise ValueError("DOA must lie in [0, 180] degrees")
    order = np.argsort(doas, kind="stable")
    est = model.separate_arrays(mixture[None], [[doas[i] for i in order]], system="network")[0]
    out = np.empty((len(doas), mixture.shape[-1]))
    for slot, i in enumerate(order):
        out[i] = est[slot]
    return out


def separate(checkpoint, wav_in, doas, out_dir=None) -> list[Path]:
    """Write ``<stem>_spk<k>_doa<deg>.wav`` for each DOA; returns the paths."""
    model = SeparationSystem.load(checkpoint) if not isinstance(checkpoint, SeparationSystem) else checkpoint
    wav_in = Path(wav_in)
    w = read_wav(wav_in)
    if w.sample_rate != model.cfg.stft.sample_rate:
        raise ValueError(f"sample rate {w.sample_rate} != model's {model.cfg.stft.sample_rate}")
    est = separate_waveform(model, w.samples.astype(np.float64), doas)
    out_dir = Path(out_dir) if out_dir else wav_in.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, (d, x) in enumerate(zip(doas, est)):
        p = out_dir / f"{wav_in.stem}_spk{k + 1}_doa{float(d):g}.wav"
        write_wav(p, Waveform(x[None], w.sample_rate))
        paths.append(p)
    return paths
