"""Corpus loading and chunked mini-batches."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..acoustics import read_manifest
from ..dsp import read_wav

# chunks whose reference energy is below this are treated as silent slots
SILENT_ENERGY = 1e-8


@dataclass
class Utterance:
    uid: str
    mixture: np.ndarray   # [M, N]
    refs: np.ndarray      # [S, N] reverberant clean at the reference mic, ascending DOA
    doas: list
    sample_rate: int

    @property
    def num_samples(self) -> int:
        return self.mixture.shape[-1]


@dataclass
class Batch:
    ids: list
    mixture: np.ndarray   # [B, M, N]
    refs: np.ndarray      # [B, C, N], zeros on inactive slots
    active: np.ndarray    # [B, C] bool
    doas: list            # per utterance, active DOAs only


def load_utterance(row: dict, root, ref_channel: int = 0) -> Utterance:
    root = Path(root)
    mix = read_wav(root / row["paths"]["mixture"])
    refs = [read_wav(root / p).samples[ref_channel] for p in row["paths"]["refs"]]
    return Utterance(row["id"], mix.samples.astype(np.float64), np.stack(refs).astype(np.float64),
                     list(row["doas_deg"]), mix.sample_rate)


def load_corpus(manifest, ref_channel: int = 0) -> list[Utterance]:
    """Read every utterance listed in a manifest.jsonl (paths are relative to it)."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"manifest {manifest} not found")
    return [load_utterance(r, manifest.parent, ref_channel) for r in read_manifest(manifest)]


def load_multichannel_refs(manifest) -> dict:
    """Utterance id -> reverberant references at every mic [S, M, N] (for oracle masks)."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    out = {}
    for r in read_manifest(manifest):
        out[r["id"]] = np.stack([read_wav(manifest.parent / p).samples.astype(np.float64)
                                 for p in r["paths"]["refs"]])
    return out


def make_batch(items: list[tuple[Utterance, int]], chunk: int | None, num_slots: int) -> Batch:
    """Stack (utterance, start) pairs; ``chunk=None`` uses whole (equal-length) utterances."""
    n = chunk or max(u.num_samples for u, _ in items)
    M = items[0][0].mixture.shape[0]
    B = len(items)
    mix = np.zeros((B, M, n))
    refs = np.zeros((B, num_slots, n))
    active = np.zeros((B, num_slots), dtype=bool)
    doas = []
    for b, (u, start) in enumerate(items):
        if len(u.doas) > num_slots:
            raise ValueError(f"utterance {u.uid} has {len(u.doas)} speakers; model has {num_slots} slots")
        seg = u.mixture[:, start: start + n]
        mix[b, :, : seg.shape[-1]] = seg
        r = u.refs[:, start: start + n]
        refs[b, : r.shape[0], : r.shape[-1]] = r
        energy = np.sum(refs[b] ** 2, axis=-1)
        active[b, : r.shape[0]] = energy[: r.shape[0]] > SILENT_ENERGY
        doas.append(list(u.doas))
    return Batch([u.uid for u, _ in items], mix, refs, active, doas)


def chunk_index(utts: list[Utterance], chunk: int) -> list[tuple[int, int]]:
    """All non-overlapping (utterance index, start sample) chunks; short utterances give one."""
    out = []
    for i, u in enumerate(utts):
        starts = range(0, max(u.num_samples - chunk, 0) + 1, chunk)
        out += [(i, s) for s in starts]
    return out


def epoch_batches(utts: list[Utterance], chunk: int, batch_size: int, rng: np.random.Generator,
                  num_slots: int):
    """Shuffle all chunks with ``rng`` and yield batches (the last one may be smaller)."""
    idx = chunk_index(utts, chunk)
    order = rng.permutation(len(idx))
    for k in range(0, len(order), batch_size):
        items = [(utts[idx[j][0]], idx[j][1]) for j in order[k: k + batch_size]]
        yield make_batch(items, chunk, num_slots)
