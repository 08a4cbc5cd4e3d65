"""Scale-invariant SNR, as a report metric and as a differentiable loss."""

from __future__ import annotations

import warnings

import numpy as np

from ..autodiff import functional as AF
from ..autodiff.engine import Tensor, as_tensor

SI_SNR_EPS = 1e-8
SI_SNR_CLAMP = 60.0


def si_snr(est, ref, clamp: bool = True) -> float:
    """Si-SNR in dB of a single-channel estimate against its reference."""
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    ref = ref - ref.mean()
    if not np.any(ref):
        raise ValueError("reference is all zero")
    est = est - est.mean()
    target = (est @ ref) / (ref @ ref) * ref
    err = est - target
    num = target @ target
    with np.errstate(divide="ignore"):
        val = 10 * np.log10(num / (err @ err + SI_SNR_EPS)) if num > 0 else -np.inf
    return float(np.clip(val, -SI_SNR_CLAMP, SI_SNR_CLAMP)) if clamp else float(val)


def si_snr_graph(est, ref: np.ndarray) -> Tensor:
    """Differentiable Si-SNR over the last axis; ``ref`` is constant.

    A small floor is also added to the target energy so an all-zero estimate
    has a finite value and gradient.
    """
    est = as_tensor(est)
    ref = np.asarray(ref, dtype=est.dtype)
    ref = ref - ref.mean(axis=-1, keepdims=True)
    ref_energy = np.maximum(np.sum(ref * ref, axis=-1, keepdims=True), SI_SNR_EPS)
    est = est - AF.mean(est, axis=-1, keepdims=True)
    scale = AF.sum(est * ref, axis=-1, keepdims=True) / ref_energy
    target = scale * ref
    err = est - target
    num = AF.sum(target * target, axis=-1) + SI_SNR_EPS
    den = AF.sum(err * err, axis=-1) + SI_SNR_EPS
    return 10.0 * AF.log10(num / den)


def active_weights(active: np.ndarray) -> np.ndarray:
    """Per-slot weights averaging over active slots, then over utterances.

    Utterances with no active slot get zero weight (and a warning).
    """
    active = np.asarray(active, dtype=np.float64)
    counts = active.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        warnings.warn("utterance with no active speaker excluded from the loss", RuntimeWarning)
    n_utt = max(int(np.sum(counts > 0)), 1)
    return np.where(counts > 0, active / np.maximum(counts, 1), 0.0) / n_utt


def si_snr_loss(estimates, references: np.ndarray, active: np.ndarray) -> Tensor:
    """Negative Si-SNR averaged over active slots, then over the batch.

    estimates: [B, C, N] tensor; references: [B, C, N]; active: [B, C] bool.
    """
    refs = np.asarray(references)
    safe_refs = refs.copy()
    # inactive slots hold silence; give them a dummy reference so the graph stays finite
    safe_refs[~np.asarray(active, bool)] = 1.0
    vals = si_snr_graph(estimates, safe_refs)
    w = active_weights(active).astype(vals.dtype)
    return -AF.sum(vals * w)
