"""Complex ratio filtering and frame-wise covariances, plus the MVDR baseline.

Array layouts (leading batch axes allowed everywhere):

* spectrogram ``Y``: complex ``[..., T, F, M]``
* filter taps: complex ``[..., T, F, M, 2L+1, 2L+1]``; tap ``[a, b]`` weights
  ``Y(t + a - L, f + b - L)``.  A channel axis of length 1 shares one filter
  across microphones.
* covariance: complex ``[..., T, F, M, M]``
* beamformer weights: complex ``[..., T, F, M, C]``

The ``*_graph`` variants implement the same maths on (real, imag) tensor
pairs so the end-to-end network can be differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import functional as AF
from .autodiff.engine import Tensor

COV_FLOOR = 1e-10
DIAG_LOAD = 1e-5
DEGENERATE_TRACE = 1e-12


@dataclass
class ComplexRatioFilter:
    taps: np.ndarray  # complex [..., T, F, M, 2L+1, 2L+1]

    def __post_init__(self):
        k = self.taps.shape[-1]
        if k != self.taps.shape[-2] or k % 2 == 0:
            raise ValueError("filter taps must be square with odd size 2L+1")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("non-finite filter taps")

    @property
    def context(self) -> int:
        return self.taps.shape[-1] // 2

    @property
    def center(self) -> np.ndarray:
        """The (0, 0) tap, i.e. the complex ratio mask."""
        L = self.context
        return self.taps[..., L, L]


@dataclass
class CovarianceSequence:
    matrices: np.ndarray  # complex [..., T, F, M, M]


@dataclass
class BeamformerWeights:
    w: np.ndarray  # complex [..., T, F, M, C]

    @property
    def num_speakers(self) -> int:
        return self.w.shape[-1]


# ---------------------------------------------------------------- numpy

def tf_patches(Y: np.ndarray, L: int) -> np.ndarray:
    """Zero-padded TF neighbourhoods: [..., T, F, M] -> [..., T, F, M, (2L+1)^2].

    Patch index ``a * (2L+1) + b`` holds ``Y(t + a - L, f + b - L)``.
    """
    T, F = Y.shape[-3], Y.shape[-2]
    pad = [(0, 0)] * (Y.ndim - 3) + [(L, L), (L, L), (0, 0)]
    Yp = np.pad(Y, pad)
    K = 2 * L + 1
    out = np.empty(Y.shape + (K * K,), dtype=Y.dtype)
    for a in range(K):
        for b in range(K):
            out[..., a * K + b] = Yp[..., a: a + T, b: b + F, :]
    return out


def apply_crf(Y: np.ndarray, crf: ComplexRatioFilter | np.ndarray) -> np.ndarray:
    taps = crf.taps if isinstance(crf, ComplexRatioFilter) else np.asarray(crf)
    K = taps.shape[-1]
    if taps.shape[-5:-3] != Y.shape[-3:-1] or taps.shape[-3] not in (1, Y.shape[-1]):
        raise ValueError(f"filter shape {taps.shape} does not match spectrogram {Y.shape}")
    P = tf_patches(Y, K // 2)
    return np.sum(taps.reshape(taps.shape[:-2] + (K * K,)) * P, axis=-1)


def covariance(S_hat: np.ndarray, crm_center: np.ndarray) -> CovarianceSequence:
    """Frame-wise outer products normalised by the utterance mask energy per bin."""
    if S_hat.shape[-3] == 0:
        raise ValueError("no frames")
    denom = np.sum(np.abs(crm_center) ** 2, axis=(-3, -1))  # [..., F]
    if crm_center.shape[-1] == 1 and S_hat.shape[-1] > 1:
        denom = denom * S_hat.shape[-1]  # shared mask counts once per channel
    denom = np.maximum(denom, COV_FLOOR)
    outer = S_hat[..., :, None] * S_hat[..., None, :].conj()
    return CovarianceSequence(outer / denom[..., None, :, None, None])


def concat_cov(phi_s, phi_n) -> np.ndarray:
    """[Phi_S1, Phi_N1, ..., Phi_SC, Phi_NC] as real features [..., T, F, 4 C M^2]."""
    phi_s = [p.matrices if isinstance(p, CovarianceSequence) else p for p in phi_s]
    phi_n = [p.matrices if isinstance(p, CovarianceSequence) else p for p in phi_n]
    if len(phi_s) != len(phi_n) or not phi_s:
        raise ValueError("need one speech and one noise covariance per speaker")
    blocks = []
    for s, n in zip(phi_s, phi_n):
        blocks += [s, n]
    B = np.stack(blocks, axis=-3)  # [..., T, F, 2C, M, M]
    ri = np.stack([B.real, B.imag], axis=-1)
    return ri.reshape(B.shape[:-3] + (-1,))


def mvdr_weights(phi_s, phi_n, ref_channel: int = 0, diag_load_factor: float = DIAG_LOAD):
    """Reference-channel MVDR from time-pooled covariances.

    Returns weights [..., T, F, M] (identical across frames) and a boolean
    [..., F] flag marking bins where the trace term was degenerate and the
    reference-channel selector was used instead.
    """
    Ps = phi_s.matrices if isinstance(phi_s, CovarianceSequence) else phi_s
    Pn = phi_n.matrices if isinstance(phi_n, CovarianceSequence) else phi_n
    T, M = Ps.shape[-4], Ps.shape[-1]
    Ss = Ps.sum(axis=-4)
    Sn = Pn.sum(axis=-4)
    delta = diag_load_factor * np.real(np.trace(Sn, axis1=-2, axis2=-1)) / M
    Sn = Sn + delta[..., None, None] * np.eye(M)
    num = np.linalg.solve(Sn, Ss)
    tr = np.trace(num, axis1=-2, axis2=-1)
    bad = np.abs(tr) < DEGENERATE_TRACE
    safe = np.where(bad, 1.0, tr)
    w = num[..., :, ref_channel] / safe[..., None]
    e_ref = np.zeros(M, dtype=w.dtype)
    e_ref[ref_channel] = 1.0
    w = np.where(bad[..., None], e_ref, w)
    w = np.broadcast_to(w[..., None, :, :], w.shape[:-2] + (T,) + w.shape[-2:]).copy()
    return w, bad


def apply_beamformer(w, Y: np.ndarray) -> np.ndarray:
    """w^H Y per (t, f, speaker): [..., T, F, M, C] x [..., T, F, M] -> [..., T, F, C]."""
    W = w.w if isinstance(w, BeamformerWeights) else np.asarray(w)
    if W.shape[-4:-1] != Y.shape[-3:]:
        raise ValueError(f"weights {W.shape} do not match spectrogram {Y.shape}")
    return np.einsum("...mc,...m->...c", W.conj(), Y)


def ideal_ratio_filter(S: np.ndarray, Y: np.ndarray, eps: float = 1e-10) -> ComplexRatioFilter:
    """Oracle single-tap cRF (L = 0): S * conj(Y) / (|Y|^2 + eps)."""
    crm = S * Y.conj() / (np.abs(Y) ** 2 + eps)
    return ComplexRatioFilter(crm[..., None, None])


# ---------------------------------------------------------------- graph (re, im) pairs

@dataclass
class CPair:
    re: Tensor
    im: Tensor


def apply_crf_graph(Y_patches: np.ndarray, taps: CPair) -> CPair:
    """Differentiable cRF application with constant patches [..., T, F, M, K]."""
    Yr, Yi = Y_patches.real, Y_patches.imag
    re = AF.sum(taps.re * Yr - taps.im * Yi, axis=-1)
    im = AF.sum(taps.re * Yi + taps.im * Yr, axis=-1)
    return CPair(re, im)


def covariance_graph(S: CPair, crm_center: CPair) -> CPair:
    """Differentiable frame-wise covariance; S and mask are [..., T, F, M]."""
    energy = AF.sum(crm_center.re * crm_center.re + crm_center.im * crm_center.im, axis=(-3, -1))
    denom = AF.maximum(energy, COV_FLOOR)  # [..., F]
    d = AF.reshape(denom, denom.shape[:-1] + (1, denom.shape[-1], 1, 1))
    sr_a = AF.reshape(S.re, S.re.shape + (1,))
    si_a = AF.reshape(S.im, S.im.shape + (1,))
    sr_b = AF.reshape(S.re, S.re.shape[:-1] + (1, S.re.shape[-1]))
    si_b = AF.reshape(S.im, S.im.shape[:-1] + (1, S.im.shape[-1]))
    re = (sr_a * sr_b + si_a * si_b) / d
    im = (si_a * sr_b - sr_a * si_b) / d
    return CPair(re, im)


def concat_cov_graph(phi_s: list, phi_n: list) -> Tensor:
    blocks = []
    for s, n in zip(phi_s, phi_n):
        blocks += [s, n]
    parts = []
    for b in blocks:
        parts.append(AF.stack([b.re, b.im], axis=-1))  # [..., T, F, M, M, 2]
    B = AF.stack(parts, axis=-4)  # [..., T, F, 2C, M, M, 2]
    return AF.reshape(B, B.shape[:-4] + (-1,))


def apply_beamformer_graph(w: CPair, Y: np.ndarray) -> CPair:
    """w^H Y with w [..., T, F, M, C] tensors and constant Y [..., T, F, M]."""
    Yr = Y.real[..., None]
    Yi = Y.imag[..., None]
    re = AF.sum(w.re * Yr + w.im * Yi, axis=-2)
    im = AF.sum(w.re * Yi - w.im * Yr, axis=-2)
    return CPair(re, im)
