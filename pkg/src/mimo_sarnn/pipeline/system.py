"""End-to-end separation system: features -> cRFs -> covariances -> weights -> waveforms."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..acoustics import ArrayGeometry
from ..autodiff import functional as AF
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..autodiff.engine import Tensor, make_op
from ..dsp import StftConfig, istft_array, stft_array, window_envelope
from ..features import default_pairs, feature_stack
from ..maskcov import (
    CPair,
    apply_beamformer,
    apply_beamformer_graph,
    apply_crf,
    apply_crf_graph,
    covariance,
    covariance_graph,
    ideal_ratio_filter,
    mvdr_weights,
    tf_patches,
)
from ..networks import CRFEstimator, SARNNBeamformer, build_variant
from .config import RunConfig


def istft_graph(spec: CPair, cfg: StftConfig, length: int) -> Tensor:
    """Differentiable ISTFT of a one-sided spectrum [..., T, F] given as (re, im)."""
    re, im = spec.re, spec.im
    X = re.data + 1j * im.data
    out = istft_array(X, cfg, length).astype(re.data.dtype)
    T = re.shape[-2]
    N = cfg.fft_size
    env = window_envelope(T, cfg)
    norm = 1.0 / np.where(env > 1e-12, env, 1.0)
    start = N // 2 if cfg.center else 0
    win = cfg.window_array()
    weight = np.full(cfg.num_bins, 2.0 / N)
    weight[0] = 1.0 / N
    if N % 2 == 0:
        weight[-1] = 1.0 / N
    idx = np.arange(T)[:, None] * cfg.hop + np.arange(N)[None, :]
    def backward(g):
        full = np.zeros(g.shape[:-1] + (env.shape[0],))
        n = min(length, env.shape[0] - start)
        full[..., start: start + n] = g[..., :n]
        full *= norm
        G = np.fft.rfft(full[..., idx] * win, axis=-1) * weight
        g_im = G.imag.copy()
        g_im[..., 0] = 0.0
        if N % 2 == 0:
            g_im[..., -1] = 0.0
        return G.real.astype(re.data.dtype), g_im.astype(im.data.dtype)

    return make_op(out, (re, im), backward, "istft")


def padding_doa(doas) -> float:
    """Whole-degree DOA farthest from every active DOA (ties -> smallest angle)."""
    grid = np.arange(0, 181, dtype=np.float64)
    if len(doas) == 0:
        return 90.0
    dist = np.min(np.abs(grid[:, None] - np.asarray(doas, dtype=np.float64)[None, :]), axis=1)
    return float(grid[int(np.argmax(dist))])


def slot_doas(doas, num_slots: int) -> tuple[list, np.ndarray]:
    if len(doas) > num_slots:
        raise ValueError(f"{len(doas)} speakers but the model has {num_slots} slots")
    pad = padding_doa(doas)
    full = list(doas) + [pad] * (num_slots - len(doas))
    active = np.arange(num_slots) < len(doas)
    return full, active


class SeparationSystem:
    """cRF estimator + beamformer network, with numpy and graph forward paths."""

    def __init__(self, cfg: RunConfig, geometry: ArrayGeometry | None = None):
        self.cfg = cfg
        self.geometry = geometry or ArrayGeometry.linear(cfg.recipe.mic_x)
        M, C = cfg.num_mics, cfg.num_speakers
        self.pairs = default_pairs(M)
        rng = np.random.default_rng(cfg.model_seed)
        self.estimator = CRFEstimator(cfg.estimator, cfg.stft.num_bins, M, C, len(self.pairs), rng)
        self.beamformer = build_variant(cfg.beamformer.variant, M, C, cfg.beamformer,
                                        seed=cfg.model_seed + 1)
        self.dtype = np.float32 if cfg.train.precision == "float32" else np.float64
        self.estimator.astype(self.dtype)
        self.beamformer.astype(self.dtype)

    # ------------------------------------------------------------ params / io
    def named_parameters(self):
        for k, p in self.estimator.named_parameters("estimator."):
            yield k, p
        for k, p in self.beamformer.named_parameters("beamformer."):
            yield k, p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        est = {k[len("estimator."):]: v for k, v in state.items() if k.startswith("estimator.")}
        bf = {k[len("beamformer."):]: v for k, v in state.items() if k.startswith("beamformer.")}
        self.estimator.load_state_dict(est)
        self.beamformer.load_state_dict(bf)
        self.estimator.astype(self.dtype)
        self.beamformer.astype(self.dtype)

    def save(self, path) -> None:
        path = Path(path)
        save_checkpoint(path, self.state_dict())
        meta = {"config": self.cfg.to_dict(),
                "mic_positions": self.geometry.mic_positions.tolist()}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "SeparationSystem":
        path = Path(path)
        meta_path = path.with_suffix(path.suffix + ".json")
        if not path.exists() or not meta_path.exists():
            raise FileNotFoundError(f"checkpoint {path} (or its .json sidecar) not found")
        meta = json.loads(meta_path.read_text())
        sys_ = cls(RunConfig.from_dict(meta["config"]), ArrayGeometry(np.asarray(meta["mic_positions"])))
        sys_.load_state_dict(load_checkpoint(path))
        return sys_

    def manifest(self) -> dict:
        return {"estimator": self.estimator.manifest(), "beamformer": self.beamformer.manifest()}

    # ------------------------------------------------------------ features
    def analyse(self, mixture: np.ndarray, doas_per_utt):
        """mixture [B, M, N] -> (Y [B, T, F, M] complex, features [B, T, width]).

        Missing speaker slots are filled with the padding DOA.
        """
        cfg = self.cfg.stft
        mixture = np.asarray(mixture)
        if mixture.ndim != 3 or mixture.shape[1] != self.cfg.num_mics:
            raise ValueError(f"expected mixture [B, {self.cfg.num_mics}, N], got {mixture.shape}")
        if len(doas_per_utt) != mixture.shape[0]:
            raise ValueError("need one DOA list per utterance")
        Y = stft_array(mixture, cfg).transpose(0, 2, 3, 1)  # [B, T, F, M]
        feats = []
        for b, doas in enumerate(doas_per_utt):
            full, _ = slot_doas(doas, self.cfg.num_speakers)
            fs = feature_stack(Y[b], full, self.geometry, cfg, self.pairs, self.cfg.ref_channel)
            feats.append(fs.concat())
        return Y, np.stack(feats).astype(self.dtype)

    # ------------------------------------------------------------ graph forward
    def covariance_features(self, Y: np.ndarray, feats):
        """Graph path up to the beamformer input. Returns (I, speech taps, noise taps)."""
        speech, noise = self.estimator(feats)
        L = self.cfg.estimator.context
        P = tf_patches(Y, L)
        P = P.real.astype(self.dtype) + 1j * P.imag.astype(self.dtype)
        c = ((2 * L + 1) ** 2) // 2
        phis = []
        for taps in (speech, noise):
            S = apply_crf_graph(P, taps)  # [C, B, T, F, M]
            crm = CPair(taps.re[..., c], taps.im[..., c])
            phis.append(covariance_graph(S, crm))  # [C, B, T, F, M, M]
        blocks = AF.stack([AF.stack([phi.re, phi.im], axis=-1) for phi in phis], axis=1)
        # blocks: [C, 2, B, T, F, M, M, 2] -> [B, T, F, C, 2, M, M, 2]
        blocks = AF.transpose(blocks, (2, 3, 4, 0, 1, 5, 6, 7))
        I = AF.reshape(blocks, blocks.shape[:3] + (-1,))
        return I, speech, noise

    def forward(self, Y: np.ndarray, feats, length: int) -> Tensor:
        """Separated waveforms [B, C, length] as a graph tensor."""
        I, _, _ = self.covariance_features(Y, feats)
        w = self.beamformer(I)  # [B, T, F, M, C]
        Yc = Y.real.astype(self.dtype) + 1j * Y.imag.astype(self.dtype)
        out = apply_beamformer_graph(w, Yc)  # [B, T, F, C]
        spec = CPair(AF.transpose(out.re, (0, 3, 1, 2)), AF.transpose(out.im, (0, 3, 1, 2)))
        return istft_graph(spec, self.cfg.stft, length)

    # ------------------------------------------------------------ numpy inference
    def crfs(self, feats) -> tuple[np.ndarray, np.ndarray]:
        speech, noise = self.estimator(feats)
        s = speech.re.data + 1j * speech.im.data
        n = noise.re.data + 1j * noise.im.data
        K = 2 * self.cfg.estimator.context + 1
        return (s.reshape(s.shape[:-1] + (K, K)).astype(np.complex128),
                n.reshape(n.shape[:-1] + (K, K)).astype(np.complex128))

    def separate_arrays(self, mixture: np.ndarray, doas_per_utt, system: str = "network") -> np.ndarray:
        """Inference for one of: network, conv_tasnet_stft, mvdr. Returns [B, C, N]."""
        N = mixture.shape[-1]
        Y, feats = self.analyse(mixture, doas_per_utt)
        cfg = self.cfg.stft
        ref = self.cfg.ref_channel
        if system == "network":
            out = self.forward(Y, feats, N)
            return out.data.astype(np.float64)
        s_taps, n_taps = self.crfs(feats)  # [C, B, T, F, M, K, K]
        L = self.cfg.estimator.context
        if system == "conv_tasnet_stft":
            crm = s_taps[..., L, L]  # [C, B, T, F, Mh]
            ch = ref if crm.shape[-1] > 1 else 0
            est = crm[..., ch] * Y[None, ..., ref]  # [C, B, T, F]
            return istft_array(est.transpose(1, 0, 2, 3), cfg, N)
        if system == "mvdr":
            outs = []
            for c in range(s_taps.shape[0]):
                Ps = covariance(apply_crf(Y, s_taps[c]), s_taps[c][..., L, L])
                Pn = covariance(apply_crf(Y, n_taps[c]), n_taps[c][..., L, L])
                w, _ = mvdr_weights(Ps, Pn, ref)
                outs.append(apply_beamformer(w[..., None], Y)[..., 0])
            est = np.stack(outs, axis=1)  # [B, C, T, F]
            return istft_array(est, cfg, N)
        raise ValueError(f"unknown system {system!r}")


def oracle_mvdr(mixture: np.ndarray, refs: np.ndarray, cfg: StftConfig, ref_channel: int = 0) -> np.ndarray:
    """MVDR with ideal masks: mixture [M, N], refs [C, M, N] -> estimates [C, N]."""
    N = mixture.shape[-1]
    Y = stft_array(mixture, cfg).transpose(1, 2, 0)
    outs = []
    for c in range(refs.shape[0]):
        S = stft_array(refs[c], cfg).transpose(1, 2, 0)
        crf_s = ideal_ratio_filter(S, Y)
        crf_n = ideal_ratio_filter(Y - S, Y)
        Ps = covariance(apply_crf(Y, crf_s), crf_s.center)
        Pn = covariance(apply_crf(Y, crf_n), crf_n.center)
        w, _ = mvdr_weights(Ps, Pn, ref_channel)
        outs.append(apply_beamformer(w[..., None], Y)[..., 0])
    return istft_array(np.stack(outs), cfg, N)
