"""cRF estimator and the self-attentive RNN beamformer family.

Both networks treat the speaker slot as a batch axis with shared weights, so
swapping two speakers' inputs swaps their outputs exactly.

* Estimator, per slot i: frame features [LPS, IPD, DF_i] -> linear bottleneck
  -> stacks of dilated-conv blocks over time -> linear head emitting speech
  and noise cRF taps for every bin and mic.
* Beamformer, per slot i and frequency bin (bins share weights): input
  [I_i, mean_{j != i} I_j] normalised to unit length, then the variant's
  stages, then a linear layer to the slot's complex M-vector of weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import functional as AF
from .autodiff.engine import Tensor, as_tensor
from .autodiff.layers import FFN, GRU, DilatedConv1d, LayerNorm, Linear, Module, PReLU
from .maskcov import CPair

VARIANTS = {
    "grnn": ("iii", False, False, True),
    "rnn_temporal": ("iv", True, False, True),
    "rnn_spatial": ("v", False, True, True),
    "ts_sa_only": ("vi", True, True, False),
    "rnn_ts_sa": ("vii", True, True, True),
}
ALIASES = {"ts_sa": "ts_sa_only", "iii": "grnn", "iv": "rnn_temporal", "v": "rnn_spatial",
           "vi": "ts_sa_only", "vii": "rnn_ts_sa"}
INPUT_NORM_EPS = 1e-10
WEIGHT_NORM_WARN = 100.0


def canonical_variant(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ValueError(f"unknown beamformer variant {name!r}; choose from {sorted(VARIANTS)}")
    return name


@dataclass
class EstimatorConfig:
    num_blocks: int = 8
    num_stacks: int = 2
    channels: int = 128
    kernel_size: int = 3
    context: int = 1  # L; filters span (2L+1) x (2L+1)
    shared_channels: bool = False

    def dilations(self) -> list[int]:
        return [2 ** b for b in range(self.num_blocks)] * self.num_stacks

    def head_width(self, num_mics: int, num_speakers: int) -> int:
        """Real outputs per TF point: 2 filters x C x M x (2L+1)^2 x (re, im)."""
        m = 1 if self.shared_channels else num_mics
        return 2 * num_speakers * m * (2 * self.context + 1) ** 2 * 2


@dataclass
class BeamformerNetConfig:
    variant: str = "rnn_ts_sa"
    fc1: int = 2800
    gru_hidden: int = 500
    attention_dim: int = 64
    spatial_first: bool = True

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if min(self.fc1, self.gru_hidden, self.attention_dim) <= 0:
            raise ValueError("network widths must be positive")

    def output_width(self, num_mics: int, num_speakers: int) -> int:
        return 2 * num_mics * num_speakers


# ---------------------------------------------------------------- estimator

class ConvBlock(Module):
    def __init__(self, channels: int, kernel_size: int, dilation: int, rng):
        self.conv = DilatedConv1d(channels, channels, kernel_size, dilation, rng)
        self.act = PReLU()
        self.norm = LayerNorm(channels)

    def forward(self, x):
        return x + self.norm(self.act(self.conv(x)))


class CRFEstimator(Module):
    """Predicts speech and noise cRFs for every speaker slot."""

    def __init__(self, cfg: EstimatorConfig, num_bins: int, num_mics: int, num_speakers: int,
                 num_pairs: int, rng: np.random.Generator):
        self._cfg = cfg
        self._F, self._M, self._C, self._P = num_bins, num_mics, num_speakers, num_pairs
        self._K = (2 * cfg.context + 1) ** 2
        self._Mh = 1 if cfg.shared_channels else num_mics
        slot_in = num_bins * (2 + 2 * num_pairs)
        self.proj = Linear(slot_in, cfg.channels, rng)
        self.proj_norm = LayerNorm(cfg.channels)
        self.blocks = [ConvBlock(cfg.channels, cfg.kernel_size, d, rng) for d in cfg.dilations()]
        self.head = Linear(cfg.channels, num_bins * 2 * self._Mh * self._K * 2, rng)

    @property
    def input_width(self) -> int:
        return self._F * (1 + 2 * self._P + self._C)

    def slot_inputs(self, features) -> Tensor:
        """[..., T, F(1+2P+C)] -> [C, ..., T, F(2+2P)]: shared planes + the slot's DF plane."""
        x = features.data if isinstance(features, Tensor) else np.asarray(features)
        if x.shape[-1] != self.input_width:
            raise ValueError(f"feature width {x.shape[-1]} != expected {self.input_width}")
        F, P = self._F, self._P
        common = x[..., : F * (1 + 2 * P)]
        df = x[..., F * (1 + 2 * P):].reshape(x.shape[:-1] + (self._C, F))
        slots = [np.concatenate([common, df[..., c, :]], axis=-1) for c in range(self._C)]
        return Tensor(np.stack(slots, axis=0))

    def forward(self, features) -> tuple[CPair, CPair]:
        """Return (speech, noise) taps, each re/im of shape [C, ..., T, F, M, K]."""
        x = self.slot_inputs(features)
        dtype = self.proj.weight.data.dtype
        x = Tensor(x.data.astype(dtype))
        h = self.proj_norm(self.proj(x))
        for blk in self.blocks:
            h = blk(h)
        out = self.head(h)
        shape = out.shape[:-1] + (self._F, 2, self._Mh, self._K, 2)
        out = AF.reshape(out, shape)
        speech = CPair(out[..., 0, :, :, 0], out[..., 0, :, :, 1])
        noise = CPair(out[..., 1, :, :, 0], out[..., 1, :, :, 1])
        return speech, noise

    def manifest(self) -> dict:
        return {"kind": "crf_estimator", "config": asdict(self._cfg),
                "input_width": self.input_width,
                "head_width_per_bin": self._cfg.head_width(self._M, self._C),
                "parameters": self.num_parameters()}


# ---------------------------------------------------------------- attention blocks

class SelfAttentionBlock(Module):
    """FFN_out(LayerNorm(Z + Attention(FFN_q(Z), FFN_k(Z), FFN_v(Z)))) over axis -2."""

    def __init__(self, d_model: int, d_k: int, rng):
        self.ffn_q = FFN(d_model, d_k, rng)
        self.ffn_k = FFN(d_model, d_k, rng)
        self.ffn_v = FFN(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)
        self.ffn_out = FFN(d_model, d_model, rng)

    def forward(self, z):
        a = AF.scaled_dot_attention(self.ffn_q(z), self.ffn_k(z), self.ffn_v(z))
        return self.ffn_out(self.norm(z + a))


def temporal_sa_block(block: SelfAttentionBlock, z, time_axis: int = -2):
    """Attention among frames; ``z`` is [..., T, D] (time at ``time_axis``)."""
    z = as_tensor(z)
    ax = time_axis % z.ndim
    if ax == z.ndim - 2:
        return block(z)
    perm = [i for i in range(z.ndim - 1) if i != ax] + [ax, z.ndim - 1]
    out = block(AF.transpose(z, tuple(perm)))
    return AF.transpose(out, tuple(np.argsort(perm)))


def spatial_sa_block(block: SelfAttentionBlock, z):
    """Attention among microphone slots; ``z`` is [..., T, M, D_m], time acts as batch."""
    z = as_tensor(z)
    # permute the mic axis into the sequence position used by the temporal machinery
    return temporal_sa_block(block, z, time_axis=-2)


def rows_view(x, num_mics: int, num_blocks: int):
    """[..., nblk*M*M*2] -> [..., M, nblk*M*2]: one row per covariance row index."""
    lead = x.shape[:-1]
    x = AF.reshape(x, lead + (num_blocks, num_mics, num_mics * 2))
    n = len(lead)
    x = AF.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return AF.reshape(x, lead + (num_mics, num_blocks * num_mics * 2))


def rows_unview(x, num_mics: int, num_blocks: int):
    lead = x.shape[:-2]
    x = AF.reshape(x, lead + (num_mics, num_blocks, num_mics * 2))
    n = len(lead)
    x = AF.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return AF.reshape(x, lead + (num_blocks * num_mics * num_mics * 2,))


# ---------------------------------------------------------------- beamformer

class SARNNBeamformer(Module):
    """Frame-level MIMO beamforming weights from concatenated covariance features."""

    def __init__(self, cfg: BeamformerNetConfig, num_mics: int, num_speakers: int,
                 rng: np.random.Generator):
        self._cfg = cfg
        self._M, self._C = num_mics, num_speakers
        _, temporal, spatial, rnn = VARIANTS[cfg.variant]
        self._temporal, self._spatial, self._rnn = temporal, spatial, rnn
        d_in = self.slot_width
        if spatial:
            self.spatial = SelfAttentionBlock(d_in // num_mics, cfg.attention_dim, rng)
        if temporal:
            self.temporal = SelfAttentionBlock(d_in, cfg.attention_dim, rng)
        self.fc1 = FFN(d_in, cfg.fc1, rng)
        if rnn:
            self.gru = GRU(cfg.fc1, cfg.gru_hidden, rng)
            self.gru_act = PReLU()
        self.out = Linear(cfg.gru_hidden if rnn else cfg.fc1, 2 * num_mics, rng)

    @property
    def slot_width(self) -> int:
        """Per-slot input: own [Phi_S, Phi_N] plus the mean over other slots."""
        return 8 * self._M * self._M

    @property
    def input_width(self) -> int:
        return 4 * self._C * self._M * self._M

    def stages(self) -> list[str]:
        st = ["input_norm"]
        sa = []
        if self._spatial:
            sa.append("spatial_sa")
        if self._temporal:
            sa.append("temporal_sa")
        if not self._cfg.spatial_first:
            sa.reverse()
        st += sa + ["fc1+prelu"]
        if self._rnn:
            st.append("gru+prelu")
        st.append("output_fc")
        return st

    def manifest(self) -> dict:
        return {"variant": self._cfg.variant, "table_row": VARIANTS[self._cfg.variant][0],
                "stages": self.stages(), "parameters": self.num_parameters(),
                "input_width": self.input_width,
                "output_width": self._cfg.output_width(self._M, self._C)}

    def slot_inputs(self, I):
        """[..., T, F, 4CM^2] -> [C, ..., F, T, 8M^2], unit-normalised per row."""
        I = as_tensor(I)
        if I.shape[-1] != self.input_width:
            raise ValueError(f"covariance feature width {I.shape[-1]} != {self.input_width}")
        C, w = self._C, 4 * self._M * self._M
        lead = I.shape[:-3]
        n = len(lead)
        x = AF.reshape(I, I.shape[:-1] + (C, w))
        # -> [C, ..., F, T, w]
        x = AF.transpose(x, (n + 2,) + tuple(range(n)) + (n + 1, n, n + 3))
        if C > 1:
            # order-free total keeps slot swaps bitwise exact for any C
            total = AF.unordered_sum(x, axis=0, keepdims=True)
            others = (total - x) * (1.0 / (C - 1))
        else:
            others = x * 0.0
        x = AF.concat([x, others], axis=-1)
        norm = AF.sqrt(AF.sum(x * x, axis=-1, keepdims=True) + INPUT_NORM_EPS ** 2)
        return x / norm

    def forward(self, I) -> CPair:
        """Weights as re/im tensors [..., T, F, M, C]."""
        dtype = self.out.weight.data.dtype
        I = as_tensor(I)
        if I.dtype != dtype:
            I = Tensor(I.data.astype(dtype)) if not I.requires_grad else I
        x = self.slot_inputs(I)
        M = self._M
        for stage in self.stages()[1:]:
            if stage == "spatial_sa":
                rows = rows_view(x, M, 4)
                x = rows_unview(spatial_sa_block(self.spatial, rows), M, 4)
            elif stage == "temporal_sa":
                x = temporal_sa_block(self.temporal, x)
            elif stage == "fc1+prelu":
                x = self.fc1(x)
            elif stage == "gru+prelu":
                x = self.gru_act(self.gru(x))
            elif stage == "output_fc":
                x = self.out(x)
        # x: [C, ..., F, T, 2M] -> [..., T, F, M, C]
        lead_n = x.ndim - 4
        x = AF.reshape(x, x.shape[:-1] + (M, 2))
        perm = tuple(range(1, 1 + lead_n)) + (lead_n + 2, lead_n + 1, lead_n + 3, 0, lead_n + 4)
        x = AF.transpose(x, perm)
        return CPair(x[..., 0], x[..., 1])


def build_variant(name: str, num_mics: int, num_speakers: int, cfg: BeamformerNetConfig | None = None,
                  seed: int = 0) -> SARNNBeamformer:
    """Instantiate one of the Table-1 beamformer systems (iii)-(vii)."""
    name = canonical_variant(name)
    base = cfg or BeamformerNetConfig()
    cfg = BeamformerNetConfig(**{**asdict(base), "variant": name})
    return SARNNBeamformer(cfg, num_mics, num_speakers, np.random.default_rng(seed))


def expected_parameter_count(variant: str, num_mics: int, fc1: int, gru_hidden: int,
                             attention_dim: int) -> int:
    """Closed-form parameter total for a beamformer variant."""
    _, temporal, spatial, rnn = VARIANTS[canonical_variant(variant)]
    M = num_mics
    d_in = 8 * M * M

    def ffn(a, b):
        return a * b + b + 1

    def sa(d):
        return 2 * ffn(d, attention_dim) + 2 * ffn(d, d) + 2 * d

    total = ffn(d_in, fc1)
    if spatial:
        total += sa(d_in // M)
    if temporal:
        total += sa(d_in)
    if rnn:
        total += 3 * (fc1 * gru_hidden + gru_hidden * gru_hidden + gru_hidden) + 1
    total += (gru_hidden if rnn else fc1) * 2 * M + 2 * M
    return total
