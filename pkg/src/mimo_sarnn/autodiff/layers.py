"""Parameter containers built on the functional primitives.

Initialization: weights uniform in +-sqrt(1/fan_in), biases zero,
PReLU slope 0.25.  All randomness comes from the generator passed in.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .engine import Parameter, Tensor

PRELU_INIT = 0.25


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal parameter tree: attributes that are Parameters or Modules."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{key}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (n_in, n_out), n_in))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, n: int = 1):
        self.alpha = Parameter(np.full(n, PRELU_INIT))

    def forward(self, x) -> Tensor:
        return F.prelu(x, self.alpha)


class LayerNorm(Module):
    def __init__(self, n: int):
        self.gamma = Parameter(np.ones(n))
        self.beta = Parameter(np.zeros(n))

    def forward(self, x) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class FFN(Module):
    """Linear layer followed by PReLU."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.linear = Linear(n_in, n_out, rng)
        self.act = PReLU()

    def forward(self, x) -> Tensor:
        lin = self.linear
        return F.linear(x, lin.weight, lin.bias, alpha=self.act.alpha)


class GRU(Module):
    """Uni-directional GRU over axis -2 of a [..., T, D] input."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        for gate in ("r", "z", "h"):
            setattr(self, f"W_{gate}", Parameter(uniform_init(rng, (n_in, hidden), hidden)))
            setattr(self, f"U_{gate}", Parameter(uniform_init(rng, (hidden, hidden), hidden)))
            setattr(self, f"b_{gate}", Parameter(np.zeros(hidden)))

    def step_params(self) -> dict:
        return {k: getattr(self, k) for k in
                ("W_r", "W_z", "W_h", "U_r", "U_z", "U_h", "b_r", "b_z", "b_h")}

    def forward(self, x, h0=None) -> Tensor:
        # one GEMM for all input projections, then the sequential part
        W = F.concat([self.W_r, self.W_z, self.W_h], axis=1)
        b = F.concat([self.b_r, self.b_z, self.b_h], axis=0)
        proj = F.linear(x, W, b)
        U = F.concat([self.U_r, self.U_z, self.U_h], axis=1)
        return F.gru_sequence(proj, U, h0)


class DilatedConv1d(Module):
    def __init__(self, channels_in: int, channels_out: int, kernel_size: int, dilation: int,
                 rng: np.random.Generator, padding: str = "same"):
        fan_in = channels_in * kernel_size
        self.kernel = Parameter(uniform_init(rng, (kernel_size, channels_in, channels_out), fan_in))
        self.bias = Parameter(np.zeros(channels_out))
        self._dilation = dilation
        self._padding = padding

    def forward(self, x) -> Tensor:
        return F.dilated_conv1d(x, self.kernel, self._dilation, self._padding, bias=self.bias)
