"""Differentiable primitives.

Every function takes Tensors (or array-likes, treated as constants) and
returns a Tensor whose backward rule is recorded on the active tape.
Broadcasting follows numpy; gradients are summed back to operand shapes.
"""

from __future__ import annotations

import math

import numpy as np

from .engine import SliceGrad, Tensor, as_tensor, make_op

LAYER_NORM_EPS = 1e-5


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; a constant adopts the float dtype of the Tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype) if _is_real(b) else b)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype) if _is_real(a) else a)
    return as_tensor(a), as_tensor(b)


def _is_real(x) -> bool:
    return np.asarray(x).dtype.kind in "fiub"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        extra + i for i, n in enumerate(shape) if n == 1 and g.shape[extra + i] != 1)
    if len(shape) and g.ndim > 1 and axes == tuple(range(g.ndim - 1)):
        # plain bias-style reduction: a GEMV beats the generic reduce
        g2 = g.reshape(-1, g.shape[-1])
        return (np.ones(g2.shape[0], dtype=g.dtype) @ g2).reshape(shape)
    return g.sum(axis=axes).reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward, "div")


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log10(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log10(a.data), (a,), lambda g: (g / (a.data * math.log(10.0)),), "log10")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows and needs a single pass
    out = np.tanh(a.data * 0.5)
    out += 1.0
    out *= 0.5
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a scalar floor; gradient passes where a > floor."""
    a = as_tensor(a)
    keep = a.data > floor
    return make_op(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "maximum")


def prelu(x, alpha) -> Tensor:
    """max(0, x) + alpha * min(0, x); ``alpha`` broadcasts (scalar or per-feature)."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    neg = x.data < 0
    out = x.data * _prelu_slope(neg, alpha.data, x.data.dtype)

    def backward(g):
        gx = g * _prelu_slope(neg, alpha.data, g.dtype) if x.requires_grad else None
        ga = None
        if alpha.requires_grad:
            neg_part = np.minimum(x.data, 0)
            if alpha.ndim == 0:
                ga = np.asarray(np.vdot(g.ravel(), neg_part.ravel()), dtype=alpha.data.dtype)
            else:
                ga = _unbroadcast(g * neg_part, alpha.shape)
        return gx, ga

    return make_op(out, (x, alpha), backward, "prelu")


# ---------------------------------------------------------------- reductions / shape

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward, "sum")


def unordered_sum(a, axis: int, keepdims: bool = False) -> Tensor:
    """Sum along ``axis`` with a result that is bitwise independent of the order
    of the entries along that axis.

    Entries are sorted before being added, so permuting the summed axis (for
    example swapping speaker slots) cannot change the rounding.  The gradient
    is that of a plain sum.
    """
    a = as_tensor(a)
    out = np.sort(a.data, axis=axis).sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward, "unordered_sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data[idx], (a,), lambda g: (SliceGrad(idx, g),), "getitem")


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in ts], axis=axis)

    def backward(g):
        gs = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            gs.append(g[tuple(sl)])
        return tuple(gs)

    return make_op(out, ts, backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_op(out, ts, backward, "stack")


def unstack(a, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into views; each slice back-propagates sparsely."""
    a = as_tensor(a)
    ax = axis % a.ndim
    outs = []
    for i in range(a.shape[ax]):
        idx = (slice(None),) * ax + (i,)
        outs.append(make_op(a.data[idx], (a,), lambda g, idx=idx: (SliceGrad(idx, g),), "unstack"))
    return outs


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    fold = b.ndim == 2 and a.ndim > 2
    if fold:
        # one large GEMM instead of a stack of small ones
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if fold:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                ga = (g2 @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        if a.requires_grad:
            if b.ndim == 1:
                ga = _unbroadcast(np.multiply.outer(g, b.data), a.shape)
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 1:
                gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(a.ndim - 1))))
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(out, (a, b), backward, "matmul")


def linear(x, W, b=None, alpha=None) -> Tensor:
    """y = x @ W + b with W of shape [in, out], optionally followed by PReLU(alpha).

    Fused into one record: the affine map runs as a single GEMM over all
    leading axes and the activation is applied in place.
    """
    x, W = as_tensor(x), as_tensor(W)
    b = None if b is None else as_tensor(b)
    alpha = None if alpha is None else as_tensor(alpha)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {W.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    pre = x2 @ W.data
    if b is not None:
        pre += b.data
    out_shape = x.shape[:-1] + (W.shape[1],)
    if alpha is None:
        out = pre
    else:
        neg = pre < 0
        out = pre * _prelu_slope(neg, alpha.data, pre.dtype)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = None
        if alpha is not None:
            if alpha.requires_grad:
                neg_part = np.minimum(pre, 0)
                if alpha.ndim == 0:
                    ga = np.asarray(np.vdot(g2.ravel(), neg_part.ravel()), dtype=alpha.data.dtype)
                else:
                    ga = _unbroadcast(g2 * neg_part, alpha.shape)
            g2 = g2 * _prelu_slope(neg, alpha.data, g2.dtype)
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2 if W.requires_grad else None
        gb = None
        if b is not None and b.requires_grad:
            gb = np.ones(g2.shape[0], dtype=g2.dtype) @ g2
        grads = (gx, gW) + ((gb,) if b is not None else ()) + ((ga,) if alpha is not None else ())
        return grads

    parents = (x, W) + ((b,) if b is not None else ()) + ((alpha,) if alpha is not None else ())
    return make_op(out.reshape(out_shape), parents, backward, "linear")


def _prelu_slope(neg: np.ndarray, alpha: np.ndarray, dtype) -> np.ndarray:
    # alpha on negatives, 1 elsewhere (arithmetic is much faster than np.where)
    slope = neg.astype(dtype)
    slope *= (alpha - 1).astype(dtype)
    slope += 1
    return slope


# ---------------------------------------------------------------- normalization / softmax

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (x,), backward, "softmax")


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = _unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = _unbroadcast(g, beta.shape)
        if x.requires_grad:
            gxh = g * gamma.data
            gx = inv / n * (n * gxh - gxh.sum(axis=-1, keepdims=True)
                            - xhat * (gxh * xhat).sum(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_op(out, (x, gamma, beta), backward, "layer_norm")


def scaled_dot_attention(Q, K, V, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over the second-to-last axis.

    Q: [..., N, d_k], K: [..., N_kv, d_k], V: [..., N_kv, d_v].
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(f"d_k mismatch: Q has {Q.shape[-1]}, K has {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError("K and V must have the same number of rows")
    logits = matmul(Q, swapaxes(K, -1, -2)) * (1.0 / math.sqrt(Q.shape[-1]))
    weights = softmax(logits, axis=-1)
    out = matmul(weights, V)
    return (out, weights) if return_weights else out


# ---------------------------------------------------------------- recurrent / conv

def gru_step(x, h_prev, params) -> Tensor:
    """One GRU step, reset gate applied to the state before the recurrent product.

        r  = sigmoid(x W_r + h U_r + b_r)
        z  = sigmoid(x W_z + h U_z + b_z)
        h~ = tanh(x W_h + (r * h) U_h + b_h)
        h  = z * h + (1 - z) * h~

    ``params`` maps W_r, W_z, W_h ([in, H]), U_r, U_z, U_h ([H, H]) and
    b_r, b_z, b_h ([H]).
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    H = params["U_r"].shape[0]
    if h_prev.shape[-1] != H or x.shape[-1] != params["W_r"].shape[0]:
        raise ValueError("gru_step: input/state width does not match parameters")
    r = sigmoid(linear(x, params["W_r"], params["b_r"]) + matmul(h_prev, params["U_r"]))
    z = sigmoid(linear(x, params["W_z"], params["b_z"]) + matmul(h_prev, params["U_z"]))
    cand = tanh(linear(x, params["W_h"], params["b_h"]) + matmul(r * h_prev, params["U_h"]))
    return z * h_prev + (1.0 - z) * cand


def gru_step_projected(xr, xz, xh, h_prev, U_r, U_z, U_h) -> Tensor:
    """GRU step where the input projections (incl. biases) are precomputed."""
    r = sigmoid(xr + matmul(h_prev, U_r))
    z = sigmoid(xz + matmul(h_prev, U_z))
    cand = tanh(xh + matmul(r * h_prev, U_h))
    return z * h_prev + (1.0 - z) * cand


def gru_sequence(proj, U, h0=None) -> Tensor:
    """Fused GRU over axis -2 of pre-projected inputs.

    ``proj`` is [..., T, 3H] holding x W + b for the r, z and candidate gates
    (in that order) and ``U`` is [H, 3H], the recurrent matrices side by side.
    The recurrence is exactly that of :func:`gru_step`; the backward pass is a
    hand-written BPTT so a long sequence costs one tape record.
    Returns the hidden states [..., T, H].
    """
    proj, U = as_tensor(proj), as_tensor(U)
    H = U.shape[0]
    if U.shape[1] != 3 * H or proj.shape[-1] != 3 * H:
        raise ValueError("gru_sequence: expected proj [..., T, 3H] and U [H, 3H]")
    lead, T = proj.shape[:-2], proj.shape[-2]
    dt = np.result_type(proj.data, U.data)
    xp = proj.data.reshape(-1, T, 3 * H)
    nb = xp.shape[0]
    if h0 is None:
        h0 = Tensor(np.zeros(lead + (H,), dtype=dt))
    h0 = as_tensor(h0)
    Ud = U.data
    hs = np.empty((T + 1, nb, H), dtype=dt)  # hs[t] is the state entering step t
    hs[0] = h0.data.reshape(nb, H)
    rz = np.empty((T, nb, 2 * H), dtype=dt)
    cand = np.empty((T, nb, H), dtype=dt)
    for t in range(T):
        h = hs[t]
        a = xp[:, t, : 2 * H] + h @ Ud[:, : 2 * H]
        g = np.tanh(a * 0.5)
        g += 1.0
        g *= 0.5
        rz[t] = g
        r, z = g[:, :H], g[:, H:]
        c = np.tanh(xp[:, t, 2 * H:] + (r * h) @ Ud[:, 2 * H:])
        cand[t] = c
        hs[t + 1] = z * h + (1.0 - z) * c
    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2)).reshape(lead + (T, H))

    def backward(gout):
        G = gout.reshape(nb, T, H)
        U_rz, U_h = Ud[:, : 2 * H], Ud[:, 2 * H:]
        dxp = np.empty((T, nb, 3 * H), dtype=dt)
        dh = np.zeros((nb, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            h = hs[t]
            r, z = rz[t, :, :H], rz[t, :, H:]
            c = cand[t]
            dh = dh + G[:, t]
            dac = dh * (1.0 - z) * (1.0 - c * c)
            drh = dac @ U_h.T
            dxp[t, :, 2 * H:] = dac
            dxp[t, :, :H] = drh * h * r * (1.0 - r)
            dxp[t, :, H: 2 * H] = dh * (h - c) * z * (1.0 - z)
            dh = dh * z + drh * r + dxp[t, :, : 2 * H] @ U_rz.T
        gproj = gU = gh0 = None
        if proj.requires_grad:
            gproj = np.ascontiguousarray(dxp.transpose(1, 0, 2)).reshape(proj.shape)
        if U.requires_grad:
            gU = np.empty_like(Ud)
            hp = hs[:-1].reshape(-1, H)
            gU[:, : 2 * H] = hp.T @ dxp[:, :, : 2 * H].reshape(-1, 2 * H)
            rh = (rz[:, :, :H] * hs[:-1]).reshape(-1, H)
            gU[:, 2 * H:] = rh.T @ dxp[:, :, 2 * H:].reshape(-1, H)
        if h0.requires_grad:
            gh0 = dh.reshape(h0.shape)
        return gproj, gU, gh0

    return make_op(out, (proj, U, h0), backward, "gru_sequence")


def dilated_conv1d(x, kernel, dilation: int = 1, padding: str = "same", bias=None) -> Tensor:
    """Dilated 1-D convolution over the time axis (cross-correlation form).

    x: [..., T, C_in]; kernel: [K, C_in, C_out] (a 1-D kernel is read as
    C_in = C_out = 1).  ``padding="same"`` centres the kernel (K must be odd);
    ``"causal"`` pads only the past.  Output is [..., T, C_out] with
    ``y[t] = sum_k x[t + (k - c) * dilation] @ kernel[k]``, c the centre tap
    (c = K - 1 for causal).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    squeeze = False
    if kernel.ndim == 1:
        kernel = reshape(kernel, (kernel.shape[0], 1, 1))
        if x.shape[-1] != 1:
            x = reshape(x, x.shape + (1,))
            squeeze = True
    K = kernel.shape[0]
    if kernel.shape[1] != x.shape[-1]:
        raise ValueError(f"kernel expects {kernel.shape[1]} input channels, got {x.shape[-1]}")
    if padding == "same":
        if K % 2 == 0:
            raise ValueError("'same' padding needs an odd kernel length")
        left = right = (K // 2) * dilation
    elif padding == "causal":
        left, right = (K - 1) * dilation, 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    T = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    w = kernel.data
    out = np.zeros(x.shape[:-1] + (w.shape[2],), dtype=np.result_type(x.data, w))
    for k in range(K):
        out += xp[..., k * dilation: k * dilation + T, :] @ w[k]

    def backward(g):
        gx = gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[..., k * dilation: k * dilation + T, :] += g @ w[k].T
            gx = gxp[..., left: left + T, :]
        if kernel.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gk = np.stack([
                xp[..., k * dilation: k * dilation + T, :].reshape(-1, xp.shape[-1]).T @ g2
                for k in range(K)
            ])
        return gx, gk

    y = make_op(out, (x, kernel), backward, "dilated_conv1d")
    if bias is not None:
        y = add(y, bias)
    if squeeze:
        y = reshape(y, y.shape[:-1])
    return y
