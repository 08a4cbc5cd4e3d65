"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .engine import Tape, Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor)."""
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(np.ravel(a)), np.linalg.norm(np.ravel(b)), floor)
    return float(num / den)


def numeric_grad(fn, tensors, step: float = 1e-5, entries=None,
                 kink_tol: float | None = None) -> list[np.ndarray]:
    """d fn() / d t for each tensor in ``tensors`` by central differences.

    ``fn`` is re-evaluated with the tensors' data perturbed in place and must
    return a scalar (Tensor or float).  ``entries`` optionally lists, per
    tensor, the flat indices to probe; the rest of the gradient is left at 0.

    With ``kink_tol`` set, a probe whose forward and backward one-sided
    slopes differ by more than ``kink_tol`` relative to their size straddles a
    non-differentiable point (a ReLU-type kink) and is returned as NaN.
    """
    f0 = float(np.asarray(_value(fn()))) if kink_tol is not None else None
    out = []
    for k, t in enumerate(tensors):
        g = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        if not np.shares_memory(flat, t.data):
            raise ValueError("gradcheck needs contiguous tensor data")
        gflat = g.reshape(-1)
        idx = range(flat.size) if entries is None else entries[k]
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(np.asarray(_value(fn())))
            flat[i] = orig - step
            fm = float(np.asarray(_value(fn())))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
            if f0 is not None:
                fwd, bwd = fp - f0, f0 - fm
                if abs(fwd - bwd) > kink_tol * max(abs(fwd) + abs(bwd), 1e-300):
                    gflat[i] = np.nan
        out.append(g)
    return out


def analytic_grad(fn, tensors) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]


def check_gradients(fn, tensors, step: float = 1e-5, max_entries: int | None = None,
                    rng: np.random.Generator | None = None, kink_tol: float | None = None,
                    return_skipped: bool = False):
    """Largest per-tensor relative error between analytic and numeric gradients.

    With ``max_entries`` only that many randomly chosen coordinates per tensor
    are probed, and the comparison is restricted to them.  Probes flagged as
    kinks (see :func:`numeric_grad`) are left out of the comparison; with
    ``return_skipped`` the result is ``(error, number of skipped probes)``.
    """
    ana = analytic_grad(fn, tensors)
    entries = None
    if max_entries is not None:
        rng = rng or np.random.default_rng(0)
        entries = [np.sort(rng.choice(t.data.size, min(max_entries, t.data.size), replace=False))
                   for t in tensors]
    num = numeric_grad(fn, tensors, step, entries, kink_tol)
    worst, skipped = 0.0, 0
    for k, (a, n) in enumerate(zip(ana, num)):
        a, n = a.reshape(-1), n.reshape(-1)
        if entries is not None:
            a, n = a[entries[k]], n[entries[k]]
        keep = np.isfinite(n)
        skipped += int(np.sum(~keep))
        if keep.any():
            worst = max(worst, relative_error(a[keep], n[keep]))
    return (worst, skipped) if return_skipped else worst


def _value(x):
    return x.data if isinstance(x, Tensor) else x
