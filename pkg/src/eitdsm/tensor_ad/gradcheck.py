"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from .core import Tensor


def numeric_grad(fn, tensors, step: float = 1e-6) -> list:
    """Central differences of the scalar ``fn()`` w.r.t. each tensor's data."""
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = float(fn().data)
            flat[i] = old - step
            fm = float(fn().data)
            flat[i] = old
            gf[i] = (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error, guarded for near-zero gradients."""
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(num / den)


def check_gradients(fn, tensors, step: float = 1e-6) -> float:
    """Norm-wise relative error between backprop and finite differences.

    ``fn`` builds a scalar Tensor from ``tensors`` (which must require grad).
    The gradients of all tensors are concatenated before comparing, so a
    tensor whose exact gradient vanishes (e.g. a key bias under softmax)
    does not turn rounding noise into an O(1) relative error.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_grad(fn, tensors, step)
    flat = lambda gs: np.concatenate([g.ravel() for g in gs])
    return rel_error(flat(analytic), flat(numeric))


def random_projection_loss(out: Tensor, rng) -> Tensor:
    """Scalar <out, R> with fixed random R, so every output entry matters."""
    from .ops import mul, reduce_sum
    R = rng.standard_normal(out.shape)
    return reduce_sum(mul(out, R))
