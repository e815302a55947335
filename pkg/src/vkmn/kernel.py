"""Dense float64 vector/matrix primitives shared by the whole model.

Everything here is a pure function over numpy arrays. All numerics run at
64-bit precision so the finite-difference gradient oracle has enough
headroom to certify hand-derived backward passes.
"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

Array = np.ndarray
ParamSet = Dict[str, Array]

# Largest double strictly below 1.0; tanh outputs are clamped to keep the
# open-interval (-1, 1) guarantee even where float64 rounds tanh(x) to 1.
_ONE_MINUS = np.nextafter(1.0, 0.0)


def as_vector(x, name: str = "vector") -> Array:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {v.shape}")
    return v


def as_matrix(x, name: str = "matrix") -> Array:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {m.shape}")
    return m


def hadamard(a: Array, b: Array) -> Array:
    """Elementwise product of two equal-length vectors."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: a has dim {a.shape[0]}, b has dim {b.shape[0]}")
    return a * b


def tanh_map(v: Array) -> Array:
    """Elementwise tanh, clamped so every output is strictly inside (-1, 1).

    Works on any array shape; saturation at |x| around 19 would otherwise
    round to exactly +-1.0 in float64.
    """
    out = np.tanh(np.asarray(v, dtype=np.float64))
    return np.clip(out, -_ONE_MINUS, _ONE_MINUS)


def masked_softmax(scores: Array, mask: Array) -> Array:
    """Softmax over the unmasked entries only; masked entries are exactly 0.

    Masked slots are excluded before exponentiation (treated as score -inf),
    not zeroed afterwards: a null slot with a zero key would otherwise soak
    up e^0 worth of attention mass.
    """
    scores = as_vector(scores, "scores")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise ValueError(f"mask length {mask.shape} does not match scores dim {scores.shape}")
    if not mask.any():
        raise ValueError("masked_softmax requires at least one unmasked slot")
    out = np.zeros_like(scores)
    live = scores[mask]
    live = np.exp(live - live.max())
    out[mask] = live / live.sum()
    return out


def softmax(scores: Array) -> Array:
    """Plain max-subtracted softmax over all entries."""
    scores = as_vector(scores, "scores")
    e = np.exp(scores - scores.max())
    return e / e.sum()


def matvec(W: Array, x: Array) -> Array:
    W = as_matrix(W, "W")
    x = as_vector(x, "x")
    if W.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix is {W.shape[0]}x{W.shape[1]}, vector has dim {x.shape[0]}")
    return W @ x


def log_sum_exp(v: Array) -> float:
    v = as_vector(v, "v")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def cross_entropy_loss(logits: Array, label: int) -> float:
    """-log softmax(logits)[label], fused through log-sum-exp."""
    logits = as_vector(logits, "logits")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} logits")
    return log_sum_exp(logits) - float(logits[label])


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> None:
    """In-place p <- p - lr * g over a named set of arrays."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape} vs grad {g.shape}")
        p -= lr * g


def finite_diff_grad(loss_fn: Callable[[ParamSet], float], params: ParamSet, eps: float = 1e-5) -> ParamSet:
    """Central-difference gradient of loss_fn at params, entry by entry.

    Perturbs each entry in place and restores it, so loss_fn must read the
    arrays fresh on every call. eps = 1e-5 balances truncation against
    round-off at float64.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    for name, p in params.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn(params)
            flat[i] = orig - eps
            lo = loss_fn(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
    return grads


def max_relative_error(analytic: ParamSet, numeric: ParamSet) -> float:
    """max over entries of |a - n| / max(1e-8, |a| + |n|)."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
        err = np.abs(a - n) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
