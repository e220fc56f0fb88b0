"""Minimal forward-mode differentiation for the executor's small parameter set.

Values carry a Jacobian with one trailing axis per parameter entry. All
score formulas in the teacher-forcing loss are compositions of the
primitives below; max/min ties take the first argmax as subgradient.
"""

from __future__ import annotations

import numpy as np


class DVal:
    """An array value paired with its Jacobian w.r.t. the parameter vector."""

    __slots__ = ("v", "j")

    def __init__(self, v: np.ndarray, j: np.ndarray):
        self.v = np.asarray(v, dtype=np.float64)
        self.j = np.asarray(j, dtype=np.float64)

    @property
    def nparams(self) -> int:
        return self.j.shape[-1]

    def take(self, positions) -> "DVal":
        positions = list(positions)
        return DVal(self.v[positions], self.j[positions])


def const(value, nparams: int) -> DVal:
    value = np.asarray(value, dtype=np.float64)
    return DVal(value, np.zeros(value.shape + (nparams,)))


def add(a: DVal, b: DVal) -> DVal:
    return DVal(a.v + b.v, a.j + b.j)


def mul(a: DVal, b: DVal) -> DVal:
    return DVal(a.v * b.v, a.j * b.v[..., None] + b.j * a.v[..., None])


def scale(a: DVal, c: float) -> DVal:
    return DVal(a.v * c, a.j * c)


def neg(a: DVal) -> DVal:
    return DVal(-a.v, -a.j)


def sigmoid(a: DVal) -> DVal:
    s = 1.0 / (1.0 + np.exp(-a.v))
    return DVal(s, (s * (1.0 - s))[..., None] * a.j)


def affine(feats: np.ndarray, vec: np.ndarray, offset: int, nparams: int) -> DVal:
    """feats @ w + b where (w, b) live at vec[offset:offset+8]."""
    w = vec[offset : offset + 7]
    b = vec[offset + 7]
    value = feats @ w + b
    jac = np.zeros(value.shape + (nparams,))
    jac[..., offset : offset + 7] = feats
    jac[..., offset + 7] = 1.0
    return DVal(value, jac)


def param(vec: np.ndarray, index: int, nparams: int) -> DVal:
    jac = np.zeros(nparams)
    jac[index] = 1.0
    return DVal(np.asarray(vec[index]), jac)


def blend(a_prev: DVal, m: DVal, alpha: DVal) -> DVal:
    """(1 - alpha) * a_prev + alpha * m with alpha a scalar parameter."""
    value = (1.0 - alpha.v) * a_prev.v + alpha.v * m.v
    jac = (1.0 - alpha.v) * a_prev.j + alpha.v * m.j
    jac = jac + (m.v - a_prev.v)[..., None] * alpha.j
    return DVal(value, jac)


def outer(a: DVal, b: DVal) -> DVal:
    value = np.outer(a.v, b.v)
    jac = a.j[:, None, :] * b.v[None, :, None] + b.j[None, :, :] * a.v[:, None, None]
    return DVal(value, jac)


def vmax(a: DVal) -> DVal:
    i = int(np.argmax(a.v))
    return DVal(a.v[i], a.j[i])


def amax(a: DVal, axis: int) -> DVal:
    idx = np.argmax(a.v, axis=axis)
    value = np.take_along_axis(a.v, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    jac = np.take_along_axis(a.j, np.expand_dims(idx, axis)[..., None], axis=axis).squeeze(axis)
    return DVal(value, jac)


def minimum(a: DVal, b: DVal) -> DVal:
    pick_a = a.v <= b.v
    return DVal(
        np.where(pick_a, a.v, b.v), np.where(pick_a[..., None], a.j, b.j)
    )


def maximum(a: DVal, b: DVal) -> DVal:
    pick_a = a.v >= b.v
    return DVal(
        np.where(pick_a, a.v, b.v), np.where(pick_a[..., None], a.j, b.j)
    )


def softmax(a: DVal) -> DVal:
    shifted = a.v - np.max(a.v)
    e = np.exp(shifted)
    s = e / e.sum()
    # J = diag(s) - s s^T applied to the incoming Jacobian
    jac = s[:, None] * a.j - s[:, None] * (s @ a.j)[None, :]
    return DVal(s, jac)


def weighted_sum(weights: DVal, values: DVal) -> DVal:
    """weights (n,) against values (n,) -> scalar, or (n, m) -> (m,)."""
    if values.v.ndim == 1:
        value = weights.v @ values.v
        jac = weights.j.T @ values.v + values.j.T @ weights.v
        return DVal(value, jac)
    value = weights.v @ values.v
    jac = np.einsum("np,nm->mp", weights.j, values.v) + np.einsum(
        "n,nmp->mp", weights.v, values.j
    )
    return DVal(value, jac)


def reduce_weighted(matrix: DVal, weights: DVal, axis: int) -> DVal:
    """Weighted average of a (n, m) matrix over one axis."""
    if axis == 0:
        return weighted_sum(weights, matrix)
    return weighted_sum(weights, DVal(matrix.v.T, np.swapaxes(matrix.j, 0, 1)))


def bce_with_logits(logits: DVal, labels: np.ndarray) -> DVal:
    """Mean binary cross entropy of sigmoid(logits) against 0/1 labels."""
    s = np.atleast_1d(logits.v)
    j = logits.j.reshape(s.shape + (logits.nparams,))
    y = np.broadcast_to(np.asarray(labels, dtype=np.float64), s.shape)
    losses = np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))
    dloss = 1.0 / (1.0 + np.exp(-s)) - y
    return DVal(losses.mean(), (dloss[..., None] * j).mean(axis=0))


def cross_entropy(logits: DVal, target: int) -> DVal:
    shifted = logits.v - np.max(logits.v)
    lse = np.log(np.exp(shifted).sum()) + np.max(logits.v)
    value = lse - logits.v[target]
    probs = np.exp(logits.v - lse)
    jac = probs @ logits.j - logits.j[target]
    return DVal(value, jac)


def stack(scalars: list[DVal]) -> DVal:
    return DVal(
        np.array([s.v for s in scalars]),
        np.array([s.j for s in scalars]),
    )
