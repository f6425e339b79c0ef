"""Relative Lp / H1 losses and the finite-difference physics residual.

Every loss honors the batch-summed call contract: ``loss(pred, target)``
returns a :class:`LossValue` whose scalar is the sum of the per-sample
relative errors over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, ResolutionError, ShapeError
from .tensor import DiffTensor, absolute, as_difftensor, concat

__all__ = [
    "LossValue",
    "lp_relative",
    "h1_relative",
    "poisson_residual_fd",
    "combined_loss",
    "LprelLoss",
    "H1relLoss",
    "PoissonResidualFiniteDiff",
]


@dataclass
class LossValue:
    """Batch-summed scalar plus the detached per-sample error vector."""

    scalar: DiffTensor
    per_sample: np.ndarray

    def item(self) -> float:
        return self.scalar.item()


def _reduce_axes(t) -> tuple:
    return tuple(range(1, t.ndim))


def lp_relative(pred, target, p: float = 1.0) -> LossValue:
    """Per-sample relative Lp error, summed over the batch.

    Each sample contributes (sum |u - y|^p)^{1/p} / (sum |u|^p)^{1/p} over its
    grid points and channels; no volume weighting (the ratio cancels it).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    pred = as_difftensor(pred)
    target_values = target.values if isinstance(target, DiffTensor) else np.asarray(target)
    if pred.shape != target_values.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target_values.shape}")
    axes = _reduce_axes(pred)
    den = np.sum(np.abs(target_values) ** p, axis=axes) ** (1.0 / p)
    bad = np.flatnonzero(den == 0.0)
    if bad.size:
        raise DegenerateSampleError(
            f"target sample {bad[0]} has zero L{p:g} norm; relative error undefined")
    num = (absolute(pred - target_values) ** p).sum(axis=axes) ** (1.0 / p)
    per_sample = num * (1.0 / den)
    return LossValue(per_sample.sum(), per_sample.values.copy())


def _fd_gradient(t: DiffTensor, axis: int, h: float) -> DiffTensor:
    """First derivative along an axis: central interior, one-sided boundaries."""
    n = t.shape[axis]
    idx = lambda s: tuple(s if a == axis else slice(None) for a in range(t.ndim))
    first = (t[idx(slice(1, 2))] - t[idx(slice(0, 1))]) * (1.0 / h)
    inner = (t[idx(slice(2, n))] - t[idx(slice(0, n - 2))]) * (1.0 / (2.0 * h))
    last = (t[idx(slice(n - 1, n))] - t[idx(slice(n - 2, n - 1))]) * (1.0 / h)
    return concat([first, inner, last], axis=axis)


def h1_relative(pred, target, h: float) -> LossValue:
    """Relative H1 error: L2 of values combined with L2 of first derivatives."""
    pred = as_difftensor(pred)
    target = as_difftensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    axes = _reduce_axes(pred)
    spatial = range(1, pred.ndim - 1)
    for ax in spatial:
        if pred.shape[ax] < 3:
            raise ResolutionError(
                f"H1 derivatives need at least 3 points per axis, got {pred.shape[ax]}")

    def sq_norm(t):
        total = (t ** 2.0).sum(axis=axes)
        for ax in spatial:
            total = total + (_fd_gradient(t, ax, h) ** 2.0).sum(axis=axes)
        return total

    den = np.sqrt(sq_norm(target).values)
    bad = np.flatnonzero(den == 0.0)
    if bad.size:
        raise DegenerateSampleError(
            f"target sample {bad[0]} has zero H1 norm; relative error undefined")
    err = pred - target
    per_sample = sq_norm(err) ** 0.5 * (1.0 / den)
    return LossValue(per_sample.sum(), per_sample.values.copy())


def poisson_residual_fd(pred_u, source_f, alpha: float, p: float = 2.0,
                        h: float | None = None) -> LossValue:
    """Residual of -lap(u) = f on interior nodes via the 3/5-point stencil.

    Returns alpha * ||r||_p per sample, summed over the batch.  ``h`` defaults
    to the unit-box inclusive-grid spacing 1/(n-1).
    """
    pred_u = as_difftensor(pred_u)
    f_values = source_f.values if isinstance(source_f, DiffTensor) else np.asarray(source_f)
    if pred_u.shape != f_values.shape:
        raise ShapeError(f"pred shape {pred_u.shape} != source shape {f_values.shape}")
    spatial = tuple(range(1, pred_u.ndim - 1))
    for ax in spatial:
        if pred_u.shape[ax] < 3:
            raise ResolutionError(
                f"residual stencil needs at least 3 points per axis, got {pred_u.shape[ax]}")
    if h is None:
        h = 1.0 / (pred_u.shape[spatial[0]] - 1)

    interior = tuple(slice(1, pred_u.shape[a] - 1) if a in spatial else slice(None)
                     for a in range(pred_u.ndim))

    def shifted(t, axis, delta):
        return t[tuple(
            slice(1 + delta, t.shape[a] - 1 + delta) if a == axis else interior[a]
            for a in range(t.ndim))]

    lap = None
    center = pred_u[interior]
    for ax in spatial:
        term = (shifted(pred_u, ax, 1) + shifted(pred_u, ax, -1) - center * 2.0) \
            * (1.0 / (h * h))
        lap = term if lap is None else lap + term
    residual = -lap - f_values[interior]
    axes = _reduce_axes(residual)
    per_sample_t = ((absolute(residual) ** p).sum(axis=axes) ** (1.0 / p)) * alpha
    return LossValue(per_sample_t.sum(), per_sample_t.values.copy())


def combined_loss(data_loss: LossValue, phys_loss: LossValue) -> LossValue:
    """Sum of a data loss and an (already alpha-scaled) physics loss."""
    return LossValue(data_loss.scalar + phys_loss.scalar,
                     data_loss.per_sample + phys_loss.per_sample)


class LprelLoss:
    """Callable relative-Lp loss object for the training loop."""

    def __init__(self, p: float = 1.0):
        self.p = p

    def __call__(self, pred, target) -> LossValue:
        return lp_relative(pred, target, self.p)


class H1relLoss:
    def __init__(self, h: float):
        self.h = h

    def __call__(self, pred, target) -> LossValue:
        return h1_relative(pred, target, self.h)


class PoissonResidualFiniteDiff:
    """Physics residual term; called with the prediction and the source field."""

    def __init__(self, alpha: float, p: float = 2.0, h: float | None = None):
        self.alpha = alpha
        self.p = p
        self.h = h

    def __call__(self, pred_u, source_f) -> LossValue:
        return poisson_residual_fd(pred_u, source_f, self.alpha, self.p, self.h)
