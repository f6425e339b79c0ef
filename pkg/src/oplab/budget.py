"""Parameter accounting and its inversion for budget-constrained searches.

The closed forms approximate a built model's trainable-parameter count from
its architecture hyperparameters; the exact enumerator walks real tensors
(complex entries count as two).  Inverting a closed form for one free
variable (spectral modes, or the channel multiplier) yields architectures
matching a target budget as closely as integer rounding allows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cno import CnoConfig, iter_parameter_specs as cno_parameter_specs
from .errors import InfeasibleBudgetError
from .fno import FnoConfig, iter_parameter_specs as fno_parameter_specs

__all__ = [
    "ParamBudget",
    "count_params_exact",
    "count_params_from_config",
    "count_params_fno_formula",
    "count_params_cno_formula",
    "compute_modes",
    "compute_channel_multiplier",
]


@dataclass
class ParamBudget:
    """A target trainable-parameter count with tolerance and a solved-variable cap."""

    target: int
    tolerance: float = 0.25
    maximum: int | None = None

    def __post_init__(self):
        if self.target < 1:
            raise ValueError("target must be >= 1")
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")


def _round_half_up(x) -> int:
    return int(math.floor(x + Fraction(1, 2) if isinstance(x, Fraction) else x + 0.5))


def count_params_exact(model) -> int:
    """Walk every parameter tensor of a built model; complex entries count twice."""
    total = 0
    for p in model.parameters().values():
        total += p.size * (2 if np.iscomplexobj(p.values) else 1)
    return total


def count_params_from_config(config) -> int:
    """Exact count from the architecture alone (no tensor allocation).

    Uses the same parameter-shape walk that drives model construction, so it
    agrees with :func:`count_params_exact` on a built model by construction.
    """
    if isinstance(config, FnoConfig):
        specs = fno_parameter_specs(config)
    elif isinstance(config, CnoConfig):
        specs = cno_parameter_specs(config)
    else:
        raise TypeError(f"unsupported config type {type(config).__name__}")
    total = 0
    for _, shape, kind in specs:
        n = int(np.prod(shape))
        total += 2 * n if kind == "spectral" else n
    return total


def count_params_fno_formula(config: FnoConfig) -> int:
    """Closed-form spectral-weight count: 2^d * L * width^2 * modes^d."""
    d = config.problem_dim
    return (2 ** d) * config.n_layers * config.width ** 2 * config.modes ** d


def _cno_bracket(levels: int, bottleneck_blocks: int, skip_blocks: int) -> Fraction:
    L, M, N = levels, bottleneck_blocks, skip_blocks
    four = Fraction(4) ** (L - 1)
    return (Fraction(2) ** (2 * L - 1) * M
            + 2 * N * (Fraction(1, 4) + (four - 1) / 3)
            + Fraction(31, 6) * four
            - Fraction(11, 12))


def count_params_cno_formula(config: CnoConfig) -> int:
    """Closed-form count k^d * chan_mul^2 * bracket(L, M, N), rounded half-up."""
    c = config
    exact = (Fraction(c.kernel_size) ** c.problem_dim
             * Fraction(c.channel_multiplier) ** 2
             * _cno_bracket(c.n_layers, c.bottleneck_blocks, c.skip_blocks))
    return _round_half_up(exact)


def compute_modes(target: int, maximum: int, config: FnoConfig) -> int:
    """Solve the FNO closed form for the mode count, capped at ``maximum``.

    ``maximum`` encodes the Nyquist cap of the training resolution.  The
    uncapped solution floors the d-th root, so the resulting formula count
    never exceeds the target.
    """
    d = config.problem_dim
    divisor = (2 ** d) * config.n_layers * config.width ** 2
    quotient = target // divisor
    if d == 1:
        modes = quotient
    else:
        modes = math.isqrt(quotient)
    if modes < 1:
        raise InfeasibleBudgetError(
            f"budget {target} cannot accommodate a single mode at "
            f"d={d}, n_layers={config.n_layers}, width={config.width} "
            f"(needs at least {divisor})")
    return min(maximum, modes)


def compute_channel_multiplier(target: int, config: CnoConfig) -> int:
    """Solve the CNO closed form for the channel multiplier (>= 1)."""
    denom = (Fraction(config.kernel_size) ** config.problem_dim
             * _cno_bracket(config.n_layers, config.bottleneck_blocks,
                            config.skip_blocks))
    solved = _round_half_up(math.sqrt(Fraction(target) / denom))
    if solved < 1:
        warnings.warn(
            f"budget {target} is below a channel multiplier of 1; clamping",
            stacklevel=2)
        return 1
    return solved
