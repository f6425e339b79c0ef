"""Convolutional Neural Operator: a bandlimited U-Net.

Every nonlinearity is applied through the anti-aliased activation operator
(upsample x2 spectrally, apply the pointwise function, downsample back), so
each internal field stays inside its level's frequency band.  Convolutions
use periodic padding, which makes translation equivariance exact on the
torus.

Level ``j`` runs at spatial extent ``r / 2^j`` with
``chan_mul * 2^{max(0, j-1)}`` channels (j = 0..levels).  Skip paths pass
through ``skip_blocks`` residual blocks; the bottleneck chains
``bottleneck_blocks`` of them.  Skip concatenation doubles the channel count
entering each decoder stage (decoder features first, skip features second).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigurationError, ResolutionError, ShapeError
from .spectral import conv_spatial, resample_spectral
from .tensor import ACTIVATIONS, DiffTensor, activation, as_difftensor, concat

KERNEL_SIZES = (3, 5, 7)


@dataclass
class CnoConfig:
    """Architecture hyperparameters of a convolutional neural operator."""

    problem_dim: int = 2
    in_dim: int = 1
    out_dim: int = 1
    resolution: int = 64
    n_layers: int = 3          # encoder/decoder levels L
    bottleneck_blocks: int = 2  # residual depth at the lowest level (M)
    skip_blocks: int = 1        # residual depth on every skip path (N)
    channel_multiplier: int = 16
    kernel_size: int = 3
    fun_act: str = "leaky_relu"
    retrain: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.problem_dim not in (1, 2):
            raise ConfigurationError(f"problem_dim must be 1 or 2, got {self.problem_dim}")
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be >= 1")
        if self.bottleneck_blocks < 1 or self.skip_blocks < 1:
            raise ConfigurationError("residual block counts must be >= 1")
        if self.channel_multiplier < 1:
            raise ConfigurationError("channel_multiplier must be >= 1")
        if self.kernel_size not in KERNEL_SIZES:
            raise ConfigurationError(f"kernel_size must be one of {KERNEL_SIZES}")
        if self.fun_act not in ACTIVATIONS + ("identity",):
            raise ConfigurationError(f"unknown activation {self.fun_act!r}")
        r, L = self.resolution, self.n_layers
        if r % (2 ** L) != 0:
            raise ConfigurationError(
                f"resolution {r} is not divisible by 2^levels = {2 ** L}")
        if r & (r - 1) != 0 or r < 4 * 2 ** L:
            raise ConfigurationError(
                f"resolution must be a power of two >= {4 * 2 ** L}, got {r}")

    def channels_at(self, level: int) -> int:
        return self.channel_multiplier * 2 ** max(0, level - 1)

    @classmethod
    def from_dict(cls, cfg: dict) -> "CnoConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in cfg.items() if k in names})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def iter_parameter_specs(config: CnoConfig):
    """Yield (name, shape, kind) for every conv kernel and bias, in build order."""
    c = config
    taps = (c.kernel_size,) * c.problem_dim
    L = c.n_layers

    def conv(name, cin, cout):
        yield f"{name}.kernel", taps + (cin, cout), "conv"
        yield f"{name}.bias", (cout,), "bias"

    yield from conv("lift", c.in_dim, c.channels_at(0))
    for j in range(L):
        yield from conv(f"enc.{j}", c.channels_at(j), c.channels_at(j + 1))
    cL = c.channels_at(L)
    for m in range(c.bottleneck_blocks):
        yield from conv(f"bottleneck.{m}.conv1", cL, cL)
        yield from conv(f"bottleneck.{m}.conv2", cL, cL)
    for j in range(L):
        cj = c.channels_at(j)
        for i in range(c.skip_blocks):
            yield from conv(f"skip.{j}.{i}.conv1", cj, cj)
            yield from conv(f"skip.{j}.{i}.conv2", cj, cj)
    for j in reversed(range(L)):
        cin = cL if j == L - 1 else 2 * c.channels_at(j + 1)
        yield from conv(f"dec.{j}", cin, c.channels_at(j))
        yield from conv(f"inv.{j}", 2 * c.channels_at(j), 2 * c.channels_at(j))
    yield from conv("proj", 2 * c.channels_at(0), c.out_dim)


def _init_parameter(rng: np.random.Generator, shape, kind: str) -> np.ndarray:
    if kind == "bias":
        return np.zeros(shape)
    fan_in = int(np.prod(shape[:-1]))  # in_channels * taps
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def activation_op(x, name: str) -> DiffTensor:
    """Anti-aliased activation: upsample x2, apply pointwise, downsample back."""
    x = as_difftensor(x)
    dims = tuple(range(1, x.ndim - 1))
    res = tuple(x.shape[d] for d in dims)
    for n in res:
        if n < 4:
            raise ResolutionError(f"activation operator needs resolution >= 4, got {n}")
    fine = resample_spectral(x, tuple(2 * n for n in res), dims)
    return resample_spectral(activation(fine, name), res, dims)


def residual_block(x, kernel1, bias1, kernel2, bias2, name: str) -> DiffTensor:
    """x + conv(act_op(conv(x))), all channel-preserving."""
    y = conv_spatial(x, kernel1, bias1, "periodic")
    y = activation_op(y, name)
    return x + conv_spatial(y, kernel2, bias2, "periodic")


def invariant_block(x, kernel, bias, name: str) -> DiffTensor:
    """act_op(conv(x)); also serves as the generic conv block."""
    return activation_op(conv_spatial(x, kernel, bias, "periodic"), name)


class CnoModel:
    """A built convolutional neural operator with named parameters."""

    family = "cno"

    def __init__(self, config: CnoConfig, params: dict):
        self.config = config
        self.params = params
        self.activation_hook = None  # test/diagnostic tap on every act_op output

    def parameters(self) -> dict:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _act(self, x) -> DiffTensor:
        out = activation_op(x, self.config.fun_act)
        if self.activation_hook is not None:
            self.activation_hook(out)
        return out

    def _conv_block(self, x, name: str) -> DiffTensor:
        p = self.params
        return self._act(conv_spatial(x, p[f"{name}.kernel"], p[f"{name}.bias"],
                                      "periodic"))

    def _residual_chain(self, x, prefix: str, count: int) -> DiffTensor:
        p = self.params
        for i in range(count):
            y = self._act(conv_spatial(x, p[f"{prefix}.{i}.conv1.kernel"],
                                       p[f"{prefix}.{i}.conv1.bias"], "periodic"))
            x = x + conv_spatial(y, p[f"{prefix}.{i}.conv2.kernel"],
                                 p[f"{prefix}.{i}.conv2.bias"], "periodic")
        return x

    def forward(self, x) -> DiffTensor:
        c = self.config
        x = as_difftensor(x)
        if x.ndim != c.problem_dim + 2:
            raise ShapeError(f"expected {c.problem_dim + 2} axes, got {x.ndim}")
        if x.shape[-1] != c.in_dim:
            raise ShapeError(f"expected {c.in_dim} input channels, got {x.shape[-1]}")
        extents = set(x.shape[1:-1])
        if len(extents) != 1:
            raise ResolutionError(f"spatial extents must match, got {x.shape[1:-1]}")
        r = extents.pop()
        L = c.n_layers
        if r & (r - 1) != 0 or r < 4 * 2 ** L:
            raise ResolutionError(
                f"spatial extent must be a power of two >= {4 * 2 ** L}, got {r}")

        dims = tuple(range(1, x.ndim - 1))
        p = self.params

        v = self._conv_block(x, "lift")
        skips = []
        for j in range(L):
            skips.append(v)
            v = self._conv_block(v, f"enc.{j}")
            v = resample_spectral(v, r // 2 ** (j + 1), dims)

        v = self._residual_chain(v, "bottleneck", c.bottleneck_blocks)

        for j in reversed(range(L)):
            v = conv_spatial(v, p[f"dec.{j}.kernel"], p[f"dec.{j}.bias"], "periodic")
            v = self._act(v)
            v = resample_spectral(v, r // 2 ** j, dims)
            skip = self._residual_chain(skips[j], f"skip.{j}", c.skip_blocks)
            v = concat([v, skip], axis=-1)
            v = self._act(conv_spatial(v, p[f"inv.{j}.kernel"], p[f"inv.{j}.bias"],
                                       "periodic"))

        # projection is a bare convolution: a trailing nonlinearity would
        # constrain the output range
        return conv_spatial(v, p["proj.kernel"], p["proj.bias"], "periodic")

    __call__ = forward

    def save(self, path) -> None:
        tensors = {name: p.values for name, p in self.params.items()}
        ckpt.save_checkpoint(path, self.family, self.config.to_dict(), tensors)


def build_cno(config: CnoConfig, seed: int | None = None) -> CnoModel:
    """Deterministically initialize a CNO from ``config`` and a seed."""
    config.validate()
    rng = np.random.default_rng(config.retrain if seed is None else seed)
    params = {}
    for name, shape, kind in iter_parameter_specs(config):
        params[name] = DiffTensor(_init_parameter(rng, shape, kind), requires_grad=True)
    return CnoModel(config, params)


def cno_model_builder(config: dict) -> CnoModel:
    """Builder with the plain-dict interface used by the tuning entry point."""
    return build_cno(CnoConfig.from_dict(config))


def load_cno(path) -> CnoModel:
    family, config, tensors = ckpt.load_checkpoint(path)
    if family != "cno":
        raise ConfigurationError(f"checkpoint holds a {family!r} model, expected cno")
    model = build_cno(CnoConfig.from_dict(config))
    for name, p in model.params.items():
        p.values = tensors[name]
    return model
