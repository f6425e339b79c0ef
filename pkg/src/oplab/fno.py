"""Fourier Neural Operator: lifting, spectral layers in three architectural
variants, projection, spatial padding, coordinate / Fourier-feature channels
and output wrappers.

Layer variants (``fno_arc``):

* ``Classic``:  v <- act(W v + b + K v)
* ``MLP``:      v <- act(W v + b + MLP(K v))   (pointwise shallow MLP)
* ``Residual``: v <- v + act(W v + b + K v)

where ``K`` multiplies retained Fourier modes by learned complex matrices.
In 1D the retained set is the leading block of the half spectrum; in 2D it
is the two conjugate corner blocks, which is why a spectral weight tensor
holds ``2^{d-1} * modes^d`` complex matrices per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigurationError, ResolutionError, ShapeError
from .spectral import irfft_nd, rfft_nd, spectral_multiply
from .tensor import (ACTIVATIONS, DiffTensor, activation, as_difftensor,
                     channel_linear, concat, zero_pad)

ARCH_VARIANTS = ("Classic", "MLP", "Residual")

# public config schema uses the key "RNN" for layer weight sharing
_KEY_ALIASES = {"RNN": "weight_sharing"}


@dataclass
class FnoConfig:
    """Architecture hyperparameters of a Fourier neural operator."""

    problem_dim: int = 1
    in_dim: int = 1
    out_dim: int = 1
    width: int = 32
    n_layers: int = 4
    modes: int = 16
    fun_act: str = "gelu"
    fno_arc: str = "Classic"
    padding: int = 0
    include_grid: int = 1
    fourier_features: int = 0
    weights_norm: str = "Kaiming"
    weight_sharing: bool = False  # public config key "RNN"
    retrain: int = 4
    fft_norm: str | None = None
    resolution: int | None = None  # declared training resolution (Nyquist check)

    def __post_init__(self):
        if self.fno_arc == "Zongyi":  # historical alias for the MLP variant
            self.fno_arc = "MLP"
        self.validate()

    def validate(self) -> None:
        if self.problem_dim not in (1, 2):
            raise ConfigurationError(f"problem_dim must be 1 or 2, got {self.problem_dim}")
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be >= 1")
        if self.modes < 1:
            raise ConfigurationError("modes must be >= 1")
        if self.width < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError("channel counts must be >= 1")
        if self.padding < 0:
            raise ConfigurationError("padding must be >= 0")
        if self.include_grid not in (0, 1):
            raise ConfigurationError("include_grid must be 0 or 1")
        if self.fourier_features < 0:
            raise ConfigurationError("fourier_features must be >= 0")
        if self.fun_act not in ACTIVATIONS + ("identity",):
            raise ConfigurationError(f"unknown activation {self.fun_act!r}")
        if self.fno_arc not in ARCH_VARIANTS:
            raise ConfigurationError(f"fno_arc must be one of {ARCH_VARIANTS}")
        if self.weights_norm != "Kaiming":
            raise ConfigurationError(f"unsupported weights_norm {self.weights_norm!r}")
        if self.fft_norm is not None:
            raise ConfigurationError("only the default fft normalization is supported")
        if self.resolution is not None and self.modes > self.resolution // 2 + 1:
            raise ConfigurationError(
                f"modes={self.modes} violates the Nyquist bound "
                f"{self.resolution // 2 + 1} at resolution {self.resolution}")

    @property
    def lifted_in_dim(self) -> int:
        return self.in_dim + self.include_grid * self.problem_dim \
            + 2 * self.fourier_features

    @classmethod
    def from_dict(cls, cfg: dict) -> "FnoConfig":
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in cfg.items():
            name = _KEY_ALIASES.get(key, key)
            if name in names:
                kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["RNN"] = d.pop("weight_sharing")
        return d


def iter_parameter_specs(config: FnoConfig):
    """Yield (name, shape, kind) for every trainable tensor, in build order.

    ``kind`` is one of ``affine`` (Kaiming fan-in init), ``bias`` (zeros) and
    ``spectral`` (complex Gaussian scaled by 1 / width^2).  This walk is the
    single source of truth for both building and parameter accounting.
    """
    c = config
    yield "lifting.weight", (c.lifted_in_dim, c.width), "affine"
    yield "lifting.bias", (c.width,), "bias"
    n_stacks = 1 if c.weight_sharing else c.n_layers
    if c.problem_dim == 1:
        spectral_shape = (c.modes, c.width, c.width)
    else:
        spectral_shape = (2 * c.modes, c.modes, c.width, c.width)
    for t in range(n_stacks):
        yield f"layers.{t}.w", (c.width, c.width), "affine"
        yield f"layers.{t}.b", (c.width,), "bias"
        yield f"layers.{t}.spectral", spectral_shape, "spectral"
        if c.fno_arc == "MLP":
            yield f"layers.{t}.mlp1.weight", (c.width, c.width), "affine"
            yield f"layers.{t}.mlp1.bias", (c.width,), "bias"
            yield f"layers.{t}.mlp2.weight", (c.width, c.width), "affine"
            yield f"layers.{t}.mlp2.bias", (c.width,), "bias"
    yield "projection.w1", (c.width, 2 * c.width), "affine"
    yield "projection.b1", (2 * c.width,), "bias"
    yield "projection.w2", (2 * c.width, c.out_dim), "affine"
    yield "projection.b2", (c.out_dim,), "bias"


def _init_parameter(rng: np.random.Generator, shape, kind: str, width: int) -> np.ndarray:
    if kind == "bias":
        return np.zeros(shape)
    if kind == "affine":
        fan_in = shape[0]
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    if kind == "spectral":
        scale = 1.0 / (width * width)
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    raise ValueError(kind)


class FnoModel:
    """A built Fourier neural operator with named parameters."""

    family = "fno"

    def __init__(self, config: FnoConfig, params: dict):
        self.config = config
        self.params = params
        self._fourier_basis = None
        if config.fourier_features > 0:
            rng = np.random.default_rng(config.retrain)
            self._fourier_basis = rng.standard_normal(
                (config.fourier_features, config.problem_dim))

    def parameters(self) -> dict:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward -------------------------------------------------------------

    def _append_coordinate_channels(self, x: DiffTensor) -> DiffTensor:
        c = self.config
        if not c.include_grid and not c.fourier_features:
            return x
        spatial = x.shape[1:-1]
        axes = [np.linspace(0.0, 1.0, n) for n in spatial]
        grids = np.meshgrid(*axes, indexing="ij")
        coords = np.stack(grids, axis=-1)  # (*spatial, d)
        extra = []
        if c.include_grid:
            extra.append(coords)
        if c.fourier_features:
            phase = 2.0 * np.pi * (coords @ self._fourier_basis.T)  # (*spatial, F)
            extra.append(np.sin(phase))
            extra.append(np.cos(phase))
        feat = np.concatenate(extra, axis=-1)
        feat = np.broadcast_to(feat, x.shape[:1] + feat.shape).copy()
        return concat([x, DiffTensor(feat)], axis=-1)

    def _layer_params(self, t: int):
        idx = 0 if self.config.weight_sharing else t
        p = self.params
        return (p[f"layers.{idx}.w"], p[f"layers.{idx}.b"],
                p[f"layers.{idx}.spectral"], idx)

    def _spectral_path(self, v: DiffTensor, weights: DiffTensor) -> DiffTensor:
        dims = tuple(range(1, v.ndim - 1))
        return irfft_nd(spectral_multiply(rfft_nd(v, dims), weights))

    def forward(self, x) -> DiffTensor:
        c = self.config
        x = as_difftensor(x)
        if x.ndim != c.problem_dim + 2:
            raise ShapeError(
                f"expected (batch, {'x' if c.problem_dim == 1 else 'x, y'}, channels) "
                f"input, got {x.ndim} axes")
        if x.shape[-1] != c.in_dim:
            raise ShapeError(f"expected {c.in_dim} input channels, got {x.shape[-1]}")
        for n in x.shape[1:-1]:
            if n < 2 * (c.modes - 1):
                raise ResolutionError(
                    f"spatial resolution {n} < 2*(modes-1) = {2 * (c.modes - 1)}")

        v = self._append_coordinate_channels(x)
        v = channel_linear(v, self.params["lifting.weight"], self.params["lifting.bias"])
        if c.padding > 0:
            pads = [(0, 0)] + [(c.padding, c.padding)] * c.problem_dim + [(0, 0)]
            v = zero_pad(v, pads)

        for t in range(c.n_layers):
            w, b, spectral, idx = self._layer_params(t)
            kv = self._spectral_path(v, spectral)
            wv = channel_linear(v, w, b)
            if c.fno_arc == "Classic":
                v = activation(wv + kv, c.fun_act)
            elif c.fno_arc == "MLP":
                hidden = activation(
                    channel_linear(kv, self.params[f"layers.{idx}.mlp1.weight"],
                                   self.params[f"layers.{idx}.mlp1.bias"]), c.fun_act)
                kv = channel_linear(hidden, self.params[f"layers.{idx}.mlp2.weight"],
                                    self.params[f"layers.{idx}.mlp2.bias"])
                v = activation(wv + kv, c.fun_act)
            else:  # Residual
                v = v + activation(wv + kv, c.fun_act)

        if c.padding > 0:
            inner = (slice(None),) + tuple(
                slice(c.padding, v.shape[a + 1] - c.padding)
                for a in range(c.problem_dim)) + (slice(None),)
            v = v[inner]

        v = channel_linear(v, self.params["projection.w1"], self.params["projection.b1"])
        v = activation(v, c.fun_act)
        return channel_linear(v, self.params["projection.w2"], self.params["projection.b2"])

    __call__ = forward

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        tensors = {name: p.values for name, p in self.params.items()}
        ckpt.save_checkpoint(path, self.family, self.config.to_dict(), tensors)


def build_fno(config: FnoConfig, seed: int | None = None) -> FnoModel:
    """Deterministically initialize an FNO from ``config`` and a seed."""
    config.validate()
    rng = np.random.default_rng(config.retrain if seed is None else seed)
    params = {}
    for name, shape, kind in iter_parameter_specs(config):
        params[name] = DiffTensor(_init_parameter(rng, shape, kind, config.width),
                                  requires_grad=True)
    return FnoModel(config, params)


def fno_model_builder(config: dict) -> FnoModel:
    """Builder with the plain-dict interface used by the tuning entry point."""
    return build_fno(FnoConfig.from_dict(config))


def load_fno(path) -> FnoModel:
    family, config, tensors = ckpt.load_checkpoint(path)
    if family != "fno":
        raise ConfigurationError(f"checkpoint holds a {family!r} model, expected fno")
    model = build_fno(FnoConfig.from_dict(config))
    for name, p in model.params.items():
        p.values = tensors[name]
    return model


# -- output wrappers ----------------------------------------------------------


class _DelegatingWrapper:
    """Forward-modifying wrapper; other attribute access reaches the inner model."""

    def __init__(self, model):
        self.model = model

    def __getattr__(self, name):
        return getattr(self.model, name)

    def __call__(self, x):
        return self.forward(x)


class OutputMaskWrapper(_DelegatingWrapper):
    """Pin the output to a sentinel value wherever the input equals it."""

    def __init__(self, model, mask_value: float):
        super().__init__(model)
        self.mask_value = float(mask_value)

    def forward(self, x):
        x = as_difftensor(x)
        out = self.model(x)
        mask = (x.values == self.mask_value).astype(float)
        if mask.shape[-1] not in (1, out.shape[-1]):
            raise ShapeError(
                f"cannot broadcast a {mask.shape[-1]}-channel mask onto "
                f"{out.shape[-1]} output channels")
        return out * (1.0 - mask) + self.mask_value * mask


class DirichletWrapper(_DelegatingWrapper):
    """Impose u = psi * model(a) + g, with psi vanishing on the boundary set."""

    def __init__(self, model, psi, g):
        super().__init__(model)
        self.psi = np.asarray(psi, dtype=float)
        self.g = np.asarray(g, dtype=float)

    def forward(self, x):
        out = self.model(x)
        try:
            np.broadcast_shapes(self.psi.shape, out.shape)
            np.broadcast_shapes(self.g.shape, out.shape)
        except ValueError as exc:
            raise ShapeError(f"psi/g do not broadcast onto output {out.shape}: {exc}")
        return out * self.psi + self.g


def wrap_output_mask(model, mask_value: float) -> OutputMaskWrapper:
    return OutputMaskWrapper(model, mask_value)


def wrap_dirichlet(model, psi, g) -> DirichletWrapper:
    return DirichletWrapper(model, psi, g)
