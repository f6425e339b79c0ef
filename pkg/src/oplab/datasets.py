"""Synthetic operator datasets: Poisson, Darcy and smooth transport.

Inputs are Gaussian-random-field forcings/coefficients (squared-exponential
covariance) or random bandlimited initial conditions; outputs come from
conjugate-gradient finite-difference solves or exact spectral phase shifts.
A dataset carries three disjoint splits, per-channel min/max normalization
constants computed from the training split only, and a provenance record.

On disk a dataset is one JSON manifest plus ``data.bin`` holding the input
block followed by the output block as row-major little-endian float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (ConfigurationError, DataError, NumericalError)

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "data.bin"
FORMAT_TAG = "oplab-dataset-v1"

SPLITS = ("train", "val", "test")


# -- Gaussian random fields ------------------------------------------------------


@dataclass
class GrfSpec:
    """Zero-mean Gaussian field with squared-exponential covariance.

    k(x, y) = variance * exp(-|x - y|^2 / (2 l^2)) on the unit box, sampled on
    an inclusive grid via jittered dense Cholesky factorization.
    """

    length_scale: float
    grid: tuple
    variance: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.grid = tuple(int(n) for n in np.atleast_1d(self.grid))
        for n in self.grid:
            if n > 64:
                raise ConfigurationError(
                    f"dense factorization bound exceeded: grid extent {n} > 64")
            if n < 2:
                raise ConfigurationError(f"grid extent {n} < 2")
        if self.length_scale <= 0 or self.variance <= 0:
            raise ConfigurationError("length_scale and variance must be positive")

    def covariance(self) -> np.ndarray:
        axes = [np.linspace(0.0, 1.0, n) for n in self.grid]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(self.grid))
        sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        return self.variance * np.exp(-sq / (2.0 * self.length_scale ** 2))


def grf_sample(spec: GrfSpec, count: int) -> np.ndarray:
    """Draw ``count`` fields of shape ``spec.grid``; deterministic per seed."""
    K = spec.covariance()
    n = K.shape[0]
    L = None
    for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            L = np.linalg.cholesky(K + jitter * spec.variance * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    if L is None:
        raise NumericalError("covariance factorization failed at maximum jitter")
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((count, n))
    return (z @ L.T).reshape((count,) + spec.grid)


def psi_map(field: np.ndarray) -> np.ndarray:
    """Pointwise two-level coefficient map: 12 where positive, else 3."""
    return np.where(np.asarray(field) > 0, 12.0, 3.0)


# -- finite-difference solvers ---------------------------------------------------


def _cg(apply_a, b: np.ndarray, tol: float = 1e-10, max_iter: int | None = None):
    """Plain conjugate gradients on an SPD operator, to absolute residual tol."""
    if max_iter is None:
        max_iter = 10 * b.size
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.vdot(r, r).real
    if np.sqrt(rs) <= tol:
        return x
    for _ in range(max_iter):
        ap = apply_a(p)
        alpha = rs / np.vdot(p, ap).real
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r).real
        if np.sqrt(rs_new) <= tol:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise NumericalError(
        f"CG did not reach residual {tol} within {max_iter} iterations")


def _neg_laplacian(u_int: np.ndarray, h: float) -> np.ndarray:
    """-lap(u) on interior nodes, homogeneous Dirichlet boundary."""
    d = u_int.ndim
    padded = np.pad(u_int, 1)
    out = np.zeros_like(u_int)
    center = padded[(slice(1, -1),) * d]
    for ax in range(d):
        lo = tuple(slice(0, -2) if a == ax else slice(1, -1) for a in range(d))
        hi = tuple(slice(2, None) if a == ax else slice(1, -1) for a in range(d))
        out += (2.0 * center - padded[lo] - padded[hi])
    return out / (h * h)


def solve_poisson_fd(f: np.ndarray, h: float) -> np.ndarray:
    """Solve -lap(u) = f with u = 0 on the boundary (3/5-point stencil + CG)."""
    f = np.asarray(f, dtype=float)
    d = f.ndim
    interior = (slice(1, -1),) * d
    b = f[interior].copy()
    u_int = _cg(lambda v: _neg_laplacian(v, h), b)
    u = np.zeros_like(f)
    u[interior] = u_int
    return u


def _darcy_operator(a: np.ndarray, h: float):
    """Flux-conservative -div(a grad u) with harmonic face averaging."""
    d = a.ndim

    def harmonic(x, y):
        return 2.0 * x * y / (x + y)

    faces = []
    for ax in range(d):
        lo = tuple(slice(0, -1) if i == ax else slice(None) for i in range(d))
        hi = tuple(slice(1, None) if i == ax else slice(None) for i in range(d))
        faces.append(harmonic(a[lo], a[hi]))  # face between node j and j+1

    def apply_a(u_int):
        padded = np.pad(u_int, 1)
        full = padded[(slice(1, -1),) * d]
        out = np.zeros_like(u_int)
        for ax in range(d):
            af = faces[ax]
            # faces adjacent to interior node j (global index j+1): (j, j+1)
            f_lo = af[tuple(slice(0, -1) if i == ax else slice(1, -1) for i in range(d))]
            f_hi = af[tuple(slice(1, None) if i == ax else slice(1, -1) for i in range(d))]
            u_lo = padded[tuple(slice(0, -2) if i == ax else slice(1, -1) for i in range(d))]
            u_hi = padded[tuple(slice(2, None) if i == ax else slice(1, -1) for i in range(d))]
            out += f_lo * (full - u_lo) + f_hi * (full - u_hi)
        return out / (h * h)

    return apply_a


def solve_darcy_fd(a: np.ndarray, f, h: float) -> np.ndarray:
    """Solve -div(a grad u) = f with u = 0 on the boundary."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise DataError("diffusion coefficient must be positive everywhere")
    f = np.broadcast_to(np.asarray(f, dtype=float), a.shape)
    d = a.ndim
    interior = (slice(1, -1),) * d
    b = f[interior].copy()
    u_int = _cg(_darcy_operator(a, h), b)
    u = np.zeros_like(a)
    u[interior] = u_int
    return u


def transport_exact(f0: np.ndarray, velocity, t_final: float) -> np.ndarray:
    """Advect a periodic field: u(x, T) = f0(x - v T) via spectral phase shift.

    Exact for fields sampled from a finite Fourier series on the unit torus.
    Accepts a single field or a leading batch axis.
    """
    f0 = np.asarray(f0, dtype=float)
    batched = True
    arr = f0
    if arr.ndim and np.isscalar(velocity):
        velocity = (velocity,)
    velocity = tuple(np.atleast_1d(velocity).tolist())
    d = len(velocity)
    if arr.ndim == d:
        arr = arr[None]
        batched = False
    axes = tuple(range(1, 1 + d))
    spectrum = np.fft.fftn(arr, axes=axes)
    for ax, v in zip(axes, velocity):
        n = arr.shape[ax]
        k = np.fft.fftfreq(n, d=1.0 / n)  # integer frequencies
        phase = np.exp(-2j * np.pi * k * v * t_final)
        shape = [1] * arr.ndim
        shape[ax] = n
        spectrum = spectrum * phase.reshape(shape)
    out = np.fft.ifftn(spectrum, axes=axes).real
    return out if batched else out[0]


# -- dataset container -----------------------------------------------------------


def _minmax(arr: np.ndarray) -> tuple:
    axes = tuple(range(arr.ndim - 1))
    return arr.min(axis=axes), arr.max(axis=axes)


def _seed_key(seed, *extra) -> list:
    """Flatten a seed (int or tuple of ints) plus extra parts for default_rng."""
    return [int(x) for x in np.atleast_1d(seed)] + [int(x) for x in extra]


class OperatorDataset:
    """Resolution-tagged (input field, output field) pairs with three splits."""

    def __init__(self, inputs: np.ndarray, outputs: np.ndarray,
                 split_sizes: tuple, provenance: dict,
                 normalization: dict | None = None):
        inputs = np.asarray(inputs, dtype=float)
        outputs = np.asarray(outputs, dtype=float)
        if inputs.shape[0] != outputs.shape[0]:
            raise DataError("inputs and outputs disagree on sample count")
        if sum(split_sizes) != inputs.shape[0]:
            raise DataError(
                f"split sizes {split_sizes} do not cover {inputs.shape[0]} samples")
        if inputs.shape[1:-1] != outputs.shape[1:-1]:
            raise DataError("inputs and outputs disagree on spatial extents")
        self.inputs = inputs
        self.outputs = outputs
        self.split_sizes = tuple(int(s) for s in split_sizes)
        self.provenance = dict(provenance)
        if normalization is None:
            n_train = self.split_sizes[0]
            in_min, in_max = _minmax(inputs[:n_train])
            out_min, out_max = _minmax(outputs[:n_train])
            normalization = {"in_min": in_min, "in_max": in_max,
                             "out_min": out_min, "out_max": out_max}
        self.normalization = {k: np.asarray(v, dtype=float)
                              for k, v in normalization.items()}

    # -- introspection ---------------------------------------------------------

    @property
    def resolution(self) -> tuple:
        return self.inputs.shape[1:-1]

    @property
    def n_in(self) -> int:
        return self.inputs.shape[-1]

    @property
    def n_out(self) -> int:
        return self.outputs.shape[-1]

    def count(self, split: str) -> int:
        return self.split_sizes[SPLITS.index(split)]

    def _split_range(self, split: str) -> slice:
        i = SPLITS.index(split)
        start = sum(self.split_sizes[:i])
        return slice(start, start + self.split_sizes[i])

    def split_arrays(self, split: str) -> tuple:
        r = self._split_range(split)
        return self.inputs[r], self.outputs[r]

    # -- normalization -----------------------------------------------------------

    @staticmethod
    def _apply(x, lo, span):
        return (x - lo) * (1.0 / span)

    def _span(self, lo, hi):
        span = hi - lo
        return np.where(span == 0, 1.0, span)

    def normalize_inputs(self, x):
        n = self.normalization
        return self._apply(x, n["in_min"], self._span(n["in_min"], n["in_max"]))

    def normalize_outputs(self, y):
        n = self.normalization
        return self._apply(y, n["out_min"], self._span(n["out_min"], n["out_max"]))

    def denormalize_outputs(self, y):
        n = self.normalization
        return y * self._span(n["out_min"], n["out_max"]) + n["out_min"]

    def denormalize_inputs(self, x):
        n = self.normalization
        return x * self._span(n["in_min"], n["in_max"]) + n["in_min"]

    # -- iteration ---------------------------------------------------------------

    def batches(self, split: str, batch_size: int, shuffle_seed=None):
        """Yield (normalized input, normalized output) batches."""
        xs, ys = self.split_arrays(split)
        order = np.arange(xs.shape[0])
        if shuffle_seed is not None:
            np.random.default_rng(_seed_key(shuffle_seed)).shuffle(order)
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            yield self.normalize_inputs(xs[idx]), self.normalize_outputs(ys[idx])

    def eval_batches(self, split: str, batch_size: int):
        """Yield (normalized input, raw output, denormalizer) for evaluation."""
        xs, ys = self.split_arrays(split)
        for start in range(0, xs.shape[0], batch_size):
            sl = slice(start, start + batch_size)
            yield self.normalize_inputs(xs[sl]), ys[sl], self.denormalize_outputs

    def subset(self, train: int | None = None, val: int | None = None,
               test: int | None = None) -> "OperatorDataset":
        """Restrict split sizes (keeps the leading samples of each split)."""
        sizes = list(self.split_sizes)
        want = [train, val, test]
        parts_in, parts_out, new_sizes = [], [], []
        for i, split in enumerate(SPLITS):
            n = sizes[i] if want[i] is None else int(want[i])
            if n > sizes[i]:
                raise DataError(
                    f"requested {n} {split} samples, dataset has {sizes[i]}")
            xs, ys = self.split_arrays(split)
            parts_in.append(xs[:n])
            parts_out.append(ys[:n])
            new_sizes.append(n)
        return OperatorDataset(np.concatenate(parts_in), np.concatenate(parts_out),
                               tuple(new_sizes), self.provenance,
                               normalization=self.normalization)

    # -- persistence ---------------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": FORMAT_TAG,
            "resolution": list(self.resolution),
            "split_sizes": list(self.split_sizes),
            "n_in": self.n_in,
            "n_out": self.n_out,
            "input_shape": list(self.inputs.shape),
            "output_shape": list(self.outputs.shape),
            "normalization": {k: v.tolist() for k, v in self.normalization.items()},
            "provenance": self.provenance,
        }
        with open(path / MANIFEST_NAME, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        blob = (np.ascontiguousarray(self.inputs, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.outputs, dtype="<f8").tobytes())
        (path / BLOB_NAME).write_bytes(blob)

    @classmethod
    def load(cls, path) -> "OperatorDataset":
        path = Path(path)
        manifest_path = path / MANIFEST_NAME
        if not manifest_path.exists():
            raise DataError(f"no dataset manifest at {manifest_path}")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        if manifest.get("format") != FORMAT_TAG:
            raise DataError(f"unsupported dataset format {manifest.get('format')!r}")
        blob = (path / BLOB_NAME).read_bytes()
        in_shape = tuple(manifest["input_shape"])
        out_shape = tuple(manifest["output_shape"])
        n_in_bytes = int(np.prod(in_shape)) * 8
        inputs = np.frombuffer(blob[:n_in_bytes], dtype="<f8").reshape(in_shape).copy()
        outputs = np.frombuffer(blob[n_in_bytes:], dtype="<f8").reshape(out_shape).copy()
        return cls(inputs, outputs, tuple(manifest["split_sizes"]),
                   manifest["provenance"], normalization=manifest["normalization"])


# -- combination views -----------------------------------------------------------


class ConcatDataset:
    """Concatenation of datasets; batches are drawn per source, never mixed."""

    def __init__(self, sources):
        sources = list(sources)
        if not sources:
            raise DataError("need at least one dataset")
        n_in, n_out = sources[0].n_in, sources[0].n_out
        for s in sources[1:]:
            if s.n_in != n_in or s.n_out != n_out:
                raise DataError(
                    f"channel mismatch: ({s.n_in}, {s.n_out}) vs ({n_in}, {n_out})")
        self.sources = sources
        self.n_in, self.n_out = n_in, n_out

    def count(self, split: str) -> int:
        return sum(s.count(split) for s in self.sources)

    def batches(self, split: str, batch_size: int, shuffle_seed=None):
        plans = []
        for i, s in enumerate(self.sources):
            seed = None if shuffle_seed is None else _seed_key(shuffle_seed, i)
            plans.extend(s.batches(split, batch_size, seed))
        order = np.arange(len(plans))
        if shuffle_seed is not None:
            np.random.default_rng(_seed_key(shuffle_seed, len(self.sources))).shuffle(order)
        for j in order:
            yield plans[j]

    def eval_batches(self, split: str, batch_size: int):
        for s in self.sources:
            yield from s.eval_batches(split, batch_size)


def concat_datasets(*sources) -> ConcatDataset:
    """Combine datasets with matching channels; resolutions may differ."""
    return ConcatDataset(sources)


def load_multiresolution(base: OperatorDataset, resolutions,
                         max_modes: int | None = None) -> ConcatDataset:
    """Strided-subsampling views of ``base`` at each requested resolution."""
    views = []
    base_res = base.resolution
    for res in resolutions:
        res = int(res)
        for n in base_res:
            if n % res != 0:
                raise DataError(
                    f"target resolution {res} does not divide base resolution {n}")
        if max_modes is not None and max_modes > res // 2 + 1:
            raise ConfigurationError(
                f"{max_modes} modes violate the Nyquist bound at resolution {res}: "
                f"at most {res // 2 + 1} modes are admissible")
        if res == base_res[0]:
            views.append(base)
            continue
        stride = base_res[0] // res
        take = (slice(None),) + (slice(None, None, stride),) * len(base_res) \
            + (slice(None),)
        provenance = dict(base.provenance)
        provenance["subsampled_from"] = list(base_res)
        provenance["stride"] = stride
        views.append(OperatorDataset(base.inputs[take], base.outputs[take],
                                     base.split_sizes, provenance,
                                     normalization=base.normalization))
    return ConcatDataset(views)


# -- generators -----------------------------------------------------------------


def _stack_channel(fields: np.ndarray) -> np.ndarray:
    return fields[..., None]


def make_poisson_dataset(problem_dim: int, resolution: int, counts: tuple,
                         length_scale: float = 0.1, seed: int = 0,
                         variance: float = 0.1) -> OperatorDataset:
    """Forcing-to-solution pairs for -lap(u) = f with zero Dirichlet data."""
    total = sum(counts)
    grid = (resolution,) * problem_dim
    spec = GrfSpec(length_scale, grid, variance, seed)
    forcings = grf_sample(spec, total)
    h = 1.0 / (resolution - 1)
    solutions = np.stack([solve_poisson_fd(f, h) for f in forcings])
    provenance = {"generator": "poisson", "problem_dim": problem_dim,
                  "resolution": resolution, "counts": list(counts),
                  "length_scale": length_scale, "variance": variance, "seed": seed}
    return OperatorDataset(_stack_channel(forcings), _stack_channel(solutions),
                           tuple(counts), provenance)


def make_darcy_dataset(resolution: int, counts: tuple, length_scale: float = 0.1,
                       seed: int = 0, variance: float = 0.1,
                       source: float = 1.0) -> OperatorDataset:
    """Coefficient-to-solution pairs for -div(a grad u) = const, a = psi(GRF)."""
    total = sum(counts)
    spec = GrfSpec(length_scale, (resolution, resolution), variance, seed)
    coeffs = psi_map(grf_sample(spec, total))
    h = 1.0 / (resolution - 1)
    solutions = np.stack([solve_darcy_fd(a, source, h) for a in coeffs])
    provenance = {"generator": "darcy", "problem_dim": 2,
                  "resolution": resolution, "counts": list(counts),
                  "length_scale": length_scale, "variance": variance,
                  "source": source, "seed": seed}
    return OperatorDataset(_stack_channel(coeffs), _stack_channel(solutions),
                           tuple(counts), provenance)


def _bandlimited_fields(rng, count: int, problem_dim: int, resolution: int,
                        max_mode: int) -> np.ndarray:
    """Random smooth periodic fields from a finite Fourier series.

    Coefficients are drawn independently of the grid, so the same seed yields
    samples of the same continuous functions at every resolution.
    """
    k = np.arange(-max_mode, max_mode + 1)
    if problem_dim == 1:
        kk = np.abs(k)[None, :]
        coeff = (rng.standard_normal((count, k.size))
                 + 1j * rng.standard_normal((count, k.size)))
    else:
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        kk = np.sqrt(k1 ** 2 + k2 ** 2)[None]
        coeff = (rng.standard_normal((count,) + kk.shape[1:])
                 + 1j * rng.standard_normal((count,) + kk.shape[1:]))
    coeff = coeff / (1.0 + kk) ** 2
    grid = np.arange(resolution) / resolution
    if problem_dim == 1:
        basis = np.exp(2j * np.pi * np.outer(k, grid))  # (modes, n)
        fields = np.tensordot(coeff, basis, axes=(1, 0)).real
    else:
        bx = np.exp(2j * np.pi * np.outer(k, grid))
        partial = np.tensordot(coeff, bx, axes=(1, 0))  # (count, k2, x1)
        fields = np.tensordot(partial.transpose(0, 2, 1), bx, axes=(2, 0)).real
    return fields


def make_transport_dataset(problem_dim: int, resolution: int, counts: tuple,
                           seed: int = 0, velocity: float = 0.2,
                           t_final: float = 1.0, max_mode: int = 12) -> OperatorDataset:
    """Initial-condition-to-final-state pairs for constant-velocity advection."""
    total = sum(counts)
    rng = np.random.default_rng(seed)
    f0 = _bandlimited_fields(rng, total, problem_dim, resolution, max_mode)
    vel = (velocity,) * problem_dim
    u = transport_exact(f0, vel, t_final)
    provenance = {"generator": "transport", "problem_dim": problem_dim,
                  "resolution": resolution, "counts": list(counts),
                  "velocity": velocity, "t_final": t_final,
                  "max_mode": max_mode, "seed": seed}
    return OperatorDataset(_stack_channel(f0), _stack_channel(u),
                           tuple(counts), provenance)


GENERATORS = {
    "poisson1d": lambda **kw: make_poisson_dataset(1, **kw),
    "poisson2d": lambda **kw: make_poisson_dataset(2, **kw),
    "darcy2d": lambda **kw: make_darcy_dataset(**kw),
    "transport1d": lambda **kw: make_transport_dataset(1, **kw),
    "transport2d": lambda **kw: make_transport_dataset(2, **kw),
}
