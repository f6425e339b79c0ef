"""Spectral primitives: real FFTs, per-mode channel mixing, bandlimited
resampling and spatial convolution, all differentiable through the tape.

Conventions
-----------
Fields are laid out batch-first, channels-last: ``(batch, *spatial, channels)``.
Transforms are unnormalized forward / ``1/N`` inverse (numpy's default).  The
last transformed axis is stored in half-spectrum form; complex arrays are
``complex128``, whose memory layout is the interleaved (real, imaginary)
pairing.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ShapeError
from .tensor import DiffTensor, as_difftensor, make_node

__all__ = [
    "SpectralCoeffs",
    "rfft_nd",
    "irfft_nd",
    "spectral_multiply",
    "resample_spectral",
    "conv_spatial",
]


def _check_spatial_dims(x: DiffTensor, dims) -> tuple:
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise ShapeError("at least one spatial dimension required")
    for d in dims:
        if not 0 < d < x.ndim - 1:
            raise ShapeError(
                f"dimension {d} is not a spatial axis of a (batch, *spatial, channels) "
                f"field with {x.ndim} axes")
    if len(set(dims)) != len(dims):
        raise ShapeError("duplicate spatial dimension")
    return dims


@dataclass
class SpectralCoeffs:
    """Half-spectrum Fourier coefficients of a real field.

    ``tensor`` holds complex128 values with the spatial axes replaced by mode
    axes; the last transformed axis is conjugate-symmetric and stores only
    ``n // 2 + 1`` modes.  ``spatial_shape`` remembers the original grid
    extents so the transform can be inverted.
    """

    tensor: DiffTensor
    spatial_shape: tuple
    dims: tuple

    @property
    def mode_extents(self) -> tuple:
        return tuple(self.tensor.shape[d] for d in self.dims)

    @property
    def channels(self) -> int:
        return self.tensor.shape[-1]


def rfft_nd(x, dims) -> SpectralCoeffs:
    """Forward real FFT of a field over the listed spatial dimensions."""
    x = as_difftensor(x)
    dims = _check_spatial_dims(x, dims)
    spatial_shape = tuple(x.shape[d] for d in dims)
    for n in spatial_shape:
        if n < 2:
            raise ShapeError(f"spatial extent {n} < 2")
    values = np.fft.rfftn(x.values, axes=dims)
    n_total = int(np.prod(spatial_shape))
    half_axis = dims[-1]
    half_len = x.shape[half_axis]

    def bwd(g):
        full_shape = list(g.shape)
        full_shape[half_axis] = half_len
        z = np.zeros(full_shape, dtype=np.complex128)
        idx = [slice(None)] * g.ndim
        idx[half_axis] = slice(0, g.shape[half_axis])
        z[tuple(idx)] = g
        x._accumulate((np.fft.ifftn(z, axes=dims) * n_total).real)

    out = make_node(values, (x,), bwd)
    return SpectralCoeffs(out, spatial_shape, dims)


def irfft_nd(coeffs: SpectralCoeffs) -> DiffTensor:
    """Inverse of :func:`rfft_nd`, returning the real field."""
    X = coeffs.tensor
    dims = coeffs.dims
    spatial_shape = coeffs.spatial_shape
    values = np.fft.irfftn(X.values, s=spatial_shape, axes=dims)
    n_total = int(np.prod(spatial_shape))
    half_axis = dims[-1]
    n_last = spatial_shape[-1]

    def bwd(g):
        # adjoint of the last-axis real inverse transform ...
        gX = np.fft.rfft(g, axis=half_axis) / n_last
        m = gX.shape[half_axis]
        scale = np.full(m, 2.0)  # non-self-conjugate bins represent two modes
        scale[0] = 1.0
        if n_last % 2 == 0:
            scale[-1] = 1.0
        shape = [1] * gX.ndim
        shape[half_axis] = m
        gX = gX * scale.reshape(shape)
        idx = [slice(None)] * gX.ndim
        idx[half_axis] = 0
        gX[tuple(idx)] = gX[tuple(idx)].real  # dead imaginary inputs
        if n_last % 2 == 0:
            idx[half_axis] = m - 1
            gX[tuple(idx)] = gX[tuple(idx)].real
        # ... then of the complex inverse transforms over the leading axes
        for ax, n in zip(dims[:-1], spatial_shape[:-1]):
            gX = np.fft.fft(gX, axis=ax) / n
        X._accumulate(gX)

    return make_node(values, (X,), bwd)


# -- per-mode channel mixing -----------------------------------------------------


def _corner_slices(n: int, w: int, axis_name: str):
    """Slices selecting the retained corner blocks of a full-spectrum axis."""
    if w == n:
        return [(slice(None), slice(None))]
    if w % 2 != 0:
        raise ShapeError(
            f"{axis_name}: partial retention on a full-spectrum axis needs an even "
            f"weight extent, got {w}")
    k = w // 2
    if k > n:
        raise ShapeError(f"{axis_name}: weight extent {w} exceeds coefficient extent {n}")
    # (coefficient slice, weight slice): positive then negative frequencies; at
    # marginal Nyquist resolutions (n < 2k) the two blocks overlap and their
    # contributions accumulate
    return [(slice(0, k), slice(0, k)), (slice(n - k, n), slice(k, 2 * k))]


def spectral_multiply(coeffs: SpectralCoeffs, weights) -> SpectralCoeffs:
    """Apply a per-mode channel-mixing matrix to retained modes.

    ``weights`` has shape ``(*mode_extents, in_channels, out_channels)`` with
    complex entries.  Full-spectrum axes with a weight extent smaller than the
    coefficient extent retain the two conjugate corner blocks (half the extent
    each); the half-spectrum axis retains the leading block.  Modes outside
    the retained set are zeroed.
    """
    weights = as_difftensor(weights)
    X = coeffs.tensor
    dims = coeffs.dims
    d = len(dims)
    if weights.ndim != d + 2:
        raise ShapeError(f"weights must have {d} mode axes plus (in, out) channels")
    if weights.shape[-2] != coeffs.channels:
        raise ShapeError(
            f"channel mismatch: coefficients carry {coeffs.channels}, weights expect "
            f"{weights.shape[-2]}")
    out_channels = weights.shape[-1]

    per_axis = []
    for i, dim in enumerate(dims):
        n = X.shape[dim]
        w = weights.shape[i]
        if i == d - 1:  # half-spectrum axis
            if w > n:
                raise ShapeError(f"half-axis weight extent {w} exceeds {n}")
            per_axis.append([(slice(0, w), slice(0, w))])
        else:
            per_axis.append(_corner_slices(n, w, f"mode axis {i}"))

    out_shape = list(X.shape)
    out_shape[-1] = out_channels
    out = np.zeros(out_shape, dtype=np.complex128)

    blocks = []  # (coeff index, weight index) per corner combination
    for combo in product(*per_axis):
        cidx = [slice(None)] * X.ndim
        widx = [slice(None)] * weights.ndim
        for i, dim in enumerate(dims):
            cidx[dim] = combo[i][0]
            widx[i] = combo[i][1]
        blocks.append((tuple(cidx), tuple(widx)))

    for cidx, widx in blocks:
        out[cidx] += np.einsum("b...i,...io->b...o", X.values[cidx], weights.values[widx])

    def bwd(g):
        if X.requires_grad:
            gX = np.zeros_like(X.values)
            for cidx, widx in blocks:
                gX[cidx] += np.einsum("b...o,...io->b...i", g[cidx],
                                      np.conj(weights.values[widx]))
            X._accumulate(gX)
        if weights.requires_grad:
            gW = np.zeros_like(weights.values)
            for cidx, widx in blocks:
                gW[widx] += np.einsum("b...i,b...o->...io", np.conj(X.values[cidx]),
                                      g[cidx])
            weights._accumulate(gW)

    node = make_node(out, (X, weights), bwd)
    return SpectralCoeffs(node, coeffs.spatial_shape, dims)


# -- bandlimited resampling ------------------------------------------------------


def _axis_copy_ops(n_src: int, n_tgt: int, half: bool):
    """Spectral resize rules for one axis as (src slice, tgt slice, weight, conj).

    On full axes the Nyquist bin splits in two on the way up and the two
    fold bins sum on the way down; on the half axis the implicit conjugate
    twin supplies the fold term.  Together with the ``n_tgt / n_src`` value
    scaling these rules make upsample-then-downsample an exact identity.
    """
    if half:
        m_src = n_src // 2 + 1
        m_tgt = n_tgt // 2 + 1
        if n_tgt == n_src:
            return [(slice(0, m_src), slice(0, m_src), 1.0, False)]
        if n_tgt > n_src:
            if n_src % 2 == 0:
                return [(slice(0, m_src - 1), slice(0, m_src - 1), 1.0, False),
                        (slice(m_src - 1, m_src), slice(m_src - 1, m_src), 0.5, False)]
            return [(slice(0, m_src), slice(0, m_src), 1.0, False)]
        # downsample: the implicit conjugate twin feeds the new Nyquist bin
        if n_tgt % 2 == 0:
            return [(slice(0, m_tgt - 1), slice(0, m_tgt - 1), 1.0, False),
                    (slice(m_tgt - 1, m_tgt), slice(m_tgt - 1, m_tgt), 1.0, False),
                    (slice(m_tgt - 1, m_tgt), slice(m_tgt - 1, m_tgt), 1.0, True)]
        return [(slice(0, m_tgt), slice(0, m_tgt), 1.0, False)]

    if n_tgt == n_src:
        return [(slice(0, n_src), slice(0, n_src), 1.0, False)]
    if n_tgt > n_src:
        h = n_src // 2
        if n_src % 2 == 0:
            return [
                (slice(0, h), slice(0, h), 1.0, False),
                (slice(h, h + 1), slice(h, h + 1), 0.5, False),
                (slice(h, h + 1), slice(n_tgt - h, n_tgt - h + 1), 0.5, False),
                (slice(h + 1, n_src), slice(n_tgt - h + 1, n_tgt), 1.0, False),
            ]
        return [
            (slice(0, h + 1), slice(0, h + 1), 1.0, False),
            (slice(h + 1, n_src), slice(n_tgt - h, n_tgt), 1.0, False),
        ]
    # downsample
    h = n_tgt // 2
    if n_tgt % 2 == 0:
        return [
            (slice(0, h), slice(0, h), 1.0, False),
            (slice(h, h + 1), slice(h, h + 1), 1.0, False),
            (slice(n_src - h, n_src - h + 1), slice(h, h + 1), 1.0, False),
            (slice(n_src - h + 1, n_src), slice(h + 1, n_tgt), 1.0, False),
        ]
    return [
        (slice(0, h + 1), slice(0, h + 1), 1.0, False),
        (slice(n_src - h, n_src), slice(n_tgt - h, n_tgt), 1.0, False),
    ]


def _flip_modes(arr: np.ndarray, axes) -> np.ndarray:
    """Map index k -> (-k) mod n along the given axes (an involution)."""
    for ax in axes:
        n = arr.shape[ax]
        arr = np.take(arr, (n - np.arange(n)) % n, axis=ax)
    return arr


def _resize_axis(X: DiffTensor, axis: int, n_src: int, n_tgt: int, half: bool,
                 other_axes=()) -> DiffTensor:
    if n_tgt == n_src:
        return X
    ops = _axis_copy_ops(n_src, n_tgt, half)
    out_shape = list(X.shape)
    out_shape[axis] = (n_tgt // 2 + 1) if half else n_tgt
    out = np.zeros(out_shape, dtype=np.complex128)
    ndim = X.ndim
    other_axes = tuple(other_axes)

    def sl(s):
        idx = [slice(None)] * ndim
        idx[axis] = s
        return tuple(idx)

    def fold(block, use_conj):
        # the Hermitian twin of (k_other, -k_half) lives at (-k_other, k_half)
        if not use_conj:
            return block
        return np.conj(_flip_modes(block, other_axes))

    for s_src, s_tgt, w, use_conj in ops:
        out[sl(s_tgt)] += w * fold(X.values[sl(s_src)], use_conj)

    def bwd(g):
        gX = np.zeros_like(X.values)
        for s_src, s_tgt, w, use_conj in ops:
            gX[sl(s_src)] += w * fold(g[sl(s_tgt)], use_conj)
        X._accumulate(gX)

    return make_node(out, (X,), bwd)


def resample_spectral(x, target, dims=None) -> DiffTensor:
    """Resample a real field to a new grid by spectral zero-padding/truncation.

    Upsampling embeds the spectrum in a larger band (exact for periodic
    bandlimited inputs); downsampling truncates above the target Nyquist
    band.  Function values are preserved (coefficients are rescaled by the
    resolution ratio).
    """
    x = as_difftensor(x)
    if dims is None:
        dims = tuple(range(1, x.ndim - 1))
    dims = _check_spatial_dims(x, dims)
    src = tuple(x.shape[d] for d in dims)
    if isinstance(target, (int, np.integer)):
        tgt = (int(target),) * len(dims)
    else:
        tgt = tuple(int(t) for t in target)
    if len(tgt) != len(dims):
        raise ValueError(f"target {tgt} does not match {len(dims)} spatial dims")
    for n in tgt:
        if n < 2:
            raise ValueError(f"target resolution {n} < 2")
    for n in src:
        if n < 2:
            raise ValueError(f"source resolution {n} < 2")
    if tgt == src:
        return x

    coeffs = rfft_nd(x, dims)
    X = coeffs.tensor
    for i, dim in enumerate(dims):
        X = _resize_axis(X, dim, src[i], tgt[i], half=(i == len(dims) - 1),
                         other_axes=dims[:-1] if i == len(dims) - 1 else ())
    scale = float(np.prod([t / s for t, s in zip(tgt, src)]))
    X = X * scale
    return irfft_nd(SpectralCoeffs(X, tgt, dims))


# -- spatial convolution ---------------------------------------------------------


def _shifted(arr: np.ndarray, offsets, axes, periodic: bool) -> np.ndarray:
    """Return array with entry at ``pos`` taken from ``pos + offsets``."""
    if periodic:
        return np.roll(arr, tuple(-o for o in offsets), axes)
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    for o, ax in zip(offsets, axes):
        n = arr.shape[ax]
        if abs(o) >= n:
            return out
        dst[ax] = slice(max(0, -o), n - max(0, o))
        src[ax] = slice(max(0, o), n - max(0, -o))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def conv_spatial(x, kernel, bias=None, padding: str = "periodic") -> DiffTensor:
    """Channel-mixing discrete cross-correlation with an odd k^d tap grid.

    ``kernel`` has shape ``(k, ..., k, in_channels, out_channels)``; the tap
    grid is centered, so a delta kernel at the center is the identity.
    """
    x = as_difftensor(x)
    kernel = as_difftensor(kernel)
    if padding not in ("periodic", "zero"):
        raise ValueError(f"padding must be 'periodic' or 'zero', got {padding!r}")
    d = kernel.ndim - 2
    if d < 1 or x.ndim != d + 2:
        raise ShapeError(
            f"kernel with {d} tap axes does not match field with {x.ndim} axes")
    taps = kernel.shape[:d]
    for k in taps:
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
    if kernel.shape[d] != x.shape[-1]:
        raise ShapeError(
            f"kernel expects {kernel.shape[d]} input channels, field has {x.shape[-1]}")
    axes = tuple(range(1, 1 + d))
    periodic = padding == "periodic"
    centers = tuple(k // 2 for k in taps)
    offsets = [tuple(t[i] - centers[i] for i in range(d))
               for t in product(*(range(k) for k in taps))]

    out_shape = x.shape[:-1] + (kernel.shape[-1],)
    out = np.zeros(out_shape)
    for off in offsets:
        tap = tuple(off[i] + centers[i] for i in range(d))
        out += _shifted(x.values, off, axes, periodic) @ kernel.values[tap]
    if bias is not None:
        bias = as_difftensor(bias)
        out += bias.values
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.values)
            for off in offsets:
                tap = tuple(off[i] + centers[i] for i in range(d))
                gx += _shifted(g @ kernel.values[tap].T,
                               tuple(-o for o in off), axes, periodic)
            x._accumulate(gx)
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.values)
            ci = x.shape[-1]
            co = g.shape[-1]
            flat_g = g.reshape(-1, co)
            for off in offsets:
                tap = tuple(off[i] + centers[i] for i in range(d))
                shifted = _shifted(x.values, off, axes, periodic).reshape(-1, ci)
                gk[tap] = shifted.T @ flat_g
            kernel._accumulate(gk)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return make_node(out, parents, bwd)
