"""
Structured-grid fields and the three convolution primitives.

A field is a real ``ndarray`` whose last two axes are the grid; any leading
axes are treated as a batch. Grids hold interior points only and everything
outside them is zero (homogeneous Dirichlet data), so every convolution pads
with zeros.

The convolutions are cross-correlations::

    conv_same(f, k)[i, j] = sum_{p,q} k[p, q] * f_pad[i + p, j + q]

with padding ``(size - 1) // 2``. ``conv_down`` samples that result at
``(2I + 1, 2J + 1)`` for stride 2, and ``conv_up`` is its exact adjoint.
"""
import numpy as np

from . import _kernels

__all__ = [
    "grid_side", "level_side", "coarse_shape", "as_kernel", "identity_kernel",
    "rot180", "conv_same", "conv_down", "conv_up", "axpy", "dot", "norm2",
    "conv_same_adjoint_field", "conv_same_adjoint_kernel",
    "conv_down_adjoint_field", "conv_down_adjoint_kernel",
    "conv_up_adjoint_field", "conv_up_adjoint_kernel",
]


def grid_side(J):
    """Interior points per direction, ``2**J - 1``."""
    if J < 1:
        raise ValueError(f"J must be >= 1, got {J}")
    return 2 ** J - 1


def level_side(J, level):
    """Side of the level-``level`` grid (level 1 is the finest) for fine grid ``J``."""
    return grid_side(J - level + 1)


def coarse_shape(shape, stride=(2, 2)):
    """Shape produced by a strided pass over a grid of ``shape``."""
    return (_kernels.strided_size(shape[-2], stride[0]),
            _kernels.strided_size(shape[-1], stride[1]))


def as_kernel(k):
    """Validate and return ``k`` as a float64 kernel with odd square size."""
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be odd-sized and square, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel weights must be finite")
    return np.ascontiguousarray(k)


def identity_kernel(size=3, scale=1.0):
    """Kernel with ``scale`` at the centre and zeros elsewhere."""
    k = np.zeros((size, size))
    k[size // 2, size // 2] = scale
    return k


def rot180(k):
    return np.ascontiguousarray(np.asarray(k)[::-1, ::-1])


def _batched(f):
    f = np.asarray(f, dtype=float)
    if f.ndim < 2:
        raise ValueError(f"field must have at least 2 dimensions, got {f.ndim}")
    lead = f.shape[:-2]
    return np.ascontiguousarray(f.reshape((-1,) + f.shape[-2:])), lead


def _check_stride(stride):
    sr, sc = (int(s) for s in stride)
    if sr < 1 or sc < 1:
        raise ValueError(f"strides must be positive, got {stride}")
    return sr, sc


def conv_same(f, k):
    """Size-preserving zero-padded correlation of ``f`` with ``k``."""
    k = as_kernel(k)
    fb, lead = _batched(f)
    return _kernels.corr_same(fb, k).reshape(lead + fb.shape[-2:])


def conv_down(f, k, stride=(2, 2)):
    """Strided correlation (restriction).

    Parameters
    ----------
    f : ndarray
        Field(s) with grid in the last two axes.
    k : array_like
        Odd-sized square kernel.
    stride : tuple of int
        Per-axis strides.

    Returns
    -------
    ndarray
        Correlation sampled at ``(s_r*I + s_r - 1, s_c*J + s_c - 1)``.
        A ``(2**J - 1)``-sided grid maps to ``(2**(J-1) - 1)`` under stride 2.
    """
    k = as_kernel(k)
    sr, sc = _check_stride(stride)
    fb, lead = _batched(f)
    n2, m2 = coarse_shape(fb.shape, (sr, sc))
    if n2 < 1 or m2 < 1:
        raise ValueError(f"grid {fb.shape[-2:]} is too small for stride {stride}")
    return _kernels.corr_down(fb, k, sr, sc).reshape(lead + (n2, m2))


def conv_up(f, k, out_shape, stride=(2, 2)):
    """Transposed strided correlation (prolongation), the adjoint of :func:`conv_down`."""
    k = as_kernel(k)
    sr, sc = _check_stride(stride)
    n, m = (int(s) for s in out_shape[-2:])
    fb, lead = _batched(f)
    if coarse_shape((n, m), (sr, sc)) != fb.shape[-2:]:
        raise ValueError(
            f"field of shape {fb.shape[-2:]} is not the stride-{(sr, sc)} "
            f"coarsening of {(n, m)}")
    return _kernels.corr_up(fb, k, sr, sc, n, m).reshape(lead + (n, m))


def _same_shape(f, g):
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    return f, g


def axpy(a, f, b, g):
    """Return ``a*f + b*g``."""
    f, g = _same_shape(f, g)
    return a * f + b * g


def dot(f, g):
    f, g = _same_shape(f, g)
    return float(np.sum(f * g))


def norm2(f):
    return float(np.sqrt(np.sum(np.square(f))))


# Reverse-mode building blocks. For ``y = Op(f, k)`` and output cotangent
# ``ybar`` each pair returns the cotangent of the field and of the kernel.

def conv_same_adjoint_field(ybar, k):
    return conv_same(ybar, rot180(k))


def conv_same_adjoint_kernel(ybar, f, size):
    fb, _ = _batched(f)
    gb, _ = _batched(ybar)
    return _kernels.kernel_grad(fb, gb, 1, 1, size, size)


def conv_down_adjoint_field(ybar, k, out_shape, stride=(2, 2)):
    return conv_up(ybar, k, out_shape, stride)


def conv_down_adjoint_kernel(ybar, f, size, stride=(2, 2)):
    sr, sc = _check_stride(stride)
    fb, _ = _batched(f)
    gb, _ = _batched(ybar)
    return _kernels.kernel_grad(fb, gb, sr, sc, size, size)


def conv_up_adjoint_field(ybar, k, stride=(2, 2)):
    return conv_down(ybar, k, stride)


def conv_up_adjoint_kernel(ybar, g, size, stride=(2, 2)):
    # <conv_up(g, k), ybar> = <g, conv_down(ybar, k)>
    sr, sc = _check_stride(stride)
    yb, _ = _batched(ybar)
    gb, _ = _batched(g)
    return _kernels.kernel_grad(yb, gb, sr, sc, size, size)
