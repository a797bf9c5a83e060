"""
Low-level correlation kernels on batched 2-D grids.

Every routine works on arrays of shape ``(batch, rows, cols)`` with zero
padding outside the grid. Two interchangeable implementations exist: loops
compiled with :func:`numba.njit`, and a pure-numpy path built from shifted
slices. The numpy path is used when numba is unavailable or when the
environment variable ``CONVMG_DISABLE_NUMBA`` is set to a true value.

Strided sampling follows the vertex-centred convention: output index ``I``
along an axis with stride ``s`` reads the same-padded correlation at input
index ``s*I + s - 1``.
"""
import os

import numpy as np

_FALSY = {"", "0", "false", "no", "off"}

USE_NUMBA = os.environ.get("CONVMG_DISABLE_NUMBA", "").strip().lower() in _FALSY

if USE_NUMBA:
    try:
        import numba as nb
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    _threads = os.environ.get("CONVMG_NUM_THREADS")
    if _threads:
        nb.set_num_threads(max(1, min(int(_threads), nb.config.NUMBA_NUM_THREADS)))

BACKEND = "numba" if USE_NUMBA else "numpy"


def strided_size(n, s):
    """Number of samples a stride-``s`` pass leaves on an axis of length ``n``."""
    return (n - (s - 1)) // s


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _pad(f, rh, rw):
    return np.pad(f, ((0, 0), (rh, rh), (rw, rw)))


def np_corr_same(f, k):
    kh, kw = k.shape
    rh, rw = kh // 2, kw // 2
    _, n, m = f.shape
    fp = _pad(f, rh, rw)
    out = np.zeros_like(f)
    for p in range(kh):
        for q in range(kw):
            w = k[p, q]
            if w != 0.0:
                out += w * fp[:, p:p + n, q:q + m]
    return out


def np_corr_down(f, k, sr, sc):
    kh, kw = k.shape
    rh, rw = kh // 2, kw // 2
    b, n, m = f.shape
    n2, m2 = strided_size(n, sr), strided_size(m, sc)
    fp = _pad(f, rh, rw)
    out = np.zeros((b, n2, m2))
    for p in range(kh):
        i0 = sr - 1 + p
        for q in range(kw):
            w = k[p, q]
            if w != 0.0:
                j0 = sc - 1 + q
                out += w * fp[:, i0:i0 + sr * (n2 - 1) + 1:sr,
                              j0:j0 + sc * (m2 - 1) + 1:sc]
    return out


def np_corr_up(g, k, sr, sc, n, m):
    b, n2, m2 = g.shape
    z = np.zeros((b, n, m))
    z[:, sr - 1:sr - 1 + sr * (n2 - 1) + 1:sr,
      sc - 1:sc - 1 + sc * (m2 - 1) + 1:sc] = g
    return np_corr_same(z, k[::-1, ::-1])


def np_kernel_grad(f, g, sr, sc, kh, kw):
    rh, rw = kh // 2, kw // 2
    _, n2, m2 = g.shape
    fp = _pad(f, rh, rw)
    out = np.zeros((kh, kw))
    for p in range(kh):
        i0 = sr - 1 + p
        for q in range(kw):
            j0 = sc - 1 + q
            out[p, q] = np.sum(g * fp[:, i0:i0 + sr * (n2 - 1) + 1:sr,
                                      j0:j0 + sc * (m2 - 1) + 1:sc])
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USE_NUMBA:
    _opts = {"cache": True, "nogil": True}

    @nb.njit(**_opts)
    def _col_range(d, sc, m, m2):
        # j such that 0 <= sc*j + d < m
        jlo = (-d + sc - 1) // sc if d < 0 else 0
        jhi = min(m2, (m - d + sc - 1) // sc)
        return jlo, jhi

    @nb.njit(**_opts)
    def _nb_corr_same(f, k, out):
        nbatch, n, m = f.shape
        kh, kw = k.shape
        rh, rw = kh // 2, kw // 2
        for b in range(nbatch):
            for i in range(n):
                for p in range(kh):
                    ii = i + p - rh
                    if ii < 0 or ii >= n:
                        continue
                    for q in range(kw):
                        w = k[p, q]
                        if w == 0.0:
                            continue
                        d = q - rw
                        jlo = max(0, -d)
                        jhi = min(m, m - d)
                        for j in range(jlo, jhi):
                            out[b, i, j] += w * f[b, ii, j + d]

    @nb.njit(**_opts)
    def _nb_corr_down(f, k, sr, sc, out):
        nbatch, n, m = f.shape
        _, n2, m2 = out.shape
        kh, kw = k.shape
        rh, rw = kh // 2, kw // 2
        for b in range(nbatch):
            for i in range(n2):
                ic = sr * i + sr - 1
                for p in range(kh):
                    ii = ic + p - rh
                    if ii < 0 or ii >= n:
                        continue
                    for q in range(kw):
                        w = k[p, q]
                        if w == 0.0:
                            continue
                        d = sc - 1 + q - rw
                        jlo, jhi = _col_range(d, sc, m, m2)
                        for j in range(jlo, jhi):
                            out[b, i, j] += w * f[b, ii, sc * j + d]

    @nb.njit(**_opts)
    def _nb_corr_up(g, k, sr, sc, out):
        nbatch, n, m = out.shape
        _, n2, m2 = g.shape
        kh, kw = k.shape
        rh, rw = kh // 2, kw // 2
        for b in range(nbatch):
            for i in range(n2):
                ic = sr * i + sr - 1
                for p in range(kh):
                    ii = ic + p - rh
                    if ii < 0 or ii >= n:
                        continue
                    for q in range(kw):
                        w = k[p, q]
                        if w == 0.0:
                            continue
                        d = sc - 1 + q - rw
                        jlo, jhi = _col_range(d, sc, m, m2)
                        for j in range(jlo, jhi):
                            out[b, ii, sc * j + d] += w * g[b, i, j]

    @nb.njit(**_opts)
    def _nb_kernel_grad(f, g, sr, sc, out):
        nbatch, n, m = f.shape
        _, n2, m2 = g.shape
        kh, kw = out.shape
        rh, rw = kh // 2, kw // 2
        for b in range(nbatch):
            for i in range(n2):
                ic = sr * i + sr - 1
                for p in range(kh):
                    ii = ic + p - rh
                    if ii < 0 or ii >= n:
                        continue
                    for q in range(kw):
                        d = sc - 1 + q - rw
                        jlo, jhi = _col_range(d, sc, m, m2)
                        acc = 0.0
                        for j in range(jlo, jhi):
                            acc += g[b, i, j] * f[b, ii, sc * j + d]
                        out[p, q] += acc

    def nb_corr_same(f, k):
        out = np.zeros_like(f)
        _nb_corr_same(f, k, out)
        return out

    def nb_corr_down(f, k, sr, sc):
        b, n, m = f.shape
        out = np.zeros((b, strided_size(n, sr), strided_size(m, sc)))
        _nb_corr_down(f, k, sr, sc, out)
        return out

    def nb_corr_up(g, k, sr, sc, n, m):
        out = np.zeros((g.shape[0], n, m))
        _nb_corr_up(g, k, sr, sc, out)
        return out

    def nb_kernel_grad(f, g, sr, sc, kh, kw):
        out = np.zeros((kh, kw))
        _nb_kernel_grad(f, g, sr, sc, out)
        return out

    corr_same = nb_corr_same
    corr_down = nb_corr_down
    corr_up = nb_corr_up
    kernel_grad = nb_kernel_grad
else:
    corr_same = np_corr_same
    corr_down = np_corr_down
    corr_up = np_corr_up
    kernel_grad = np_kernel_grad
