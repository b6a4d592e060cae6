"""Single-image numeric kernels behind :mod:`spoofbench.convops`.

Images are C-ordered ``(height, width, bands)`` float64 arrays. Every
kernel exists twice: a numba version (``*_numba``) and a numpy version
(``*_numpy``). The public names (``conv_valid``, ``lp_pool``,
``divisive_norm``) point at one of them according to ``SPOOFBENCH_JIT``.
Both paths agree to rounding; they are not bit-identical to each other.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._jit import JIT_ENABLED, njit

NORM_EPS = 1e-8

# rows of the im2col buffer are produced in blocks of at most this many
# elements so large inputs do not allocate hundreds of MB at once
_COLS_BUDGET = 1 << 22


def _rows_per_block(out_w, patch):
    return max(1, _COLS_BUDGET // max(1, out_w * patch))


# --------------------------------------------------------------------------
# numba


@njit
def _im2col_rows(img, L, y0, y1, out_w, cols):
    m = img.shape[2]
    r = 0
    for y in range(y0, y1):
        for x in range(out_w):
            k = 0
            for dy in range(L):
                for dx in range(L):
                    for b in range(m):
                        cols[r, k] = img[y + dy, x + dx, b]
                        k += 1
            r += 1


@njit
def _conv_valid_nb(img, w_t, L):
    h, w, m = img.shape
    n = w_t.shape[1]
    out_h = h - L + 1
    out_w = w - L + 1
    patch = L * L * m
    out = np.empty((out_h * out_w, n))
    step = max(1, (1 << 22) // max(1, out_w * patch))
    y0 = 0
    while y0 < out_h:
        y1 = min(out_h, y0 + step)
        cols = np.empty(((y1 - y0) * out_w, patch))
        _im2col_rows(img, L, y0, y1, out_w, cols)
        out[y0 * out_w:y1 * out_w] = np.dot(cols, w_t)
        y0 = y1
    return out.reshape(out_h, out_w, n)


@njit
def _lp_pool_nb(img, L, s, alpha):
    h, w, c = img.shape
    out_h = (h - L) // s + 1
    out_w = (w - L) // s + 1
    # raise each pixel once; windows overlap when s < L
    if alpha == 1.0:
        powered = img
    elif alpha == 2.0:
        powered = img * img
    else:
        powered = img ** alpha
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        for ox in range(out_w):
            y = oy * s
            x = ox * s
            for dy in range(L):
                for dx in range(L):
                    for b in range(c):
                        out[oy, ox, b] += powered[y + dy, x + dx, b]
    if alpha == 2.0:
        return np.sqrt(out)
    if alpha != 1.0:
        return out ** (1.0 / alpha)
    return out


@njit
def _divnorm_nb(img, L, eps):
    h, w, c = img.shape
    out_h = h - L + 1
    out_w = w - L + 1
    r = (L - 1) // 2
    energy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for b in range(c):
                acc += img[y, x, b] * img[y, x, b]
            energy[y, x] = acc
    out = np.empty((out_h, out_w, c))
    for oy in range(out_h):
        for ox in range(out_w):
            d = 0.0
            for dy in range(L):
                for dx in range(L):
                    d += energy[oy + dy, ox + dx]
            den = np.sqrt(d + eps)
            for b in range(c):
                out[oy, ox, b] = img[oy + r, ox + r, b] / den
    return out


def conv_valid_numba(img, weights):
    n, L = weights.shape[0], weights.shape[1]
    w_t = np.ascontiguousarray(weights.reshape(n, -1).T)
    return _conv_valid_nb(np.ascontiguousarray(img, dtype=np.float64), w_t, L)


def lp_pool_numba(img, L, s, alpha):
    return _lp_pool_nb(np.ascontiguousarray(img, dtype=np.float64), int(L), int(s), float(alpha))


def divisive_norm_numba(img, L, eps=NORM_EPS):
    return _divnorm_nb(np.ascontiguousarray(img, dtype=np.float64), int(L), float(eps))


# --------------------------------------------------------------------------
# numpy


def conv_valid_numpy(img, weights):
    n, L = weights.shape[0], weights.shape[1]
    h, w, m = img.shape
    out_h, out_w = h - L + 1, w - L + 1
    w_t = weights.reshape(n, -1).T
    # (out_h, out_w, m, L, L) -> (out_h, out_w, L, L, m) matches the weight layout
    win = sliding_window_view(img, (L, L), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    out = np.empty((out_h, out_w, n))
    step = _rows_per_block(out_w, L * L * m)
    for y0 in range(0, out_h, step):
        y1 = min(out_h, y0 + step)
        cols = win[y0:y1].reshape(-1, L * L * m)
        out[y0:y1] = (cols @ w_t).reshape(y1 - y0, out_w, n)
    return out


def lp_pool_numpy(img, L, s, alpha):
    alpha = float(alpha)
    if alpha == 1.0:
        powered = img
    elif alpha == 2.0:
        powered = img * img
    else:
        powered = img ** alpha
    win = sliding_window_view(powered, (L, L), axis=(0, 1))[::s, ::s]
    total = win.sum(axis=(-2, -1))
    if alpha == 1.0:
        return total
    if alpha == 2.0:
        return np.sqrt(total)
    return total ** (1.0 / alpha)


def divisive_norm_numpy(img, L, eps=NORM_EPS):
    r = (L - 1) // 2
    energy = (img * img).sum(axis=2)
    den = np.sqrt(sliding_window_view(energy, (L, L)).sum(axis=(-2, -1)) + eps)
    out_h, out_w = den.shape
    return img[r:r + out_h, r:r + out_w, :] / den[:, :, None]


if JIT_ENABLED:
    conv_valid = conv_valid_numba
    lp_pool = lp_pool_numba
    divisive_norm = divisive_norm_numba
    BACKEND = "numba"
else:
    conv_valid = conv_valid_numpy
    lp_pool = lp_pool_numpy
    divisive_norm = divisive_norm_numpy
    BACKEND = "numpy"
