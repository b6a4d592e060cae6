"""Multiband images and the geometric primitives the pipelines need.

A multiband image is a C-ordered float64 array of shape
``(height, width, bands)``. Pixel ``(x, y)`` lives at ``img[y, x]`` and
its attribute vector is ``img[y, x, :]``. 8-bit files map to ``[0, 1]``.

Feature vectors are 1-D arrays produced by :func:`flatten`: pixels in
row-major scan, the bands of one pixel adjacent (band-major within pixel).
"""
import math
import os

import numpy as np

from .errors import InvalidArgument, ShapeError, UnsupportedFormat

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def as_image(arr):
    """Coerce ``arr`` to a ``(h, w, m)`` float64 image and validate it."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ShapeError(f"expected a (height, width, bands) array, got shape {a.shape}")
    h, w, m = a.shape
    if h < 1 or w < 1 or m < 1:
        raise ShapeError(f"empty image of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("image contains non-finite values")
    return np.ascontiguousarray(a)


def size(img):
    """Return ``(width, height)``."""
    return img.shape[1], img.shape[0]


def _round_half_up_ratio(num, den):
    # round(num / den) with halves going up, exact in integers
    return (2 * num + den) // (2 * den)


def resize(img, width, height):
    """Bilinear resize to ``width x height`` with pixel-centre alignment.

    Every output value is a convex combination of input values, so the
    value range never grows. Same-size requests return a copy.
    """
    img = as_image(img)
    width, height = int(width), int(height)
    if width < 1 or height < 1:
        raise InvalidArgument(f"target size {width}x{height} is empty")
    h, w, _ = img.shape
    if (w, h) == (width, height):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return np.ascontiguousarray(top * (1 - fy) + bottom * fy)


def resize_keep_aspect(img, target_max_axis):
    """Resize so the greatest axis equals ``target_max_axis``.

    The minor axis is ``round_half_up(minor * target / major)``, never
    below one pixel.
    """
    target_max_axis = int(target_max_axis)
    if target_max_axis < 8:
        raise InvalidArgument(f"target_max_axis must be >= 8, got {target_max_axis}")
    img = as_image(img)
    h, w, _ = img.shape
    major = max(w, h)
    if major == target_max_axis:
        return img.copy()
    if w >= h:
        new_w, new_h = target_max_axis, max(1, _round_half_up_ratio(h * target_max_axis, w))
    else:
        new_h, new_w = target_max_axis, max(1, _round_half_up_ratio(w * target_max_axis, h))
    return resize(img, new_w, new_h)


def crop(img, x, y, width, height):
    h, w, _ = img.shape
    if x < 0 or y < 0 or width < 1 or height < 1 or x + width > w or y + height > h:
        raise ShapeError(f"crop window ({x}, {y}, {width}, {height}) outside {w}x{h} image")
    return img[y:y + height, x:x + width].copy()


def crop_center_fraction(img, frac_cols, frac_rows):
    """Keep the central ``floor(frac * dim)`` columns and rows.

    When the leftover margin is odd the extra pixel goes to the
    bottom/right side, i.e. the window leans toward the top-left.
    """
    for name, f in (("frac_cols", frac_cols), ("frac_rows", frac_rows)):
        if not (0.0 < f <= 1.0):
            raise InvalidArgument(f"{name} must lie in (0, 1], got {f}")
    img = as_image(img)
    h, w, _ = img.shape
    # the epsilon absorbs products such as 0.6 * 640 = 383.99999...
    new_w = int(math.floor(frac_cols * w + 1e-9))
    new_h = int(math.floor(frac_rows * h + 1e-9))
    if new_w < 1 or new_h < 1:
        raise InvalidArgument(f"crop of {w}x{h} by ({frac_cols}, {frac_rows}) is empty")
    return crop(img, (w - new_w) // 2, (h - new_h) // 2, new_w, new_h)


def to_grayscale(img):
    img = as_image(img)
    m = img.shape[2]
    if m == 1:
        return img.copy()
    if m != 3:
        raise UnsupportedFormat(f"grayscale conversion needs 1 or 3 bands, got {m}")
    r, g, b = LUMA_WEIGHTS
    return np.ascontiguousarray((r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2])[:, :, None])


def flatten(img):
    return np.array(img, dtype=np.float64).ravel()


def unflatten(vec, width, height, bands):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != width * height * bands:
        raise ShapeError(f"vector of length {vec.size} cannot be {width}x{height}x{bands}")
    return vec.reshape(height, width, bands).copy()


# --------------------------------------------------------------------------
# PGM / PPM


def _read_token(buf, pos):
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def read_pnm(path):
    """Load a binary 8-bit PGM (P5) or PPM (P6) as a ``[0, 1]`` image."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: only binary PGM (P5) and PPM (P6) are supported, found {magic[:2]!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise UnsupportedFormat(f"{path}: malformed header")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only maxval 255 is supported, found {maxval}")
    bands = 1 if magic == b"P5" else 3
    pos += 1  # single whitespace byte after maxval
    count = width * height * bands
    raw = np.frombuffer(buf, dtype=np.uint8, count=count, offset=pos) if len(buf) - pos >= count else None
    if raw is None:
        raise UnsupportedFormat(f"{path}: truncated pixel data")
    return raw.reshape(height, width, bands).astype(np.float64) / 255.0


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, img):
    """Write a 1-band image as P5 or a 3-band image as P6."""
    img = as_image(img)
    h, w, m = img.shape
    if m not in (1, 3):
        raise UnsupportedFormat(f"cannot store {m} bands as PGM/PPM")
    magic = b"P5" if m == 1 else b"P6"
    data = to_uint8(img).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data)
    os.replace(tmp, path)


def rescale_for_display(arr):
    """Map an array independently onto [0, 1] (constant arrays go to 0)."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo <= 0:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
