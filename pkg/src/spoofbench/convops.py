"""Convolutional network operations on multiband images.

A layer applies, in this order: filter-bank convolution, rectified
linear activation, L-alpha spatial pooling and (optionally) divisive
normalization. All windows are "valid": no padding, domains shrink.

A filter bank is a float64 array of shape ``(n, L, L, m)``: ``n`` filters
of odd side ``L`` over ``m`` input bands. Convolution is applied as a
correlation (the kernel is not flipped).
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import InvalidArgument, ShapeError
from .imagecore import as_image, flatten

MAX_LAYERS = 3


@dataclass(frozen=True)
class LayerSpec:
    n_filters: int
    filter_size: int
    pool_size: int
    pool_stride: int
    pool_exponent: float
    use_norm: bool
    norm_size: int = 0

    def __post_init__(self):
        for name in ("filter_size", "pool_size"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise InvalidArgument(f"{name} must be odd and >= 1, got {v}")
        if self.use_norm and (self.norm_size < 1 or self.norm_size % 2 == 0):
            raise InvalidArgument(f"norm_size must be odd and >= 1, got {self.norm_size}")
        if self.n_filters < 1:
            raise InvalidArgument("n_filters must be >= 1")
        if self.pool_stride < 1:
            raise InvalidArgument("pool_stride must be >= 1")
        if self.pool_exponent < 1:
            raise InvalidArgument("pool_exponent must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _check_window(img, L, what):
    h, w = img.shape[:2]
    if h < L or w < L:
        raise ShapeError(f"{what}: {w}x{h} input is smaller than the {L}x{L} window")


def convolve(img, bank):
    """Valid-region correlation of ``img`` with every filter of ``bank``.

    Output band ``i`` at ``p`` is the dot product of filter ``i`` with the
    ``L x L x m`` neighbourhood of ``p``.
    """
    bank = np.asarray(bank, dtype=np.float64)
    if bank.ndim != 4 or bank.shape[1] != bank.shape[2]:
        raise ShapeError(f"filter bank must be (n, L, L, m), got {bank.shape}")
    if img.shape[2] != bank.shape[3]:
        raise ShapeError(f"image has {img.shape[2]} bands, filters expect {bank.shape[3]}")
    _check_window(img, bank.shape[1], "convolve")
    return kernels.conv_valid(img, bank)


def relu(img):
    return np.maximum(img, 0.0)


def pool(img, size, stride, alpha):
    """L-alpha pooling over ``size x size`` windows placed every ``stride`` pixels.

    The grid starts at the first valid window; windows that would leave
    the domain are dropped.
    """
    if size < 1 or stride < 1:
        raise InvalidArgument("pool size and stride must be >= 1")
    if alpha < 1:
        raise InvalidArgument(f"pool exponent must be >= 1, got {alpha}")
    _check_window(img, size, "pool")
    if size == 1:
        # single-element windows: (v^a)^(1/a) = v for v >= 0, kept exact
        return np.ascontiguousarray(img[::stride, ::stride])
    return kernels.lp_pool(img, size, stride, alpha)


def divnorm(img, size, eps=kernels.NORM_EPS):
    """Divide each value by the local energy pooled over all bands."""
    _check_window(img, size, "divnorm")
    return kernels.divisive_norm(img, size, eps)


def layer_shapes(height, width, bands, layers):
    """Chain the shape arithmetic of ``layers`` without touching pixels.

    Returns one dict per layer with ``conv``, ``pool``, ``norm`` and
    ``out`` entries as ``(height, width, bands)``; raises ShapeError on the
    first dimension that drops below one pixel.
    """
    shapes = []
    h, w = height, width
    for k, spec in enumerate(layers, start=1):
        entry = {}
        h, w = h - spec.filter_size + 1, w - spec.filter_size + 1
        if h < 1 or w < 1:
            raise ShapeError(f"layer {k}: convolution collapses the input")
        entry["conv"] = (h, w, spec.n_filters)
        if h < spec.pool_size or w < spec.pool_size:
            raise ShapeError(f"layer {k}: pooling window larger than its input")
        h, w = (h - spec.pool_size) // spec.pool_stride + 1, (w - spec.pool_size) // spec.pool_stride + 1
        entry["pool"] = (h, w, spec.n_filters)
        if spec.use_norm:
            h, w = h - spec.norm_size + 1, w - spec.norm_size + 1
            if h < 1 or w < 1:
                raise ShapeError(f"layer {k}: normalization collapses the input")
            entry["norm"] = (h, w, spec.n_filters)
        entry["out"] = (h, w, spec.n_filters)
        shapes.append(entry)
    return shapes


def apply_layer(img, spec, bank):
    out = relu(convolve(img, bank))
    out = pool(out, spec.pool_size, spec.pool_stride, spec.pool_exponent)
    if spec.use_norm:
        out = divnorm(out, spec.norm_size)
    return out


def forward_image(img, layers, filters):
    """Run the layer stack and return the final multiband image."""
    if not 1 <= len(layers) <= MAX_LAYERS:
        raise InvalidArgument(f"between 1 and {MAX_LAYERS} layers are supported, got {len(layers)}")
    if len(filters) != len(layers):
        raise InvalidArgument("one filter bank per layer is required")
    out = as_image(img)
    for k, (spec, bank) in enumerate(zip(layers, filters), start=1):
        try:
            out = apply_layer(out, spec, bank)
        except ShapeError as exc:
            raise ShapeError(f"layer {k}: {exc}") from None
    return out


def forward(img, layers, filters):
    """Deep representation of ``img`` as a flat feature vector."""
    return flatten(forward_image(img, layers, filters))
