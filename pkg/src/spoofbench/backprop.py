"""Filter learning by back-propagation in a small two-layer network.

Layers follow the random-filter networks (convolution + bias, ReLU,
L-alpha pooling, optional divisive normalization), followed by a fully
connected layer and a two-way softmax (index 0 = real, 1 = fake).
Everything is batched over a leading sample axis: arrays are
``(N, height, width, bands)``.

Training uses plain mini-batch SGD on the mean cross-entropy, ten
crop/mirror samples per training image and a four-phase schedule: the
first phase trains on three of four stratified batches and monitors
accuracy on the fourth, the remaining phases train on all four with
decreasing learning rates.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import convops
from . import imagecore as ic
from .convops import LayerSpec
from .errors import InvalidArgument, ShapeError
from .kernels import NORM_EPS

log = logging.getLogger(__name__)

N_AUGMENT = 10
INIT_STD = 0.01
BATCH_SIZE = 32


# --------------------------------------------------------------------------
# batched operations with their gradients


def conv_forward(x, W, b):
    n, L = W.shape[0], W.shape[1]
    N, h, w, m = x.shape
    oh, ow = h - L + 1, w - L + 1
    cols = sliding_window_view(x, (L, L), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3).reshape(-1, L * L * m)
    out = (cols @ W.reshape(n, -1).T + b).reshape(N, oh, ow, n)
    return out, cols


def conv_backward(dy, x_shape, W, cols):
    n, L = W.shape[0], W.shape[1]
    N, h, w, m = x_shape
    oh, ow = dy.shape[1], dy.shape[2]
    dy2 = dy.reshape(-1, n)
    dW = (dy2.T @ cols).reshape(W.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ W.reshape(n, -1)).reshape(N, oh, ow, L, L, m)
    dx = np.zeros(x_shape)
    for i in range(L):
        for j in range(L):
            dx[:, i:i + oh, j:j + ow, :] += dcols[:, :, :, i, j, :]
    return dx, dW, db


def _pool_slices(L, s, oh, ow):
    for i in range(L):
        for j in range(L):
            yield i, j, (slice(None), slice(i, i + s * (oh - 1) + 1, s), slice(j, j + s * (ow - 1) + 1, s))


def pool_forward(x, L, s, alpha):
    """L-alpha pooling of non-negative input; returns output and cache."""
    N, h, w, m = x.shape
    if h < L or w < L:
        raise ShapeError(f"pool: {w}x{h} input is smaller than the {L}x{L} window")
    oh, ow = (h - L) // s + 1, (w - L) // s + 1
    p = x if alpha == 1 else x ** alpha
    total = np.zeros((N, oh, ow, m))
    for _, _, sl in _pool_slices(L, s, oh, ow):
        total += p[sl]
    y = total if alpha == 1 else total ** (1.0 / alpha)
    return y, (x, y)


def pool_backward(dy, L, s, alpha, cache):
    x, y = cache
    oh, ow = y.shape[1], y.shape[2]
    dx = np.zeros_like(x)
    if alpha == 1:
        for _, _, sl in _pool_slices(L, s, oh, ow):
            dx[sl] += dy
        return dx
    # d y / d x_k = (x_k / y)^(alpha - 1); zero where the window is all zero
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(y > 0, dy * y ** (1.0 - alpha), 0.0)
    xa = x ** (alpha - 1.0)
    for _, _, sl in _pool_slices(L, s, oh, ow):
        dx[sl] += g * xa[sl]
    return dx


def divnorm_forward(x, L, eps=NORM_EPS):
    N, h, w, m = x.shape
    if h < L or w < L:
        raise ShapeError(f"divnorm: {w}x{h} input is smaller than the {L}x{L} window")
    r = (L - 1) // 2
    energy = (x * x).sum(axis=3)
    den = np.sqrt(sliding_window_view(energy, (L, L), axis=(1, 2)).sum(axis=(-2, -1)) + eps)
    oh, ow = den.shape[1], den.shape[2]
    center = x[:, r:r + oh, r:r + ow, :]
    return center / den[..., None], (x, den)


def divnorm_backward(dy, L, cache):
    x, den = cache
    r = (L - 1) // 2
    oh, ow = den.shape[1], den.shape[2]
    dx = np.zeros_like(x)
    center = x[:, r:r + oh, r:r + ow, :]
    dx[:, r:r + oh, r:r + ow, :] += dy / den[..., None]
    # d/dD of c / sqrt(D) = -c / (2 D^(3/2))
    dD = -(dy * center).sum(axis=3) / (2.0 * den ** 3)
    dE = np.zeros(x.shape[:3])
    for i in range(L):
        for j in range(L):
            dE[:, i:i + oh, j:j + ow] += dD
    dx += 2.0 * x * dE[..., None]
    return dx


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# network


@dataclass
class TrainableNet:
    layers: tuple
    params: dict
    input_size: int = 128
    crop_size: int = 112
    bands: int = 1
    meta: dict = field(default_factory=dict)
    input_mean: np.ndarray = None
    input_scale: float = 1.0

    @property
    def feature_shape(self):
        return tuple(convops.layer_shapes(self.crop_size, self.crop_size, self.bands, self.layers)[-1]["out"])

    def copy(self):
        return TrainableNet(self.layers, {k: v.copy() for k, v in self.params.items()},
                            self.input_size, self.crop_size, self.bands, dict(self.meta),
                            None if self.input_mean is None else self.input_mean.copy(), self.input_scale)

    def normalize(self, img):
        """Subtract the stored mean image and divide by the stored scale."""
        img = ic.as_image(img)
        if self.input_mean is not None:
            img = img - self.input_mean
        return img / self.input_scale

    def to_dict(self):
        return {
            "layers": [l.to_dict() for l in self.layers],
            "input_size": self.input_size,
            "crop_size": self.crop_size,
            "bands": self.bands,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "meta": self.meta,
            "input_mean": None if self.input_mean is None else self.input_mean.ravel().tolist(),
            "input_scale": self.input_scale,
        }

    @classmethod
    def from_dict(cls, d):
        params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
        size, bands = int(d["input_size"]), int(d["bands"])
        mean = d.get("input_mean")
        if mean is not None:
            mean = np.asarray(mean, dtype=np.float64).reshape(size, size, bands)
        return cls(tuple(LayerSpec.from_dict(l) for l in d["layers"]), params, size, int(d["crop_size"]),
                   bands, dict(d.get("meta", {})), mean, float(d.get("input_scale", 1.0)))


def build_net(layers, crop_size, bands=1, input_size=None, rng_seed=0, init_std=INIT_STD):
    """Network with Gaussian(0, init_std) weights and zero biases."""
    layers = tuple(layers)
    shapes = convops.layer_shapes(crop_size, crop_size, bands, layers)
    rng = np.random.default_rng(rng_seed)
    params = {}
    m = bands
    for k, spec in enumerate(layers, start=1):
        params[f"conv{k}.W"] = rng.normal(0.0, init_std, (spec.n_filters, spec.filter_size, spec.filter_size, m))
        params[f"conv{k}.b"] = np.zeros(spec.n_filters)
        m = spec.n_filters
    d = int(np.prod(shapes[-1]["out"]))
    params["fc.W"] = rng.normal(0.0, init_std, (d, 2))
    params["fc.b"] = np.zeros(2)
    if input_size is None:
        input_size = crop_size
    if input_size < crop_size:
        raise InvalidArgument("input size must be at least the crop size")
    return TrainableNet(layers, params, int(input_size), int(crop_size), int(bands))


def spoofnet_layers(n1=16, filter_size1=5, n2=32, filter_size2=5, pool_size=3, pool_stride=2,
                    pool_exponent=2.0, norm_size=5):
    return (LayerSpec(n1, filter_size1, pool_size, pool_stride, float(pool_exponent), False),
            LayerSpec(n2, filter_size2, pool_size, pool_stride, float(pool_exponent), norm_size > 0, norm_size))


def build_spoofnet(input_size=128, crop_size=112, bands=1, rng_seed=0, init_std=INIT_STD, **layer_args):
    """The fixed two-layer detector; ``layer_args`` go to :func:`spoofnet_layers`.

    The reduced variant keeps the topology and scales the geometry, e.g.
    ``input_size=64, crop_size=56``.
    """
    return build_net(spoofnet_layers(**layer_args), crop_size, bands, input_size, rng_seed, init_std)


def _check_input(net, x):
    if x.ndim != 4 or x.shape[1:] != (net.crop_size, net.crop_size, net.bands):
        raise ShapeError(f"network expects (N, {net.crop_size}, {net.crop_size}, {net.bands}) input, "
                         f"got {x.shape}")


def forward(net, x, keep=False):
    """Class probabilities ``(N, 2)`` and, when ``keep``, the backward cache."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(net, x)
    caches = []
    out = x
    for k, spec in enumerate(net.layers, start=1):
        W, b = net.params[f"conv{k}.W"], net.params[f"conv{k}.b"]
        z, cols = conv_forward(out, W, b)
        a = np.maximum(z, 0.0)
        pooled, pcache = pool_forward(a, spec.pool_size, spec.pool_stride, spec.pool_exponent)
        entry = {"x_shape": out.shape, "cols": cols if keep else None, "z": z, "pool": pcache}
        out = pooled
        if spec.use_norm:
            out, entry["norm"] = divnorm_forward(out, spec.norm_size)
        caches.append(entry)
    flat = out.reshape(out.shape[0], -1)
    probs = softmax(flat @ net.params["fc.W"] + net.params["fc.b"])
    if not keep:
        return probs, None
    return probs, {"layers": caches, "feat": out, "flat": flat, "probs": probs}


def _targets(y):
    y = np.asarray(y)
    if np.all(np.isin(y, (-1, 1))) and np.any(y == -1):
        return (y == 1).astype(np.int64)
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidArgument("labels must be 0/1 or -1/+1 (fake = 1)")
    return y.astype(np.int64)


def forward_loss(net, x, y, keep=False):
    """Mean cross-entropy of the batch and its class probabilities."""
    t = _targets(y)
    if t.size == 0:
        raise InvalidArgument("empty batch")
    probs, cache = forward(net, x, keep)
    p_true = probs[np.arange(t.size), t]
    loss = float(-np.mean(np.log(np.maximum(p_true, np.finfo(float).tiny))))
    if cache is not None:
        cache["t"] = t
    return loss, probs, cache


def backward(net, cache):
    """Gradients of the mean cross-entropy for every parameter."""
    probs, t = cache["probs"], cache["t"]
    N = t.size
    dlogits = probs.copy()
    dlogits[np.arange(N), t] -= 1.0
    dlogits /= N
    grads = {"fc.W": cache["flat"].T @ dlogits, "fc.b": dlogits.sum(axis=0)}
    d = (dlogits @ net.params["fc.W"].T).reshape(cache["feat"].shape)
    for k in range(len(net.layers), 0, -1):
        spec, entry = net.layers[k - 1], cache["layers"][k - 1]
        if spec.use_norm:
            d = divnorm_backward(d, spec.norm_size, entry["norm"])
        d = pool_backward(d, spec.pool_size, spec.pool_stride, spec.pool_exponent, entry["pool"])
        d = d * (entry["z"] > 0)
        d, grads[f"conv{k}.W"], grads[f"conv{k}.b"] = conv_backward(
            d, entry["x_shape"], net.params[f"conv{k}.W"], entry["cols"])
    return {k: grads[k] for k in net.params}


# --------------------------------------------------------------------------
# data handling


def crop_offsets(input_size, crop_size):
    """(x, y) corners of the four corner crops followed by the centre crop."""
    d = input_size - crop_size
    return [(0, 0), (d, 0), (0, d), (d, d), (d // 2, d // 2)]


def augment(img, input_size=128, crop_size=112):
    """Five crops (corners, then centre) followed by their horizontal mirrors."""
    img = ic.as_image(img)
    if img.shape[:2] != (input_size, input_size):
        raise ShapeError(f"augment expects a {input_size}x{input_size} image, got "
                         f"{img.shape[1]}x{img.shape[0]}")
    crops = [img[y:y + crop_size, x:x + crop_size] for x, y in crop_offsets(input_size, crop_size)]
    crops += [c[:, ::-1] for c in crops[:5]]
    return np.stack(crops)


def center_crop(img, input_size, crop_size):
    x, y = crop_offsets(input_size, crop_size)[4]
    return ic.as_image(img)[y:y + crop_size, x:x + crop_size]


def prepare_images(images, net):
    """Resize to the net's square input and match its band count."""
    out = []
    for img in images:
        img = ic.as_image(img)
        if net.bands == 1 and img.shape[2] == 3:
            img = ic.to_grayscale(img)
        elif net.bands == 3 and img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        if img.shape[:2] != (net.input_size, net.input_size):
            img = ic.resize(img, net.input_size, net.input_size)
        out.append(img)
    return out


def fit_input_normalization(net, images):
    """Store the mean image and overall standard deviation of ``images``."""
    stack = np.stack([ic.as_image(img) for img in images])
    mean = stack.mean(axis=0)
    scale = float(np.std(stack - mean))
    net.input_mean = mean
    net.input_scale = scale if scale > 0 else 1.0
    return net


def predict_probs(net, images, chunk=64):
    """Fake-class probability of each ``input_size`` image from its centre crop."""
    if len(images) == 0:
        return np.zeros(0)
    if any(np.shape(img)[:2] != (net.input_size, net.input_size) for img in images):
        raise ShapeError(f"expected {net.input_size}x{net.input_size} images")
    x = np.stack([center_crop(net.normalize(img), net.input_size, net.crop_size) for img in images])
    return np.concatenate([forward(net, x[i:i + chunk])[0][:, 1] for i in range(0, len(x), chunk)])


def predict_prob(net, img):
    img = ic.as_image(img)
    if img.shape[:2] != (net.input_size, net.input_size):
        raise ShapeError(f"expected a {net.input_size}x{net.input_size} image, got {img.shape[1]}x{img.shape[0]}")
    return float(predict_probs(net, [img])[0])


# --------------------------------------------------------------------------
# schedule and batches


@dataclass(frozen=True)
class Phase:
    epochs: int
    lr: float
    batches: tuple


@dataclass(frozen=True)
class TrainingSchedule:
    name: str
    phases: tuple

    def __post_init__(self):
        rates = [p.lr for p in self.phases]
        if any(b > a for a, b in zip(rates, rates[1:])):
            raise InvalidArgument("learning rates must not increase across phases")

    @property
    def epochs(self):
        return tuple(p.epochs for p in self.phases)

    @property
    def rates(self):
        return tuple(p.lr for p in self.phases)

    def to_dict(self):
        return {"name": self.name, "phases": [{"epochs": p.epochs, "lr": p.lr, "batches": list(p.batches)}
                                              for p in self.phases]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(Phase(int(p["epochs"]), float(p["lr"]), tuple(p["batches"]))
                                    for p in d["phases"]))


def _four_phase(name, epochs, lr):
    subsets = ((0, 1, 2), (0, 1, 2, 3), (0, 1, 2, 3), (0, 1, 2, 3))
    rates = (lr, lr, lr / 10, lr / 100)
    return TrainingSchedule(name, tuple(Phase(e, r, s) for e, r, s in zip(epochs, rates, subsets)))


def spoofnet_schedule():
    return _four_phase("spoofnet", (200, 80, 20, 20), 1e-4)


def reference_schedule():
    return _four_phase("cf10-11", (100, 40, 10, 10), 1e-3)


def scaled_schedule(base=None, epoch_divisor=20, lr_factor=1000.0):
    """Shorter version of ``base``: epochs divided (at least one each), rates multiplied."""
    base = base or spoofnet_schedule()
    phases = tuple(Phase(max(1, -(-p.epochs // epoch_divisor)), p.lr * lr_factor, p.batches) for p in base.phases)
    return TrainingSchedule(f"{base.name}/scaled-{epoch_divisor}x{lr_factor:g}", phases)


SCHEDULES = {"spoofnet": spoofnet_schedule, "cf10-11": reference_schedule}


@dataclass
class BatchSplit:
    batches: list

    def indices(self, subset):
        return np.sort(np.concatenate([self.batches[i] for i in subset]))


def make_batch_split(labels, n_batches=4, rng_seed=0):
    """Deal each class, shuffled, round-robin into ``n_batches`` batches."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(rng_seed)
    batches = [[] for _ in range(n_batches)]
    offset = 0
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        for pos, i in enumerate(idx):
            batches[(offset + pos) % n_batches].append(int(i))
        offset += len(idx)
    if any(len(b) == 0 for b in batches):
        raise InvalidArgument(f"{len(labels)} samples cannot fill {n_batches} batches")
    return BatchSplit([np.array(sorted(b), dtype=np.int64) for b in batches])


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    net: TrainableNet
    log: list


def train(net, images, labels, split, schedule, rng_seed=0, batch_size=BATCH_SIZE, log_path=None,
          on_epoch=None, fit_normalization=True):
    """Run every phase of ``schedule`` with mini-batch SGD; returns a new net.

    ``images`` are at the net's input size; each contributes its ten
    augmented samples to every epoch in which its batch is active. Input
    normalization statistics are fitted on ``images`` first unless
    ``fit_normalization`` is off.
    """
    t = _targets(labels)
    if len(images) != t.size:
        raise ShapeError("one label per image is required")
    for i, b in enumerate(split.batches):
        if len(b) == 0:
            raise InvalidArgument(f"batch {i + 1} is empty")
        if len(set(t[b])) < 2:
            raise InvalidArgument(f"batch {i + 1} holds a single class")
    net = net.copy()
    if fit_normalization:
        fit_input_normalization(net, images)
    samples = np.stack([augment(net.normalize(img), net.input_size, net.crop_size) for img in images])
    centers = samples[:, 4]
    rng = np.random.default_rng(rng_seed)
    records = []
    fh = open(log_path, "w") if log_path else None
    epoch = 0
    try:
        for ph, phase in enumerate(schedule.phases, start=1):
            pool_idx = split.indices(phase.batches)
            flat = np.array([(i, a) for i in pool_idx for a in range(N_AUGMENT)], dtype=np.int64)
            held = [b for b in range(len(split.batches)) if b not in phase.batches]
            val_idx = split.indices(held) if held else None
            for _ in range(phase.epochs):
                epoch += 1
                order = flat[rng.permutation(len(flat))]
                total = 0.0
                for s in range(0, len(order), batch_size):
                    mb = order[s:s + batch_size]
                    loss, _, cache = forward_loss(net, samples[mb[:, 0], mb[:, 1]], t[mb[:, 0]], keep=True)
                    grads = backward(net, cache)
                    for k, g in grads.items():
                        net.params[k] -= phase.lr * g
                    total += loss * len(mb)
                rec = {"epoch": epoch, "phase": ph, "lr": phase.lr, "train_loss": total / len(order),
                       "val_acc": None}
                if val_idx is not None:
                    p = np.concatenate([forward(net, centers[val_idx[i:i + 64]])[0][:, 1]
                                        for i in range(0, len(val_idx), 64)])
                    rec["val_acc"] = float(np.mean((p > 0.5) == (t[val_idx] == 1)))
                records.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
                if on_epoch:
                    on_epoch(rec)
                log.debug("epoch %d phase %d loss %.5f val %s", epoch, ph, rec["train_loss"], rec["val_acc"])
    finally:
        if fh:
            fh.close()
    net.meta.update({"schedule": schedule.to_dict(), "train_seed": rng_seed, "batch_size": batch_size})
    return TrainResult(net, records)
