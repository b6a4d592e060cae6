"""Random search over convolutional architectures with random filters.

Each candidate stacks 1-3 layers (convolution, ReLU, L-alpha pooling,
optional divisive normalization) whose filters are drawn from U(0, 1)
and normalised to zero mean and unit norm. A candidate is scored by the
mean accuracy of linear max-margin classifiers trained on one fold and
tested on the other nine, over all ten folds. The search stops after a
fixed number of *valid* candidates.
"""
import itertools
import json
import logging
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import convops, maxmargin
from . import imagecore as ic
from .convops import LayerSpec
from .errors import DegenerateLabels, InvalidArgument, ShapeError
from .protocol import FAKE, ScoreSet, make_folds

log = logging.getLogger(__name__)

MAX_INTERMEDIATE = 600_000
MAX_OUTPUT = 30_000
DEFAULT_BUDGET = 2000
PRENORM_CHOICES = ("none", "standardize")


@dataclass(frozen=True)
class SearchSpace:
    n_filters: tuple = (32, 64, 128, 256)
    filter_size: tuple = (3, 5, 7, 9)
    pool_size: tuple = (3, 5, 7, 9)
    pool_stride: tuple = (1, 2, 4, 8)
    pool_exponent: tuple = (1, 2, 10)
    norm_size: tuple = (None, 3, 5, 7, 9)  # None = no normalization
    num_layers: tuple = (1, 2, 3)
    input_max_axis: tuple = (64, 128, 256, "original")
    color: tuple = (False, True)
    input_prenorm: tuple = PRENORM_CHOICES

    def layer_configurations(self):
        for n, fs, ps, st, a, ns in itertools.product(self.n_filters, self.filter_size, self.pool_size,
                                                      self.pool_stride, self.pool_exponent, self.norm_size):
            yield LayerSpec(n, fs, ps, st, float(a), ns is not None, ns or 0)

    def n_layer_configurations(self):
        return (len(self.n_filters) * len(self.filter_size) * len(self.pool_size)
                * len(self.pool_stride) * len(self.pool_exponent) * len(self.norm_size))


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple
    input_max_axis: object
    color: bool
    input_prenorm: str
    seed: int

    def to_dict(self):
        return {
            "layers": [l.to_dict() for l in self.layers],
            "input_max_axis": self.input_max_axis,
            "color": self.color,
            "input_prenorm": self.input_prenorm,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(LayerSpec.from_dict(l) for l in d["layers"]), d["input_max_axis"],
                   bool(d["color"]), d["input_prenorm"], int(d["seed"]))

    def in_space(self, space):
        if len(self.layers) not in space.num_layers:
            return False
        for l in self.layers:
            norm = l.norm_size if l.use_norm else None
            if (l.n_filters not in space.n_filters or l.filter_size not in space.filter_size
                    or l.pool_size not in space.pool_size or l.pool_stride not in space.pool_stride
                    or l.pool_exponent not in space.pool_exponent or norm not in space.norm_size):
                return False
        return (self.input_max_axis in space.input_max_axis and self.color in space.color
                and self.input_prenorm in space.input_prenorm)


def candidate_seed(master_seed, index):
    """Seed of candidate ``index`` in the stream rooted at ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def sample_architecture(space, rng_seed):
    """Draw every hyperparameter independently and uniformly from its grid.

    All three layers are always drawn, so the generator consumes the
    same amount of randomness whatever the sampled depth.
    """
    rng = np.random.default_rng(rng_seed)

    def pick(grid):
        return grid[int(rng.integers(len(grid)))]

    depth = pick(space.num_layers)
    layers = []
    for _ in range(max(space.num_layers)):
        n, fs, ps, st, a, ns = (pick(space.n_filters), pick(space.filter_size), pick(space.pool_size),
                                pick(space.pool_stride), pick(space.pool_exponent), pick(space.norm_size))
        layers.append(LayerSpec(n, fs, ps, st, float(a), ns is not None, ns or 0))
    size = pick(space.input_max_axis)
    color = pick(space.color)
    prenorm = pick(space.input_prenorm)
    seed = int(rng.integers(0, 2**62))
    return ArchitectureSpec(tuple(layers[:depth]), size, bool(color), prenorm, seed)


@dataclass
class Validity:
    valid: bool
    reason: str = None
    input_shape: tuple = None
    shapes: list = None

    def __bool__(self):
        return self.valid


def input_shape(spec, height, width, bands):
    """Shape of the network input after colour selection and resizing.

    Targets larger than the image's greatest axis leave it unchanged:
    inputs are only ever reduced.
    """
    m = bands if (spec.color or bands == 1) else 1
    target = spec.input_max_axis
    major = max(height, width)
    if target == "original" or int(target) >= major:
        return height, width, m
    target = int(target)
    if width >= height:
        return max(1, (2 * height * target + width) // (2 * width)), target, m
    return target, max(1, (2 * width * target + height) // (2 * height)), m


def validate_architecture(spec, input_dims):
    """Check shape feasibility and representation size limits.

    ``input_dims`` is ``(height, width, bands)`` of the raw images. Every
    layer output must stay within 600,000 elements and the final one
    within 30,000. Never raises.
    """
    h, w, m = input_shape(spec, *input_dims)
    try:
        shapes = convops.layer_shapes(h, w, m, spec.layers)
    except ShapeError:
        return Validity(False, "shape-collapse", (h, w, m))
    for entry in shapes:
        if int(np.prod(entry["out"])) > MAX_INTERMEDIATE:
            return Validity(False, "intermediate-too-large", (h, w, m), shapes)
    if int(np.prod(shapes[-1]["out"])) > MAX_OUTPUT:
        return Validity(False, "output-too-large", (h, w, m), shapes)
    return Validity(True, None, (h, w, m), shapes)


def random_filter_bank(rng, n, size, bands):
    """``n`` filters from U(0, 1), each shifted to zero mean and scaled to unit norm."""
    bank = np.empty((n, size, size, bands))
    for i in range(n):
        while True:
            f = rng.uniform(0.0, 1.0, (size, size, bands))
            f -= f.mean()
            norm = np.sqrt(np.sum(f * f))
            if norm > 1e-12:
                break
        bank[i] = f / norm
    return bank


def generate_random_filters(spec, in_bands, rng_seed=None):
    rng = np.random.default_rng(spec.seed if rng_seed is None else rng_seed)
    banks = []
    m = in_bands
    for layer in spec.layers:
        banks.append(random_filter_bank(rng, layer.n_filters, layer.filter_size, m))
        m = layer.n_filters
    return banks


def prepare_input(img, spec):
    img = ic.as_image(img)
    if not spec.color and img.shape[2] == 3:
        img = ic.to_grayscale(img)
    target = spec.input_max_axis
    if target != "original" and int(target) < max(img.shape[:2]):
        img = ic.resize_keep_aspect(img, int(target))
    if spec.input_prenorm == "standardize":
        img = (img - img.mean()) / (img.std() + 1e-8)
    return img


def extract_features(spec, filters, images):
    return np.stack([convops.forward(img, spec.layers, filters) for img in images])


# --------------------------------------------------------------------------
# evaluation


@dataclass
class SearchData:
    """Training images, labels (+1 fake / -1 real) and their folds."""
    images: list
    labels: np.ndarray
    sample_ids: list
    folds: object
    group_ids: list = None
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.group_ids is None:
            self.group_ids = list(self.sample_ids)

    @property
    def input_dims(self):
        return self.images[0].shape

    def prepared(self, spec):
        key = (spec.input_max_axis, spec.color, spec.input_prenorm)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            hit = [prepare_input(img, spec) for img in self.images]
            with self._lock:
                hit = self._cache.setdefault(key, hit)
        return hit


def search_data_from_manifest(manifest, split="train", k=10, fold_seed=0):
    records = manifest.split(split)
    if not records:
        raise InvalidArgument(f"manifest has no {split!r} samples")
    images = [manifest.load_image(r) for r in records]
    folds = make_folds(records, k, fold_seed)
    return SearchData(images, [r.y for r in records], [r.path for r in records], folds,
                      [r.group_id for r in records])


@dataclass
class CandidateResult:
    index: int
    spec: ArchitectureSpec
    objective: float
    fold_accuracies: list
    feature_dims: list
    wall_time: float
    degenerate_folds: list = field(default_factory=list)
    cv_scores: ScoreSet = field(default=None, repr=False)

    def to_dict(self):
        return {
            "index": self.index,
            "spec": self.spec.to_dict(),
            "objective": self.objective,
            "fold_accuracies": self.fold_accuracies,
            "feature_dims": list(self.feature_dims),
            "degenerate_folds": self.degenerate_folds,
            "wall_time": self.wall_time,
        }


def cross_validate(X, labels, folds):
    """Train on each fold, test on the rest.

    Returns (per-fold accuracies, pooled validation scores, degenerate
    folds). A training fold with a single class yields a constant
    prediction of that class, scored +-1.
    """
    accs, scores, pooled_labels, ids, degenerate = [], [], [], [], []
    for f in range(folds.k):
        train = folds.members(f)
        test = np.setdiff1d(np.arange(len(labels)), train)
        y_train = labels[train].astype(np.float64)
        try:
            model = maxmargin.train(X[train], y_train)
            s = maxmargin.score(model, X[test])
        except DegenerateLabels:
            degenerate.append(f)
            s = np.full(test.size, float(y_train[0]))
        pred_fake = s > 0
        accs.append(float(np.mean(pred_fake == (labels[test] == FAKE))))
        scores.append(s)
        pooled_labels.append(labels[test])
        ids.extend(int(i) for i in test)
    return accs, np.concatenate(scores), np.concatenate(pooled_labels), ids, degenerate


def evaluate_candidate(spec, data, folds=None, index=0, filters=None):
    folds = data.folds if folds is None else folds
    t0 = time.perf_counter()
    images = data.prepared(spec)
    if filters is None:
        filters = generate_random_filters(spec, images[0].shape[2])
    X = extract_features(spec, filters, images)
    accs, s, lab, ids, degenerate = cross_validate(X, data.labels, folds)
    h, w, m = images[0].shape
    dims = [int(np.prod(e["out"])) for e in convops.layer_shapes(h, w, m, spec.layers)]
    cv = ScoreSet([data.sample_ids[i] for i in ids], [data.group_ids[i] for i in ids], lab, s, "cv-eer")
    return CandidateResult(index, spec, float(np.mean(accs)), accs, dims,
                           time.perf_counter() - t0, degenerate, cv)


@dataclass
class SearchResult:
    best: CandidateResult
    trace: list
    rejected: Counter
    attempts: int


def _valid_candidates(space, input_dims, master_seed, budget, max_attempts):
    rejected = Counter()
    out = []
    j = 0
    while len(out) < budget:
        if j >= max_attempts:
            raise InvalidArgument(f"only {len(out)} valid candidates in {max_attempts} draws")
        spec = sample_architecture(space, candidate_seed(master_seed, j))
        v = validate_architecture(spec, input_dims)
        if v:
            out.append((j, spec))
        else:
            rejected[v.reason] += 1
        j += 1
    return out, rejected, j


def random_search(space, data, budget=DEFAULT_BUDGET, rng_seed=0, workers=1, trace_path=None,
                  max_attempts=None, on_result=None):
    """Evaluate ``budget`` valid candidates and return the best one.

    Candidate ``j`` of the stream always gets the same seed, so results do
    not depend on ``workers`` and a larger budget extends a smaller run.
    Ties keep the earlier candidate.
    """
    if budget < 1:
        raise InvalidArgument("budget must be >= 1")
    if data is None or not data.images:
        raise InvalidArgument("search dataset is empty")
    max_attempts = max_attempts or 1000 * budget
    candidates, rejected, attempts = _valid_candidates(space, data.input_dims, rng_seed, budget, max_attempts)
    log.info("%d valid candidates from %d draws (rejected: %s)", budget, attempts, dict(rejected))

    def run(item):
        j, spec = item
        return evaluate_candidate(spec, data, index=j)

    trace = []
    best = None
    fh = open(trace_path, "w") if trace_path else None
    try:
        with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
            for res in pool.map(run, candidates):
                trace.append(res)
                if best is None or res.objective > best.objective:
                    best = res
                if fh:
                    fh.write(json.dumps(res.to_dict()) + "\n")
                    fh.flush()
                if on_result:
                    on_result(res, best)
    finally:
        if fh:
            fh.close()
    return SearchResult(best, trace, rejected, attempts)
