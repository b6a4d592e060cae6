"""Benchmark manifests, sensor preprocessing and the synthetic benchmark.

Manifest files are JSON Lines, one sample per line with the keys
``path, label, individual_id, attack_type, split, group_id``. ``path`` is
relative to the manifest's directory. An optional first line of the form
``{"manifest": {"modality": ..., "sensor": ...}}`` carries dataset tags.
"""
import json
import logging
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imagecore as ic
from .errors import ConfigError, InvalidArgument, ManifestIntegrityError, ManifestParseError, ShapeError

log = logging.getLogger(__name__)

LABELS = ("real", "fake")
SPLITS = ("train", "test", "dev")
RECORD_KEYS = ("path", "label", "individual_id", "attack_type", "split", "group_id")
BLANK_LEVEL = 1.0 / 255.0
FACE_FRAMES = 10
FACE_CROP = 200


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    individual_id: str
    attack_type: str
    split: str
    group_id: str

    @property
    def y(self):
        """+1 for fake, -1 for real."""
        return 1 if self.label == "fake" else -1


@dataclass
class BenchmarkManifest:
    records: list
    root: Path = Path(".")
    modality: str = None
    sensor: str = None

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def tally(self):
        return Counter(r.split for r in self.records)

    def resolve(self, record):
        return self.root / record.path

    def load_image(self, record):
        return ic.read_pnm(self.resolve(record))


def _check_integrity(records):
    if not records:
        raise ManifestIntegrityError("manifest holds no samples")
    seen = set()
    groups = {}
    for r in records:
        if r.path in seen:
            raise ManifestIntegrityError(f"duplicate path {r.path}")
        seen.add(r.path)
        key = groups.setdefault(r.group_id, (r.label, r.individual_id))
        if key != (r.label, r.individual_id):
            raise ManifestIntegrityError(f"group {r.group_id} mixes labels or individuals")


def load_manifest(path):
    path = Path(path)
    records = []
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestParseError(lineno, "expected a JSON object")
            if "manifest" in obj and not records:
                meta = obj["manifest"] or {}
                continue
            missing = [k for k in RECORD_KEYS if k not in obj and k != "group_id"]
            if missing:
                raise ManifestParseError(lineno, f"missing keys {missing}")
            if obj["label"] not in LABELS:
                raise ManifestParseError(lineno, f"label must be one of {LABELS}")
            if obj["split"] not in SPLITS:
                raise ManifestParseError(lineno, f"split must be one of {SPLITS}")
            gid = obj.get("group_id")
            records.append(Record(
                path=str(obj["path"]), label=obj["label"], individual_id=str(obj["individual_id"]),
                attack_type=str(obj["attack_type"]), split=obj["split"],
                group_id=str(obj["path"]) if gid is None else str(gid),
            ))
    _check_integrity(records)
    return BenchmarkManifest(records, path.parent, meta.get("modality"), meta.get("sensor"))


def write_manifest(path, manifest):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        if manifest.modality or manifest.sensor:
            fh.write(json.dumps({"manifest": {"modality": manifest.modality, "sensor": manifest.sensor}}) + "\n")
        for r in manifest.records:
            fh.write(json.dumps({k: getattr(r, k) for k in RECORD_KEYS}) + "\n")


# --------------------------------------------------------------------------
# sensor preprocessing


@dataclass(frozen=True)
class SensorRule:
    sensor: str
    frac_cols: float
    frac_rows: float
    swipe_rows: bool = False

    def __post_init__(self):
        for f in (self.frac_cols, self.frac_rows):
            if not 0 < f <= 1:
                raise ConfigError(f"crop fractions must lie in (0, 1], got {f}")


SENSOR_RULES = {
    "biometrika": SensorRule("biometrika", 0.70, 0.70),
    "italdata": SensorRule("italdata", 0.60, 0.90),
    "crossmatch": SensorRule("crossmatch", 0.60, 0.90),
    "swipe": SensorRule("swipe", 0.90, 1.00, swipe_rows=True),
}


def sensor_rule(name):
    try:
        return SENSOR_RULES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown fingerprint sensor {name!r}; known: {sorted(SENSOR_RULES)}") from None


def _blank_rows(img, invert=True):
    """Boolean per row: True when every value is background.

    Fingerprint scans are dark ridges on a light field, so values are
    inverted first and background becomes 0.
    """
    v = 1.0 - img if invert else img
    return np.all(v < BLANK_LEVEL, axis=(1, 2))


def nonblank_row_count(img, invert=True):
    return int(np.count_nonzero(~_blank_rows(img, invert)))


def trim_blank_bottom(img, invert=True):
    blank = _blank_rows(img, invert)
    keep = np.flatnonzero(~blank)
    if keep.size == 0:
        raise InvalidArgument("image has no non-blank rows")
    return img[:keep[-1] + 1].copy()


def compute_swipe_rows(images, invert=True):
    """Rounded mean count of non-blank rows over the training images."""
    counts = []
    for idx, img in enumerate(images):
        c = nonblank_row_count(ic.as_image(img), invert)
        if c == 0:
            warnings.warn(f"image {idx} is entirely blank; excluded from the row average", stacklevel=2)
            continue
        counts.append(c)
    if not counts:
        raise InvalidArgument("no non-blank training images to average")
    total, n = sum(counts), len(counts)
    return (2 * total + n) // (2 * n)


def preprocess_fingerprint(img, rule, swipe_rows=None, invert=True):
    if isinstance(rule, str):
        rule = sensor_rule(rule)
    img = ic.as_image(img)
    if rule.swipe_rows:
        if swipe_rows is None:
            raise ConfigError("the swipe rule needs the training-set row count (compute_swipe_rows)")
        img = trim_blank_bottom(img, invert)
        img = ic.resize(img, img.shape[1], int(swipe_rows))
    return ic.crop_center_fraction(img, rule.frac_cols, rule.frac_rows)


def face_frame_indices(n_frames, count=FACE_FRAMES):
    if n_frames < count:
        raise InvalidArgument(f"need at least {count} frames, got {n_frames}")
    # round(i * (N - 1) / (count - 1)) with halves rounded up
    d = count - 1
    return [(2 * i * (n_frames - 1) + d) // (2 * d) for i in range(count)]


def preprocess_face_video(frames, boxes=None, crop_size=FACE_CROP):
    """Evenly sample 10 frames and crop ``crop_size`` squares around the face.

    ``boxes`` holds one ``(x, y, width, height)`` region per input frame
    (or None); without a box the crop is centred on the frame.
    """
    frames = list(frames)
    idx = face_frame_indices(len(frames))
    out = []
    for i in idx:
        img = ic.as_image(frames[i])
        h, w, _ = img.shape
        if h < crop_size or w < crop_size:
            raise ShapeError(f"frame {i} ({w}x{h}) is smaller than the {crop_size}x{crop_size} crop")
        box = None if boxes is None else boxes[i]
        if box is None:
            cx, cy = w / 2.0, h / 2.0
        else:
            bx, by, bw, bh = box
            cx, cy = bx + bw / 2.0, by + bh / 2.0
        x0 = int(np.floor(cx - crop_size / 2.0 + 0.5))
        y0 = int(np.floor(cy - crop_size / 2.0 + 0.5))
        cx0 = min(max(x0, 0), w - crop_size)
        cy0 = min(max(y0, 0), h - crop_size)
        if (cx0, cy0) != (x0, y0):
            warnings.warn(f"face box of frame {i} reaches outside the frame; crop clamped", stacklevel=2)
        out.append(ic.crop(img, cx0, cy0, crop_size, crop_size))
    return out


# --------------------------------------------------------------------------
# synthetic benchmark


@dataclass
class SynthParams:
    individuals: int = 20
    per_individual: int = 10
    size: int = 128
    blur_sigma: float = 1.5
    noise: float = 0.02
    contrast_jitter: float = 0.1
    seed: int = 0
    test_fraction: float = 0.5
    dev_individuals: int = 0
    base_sigma: float = 4.0
    base_amplitude: float = 0.02
    micro_sigma: float = 0.7
    micro_amplitude: float = 0.08
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.individuals < 2 or self.per_individual < 1 or self.size < 8:
            raise InvalidArgument("need >= 2 individuals, >= 1 sample each and images of at least 8 pixels")
        if self.blur_sigma < 0 or self.noise < 0 or not 0 <= self.contrast_jitter < 1:
            raise InvalidArgument("blur sigma and noise must be >= 0, contrast jitter in [0, 1)")
        if not 0 < self.test_fraction < 1:
            raise InvalidArgument("test_fraction must lie in (0, 1)")
        n_test = int(round(self.individuals * self.test_fraction))
        if self.individuals - n_test - self.dev_individuals < 1 or n_test < 1:
            raise InvalidArgument("split leaves no training or test individuals")


def _unit_field(rng, size, sigma):
    f = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="reflect")
    return (f - f.mean()) / (f.std() + 1e-12)


def _sample(rng, p, base, fake):
    img = base + p.micro_amplitude * _unit_field(rng, p.size, p.micro_sigma)
    if fake:
        if p.blur_sigma > 0:
            img = gaussian_filter(img, p.blur_sigma, mode="reflect")
        if p.noise > 0:
            img = img + rng.normal(0.0, p.noise, img.shape)
    elif p.noise > 0:
        img = img + rng.normal(0.0, 0.5 * p.noise, img.shape)
    if p.contrast_jitter > 0:
        c = rng.uniform(1 - p.contrast_jitter, 1 + p.contrast_jitter)
        img = 0.5 + (img - 0.5) * c
    return np.clip(img, 0.0, 1.0)[:, :, None]


def generate_synthetic_benchmark(params, out_dir):
    """Write PGM images and ``manifest.jsonl`` under ``out_dir``.

    Each individual gets a smooth base texture. Real samples add fresh
    fine-grained texture and mild sensor noise; fake samples blur a fresh
    real-like sample and add recapture noise. Contrast jitter hits both
    classes alike. Splits are individual-disjoint.
    """
    params.validate()
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    n = params.individuals
    ids = [f"id{i:03d}" for i in range(n)]
    order = np.random.default_rng(params.seed).permutation(n)
    n_test = int(round(n * params.test_fraction))
    split_of = {}
    for pos, i in enumerate(order):
        if pos < n_test:
            split_of[ids[i]] = "test"
        elif pos < n_test + params.dev_individuals:
            split_of[ids[i]] = "dev"
        else:
            split_of[ids[i]] = "train"

    records = []
    for i, ind in enumerate(ids):
        rng = np.random.default_rng(np.random.SeedSequence(params.seed, spawn_key=(i,)))
        base = 0.5 + params.base_amplitude * _unit_field(rng, params.size, params.base_sigma)
        for label in ("real", "fake"):
            for j in range(params.per_individual):
                img = _sample(rng, params, base, label == "fake")
                rel = f"images/{ind}_{label}_{j:02d}.pgm"
                ic.write_pnm(out / rel, img)
                records.append(Record(rel, label, ind, "none" if label == "real" else "blur-recapture",
                                      split_of[ind], f"{ind}_{label}_{j:02d}"))
    manifest = BenchmarkManifest(records, out, modality="synthetic", sensor="synthetic")
    write_manifest(out / "manifest.jsonl", manifest)
    with open(out / "synth_params.json", "w") as fh:
        json.dump(asdict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
