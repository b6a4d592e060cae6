"""Model container: one JSON document holding a complete detector.

Two kinds exist. ``ao-random-filter`` stores the architecture, its
random filter banks and the linear classifier; ``fo-trained`` stores a
trained network. Both carry the threshold rule and the frozen ``tau``
when one was fixed at training time. Floats are written with Python's
shortest round-trip repr, so loading reproduces every tensor exactly.
"""
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archsearch, backprop, maxmargin
from .archsearch import ArchitectureSpec
from .errors import ConfigError, UnsupportedFormat

FORMAT_VERSION = 1
KINDS = ("ao-random-filter", "fo-trained")


@dataclass
class Detector:
    kind: str
    spec: ArchitectureSpec = None
    filters: list = None
    in_bands: int = 1
    model: maxmargin.LinearModel = None
    net: backprop.TrainableNet = None
    threshold: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedFormat(f"unknown model kind {self.kind!r}")

    @property
    def tau(self):
        return self.threshold.get("tau")

    @property
    def rule(self):
        return self.threshold.get("rule")

    def prepare(self, images):
        if self.kind == "fo-trained":
            return backprop.prepare_images(images, self.net)
        out = [archsearch.prepare_input(img, self.spec) for img in images]
        for img in out:
            if img.shape[2] != self.in_bands:
                raise ConfigError(f"model expects {self.in_bands}-band input, got {img.shape[2]} bands")
        return out

    def features(self, images):
        """Representation the classifier sees, one row per image."""
        prepared = self.prepare(images)
        if self.kind == "ao-random-filter":
            return archsearch.extract_features(self.spec, self.filters, prepared)
        net = self.net
        x = np.stack([backprop.center_crop(net.normalize(img), net.input_size, net.crop_size) for img in prepared])
        rows = []
        for i in range(0, len(x), 64):
            _, cache = backprop.forward(net, x[i:i + 64], keep=True)
            rows.append(cache["flat"])
        return np.concatenate(rows)

    def scores(self, images):
        """Higher means more likely fake: SVM margin (AO) or p(fake) (FO)."""
        if len(images) == 0:
            return np.zeros(0)
        if self.kind == "ao-random-filter":
            return maxmargin.score(self.model, self.features(images))
        return backprop.predict_probs(self.net, self.prepare(images))

    def to_dict(self):
        doc = {"format_version": FORMAT_VERSION, "kind": self.kind}
        if self.kind == "ao-random-filter":
            doc["architecture"] = self.spec.to_dict()
            doc["in_bands"] = self.in_bands
            doc["filters"] = [bank.tolist() for bank in self.filters]
            doc["classifier"] = self.model.to_dict()
        else:
            doc["network"] = self.net.to_dict()
        doc["threshold"] = dict(self.threshold)
        doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc):
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise UnsupportedFormat(f"model format_version {version!r} is not supported (expected {FORMAT_VERSION})")
        kind = doc.get("kind")
        try:
            if kind == "ao-random-filter":
                return cls(kind, spec=ArchitectureSpec.from_dict(doc["architecture"]),
                           filters=[np.asarray(b, dtype=np.float64) for b in doc["filters"]],
                           in_bands=int(doc["in_bands"]), model=maxmargin.LinearModel.from_dict(doc["classifier"]),
                           threshold=dict(doc.get("threshold", {})), meta=dict(doc.get("meta", {})))
            if kind == "fo-trained":
                return cls(kind, net=backprop.TrainableNet.from_dict(doc["network"]),
                           threshold=dict(doc.get("threshold", {})), meta=dict(doc.get("meta", {})))
        except KeyError as exc:
            raise ConfigError(f"model document lacks {exc}") from None
        raise UnsupportedFormat(f"unknown model kind {kind!r}")


def save(path, detector):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(detector.to_dict(), fh)
        fh.write("\n")
    os.replace(tmp, path)


def load(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UnsupportedFormat(f"{path} is not a JSON model document ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise UnsupportedFormat(f"{path} is not a JSON model document")
    return Detector.from_dict(doc)
