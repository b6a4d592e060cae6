"""End-to-end flows shared by the command line and the acceptance suite."""
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import archsearch, backprop, convops, maxmargin
from . import imagecore as ic
from . import protocol
from .container import Detector
from .errors import ConfigError, InvalidArgument

log = logging.getLogger(__name__)

COLOR_MODES = ("search", "gray", "color")


def _labels(records):
    return np.array([r.y for r in records], dtype=np.int64)


def search_space(color="search", base=None):
    base = base or archsearch.SearchSpace()
    if color == "search":
        return base
    if color not in COLOR_MODES:
        raise InvalidArgument(f"color mode must be one of {COLOR_MODES}")
    return replace(base, color=(color == "color",))


def fit_ao(manifest, budget=archsearch.DEFAULT_BUDGET, seed=0, workers=1, space=None, trace_path=None,
           folds=10, on_result=None):
    """Random search on the training split, then the final classifier on all of it.

    The detector's threshold is the equal-error cut of the pooled
    validation scores of the winning candidate.
    """
    data = archsearch.search_data_from_manifest(manifest, "train", folds, seed)
    result = archsearch.random_search(space or archsearch.SearchSpace(), data, budget, seed, workers,
                                      trace_path, on_result=on_result)
    best = result.best
    prepared = data.prepared(best.spec)
    in_bands = prepared[0].shape[2]
    filters = archsearch.generate_random_filters(best.spec, in_bands)
    X = archsearch.extract_features(best.spec, filters, prepared)
    model = maxmargin.train(X, data.labels.astype(np.float64))
    tau = protocol.select_threshold("cv-eer", cv_scores=best.cv_scores)
    meta = {"seed": seed, "budget": budget, "best_index": best.index, "objective": best.objective,
            "fold_accuracies": best.fold_accuracies, "feature_dims": best.feature_dims,
            "attempts": result.attempts, "rejected": dict(result.rejected)}
    det = Detector("ao-random-filter", spec=best.spec, filters=filters, in_bands=in_bands, model=model,
                   threshold={"rule": "cv-eer", "tau": tau}, meta=meta)
    return det, result


def fit_fo(manifest, seed=0, schedule=None, input_size=128, crop_size=112, color=None, log_path=None,
           on_epoch=None, **layer_args):
    """Train the fixed network on the training split; threshold fixed at 0.5."""
    records = manifest.split("train")
    if not records:
        raise InvalidArgument("manifest has no training samples")
    images = [manifest.load_image(r) for r in records]
    if color is None:
        color = images[0].shape[2] == 3
    net = backprop.build_spoofnet(input_size, crop_size, 3 if color else 1, rng_seed=seed, **layer_args)
    labels = _labels(records)
    split = backprop.make_batch_split(labels, 4, seed)
    schedule = schedule or backprop.spoofnet_schedule()
    res = backprop.train(net, backprop.prepare_images(images, net), labels, split, schedule, seed,
                         log_path=log_path, on_epoch=on_epoch)
    last = res.log[-1] if res.log else {}
    meta = {"seed": seed, "schedule": schedule.to_dict(), "final_train_loss": last.get("train_loss")}
    return Detector("fo-trained", net=res.net, threshold={"rule": "fixed-0.5", "tau": 0.5}, meta=meta), res


def score_split(detector, manifest, split):
    records = manifest.split(split)
    if not records:
        raise InvalidArgument(f"manifest has no {split!r} samples")
    scores = detector.scores([manifest.load_image(r) for r in records])
    return protocol.ScoreSet([r.path for r in records], [r.group_id for r in records], _labels(records), scores)


def evaluate(detector, manifest, split="test", rule=None, fuse=None):
    """Apply the threshold rule and compute error rates on ``split``.

    ``rule`` defaults to the one frozen in the detector. ``dev-eer``
    scores the manifest's dev split; ``cv-eer`` uses the stored cut.
    """
    rule = rule or detector.rule or "fixed-0.5"
    if rule == "cv-eer":
        if detector.rule != "cv-eer" or detector.tau is None:
            raise ConfigError("this model carries no cross-validation threshold; use dev-eer or fixed-0.5")
        tau = detector.tau
    elif rule == "dev-eer":
        dev = score_split(detector, manifest, "dev")
        if fuse == "max":
            dev = protocol.fuse_max(dev)
        tau = protocol.select_threshold("dev-eer", dev_scores=dev)
    else:
        tau = protocol.select_threshold(rule)
    scores = score_split(detector, manifest, split)
    scores.rule = rule
    if fuse == "max":
        scores = protocol.fuse_max(scores)
    elif fuse is not None:
        raise InvalidArgument(f"unknown fusion {fuse!r}")
    return protocol.compute_metrics(scores, tau, rule), scores


def _upscale(img, factor):
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def first_layer_maps(detector, images):
    """Layer-1 outputs (after pooling and normalization) for each image."""
    prepared = detector.prepare(images)
    if detector.kind == "ao-random-filter":
        spec, bank = detector.spec.layers[0], detector.filters[0]
        return [convops.apply_layer(img, spec, bank) for img in prepared]
    net = detector.net
    spec = net.layers[0]
    x = np.stack([backprop.center_crop(net.normalize(img), net.input_size, net.crop_size) for img in prepared])
    z, _ = backprop.conv_forward(x, net.params["conv1.W"], net.params["conv1.b"])
    out, _ = backprop.pool_forward(np.maximum(z, 0.0), spec.pool_size, spec.pool_stride, spec.pool_exponent)
    if spec.use_norm:
        out, _ = backprop.divnorm_forward(out, spec.norm_size)
    return list(out)


def inspect(detector, manifest, out_dir, split="train", zoom=8):
    """Write layer-1 filters, per-class mean images and mean activation maps.

    Every image is stretched to [0, 255] on its own. Returns the paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank = detector.filters[0] if detector.kind == "ao-random-filter" else detector.net.params["conv1.W"]
    written = []

    def put(name, img):
        img = ic.as_image(img)
        ext = "pgm" if img.shape[2] == 1 else "ppm"
        path = out / f"{name}.{ext}"
        ic.write_pnm(path, ic.rescale_for_display(img))
        written.append(path)

    for i, f in enumerate(bank):
        if f.shape[2] not in (1, 3):
            f = f.mean(axis=2, keepdims=True)
        put(f"filter_{i:03d}", _upscale(f, zoom))
    records = manifest.split(split)
    for label in ("real", "fake"):
        chosen = [r for r in records if r.label == label]
        if not chosen:
            raise InvalidArgument(f"no {label} samples in the {split!r} split")
        images = [manifest.load_image(r) for r in chosen]
        prepared = detector.prepare(images)
        put(f"mean_{label}", np.mean(prepared, axis=0))
        maps = np.mean(first_layer_maps(detector, images), axis=0)
        for i in range(maps.shape[2]):
            put(f"activation_{label}_{i:03d}", maps[:, :, i:i + 1])
    return written
