"""Command-line front end.

Subcommands: synth, search, train-net, eval, inspect, extract. Exit codes
are 0 on success, 1 on a runtime failure and 2 for invalid arguments or
configuration. Diagnostics go to stderr.
"""
import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, archsearch, backprop, container, datapipe, pipeline, protocol
from .errors import ConfigError, InvalidArgument, ShapeError, SpoofbenchError

log = logging.getLogger("spoofbench")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _config(args):
    return {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}


def _write_json(path, doc):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _report_header(args):
    return {"format_version": container.FORMAT_VERSION, "tool_version": __version__,
            "command": args.command, "seed": getattr(args, "seed", None), "config": _config(args)}


def resolve_workers(value):
    if value is None:
        env = os.environ.get("SPOOFBENCH_WORKERS")
        if env is None:
            return os.cpu_count() or 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"SPOOFBENCH_WORKERS must be an integer, got {env!r}") from None
    if value < 1:
        raise InvalidArgument("workers must be >= 1")
    return value


def cmd_synth(args):
    params = datapipe.SynthParams(
        individuals=args.individuals, per_individual=args.per_individual, size=args.size,
        blur_sigma=args.blur_sigma, noise=args.noise, contrast_jitter=args.contrast_jitter, seed=args.seed,
        test_fraction=args.test_fraction, dev_individuals=args.dev_individuals,
        base_amplitude=args.base_amplitude)
    man = datapipe.generate_synthetic_benchmark(params, args.out)
    tally = man.tally()
    print(f"wrote {len(man.records)} images to {args.out} ({dict(tally)})", file=sys.stderr)
    return EXIT_OK


def cmd_search(args):
    man = datapipe.load_manifest(args.manifest)
    space = pipeline.search_space(args.color)
    workers = resolve_workers(args.workers)
    t0 = time.perf_counter()

    def progress(res, best):
        log.info("candidate %d: objective %.4f (best %.4f at %d) in %.1fs", res.index, res.objective,
                 best.objective, best.index, res.wall_time)

    det, result = pipeline.fit_ao(man, args.budget, args.seed, workers, space, args.trace, args.folds, progress)
    det.meta["config"] = _config(args)
    container.save(args.out, det)
    best = result.best
    print(f"best candidate {best.index}: objective {best.objective:.4f}, {len(best.spec.layers)} layer(s), "
          f"tau {det.tau:.6g}; model written to {args.out}", file=sys.stderr)
    if args.report:
        doc = _report_header(args)
        doc.update({"best_index": best.index, "objective": best.objective, "fold_accuracies": best.fold_accuracies,
                    "architecture": best.spec.to_dict(), "feature_dims": best.feature_dims,
                    "threshold": det.threshold, "attempts": result.attempts,
                    "rejected": dict(result.rejected), "wall_time": time.perf_counter() - t0})
        _write_json(args.report, doc)
    return EXIT_OK


def _schedule(args):
    base = backprop.SCHEDULES[args.schedule]()
    if args.epoch_divisor == 1 and args.lr_factor == 1.0:
        return base
    return backprop.scaled_schedule(base, args.epoch_divisor, args.lr_factor)


def cmd_train_net(args):
    man = datapipe.load_manifest(args.manifest)
    schedule = _schedule(args)
    color = {"auto": None, "gray": False, "color": True}[args.color]

    def progress(rec):
        log.info("epoch %d (phase %d, lr %g): loss %.5f, held-out acc %s", rec["epoch"], rec["phase"], rec["lr"],
                 rec["train_loss"], rec["val_acc"])

    t0 = time.perf_counter()
    try:
        det, res = pipeline.fit_fo(man, args.seed, schedule, args.input_size, args.crop_size, color, args.log,
                                   progress, n1=args.filters1, n2=args.filters2)
    except ShapeError as exc:
        raise InvalidArgument(f"network geometry: {exc}") from None
    det.meta["config"] = _config(args)
    container.save(args.out, det)
    print(f"trained {sum(schedule.epochs)} epochs; model written to {args.out}", file=sys.stderr)
    if args.report:
        doc = _report_header(args)
        doc.update({"schedule": schedule.to_dict(), "epochs": len(res.log),
                    "final_train_loss": res.log[-1]["train_loss"] if res.log else None,
                    "wall_time": time.perf_counter() - t0})
        _write_json(args.report, doc)
    return EXIT_OK


def cmd_eval(args):
    det = container.load(args.model)
    man = datapipe.load_manifest(args.manifest)
    report, scores = pipeline.evaluate(det, man, args.split, args.threshold, args.fuse)
    if args.scores:
        protocol.write_scores_csv(args.scores, scores)
    header = _report_header(args)
    header.update({"model_kind": det.kind, "model_seed": det.meta.get("seed"), "split": args.split,
                   "fusion": args.fuse})
    doc = protocol.write_report(args.report, report, **header) if args.report else report.to_dict()
    print(f"ACC {report.acc:.2f}%  HTER {report.hter:.2f}%  (FAR {report.far:.2f}%, FRR {report.frr:.2f}%, "
          f"tau {report.tau:.6g}, rule {report.rule})", file=sys.stderr)
    if not args.report:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_inspect(args):
    det = container.load(args.model)
    man = datapipe.load_manifest(args.manifest)
    paths = pipeline.inspect(det, man, args.out, args.split)
    print(f"wrote {len(paths)} images to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_extract(args):
    det = container.load(args.model)
    man = datapipe.load_manifest(args.manifest)
    records = man.split(args.split) if args.split != "all" else man.records
    if not records:
        raise InvalidArgument(f"manifest has no {args.split!r} samples")
    X = det.features([man.load_image(r) for r in records])
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp.npz")
    np.savez(tmp, features=X, labels=np.array([r.y for r in records]),
             sample_ids=np.array([r.path for r in records]), group_ids=np.array([r.group_id for r in records]))
    os.replace(tmp, out)
    print(f"wrote {X.shape[0]}x{X.shape[1]} features to {out}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="spoofbench", description="Build and evaluate image spoofing detectors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic real/fake benchmark")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--individuals", type=int, default=20)
    s.add_argument("--per-individual", type=int, default=10, help="samples per class and individual")
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--blur-sigma", type=float, default=1.5)
    s.add_argument("--noise", type=float, default=0.02)
    s.add_argument("--contrast-jitter", type=float, default=0.1)
    s.add_argument("--base-amplitude", type=float, default=datapipe.SynthParams.base_amplitude)
    s.add_argument("--test-fraction", type=float, default=0.5)
    s.add_argument("--dev-individuals", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("search", help="random architecture search with random filters")
    s.add_argument("--manifest", required=True)
    s.add_argument("--budget", type=int, default=archsearch.DEFAULT_BUDGET, help="valid candidates to evaluate")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="model container path")
    s.add_argument("--trace", help="JSON Lines trace of every evaluated candidate")
    s.add_argument("--report", help="search summary JSON")
    s.add_argument("--workers", type=int, help="parallel candidate evaluations (env SPOOFBENCH_WORKERS)")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--color", choices=pipeline.COLOR_MODES, default="search",
                   help="let the search decide, or force gray/colour input")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("train-net", help="learn filters of the fixed network by back-propagation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--schedule", choices=sorted(backprop.SCHEDULES), default="spoofnet")
    s.add_argument("--epoch-divisor", type=int, default=1, help="divide every phase's epochs (>= 1 kept)")
    s.add_argument("--lr-factor", type=float, default=1.0, help="multiply every phase's learning rate")
    s.add_argument("--input-size", type=int, default=128)
    s.add_argument("--crop-size", type=int, default=112)
    s.add_argument("--filters1", type=int, default=16)
    s.add_argument("--filters2", type=int, default=32)
    s.add_argument("--color", choices=("auto", "gray", "color"), default="auto")
    s.add_argument("--log", help="per-epoch JSON Lines log")
    s.add_argument("--report", help="training summary JSON")
    s.set_defaults(func=cmd_train_net)

    s = sub.add_parser("eval", help="score a split and compute ACC/HTER")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=datapipe.SPLITS)
    s.add_argument("--threshold", choices=protocol.THRESHOLD_RULES, help="default: the model's own rule")
    s.add_argument("--fuse", choices=("max",), help="fuse scores per group before thresholding")
    s.add_argument("--report", help="report JSON (printed to stdout when omitted)")
    s.add_argument("--scores", help="per-sample scores CSV")
    s.add_argument("--seed", type=int, default=0, help="recorded in the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="dump layer-1 filters, class means and activation maps as PGM/PPM")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="train", choices=datapipe.SPLITS)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("extract", help="write deep features of a split to .npz")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="all", choices=datapipe.SPLITS + ("all",))
    s.set_defaults(func=cmd_extract)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    try:
        return args.func(args)
    except (InvalidArgument, ConfigError) as exc:
        print(f"spoofbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpoofbenchError, OSError) as exc:
        print(f"spoofbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
