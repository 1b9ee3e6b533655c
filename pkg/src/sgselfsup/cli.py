"""Command line: generate | labels | train | eval | analyze | export-features.

Exit status: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import fileio
from .evaluation import (ALPHA_THRESHOLDS, DEFAULT_KS, MODES, PREDCLS, InputError,
                         RecallReport, alpha_curve, evaluate, export_features,
                         nontrivial_count, predict_dataset)
from .geometry import ValidationError
from .model import ConfigurationError, load_checkpoint, save_checkpoint
from .selfsup import labels_xywh
from .synth import SynthConfig, generate
from .trainer import TrainConfig, all_pairs, train

log = logging.getLogger("sgselfsup")

DATASET_FILE = "dataset.jsonl"
DETECTIONS_FILE = "detections.json"
CHECKPOINT_FILE = "model.ckpt"
TRAIN_LOG_FILE = "train_log.csv"


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _weights(text: str) -> tuple:
    w = _floats(text)
    if len(w) != 4 or any(v < 0 for v in w):
        raise argparse.ArgumentTypeError("--weights needs four non-negative values w1,w2,w3,w4")
    return w


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------ subcommands

def cmd_generate(args) -> None:
    cfg = SynthConfig(n_images=args.n_images, objects_per_image=(args.min_objects, args.max_objects),
                      n_classes=args.classes, d_vis=args.d_vis, label_noise=args.label_noise,
                      class_score_sigma=args.class_sigma, box_jitter=args.box_jitter,
                      seed=args.seed)
    data = generate(cfg)
    out = _out_dir(args)
    fileio.save_dataset(data.dataset, out / DATASET_FILE)
    fileio.save_detections(data.detections, out / DETECTIONS_FILE)
    counts = data.stats["type_counts"]
    fileio.write_table(out / "label_stats.csv", ("type", "count"), sorted(counts.items()))
    log.info("wrote %d images to %s", len(data.dataset.images), out)


def cmd_labels(args) -> None:
    ds = fileio.ingest(args.dataset, args.format)
    rows = []
    for ann in ds.images:
        pairs = all_pairs(len(ann.objects))
        if not pairs:
            continue
        boxes = ann.boxes_array()
        si = [s for s, _ in pairs]
        oi = [o for _, o in pairs]
        lab = labels_xywh(boxes[si], boxes[oi], (ann.image.width, ann.image.height))
        for i, (s, o) in enumerate(pairs):
            rows.append([ann.image.id, s, o, int(lab["relpos"][i, 0]), int(lab["relpos"][i, 1]),
                         float(lab["distance"][i]), float(lab["iou"][i])])
    fileio.write_table(_out_dir(args) / "labels.csv",
                       ("image_id", "sub_idx", "obj_idx", "relpos_right", "relpos_below",
                        "distance", "iou"), rows)


def cmd_train(args) -> None:
    ds = fileio.ingest(args.dataset, args.format)
    if args.no_spatial and (args.no_visual or not ds.has_features):
        log.info("spatial and visual modules both disabled: semantic prior only")
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                      pairs_per_image=args.pairs_per_image, loss_weights=args.weights,
                      seed=args.seed, batch_images=args.batch_images, lr_decay=args.lr_decay,
                      use_spatial=not args.no_spatial,
                      use_visual=not args.no_visual and ds.has_features)
    if not args.no_visual and not ds.has_features:
        log.warning("dataset has no ROI features; visual module disabled")
    report, params = train(ds, cfg)
    out = _out_dir(args)
    save_checkpoint(params, out / CHECKPOINT_FILE,
                    extra={"train_config": {k: list(v) if isinstance(v, tuple) else v
                                            for k, v in vars(cfg).items()}})
    with fileio.atomic_write(out / TRAIN_LOG_FILE) as fh:
        fh.write("\n".join(report.log_lines()) + "\n")
    log.info("trained %d epochs in %.1fs", cfg.epochs, report.wall_seconds)


def _predictions(args, ds):
    if args.predictions:
        return fileio.load_predictions(args.predictions)
    if not args.checkpoint:
        raise UsageError(f"{args.command} needs --checkpoint or --predictions")
    params = load_checkpoint(args.checkpoint)
    dets = fileio.load_detections(args.detections) if args.detections else None
    return predict_dataset(params, ds, args.mode, dets)


def cmd_eval(args) -> None:
    if not (args.checkpoint or args.predictions):
        raise UsageError("eval needs --checkpoint or --predictions")
    if args.mode != PREDCLS and args.checkpoint and not args.detections:
        raise UsageError(f"--mode {args.mode} needs --detections")
    ds = fileio.ingest(args.dataset, args.format)
    preds = _predictions(args, ds)
    report = evaluate(ds, preds, args.mode, args.k, graph_constraint=not args.no_graph_constraint,
                      micro=args.micro_recall)
    out = _out_dir(args)
    fileio.write_table(out / f"recall_{args.mode}.csv", RecallReport.HEADER, report.rows())
    if args.checkpoint and not args.predictions:
        fileio.save_predictions(preds, out / f"predictions_{args.mode}.jsonl")
    summary = {"mode": report.mode, "n_images": report.n_images, "micro": report.micro,
               "graph_constraint": not args.no_graph_constraint,
               "recall": {str(k): v for k, v in report.recall.items()},
               "per_type": {t: {str(k): v for k, v in d.items()}
                            for t, d in report.per_type.items()}}
    with fileio.atomic_write(out / f"report_{args.mode}.json") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for row in report.rows():
        print(",".join("" if v is None else str(v) for v in row))


def cmd_analyze(args) -> None:
    if not (args.checkpoint or args.predictions):
        raise UsageError("analyze needs --checkpoint or --predictions")
    ds = fileio.ingest(args.dataset, args.format)
    preds = _predictions(args, ds)
    curve = alpha_curve(preds, ds.taxonomy, args.thresholds)
    out = _out_dir(args)
    fileio.write_table(out / "alpha.csv", curve.HEADER, curve.rows())
    fileio.write_table(out / "nontrivial.csv", ("threshold", "nontrivial_count"),
                       [[t, nontrivial_count(preds, ds.taxonomy, t)] for t in curve.thresholds])


def cmd_export_features(args) -> None:
    if not args.checkpoint:
        raise UsageError("export-features needs --checkpoint")
    ds = fileio.ingest(args.dataset, args.format)
    params = load_checkpoint(args.checkpoint)
    dets = fileio.load_detections(args.detections) if args.detections else None
    header, rows = export_features(params, ds, args.threshold, args.mode, dets)
    fileio.write_table(_out_dir(args) / "features.csv", header, rows)


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgselfsup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        if dataset:
            sp.add_argument("--dataset", required=True, metavar="PATH")
            sp.add_argument("--format", default="native", choices=sorted(fileio.INGEST_FORMATS))
        sp.add_argument("--out", required=True, metavar="DIR")
        sp.add_argument("--seed", type=int, default=0, metavar="N")
        sp.add_argument("-v", "--verbose", action="store_true")

    def model_inputs(sp):
        sp.add_argument("--checkpoint", metavar="PATH")
        sp.add_argument("--predictions", metavar="PATH")
        sp.add_argument("--detections", metavar="PATH")
        sp.add_argument("--mode", choices=MODES, default=PREDCLS)

    g = sub.add_parser("generate", help="write a synthetic dataset and detections")
    common(g, dataset=False)
    g.add_argument("--n-images", type=int, default=200)
    g.add_argument("--min-objects", type=int, default=3)
    g.add_argument("--max-objects", type=int, default=5)
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--d-vis", type=int, default=16)
    g.add_argument("--label-noise", type=float, default=0.0)
    g.add_argument("--class-sigma", type=float, default=0.0)
    g.add_argument("--box-jitter", type=float, default=0.0)
    g.set_defaults(func=cmd_generate)

    lab = sub.add_parser("labels", help="self-supervision targets for every ordered pair")
    common(lab)
    lab.set_defaults(func=cmd_labels)

    t = sub.add_parser("train", help="train a model; writes a checkpoint and a log")
    common(t)
    t.add_argument("--lr", type=float, default=0.005)
    t.add_argument("--lr-decay", type=float, default=1.0)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--pairs-per-image", type=int, default=512)
    t.add_argument("--batch-images", type=int, default=4)
    t.add_argument("--weights", type=_weights, default=(1.0, 1.0, 1.0, 1.0))
    t.add_argument("--no-visual", action="store_true")
    t.add_argument("--no-spatial", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="recall@K report")
    common(e)
    model_inputs(e)
    e.add_argument("--k", type=_ints, default=DEFAULT_KS)
    e.add_argument("--micro-recall", action="store_true")
    e.add_argument("--no-graph-constraint", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="alpha curve and non-trivial counts")
    common(a)
    model_inputs(a)
    a.add_argument("--thresholds", type=_floats, default=ALPHA_THRESHOLDS)
    a.set_defaults(func=cmd_analyze)

    x = sub.add_parser("export-features", help="final-layer features of confident predictions")
    common(x)
    model_inputs(x)
    x.add_argument("--threshold", type=float, default=0.5)
    x.set_defaults(func=cmd_export_features)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="# %(asctime)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (ValidationError, ConfigurationError, InputError, FileNotFoundError) as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("failed")
        print(f"{parser.prog}: runtime failure: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
