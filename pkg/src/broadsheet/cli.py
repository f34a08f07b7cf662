"""Command-line entry points.

Subcommands: fuse, ocr, eval, synth, det-eval, report, run.  Exit codes:
0 success, 1 failure (bad arguments, bad config, empty corpus, nothing
produced), 2 partial failure (a run scored some pages but recorded errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .deteval import COCO_THRESHOLDS, DetEvalConfig, map_score
from .errors import BroadsheetError, ConfigError
from .fusion import FusionConfig, fuse_detections
from .metrics import NgramConfig, evaluate_page, load_vocabulary
from .model import (
    detection_set_to_json,
    parse_detection_file,
    load_page_transcript,
    save_page_transcript,
    write_detection_file,
)
from .ocr import WindowConfig, make_engine, transcribe_page
from .pipeline import (
    RunConfig,
    exit_code_for,
    load_run_config,
    run_pipelines,
    write_run_outputs,
)
from .report import emit_report, read_per_page_csv

log = logging.getLogger(__name__)

# Nominal page size for box files scored without their image: overlap
# ratios are invariant to uniform scaling, so any fixed size works.
_NOMINAL_SIZE = 1000


class _Parser(argparse.ArgumentParser):
    # Usage problems are plain failures (1); 2 is reserved for partial runs.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_image(path: str | Path):
    import numpy as np
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------

def _parse_fuse_input(arg: str) -> tuple[str, Path]:
    if "=" in arg:
        model, _, raw = arg.partition("=")
        return model, Path(raw)
    path = Path(arg)
    model = path.parent.name or path.stem
    return model, path


def cmd_fuse(args) -> int:
    cfg = FusionConfig(
        iou_threshold=args.iou_threshold,
        duplicate_iou_threshold=args.duplicate_iou_threshold,
    )
    per_model = {}
    for arg in args.inputs:
        model, path = _parse_fuse_input(arg)
        if model in per_model:
            raise ConfigError(f"duplicate model name {model!r}; use model=path inputs")
        per_model[model] = parse_detection_file(
            path, args.page_id, args.width, args.height, model
        )
    fused = fuse_detections(per_model, cfg)
    out = Path(args.out)
    if args.json:
        out.write_text(detection_set_to_json(fused))
    else:
        write_detection_file(fused, out, include_confidence=True)
    print(f"{len(fused.detections)} fused boxes from {len(per_model)} models -> {out}")
    return 0


# ---------------------------------------------------------------------------
# ocr
# ---------------------------------------------------------------------------

def cmd_ocr(args) -> int:
    image = _load_image(args.image)
    height, width = image.shape
    page_id = args.page_id or Path(args.image).stem

    mode = args.mode or ("layout" if args.detections is not None else "fullpage")
    detections = None
    if mode == "layout":
        if args.detections is None:
            raise ConfigError("layout mode requires --detections")
        model = args.model or Path(args.detections).parent.name or "detector"
        detections = parse_detection_file(args.detections, page_id, width, height, model)
    elif args.detections is not None:
        log.warning("fullpage mode ignores --detections")
    pipeline_id = args.pipeline_id or ("fullpage" if mode == "fullpage" else "layout")

    provenance: list = []
    transcript = transcribe_page(
        image,
        detections,
        make_engine(args.engine),
        mode=mode,
        pipeline_id=pipeline_id,
        page_id=page_id,
        workers=args.workers,
        provenance=provenance,
    )
    save_page_transcript(transcript, args.out)
    if args.provenance is not None:
        payload = [
            {
                "region_index": idx,
                "window_count": prov.window_count,
                "engine_confidences": list(prov.engine_confidences),
            }
            for idx, prov in provenance
        ]
        Path(args.provenance).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"{len(transcript.regions)} regions transcribed -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    vocab = load_vocabulary(args.vocab)
    ngram = NgramConfig(unit=args.ngram_unit, n=args.ngram_n)
    records = [
        evaluate_page(load_page_transcript(path), vocab, ngram)
        for path in args.transcripts
    ]
    emit_report(records, args.out, figures=not args.no_figures)
    print(f"{len(records)} transcripts scored -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import (
        default_geometry_samples,
        fit_models,
        generate_corpus,
        samples_from_label_dir,
    )

    if args.geometry is not None:
        samples = samples_from_label_dir(args.geometry)
    else:
        samples = default_geometry_samples()
    models = fit_models(samples)
    pages = generate_corpus(
        args.out, args.pages, args.width, args.height, args.seed, models
    )
    total = sum(len(p.regions) for p in pages)
    print(f"{len(pages)} pages ({total} regions) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# det-eval
# ---------------------------------------------------------------------------

def cmd_det_eval(args) -> int:
    pred_dir, gt_dir = Path(args.predictions), Path(args.ground_truth)
    gt_files = {p.stem: p for p in sorted(gt_dir.glob("*.txt"))}
    if not gt_files:
        raise ConfigError(f"no ground-truth label files under {gt_dir}")

    preds, gts = [], []
    for stem, gt_path in sorted(gt_files.items()):
        gt_set = parse_detection_file(gt_path, stem, _NOMINAL_SIZE, _NOMINAL_SIZE, "gt")
        pred_path = pred_dir / f"{stem}.txt"
        if pred_path.is_file():
            pred_set = parse_detection_file(
                pred_path, stem, _NOMINAL_SIZE, _NOMINAL_SIZE, "pred"
            )
        else:
            log.warning("no prediction file for page %s; scoring as zero boxes", stem)
            pred_set = None
        preds.append(pred_set.detections if pred_set is not None else ())
        gts.append(gt_set.detections)

    thresholds = COCO_THRESHOLDS if args.coco else tuple(args.threshold)
    result = map_score(preds, gts, DetEvalConfig(iou_thresholds=thresholds))

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "iou_threshold", "ap"])
        for (label, thr), value in sorted(
            result.ap.items(), key=lambda kv: (kv[0][1], kv[0][0].class_index)
        ):
            writer.writerow([label.value, thr, str(value)])
        for thr, value in sorted(result.map_by_threshold.items()):
            writer.writerow([f"mAP@{thr:.2f}", thr, str(value)])
        if len(thresholds) > 1:
            writer.writerow(
                [f"mAP@{thresholds[0]:.2f}:{thresholds[-1]:.2f}", "", str(result.map_overall)]
            )

    for thr in thresholds:
        print(f"mAP@{thr:.2f} = {result.map_by_threshold[thr]:.4f}")
    if len(thresholds) > 1:
        print(f"mAP@{thresholds[0]:.2f}:{thresholds[-1]:.2f} = {result.map_overall:.4f}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    records = read_per_page_csv(args.records)
    emit_report(records, args.out, figures=not args.no_figures)
    print(f"report for {len(records)} records -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    overrides = dict(
        corpus=args.corpus,
        out=args.out,
        vocabulary=args.vocab,
        engine=args.engine,
        workers=args.workers,
        seed=args.seed,
        pipelines=tuple(args.pipelines.split(",")) if args.pipelines else None,
        figures=False if args.no_figures else None,
    )
    if args.config is not None:
        cfg = load_run_config(args.config, **overrides)
    else:
        missing = [k for k in ("corpus", "out", "vocabulary") if overrides[k] is None]
        if missing:
            raise ConfigError(
                f"without --config, these options are required: {missing}"
            )
        cfg = RunConfig(**{k: v for k, v in overrides.items() if v is not None})

    result = run_pipelines(cfg)
    write_run_outputs(result, cfg)

    pipelines = sorted({r.pipeline_id for r in result.records})
    print(
        f"{len(result.records)} page-pipeline records across "
        f"{len(pipelines)} pipelines -> {cfg.out}"
    )
    if result.skips:
        print(f"{len(result.skips)} skips (see errors.csv)")
    if result.errors:
        print(f"{len(result.errors)} errors (see errors.csv)", file=sys.stderr)
    return exit_code_for(result)


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="broadsheet",
        description="Layout fusion, region OCR orchestration, and unsupervised "
                    "transcript quality scoring for scanned newspaper pages.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log at INFO instead of WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuse", help="merge detection files from several models")
    p.add_argument("inputs", nargs="+", metavar="MODEL=FILE",
                   help="detection files; bare paths take the parent dir as model name")
    p.add_argument("--width", type=int, required=True, help="page width, px")
    p.add_argument("--height", type=int, required=True, help="page height, px")
    p.add_argument("--page-id", default="page")
    p.add_argument("--iou-threshold", type=float, default=FusionConfig().iou_threshold)
    p.add_argument("--duplicate-iou-threshold", type=float,
                   default=FusionConfig().duplicate_iou_threshold)
    p.add_argument("--json", action="store_true", help="write JSON instead of box lines")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("ocr", help="transcribe one page image")
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=("layout", "fullpage"),
                   help="default: layout when --detections is given, else fullpage")
    p.add_argument("--detections", help="box file; omitting it selects fullpage mode")
    p.add_argument("--model", help="source model name for the detection file")
    p.add_argument("--engine", default="stub",
                   help="'stub' or a command template containing {image}")
    p.add_argument("--page-id")
    p.add_argument("--pipeline-id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--provenance", help="also write engine confidence sidecar JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ocr)

    p = sub.add_parser("eval", help="score transcript files and write a report")
    p.add_argument("transcripts", nargs="+", metavar="TRANSCRIPT.json")
    p.add_argument("--vocab", required=True)
    p.add_argument("--ngram-unit", choices=("word", "character"),
                   default=NgramConfig().unit)
    p.add_argument("--ngram-n", type=int, default=NgramConfig().n)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic page corpus")
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--width", type=int, default=1240)
    p.add_argument("--height", type=int, default=1754)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry",
                   help="directory of box files to fit densities from "
                        "(default: built-in geometry)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("det-eval", help="score predicted boxes against ground truth")
    p.add_argument("--predictions", required=True, help="directory of box files")
    p.add_argument("--ground-truth", required=True, help="directory of box files")
    p.add_argument("--threshold", type=float, action="append",
                   default=None, help="overlap threshold; repeatable (default 0.5)")
    p.add_argument("--coco", action="store_true",
                   help="use thresholds 0.50:0.05:0.95")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_det_eval)

    p = sub.add_parser("report", help="re-render report outputs from a per-page CSV")
    p.add_argument("--records", required=True, help="per_page.csv from a previous run")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run pipelines over a corpus and write reports")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--vocab")
    p.add_argument("--engine")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, help="master seed recorded with the run")
    p.add_argument("--pipelines", help="comma-separated pipeline names")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threshold", None) is None and args.command == "det-eval":
        args.threshold = [0.5]
    try:
        return args.func(args)
    except (BroadsheetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
