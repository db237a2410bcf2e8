"""Command line: ``checkfields detect | evaluate | export-labels | render | validate-config``.

Exit codes: 0 success, 1 every check failed, 2 configuration error,
3 input error, 4 backend outage (a checkpoint is written; rerun with ``--resume``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backends import BackendError, HttpBackend, ReplayBackend
from .config import ConfigError, EngineConfig, load_config
from .evaluation import (AnnotationError, EvalReport, EvaluationError, detection_metrics,
                         export_coco, format_detection_table, format_ner_table, load_ground_truth,
                         load_mapping, load_transcriptions, ner_metrics)
from .geometry import FIELD_ORDER
from .imaging import ImageError, draw_detections, load_image, save_png
from .pipeline import detect_fields
from .records import DETECTED, CheckResult, dump_json, load_detections

log = logging.getLogger("checkfields")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_INPUT, EXIT_BACKEND = 0, 1, 2, 3, 4
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SUMMARY = "run_summary.json"
CHECKPOINT = "run_checkpoint.json"


class InputError(Exception):
    pass


def _config_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("engine configuration (overrides the config file)")
    g.add_argument("--config", type=Path, help="YAML config file")
    g.add_argument("--score-threshold", type=float)
    g.add_argument("--nms-iou", type=float)
    g.add_argument("--max-detections", type=int)
    g.add_argument("--c-o", type=float, help="CER cut-off for stacked candidates")
    g.add_argument("--t-max", type=int, help="iteration cap for the agentic loops")
    g.add_argument("--page-size", type=int, help="crops per OCR stack page (1-7)")
    g.add_argument("--lowercase", action="store_true", default=None)
    g.add_argument("--signature-fallback", action="store_true", default=None)
    g.add_argument("--replay", action="append", help="replay fixture file or directory")
    g.add_argument("--vlm-url")
    g.add_argument("--mllm-url")
    g.add_argument("--api-key-env", help="environment variable holding the API key")
    g.add_argument("--timeout", type=float)
    g.add_argument("--deadline", type=float)
    g.add_argument("--max-retries", type=int)
    g.add_argument("--max-in-flight", type=int)
    g.add_argument("--jobs", type=int, help="checks processed concurrently")


_CONFIG_FIELDS = ("score_threshold", "nms_iou", "max_detections", "c_o", "t_max", "page_size",
                  "lowercase", "signature_fallback", "replay", "vlm_url", "mllm_url",
                  "api_key_env", "timeout", "deadline", "max_retries", "max_in_flight", "jobs")


def _resolve_config(args) -> EngineConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FIELDS}
    if overrides["replay"]:
        overrides["replay"] = [str(Path(p).resolve()) for p in overrides["replay"]]
    return load_config(args.config, **overrides)


def make_backend(config: EngineConfig, live: bool):
    if live:
        if not (config.vlm_url and config.mllm_url):
            raise ConfigError("--live needs vlm_url and mllm_url")
        return HttpBackend(config.vlm_url, config.mllm_url, config.api_key_env, config.timeout,
                           config.deadline, config.max_retries, config.max_in_flight,
                           config.prompts)
    if not config.replay:
        raise ConfigError("no replay fixtures given; pass --replay, or --live for real backends")
    try:
        return ReplayBackend.from_paths(config.replay, config.prompts)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load replay fixtures: {exc}") from exc


def _field_rates(results) -> dict:
    n = len(results)
    return {f.value: (sum(r.fields[f].status == DETECTED for r in results) / n if n else 0.0)
            for f in FIELD_ORDER}


def cmd_detect(args) -> int:
    config = _resolve_config(args)
    backend = make_backend(config, args.live)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    debug_dir = out / "debug" if args.debug else None
    if debug_dir:
        debug_dir.mkdir(exist_ok=True)
    inputs = sorted(p for p in Path(args.input).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not inputs:
        raise InputError(f"no images in {args.input}")

    skipped, todo, done = [], [], []
    for p in inputs:
        if args.resume and (out / f"{p.stem}.json").exists():
            done.append(p.stem)
            continue
        todo.append(p)

    def run_one(path):
        try:
            image = load_image(path)
        except ImageError as exc:
            return path, None, str(exc)
        result = detect_fields(image, backend, config, debug_dir)
        dump_json(result.to_json(), out / f"{image.source_id}.json")
        if args.overlays:
            boxes = [(f.value, r.detection.box) for f, r in result.fields.items() if r.detection]
            save_png(draw_detections(image, boxes), out / f"{image.source_id}.png")
        return path, result, None

    outage = None
    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        futures = [pool.submit(run_one, p) for p in todo]
        for fut in futures:
            try:
                path, result, err = fut.result()
            except BackendError as exc:
                outage = outage or exc
                continue
            if err:
                log.warning("skipping %s: %s", path.name, err)
                skipped.append({"file": path.name, "reason": err})
            else:
                done.append(result.source_id)

    if outage is not None:
        pending = sorted(p.stem for p in todo if p.stem not in done and
                         p.name not in {s["file"] for s in skipped})
        dump_json({"done": sorted(done), "pending": pending, "error": str(outage)},
                  out / CHECKPOINT)
        log.error("backend failure, %d checks pending: %s", len(pending), outage)
        return EXIT_BACKEND
    (out / CHECKPOINT).unlink(missing_ok=True)

    results = [r for sid, r in sorted(load_detections(out).items()) if sid in set(done)]
    summary = {
        "config": config.to_dict(),
        "checks": len(results),
        "skipped": sorted(skipped, key=lambda s: s["file"]),
        "detection_rate": _field_rates(results),
        "failures": [{"source_id": r.source_id, "field": f.value, "status": fr.status,
                      "detail": fr.detail}
                     for r in results for f, fr in r.fields.items() if fr.status != DETECTED],
    }
    dump_json(summary, out / SUMMARY)
    print(f"{len(results)} checks processed, {len(skipped)} skipped -> {out}")
    return EXIT_OK if results else EXIT_FAILED


def _load_truth(args):
    mapping = load_mapping(args.mapping) if args.mapping else None
    return load_ground_truth(args.truth, mapping, args.label_attribute)


def cmd_evaluate(args) -> int:
    truth = _load_truth(args)
    dets = load_detections(args.detections)
    if not dets:
        raise InputError(f"no detection files in {args.detections}")
    missing = sorted(set(truth.checks) - set(dets))
    if missing and not args.allow_missing:
        raise InputError("detections missing for: " + ", ".join(missing))
    report = EvalReport(detection=detection_metrics(dets, truth))
    if args.baseline:
        base = load_detections(args.baseline)
        base_missing = sorted(set(truth.checks) - set(base))
        if base_missing and not args.allow_missing:
            raise InputError("baseline detections missing for: " + ", ".join(base_missing))
        report.baseline = detection_metrics(base, truth)
    texts = load_transcriptions(args.transcriptions) if args.transcriptions else truth.texts()
    refs = {sid: r.references for sid, r in dets.items() if r.references}
    if refs and any(any(v) for v in texts.values()):
        report.ner = ner_metrics(refs, texts)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report.to_json(), out / "report.json")
    table = format_detection_table(report.detection, report.baseline,
                                   (args.name, args.baseline_name))
    if report.ner:
        table += "\n\n" + format_ner_table(report.ner)
    (out / "report.txt").write_text(table + "\n")
    print(table)
    if truth.report.unknown:
        print(f"\n{len(truth.report.unknown)} annotation regions skipped (unknown field names)")
    return EXIT_OK


def cmd_export_labels(args) -> int:
    dets = load_detections(args.detections)
    if not dets:
        raise InputError(f"no detection files in {args.detections}")
    if args.format != "coco":
        raise InputError(f"unsupported format {args.format}")
    data = export_coco(dets, args.image_ext)
    dump_json(data, args.output)
    print(f"{len(data['annotations'])} boxes over {len(data['images'])} images -> {args.output}")
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        image = load_image(args.image)
    except ImageError as exc:
        raise InputError(str(exc)) from exc
    result = CheckResult.from_json(json.loads(Path(args.detections).read_text()))
    boxes = [(f.value, r.detection.box) for f, r in result.fields.items() if r.detection]
    save_png(draw_detections(image, boxes), args.output)
    return EXIT_OK


def cmd_validate_config(args) -> int:
    config = _resolve_config(args)
    print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="checkfields", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect fields on every image in a directory")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--live", action="store_true", help="allow calls to real backends")
    p.add_argument("--overlays", action="store_true", help="also write annotated PNGs")
    p.add_argument("--debug", action="store_true", help="write signature-loop transcripts")
    p.add_argument("--resume", action="store_true", help="skip checks already written")
    _config_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("detections", type=Path)
    p.add_argument("--truth", type=Path, required=True, help="native, COCO or VIA annotations")
    p.add_argument("--baseline", type=Path, help="second detections directory to compare")
    p.add_argument("--transcriptions", type=Path, help="CSV source_id,field,text")
    p.add_argument("--mapping", type=Path, help="region-label to field-kind table")
    p.add_argument("--label-attribute", help="VIA region attribute holding the field name")
    p.add_argument("--name", default="detector")
    p.add_argument("--baseline-name", default="baseline")
    p.add_argument("--allow-missing", action="store_true")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-labels", help="write detections as a training dataset")
    p.add_argument("detections", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--format", default="coco", choices=["coco"])
    p.add_argument("--image-ext", default=".png")
    p.set_defaults(func=cmd_export_labels)

    p = sub.add_parser("render", help="draw one check's detections")
    p.add_argument("image", type=Path)
    p.add_argument("detections", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate-config", help="print the resolved configuration")
    _config_args(p)
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, AnnotationError, EvaluationError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
