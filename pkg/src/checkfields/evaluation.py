"""Ground-truth loading and the two evaluations: NER CER and box localisation.

Annotation inputs understood by :func:`load_ground_truth`:

* native: ``{"format": "checkfields-annotations/1", "images": [{"source_id", "width",
  "height", "fields": {"<kind>": {"box": [x1, y1, x2, y2], "text": "..."}}}]}``
* COCO-style datasets (as written by :func:`export_coco`), ``bbox = [x, y, w, h]``
* VGG Image Annotator projects or region exports with rectangle regions

Localisation metrics: per field, mIOU is the mean IoU over checks that have a
ground-truth box, a missing detection contributing 0; Acc@t is the fraction of
those checks with IoU >= t.  AP/mAP is deliberately absent, the final boxes
carry no confidence score.  Standard deviations use the population formula.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, median, pstdev
from typing import Mapping

from .geometry import FIELD_ORDER, TEXT_FIELDS, BoundingBox, FieldKind, iou
from .records import CheckResult
from .textmetrics import cer, normalize

log = logging.getLogger(__name__)

NATIVE_FORMAT = "checkfields-annotations/1"
ACC_THRESHOLDS = (0.25, 0.5)


class AnnotationError(ValueError):
    """Annotation file that cannot be interpreted."""


class EvaluationError(ValueError):
    pass


def _key(name: str) -> str:
    return "_".join(str(name).strip().lower().replace("-", " ").replace("_", " ").split())


DEFAULT_ALIASES = {_key(f.value): f for f in FieldKind}
DEFAULT_ALIASES.update({_key(f.title): f for f in FieldKind})
DEFAULT_ALIASES.update({
    "sig": FieldKind.SIGNATURE, "amount": FieldKind.COURTESY_AMOUNT,
    "numeric_amount": FieldKind.COURTESY_AMOUNT, "written_amount": FieldKind.LEGAL_AMOUNT,
    "payer": FieldKind.PAYER_NAME, "payee": FieldKind.PAYEE_NAME, "bank": FieldKind.BANK_NAME,
    "micr_line": FieldKind.MICR,
})


def load_mapping(path) -> dict[str, FieldKind]:
    """Read an alias table ``{"region label": "field kind", ...}`` (JSON or YAML)."""
    import yaml

    raw = yaml.safe_load(Path(path).read_text()) or {}
    try:
        return {_key(k): FieldKind(v) for k, v in raw.items()}
    except ValueError as exc:
        raise AnnotationError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class TruthEntry:
    box: BoundingBox | None = None
    text: str | None = None


@dataclass
class LoadReport:
    unknown: list[tuple[str, str]] = field(default_factory=list)  # (source_id, region name)
    entries: int = 0


@dataclass
class GroundTruth:
    checks: dict[str, dict[FieldKind, TruthEntry]] = field(default_factory=dict)
    dims: dict[str, tuple[int, int]] = field(default_factory=dict)
    report: LoadReport = field(default_factory=LoadReport)

    def __len__(self):
        return len(self.checks)

    def boxes(self) -> dict[str, dict[FieldKind, BoundingBox | None]]:
        return {sid: {f: e.box for f, e in fs.items()} for sid, fs in self.checks.items()}

    def texts(self) -> dict[str, dict[FieldKind, str | None]]:
        return {sid: {f: e.text for f, e in fs.items() if f in TEXT_FIELDS}
                for sid, fs in self.checks.items()}

    def _put(self, sid, name, box, text, aliases):
        kind = aliases.get(_key(name))
        if kind is None:
            self.report.unknown.append((sid, str(name)))
            return
        fields = self.checks.setdefault(sid, {})
        if kind in fields:
            raise AnnotationError(f"{sid}: more than one {kind.value} annotation")
        fields[kind] = TruthEntry(box, text)
        self.report.entries += 1


def _rect(sid, x1, y1, x2, y2, dims=None) -> BoundingBox:
    try:
        box = BoundingBox(*(round(float(v), 6) for v in (x1, y1, x2, y2)))
    except (TypeError, ValueError) as exc:
        raise AnnotationError(f"{sid}: malformed geometry {[x1, y1, x2, y2]}: {exc}") from exc
    if dims and all(dims) and not box.fits(dims):
        box = BoundingBox.clamped(*box.as_list(), dims)
    return box


def _xywh(sid, x, y, w, h, dims=None) -> BoundingBox:
    try:
        x, y, w, h = (float(v) for v in (x, y, w, h))
    except (TypeError, ValueError) as exc:
        raise AnnotationError(f"{sid}: malformed geometry {[x, y, w, h]}") from exc
    return _rect(sid, x, y, x + w, y + h, dims)


def _load_native(data, gt, aliases):
    for img in data["images"]:
        sid = img["source_id"]
        dims = (img.get("width"), img.get("height"))
        gt.checks.setdefault(sid, {})
        if all(dims):
            gt.dims[sid] = dims
        for name, ann in img.get("fields", {}).items():
            box = _rect(sid, *ann["box"], dims) if ann.get("box") is not None else None
            gt._put(sid, name, box, ann.get("text"), aliases)


def _load_coco(data, gt, aliases):
    cats = {c["id"]: c["name"] for c in data["categories"]}
    images = {}
    for img in data["images"]:
        sid = img.get("source_id") or Path(img["file_name"]).stem
        images[img["id"]] = sid
        gt.checks.setdefault(sid, {})
        if img.get("width") and img.get("height"):
            gt.dims[sid] = (img["width"], img["height"])
    for ann in data["annotations"]:
        sid = images[ann["image_id"]]
        try:
            x, y, w, h = ann["bbox"]
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{sid}: malformed bbox {ann.get('bbox')!r}") from exc
        box = _xywh(sid, x, y, w, h, gt.dims.get(sid))
        gt._put(sid, cats[ann["category_id"]], box, ann.get("text"), aliases)


_LABEL_KEYS = ("field", "label", "name", "type", "class")
_TEXT_KEYS = ("text", "transcription")


def _via_label(attrs: Mapping, label_attribute):
    if label_attribute:
        return attrs.get(label_attribute)
    for k in _LABEL_KEYS:
        if k in attrs:
            return attrs[k]
    rest = [v for k, v in attrs.items() if k not in _TEXT_KEYS]
    return rest[0] if len(rest) == 1 else None


def _load_via(data, gt, aliases, label_attribute):
    meta = data.get("_via_img_metadata", data)
    for item in meta.values():
        sid = Path(item["filename"]).stem
        gt.checks.setdefault(sid, {})
        regions = item.get("regions", [])
        if isinstance(regions, dict):  # VIA 1.x stores regions keyed by index
            regions = [regions[k] for k in sorted(regions, key=int)]
        for reg in regions:
            shape = reg.get("shape_attributes", {})
            attrs = reg.get("region_attributes", {})
            name = _via_label(attrs, label_attribute)
            if name is None:
                gt.report.unknown.append((sid, json.dumps(attrs, sort_keys=True)))
                continue
            if shape.get("name") != "rect":
                raise AnnotationError(f"{sid}: unsupported region shape {shape.get('name')!r}")
            try:
                x, y, w, h = (shape[k] for k in ("x", "y", "width", "height"))
                box = _xywh(sid, x, y, w, h)
            except KeyError as exc:
                raise AnnotationError(f"{sid}: rectangle lacks {exc}") from exc
            text = next((attrs[k] for k in _TEXT_KEYS if attrs.get(k)), None)
            gt._put(sid, name, box, text, aliases)


def load_ground_truth(path, mapping: Mapping[str, FieldKind] | None = None,
                      label_attribute: str | None = None) -> GroundTruth:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise AnnotationError(f"cannot read {path}: {exc}") from exc
    aliases = dict(DEFAULT_ALIASES)
    aliases.update({_key(k): FieldKind(v) for k, v in (mapping or {}).items()})
    gt = GroundTruth()
    if not isinstance(data, dict):
        raise AnnotationError(f"{path}: expected a JSON object")
    if data.get("format") == NATIVE_FORMAT:
        _load_native(data, gt, aliases)
    elif {"images", "annotations", "categories"} <= set(data):
        _load_coco(data, gt, aliases)
    elif "_via_img_metadata" in data or all(
            isinstance(v, dict) and "filename" in v for v in data.values()):
        _load_via(data, gt, aliases, label_attribute)
    else:
        raise AnnotationError(f"{path}: unrecognised annotation format")
    for sid, name in gt.report.unknown:
        log.warning("%s: skipped region with unknown field %r", sid, name)
    return gt


def load_transcriptions(path) -> dict[str, dict[FieldKind, str]]:
    """CSV with columns ``source_id, field, text``."""
    out: dict[str, dict[FieldKind, str]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = DEFAULT_ALIASES.get(_key(row["field"]))
            if kind is None:
                raise AnnotationError(f"{path}: unknown field {row['field']!r}")
            out.setdefault(row["source_id"], {})[kind] = row["text"]
    return out


def save_native(gt: GroundTruth, path) -> Path:
    images = []
    for sid in sorted(gt.checks):
        w, h = gt.dims.get(sid, (None, None))
        fields = {f.value: {"box": e.box.as_list() if e.box else None, "text": e.text}
                  for f, e in gt.checks[sid].items()}
        images.append({"source_id": sid, "width": w, "height": h, "fields": fields})
    path = Path(path)
    path.write_text(json.dumps({"format": NATIVE_FORMAT, "images": images}, indent=2) + "\n")
    return path


# -- dataset export --------------------------------------------------------

def export_coco(results: Mapping[str, CheckResult], image_ext: str = ".png") -> dict:
    """Detections as a COCO-style dataset; undetected fields are left out."""
    categories = [{"id": i, "name": f.value, "supercategory": "check_field"}
                  for i, f in enumerate(FIELD_ORDER, 1)]
    cat_id = {f: i for i, f in enumerate(FIELD_ORDER, 1)}
    images, annotations = [], []
    for img_id, sid in enumerate(sorted(results), 1):
        r = results[sid]
        images.append({"id": img_id, "file_name": sid + image_ext, "source_id": sid,
                       "width": r.width, "height": r.height})
        for f in FIELD_ORDER:
            fr = r.fields.get(f)
            if fr is None or fr.detection is None:
                continue
            b = fr.detection.box
            annotations.append({
                "id": len(annotations) + 1, "image_id": img_id, "category_id": cat_id[f],
                "bbox": [b.x1, b.y1, b.width, b.height], "area": b.area, "iscrowd": 0,
            })
    return {"info": {"description": "check field labels"}, "images": images,
            "annotations": annotations, "categories": categories}


# -- metrics ---------------------------------------------------------------

def _as_boxes(corpus) -> dict[str, dict[FieldKind, BoundingBox | None]]:
    if isinstance(corpus, GroundTruth):
        return corpus.boxes()
    return {sid: (v.boxes() if isinstance(v, CheckResult) else dict(v))
            for sid, v in corpus.items()}


@dataclass(frozen=True)
class LocalizationStats:
    miou: float
    acc_at_25: float
    acc_at_50: float
    n: int
    ious: tuple[float, ...] = ()


@dataclass
class DetectionReport:
    fields: dict[FieldKind, LocalizationStats]
    overall: LocalizationStats
    source_ids: list[str]

    def to_json(self) -> dict:
        row = lambda s: {"miou": s.miou, "acc@0.25": s.acc_at_25, "acc@0.5": s.acc_at_50, "n": s.n}
        return {"fields": {f.value: row(s) for f, s in self.fields.items()},
                "overall": row(self.overall), "source_ids": self.source_ids}


def _loc_stats(ious) -> LocalizationStats:
    n = len(ious)
    return LocalizationStats(
        fmean(ious), sum(v >= ACC_THRESHOLDS[0] for v in ious) / n,
        sum(v >= ACC_THRESHOLDS[1] for v in ious) / n, n, tuple(ious))


def field_ious(detections, truth) -> dict[FieldKind, list[float]]:
    det, gt = _as_boxes(detections), _as_boxes(truth)
    ids = sorted(set(det) & set(gt))
    if not ids:
        raise EvaluationError("detections and ground truth share no source_id")
    out: dict[FieldKind, list[float]] = {}
    for sid in ids:
        for f in FIELD_ORDER:
            t = gt[sid].get(f)
            if t is None:
                continue
            d = det[sid].get(f)
            out.setdefault(f, []).append(iou(d, t) if d is not None else 0.0)
    return out


def detection_metrics(detections, truth) -> DetectionReport:
    per_field = {f: _loc_stats(v) for f, v in field_ious(detections, truth).items()}
    stats = list(per_field.values())
    if stats:
        overall = LocalizationStats(fmean(s.miou for s in stats), fmean(s.acc_at_25 for s in stats),
                                    fmean(s.acc_at_50 for s in stats), sum(s.n for s in stats))
    else:
        overall = LocalizationStats(0.0, 0.0, 0.0, 0)
    ids = sorted(set(_as_boxes(detections)) & set(_as_boxes(truth)))
    return DetectionReport(per_field, overall, ids)


@dataclass(frozen=True)
class CerStats:
    mean: float
    std: float
    median: float
    total: int


@dataclass
class NerReport:
    fields: dict[FieldKind, CerStats]
    weighted_mean: float

    def to_json(self) -> dict:
        return {"fields": {f.value: vars(s) for f, s in self.fields.items()},
                "weighted_mean": self.weighted_mean}


def weighted_mean(stats: Mapping[FieldKind, CerStats]) -> float:
    total = sum(s.total for s in stats.values())
    return sum(s.mean * s.total for s in stats.values()) / total if total else 0.0


def ner_metrics(ner: Mapping[str, Mapping[FieldKind, str | None]],
                truth: Mapping[str, Mapping[FieldKind, str | None]],
                lowercase: bool = False) -> NerReport:
    samples: dict[FieldKind, list[float]] = {}
    for sid in sorted(set(ner) & set(truth)):
        for f in TEXT_FIELDS:
            ref = normalize(truth[sid].get(f) or "", lowercase)
            if not ref:
                continue  # field not on this check
            hyp = normalize(ner[sid].get(f) or "", lowercase)
            samples.setdefault(f, []).append(cer(ref, hyp).value)
    stats = {f: CerStats(fmean(v), pstdev(v), median(v), len(v))
             for f, v in samples.items()}
    return NerReport(stats, weighted_mean(stats))


@dataclass
class EvalReport:
    detection: DetectionReport | None = None
    ner: NerReport | None = None
    baseline: DetectionReport | None = None

    def to_json(self) -> dict:
        return {k: v.to_json() for k, v in
                (("detection", self.detection), ("baseline", self.baseline), ("ner", self.ner))
                if v is not None}


# -- tables ----------------------------------------------------------------

def format_ner_table(report: NerReport) -> str:
    lines = [f"{'Check field':<18}{'Mean':>8}{'Std':>8}{'Median':>8}{'Total':>7}",
             "-" * 49]
    for f in TEXT_FIELDS:
        s = report.fields.get(f)
        if s:
            lines.append(f"{f.title:<18}{s.mean:>8.3f}{s.std:>8.3f}{s.median:>8.3f}{s.total:>7d}")
    lines.append("-" * 49)
    lines.append(f"{'Weighted mean':<18}{report.weighted_mean:>8.3f}")
    return "\n".join(lines)


def format_detection_table(report: DetectionReport, baseline: DetectionReport | None = None,
                           names=("detector", "baseline")) -> str:
    reports = [report] + ([baseline] if baseline else [])
    head = f"{'Check field':<18}" + "".join(
        f"{'mIOU':>8}{'Acc@0.25':>10}{'Acc@0.5':>9}" + (" |" if i < len(reports) - 1 else "")
        for i in range(len(reports)))
    title = f"{'':<18}" + " | ".join(f"{n:^27}" for n in names[:len(reports)])
    lines = [title, head, "-" * len(head)]

    def cells(s):
        if s is None:
            return f"{'-':>8}{'-':>10}{'-':>9}"
        return f"{s.miou:>8.3f}{s.acc_at_25:>10.3f}{s.acc_at_50:>9.3f}"

    for f in FIELD_ORDER:
        if not any(f in r.fields for r in reports):
            continue
        lines.append(f"{f.title:<18}" + " |".join(cells(r.fields.get(f)) for r in reports))
    lines.append("-" * len(head))
    lines.append(f"{'Overall mean':<18}" + " |".join(cells(r.overall) for r in reports))
    return "\n".join(lines)
