"""Per-field results and the per-check detection JSON.

Detection file layout::

    {"source_id": "check_001", "width": 1200, "height": 540,
     "fields": [{"kind": "date", "status": "detected", "box": [x1, y1, x2, y2],
                 "module": 2, "label": "O-4", "iterations": 0, "cer": 0.0,
                 "detail": ""}, ...],
     "references": {"date": "03/14/2024", "memo": null, ...}}

One entry per field kind, in report order.  ``box``, ``label`` and ``cer`` are
``null`` when the field was not detected.  ``references`` holds the field
texts the MLLM extracted from the whole check (empty if extraction failed).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .geometry import FIELD_ORDER, BoundingBox, FieldKind, Space

DETECTED = "detected"
UNDETECTED = "undetected"  # no candidate survived selection
ABSENT = "absent"          # no reference text, so the field was skipped
EXHAUSTED = "exhausted"    # signature loop ran out of candidates or iterations
ERROR = "error"
STATUSES = (DETECTED, UNDETECTED, ABSENT, EXHAUSTED, ERROR)


@dataclass(frozen=True)
class FieldDetection:
    field: FieldKind
    box: BoundingBox
    module: int
    iterations: int
    selected_label: str
    cer: float | None = None


@dataclass(frozen=True)
class FieldResult:
    field: FieldKind
    status: str
    detection: FieldDetection | None = None
    detail: str = ""

    def to_json(self) -> dict:
        d = self.detection
        return {
            "kind": self.field.value,
            "status": self.status,
            "box": [round(v, 3) for v in d.box.as_list()] if d else None,
            "module": d.module if d else self.field.module,
            "label": d.selected_label if d else None,
            "iterations": d.iterations if d else 0,
            "cer": None if d is None or d.cer is None else round(d.cer, 6),
            "detail": self.detail,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FieldResult":
        kind = FieldKind(obj["kind"])
        det = None
        if obj.get("box") is not None:
            det = FieldDetection(kind, BoundingBox(*obj["box"], Space.ORIGINAL),
                                 obj.get("module", kind.module), obj.get("iterations", 0),
                                 obj.get("label") or "", obj.get("cer"))
        return cls(kind, obj["status"], det, obj.get("detail", ""))


@dataclass(frozen=True)
class CheckResult:
    source_id: str
    width: int
    height: int
    fields: dict[FieldKind, FieldResult]
    references: dict[FieldKind, str | None] = dataclasses.field(default_factory=dict)

    def boxes(self) -> dict[FieldKind, BoundingBox | None]:
        return {k: (r.detection.box if r.detection else None) for k, r in self.fields.items()}

    def to_json(self) -> dict:
        return {
            "source_id": self.source_id,
            "width": self.width,
            "height": self.height,
            "fields": [self.fields[k].to_json() for k in FIELD_ORDER if k in self.fields],
            "references": {k.value: v for k, v in self.references.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CheckResult":
        fields = {}
        for f in obj["fields"]:
            r = FieldResult.from_json(f)
            fields[r.field] = r
        refs = {FieldKind(k): v for k, v in obj.get("references", {}).items()}
        return cls(obj["source_id"], obj.get("width", 0), obj.get("height", 0), fields, refs)


def dump_json(obj, path) -> Path:
    """Canonical JSON writer used for every artifact (stable bytes across runs)."""
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def load_detections(directory) -> dict[str, CheckResult]:
    out = {}
    for p in sorted(Path(directory).glob("*.json")):
        obj = json.loads(p.read_text())
        if isinstance(obj, dict) and "source_id" in obj and "fields" in obj:
            r = CheckResult.from_json(obj)
            out[r.source_id] = r
    return out
