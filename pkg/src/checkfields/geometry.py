"""Field vocabulary and pure box geometry.

Boxes are ``[x1, y1, x2, y2]`` pixel rectangles tagged with the coordinate
space they live in: the padded square the detector sees (``MODEL``) or the
original check image (``ORIGINAL``).  Mixing spaces is a programming error.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence


class FieldKind(str, Enum):
    SIGNATURE = "signature"
    DATE = "date"
    COURTESY_AMOUNT = "courtesy_amount"
    LEGAL_AMOUNT = "legal_amount"
    PAYER_NAME = "payer_name"
    BANK_NAME = "bank_name"
    MEMO = "memo"
    MICR = "micr"
    PAYEE_NAME = "payee_name"

    @property
    def module(self) -> int:
        """1 for the label-overlay loop, 2 for the OCR/CER route."""
        return 1 if self is FieldKind.SIGNATURE else 2

    @property
    def prompt(self) -> str:
        return FIELD_PROMPTS[self]

    @property
    def title(self) -> str:
        return _TITLES[self]


PROMPT_SIGNATURE = "signature"
PROMPT_CHECK_FIELDS = "check fields"
PROMPT_TEXTS = "texts"

FIELD_PROMPTS = {
    FieldKind.SIGNATURE: PROMPT_SIGNATURE,
    FieldKind.DATE: PROMPT_CHECK_FIELDS,
    FieldKind.COURTESY_AMOUNT: PROMPT_CHECK_FIELDS,
    FieldKind.LEGAL_AMOUNT: PROMPT_CHECK_FIELDS,
    FieldKind.MICR: PROMPT_CHECK_FIELDS,
    FieldKind.MEMO: PROMPT_CHECK_FIELDS,
    FieldKind.PAYER_NAME: PROMPT_TEXTS,
    FieldKind.PAYEE_NAME: PROMPT_TEXTS,
    FieldKind.BANK_NAME: PROMPT_TEXTS,
}

# Table order used by reports.
FIELD_ORDER = (
    FieldKind.SIGNATURE,
    FieldKind.DATE,
    FieldKind.COURTESY_AMOUNT,
    FieldKind.LEGAL_AMOUNT,
    FieldKind.PAYER_NAME,
    FieldKind.BANK_NAME,
    FieldKind.MEMO,
    FieldKind.MICR,
    FieldKind.PAYEE_NAME,
)
TEXT_FIELDS = tuple(f for f in FIELD_ORDER if f.module == 2)
PROMPT_GROUPS = (PROMPT_SIGNATURE, PROMPT_CHECK_FIELDS, PROMPT_TEXTS)

_TITLES = {
    FieldKind.SIGNATURE: "Signature",
    FieldKind.DATE: "Date",
    FieldKind.COURTESY_AMOUNT: "Courtesy amount",
    FieldKind.LEGAL_AMOUNT: "Legal amount",
    FieldKind.PAYER_NAME: "Payer name",
    FieldKind.BANK_NAME: "Bank name",
    FieldKind.MEMO: "Memo",
    FieldKind.MICR: "MICR",
    FieldKind.PAYEE_NAME: "Payee name",
}


class Space(str, Enum):
    MODEL = "model_space"
    ORIGINAL = "original_space"


class GeometryError(ValueError):
    """Invalid box, or boxes from different coordinate spaces."""


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    space: Space = Space.ORIGINAL

    def __post_init__(self):
        if min(self.x1, self.y1) < 0:
            raise GeometryError(f"negative coordinate in {self.as_list()}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise GeometryError(f"degenerate box {self.as_list()}")

    @classmethod
    def clamped(cls, x1, y1, x2, y2, dims, space=Space.ORIGINAL) -> "BoundingBox":
        """Clip raw coordinates to ``dims = (w, h)``; raises if nothing is left."""
        w, h = dims
        x1, x2 = sorted((min(max(float(x1), 0.0), w), min(max(float(x2), 0.0), w)))
        y1, y2 = sorted((min(max(float(y1), 0.0), h), min(max(float(y2), 0.0), h)))
        return cls(x1, y1, x2, y2, space)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def fits(self, dims) -> bool:
        return self.x2 <= dims[0] and self.y2 <= dims[1]


@dataclass(frozen=True)
class ScoredBox:
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"score {self.score} outside [0, 1]")


def make_labels(n: int) -> list[str]:
    return [f"O-{k}" for k in range(1, n + 1)]


@dataclass(frozen=True)
class CandidateSet:
    """Proposals for one check and one prompt, indexed ``O-1 .. O-n`` by score."""

    prompt: str
    boxes: tuple[ScoredBox, ...]
    labels: tuple[str, ...]
    image_dims: tuple[int, int]

    def __post_init__(self):
        if len(self.labels) != len(self.boxes):
            raise GeometryError("labels and boxes differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise GeometryError("duplicate candidate labels")
        scores = [b.score for b in self.boxes]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise GeometryError("candidates must be ordered by descending score")

    @classmethod
    def build(cls, prompt: str, boxes: Iterable[ScoredBox], image_dims) -> "CandidateSet":
        # stable sort keeps detector order among equal scores
        ordered = tuple(sorted(boxes, key=lambda b: -b.score))
        return cls(prompt, ordered, tuple(make_labels(len(ordered))), tuple(image_dims))

    def __len__(self) -> int:
        return len(self.boxes)

    def box_for(self, label: str) -> BoundingBox:
        return self.boxes[self.labels.index(label)].box

    def index_of(self, label: str) -> int:
        return self.labels.index(label)

    def without(self, label: str) -> "CandidateSet":
        i = self.labels.index(label)
        return CandidateSet(
            self.prompt,
            self.boxes[:i] + self.boxes[i + 1:],
            self.labels[:i] + self.labels[i + 1:],
            self.image_dims,
        )

    def subset(self, labels: Sequence[str]) -> "CandidateSet":
        keep = set(labels)
        pairs = [(b, l) for b, l in zip(self.boxes, self.labels) if l in keep]
        return CandidateSet(self.prompt, tuple(b for b, _ in pairs),
                            tuple(l for _, l in pairs), self.image_dims)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if a.space != b.space:
        raise GeometryError(f"iou across spaces: {a.space.value} vs {b.space.value}")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(candidates: Sequence[ScoredBox], iou_threshold: float = 0.4) -> list[ScoredBox]:
    """Greedy hard suppression; a box is dropped when ``iou >= iou_threshold``."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    kept: list[ScoredBox] = []
    for cand in sorted(candidates, key=lambda c: -c.score):
        if all(iou(cand.box, k.box) < iou_threshold for k in kept):
            kept.append(cand)
    return kept


MAX_AREA_FRACTION = 0.25
MAX_SIDE_FRACTION = 0.30
MIN_SIDE_PX = 12.0


def size_filter(candidates: Sequence[ScoredBox], image_dims) -> list[ScoredBox]:
    """Drop boxes that are too large overall, too thin, or too long on a side."""
    w, h = image_dims
    if w <= 0 or h <= 0:
        raise ValueError(f"image dims must be positive, got {image_dims}")
    out = []
    for cand in candidates:
        b = cand.box
        if b.area > MAX_AREA_FRACTION * w * h:
            continue
        if b.width < MIN_SIDE_PX or b.height < MIN_SIDE_PX:
            continue
        if b.width > MAX_SIDE_FRACTION * w or b.height > MAX_SIDE_FRACTION * h:
            continue
        out.append(cand)
    return out


def micr_widen(box: BoundingBox, image_width: float, image_height: float | None = None) -> BoundingBox:
    """Keep the MICR line's vertical extent and stretch it across the check."""
    y1, y2 = box.y1, box.y2
    if image_height is not None:
        y1, y2 = min(y1, image_height), min(y2, image_height)
    return BoundingBox(0.0, y1, float(image_width), y2, box.space)
