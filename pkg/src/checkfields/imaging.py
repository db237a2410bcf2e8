"""Raster work: decoding, model-space letterboxing, crops, overlays and stacks.

All rasters are ``uint8`` arrays of shape ``(height, width, 3)``.  Rendering
uses Pillow's bundled font so output is reproducible for a given Pillow build.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont, UnidentifiedImageError

from .geometry import BoundingBox, CandidateSet, GeometryError, Space

MODEL_SIZE = 960
PAD_VALUE = 128
STACK_GUTTER = 64
STACK_DIVIDER = 4
STACK_PAGE_SIZE = 7
LABEL_FONT_FLOOR = 10
LABEL_FONT_CEIL = 40

# Outline colours cycle in candidate order.
PALETTE = (
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (128, 128, 0),
)


class ImageError(ValueError):
    """Unreadable or empty image."""


class OutOfContent(ValueError):
    """A model-space box that lies entirely inside the padding."""


@dataclass(frozen=True, eq=False)
class CheckImage:
    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageError(f"expected an RGB raster, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError("image has a zero dimension")
        if px.dtype != np.uint8:
            raise ImageError(f"expected uint8 pixels, got {px.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height


def load_image(path, source_id: str | None = None) -> CheckImage:
    path = Path(path)
    try:
        with Image.open(path) as im:
            px = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    return CheckImage(px, source_id if source_id is not None else path.stem)


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def save_png(pixels: np.ndarray, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_png(pixels))
    return path


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


@dataclass(frozen=True)
class PadTransform:
    """Uniform scale followed by right/bottom padding to a square model input."""

    scale: float
    pad_right: int
    pad_bottom: int
    model_dims: tuple[int, int] = (MODEL_SIZE, MODEL_SIZE)

    @property
    def content_dims(self) -> tuple[int, int]:
        return self.model_dims[0] - self.pad_right, self.model_dims[1] - self.pad_bottom

    def forward(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale, y * self.scale

    def inverse(self, x: float, y: float) -> tuple[float, float]:
        return x / self.scale, y / self.scale


def resize_pad(image: CheckImage, size: int = MODEL_SIZE) -> tuple[np.ndarray, PadTransform]:
    w, h = image.dims
    scale = size / max(w, h)
    cw, ch = min(size, round(w * scale)), min(size, round(h * scale))
    if (cw, ch) == (w, h):
        content = image.pixels
    else:
        content = np.asarray(Image.fromarray(image.pixels).resize((cw, ch), Image.BILINEAR))
    out = np.full((size, size, 3), PAD_VALUE, dtype=np.uint8)
    out[:ch, :cw] = content
    return out, PadTransform(scale, size - cw, size - ch, (size, size))


def to_original(box: BoundingBox, t: PadTransform, original_dims) -> BoundingBox:
    if box.space != Space.MODEL:
        raise GeometryError("to_original expects a model-space box")
    cw, ch = t.content_dims
    if box.x1 >= cw or box.y1 >= ch:
        raise OutOfContent(f"box {box.as_list()} lies in the padding region")
    x1, y1 = t.inverse(box.x1, box.y1)
    x2, y2 = t.inverse(box.x2, box.y2)
    return BoundingBox.clamped(x1, y1, x2, y2, original_dims, Space.ORIGINAL)


def crop(image: CheckImage, box: BoundingBox) -> np.ndarray:
    x1, y1, x2, y2 = pixel_rect(box, image.dims)
    return image.pixels[y1:y2, x1:x2]


def pixel_rect(box: BoundingBox, dims) -> tuple[int, int, int, int]:
    """Smallest integer pixel rectangle covering ``box`` inside ``dims``."""
    w, h = dims
    x1, y1 = int(math.floor(box.x1)), int(math.floor(box.y1))
    x2, y2 = min(w, int(math.ceil(box.x2))), min(h, int(math.ceil(box.y2)))
    return x1, y1, max(x2, x1 + 1), max(y2, y1 + 1)


@lru_cache(maxsize=64)
def _font(size: int):
    return ImageFont.load_default(size=size)


def _label_font(box: BoundingBox):
    return _font(min(LABEL_FONT_CEIL, max(LABEL_FONT_FLOOR, int(box.height * 0.35))))


def _draw_labeled_box(draw: ImageDraw.ImageDraw, box: BoundingBox, label: str | None, colour):
    x1, y1 = round(box.x1), round(box.y1)
    x2, y2 = round(box.x2) - 1, round(box.y2) - 1
    draw.rectangle([x1, y1, max(x1, x2), max(y1, y2)], outline=colour, width=2)
    if label is None:
        return
    font = _label_font(box)
    left, top, right, bottom = draw.textbbox((0, 0), label, font=font)
    tw, th = right - left, bottom - top
    ty = y1 - th - 4 if y1 - th - 4 >= 0 else y1 + 2
    tx = x1
    draw.rectangle([tx, ty, tx + tw + 3, ty + th + 3], fill=colour)
    draw.text((tx + 2 - left, ty + 2 - top), label, fill=(255, 255, 255), font=font)


def overlay_labels(image: CheckImage, candidates: CandidateSet) -> np.ndarray:
    """Outline every candidate and tag it with its label at the top-left corner."""
    canvas = Image.fromarray(image.pixels.copy())
    draw = ImageDraw.Draw(canvas)
    for i, (cand, label) in enumerate(zip(candidates.boxes, candidates.labels)):
        _draw_labeled_box(draw, cand.box, label, PALETTE[i % len(PALETTE)])
    return np.asarray(canvas)


def render_single(image: CheckImage, box: BoundingBox, label: str | None = None) -> np.ndarray:
    """The evaluator's view: one box drawn on an otherwise clean check."""
    canvas = Image.fromarray(image.pixels.copy())
    _draw_labeled_box(ImageDraw.Draw(canvas), box, label, PALETTE[0])
    return np.asarray(canvas)


@dataclass(frozen=True, eq=False)
class StackPage:
    image: np.ndarray
    entries: tuple[tuple[str, BoundingBox], ...]
    offsets: tuple[int, ...]  # top row of each crop on the page

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.entries]


def _render_page(image: CheckImage, entries) -> StackPage:
    crops = [crop(image, box) for _, box in entries]
    width = STACK_GUTTER + max(c.shape[1] for c in crops)
    height = sum(c.shape[0] for c in crops) + STACK_DIVIDER * (len(crops) - 1)
    page = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(page)
    font = _font(14)
    offsets = []
    y = 0
    for (label, _), c in zip(entries, crops):
        if offsets:
            draw.rectangle([0, y - STACK_DIVIDER, width - 1, y - 1], fill=(0, 0, 0))
        offsets.append(y)
        page.paste(Image.fromarray(c), (STACK_GUTTER, y))
        left, top, right, bottom = draw.textbbox((0, 0), label, font=font)
        ty = y + max(0, (c.shape[0] - (bottom - top)) // 2) - top
        draw.text((4 - left, ty), label, fill=(0, 0, 0), font=font)
        y += c.shape[0] + STACK_DIVIDER
    return StackPage(np.asarray(page), tuple(entries), tuple(offsets))


def compose_stack(image: CheckImage, candidates: CandidateSet,
                  page_size: int = STACK_PAGE_SIZE) -> list[StackPage]:
    if page_size < 1:
        raise ValueError("page_size must be >= 1")
    entries = [(label, cand.box) for label, cand in zip(candidates.labels, candidates.boxes)]
    return [_render_page(image, entries[i:i + page_size])
            for i in range(0, len(entries), page_size)]


def draw_detections(image: CheckImage, boxes: Sequence[tuple[str, BoundingBox]]) -> np.ndarray:
    """Final annotated output: one outline plus field name per detection."""
    canvas = Image.fromarray(image.pixels.copy())
    draw = ImageDraw.Draw(canvas)
    for i, (name, box) in enumerate(boxes):
        _draw_labeled_box(draw, box, name, PALETTE[i % len(PALETTE)])
    return np.asarray(canvas)
