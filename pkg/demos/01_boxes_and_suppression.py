"""Boxes, overlap and the proposal clean-up.

Run:  python demos/01_boxes_and_suppression.py

A detector returns hundreds of overlapping boxes in its own 960x960 input
space.  Before any language model sees them they are de-duplicated, mapped
back onto the check and filtered by size.  This walks through each step on
hand-made numbers.
"""
import numpy as np

from checkfields import BoundingBox, CheckImage, ScoredBox, Space, iou, micr_widen, nms, size_filter
from checkfields.imaging import resize_pad, to_original

# Two boxes offset by one pixel overlap heavily; a third is far away.
a = ScoredBox(BoundingBox(0, 0, 10, 10), 0.9)
b = ScoredBox(BoundingBox(1, 1, 11, 11), 0.8)
c = ScoredBox(BoundingBox(50, 50, 60, 60), 0.5)
print("iou(a, b) =", round(iou(a.box, b.box), 4))   # 81 / 119
print("iou(a, c) =", iou(a.box, c.box))

# Greedy suppression keeps the best box and drops anything overlapping it
# at 0.4 or more.  b goes, a and c stay.
kept = nms([c, b, a], 0.4)
print("kept after suppression:", [k.box.as_list() for k in kept])

# The size filter removes boxes that cannot be a single field: more than a
# quarter of the check, thinner than 12 px, or longer than 30% of a side.
check = (1200, 540)
proposals = [
    ScoredBox(BoundingBox(20, 20, 1180, 520), 0.4),   # whole check
    ScoredBox(BoundingBox(30, 226, 1150, 232), 0.3),  # a printed rule
    ScoredBox(BoundingBox(830, 94, 1000, 126), 0.6),  # the date
]
for p in proposals:
    verdict = "kept" if size_filter([p], check) else "dropped"
    print(f"{p.box.as_list()}: {verdict}")

# The model sees a padded square.  A 1200x540 check is scaled by 0.8 and
# padded at the bottom; boxes map back by the inverse scale.
image = CheckImage(np.full((540, 1200, 3), 240, np.uint8), "blank")
square, t = resize_pad(image)
print("model input", square.shape, "scale", t.scale, "bottom padding", t.pad_bottom)
model_box = BoundingBox(664, 75.2, 800, 100.8, Space.MODEL)
print("back on the check:", to_original(model_box, t, image.dims).as_list())

# The MICR line is printed edge to edge, but detectors often find only part
# of it, so only its vertical extent is kept.
print("MICR widened:", micr_widen(BoundingBox(200, 476, 820, 506), 1200).as_list())
