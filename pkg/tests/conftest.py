from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from checkfields.backends import EVALUATE, SELECT_LABEL, ReplayScript
from checkfields.geometry import BoundingBox, CandidateSet, FieldKind, ScoredBox
from checkfields.imaging import CheckImage, overlay_labels, render_single

FIXTURES = Path(__file__).parent / "fixtures" / "synthetic"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def noise_image(w=320, h=160, seed=0, source_id="noise") -> CheckImage:
    rng = np.random.default_rng(seed)
    return CheckImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), source_id)


def candidates(boxes, dims=(320, 160), prompt="signature") -> CandidateSet:
    """Boxes given best-first; scores descend so labels come out O-1, O-2, ..."""
    n = len(boxes)
    scored = [ScoredBox(BoundingBox(*b), 0.9 - 0.8 * i / max(n, 1)) for i, b in enumerate(boxes)]
    return CandidateSet.build(prompt, scored, dims)


def grid_boxes(n, dims=(320, 160), size=(30, 14)):
    """n non-overlapping boxes laid out row by row."""
    w, h = dims
    cols = max(1, w // (size[0] + 4))
    out = []
    for i in range(n):
        r, c = divmod(i, cols)
        x, y = 2 + c * (size[0] + 4), 2 + r * (size[1] + 4)
        assert y + size[1] <= h, "grid does not fit"
        out.append((x, y, x + size[0], y + size[1]))
    return out


def author_loop(image, cands, steps, target=FieldKind.SIGNATURE, script=None) -> ReplayScript:
    """Script the actor/evaluator exchanges of a signature loop.

    ``steps`` is a list of ``(label, passed, explanation)``.  The live set and
    memory are tracked here independently of the library so that any
    divergence shows up as a missing fixture at replay time.
    """
    script = script or ReplayScript("authored")
    live = cands
    for label, passed, explanation in steps:
        if len(live) > 1:
            script.add(SELECT_LABEL, target.value, overlay_labels(image, live), {"label": label})
        script.add(EVALUATE, target.value, render_single(image, live.box_for(label)),
                   {"grade": "Pass" if passed else "Fail", "explanation": explanation})
        if not passed:
            live = live.without(label)
    return script


@st.composite
def boxes(draw, max_coord=500.0, min_side=0.5):
    x1 = draw(st.floats(0, max_coord - min_side, allow_nan=False))
    y1 = draw(st.floats(0, max_coord - min_side, allow_nan=False))
    x2 = draw(st.floats(x1 + min_side, max_coord, allow_nan=False))
    y2 = draw(st.floats(y1 + min_side, max_coord, allow_nan=False))
    return BoundingBox(x1, y1, x2, y2)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
