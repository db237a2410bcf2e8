"""Synthetic checks with known layout, and a backend that answers from that layout.

:class:`SceneBackend` stands in for both models when the scene is known: it
emits authored proposals for the detector, reads crops by collecting the words
whose centres fall inside them, and grades a drawn box by its overlap with the
target field.  Wrapping it in a :class:`~checkfields.backends.RecordingBackend`
produces replay fixtures for the offline test suite (see :func:`build_fixtures`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .backends import (EVALUATE, NER, OCR_STACK, SELECT_LABEL, VLM_PROPOSE, Backend,
                       MissingFixture, RecordingBackend, ReplayScript, image_digest)
from .config import EngineConfig
from .geometry import (PROMPT_CHECK_FIELDS, PROMPT_GROUPS, PROMPT_SIGNATURE, PROMPT_TEXTS,
                       BoundingBox, FieldKind, iou)
from .imaging import CheckImage, _font, compose_stack, resize_pad, save_png
from .records import dump_json

PAPER = (246, 244, 236)
INK = (20, 20, 30)
SIGNATURE_INK = (20, 40, 120)


@dataclass
class Item:
    """A printed or handwritten run of text placed by hand on the check."""
    name: str
    text: str
    box: tuple[int, int, int, int]
    size: int = 18
    field: FieldKind | None = None
    ink: tuple = INK
    words: list[tuple[str, tuple[float, float, float, float]]] = dc_field(default_factory=list)


@dataclass
class Scene:
    source_id: str
    width: int
    height: int
    items: list[Item]
    proposals: dict[str, list[tuple[tuple[float, float, float, float], float]]]
    ner: dict[FieldKind, str | None]
    actor_picks: list[str] = dc_field(default_factory=list)  # item names, in order
    ocr_drop_once: set[str] = dc_field(default_factory=set)  # item names missing from first OCR reply
    description: str = ""

    def item(self, name: str) -> Item:
        return next(i for i in self.items if i.name == name)

    def field_item(self, kind: FieldKind) -> Item | None:
        return next((i for i in self.items if i.field is kind), None)

    def truth_box(self, kind: FieldKind) -> BoundingBox | None:
        it = self.field_item(kind)
        if it is None:
            return None
        if kind is FieldKind.MICR:
            return BoundingBox(0, it.box[1], self.width, it.box[3])
        return BoundingBox(*it.box)


def render(scene: Scene) -> CheckImage:
    im = Image.new("RGB", (scene.width, scene.height), PAPER)
    draw = ImageDraw.Draw(im)
    draw.rectangle([6, 6, scene.width - 7, scene.height - 7], outline=(90, 90, 90), width=3)
    for it in scene.items:
        font = _font(it.size)
        x = it.box[0] + 4
        asc = draw.textbbox((0, 0), "Ag", font=font)
        y = it.box[1] + ((it.box[3] - it.box[1]) - (asc[3] - asc[1])) // 2 - asc[1]
        it.words = []
        for word in it.text.split(" "):
            l, t, r, b = draw.textbbox((x, y), word, font=font)
            draw.text((x, y), word, fill=it.ink, font=font)
            it.words.append((word, (l, t, r, b)))
            x += draw.textlength(word + " ", font=font)
        wb = np.array([w[1] for w in it.words])
        if wb[:, 0].min() < it.box[0] or wb[:, 2].max() > it.box[2] or \
                wb[:, 1].min() < it.box[1] or wb[:, 3].max() > it.box[3]:
            raise ValueError(f"{scene.source_id}: text of {it.name} overflows its box")
        if it.field is FieldKind.SIGNATURE:
            # flourish under the name
            x1, y1, x2, y2 = it.box
            pts = [(x, y2 - 6 - 4 * np.sin((x - x1) / 9.0)) for x in range(x1 + 6, x2 - 6, 3)]
            draw.line(pts, fill=it.ink, width=2)
    return CheckImage(np.asarray(im).copy(), scene.source_id)


def read_region(scene: Scene, box: BoundingBox) -> str:
    """Words whose centres fall inside ``box``, in reading order."""
    hits = []
    for it in scene.items:
        for word, (l, t, r, b) in it.words:
            cx, cy = (l + r) / 2, (t + b) / 2
            if box.x1 <= cx <= box.x2 and box.y1 <= cy <= box.y2:
                hits.append((round(cy / 10), cx, word))
    return " ".join(w for _, _, w in sorted(hits))


class SceneBackend(Backend):
    """Both models, simulated from known scenes."""

    def __init__(self, scenes, config: EngineConfig | None = None, prompts=None):
        super().__init__(prompts)
        self.config = config or EngineConfig()
        self.scenes = {}
        self._by_digest = {}
        self._pages = {}
        for s in scenes:
            img = render(s)
            self.scenes[s.source_id] = (s, img)
            self._by_digest[image_digest(img.pixels)] = s.source_id
            self._by_digest[image_digest(resize_pad(img)[0])] = s.source_id
        self._cands = {}

    def candidates(self, source_id: str, prompt: str):
        from .pipeline import propose

        key = (source_id, prompt)
        if key not in self._cands:
            _, img = self.scenes[source_id]
            self._cands[key] = propose(img, self, prompt, self.config)
            for page in compose_stack(img, self._cands[key], self.config.page_size):
                self._pages[image_digest(page.image)] = (source_id, page)
        return self._cands[key]

    def _scene_for(self, pixels):
        sid = self._by_digest.get(image_digest(pixels))
        if sid is not None:
            return self.scenes[sid]
        # overlays: the clean check that differs in the fewest pixels
        best, best_diff = None, None
        for s, img in self.scenes.values():
            if img.pixels.shape != pixels.shape:
                continue
            diff = int(np.any(img.pixels != pixels, axis=2).sum())
            if best_diff is None or diff < best_diff:
                best, best_diff = (s, img), diff
        if best is None:
            raise MissingFixture("image does not belong to any known scene")
        return best

    def _drawn_box(self, scene, img, pixels) -> BoundingBox:
        changed = np.any(img.pixels != pixels, axis=2)
        best, best_frac = None, -1.0
        for prompt in PROMPT_GROUPS:
            for sb in self.candidates(scene.source_id, prompt).boxes:
                b = sb.box
                x1, y1 = int(round(b.x1)), int(round(b.y1))
                x2, y2 = int(round(b.x2)) - 1, int(round(b.y2)) - 1
                edge = np.concatenate([changed[y1, x1:x2 + 1], changed[y2, x1:x2 + 1],
                                       changed[y1:y2 + 1, x1], changed[y1:y2 + 1, x2]])
                frac = float(edge.mean())
                if frac > best_frac:
                    best, best_frac = b, frac
        return best

    def _call(self, kind, key, image, payload, attempt=0):
        if kind == VLM_PROPOSE:
            s, img = self._scene_for(image)
            _, t = resize_pad(img)
            dets = [{"box": [round(v * t.scale / t.model_dims[0], 7) for v in box], "score": score}
                    for box, score in s.proposals.get(key, [])]
            return {"detections": dets}
        if kind == NER:
            s, _ = self._scene_for(image)
            return {"fields": {f: s.ner.get(FieldKind(f)) for f in payload["fields"]}}
        if kind == OCR_STACK:
            sid, page = self._find_page(image)
            s, _ = self.scenes[sid]
            texts = {}
            for label, box in page.entries:
                if label not in payload["labels"]:
                    continue
                name = self._item_at(s, box)
                if attempt == 0 and name in s.ocr_drop_once:
                    continue
                texts[label] = read_region(s, box)
            return {"texts": texts}
        if kind == SELECT_LABEL:
            s, img = self._scene_for(image)
            cands = self.candidates(s.source_id, PROMPT_SIGNATURE)
            live = payload["live_labels"]
            target = FieldKind(key)
            for name in s.actor_picks + [s.field_item(target).name]:
                label = self._label_for(cands, s.item(name).box)
                if label in live:
                    return {"label": label}
            return {"label": live[0]}
        if kind == EVALUATE:
            s, img = self._scene_for(image)
            drawn = self._drawn_box(s, img, image)
            target = FieldKind(key)
            truth = BoundingBox(*s.field_item(target).box)
            if iou(drawn, truth) >= 0.5 or (target is FieldKind.MICR and _inside(drawn, truth) >= 0.8):
                return {"grade": "Pass", "explanation": f"the box encloses the {target.title.lower()}"}
            other = self._item_at(s, drawn)
            what = other.replace("_", " ") if other else "an empty region"
            return {"grade": "Fail",
                    "explanation": f"the box covers {what}, not the {target.title.lower()}"}
        raise ValueError(kind)

    def _find_page(self, pixels):
        for sid, _ in list(self.scenes.items()):
            for prompt in PROMPT_GROUPS:
                self.candidates(sid, prompt)
        try:
            return self._pages[image_digest(pixels)]
        except KeyError:
            raise MissingFixture("unknown stack page") from None

    @staticmethod
    def _label_for(cands, box):
        target = BoundingBox(*box)
        scored = [(iou(sb.box, target), l) for sb, l in zip(cands.boxes, cands.labels)]
        best = max(scored, default=(0.0, None))
        return best[1] if best[0] > 0.5 else None

    @staticmethod
    def _item_at(scene, box: BoundingBox):
        best, best_v = None, 0.0
        for it in scene.items:
            v = iou(box, BoundingBox(*it.box))
            if v > best_v:
                best, best_v = it.name, v
        return best


def _inside(box: BoundingBox, outer: BoundingBox) -> float:
    """Fraction of ``box`` that lies within ``outer``."""
    iw = min(box.x2, outer.x2) - max(box.x1, outer.x1)
    ih = min(box.y2, outer.y2) - max(box.y1, outer.y1)
    return max(iw, 0) * max(ih, 0) / box.area


# -- authored scenes -------------------------------------------------------

def _words_box(item: Item, i: int, j: int, pad: float = 2.0):
    ws = [w[1] for w in item.words[i:j]]
    return (min(w[0] for w in ws) - pad, min(w[1] for w in ws) - pad,
            max(w[2] for w in ws) + pad, max(w[3] for w in ws) + pad)


def _layout(payer, signer, payee, date, amount, legal, memo, bank, micr, number):
    F = FieldKind
    items = [
        Item("bank_name", bank, (40, 28, 360, 62), 24, F.BANK_NAME),
        Item("payer_name", payer, (40, 80, 260, 106), 18, F.PAYER_NAME),
        Item("payer_street", "12 ELM STREET", (40, 110, 230, 132), 14),
        Item("payer_city", "SPRINGFIELD, IL 62701", (40, 134, 300, 156), 14),
        Item("check_number", number, (1070, 28, 1150, 56), 18),
        Item("date_caption", "DATE", (760, 100, 822, 124), 14),
        Item("date", date, (830, 94, 1000, 126), 20, F.DATE),
        Item("pay_caption", "PAY TO THE ORDER OF", (40, 190, 240, 212), 13),
        Item("payee_name", payee, (250, 182, 560, 214), 20, F.PAYEE_NAME),
        Item("dollar_sign", "$", (900, 184, 922, 212), 20),
        Item("courtesy_amount", amount, (930, 180, 1090, 214), 22, F.COURTESY_AMOUNT),
        Item("legal_amount", legal, (60, 250, 420, 276), 15, F.LEGAL_AMOUNT),
        Item("dollars_caption", "DOLLARS", (1000, 252, 1100, 274), 14),
        Item("memo_caption", "MEMO", (40, 400, 104, 422), 14),
        Item("signature", signer, (760, 376, 1010, 434), 30, F.SIGNATURE, SIGNATURE_INK),
        Item("signature_caption", "AUTHORIZED SIGNATURE", (790, 438, 990, 458), 12),
        Item("bank_office", "MAIN OFFICE", (400, 32, 530, 54), 14),
        Item("fraction", "12-3456/7890", (1040, 60, 1170, 80), 13),
        Item("void_notice", "VOID AFTER 90 DAYS", (560, 32, 740, 52), 12),
        Item("micr", micr, (250, 476, 860, 506), 20, F.MICR),
    ]
    if memo:
        items.append(Item("memo", memo, (112, 394, 330, 424), 18, F.MEMO))
    return items


def _proposals(scene: Scene, rng: np.random.Generator, signature_rank: int | None):
    """Authored detector output for the three prompts.

    Every field gets an exact proposal; decorations, word fragments, a thin
    rule, a sliver and a page-sized box act as distractors for the filters.
    """
    items = {i.name: i for i in scene.items}
    junk = [((30, 226, 1150, 232), 0.3),      # printed rule: fails the height rule
            ((20, 20, 1180, 520), 0.25),      # whole cheque: fails the area rule
            ((500, 300, 508, 360), 0.2)]      # sliver: fails the width rule
    legal, payee, micr = items["legal_amount"], items["payee_name"], items["micr"]
    fragments = [_words_box(legal, 0, 2), _words_box(legal, len(legal.words) - 2, len(legal.words)),
                 _words_box(payee, 0, 1)]
    # the detector only catches the first part of the MICR line, at full line height
    micr_part = (_words_box(micr, 0, 2)[0], micr.box[1], _words_box(micr, 0, 2)[2], micr.box[3])

    def dup(box, d=3):  # near-duplicate, removed by NMS
        return (box[0] + d, box[1] + d, box[2] + d, box[3] + d)

    groups = {
        PROMPT_CHECK_FIELDS: ["date", "courtesy_amount", "legal_amount", "memo", "dollar_sign",
                              "date_caption", "memo_caption", "check_number", "dollars_caption",
                              "pay_caption"],
        PROMPT_TEXTS: ["payer_name", "payee_name", "bank_name", "payer_street", "payer_city",
                       "signature", "pay_caption", "memo"],
        PROMPT_SIGNATURE: [n for n in items if n != "micr"],
    }
    out = {}
    for prompt, names in groups.items():
        boxes = [items[n].box for n in names if n in items]
        boxes += fragments
        if prompt == PROMPT_CHECK_FIELDS:
            boxes.append(micr_part)
        scores = list(np.round(rng.uniform(0.02, 0.6, size=len(boxes)), 4))
        props = list(zip(boxes, scores))
        props += [(dup(b), round(s * 0.9, 4)) for b, s in props[:3]]
        props += junk
        props.append(((0, 0, 4, 4), 0.005))  # below the score threshold
        if prompt == PROMPT_SIGNATURE and signature_rank:
            # force the signature to rank ``signature_rank`` among kept boxes
            sig = items["signature"].box
            rest = sorted((p for p in props if p[0] != sig and p[1] >= 0.01
                           and p[0] not in [j[0] for j in junk]), key=lambda p: -p[1])
            rest = [p for p in rest if p[0] not in [dup(b) for b, _ in props[:3]]]
            above = rest[signature_rank - 2][1]
            below = rest[signature_rank - 1][1]
            props = [(b, (above + below) / 2 if b == sig else s) for b, s in props]
        out[prompt] = [(tuple(float(v) for v in b), float(s)) for b, s in props]
    return out


def scenes() -> list[Scene]:
    F = FieldKind
    specs = [
        dict(source_id="check_001", seed=1, signature_rank=None,
             description="all nine fields; the actor finds the signature at once",
             payer="JOHN Q. SMITH", signer="John Smith", payee="ACME SUPPLY CO.",
             date="03/14/2024", amount="1,250.00",
             legal="One thousand two hundred fifty and 00/100", memo="office supplies",
             bank="FIRST HARBOR BANK", micr="A123456789A 987654321C 1024", number="1024",
             ner_micr="A123456789A 987654321C 1024", actor_picks=[]),
        dict(source_id="check_002", seed=2, signature_rank=None,
             description="no memo; the actor errs twice before the signature passes; "
                         "one OCR reply omits a crop and is re-prompted",
             payer="PRIYA N. RAO", signer="Priya Rao", payee="CITY WATER DEPT",
             date="11/02/2023", amount="86.40", legal="Eighty six and 40/100", memo=None,
             bank="LAKESIDE CREDIT UNION", micr="A071000013A 4455667788C 0311", number="0311",
             ner_micr="A071000013A 4455667789C 0311",
             actor_picks=["payer_name", "date"], ocr_drop_once={"payee_name"}),
        dict(source_id="check_003", seed=3, signature_rank=20,
             description="signature ranked O-20 by the detector; the payer name and the "
                         "signature read alike, so the evaluator settles the payer name",
             payer="Mary Jones", signer="Mary Jones", payee="NORTHWIND TRADERS",
             date="07/04/2022", amount="3,075.19",
             legal="Three thousand seventy five and 19/100", memo="invoice 7731",
             bank="PIONEER SAVINGS BANK", micr="A026009593A 12003344C 5502", number="5502",
             ner_micr="A026009593A 12003344C 5502", actor_picks=[]),
    ]
    out = []
    for sp in specs:
        items = _layout(sp["payer"], sp["signer"], sp["payee"], sp["date"], sp["amount"],
                        sp["legal"], sp["memo"], sp["bank"], sp["micr"], sp["number"])
        sc = Scene(sp["source_id"], 1200, 540, items, {}, {}, sp["actor_picks"],
                   set(sp.get("ocr_drop_once", ())), sp["description"])
        render(sc)  # lays out word boxes
        sc.proposals = _proposals(sc, np.random.default_rng(sp["seed"]), sp["signature_rank"])
        sc.ner = {
            F.DATE: sp["date"], F.COURTESY_AMOUNT: sp["amount"], F.LEGAL_AMOUNT: sp["legal"],
            F.PAYER_NAME: sp["payer"], F.BANK_NAME: sp["bank"], F.MEMO: sp["memo"],
            F.MICR: sp["ner_micr"], F.PAYEE_NAME: sp["payee"],
        }
        out.append(sc)
    return out


def build_fixtures(out_dir, config: EngineConfig | None = None) -> Path:
    """Write images, ground truth, expected boxes and recorded replay scripts."""
    from .pipeline import detect_fields

    config = config or EngineConfig()
    out = Path(out_dir)
    for sub in ("images", "replay", "expected"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    all_scenes = scenes()
    sim = SceneBackend(all_scenes, config)
    truth = []
    for s in all_scenes:
        img = sim.scenes[s.source_id][1]
        save_png(img.pixels, out / "images" / f"{s.source_id}.png")
        script = ReplayScript(s.source_id, s.description)
        rec = RecordingBackend(sim, script, annotate=_note)
        detect_fields(img, rec, config)
        script.save(out / "replay" / f"{s.source_id}.json")
        expected = {f.value: (s.truth_box(f).as_list() if s.truth_box(f) else None)
                    for f in FieldKind}
        dump_json({"source_id": s.source_id, "fields": expected},
                  out / "expected" / f"{s.source_id}.json")
        fields = {}
        for f in FieldKind:
            b = s.truth_box(f)
            if b is not None:
                it = s.field_item(f)
                fields[f.value] = {"box": b.as_list(), "text": it.text}
        truth.append({"source_id": s.source_id, "width": s.width, "height": s.height,
                      "fields": fields})
    dump_json({"format": "checkfields-annotations/1", "images": truth}, out / "truth.json")
    return out


def _note(kind, key, payload, resp) -> str:
    if kind == VLM_PROPOSE:
        return f"{len(resp['detections'])} proposals for prompt {key!r}"
    if kind == SELECT_LABEL:
        return f"actor picks {resp['label']} for {key} (memory: {payload['memory']})"
    if kind == EVALUATE:
        return f"{resp['grade']}: {resp['explanation']}"
    if kind == OCR_STACK:
        return "OCR of " + ", ".join(payload["labels"])
    return "field extraction: " + json.dumps(resp["fields"], sort_keys=True)


if __name__ == "__main__":
    import sys

    print(build_fixtures(sys.argv[1] if len(sys.argv) > 1 else "fixtures"))
