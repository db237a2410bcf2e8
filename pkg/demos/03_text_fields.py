"""Locating printed and handwritten text fields by what they say.

Run:  python demos/03_text_fields.py [output_dir]

The language model reads the whole check once to get each field's text.
Every proposal is then cropped, the crops are stacked seven to a page and
transcribed, and each field keeps the crops whose transcription is close to
its reference text.  When several crops qualify the evaluator looks at each
one in place.
"""
import sys
from pathlib import Path

from checkfields import EngineConfig, FieldKind, build_cer_matrix, filter_candidates, propose
from checkfields.geometry import TEXT_FIELDS
from checkfields.imaging import compose_stack, save_png
from checkfields.synth import SceneBackend, scenes
from checkfields.textfields import ReferenceSet, read_stack, select_detection

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

scene = scenes()[2]
backend = SceneBackend([scene])
image = backend.scenes[scene.source_id][1]
print(scene.source_id, "-", scene.description)

refs = ReferenceSet.from_ner(backend.mllm_ner(image.pixels, TEXT_FIELDS))
for f in TEXT_FIELDS:
    print(f"  reference {f.value:16s} {refs.entries[f]!r}")

# The 'texts' prompt covers payer, payee and bank names.
cands = propose(image, backend, "texts", EngineConfig())
pages = compose_stack(image, cands)
print(f"\n{len(cands)} candidates on {len(pages)} stack pages")
for i, page in enumerate(pages):
    save_png(page.image, out / f"stack_page_{i + 1}.png")

texts = read_stack(image, cands, backend)
fields = [FieldKind.PAYER_NAME, FieldKind.PAYEE_NAME, FieldKind.BANK_NAME]
matrix = build_cer_matrix(refs, texts, fields)
for f in fields:
    survivors = filter_candidates(matrix[f], 0.8)
    shown = ", ".join(f"{l}={s.value:.2f} ({texts.entries[l]!r})" for l, s in survivors)
    print(f"\n{f.value}: survivors {shown or 'none'}")
    det = select_detection(image, f, survivors, cands, backend)
    if det is None:
        print("  not found")
    else:
        how = "only survivor" if det.iterations == 0 else f"{det.iterations} evaluator calls"
        print(f"  chose {det.selected_label} ({how}) at {[round(v) for v in det.box.as_list()]}")
