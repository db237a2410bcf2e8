"""Finding the signature with an actor and an evaluator.

Run:  python demos/02_signature_loop.py [output_dir]

A synthetic check is rendered and a simulated pair of models answers from
its known layout.  On this check the actor first points at the payer name
and then the date; each is rejected, moves into memory and is no longer
offered, and the third pick passes.  The overlays the actor saw are saved
so you can look at them.
"""
import sys
from pathlib import Path

from checkfields import EngineConfig, detect_signature, propose
from checkfields.imaging import overlay_labels, render_single, save_png
from checkfields.synth import SceneBackend, scenes

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

scene = scenes()[1]
backend = SceneBackend([scene])
image = backend.scenes[scene.source_id][1]
print(scene.source_id, "-", scene.description)

candidates = propose(image, backend, "signature", EngineConfig())
print(f"{len(candidates)} labelled proposals for the 'signature' prompt")
save_png(overlay_labels(image, candidates), out / "signature_candidates.png")

outcome = detect_signature(image, candidates, backend)
for i, step in enumerate(outcome.transcript, 1):
    print(f"iteration {i}: offered {len(step.offered)} labels, memory {list(step.memory)}")
    print(f"    actor picked {step.label}; evaluator says {step.grade}"
          + (f" ({step.explanation})" if step.explanation else ""))

if outcome.found:
    det = outcome.detection
    print("signature:", det.selected_label, [round(v) for v in det.box.as_list()])
    save_png(render_single(image, det.box, det.selected_label), out / "signature_found.png")
else:
    print("no signature:", outcome.diagnostic)
print("images written to", out)
