"""Scoring a run against hand-labelled boxes, and exporting a training set.

Run:  python demos/04_evaluation.py [output_dir]

The three synthetic checks shipped with the tests are processed offline from
their recorded model answers.  The results are compared with the labelled
boxes and transcriptions, and written out as a COCO-style dataset.
"""
import json
import sys
from pathlib import Path

from checkfields import detect_fields, load_image
from checkfields.backends import ReplayBackend
from checkfields.evaluation import (detection_metrics, export_coco, format_detection_table,
                                    format_ner_table, load_ground_truth, ner_metrics)

fixtures = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "synthetic"
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

backend = ReplayBackend.from_paths([fixtures / "replay"])
results = {}
for path in sorted((fixtures / "images").glob("*.png")):
    r = detect_fields(load_image(path), backend)
    results[r.source_id] = r
    found = sum(fr.detection is not None for fr in r.fields.values())
    print(f"{r.source_id}: {found}/9 fields located")

truth = load_ground_truth(fixtures / "truth.json")
print()
print(format_detection_table(detection_metrics(results, truth)))

# The NER texts kept with each result double as a transcription benchmark.
ner = ner_metrics({sid: r.references for sid, r in results.items()}, truth.texts())
print()
print(format_ner_table(ner))

coco = export_coco(results)
(out / "labels.json").write_text(json.dumps(coco, indent=2))
print(f"\n{len(coco['annotations'])} boxes written to {out / 'labels.json'}")
