"""End-to-end detection of all nine fields on one check."""
from __future__ import annotations

import logging
from pathlib import Path

from .backends import Backend, BackendError, VlmRequest
from .config import EngineConfig
from .geometry import (FIELD_ORDER, PROMPT_GROUPS, CandidateSet, FieldKind, GeometryError,
                       ScoredBox, TEXT_FIELDS, micr_widen, nms, size_filter)
from .imaging import CheckImage, OutOfContent, resize_pad, to_original
from .records import (ABSENT, DETECTED, ERROR, EXHAUSTED, UNDETECTED, CheckResult,
                      FieldDetection, FieldResult)
from .signature import detect_signature
from .textfields import (ReferenceSet, build_cer_matrix, filter_candidates, read_stack,
                         select_detection)

log = logging.getLogger(__name__)


def is_outage(exc: BaseException) -> bool:
    """Transport-level failures abort a run; everything else stays per-field."""
    return isinstance(exc, BackendError) and exc.retryable


def propose(image: CheckImage, backend: Backend, prompt: str,
            config: EngineConfig) -> CandidateSet:
    """Detector proposals for one prompt, post-processed into labelled candidates."""
    model_img, t = resize_pad(image)
    raw = backend.vlm_propose(VlmRequest(model_img, prompt, config.score_threshold,
                                         config.max_detections))
    kept = []
    for sb in nms(raw, config.nms_iou):
        try:
            kept.append(ScoredBox(to_original(sb.box, t, image.dims), sb.score))
        except (OutOfContent, GeometryError):
            continue
    return CandidateSet.build(prompt, size_filter(kept, image.dims), image.dims)


def detect_fields(image: CheckImage, backend: Backend, config: EngineConfig | None = None,
                  debug_dir=None) -> CheckResult:
    config = config or EngineConfig()
    results: dict[FieldKind, FieldResult] = {}

    def fail(fields, exc):
        if is_outage(exc):
            raise exc
        log.warning("%s: %s failed: %s", image.source_id,
                    ",".join(f.value for f in fields), exc)
        for f in fields:
            results[f] = FieldResult(f, ERROR, detail=f"{type(exc).__name__}: {exc}")

    groups: dict[str, CandidateSet] = {}
    group_errors: dict[str, BackendError] = {}
    for prompt in PROMPT_GROUPS:
        try:
            groups[prompt] = propose(image, backend, prompt, config)
        except BackendError as exc:
            if is_outage(exc):
                raise
            group_errors[prompt] = exc

    _run_signature(image, backend, config, groups, group_errors, results, fail, debug_dir)

    try:
        refs = ReferenceSet.from_ner(backend.mllm_ner(image.pixels, TEXT_FIELDS), config.lowercase)
    except BackendError as exc:
        fail(TEXT_FIELDS, exc)
        refs = None

    if refs is not None:
        for prompt in PROMPT_GROUPS[1:]:
            fields = [f for f in TEXT_FIELDS if f.prompt == prompt]
            if prompt in group_errors:
                fail(fields, group_errors[prompt])
                continue
            _run_text_group(image, backend, config, groups[prompt], fields, refs, results, fail)

    return CheckResult(image.source_id, image.width, image.height,
                       {f: results[f] for f in FIELD_ORDER},
                       dict(refs.entries) if refs is not None else {})


def _run_signature(image, backend, config, groups, group_errors, results, fail, debug_dir):
    f = FieldKind.SIGNATURE
    if f.prompt in group_errors:
        return fail([f], group_errors[f.prompt])
    cands = groups[f.prompt]
    path = Path(debug_dir) / f"{image.source_id}.signature.json" if debug_dir else None
    try:
        out = detect_signature(image, cands, backend, config.t_max, transcript_path=path)
    except BackendError as exc:
        return fail([f], exc)
    if out.found:
        results[f] = FieldResult(f, DETECTED, out.detection)
    elif config.signature_fallback and len(cands):
        det = FieldDetection(f, cands.boxes[0].box, 1, out.iterations_used, cands.labels[0])
        results[f] = FieldResult(f, DETECTED, det, "fallback to highest-score proposal")
    else:
        results[f] = FieldResult(f, EXHAUSTED, detail=out.diagnostic)


def _run_text_group(image, backend, config, cands, fields, refs, results, fail):
    wanted = [f for f in fields if refs.entries.get(f)]
    for f in fields:
        if f not in wanted:
            results[f] = FieldResult(f, ABSENT, detail="no reference text")
    if not wanted:
        return
    try:
        texts = read_stack(image, cands, backend, config.page_size, config.lowercase)
    except BackendError as exc:
        return fail(wanted, exc)
    matrix = build_cer_matrix(refs, texts, wanted)
    for f in wanted:
        survivors = filter_candidates(matrix[f], config.c_o)
        try:
            det = select_detection(image, f, survivors, cands, backend, config.t_max)
        except BackendError as exc:
            fail([f], exc)
            continue
        if det is None:
            detail = "no candidate below c_o" if not survivors else "evaluator rejected all survivors"
            results[f] = FieldResult(f, UNDETECTED, detail=detail)
            continue
        if f is FieldKind.MICR:
            det = FieldDetection(f, micr_widen(det.box, image.width, image.height), det.module,
                                 det.iterations, det.selected_label, det.cer)
        results[f] = FieldResult(f, DETECTED, det)
