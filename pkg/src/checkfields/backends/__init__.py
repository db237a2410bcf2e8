from .base import (
    EVALUATE, KINDS, NER, OCR_STACK, SELECT_LABEL, VLM_PROPOSE,
    Backend, BackendError, BackendTimeout, MalformedResponse, MissingFixture,
    OcrIncomplete, ProtocolViolation, TransportError, Verdict, VlmRequest,
    DEFAULT_PROMPTS, fingerprint, image_digest,
)
from .replay import RecordingBackend, ReplayBackend, ReplayScript
from .http import HttpBackend, serve

# A local OCR engine for stack pages (e.g. Tesseract) would subclass Backend
# and answer OCR_STACK itself while delegating the other kinds; none ships here.

__all__ = [
    "EVALUATE", "KINDS", "NER", "OCR_STACK", "SELECT_LABEL", "VLM_PROPOSE",
    "Backend", "BackendError", "BackendTimeout", "MalformedResponse", "MissingFixture",
    "OcrIncomplete", "ProtocolViolation", "TransportError", "Verdict", "VlmRequest",
    "DEFAULT_PROMPTS", "fingerprint", "image_digest",
    "RecordingBackend", "ReplayBackend", "ReplayScript", "HttpBackend", "serve",
]
