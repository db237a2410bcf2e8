"""JSON-over-HTTP transport.

Wire protocol (all ``POST``, JSON bodies, images as base64 PNG)::

    /v1/vlm/propose      {image_png_b64, prompt, score_threshold, max_detections}
                         -> {"detections": [{"box": [x1, y1, x2, y2], "score": s}, ...]}
                            box corners normalized to [0, 1] of the sent image
    /v1/mllm/select-label {image_png_b64, target_field, live_labels, memory, prompt, attempt}
                         -> {"label": "O-7"}
    /v1/mllm/evaluate    {image_png_b64, target_field, prompt, attempt}
                         -> {"grade": "Pass" | "Fail", "explanation": "..."}
    /v1/mllm/ocr-stack   {image_png_b64, labels, prompt, attempt}
                         -> {"texts": {"O-1": "...", ...}}
    /v1/mllm/ner         {image_png_b64, fields, prompt, attempt}
                         -> {"fields": {"date": "...", "memo": null, ...}}

Credentials are read from an environment variable and sent as a bearer token.
:func:`serve` exposes any :class:`Backend` over the same protocol, which is
how the client is tested and how replay fixtures can be served to other tools.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx

from ..imaging import decode_image, encode_png
from .base import (EVALUATE, NER, OCR_STACK, SELECT_LABEL, VLM_PROPOSE, Backend,
                   BackendError, BackendTimeout, MalformedResponse, ProtocolViolation,
                   TransportError)

log = logging.getLogger(__name__)

ROUTES = {
    VLM_PROPOSE: "/v1/vlm/propose",
    SELECT_LABEL: "/v1/mllm/select-label",
    EVALUATE: "/v1/mllm/evaluate",
    OCR_STACK: "/v1/mllm/ocr-stack",
    NER: "/v1/mllm/ner",
}
KIND_FOR_ROUTE = {v: k for k, v in ROUTES.items()}


def request_key(kind: str, payload: dict) -> str:
    if kind == VLM_PROPOSE:
        return payload["prompt"]
    if kind in (SELECT_LABEL, EVALUATE):
        return payload["target_field"]
    if kind == OCR_STACK:
        return "ocr"
    return ",".join(payload["fields"])


class HttpBackend(Backend):
    def __init__(self, vlm_url: str, mllm_url: str, api_key_env: str | None = None,
                 timeout: float = 60.0, deadline: float = 180.0, max_retries: int = 2,
                 max_in_flight: int = 4, prompts=None, transport=None, backoff: float = 0.5):
        super().__init__(prompts)
        self.urls = {k: (vlm_url if k == VLM_PROPOSE else mllm_url).rstrip("/") + r
                     for k, r in ROUTES.items()}
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(api_key_env) if api_key_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.timeout, self.deadline, self.max_retries = timeout, deadline, max_retries
        self.backoff = backoff
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(
            headers=headers, timeout=timeout, transport=transport,
            limits=httpx.Limits(max_connections=max_in_flight),
        )

    def close(self):
        self._client.close()

    def _call(self, kind, key, image, payload, attempt=0):
        body = dict(payload, attempt=attempt,
                    image_png_b64=base64.b64encode(encode_png(image)).decode("ascii"))
        data = json.dumps(body, sort_keys=True).encode()
        start = time.monotonic()
        last: BackendError | None = None
        for n in range(self.max_retries + 1):
            remaining = self.deadline - (time.monotonic() - start)
            if remaining <= 0:
                break
            try:
                with self._gate:
                    return self._post(kind, data, min(self.timeout, remaining))
            except BackendError as exc:
                if not exc.retryable:
                    raise
                last = exc
                log.warning("%s attempt %d failed: %s", kind, n + 1, exc)
                if n < self.max_retries:
                    time.sleep(min(self.backoff * 2 ** n, max(0.0, remaining)))
        raise last or BackendTimeout(f"{kind}: deadline of {self.deadline}s exhausted")

    def _post(self, kind, data, timeout):
        try:
            r = self._client.post(self.urls[kind], content=data, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"{kind}: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"{kind}: {exc}") from exc
        if r.status_code == 429 or r.status_code >= 500:
            raise TransportError(f"{kind}: HTTP {r.status_code}")
        if r.status_code >= 400:
            raise ProtocolViolation(f"{kind}: HTTP {r.status_code}: {r.text[:200]}")
        try:
            return r.json()
        except ValueError as exc:
            raise MalformedResponse(f"{kind}: response is not JSON") from exc


class _Handler(BaseHTTPRequestHandler):
    backend: Backend

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)

    def _reply(self, status, obj):
        raw = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_POST(self):
        kind = KIND_FOR_ROUTE.get(self.path)
        if kind is None:
            return self._reply(404, {"error": f"no route {self.path}"})
        try:
            body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
            image = decode_image(base64.b64decode(body.pop("image_png_b64")))
            attempt = int(body.pop("attempt", 0))
            key = request_key(kind, body)
        except (ValueError, KeyError, OSError) as exc:
            return self._reply(400, {"error": str(exc)})
        try:
            resp = self.backend._call(kind, key, image, body, attempt)
        except BackendError as exc:
            return self._reply(502 if exc.retryable else 422, {"error": str(exc)})
        self._reply(200, resp)


def serve(backend: Backend, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start a background server answering the wire protocol from ``backend``."""
    handler = type("BoundHandler", (_Handler,), {"backend": backend})
    server = ThreadingHTTPServer((host, port), handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
