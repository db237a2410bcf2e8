"""Fixture-driven backends: deterministic replay and recording.

A replay file holds one scenario::

    {
      "format": "checkfields-replay/1",
      "scenario": "check_001",
      "description": "...",
      "entries": [
        {"fingerprint": "<sha256>", "kind": "mllm_evaluate", "key": "signature",
         "attempt": 0, "note": "free text for humans", "response": {...}}
      ]
    }

``response`` is the same body the HTTP service would return.  Lookups that
miss raise :class:`MissingFixture`; nothing is ever defaulted.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable

import numpy as np

from .base import Backend, KINDS, MissingFixture, fingerprint

FORMAT = "checkfields-replay/1"


class ReplayScript:
    """Mutable builder for replay entries; freeze into a :class:`ReplayBackend`."""

    def __init__(self, scenario: str = "", description: str = ""):
        self.scenario = scenario
        self.description = description
        self.entries: dict[str, dict] = {}

    def add(self, kind: str, key: str, image: np.ndarray, response: dict,
            attempt: int = 0, note: str = "") -> str:
        if kind not in KINDS:
            raise ValueError(f"unknown request kind {kind!r}")
        fp = fingerprint(kind, key, image, attempt)
        entry = {"fingerprint": fp, "kind": kind, "key": key, "attempt": attempt,
                 "note": note, "response": response}
        old = self.entries.get(fp)
        if old is not None and old["response"] != response:
            raise ValueError(f"conflicting responses for {kind}/{key} ({fp[:12]})")
        self.entries[fp] = entry
        return fp

    def to_json(self) -> dict:
        return {"format": FORMAT, "scenario": self.scenario,
                "description": self.description,
                "entries": [self.entries[k] for k in self.entries]}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ReplayScript":
        data = json.loads(Path(path).read_text())
        if data.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        script = cls(data.get("scenario", ""), data.get("description", ""))
        for e in data["entries"]:
            fp = e["fingerprint"]
            if fp in script.entries:
                raise ValueError(f"{path}: duplicate fingerprint {fp[:12]}")
            script.entries[fp] = e
        return script


class ReplayBackend(Backend):
    """Answers strictly from recorded entries; immutable once built."""

    def __init__(self, scripts: Iterable[ReplayScript] | ReplayScript, prompts=None):
        super().__init__(prompts)
        if isinstance(scripts, ReplayScript):
            scripts = [scripts]
        table: dict[str, dict] = {}
        for s in scripts:
            for fp, e in s.entries.items():
                if fp in table and table[fp]["response"] != e["response"]:
                    raise ValueError(f"fixtures disagree on {e['kind']}/{e['key']} ({fp[:12]})")
                table[fp] = e
        self._table = MappingProxyType(table)

    @classmethod
    def from_paths(cls, paths, prompts=None) -> "ReplayBackend":
        files: list[Path] = []
        for p in map(Path, paths if isinstance(paths, (list, tuple)) else [paths]):
            files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
        return cls([ReplayScript.load(f) for f in files], prompts)

    def __len__(self) -> int:
        return len(self._table)

    def _call(self, kind, key, image, payload, attempt=0):
        fp = fingerprint(kind, key, image, attempt)
        try:
            entry = self._table[fp]
        except KeyError:
            raise MissingFixture(f"no fixture for {kind}/{key} attempt {attempt} ({fp[:12]})") from None
        # hand out a copy so callers cannot mutate the table
        return json.loads(json.dumps(entry["response"]))


class RecordingBackend(Backend):
    """Passes requests to ``inner`` and records every answer into a script."""

    def __init__(self, inner: Backend, script: ReplayScript | None = None,
                 annotate: Callable[[str, str, dict, dict], str] | None = None):
        super().__init__(inner.prompts)
        self.inner = inner
        self.script = script or ReplayScript()
        self.annotate = annotate
        self._lock = threading.Lock()

    def _call(self, kind, key, image, payload, attempt=0):
        resp = self.inner._call(kind, key, image, payload, attempt)
        note = self.annotate(kind, key, payload, resp) if self.annotate else ""
        with self._lock:
            self.script.add(kind, key, image, resp, attempt, note)
        return resp
