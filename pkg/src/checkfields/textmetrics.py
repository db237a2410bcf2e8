"""Levenshtein distance, character error rate and the shared text normalization."""
from __future__ import annotations

import re
from dataclasses import dataclass

_WS = re.compile(r"\s+")


class UndefinedCER(ValueError):
    """CER requested against an empty reference."""


@dataclass(frozen=True, order=True)
class CerScore:
    value: float
    n_ref: int

    def __float__(self) -> float:
        return self.value


def edit_distance(reference: str, hypothesis: str) -> int:
    """Minimum number of substitutions, deletions and insertions."""
    a, b = reference, hypothesis
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize(text: str, lowercase: bool = False) -> str:
    out = _WS.sub(" ", text).strip()
    return out.lower() if lowercase else out


def cer(reference: str, hypothesis: str) -> CerScore:
    if not reference:
        raise UndefinedCER("reference text is empty")
    return CerScore(edit_distance(reference, hypothesis) / len(reference), len(reference))
