"""Three-valued verdicts with margins, witnesses and a refinement trace."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Verdict(str, enum.Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if np.isnan(f):
            return "nan"
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, enum.Enum):
        return v.value
    if hasattr(v, "to_dict"):
        return v.to_dict()
    return v


@dataclass
class Certificate:
    verdict: Verdict
    margin: float = 0.0
    witnesses: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    note: str = ""

    def __post_init__(self):
        self.verdict = Verdict(self.verdict)
        if self.verdict is not Verdict.INCONCLUSIVE and not self.margin > 0:
            # a decided verdict always carries a positive margin
            self.margin = max(float(self.margin), np.finfo(float).tiny)
        if self.verdict is Verdict.INCONCLUSIVE and not self.trace:
            self.trace = [{"event": "inconclusive", "note": self.note}]

    @property
    def holds(self) -> bool:
        return self.verdict is Verdict.HOLDS

    @property
    def fails(self) -> bool:
        return self.verdict is Verdict.FAILS

    @property
    def inconclusive(self) -> bool:
        return self.verdict is Verdict.INCONCLUSIVE

    def to_dict(self) -> dict:
        d = {"verdict": self.verdict.value, "margin": _plain(self.margin),
             "witnesses": _plain(self.witnesses), "trace": _plain(self.trace)}
        if self.note:
            d["note"] = self.note
        return d


def holds(margin, witnesses=(), trace=(), note="") -> Certificate:
    return Certificate(Verdict.HOLDS, margin, list(witnesses), list(trace), note)


def fails(margin, witnesses=(), trace=(), note="") -> Certificate:
    return Certificate(Verdict.FAILS, margin, list(witnesses), list(trace), note)


def inconclusive(trace=(), witnesses=(), margin=0.0, note="") -> Certificate:
    return Certificate(Verdict.INCONCLUSIVE, margin, list(witnesses), list(trace), note)
