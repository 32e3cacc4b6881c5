"""Field-by-field agreement between two audit modes on the same runs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .types import DiagnosticReport

logger = logging.getLogger(__name__)

STEP_FIELDS = ("vague", "over_broad", "fusion", "off_topic", "compound", "anchored",
               "hallucinated_term", "carry_drop", "contradiction_with_prev", "predicted_hop",
               "is_next_logical_hop")


def comparable_labels(r: DiagnosticReport) -> dict[str, object]:
    labels: dict[str, object] = {
        "missed_hops": tuple(r.coverage.missed_hops),
        "late_hits": tuple(r.coverage.late_hits),
        "calibration": r.final.calibration,
        "composition_failure": r.final.composition_failure,
        "distractor_latch": r.final.distractor_latch,
    }
    for q in r.queries:
        for f in STEP_FIELDS:
            labels[f"step{q.step}.{f}"] = getattr(q, f)
    return labels


def _field_group(key: str) -> str:
    return key.split(".", 1)[1] if key.startswith("step") else key


@dataclass
class AgreementMatrix:
    agree: dict[str, int] = field(default_factory=dict)
    total: dict[str, int] = field(default_factory=dict)
    disagreements: list[dict] = field(default_factory=list)

    def rate(self, name: str | None = None) -> float | None:
        if name is None:
            a, t = sum(self.agree.values()), sum(self.total.values())
        else:
            a, t = self.agree.get(name, 0), self.total.get(name, 0)
        return a / t if t else None

    def passes(self, threshold: float) -> bool:
        r = self.rate()
        return r is not None and r >= threshold

    def to_rows(self) -> list[dict]:
        return [
            {"field": f, "agree": self.agree[f], "total": self.total[f],
             "rate": round(self.agree[f] / self.total[f], 4)}
            for f in sorted(self.total)
        ]


def agreement_matrix(pairs: Iterable[tuple[DiagnosticReport, DiagnosticReport]]) -> AgreementMatrix:
    m = AgreementMatrix()
    for a, b in pairs:
        if a.run_id != b.run_id:
            raise ValueError(f"reports for different runs: {a.run_id} vs {b.run_id}")
        la, lb = comparable_labels(a), comparable_labels(b)
        for key in sorted(set(la) | set(lb)):
            group = _field_group(key)
            m.total[group] = m.total.get(group, 0) + 1
            va, vb = la.get(key), lb.get(key)
            if va == vb:
                m.agree[group] = m.agree.get(group, 0) + 1
            else:
                m.agree.setdefault(group, 0)
                m.disagreements.append({"run_id": a.run_id, "field": key, a.mode: va, b.mode: vb})
                logger.info("audit disagreement %s %s: %r vs %r", a.run_id, key, va, vb)
    return m
