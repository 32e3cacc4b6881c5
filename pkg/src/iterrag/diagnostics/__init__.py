"""Per-run failure-mode auditors (deterministic and LLM-judge modes)."""

from __future__ import annotations

from ..controller import RunRecord
from ..dataset import Question
from . import deterministic as det
from .agreement import AgreementMatrix, agreement_matrix
from .deterministic import (
    audit_anchor_carry,
    audit_coverage,
    audit_final,
    audit_queries,
    classify_calibration,
    detect_distractor_latch,
)
from .judge import JudgeAuditor, judge_audit
from .text import ANCHOR_RULES_VERSION, extract_anchors
from .types import (
    CALIBRATION_STATES,
    DETERMINISTIC,
    JUDGE,
    MODES,
    OVERCONFIDENT,
    UNDERCONFIDENT,
    WELL_CALIBRATED,
    CoverageAudit,
    DiagnosticReport,
    FinalAudit,
    QueryAudit,
    Thresholds,
)


def audit_run(run: RunRecord, q: Question, verdict: bool, mode: str = DETERMINISTIC,
              judge: JudgeAuditor | None = None, thresholds: Thresholds = Thresholds()) -> DiagnosticReport:
    if run.question_id != q.question_id:
        raise ValueError(f"run {run.run_id} is not for question {q.question_id}")
    if not run.steps:
        raise ValueError(f"run {run.run_id} has no steps")
    if mode == DETERMINISTIC:
        cov = det.audit_coverage(run, q)
        queries = det.audit_queries(run, q, cov)
        final = det.audit_final(run, q, verdict, cov, thresholds)
        divergence: list[str] = []
    elif mode == JUDGE:
        if judge is None:
            raise ValueError("judge mode needs a JudgeAuditor")
        cov, queries, final, divergence = judge_audit(judge, run, q, verdict)
    else:
        raise ValueError(f"unknown auditor mode {mode!r}")
    return DiagnosticReport(
        run_id=run.run_id,
        question_id=q.question_id,
        model_id=run.model_id,
        mode=mode,
        verdict=bool(verdict),
        num_hops=q.num_hops,
        finalized_step=run.finalized_step,
        coverage=cov,
        queries=queries,
        final=final,
        divergence=divergence,
    )


__all__ = [
    "ANCHOR_RULES_VERSION", "AgreementMatrix", "CALIBRATION_STATES", "CoverageAudit", "DETERMINISTIC",
    "DiagnosticReport", "FinalAudit", "JUDGE", "JudgeAuditor", "MODES", "OVERCONFIDENT", "QueryAudit",
    "Thresholds", "UNDERCONFIDENT", "WELL_CALIBRATED", "agreement_matrix", "audit_anchor_carry",
    "audit_coverage", "audit_final", "audit_queries", "audit_run", "classify_calibration",
    "detect_distractor_latch", "extract_anchors", "judge_audit",
]
