"""LLM-judge auditors driven by the shipped auditor prompts.

Each auditor sends one JSON payload describing the run, parses a JSON object back and
validates it. A malformed reply gets one reprompt; after that the deterministic auditor's
answer is used and the field group is recorded as divergent.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from ..controller import RunRecord
from ..dataset import Question
from ..gateway import CallTag, Gateway, GatewayError, Message, ModelConfig
from ..prompting import load_prompt
from . import deterministic as det
from .types import (
    COMPOSITION_PATTERNS,
    EXCLUSIVE_FLAGS,
    OVERCONFIDENT,
    UNDERCONFIDENT,
    WELL_CALIBRATED,
    CoverageAudit,
    FinalAudit,
    QueryAudit,
    Thresholds,
)

logger = logging.getLogger(__name__)

_REPROMPT = "Your reply was not valid JSON in the required schema. Reply with the JSON object only."
_OBJ = re.compile(r"\{.*\}", re.DOTALL)


class JudgeFormatError(ValueError):
    pass


def run_payload(run: RunRecord, q: Question) -> dict:
    return {
        "question": q.text,
        "num_hops": q.num_hops,
        "oracle_hops": [
            {"hop_index": h.index, "sub_question": h.sub_question, "hop_entity": h.entity,
             "aliases": list(h.aliases)}
            for h in q.hops
        ],
        "max_steps": max(len(run.steps), 1),
        "finalize_step": run.finalized_step,
        "steps": [
            {
                "step": s.step,
                "query": s.query,
                "partial_answer": s.partial_answer,
                "snippets": [{"chunk_id": r.chunk_id, "text": r.chunk.text} for r in s.retrieved],
            }
            for s in run.steps
        ],
    }


def parse_json_object(text: str) -> dict:
    m = _OBJ.search(text or "")
    if not m:
        raise JudgeFormatError("no JSON object in reply")
    try:
        obj = json.loads(m.group(0))
    except json.JSONDecodeError as exc:
        raise JudgeFormatError(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise JudgeFormatError("expected a JSON object")
    return obj


def _bool(d: dict, key: str) -> bool:
    v = d.get(key)
    if not isinstance(v, bool):
        raise JudgeFormatError(f"'{key}' must be a boolean")
    return v


def _opt_int(v) -> int | None:
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise JudgeFormatError(f"expected integer or null, got {v!r}")
    return v


def _unit(d: dict, key: str) -> float:
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
        raise JudgeFormatError(f"'{key}' must be a number in [0, 1]")
    return float(v)


@dataclass
class JudgeAuditor:
    gateway: Gateway
    cfg: ModelConfig
    thresholds: Thresholds = Thresholds()

    def _ask(self, prompt: str, payload: dict, tag: CallTag, parse):
        messages = [Message("system", prompt), Message("user", json.dumps(payload, ensure_ascii=False))]
        try:
            first = self.gateway.complete(self.cfg, messages, tag)
        except GatewayError as exc:
            logger.warning("auditor %s unavailable (%s); using deterministic labels", tag.role, exc)
            return None
        try:
            return parse(parse_json_object(first.text))
        except JudgeFormatError as exc:
            logger.info("auditor %s reply malformed (%s); reprompting", tag.role, exc)
        messages += [Message("assistant", first.text), Message("user", _REPROMPT)]
        try:
            second = self.gateway.complete(self.cfg, messages, tag)
        except GatewayError as exc:
            logger.warning("auditor %s unavailable (%s); using deterministic labels", tag.role, exc)
            return None
        try:
            return parse(parse_json_object(second.text))
        except JudgeFormatError as exc:
            logger.warning("auditor %s reply malformed twice (%s); using deterministic labels", tag.role, exc)
            return None

    # -- coverage ------------------------------------------------------------
    def coverage(self, run: RunRecord, q: Question) -> tuple[CoverageAudit | None, list[bool | None] | None]:
        def parse(d: dict):
            hops = {h.index for h in q.hops}
            missed = d.get("missed_hops")
            if not isinstance(missed, list) or not set(missed) <= hops:
                raise JudgeFormatError("missed_hops must list oracle hop indices")
            raw_first = d.get("first_hit_step") or {}
            if not isinstance(raw_first, dict):
                raise JudgeFormatError("first_hit_step must be an object")
            first = {h: _opt_int(raw_first.get(str(h))) for h in sorted(hops)}
            for h in missed:
                first[h] = None
            for h in hops:
                if first[h] is None and h not in missed:
                    raise JudgeFormatError(f"hop {h} has no first hit but is not missed")
            late = [h for h, s in first.items() if s is not None and s > h]
            carry: list[bool | None] = [None] * len(run.steps)
            for item in d.get("carry_drop") or []:
                step = _opt_int(item.get("step"))
                if step is not None and 2 <= step <= len(run.steps):
                    carry[step - 1] = _bool(item, "carry_drop")
            audit = CoverageAudit(first, sorted(missed), late, (q.num_hops - len(missed)) / q.num_hops)
            return audit, carry

        got = self._ask(load_prompt("auditor_coverage").text, run_payload(run, q),
                        CallTag(q.question_id, 0, f"audit_coverage:{run.model_id}"), parse)
        return got if got is not None else (None, None)

    # -- queries -------------------------------------------------------------
    def queries(self, run: RunRecord, q: Question, carry: list[bool | None]) -> tuple[list[QueryAudit] | None, bool | None]:
        def parse(d: dict):
            steps = d.get("steps")
            if not isinstance(steps, list) or len(steps) != len(run.steps):
                raise JudgeFormatError("one entry per step required")
            out = []
            for t, s in enumerate(steps, start=1):
                flags = {f: _bool(s, f) for f in EXCLUSIVE_FLAGS}
                # enforce exclusivity by the same precedence as the deterministic auditor
                first = next((f for f in EXCLUSIVE_FLAGS if flags[f]), None)
                flags = {f: f == first for f in EXCLUSIVE_FLAGS}
                out.append(QueryAudit(
                    step=t,
                    compound=_bool(s, "compound"),
                    anchored=_bool(s, "anchored") if t > 1 else False,
                    hallucinated_term=_bool(s, "hallucinated_term") if t > 1 else False,
                    carry_drop=carry[t - 1] if t > 1 else None,
                    contradiction_with_prev=_bool(s, "partial_contradiction_with_prev") if t > 1 else False,
                    predicted_hop=_opt_int(s.get("predicted_hop")),
                    is_next_logical_hop=_bool(s, "is_next_logical_hop"),
                    **flags,
                ))
            return out, _bool(d, "distractor_latch")

        got = self._ask(load_prompt("auditor_query").text, run_payload(run, q),
                        CallTag(q.question_id, 0, f"audit_query:{run.model_id}"), parse)
        return got if got is not None else (None, None)

    # -- final ---------------------------------------------------------------
    def final(self, run: RunRecord, q: Question, verdict: bool, latch: bool) -> FinalAudit | None:
        prompt = load_prompt("auditor_faithfulness").render(
            coverage_threshold=self.thresholds.coverage, sufficiency_threshold=self.thresholds.sufficiency
        )
        payload = run_payload(run, q) | {"expected_answer": q.gold_answer, "candidate": run.final_answer}

        def parse(d: dict):
            comp = _bool(d, "composition_failure")
            pattern = d.get("composition_pattern")
            if comp and pattern not in COMPOSITION_PATTERNS:
                raise JudgeFormatError("composition_pattern missing for a composition failure")
            if verdict:
                comp, pattern = False, None  # gated on an incorrect verdict
            if not comp:
                pattern = None
            over, under = _bool(d, "overconfident"), _bool(d, "underconfident")
            state = OVERCONFIDENT if over else UNDERCONFIDENT if under else WELL_CALIBRATED
            return FinalAudit(
                composition_failure=comp,
                composition_pattern=pattern,
                sufficiency_score=_unit(d, "sufficiency_score_est"),
                hop_coverage=_unit(d, "hop_coverage_est"),
                calibration=state,
                distractor_latch=latch,
                earliest_sufficient_step=_opt_int(d.get("earliest_sufficient_step")),
            )

        return self._ask(prompt, payload, CallTag(q.question_id, 0, f"audit_final:{run.model_id}"), parse)


def judge_audit(auditor: JudgeAuditor, run: RunRecord, q: Question, verdict: bool):
    """Run all three judge auditors, falling back per field group; returns (cov, queries, final, divergence)."""
    divergence: list[str] = []
    cov, carry = auditor.coverage(run, q)
    if cov is None:
        divergence.append("coverage")
        cov = det.audit_coverage(run, q)
        carry = det.audit_anchor_carry(run, q)
    queries, latch = auditor.queries(run, q, carry)
    if queries is None:
        divergence.append("queries")
        queries = det.audit_queries(run, q, cov)
        latch = det.detect_distractor_latch(run, q)
    final = auditor.final(run, q, verdict, latch)
    if final is None:
        divergence.append("final")
        final = det.audit_final(run, q, verdict, cov, auditor.thresholds)
    return cov, queries, final, divergence
