"""Deterministic string/pattern auditors over a recorded iterative run."""

from __future__ import annotations

import re
from collections import Counter
from typing import Sequence

from ..controller import RunRecord
from ..dataset import Question
from .text import (
    content_words,
    contains_form,
    extract_anchors,
    mentions_any,
    norm,
    similar,
    split_sentences,
)
from .types import (
    COMPOSITION_PATTERNS,
    OVERCONFIDENT,
    UNDERCONFIDENT,
    WELL_CALIBRATED,
    CoverageAudit,
    FinalAudit,
    QueryAudit,
    Thresholds,
)

SUPPORT_OVERLAP = 0.6

_VAGUE = re.compile(
    r"\b(?:learn|know|find out|tell me|read|something)\s+(?:more\s+)?about\b"
    r"|\bmore (?:information|details|info)\b|\bgeneral (?:information|background)\b"
    r"|\banything about\b|\bwhat is known\b"
)
_BROAD = re.compile(
    r"\b(?:everything|all aspects|all about|comprehensive|in general|overview|survey|various"
    r"|all (?:the )?(?:properties|information|details|types|uses))\b"
)
_CONJ = re.compile(r"\b(?:and|or)\b|;")


def step_snippets(run: RunRecord, step: int) -> list[str]:
    return [r.chunk.text for r in run.steps[step - 1].retrieved]


def snippets_through(run: RunRecord, step: int) -> list[str]:
    return [r.chunk.text for rec in run.steps[:step] for r in rec.retrieved]


def all_snippets(run: RunRecord) -> list[str]:
    return snippets_through(run, len(run.steps))


# ---- coverage ----------------------------------------------------------------

def audit_coverage(run: RunRecord, q: Question) -> CoverageAudit:
    if not q.hops:
        raise ValueError("question has no hops")
    first: dict[int, int | None] = {}
    for hop in q.hops:
        first[hop.index] = None
        for rec in run.steps:
            texts = [rec.query] + [r.chunk.text for r in rec.retrieved]
            if any(mentions_any(t, hop.surface_forms) for t in texts):
                first[hop.index] = rec.step
                break
    missed = [h for h, s in first.items() if s is None]
    late = [h for h, s in first.items() if s is not None and s > h]
    return CoverageAudit(first, missed, late, (q.num_hops - len(missed)) / q.num_hops)


def resolved_hops(coverage: CoverageAudit, step: int) -> int:
    """Hops 1..r whose first hit precedes ``step``."""
    r = 0
    for h in sorted(coverage.first_hit_step):
        s = coverage.first_hit_step[h]
        if s is None or s >= step:
            break
        r = h
    return r


# ---- anchors -----------------------------------------------------------------

def _entities(q: Question | None) -> list[str]:
    if q is None:
        return []
    return [f for h in q.hops for f in h.surface_forms]


def audit_anchor_carry(run: RunRecord, q: Question | None = None) -> list[bool | None]:
    """carry_drop per step; None at step 1 and where the previous partial has no anchors."""
    out: list[bool | None] = [None]
    for t in range(2, len(run.steps) + 1):
        anchors = extract_anchors(run.steps[t - 2].partial_answer, _entities(q))
        if not anchors:
            out.append(None)
            continue
        out.append(not any(contains_form(run.steps[t - 1].query, a) for a in anchors))
    return out[: len(run.steps)]


# ---- queries -----------------------------------------------------------------

def _predicted_hop(query: str, q: Question, resolved: int) -> int | None:
    named = [h.index for h in q.hops if mentions_any(query, h.surface_forms)]
    if named:
        cands = set(named) | {j + 1 for j in named if j <= resolved and j + 1 <= q.num_hops}
        open_ = sorted(c for c in cands if c > resolved)
        return open_[0] if open_ else max(named)
    words = content_words(query)
    best, best_overlap = None, 0
    for h in q.hops:
        ov = len(words & content_words(h.sub_question))
        if ov > best_overlap:
            best, best_overlap = h.index, ov
    return best


def _is_compound(query: str) -> bool:
    text = norm(query)
    parts = _CONJ.split(text)
    return len(parts) > 1 and sum(bool(content_words(p)) for p in parts) >= 2


def _contradicts(prev_partial: str, partial: str, entities: Sequence[str]) -> bool:
    text = norm(partial)
    for a in extract_anchors(prev_partial, entities):
        f = re.escape(norm(a))
        neg = (
            rf"(?:\bnot|\bno longer|\brather than|\binstead of|\bisn't)\s+(?:an?\s+|the\s+)?{f}(?![^\W_])"
            rf"|(?<![^\W_]){f}\s+(?:is|was)\s+(?:not|incorrect|wrong)\b"
        )
        if re.search(neg, text):
            return True
    return False


def audit_queries(run: RunRecord, q: Question, coverage: CoverageAudit | None = None) -> list[QueryAudit]:
    coverage = coverage or audit_coverage(run, q)
    entities = _entities(q)
    topic_words = content_words(" ".join([q.text] + [h.sub_question for h in q.hops] + entities))
    carry = audit_anchor_carry(run, q)
    audits = []
    for rec in run.steps:
        t, query = rec.step, rec.query
        nq = norm(query)
        named = {h.index for h in q.hops if mentions_any(query, h.surface_forms)}
        flags = dict(vague=False, off_topic=False, fusion=False, over_broad=False)
        if _VAGUE.search(nq):
            flags["vague"] = True
        elif not named and not (content_words(query) & topic_words):
            flags["off_topic"] = True
        elif len(named) >= 2:
            flags["fusion"] = True
        elif _BROAD.search(nq):
            flags["over_broad"] = True
        anchored = hallucinated = contradiction = False
        if t > 1:
            prev = run.steps[t - 2]
            prev_anchors = extract_anchors(prev.partial_answer, entities)
            anchored = any(contains_form(query, a) for a in prev_anchors)
            history = " \n ".join(
                [q.text]
                + [s.query for s in run.steps[: t - 1]]
                + [s.partial_answer for s in run.steps[: t - 1]]
                + snippets_through(run, t - 1)
            )
            hallucinated = any(not contains_form(history, a) for a in extract_anchors(query))
            contradiction = _contradicts(prev.partial_answer, rec.partial_answer, entities)
        resolved = resolved_hops(coverage, t)
        predicted = _predicted_hop(query, q, resolved)
        audits.append(QueryAudit(
            step=t,
            compound=_is_compound(query),
            anchored=anchored,
            hallucinated_term=hallucinated,
            carry_drop=carry[t - 1],
            contradiction_with_prev=contradiction,
            predicted_hop=predicted,
            is_next_logical_hop=predicted is not None and predicted == resolved + 1,
            **flags,
        ))
    return audits


# ---- distractor latch --------------------------------------------------------

def _distractor_terms(snippets: Sequence[str], oracle: set[str]) -> set[str]:
    per_snippet = [{w for w in content_words(s) if len(w) >= 4} for s in snippets]
    counts = Counter(w for ws in per_snippet for w in ws)
    out = set()
    for w, n in counts.items():
        if n < 2 or w in oracle:
            continue
        for o in oracle:
            if similar(w, o) and n > counts.get(o, 0):
                out.add(w)
                break
    return out


def detect_distractor_latch(run: RunRecord, q: Question) -> bool:
    """Same off-target look-alike term dominating retrieval on two consecutive steps."""
    oracle = {
        w for f in list(q.answer_forms) + _entities(q)
        for w in content_words(f) if len(w) >= 4
    }
    prev: set[str] = set()
    for t in range(1, len(run.steps) + 1):
        cur = _distractor_terms(step_snippets(run, t), oracle)
        if prev & cur:
            return True
        prev = cur
    return False


# ---- final answer ------------------------------------------------------------

def sufficiency(run: RunRecord) -> tuple[int, int]:
    """(supported, total) partial-answer sentences."""
    supported = total = 0
    for rec in run.steps:
        snippets = snippets_through(run, rec.step)
        for sent in split_sentences(rec.partial_answer):
            total += 1
            anchors = extract_anchors(sent)
            words = content_words(sent)
            for s in snippets:
                if all(contains_form(s, a) for a in anchors) and \
                        len(words & content_words(s)) >= SUPPORT_OVERLAP * len(words):
                    supported += 1
                    break
    return supported, total


def earliest_sufficient_step(run: RunRecord, q: Question, verdict: bool) -> int | None:
    answer = run.final_answer.strip().rstrip(".")
    if not answer:
        return None
    forms = [answer] + (list(q.answer_forms) if verdict else [])
    for t in range(1, len(run.steps) + 1):
        if any(mentions_any(s, forms) for s in step_snippets(run, t)):
            return t
    return None


def composition_pattern(run: RunRecord, q: Question, verdict: bool) -> str | None:
    answer = run.final_answer.strip()
    if verdict or not answer:
        return None
    evidence = all_snippets(run)
    if not any(mentions_any(s, q.answer_forms) for s in evidence):
        return None
    if mentions_any(answer, q.answer_forms):
        return "merged_entities"
    anchors = extract_anchors(answer)
    terms = anchors + [answer.rstrip(".")]
    if anchors or any(mentions_any(s, terms) for s in evidence):
        return "wrong_entity"
    return "vague_paraphrase"


def classify_calibration(
    finalized_step: int,
    num_hops: int,
    hop_coverage: float,
    sufficiency_score: float,
    earliest_sufficient: int | None = None,
    thresholds: Thresholds = Thresholds(),
) -> str:
    if not (0.0 <= hop_coverage <= 1.0 and 0.0 <= sufficiency_score <= 1.0):
        raise ValueError("coverage and sufficiency must lie in [0, 1]")
    if finalized_step < num_hops and (
        hop_coverage < thresholds.coverage or sufficiency_score < thresholds.sufficiency
    ):
        return OVERCONFIDENT
    if earliest_sufficient is not None and earliest_sufficient < finalized_step:
        return UNDERCONFIDENT
    return WELL_CALIBRATED


def audit_final(run: RunRecord, q: Question, verdict: bool, coverage: CoverageAudit | None = None,
                thresholds: Thresholds = Thresholds()) -> FinalAudit:
    coverage = coverage or audit_coverage(run, q)
    supported, total = sufficiency(run)
    s_hat = supported / total if total else 0.0
    earliest = earliest_sufficient_step(run, q, verdict)
    pattern = composition_pattern(run, q, verdict)
    assert pattern is None or pattern in COMPOSITION_PATTERNS
    return FinalAudit(
        composition_failure=pattern is not None,
        composition_pattern=pattern,
        sufficiency_score=s_hat,
        hop_coverage=coverage.hop_coverage,
        calibration=classify_calibration(run.finalized_step, q.num_hops, coverage.hop_coverage, s_hat,
                                         earliest, thresholds),
        distractor_latch=detect_distractor_latch(run, q),
        earliest_sufficient_step=earliest,
        supported_sentences=supported,
        total_sentences=total,
    )
