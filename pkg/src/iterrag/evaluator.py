"""Regime runners, the LLM-judge answer verifier and difficulty stratification."""

from __future__ import annotations

import logging
import re
import time
import unicodedata
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Iterable, Sequence

from .controller import RunRecord, run_iterative
from .dataset import Question
from .gateway import CallTag, Completion, Gateway, Message, ModelConfig, PriceTable
from .index import DEFAULT_K, VectorIndex
from .prompting import extract_final_answer, load_prompt
from .results import GOLD_CONTEXT, ITERATIVE, NO_CONTEXT, IncompleteMatrixError, RegimeResult, ResultMatrix

logger = logging.getLogger(__name__)

EASY, MEDIUM, HARD, UNLABELED = "easy", "medium", "hard", "unlabeled"
DIFFICULTY_LABELS = (EASY, MEDIUM, HARD)

_JUDGE_REPROMPT = "Answer with exactly one word: true or false."


def _norm(s: str) -> str:
    return " ".join(unicodedata.normalize("NFKC", s).casefold().split())


@dataclass(frozen=True)
class Verdict:
    correct: bool
    needs_review: bool = False
    judged: bool = True

    def __bool__(self) -> bool:
        return self.correct


def parse_judge_token(text: str) -> bool | None:
    t = (text or "").strip().strip("*`'\" \n").lower()
    t = re.sub(r"^answer\s*:\s*", "", t).strip().rstrip(".").strip("*`'\" ")
    if t == "true":
        return True
    if t == "false":
        return False
    return None


def verifier_messages(expected: str, candidate: str, aliases: Sequence[str] = ()) -> list[Message]:
    user = f"Expected: {expected}\nCandidate: {candidate}"
    if aliases:
        user += "\nKnown aliases of Expected: " + "; ".join(aliases)
    return [Message("system", load_prompt("verifier").text), Message("user", user)]


def verify_answer(
    expected: str,
    candidate: str,
    judge: Gateway,
    judge_cfg: ModelConfig,
    aliases: Sequence[str] = (),
    tag: CallTag = CallTag(role="judge"),
) -> Verdict:
    """Entity-equivalence verdict; gold always goes in the Expected slot."""
    if not expected or not expected.strip():
        raise ValueError("expected answer must be non-empty")
    if not candidate or not candidate.strip():
        return Verdict(False, judged=False)
    if _norm(candidate) == _norm(expected):
        return Verdict(True, judged=False)
    messages = verifier_messages(expected, candidate, aliases)
    first = judge.complete(judge_cfg, messages, tag)
    value = parse_judge_token(first.text)
    if value is None:
        messages += [Message("assistant", first.text), Message("user", _JUDGE_REPROMPT)]
        value = parse_judge_token(judge.complete(judge_cfg, messages, tag).text)
    if value is None:
        logger.warning("judge gave no verdict for %s; scored false, flagged for review", tag.question_id)
        return Verdict(False, needs_review=True)
    return Verdict(value)


def no_context_messages(q: Question) -> list[Message]:
    return [Message("system", load_prompt("no_context").text), Message("user", f"QUESTION: {q.text}")]


def gold_context_messages(q: Question) -> list[Message]:
    paragraphs = "\n\n".join(f"[Hop {h.index}]\n{h.gold_paragraph}" for h in q.hops)
    user = f"QUESTION: {q.text}\n\nSUPPORTING PARAGRAPHS:\n{paragraphs}"
    return [Message("system", load_prompt("gold_context").text), Message("user", user)]


def _cost(prices: PriceTable | None, usages: Iterable[Completion]) -> str | None:
    usages = list(usages)
    if prices is None or not usages or any(u.model_id not in prices for u in usages):
        return None
    return str(sum((prices.cost(u.model_id, u.input_tokens, u.output_tokens) for u in usages), Decimal(0)))


def _single_shot(regime: str, q: Question, messages: list[Message], gateway: Gateway, cfg: ModelConfig,
                 judge_cfg: ModelConfig, prices: PriceTable | None) -> RegimeResult:
    c = gateway.complete(cfg, messages, CallTag(q.question_id, 0, regime))
    answer = "" if c.truncated else extract_final_answer(c.text)
    unanswered = not answer
    verdict = verify_answer(q.gold_answer, answer, gateway, judge_cfg, q.aliases,
                            CallTag(q.question_id, 0, f"judge:{regime}:{cfg.model_id}"))
    return RegimeResult(
        question_id=q.question_id,
        model_id=cfg.model_id,
        regime=regime,
        answer=answer,
        correct=verdict.correct and not unanswered,
        unanswered=unanswered,
        input_tokens=c.input_tokens,
        output_tokens=c.output_tokens,
        cost=_cost(prices, [c]),
        needs_review=verdict.needs_review,
    )


def run_no_context(q: Question, gateway: Gateway, cfg: ModelConfig, judge_cfg: ModelConfig, *,
                   prices: PriceTable | None = None) -> RegimeResult:
    return _single_shot(NO_CONTEXT, q, no_context_messages(q), gateway, cfg, judge_cfg, prices)


def run_gold_context(q: Question, gateway: Gateway, cfg: ModelConfig, judge_cfg: ModelConfig, *,
                     prices: PriceTable | None = None) -> RegimeResult:
    return _single_shot(GOLD_CONTEXT, q, gold_context_messages(q), gateway, cfg, judge_cfg, prices)


def run_iterative_regime(
    q: Question,
    index: VectorIndex,
    gateway: Gateway,
    cfg: ModelConfig,
    embed_cfg: ModelConfig,
    judge_cfg: ModelConfig,
    *,
    budget: int = 5,
    k: int = DEFAULT_K,
    prices: PriceTable | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> tuple[RegimeResult, RunRecord]:
    run = run_iterative(q, index, gateway, cfg, embed_cfg, budget=budget, k=k, prices=prices, clock=clock)
    verdict = Verdict(False, judged=False)
    if not run.unanswered:
        verdict = verify_answer(q.gold_answer, run.final_answer, gateway, judge_cfg, q.aliases,
                                CallTag(q.question_id, 0, f"judge:{ITERATIVE}:{cfg.model_id}"))
    result = RegimeResult(
        question_id=q.question_id,
        model_id=cfg.model_id,
        regime=ITERATIVE,
        answer=run.final_answer,
        correct=verdict.correct and not run.unanswered,
        unanswered=run.unanswered,
        input_tokens=run.input_tokens,
        output_tokens=run.output_tokens,
        cost=run.cost,
        run_ref=run.run_id,
        needs_review=verdict.needs_review,
    )
    return result, run


@dataclass(frozen=True)
class DifficultyLabel:
    question_id: str
    wrong_count: int
    label: str


def difficulty_for(wrong_count: int) -> str:
    if wrong_count <= 2:
        return EASY
    if 5 <= wrong_count <= 7:
        return MEDIUM
    if 9 <= wrong_count <= 11:
        return HARD
    return UNLABELED


def stratify_difficulty(matrix: ResultMatrix, regime: str = ITERATIVE,
                        models: Sequence[str] | None = None) -> list[DifficultyLabel]:
    models = matrix.models if models is None else list(models)
    if not models:
        raise ValueError("difficulty needs at least one model")
    questions = matrix.questions
    gaps = matrix.missing([regime], models, questions)
    if gaps:
        raise IncompleteMatrixError(gaps)
    labels = []
    for q in questions:
        wrong = sum(not matrix.correct(m, q, regime) for m in models)
        labels.append(DifficultyLabel(q, wrong, difficulty_for(wrong)))
    return labels


def label_counts(labels: Iterable[DifficultyLabel]) -> dict[str, int]:
    counts = {EASY: 0, MEDIUM: 0, HARD: 0, UNLABELED: 0}
    for lab in labels:
        counts[lab.label] += 1
    return counts
