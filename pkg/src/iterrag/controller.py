"""Iterative retrieval-reasoning controller.

One run: a mandatory retrieval with the question itself, then a planner that writes a
partial answer and either retrieves again or finalizes, under a fixed step budget. A
conservative composer writes the final answer from the curated evidence view only.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Sequence

from .corpus import Chunk
from .dataset import Question
from .gateway import CallTag, Completion, Gateway, GatewayError, Message, ModelConfig, PriceTable
from .index import DEFAULT_K, ScoredChunk, VectorIndex
from .prompting import extract_final_answer, load_prompt

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 5
HISTORY_PER_STEP = 2
RUN_SCHEMA_VERSION = 1

VOLUNTARY = "voluntary"
FORCED_BUDGET = "forced_budget"
PROTOCOL_VIOLATION = "protocol_violation"
RUN_FAILED = "failed"

_REPROMPT = (
    "Your reply did not follow the required format. Reply again with a line "
    "'PARTIAL ANSWER: ...' followed by either 'ACTION: FINALIZE' or "
    "'ACTION: RETRIEVE' and a line 'QUERY: ...'."
)


@dataclass
class StepRecord:
    step: int
    query: str
    retrieved: list[ScoredChunk]
    partial_answer: str = ""
    input_tokens: int = 0
    output_tokens: int = 0
    reasoning_tokens: int = 0
    protocol_violation: bool = False

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "query": self.query,
            "retrieved": [r.ref() for r in self.retrieved],
            "partial_answer": self.partial_answer,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "reasoning_tokens": self.reasoning_tokens,
            "protocol_violation": self.protocol_violation,
        }

    @classmethod
    def from_dict(cls, d: dict, chunks: dict[str, Chunk] | None = None) -> "StepRecord":
        chunks = chunks or {}
        retrieved = []
        for r in d["retrieved"]:
            c = chunks.get(r["chunk_id"]) or Chunk(r["chunk_id"], r["doc_id"], 0, 0, "")
            retrieved.append(ScoredChunk(c, float(r["score"])))
        return cls(
            step=int(d["step"]),
            query=d["query"],
            retrieved=retrieved,
            partial_answer=d.get("partial_answer", ""),
            input_tokens=int(d.get("input_tokens", 0)),
            output_tokens=int(d.get("output_tokens", 0)),
            reasoning_tokens=int(d.get("reasoning_tokens", 0)),
            protocol_violation=bool(d.get("protocol_violation", False)),
        )


@dataclass
class RunRecord:
    question_id: str
    model_id: str
    steps: list[StepRecord] = field(default_factory=list)
    final_answer: str = ""
    composer_text: str = ""
    finalize_reason: str = VOLUNTARY
    cited_chunk_ids: list[str] = field(default_factory=list)
    citations_missing: bool = False
    unanswered: bool = False
    error: str | None = None
    input_tokens: int = 0
    output_tokens: int = 0
    reasoning_tokens: int = 0
    cost: str | None = None
    duration_ms: float = 0.0

    @property
    def run_id(self) -> str:
        return f"{self.model_id}::{self.question_id}"

    @property
    def finalized_step(self) -> int:
        return len(self.steps)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return {
            "schema_version": RUN_SCHEMA_VERSION,
            "run_id": self.run_id,
            "question_id": self.question_id,
            "model_id": self.model_id,
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
            "composer_text": self.composer_text,
            "finalized_step": self.finalized_step,
            "finalize_reason": self.finalize_reason,
            "cited_chunk_ids": list(self.cited_chunk_ids),
            "citations_missing": self.citations_missing,
            "unanswered": self.unanswered,
            "error": self.error,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "reasoning_tokens": self.reasoning_tokens,
            "cost": self.cost,
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_dict(cls, d: dict, chunks: dict[str, Chunk] | None = None) -> "RunRecord":
        if d.get("schema_version") != RUN_SCHEMA_VERSION:
            raise ValueError(f"unsupported run schema {d.get('schema_version')}")
        return cls(
            question_id=d["question_id"],
            model_id=d["model_id"],
            steps=[StepRecord.from_dict(s, chunks) for s in d["steps"]],
            final_answer=d["final_answer"],
            composer_text=d.get("composer_text", ""),
            finalize_reason=d["finalize_reason"],
            cited_chunk_ids=list(d.get("cited_chunk_ids", [])),
            citations_missing=bool(d.get("citations_missing", False)),
            unanswered=bool(d.get("unanswered", False)),
            error=d.get("error"),
            input_tokens=int(d.get("input_tokens", 0)),
            output_tokens=int(d.get("output_tokens", 0)),
            reasoning_tokens=int(d.get("reasoning_tokens", 0)),
            cost=d.get("cost"),
            duration_ms=float(d.get("duration_ms", 0.0)),
        )


@dataclass(frozen=True)
class ViewPassage:
    chunk: Chunk
    score: float
    step: int  # step where the passage first appeared

    @property
    def chunk_id(self) -> str:
        return self.chunk.chunk_id


@dataclass
class ContextView:
    question: str
    step: int
    budget: int
    current: list[ViewPassage]
    history: list[ViewPassage]
    prior_queries: list[str]
    prior_partials: list[str]
    query: str = ""  # the query that produced ``current``

    @property
    def passages(self) -> list[ViewPassage]:
        return self.history + self.current

    @property
    def chunk_ids(self) -> list[str]:
        return [p.chunk_id for p in self.passages]

    def __len__(self) -> int:
        return len(self.current) + len(self.history)

    def render(self) -> str:
        lines = [f"QUESTION: {self.question}", f"STEP: {self.step} of {self.budget}"]
        queries = self.prior_queries + ([self.query] if self.query else [])
        if queries:
            lines.append("QUERIES ISSUED SO FAR:")
            lines += [f"Step {i}: {q}" for i, q in enumerate(queries, start=1)]
        if self.prior_partials:
            lines.append("PREVIOUS PARTIAL ANSWERS:")
            lines += [f"Step {i}: {p}" for i, p in enumerate(self.prior_partials, start=1)]
        if self.history:
            lines.append("PASSAGES FROM EARLIER STEPS:")
            lines += [f"[{p.chunk_id}] (step {p.step}) {p.chunk.text}" for p in self.history]
        lines.append("PASSAGES FROM CURRENT STEP:")
        lines += [f"[{p.chunk_id}] {p.chunk.text}" for p in self.current]
        return "\n".join(lines)


def _top(retrieved: Sequence[ScoredChunk], n: int) -> list[ScoredChunk]:
    return sorted(retrieved, key=lambda r: (-r.score, r.chunk_id))[:n]


def curate_context(
    history: Sequence[StepRecord],
    current: StepRecord,
    *,
    question: str = "",
    budget: int = DEFAULT_BUDGET,
    per_step: int = HISTORY_PER_STEP,
) -> ContextView:
    """All passages of the current step plus the best ``per_step`` of each earlier step.

    A chunk seen more than once appears once, with the earliest step as provenance and the
    highest score seen.
    """
    earliest: dict[str, int] = {}
    for rec in history:
        for r in rec.retrieved:
            earliest.setdefault(r.chunk_id, rec.step)
    best: dict[str, float] = {}
    hist_order: list[str] = []
    chunks: dict[str, Chunk] = {}
    for rec in history:
        for r in _top(rec.retrieved, per_step):
            cid = r.chunk_id
            chunks[cid] = r.chunk
            if cid not in best:
                best[cid] = r.score
                hist_order.append(cid)
            else:
                best[cid] = max(best[cid], r.score)
    first_step = earliest
    current_ids = set()
    cur: list[ViewPassage] = []
    for r in _top(current.retrieved, len(current.retrieved)):
        if r.chunk_id in current_ids:
            continue
        current_ids.add(r.chunk_id)
        prov = min(first_step.get(r.chunk_id, current.step), current.step)
        score = max(r.score, best.get(r.chunk_id, r.score))
        cur.append(ViewPassage(r.chunk, score, prov))
    hist = [ViewPassage(chunks[c], best[c], first_step[c]) for c in hist_order if c not in current_ids]
    return ContextView(
        question=question,
        step=current.step,
        budget=budget,
        current=cur,
        history=hist,
        prior_queries=[h.query for h in history],
        prior_partials=[h.partial_answer for h in history],
        query=current.query,
    )


@dataclass
class PlannerAction:
    """Retrieve (``query`` set) or Finalize (``query`` is None)."""

    query: str | None
    partial_answer: str = ""
    protocol_violation: bool = False
    completions: list[Completion] = field(default_factory=list)

    @property
    def is_finalize(self) -> bool:
        return self.query is None

    @classmethod
    def retrieve(cls, query: str, **kw) -> "PlannerAction":
        if not query.strip():
            raise ValueError("Retrieve needs a non-empty query")
        return cls(query.strip(), **kw)

    @classmethod
    def finalize(cls, **kw) -> "PlannerAction":
        return cls(None, **kw)


_PARTIAL = re.compile(
    r"^\s*\**\s*partial answer\s*\**\s*:\s*(.*?)(?=^\s*\**\s*(?:action|query)\s*\**\s*:|\Z)",
    re.IGNORECASE | re.MULTILINE | re.DOTALL,
)
_ACTION = re.compile(r"^\s*\**\s*action\s*\**\s*:\s*\**\s*(retrieve|finalize)\b\**\s*[:\-]?\s*(.*)$",
                     re.IGNORECASE | re.MULTILINE)
_QUERY = re.compile(r"^\s*\**\s*query\s*\**\s*:\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_BARE = re.compile(r"^\s*(retrieve|finalize)\b\s*[:\-]?\s*(.*)$", re.IGNORECASE | re.DOTALL)


def parse_planner_reply(text: str) -> tuple[str, PlannerAction | None]:
    """Split a planner reply into (partial answer, action); action is None when malformed."""
    text = text or ""
    m = _PARTIAL.search(text)
    partial = " ".join(m.group(1).split()) if m else ""
    actions = _ACTION.findall(text)
    if not actions:
        body = text.strip()
        bare = _BARE.match(body)
        if not bare or partial:
            return partial, None
        actions = [(bare.group(1), bare.group(2))]
    kinds = {a[0].lower() for a in actions}
    if len(kinds) != 1:
        return partial, None
    kind, tail = actions[-1][0].lower(), actions[-1][1].strip()
    if kind == "finalize":
        return partial, PlannerAction.finalize(partial_answer=partial)
    q = _QUERY.findall(text)
    query = q[-1].strip() if q else tail
    if not query:
        return partial, None
    return partial, PlannerAction.retrieve(query, partial_answer=partial)


def plan_step(view: ContextView, gateway: Gateway, cfg: ModelConfig, tag: CallTag = CallTag()) -> PlannerAction:
    """Ask the planner for one action; one reprompt on malformed output, then forced Finalize."""
    messages = [Message("system", load_prompt("planner").text), Message("user", view.render())]
    first = gateway.complete(cfg, messages, tag)
    partial, action = parse_planner_reply(first.text)
    if action is not None:
        action.completions = [first]
        return action
    logger.info("planner reply malformed (%s step %d); reprompting", tag.question_id, view.step)
    messages += [Message("assistant", first.text), Message("user", _REPROMPT)]
    second = gateway.complete(cfg, messages, tag)
    partial2, action = parse_planner_reply(second.text)
    if action is not None:
        action.completions = [first, second]
        return action
    return PlannerAction.finalize(
        partial_answer=partial2 or partial, protocol_violation=True, completions=[first, second]
    )


_CITE = re.compile(r"\[([^\[\]]+)\]")


@dataclass
class Composition:
    answer: str
    text: str
    cited_chunk_ids: list[str]
    citations_missing: bool
    truncated: bool
    completion: Completion | None = None

    @property
    def unanswered(self) -> bool:
        return self.truncated or not self.answer


def parse_citations(text: str, known_ids: Sequence[str]) -> list[str]:
    known = set(known_ids)
    out: list[str] = []
    for group in _CITE.findall(text or ""):
        for part in re.split(r"[,;]\s*", group):
            cid = part.strip()
            if cid in known and cid not in out:
                out.append(cid)
    return out


def compose_answer(view: ContextView, question: Question, gateway: Gateway, cfg: ModelConfig,
                   tag: CallTag = CallTag()) -> Composition:
    if len(view) == 0:
        raise ValueError("composer needs a non-empty evidence view")
    passages = "\n".join(f"[{p.chunk_id}] {p.chunk.text}" for p in view.passages)
    user = f"QUESTION: {question.text}\nPASSAGES:\n{passages}"
    messages = [Message("system", load_prompt("composer").text), Message("user", user)]
    c = gateway.complete(cfg, messages, tag)
    cited = parse_citations(c.text, view.chunk_ids)
    return Composition(
        answer="" if c.truncated else extract_final_answer(c.text),
        text=c.text,
        cited_chunk_ids=cited,
        citations_missing=not cited,
        truncated=c.truncated,
        completion=c,
    )


def run_iterative(
    question: Question,
    index: VectorIndex,
    gateway: Gateway,
    chat_cfg: ModelConfig,
    embed_cfg: ModelConfig,
    *,
    budget: int = DEFAULT_BUDGET,
    k: int = DEFAULT_K,
    prices: PriceTable | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> RunRecord:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    t0 = clock()
    run = RunRecord(question.question_id, chat_cfg.model_id)
    usages: list[Completion] = []
    view: ContextView | None = None
    query = question.text
    try:
        for step in range(1, budget + 1):
            qvec = gateway.embed(embed_cfg, [query])[0]
            rec = StepRecord(step, query, index.search(qvec, k))
            view = curate_context(run.steps, rec, question=question.text, budget=budget)
            action = plan_step(view, gateway, chat_cfg, CallTag(question.question_id, step, "planner"))
            rec.partial_answer = action.partial_answer
            rec.protocol_violation = action.protocol_violation
            rec.input_tokens = sum(c.input_tokens for c in action.completions)
            rec.output_tokens = sum(c.output_tokens for c in action.completions)
            rec.reasoning_tokens = sum(c.reasoning_tokens for c in action.completions)
            usages += action.completions
            run.steps.append(rec)
            if action.is_finalize:
                run.finalize_reason = PROTOCOL_VIOLATION if action.protocol_violation else VOLUNTARY
                break
            if step == budget:
                run.finalize_reason = FORCED_BUDGET
                break
            query = action.query
        comp = compose_answer(view, question, gateway, chat_cfg,
                              CallTag(question.question_id, run.finalized_step, "composer"))
        usages.append(comp.completion)
        run.final_answer = comp.answer
        run.composer_text = comp.text
        run.cited_chunk_ids = comp.cited_chunk_ids
        run.citations_missing = comp.citations_missing
        run.unanswered = comp.unanswered
    except GatewayError as exc:
        logger.warning("run %s failed at step %d: %s", run.run_id, len(run.steps), exc)
        run.error = f"{type(exc).__name__}: {exc}"
        run.unanswered = True
        run.final_answer = ""
        if run.finalize_reason == VOLUNTARY and not run.composer_text:
            run.finalize_reason = RUN_FAILED
    run.input_tokens = sum(c.input_tokens for c in usages)
    run.output_tokens = sum(c.output_tokens for c in usages)
    run.reasoning_tokens = sum(c.reasoning_tokens for c in usages)
    if prices is not None and chat_cfg.model_id in prices:
        run.cost = str(sum((prices.cost(c.model_id, c.input_tokens, c.output_tokens) for c in usages), Decimal(0)))
    run.duration_ms = round((clock() - t0) * 1000, 3)
    return run
