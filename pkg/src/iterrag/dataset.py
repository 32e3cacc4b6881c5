"""Multi-hop question records and their JSONL loader/validator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class DatasetFormatError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Hop:
    index: int
    sub_question: str
    entity: str
    gold_paragraph: str
    aliases: tuple[str, ...] = ()

    @property
    def surface_forms(self) -> tuple[str, ...]:
        return (self.entity, *self.aliases)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "sub_question": self.sub_question,
            "entity": self.entity,
            "gold_paragraph": self.gold_paragraph,
            "aliases": list(self.aliases),
        }


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    gold_answer: str
    hops: tuple[Hop, ...]
    aliases: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.hops:
            raise ValueError(f"{self.question_id}: at least one hop required")
        if [h.index for h in self.hops] != list(range(1, len(self.hops) + 1)):
            raise ValueError(f"{self.question_id}: hop indices must be 1..n in order")
        for h in self.hops:
            if not h.gold_paragraph.strip():
                raise ValueError(f"{self.question_id}: hop {h.index} has no gold paragraph")

    @property
    def num_hops(self) -> int:
        return len(self.hops)

    @property
    def answer_forms(self) -> tuple[str, ...]:
        return (self.gold_answer, *self.aliases)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "text": self.text,
            "gold_answer": self.gold_answer,
            "num_hops": self.num_hops,
            "hops": [h.to_dict() for h in self.hops],
            "aliases": list(self.aliases),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        hops = tuple(
            Hop(
                index=int(h["index"]),
                sub_question=str(h.get("sub_question", "")),
                entity=str(h.get("entity", h.get("answer", ""))),
                gold_paragraph=str(h["gold_paragraph"]),
                aliases=tuple(h.get("aliases") or ()),
            )
            for h in d["hops"]
        )
        q = cls(
            question_id=str(d["question_id"]),
            text=str(d.get("text", d.get("question", ""))),
            gold_answer=str(d["gold_answer"]),
            hops=hops,
            aliases=tuple(d.get("aliases") or ()),
        )
        if "num_hops" in d and int(d["num_hops"]) != q.num_hops:
            raise ValueError(f"{q.question_id}: num_hops={d['num_hops']} but {q.num_hops} hops given")
        return q


def _check_record(obj: object, line_no: int) -> Question:
    if not isinstance(obj, dict):
        raise DatasetFormatError(line_no, "expected a JSON object")
    for key in ("question_id", "gold_answer", "hops"):
        if key not in obj:
            raise DatasetFormatError(line_no, f"missing field '{key}'")
    if not str(obj["gold_answer"]).strip():
        raise DatasetFormatError(line_no, "empty gold_answer")
    if not isinstance(obj["hops"], list) or not 1 <= len(obj["hops"]) <= 4:
        raise DatasetFormatError(line_no, "hops must be a list of 1-4 items")
    for h in obj["hops"]:
        if not isinstance(h, dict) or "index" not in h or "gold_paragraph" not in h:
            raise DatasetFormatError(line_no, "each hop needs 'index' and 'gold_paragraph'")
        if not (h.get("entity") or h.get("answer")):
            raise DatasetFormatError(line_no, f"hop {h.get('index')} has no entity")
    try:
        return Question.from_dict(obj)
    except (ValueError, TypeError, KeyError) as exc:
        raise DatasetFormatError(line_no, str(exc)) from exc


def load_questions(path: str | Path) -> list[Question]:
    questions: list[Question] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(line_no, f"invalid JSON: {exc.msg}") from exc
            q = _check_record(obj, line_no)
            if q.question_id in seen:
                raise DatasetFormatError(line_no, f"duplicate question_id {q.question_id!r}")
            seen.add(q.question_id)
            questions.append(q)
    return questions


def write_questions(path: str | Path, questions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
