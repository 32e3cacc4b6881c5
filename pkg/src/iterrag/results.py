"""Regime result cells and the model x question x regime result matrix."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

NO_CONTEXT = "no_context"
GOLD_CONTEXT = "gold_context"
ITERATIVE = "iterative"
REGIMES = (NO_CONTEXT, GOLD_CONTEXT, ITERATIVE)

MATRIX_COLUMNS = ("model_id", "question_id", "regime", "correct", "tokens_in", "tokens_out", "cost")


class IncompleteMatrixError(ValueError):
    def __init__(self, missing: Sequence[tuple[str, str, str]]):
        shown = ", ".join("/".join(m) for m in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        super().__init__(f"{len(missing)} missing cells: {shown}{more}")
        self.missing = list(missing)


@dataclass
class RegimeResult:
    question_id: str
    model_id: str
    regime: str
    answer: str = ""
    correct: bool = False
    unanswered: bool = False
    input_tokens: int = 0
    output_tokens: int = 0
    cost: str | None = None
    run_ref: str | None = None
    needs_review: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if (self.regime == ITERATIVE) != (self.run_ref is not None):
            raise ValueError("exactly the iterative regime carries a run_ref")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.model_id, self.question_id, self.regime)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeResult":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class Cell:
    correct: bool
    tokens_in: int = 0
    tokens_out: int = 0
    cost: str = ""


class ResultMatrix:
    """At most one cell per (model, question, regime)."""

    def __init__(self):
        self._cells: dict[tuple[str, str, str], Cell] = {}

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, key) -> bool:
        return key in self._cells

    def add(self, model_id: str, question_id: str, regime: str, correct: bool,
            tokens_in: int = 0, tokens_out: int = 0, cost: str | None = "") -> None:
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}")
        key = (model_id, question_id, regime)
        if key in self._cells:
            raise ValueError(f"duplicate cell {key}")
        self._cells[key] = Cell(bool(correct), int(tokens_in), int(tokens_out), cost or "")

    def add_result(self, r: RegimeResult) -> None:
        self.add(r.model_id, r.question_id, r.regime, r.correct, r.input_tokens, r.output_tokens, r.cost)

    @classmethod
    def from_results(cls, results: Iterable[RegimeResult]) -> "ResultMatrix":
        m = cls()
        for r in results:
            m.add_result(r)
        return m

    def get(self, model_id: str, question_id: str, regime: str) -> Cell | None:
        return self._cells.get((model_id, question_id, regime))

    def correct(self, model_id: str, question_id: str, regime: str) -> bool:
        cell = self._cells.get((model_id, question_id, regime))
        if cell is None:
            raise KeyError((model_id, question_id, regime))
        return cell.correct

    def items(self):
        return sorted(self._cells.items())

    @property
    def models(self) -> list[str]:
        return sorted({k[0] for k in self._cells})

    @property
    def questions(self) -> list[str]:
        return sorted({k[1] for k in self._cells})

    @property
    def regimes(self) -> list[str]:
        present = {k[2] for k in self._cells}
        return [r for r in REGIMES if r in present]

    def missing(self, regimes: Sequence[str], models: Sequence[str] | None = None,
                questions: Sequence[str] | None = None) -> list[tuple[str, str, str]]:
        models = self.models if models is None else models
        questions = self.questions if questions is None else questions
        return [
            (m, q, r)
            for m in models
            for q in questions
            for r in regimes
            if (m, q, r) not in self._cells
        ]

    def require(self, regimes: Sequence[str], models=None, questions=None) -> None:
        gaps = self.missing(regimes, models, questions)
        if gaps:
            raise IncompleteMatrixError(gaps)

    def has_regime(self, regime: str) -> bool:
        return regime in self.regimes

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MATRIX_COLUMNS)
        for (m, q, r), c in self.items():
            w.writerow([m, q, r, int(c.correct), c.tokens_in, c.tokens_out, c.cost])
        return buf.getvalue()

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load_csv(cls, path: str | Path) -> "ResultMatrix":
        m = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                m.add(row["model_id"], row["question_id"], row["regime"], row["correct"] in ("1", "True", "true"),
                      int(row["tokens_in"] or 0), int(row["tokens_out"] or 0), row.get("cost") or "")
        return m
