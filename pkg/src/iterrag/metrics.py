"""Aggregate metrics over the result matrix and per-run diagnostic reports.

Every percentage is carried as a ``Rate`` (numerator/denominator) so reports can show
where a number came from; an empty denominator yields an absent value, never 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from scipy import stats

from .diagnostics import CALIBRATION_STATES, DiagnosticReport
from .evaluator import EASY, HARD, MEDIUM, DifficultyLabel
from .results import GOLD_CONTEXT, ITERATIVE, NO_CONTEXT, REGIMES, IncompleteMatrixError, ResultMatrix

PCT_PLACES = 2
PP_PLACES = 1

PARAMETRIC = "parametric"
GOLD_DEPENDENT = "gold_dependent"
ITERATIVE_EXCLUSIVE = "iterative_exclusive"
NOT_SOLVED = "not_solved"
SOLVABILITY = (PARAMETRIC, GOLD_DEPENDENT, ITERATIVE_EXCLUSIVE, NOT_SOLVED)

IMPACT_FLAGS = ("coverage_gap", "overconfident", "distractor_latch", "late_hit", "carry_drop",
                "underconfident", "composition_failure")
DAMAGE_FLAGS = ("coverage_gap", "overconfident", "distractor_latch")

# named cohort filters, recorded in report manifests
COHORT_KNOWLEDGE_GAP = "knowledge_gap: wrong under no_context"
COHORT_KNOWN_MULTIHOP = "known_multihop: correct under no_context and num_hops > 1"

SUFFICIENCY_BANDS = ("low", "mid", "high")
COVERAGE_BANDS = ("low", "high")


def round_half_up(x: float | Decimal | None, places: int) -> float | None:
    if x is None:
        return None
    q = Decimal(1).scaleb(-places)
    return float(Decimal(str(x)).quantize(q, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class Rate:
    num: int
    den: int

    def __post_init__(self):
        if self.den < 0 or self.num < 0 or self.num > self.den:
            raise ValueError(f"invalid rate {self.num}/{self.den}")

    @property
    def percent(self) -> float | None:
        return None if self.den == 0 else 100.0 * self.num / self.den

    @property
    def fraction(self) -> float | None:
        return None if self.den == 0 else self.num / self.den

    def rounded(self, places: int = PCT_PLACES) -> float | None:
        if self.den == 0:
            return None
        return round_half_up(Decimal(100 * self.num) / Decimal(self.den), places)

    def to_dict(self) -> dict:
        return {"num": self.num, "den": self.den, "percent": self.rounded()}


def _require(matrix: ResultMatrix, regimes: Sequence[str]) -> tuple[list[str], list[str]]:
    models, questions = matrix.models, matrix.questions
    if not models or not questions:
        raise IncompleteMatrixError([])
    matrix.require(regimes, models, questions)
    return models, questions


# ---- accuracy ----------------------------------------------------------------

def accuracy_by_regime(matrix: ResultMatrix, regimes: Sequence[str] | None = None) -> dict[tuple[str, str], Rate]:
    regimes = list(regimes or matrix.regimes)
    models, questions = _require(matrix, regimes)
    return {
        (m, r): Rate(sum(matrix.correct(m, q, r) for q in questions), len(questions))
        for m in models
        for r in regimes
    }


def mean_output_tokens(matrix: ResultMatrix, regimes: Sequence[str] | None = None) -> dict[tuple[str, str], float]:
    regimes = list(regimes or matrix.regimes)
    models, questions = _require(matrix, regimes)
    return {
        (m, r): sum(matrix.get(m, q, r).tokens_out for q in questions) / len(questions)
        for m in models
        for r in regimes
    }


# ---- solvability and recoveries ----------------------------------------------

def classify_solvability(no_context: bool, gold: bool, iterative: bool) -> str:
    if no_context:
        return PARAMETRIC
    if gold:
        return GOLD_DEPENDENT
    if iterative:
        return ITERATIVE_EXCLUSIVE
    return NOT_SOLVED


def solvability_partition(matrix: ResultMatrix) -> dict[str, dict[str, Rate]]:
    models, questions = _require(matrix, REGIMES)
    out = {}
    for m in models:
        counts = dict.fromkeys(SOLVABILITY, 0)
        for q in questions:
            counts[classify_solvability(*(matrix.correct(m, q, r) for r in REGIMES))] += 1
        out[m] = {c: Rate(n, len(questions)) for c, n in counts.items()}
    return out


@dataclass(frozen=True)
class RecoveryStats:
    recoveries: int
    regressions: int

    @property
    def net_gain(self) -> int:
        return self.recoveries - self.regressions

    def to_dict(self) -> dict:
        return {"recoveries": self.recoveries, "regressions": self.regressions, "net_gain": self.net_gain}


def recoveries_regressions(matrix: ResultMatrix) -> dict[str, RecoveryStats]:
    models, questions = _require(matrix, (GOLD_CONTEXT, ITERATIVE))
    out = {}
    for m in models:
        rec = reg = 0
        for q in questions:
            g, it = matrix.correct(m, q, GOLD_CONTEXT), matrix.correct(m, q, ITERATIVE)
            rec += (not g) and it
            reg += g and not it
        out[m] = RecoveryStats(rec, reg)
    return out


# ---- parametric suppression ---------------------------------------------------

def psr_from_counts(suppressed: int, no_context_correct: int) -> Rate:
    return Rate(suppressed, no_context_correct)


def psr(matrix: ResultMatrix) -> dict[str, Rate]:
    models, questions = _require(matrix, (NO_CONTEXT, ITERATIVE))
    out = {}
    for m in models:
        known = [q for q in questions if matrix.correct(m, q, NO_CONTEXT)]
        out[m] = psr_from_counts(sum(not matrix.correct(m, q, ITERATIVE) for q in known), len(known))
    return out


# ---- procedural compliance ----------------------------------------------------

@dataclass(frozen=True)
class PCRStat:
    known: int
    effective: int
    ineffective: int
    non_compliant: int
    single_step_covered: int = 0

    def __post_init__(self):
        if self.effective + self.ineffective + self.non_compliant + self.single_step_covered != self.known:
            raise ValueError("PCR categories must partition the known cohort")

    @property
    def pcr(self) -> Rate:
        return Rate(self.effective + self.ineffective, self.known)

    @property
    def success(self) -> Rate:
        return Rate(self.effective, self.effective + self.ineffective)

    def to_dict(self) -> dict:
        return {
            "known": self.known,
            "effective": self.effective,
            "ineffective": self.ineffective,
            "non_compliant": self.non_compliant,
            "single_step_covered": self.single_step_covered,
            "pcr": self.pcr.to_dict(),
            "success_rate": {**self.success.to_dict(), "percent": self.success.rounded(PP_PLACES)},
            "cohort": COHORT_KNOWN_MULTIHOP,
        }


def pcr_from_counts(known: int, effective: int, ineffective: int, non_compliant: int) -> PCRStat:
    return PCRStat(known, effective, ineffective, non_compliant, known - effective - ineffective - non_compliant)


def compliance_category(steps: int, coverage_gap: bool) -> str:
    if steps >= 2:
        return "ineffective" if coverage_gap else "effective"
    return "non_compliant" if coverage_gap else "single_step_covered"


def pcr(matrix: ResultMatrix, num_hops: Mapping[str, int], run_steps: Mapping[tuple[str, str], int],
        coverage_gaps: Mapping[tuple[str, str], bool]) -> dict[str, PCRStat | None]:
    """Per model; ``run_steps``/``coverage_gaps`` are keyed by (model_id, question_id)."""
    models, questions = _require(matrix, (NO_CONTEXT,))
    out: dict[str, PCRStat | None] = {}
    for m in models:
        cohort = [q for q in questions if matrix.correct(m, q, NO_CONTEXT) and num_hops[q] > 1]
        if not cohort:
            out[m] = None
            continue
        counts = dict.fromkeys(("effective", "ineffective", "non_compliant", "single_step_covered"), 0)
        for q in cohort:
            counts[compliance_category(run_steps[(m, q)], coverage_gaps[(m, q)])] += 1
        out[m] = PCRStat(len(cohort), **counts)
    return out


# ---- conditional impact and damage -------------------------------------------

def damage_index(prevalence_pct: float, delta_pp: float) -> float:
    """Expected accuracy loss in pp per question: p (as %) x delta (pp) / 100."""
    return prevalence_pct * delta_pp / 100.0


@dataclass(frozen=True)
class ImpactStat:
    label: str
    flag: str
    with_flag: Rate  # accuracy when the flag is present
    without_flag: Rate

    @property
    def prevalence(self) -> Rate:
        return Rate(self.with_flag.den, self.with_flag.den + self.without_flag.den)

    @property
    def delta(self) -> float | None:
        a, b = self.without_flag.percent, self.with_flag.percent
        return None if a is None or b is None else a - b

    @property
    def damage(self) -> float | None:
        p = self.prevalence.percent
        if p is None:
            return None
        if self.with_flag.den == 0:
            return 0.0
        d = self.delta
        return None if d is None else damage_index(p, d)

    @property
    def reason(self) -> str | None:
        if self.with_flag.den + self.without_flag.den == 0:
            return "empty cohort"
        if self.with_flag.den == 0:
            return "flag never present"
        if self.without_flag.den == 0:
            return "flag always present"
        return None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "flag": self.flag,
            "cohort": COHORT_KNOWLEDGE_GAP,
            "accuracy_with": self.with_flag.to_dict(),
            "accuracy_without": self.without_flag.to_dict(),
            "prevalence": self.prevalence.to_dict(),
            "delta_pp": round_half_up(self.delta, PP_PLACES),
            "damage_pp": round_half_up(self.damage, PP_PLACES),
            "reason": self.reason,
        }


def impact_from_outcomes(outcomes: Iterable[tuple[bool, bool]], flag: str, label: str = "") -> ImpactStat:
    """``outcomes`` holds (correct, flag_present) pairs for the cohort."""
    w = wo = cw = cwo = 0
    for correct, present in outcomes:
        if present:
            w += 1
            cw += bool(correct)
        else:
            wo += 1
            cwo += bool(correct)
    return ImpactStat(label, flag, Rate(cw, w), Rate(cwo, wo))


def conditional_impact(matrix: ResultMatrix, reports: Iterable[DiagnosticReport], flag: str,
                       model_id: str | None = None) -> ImpactStat:
    """Impact of ``flag`` on iterative accuracy over the knowledge-gap cohort.

    With ``model_id`` None the cohort pools every model's knowledge-gap questions.
    """
    if flag not in IMPACT_FLAGS:
        raise ValueError(f"unknown flag {flag!r}")
    outcomes = []
    for r in reports:
        if model_id is not None and r.model_id != model_id:
            continue
        if matrix.get(r.model_id, r.question_id, NO_CONTEXT) is None:
            raise IncompleteMatrixError([(r.model_id, r.question_id, NO_CONTEXT)])
        if matrix.correct(r.model_id, r.question_id, NO_CONTEXT):
            continue
        correct = matrix.correct(r.model_id, r.question_id, ITERATIVE)
        outcomes.append((correct, r.flags[flag]))
    return impact_from_outcomes(outcomes, flag, model_id or "all")


def calibration_accuracy(matrix: ResultMatrix, reports: Iterable[DiagnosticReport]) -> dict[str, Rate]:
    """Iterative accuracy per calibration state on the knowledge-gap cohort."""
    counts = {s: [0, 0] for s in CALIBRATION_STATES}
    for r in reports:
        if matrix.correct(r.model_id, r.question_id, NO_CONTEXT):
            continue
        c = counts[r.final.calibration]
        c[0] += matrix.correct(r.model_id, r.question_id, ITERATIVE)
        c[1] += 1
    return {s: Rate(n, d) for s, (n, d) in counts.items()}


# ---- token usage -------------------------------------------------------------

def _tokens_by_label(matrix: ResultMatrix, labels: Sequence[DifficultyLabel], model: str,
                     regime: str) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {EASY: [], MEDIUM: [], HARD: []}
    for lab in labels:
        if lab.label in out:
            cell = matrix.get(model, lab.question_id, regime)
            if cell is None:
                raise IncompleteMatrixError([(model, lab.question_id, regime)])
            out[lab.label].append(cell.tokens_out)
    return out


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def token_scaling_factor(matrix: ResultMatrix, labels: Sequence[DifficultyLabel],
                         regime: str = ITERATIVE) -> dict[str, float | None]:
    out = {}
    for m in matrix.models:
        b = _tokens_by_label(matrix, labels, m, regime)
        if not b[EASY] or not b[HARD]:
            raise ValueError("token scaling needs non-empty easy and hard cohorts")
        mu_easy = _mean(b[EASY])
        out[m] = None if mu_easy == 0 else _mean(b[HARD]) / mu_easy
    return out


def coefficient_of_variation(xs: Sequence[float]) -> float | None:
    """Population sigma / mu x 100."""
    mu = _mean(xs)
    if mu == 0:
        return None
    var = math.fsum((x - mu) ** 2 for x in xs) / len(xs)
    return math.sqrt(var) / mu * 100.0


def token_consistency_cv(matrix: ResultMatrix, labels: Sequence[DifficultyLabel],
                         regime: str = ITERATIVE) -> dict[str, float | None]:
    out = {}
    for m in matrix.models:
        b = _tokens_by_label(matrix, labels, m, regime)
        if not all(b.values()):
            raise ValueError("token consistency needs non-empty easy, medium and hard cohorts")
        cvs = [coefficient_of_variation(b[d]) for d in (EASY, MEDIUM, HARD)]
        out[m] = None if any(c is None for c in cvs) else math.fsum(cvs) / 3
    return out


# ---- sufficiency x coverage ----------------------------------------------------

def sufficiency_band(s: float) -> str:
    return "low" if s < 0.4 else "mid" if s < 0.6 else "high"


def coverage_band(c: float, threshold: float = 0.8) -> str:
    return "low" if c < threshold else "high"


def sufficiency_coverage_bins(reports: Iterable[DiagnosticReport], matrix: ResultMatrix) -> dict[tuple[str, str], Rate]:
    cells = {(s, c): [0, 0] for s in SUFFICIENCY_BANDS for c in COVERAGE_BANDS}
    for r in reports:
        cell = cells[(sufficiency_band(r.final.sufficiency_score), coverage_band(r.final.hop_coverage))]
        cell[0] += matrix.correct(r.model_id, r.question_id, ITERATIVE)
        cell[1] += 1
    return {k: Rate(n, d) for k, (n, d) in cells.items()}


# ---- unanswered by hop count --------------------------------------------------

def unanswered_by_hops(matrix: ResultMatrix, num_hops: Mapping[str, int],
                       regimes: Sequence[str] | None = None) -> dict[str, dict[int, int]]:
    regimes = list(regimes or matrix.regimes)
    models, questions = _require(matrix, regimes)
    depths = sorted({num_hops[q] for q in questions})
    out = {}
    for r in regimes:
        counts = dict.fromkeys(depths, 0)
        for q in questions:
            if not any(matrix.correct(m, q, r) for m in models):
                counts[num_hops[q]] += 1
        out[r] = counts
    return out


# ---- significance -------------------------------------------------------------

@dataclass(frozen=True)
class TTest:
    a: str
    b: str
    statistic: float
    pvalue: float

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "statistic": self.statistic, "pvalue": self.pvalue}


def two_sample_ttest(xs: Sequence[float], ys: Sequence[float], a: str = "a", b: str = "b") -> TTest:
    """Unpaired two-sample t-test (equal variances)."""
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError("each sample needs at least two values")
    res = stats.ttest_ind(xs, ys)
    return TTest(a, b, float(res.statistic), float(res.pvalue))


def regime_ttests(matrix: ResultMatrix) -> list[TTest]:
    """Per-model accuracy distributions compared between each pair of regimes."""
    acc = accuracy_by_regime(matrix, REGIMES)
    models = matrix.models
    series = {r: [acc[(m, r)].percent for m in models] for r in REGIMES}
    pairs = [(NO_CONTEXT, GOLD_CONTEXT), (GOLD_CONTEXT, ITERATIVE), (NO_CONTEXT, ITERATIVE)]
    return [two_sample_ttest(series[a], series[b], a, b) for a, b in pairs]
