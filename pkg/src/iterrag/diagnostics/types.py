"""Audit result records and their JSON shapes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

DETERMINISTIC = "deterministic"
JUDGE = "judge"
MODES = (DETERMINISTIC, JUDGE)

OVERCONFIDENT = "overconfident"
UNDERCONFIDENT = "underconfident"
WELL_CALIBRATED = "well_calibrated"
CALIBRATION_STATES = (OVERCONFIDENT, UNDERCONFIDENT, WELL_CALIBRATED)

COMPOSITION_PATTERNS = ("wrong_entity", "vague_paraphrase", "merged_entities")

EXCLUSIVE_FLAGS = ("vague", "off_topic", "fusion", "over_broad")  # precedence order

DEFAULT_COVERAGE_THRESHOLD = 0.8
DEFAULT_SUFFICIENCY_THRESHOLD = 0.6


@dataclass(frozen=True)
class Thresholds:
    coverage: float = DEFAULT_COVERAGE_THRESHOLD
    sufficiency: float = DEFAULT_SUFFICIENCY_THRESHOLD

    def __post_init__(self):
        for v in (self.coverage, self.sufficiency):
            if not 0.0 <= v <= 1.0:
                raise ValueError("thresholds must lie in [0, 1]")


@dataclass
class CoverageAudit:
    first_hit_step: dict[int, int | None]
    missed_hops: list[int]
    late_hits: list[int]
    hop_coverage: float

    @property
    def coverage_gap(self) -> bool:
        return bool(self.missed_hops)

    def to_dict(self) -> dict:
        return {
            "first_hit_step": {str(k): v for k, v in sorted(self.first_hit_step.items())},
            "missed_hops": list(self.missed_hops),
            "late_hits": list(self.late_hits),
            "hop_coverage_est": self.hop_coverage,
            "coverage_gap": self.coverage_gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageAudit":
        return cls(
            first_hit_step={int(k): v for k, v in d["first_hit_step"].items()},
            missed_hops=list(d["missed_hops"]),
            late_hits=list(d["late_hits"]),
            hop_coverage=float(d["hop_coverage_est"]),
        )


@dataclass
class QueryAudit:
    step: int
    vague: bool = False
    over_broad: bool = False
    fusion: bool = False
    off_topic: bool = False
    compound: bool = False
    anchored: bool = False
    hallucinated_term: bool = False
    carry_drop: bool | None = None
    contradiction_with_prev: bool = False
    predicted_hop: int | None = None
    is_next_logical_hop: bool = False

    def __post_init__(self):
        if sum(bool(getattr(self, f)) for f in EXCLUSIVE_FLAGS) > 1:
            raise ValueError(f"step {self.step}: query quality flags are mutually exclusive")
        if self.step == 1 and (self.anchored or self.hallucinated_term or self.carry_drop is not None):
            raise ValueError("anchor-based flags are undefined at step 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QueryAudit":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class FinalAudit:
    composition_failure: bool
    composition_pattern: str | None
    sufficiency_score: float
    hop_coverage: float
    calibration: str
    distractor_latch: bool
    earliest_sufficient_step: int | None = None
    supported_sentences: int = 0
    total_sentences: int = 0

    def __post_init__(self):
        if self.calibration not in CALIBRATION_STATES:
            raise ValueError(f"unknown calibration state {self.calibration!r}")
        if self.composition_failure != (self.composition_pattern is not None):
            raise ValueError("a composition failure carries exactly one pattern")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FinalAudit":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class DiagnosticReport:
    run_id: str
    question_id: str
    model_id: str
    mode: str
    verdict: bool
    num_hops: int
    finalized_step: int
    coverage: CoverageAudit
    queries: list[QueryAudit]
    final: FinalAudit
    divergence: list[str] = field(default_factory=list)

    @property
    def flags(self) -> dict[str, bool]:
        """Run-level failure flags used by the impact metrics."""
        return {
            "coverage_gap": self.coverage.coverage_gap,
            "late_hit": bool(self.coverage.late_hits),
            "carry_drop": any(q.carry_drop for q in self.queries),
            "overconfident": self.final.calibration == OVERCONFIDENT,
            "underconfident": self.final.calibration == UNDERCONFIDENT,
            "distractor_latch": self.final.distractor_latch,
            "composition_failure": self.final.composition_failure,
        }

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "question_id": self.question_id,
            "model_id": self.model_id,
            "mode": self.mode,
            "verdict": self.verdict,
            "num_hops": self.num_hops,
            "finalized_step": self.finalized_step,
            "coverage": self.coverage.to_dict(),
            "steps": [q.to_dict() for q in self.queries],
            "final": self.final.to_dict(),
            "flags": self.flags,
            "divergence": list(self.divergence),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticReport":
        return cls(
            run_id=d["run_id"],
            question_id=d["question_id"],
            model_id=d["model_id"],
            mode=d["mode"],
            verdict=bool(d["verdict"]),
            num_hops=int(d["num_hops"]),
            finalized_step=int(d["finalized_step"]),
            coverage=CoverageAudit.from_dict(d["coverage"]),
            queries=[QueryAudit.from_dict(s) for s in d["steps"]],
            final=FinalAudit.from_dict(d["final"]),
            divergence=list(d.get("divergence", [])),
        )
