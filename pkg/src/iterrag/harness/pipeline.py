"""ingest -> run -> audit -> report, as plain functions the CLI wraps."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..controller import RunRecord
from ..corpus import chunk_corpus, load_corpus
from ..dataset import Question, file_sha256, load_questions
from ..diagnostics import DETERMINISTIC, JUDGE, DiagnosticReport, JudgeAuditor, agreement_matrix, audit_run
from ..evaluator import run_gold_context, run_iterative_regime, run_no_context
from ..gateway import Gateway, GatewayError, PriceTable
from ..index import VectorIndex, build_index, read_index_manifest
from ..report import ReportBuilder
from ..results import GOLD_CONTEXT, ITERATIVE, NO_CONTEXT, RegimeResult, ResultMatrix
from .backends import build_gateway
from .config import ConfigError, ExperimentConfig
from .logs import JsonlLog
from .manifest import build_manifest, load_manifest, write_manifest

logger = logging.getLogger(__name__)


class IncompatibleIndexError(ConfigError):
    pass


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def out_dir(cfg: ExperimentConfig) -> Path:
    return cfg.path(cfg.output_dir)


def results_log(cfg: ExperimentConfig) -> JsonlLog:
    return JsonlLog(out_dir(cfg) / "logs" / "results.jsonl",
                    key=lambda r: f"{r['model_id']}::{r['question_id']}::{r['regime']}")


def runs_log(cfg: ExperimentConfig) -> JsonlLog:
    return JsonlLog(out_dir(cfg) / "logs" / "runs.jsonl", key=lambda r: r["run_id"])


# ---- ingest --------------------------------------------------------------------

def ingest(cfg: ExperimentConfig, gateway: Gateway | None = None) -> dict:
    gateway = gateway or build_gateway(cfg)
    docs = load_corpus(cfg.path(cfg.corpus))
    chunks = chunk_corpus(docs, cfg.window, cfg.overlap)
    index = build_index(chunks, gateway.embedder(cfg.embedder), encoder_id=cfg.embedder.model_id,
                        workers=cfg.workers, params={"window": cfg.window, "overlap": cfg.overlap})
    index_dir = cfg.path(cfg.index_dir)
    index.save(index_dir)
    logger.info("indexed %d documents into %d chunks at %s", len(docs), len(chunks), index_dir)
    return read_index_manifest(index_dir)


def check_index(cfg: ExperimentConfig) -> dict:
    index_dir = cfg.path(cfg.index_dir)
    if not (index_dir / "manifest.json").exists():
        raise IncompatibleIndexError(f"no index at {index_dir}; run ingest first")
    man = read_index_manifest(index_dir)
    if man.get("encoder_id") != cfg.embedder.model_id:
        raise IncompatibleIndexError(
            f"index built with encoder {man.get('encoder_id')!r}, config uses {cfg.embedder.model_id!r}")
    want = {"window": cfg.window, "overlap": cfg.overlap}
    if man.get("params") != want:
        raise IncompatibleIndexError(f"index chunking {man.get('params')} does not match config {want}")
    return man


# ---- run -----------------------------------------------------------------------

@dataclass
class RunOutcome:
    total: int = 0
    skipped: int = 0
    completed: int = 0
    failed: list[str] = field(default_factory=list)
    pending: int = 0

    @property
    def partial(self) -> bool:
        return bool(self.failed) or self.pending > 0


def _run_cell(cfg, gateway, index, prices, q: Question, model_id: str, regime: str, clock):
    mcfg = cfg.model(model_id)
    if regime == NO_CONTEXT:
        return run_no_context(q, gateway, mcfg, cfg.judge_cfg, prices=prices), None
    if regime == GOLD_CONTEXT:
        return run_gold_context(q, gateway, mcfg, cfg.judge_cfg, prices=prices), None
    result, run = run_iterative_regime(q, index, gateway, mcfg, cfg.embedder, cfg.judge_cfg,
                                       budget=cfg.budget, k=cfg.k, prices=prices, clock=clock)
    if run.failed:
        raise GatewayError(run.error)
    return result, run


def run(cfg: ExperimentConfig, *, regimes: Sequence[str] | None = None, models: Sequence[str] | None = None,
        resume: bool = False, max_cells: int | None = None, gateway: Gateway | None = None) -> RunOutcome:
    regimes = list(regimes or cfg.regimes)
    model_ids = list(models or [m.model_id for m in cfg.models])
    for m in model_ids:
        cfg.model(m)
    cfg.judge_cfg
    questions = load_questions(cfg.path(cfg.dataset))
    index_man = check_index(cfg)
    index = VectorIndex.load(cfg.path(cfg.index_dir))
    manifest = build_manifest(cfg, file_sha256(cfg.path(cfg.dataset)), index_man["content_sha256"])
    manifest.models = [cfg.model(m).to_dict() for m in model_ids]
    res_log, run_log = results_log(cfg), runs_log(cfg)
    if len(res_log) and not resume:
        raise ConfigError(f"{out_dir(cfg)} already holds {len(res_log)} results; pass --resume to continue")
    write_manifest(out_dir(cfg) / "manifest.json", manifest)
    gateway = gateway or build_gateway(cfg)
    prices = PriceTable.load(cfg.path(cfg.prices)) if cfg.prices else None
    clock = (lambda: 0.0) if cfg.deterministic else time.perf_counter

    cells = [(m, q, r) for m in model_ids for q in questions for r in regimes]
    outcome = RunOutcome(total=len(cells))
    todo = []
    for m, q, r in cells:
        if f"{m}::{q.question_id}::{r}" in res_log:
            outcome.skipped += 1
        else:
            todo.append((m, q, r))
    if max_cells is not None and len(todo) > max_cells:
        outcome.pending = len(todo) - max_cells
        todo = todo[:max_cells]

    def work(cell):
        m, q, r = cell
        return _run_cell(cfg, gateway, index, prices, q, m, r, clock)

    # cells run concurrently but are persisted in submission order, so logs are
    # byte-stable and a killed run leaves a contiguous prefix
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [(c, pool.submit(work, c)) for c in todo]
        for (m, q, r), fut in futures:
            try:
                result, rec = fut.result()
            except GatewayError as exc:
                logger.error("cell %s/%s/%s failed: %s", m, q.question_id, r, exc)
                outcome.failed.append(f"{m}::{q.question_id}::{r}")
                continue
            if rec is not None:
                run_log.append(rec.to_dict())
            res_log.append(result.to_dict())
            outcome.completed += 1
    outcome.failed.sort()
    export_matrix(cfg)
    logger.info("run: %d cells, %d done now, %d skipped, %d failed, %d pending", outcome.total,
                outcome.completed, outcome.skipped, len(outcome.failed), outcome.pending)
    return outcome


def load_results(cfg: ExperimentConfig) -> list[RegimeResult]:
    return [RegimeResult.from_dict(r) for r in results_log(cfg)]


def export_matrix(cfg: ExperimentConfig) -> ResultMatrix:
    matrix = ResultMatrix.from_results(load_results(cfg))
    _write_atomic(out_dir(cfg) / "matrix.csv", matrix.to_csv())
    return matrix


# ---- audit ---------------------------------------------------------------------

def load_runs(cfg: ExperimentConfig, index: VectorIndex | None = None) -> dict[str, RunRecord]:
    index = index or VectorIndex.load(cfg.path(cfg.index_dir))
    chunks = {c.chunk_id: c for c in index.chunks}
    return {r["run_id"]: RunRecord.from_dict(r, chunks) for r in runs_log(cfg)}


@dataclass
class AuditOutcome:
    reports: dict[str, list[DiagnosticReport]]
    missing_runs: list[str]
    agreement: object | None = None


def audit(cfg: ExperimentConfig, mode: str | None = None, gateway: Gateway | None = None) -> AuditOutcome:
    mode = mode or cfg.auditor_mode
    modes = [DETERMINISTIC, JUDGE] if mode == "both" else [mode]
    questions = {q.question_id: q for q in load_questions(cfg.path(cfg.dataset))}
    runs = load_runs(cfg)
    results = [r for r in load_results(cfg) if r.regime == ITERATIVE]
    judge = None
    if JUDGE in modes:
        judge = JudgeAuditor(gateway or build_gateway(cfg), cfg.auditor_cfg, cfg.thresholds)
    reports: dict[str, list[DiagnosticReport]] = {m: [] for m in modes}
    missing = []
    for res in sorted(results, key=lambda r: (r.model_id, r.question_id)):
        rec = runs.get(res.run_ref)
        if rec is None or res.question_id not in questions:
            missing.append(res.run_ref or f"{res.model_id}::{res.question_id}")
            continue
        for m in modes:
            reports[m].append(audit_run(rec, questions[res.question_id], res.correct, m, judge, cfg.thresholds))
    if missing:
        logger.warning("audit: %d iterative results without a run record: %s", len(missing), ", ".join(missing))
    diag = out_dir(cfg) / "diagnostics"
    for m, reps in reports.items():
        text = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in reps)
        _write_atomic(diag / f"{m}.jsonl", text)
    agreement = None
    if len(modes) == 2:
        agreement = agreement_matrix(zip(reports[DETERMINISTIC], reports[JUDGE]))
        lines = ["field,agree,total,rate"] + [f"{r['field']},{r['agree']},{r['total']},{r['rate']}"
                                              for r in agreement.to_rows()]
        _write_atomic(diag / "agreement.csv", "\n".join(lines) + "\n")
        _write_atomic(diag / "disagreements.jsonl",
                      "".join(json.dumps(d, sort_keys=True) + "\n" for d in agreement.disagreements))
    return AuditOutcome(reports, missing, agreement)


def load_reports(cfg: ExperimentConfig, mode: str | None = None) -> list[DiagnosticReport]:
    mode = mode or (DETERMINISTIC if cfg.auditor_mode == "both" else cfg.auditor_mode)
    p = out_dir(cfg) / "diagnostics" / f"{mode}.jsonl"
    if not p.exists():
        return []
    with open(p, encoding="utf-8") as fh:
        return [DiagnosticReport.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---- report --------------------------------------------------------------------

def report(cfg: ExperimentConfig, *, allow_partial: bool = False, figures: bool = True,
           mode: str | None = None) -> ReportBuilder:
    questions = load_questions(cfg.path(cfg.dataset))
    matrix = export_matrix(cfg)
    man_path = out_dir(cfg) / "manifest.json"
    manifest = load_manifest(man_path).to_dict() if man_path.exists() else {}
    rb = ReportBuilder(matrix, load_reports(cfg, mode), questions, manifest, allow_partial=allow_partial)
    rb.build()
    rb.write(out_dir(cfg) / "report", figures=figures)
    return rb
