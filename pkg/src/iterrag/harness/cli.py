"""Command-line entry point: ingest, run, audit, report, validate, damage, synth."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from ..corpus import ConfigurationError, CorpusFormatError, load_corpus
from ..dataset import DatasetFormatError, load_questions
from ..gateway import PricingError
from ..index import IndexBuildError
from ..results import REGIMES
from .config import AUDITOR_MODES, ConfigError, ExperimentConfig
from .manifest import ManifestMismatch

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3

logger = logging.getLogger("iterrag")

_VALIDATION_ERRORS = (ConfigError, ConfigurationError, CorpusFormatError, DatasetFormatError,
                      ManifestMismatch, PricingError, IndexBuildError, FileNotFoundError)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    over = {}
    if getattr(args, "workers", None):
        over["workers"] = args.workers
    if getattr(args, "auditor_mode", None):
        over["auditor_mode"] = args.auditor_mode
    if getattr(args, "models", None):
        over["models"] = args.models
    if getattr(args, "regimes", None):
        over["regimes"] = args.regimes
    cfg = cfg.with_overrides(**over)
    cfg.validate()
    return cfg


def cmd_validate(args) -> int:
    problems = []
    if args.config:
        try:
            cfg = ExperimentConfig.load(args.config)
            print(f"config ok: {len(cfg.models)} models, budget={cfg.budget}, k={cfg.k}")
            args.dataset = args.dataset or (cfg.path(cfg.dataset) if cfg.dataset else None)
            args.corpus = args.corpus or (cfg.path(cfg.corpus) if cfg.corpus else None)
        except (ConfigError, FileNotFoundError) as exc:
            problems.append(f"config: {exc}")
    if args.dataset:
        try:
            qs = load_questions(args.dataset)
            print(f"dataset ok: {len(qs)} questions")
        except (DatasetFormatError, FileNotFoundError) as exc:
            problems.append(f"dataset: {exc}")
    if args.corpus:
        try:
            docs = load_corpus(args.corpus)
            print(f"corpus ok: {len(docs)} documents")
        except (CorpusFormatError, FileNotFoundError) as exc:
            problems.append(f"corpus: {exc}")
    for p in problems:
        print(p, file=sys.stderr)
    return EXIT_VALIDATION if problems else EXIT_OK


def cmd_ingest(args) -> int:
    from .pipeline import ingest

    man = ingest(_load_config(args))
    print(f"index: {man['chunk_count']} chunks, dim {man['dim']}, sha256 {man['content_sha256'][:12]}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run

    cfg = _load_config(args)
    out = run(cfg, regimes=args.regimes, models=args.models, resume=args.resume, max_cells=args.max_cells)
    print(f"cells: {out.total} total, {out.completed} completed, {out.skipped} skipped, "
          f"{len(out.failed)} failed, {out.pending} pending")
    return EXIT_PARTIAL if out.partial else EXIT_OK


def cmd_audit(args) -> int:
    from .pipeline import audit

    cfg = _load_config(args)
    out = audit(cfg, args.auditor_mode)
    for mode, reps in out.reports.items():
        print(f"{mode}: {len(reps)} reports")
    if out.agreement is not None:
        print(f"mode agreement: {out.agreement.rate():.3f}")
    for ref in out.missing_runs:
        print(f"missing run record: {ref}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import report

    cfg = _load_config(args)
    rb = report(cfg, allow_partial=args.allow_partial, figures=not args.no_figures)
    print(f"report: {len(rb.tables)} tables, {len(rb.plots)} plot series, {len(rb.refused)} refused")
    for name, why in sorted(rb.refused.items()):
        print(f"refused {name}: {why}", file=sys.stderr)
    return EXIT_PARTIAL if "matrix" in rb.refused else EXIT_OK


def cmd_damage(args) -> int:
    from ..report import damage_table

    with open(args.input, newline="", encoding="utf-8") as fh:
        table = damage_table(csv.DictReader(fh))
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    from ..synthetic import generate

    path = generate(args.out, n_questions=args.questions, seed=args.seed)
    print(f"synthetic experiment written; config at {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iterrag", description="Multi-hop RAG evaluation harness")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check config, dataset and corpus files offline")
    v.add_argument("--config")
    v.add_argument("--dataset")
    v.add_argument("--corpus")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("ingest", help="chunk, embed and index the corpus")
    i.add_argument("--config", required=True)
    i.add_argument("--workers", type=int)
    i.set_defaults(func=cmd_ingest)

    r = sub.add_parser("run", help="run regimes and append results to the logs")
    r.add_argument("--config", required=True)
    r.add_argument("--regimes", nargs="+", choices=REGIMES)
    r.add_argument("--models", nargs="+")
    r.add_argument("--workers", type=int)
    r.add_argument("--resume", action="store_true", help="skip cells already in the results log")
    r.add_argument("--max-cells", type=int, help="stop after this many new cells")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="diagnose iterative runs")
    a.add_argument("--config", required=True)
    a.add_argument("--auditor-mode", choices=AUDITOR_MODES)
    a.add_argument("--workers", type=int)
    a.set_defaults(func=cmd_audit)

    rp = sub.add_parser("report", help="render tables, plot CSVs and figures")
    rp.add_argument("--config", required=True)
    rp.add_argument("--allow-partial", action="store_true")
    rp.add_argument("--no-figures", action="store_true")
    rp.set_defaults(func=cmd_report)

    d = sub.add_parser("damage", help="damage index from a model,flag,prevalence_pct,delta_pp CSV")
    d.add_argument("--input", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_damage)

    s = sub.add_parser("synth", help="write a synthetic scripted experiment")
    s.add_argument("--out", required=True)
    s.add_argument("--questions", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
