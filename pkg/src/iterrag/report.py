"""Report bundle: JSON payload, Markdown/CSV tables, plot-ready CSVs and PNG figures.

Each metric is computed independently; a metric whose inputs are missing is listed
under ``refused`` with the reason instead of aborting the whole report.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import metrics as M  # noqa: E402
from .dataset import Question  # noqa: E402
from .diagnostics import CALIBRATION_STATES, DiagnosticReport  # noqa: E402
from .evaluator import label_counts, stratify_difficulty  # noqa: E402
from .results import ITERATIVE, REGIMES, ResultMatrix  # noqa: E402

logger = logging.getLogger(__name__)

_PNG_META = {"Software": None}


def _pct(rate: M.Rate | None, places: int = M.PCT_PLACES):
    return None if rate is None else rate.rounded(places)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else f"{v:.2f}"
    return str(v)


class Table:
    def __init__(self, name: str, title: str, header: Sequence[str], rows: list[list]):
        self.name, self.title, self.header, self.rows = name, title, list(header), rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow(["" if v is None else v for v in r])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [f"### {self.title}", "", "| " + " | ".join(self.header) + " |",
                 "|" + "|".join("---" for _ in self.header) + "|"]
        lines += ["| " + " | ".join(_fmt(v) for v in r) + " |" for r in self.rows]
        return "\n".join(lines) + "\n"


class ReportBuilder:
    def __init__(self, matrix: ResultMatrix, reports: Sequence[DiagnosticReport],
                 questions: Sequence[Question], manifest: Mapping | None = None,
                 allow_partial: bool = False):
        self.matrix = matrix
        self.reports = sorted(reports, key=lambda r: (r.model_id, r.question_id))
        self.questions = {q.question_id: q for q in questions}
        self.num_hops = {q.question_id: q.num_hops for q in questions}
        self.manifest = dict(manifest or {})
        self.allow_partial = allow_partial
        self.metrics: dict[str, object] = {}
        self.refused: dict[str, str] = {}
        self.tables: list[Table] = []
        self.plots: dict[str, Table] = {}

    def _try(self, name: str, fn: Callable[[], object]):
        try:
            value = fn()
        except (ValueError, KeyError) as exc:
            logger.warning("metric %s refused: %s", name, exc)
            self.refused[name] = f"{type(exc).__name__}: {exc}"
            return None
        self.metrics[name] = value
        return value

    def _matrix_gaps(self) -> list:
        present = [r for r in REGIMES if self.matrix.has_regime(r)]
        return self.matrix.missing(present, self.matrix.models, sorted(self.num_hops))

    def build(self) -> dict:
        mx = self.matrix
        present = [r for r in REGIMES if mx.has_regime(r)]
        for r in REGIMES:
            if r not in present:
                self.refused[f"regime:{r}"] = "no cells for this regime"
        gaps = self._matrix_gaps()
        if gaps and not self.allow_partial:
            self.refused["matrix"] = (f"{len(gaps)} cells missing (first: {'/'.join(gaps[0])}); "
                                      "rerun to fill them or allow a partial report")
            return self.payload()
        if not mx.models:
            self.refused["matrix"] = "empty result matrix"
            return self.payload()

        acc = self._try("accuracy", lambda: M.accuracy_by_regime(mx, present))
        toks = self._try("mean_output_tokens", lambda: M.mean_output_tokens(mx, present))
        if acc is not None:
            rows = []
            for m in mx.models:
                rows.append([m] + [_pct(acc.get((m, r))) for r in REGIMES]
                            + [None if toks is None or (m, r) not in toks else round(toks[(m, r)], 2) for r in REGIMES])
            self.tables.append(Table(
                "table1_accuracy_tokens", "Accuracy (%) and mean output tokens by regime",
                ["model"] + [f"acc_{r}" for r in REGIMES] + [f"tokens_{r}" for r in REGIMES], rows))

        sol = self._try("solvability", lambda: M.solvability_partition(mx))
        if sol is not None:
            self.plots["solvability"] = Table("solvability", "Solvability partition (%)", ["model", *M.SOLVABILITY],
                                              [[m] + [_pct(sol[m][c]) for c in M.SOLVABILITY] for m in sol])
        rr = self._try("recoveries", lambda: M.recoveries_regressions(mx))
        if rr is not None:
            self.plots["recoveries"] = Table("recoveries", "Recoveries and regressions (gold to iterative)",
                                             ["model", "recoveries", "regressions", "net_gain"],
                                             [[m, s.recoveries, s.regressions, s.net_gain] for m, s in rr.items()])
        ps = self._try("psr", lambda: M.psr(mx))
        if ps is not None:
            self.plots["psr"] = Table("psr", "Parametric suppression rate (%)", ["model", "suppressed", "known", "psr"],
                                      [[m, r.num, r.den, _pct(r)] for m, r in ps.items()])
        ub = self._try("unanswered_by_hops", lambda: M.unanswered_by_hops(mx, self.num_hops, present))
        if ub is not None:
            depths = sorted({d for v in ub.values() for d in v})
            rows = [[r] + [ub[r][d] for d in depths] + [sum(ub[r].values())] for r in ub]
            self.plots["unanswered_by_hops"] = Table("unanswered_by_hops", "Questions unanswered by every model",
                                                     ["regime"] + [f"hops_{d}" for d in depths] + ["total"], rows)
        tt = self._try("ttests", lambda: M.regime_ttests(mx))
        if tt is not None:
            self.metrics["ttests"] = [t.to_dict() for t in tt]

        labels = self._try("difficulty", lambda: stratify_difficulty(mx, ITERATIVE))
        if labels is not None:
            self.metrics["difficulty"] = {"counts": label_counts(labels),
                                          "labels": {lab.question_id: lab.label for lab in labels}}
            s = self._try("token_scaling", lambda: M.token_scaling_factor(mx, labels))
            cv = self._try("token_cv", lambda: M.token_consistency_cv(mx, labels))
            if s is not None or cv is not None:
                self.plots["token_adaptivity"] = Table(
                    "token_adaptivity", "Token scaling factor and consistency", ["model", "scaling_S", "cv_percent"],
                    [[m, None if s is None or s[m] is None else round(s[m], 4),
                      None if cv is None or cv[m] is None else round(cv[m], 2)] for m in mx.models])
        else:
            self.refused.setdefault("token_scaling", "difficulty labels unavailable")
            self.refused.setdefault("token_cv", "difficulty labels unavailable")

        self._diagnostic_metrics()
        return self.payload()

    def _reports_for(self, model: str) -> list[DiagnosticReport]:
        return [r for r in self.reports if r.model_id == model]

    def _diagnostic_metrics(self) -> None:
        mx = self.matrix
        if not self.reports:
            for name in ("pcr", "impact", "sufficiency_coverage", "calibration_accuracy", "carry_drop_by_step"):
                self.refused[name] = "no diagnostic reports"
            return

        def pcr():
            steps = {(r.model_id, r.question_id): r.finalized_step for r in self.reports}
            gaps = {(r.model_id, r.question_id): r.coverage.coverage_gap for r in self.reports}
            return M.pcr(mx, self.num_hops, steps, gaps)

        p = self._try("pcr", pcr)
        if p is not None:
            rows = []
            for m, s in p.items():
                if s is None:
                    rows.append([m, 0, None, None, None, None, None, None])
                else:
                    rows.append([m, s.known, s.effective, s.ineffective, s.non_compliant, s.single_step_covered,
                                 _pct(s.pcr), _pct(s.success, M.PP_PLACES)])
            self.tables.append(Table("table2_pcr", "Procedural compliance on known multi-hop questions",
                                     ["model", "known", "effective", "ineffective", "non_compliant",
                                      "single_step_covered", "pcr_percent", "success_percent"], rows))

        def impacts():
            out = {}
            for m in mx.models:
                for f in M.IMPACT_FLAGS:
                    out[(m, f)] = M.conditional_impact(mx, self.reports, f, m)
            for f in M.IMPACT_FLAGS:
                out[("all", f)] = M.conditional_impact(mx, self.reports, f)
            return out

        imp = self._try("impact", impacts)
        if imp is not None:
            models = mx.models
            s1 = []
            for m in models:
                rs = self._reports_for(m)
                s1.append([m, _pct(M.Rate(sum(r.coverage.coverage_gap for r in rs), len(rs)))])
            self.tables.append(Table("s1_coverage_gap_prevalence", "Coverage gap prevalence over all runs (%)",
                                     ["model", "coverage_gap_percent"], s1))
            flags = M.DAMAGE_FLAGS
            self.tables.append(Table("s2_prevalence", "Failure prevalence on the knowledge-gap cohort (%)",
                                     ["model", *flags],
                                     [[m] + [M.round_half_up(imp[(m, f)].prevalence.percent, M.PP_PLACES) for f in flags]
                                      for m in models]))
            self.tables.append(Table("s3_impact", "Accuracy impact of each failure (pp)", ["model", *flags],
                                     [[m] + [M.round_half_up(imp[(m, f)].delta, M.PP_PLACES) for f in flags]
                                      for m in models]))
            self.tables.append(Table("s4_damage", "Damage index (expected pp lost per question)", ["model", *flags],
                                     [[m] + [M.round_half_up(imp[(m, f)].damage, M.PP_PLACES) for f in flags]
                                      for m in models]))
            self.plots["impact"] = Table(
                "impact", "Conditional impact per model and flag",
                ["model", "flag", "n_with", "acc_with", "n_without", "acc_without", "delta_pp", "prevalence", "damage_pp", "reason"],
                [[m, f, s.with_flag.den, _pct(s.with_flag), s.without_flag.den, _pct(s.without_flag),
                  M.round_half_up(s.delta, 2), _pct(s.prevalence), M.round_half_up(s.damage, 2), s.reason]
                 for (m, f), s in sorted(imp.items())])
            self.metrics["impact"] = {f"{m}/{f}": s.to_dict() for (m, f), s in sorted(imp.items())}

        bins = self._try("sufficiency_coverage", lambda: M.sufficiency_coverage_bins(self.reports, mx))
        if bins is not None:
            self.plots["sufficiency_coverage"] = Table(
                "sufficiency_coverage", "Iterative accuracy by sufficiency band and coverage",
                ["sufficiency_band", "coverage_band", "correct", "runs", "accuracy"],
                [[s, c, r.num, r.den, _pct(r)] for (s, c), r in bins.items()])
            self.metrics["sufficiency_coverage"] = {f"{s}/{c}": r.to_dict() for (s, c), r in bins.items()}
        cal = self._try("calibration_accuracy", lambda: M.calibration_accuracy(mx, self.reports))
        if cal is not None:
            self.plots["calibration_accuracy"] = Table(
                "calibration_accuracy", "Accuracy by calibration state (knowledge-gap cohort)",
                ["state", "correct", "runs", "accuracy"], [[s, cal[s].num, cal[s].den, _pct(cal[s])] for s in CALIBRATION_STATES])
            self.metrics["calibration_accuracy"] = {s: r.to_dict() for s, r in cal.items()}

        def carry_by_step():
            rows = []
            for m in mx.models:
                by_step: dict[int, list[int]] = {}
                for r in self._reports_for(m):
                    for q in r.queries:
                        if q.carry_drop is not None:
                            c = by_step.setdefault(q.step, [0, 0])
                            c[0] += q.carry_drop
                            c[1] += 1
                for step in sorted(by_step):
                    n, d = by_step[step]
                    rows.append([m, step, n, d, _pct(M.Rate(n, d))])
            return rows

        rows = self._try("carry_drop_by_step", carry_by_step)
        if rows is not None:
            self.plots["carry_drop_by_step"] = Table("carry_drop_by_step", "Anchor carry-drop rate by step",
                                                     ["model", "step", "drops", "judged", "rate"], rows)

    def payload(self) -> dict:
        def conv(v):
            if isinstance(v, M.Rate):
                return v.to_dict()
            if hasattr(v, "to_dict"):
                return v.to_dict()
            if isinstance(v, dict):
                return {("/".join(k) if isinstance(k, tuple) else str(k)): conv(x) for k, x in v.items()}
            if isinstance(v, list):
                return [conv(x) for x in v]
            return v

        return {
            "manifest": self.manifest,
            "cohorts": {"knowledge_gap": M.COHORT_KNOWLEDGE_GAP, "known_multihop": M.COHORT_KNOWN_MULTIHOP},
            "metrics": {k: conv(v) for k, v in sorted(self.metrics.items())},
            "refused": dict(sorted(self.refused.items())),
        }

    # ---- output ---------------------------------------------------------------
    def write(self, out_dir: str | Path, figures: bool = True) -> list[Path]:
        out = Path(out_dir)
        (out / "tables").mkdir(parents=True, exist_ok=True)
        (out / "plots").mkdir(parents=True, exist_ok=True)
        written = []
        p = out / "report.json"
        p.write_text(json.dumps(self.payload(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
        md = ["# Evaluation report", ""]
        for t in self.tables:
            (out / "tables" / f"{t.name}.csv").write_text(t.to_csv(), encoding="utf-8")
            md.append(t.to_markdown())
            written.append(out / "tables" / f"{t.name}.csv")
        if self.refused:
            md += ["### Refused metrics", ""] + [f"- {k}: {v}" for k, v in sorted(self.refused.items())] + [""]
        (out / "tables.md").write_text("\n".join(md), encoding="utf-8")
        written.append(out / "tables.md")
        for name, t in sorted(self.plots.items()):
            (out / "plots" / f"{name}.csv").write_text(t.to_csv(), encoding="utf-8")
            written.append(out / "plots" / f"{name}.csv")
        if figures:
            written += render_figures(self, out / "figures")
        return written


# ---- figures -------------------------------------------------------------------

def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def render_figures(rb: ReportBuilder, fig_dir: str | Path) -> list[Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    out = []
    acc = rb.metrics.get("accuracy")
    models = rb.matrix.models
    if acc:
        fig, ax = plt.subplots(figsize=(max(6, len(models) * 0.8), 4))
        width = 0.8 / len(REGIMES)
        for i, r in enumerate(REGIMES):
            ys = [acc[(m, r)].percent if (m, r) in acc else 0 for m in models]
            ax.bar([x + i * width for x in range(len(models))], ys, width, label=r)
        ax.set_xticks([x + width for x in range(len(models))], models, rotation=45, ha="right")
        ax.set_ylabel("accuracy (%)")
        ax.legend()
        out.append(_save(fig, fig_dir / "accuracy_by_regime.png"))
    sol = rb.metrics.get("solvability")
    if sol:
        fig, ax = plt.subplots(figsize=(6, max(3, len(models) * 0.4)))
        data = [[sol[m][c].percent for c in M.SOLVABILITY] for m in models]
        im = ax.imshow(data, aspect="auto", cmap="viridis", vmin=0, vmax=100)
        ax.set_xticks(range(len(M.SOLVABILITY)), M.SOLVABILITY, rotation=30, ha="right")
        ax.set_yticks(range(len(models)), models)
        fig.colorbar(im, ax=ax, label="% of questions")
        out.append(_save(fig, fig_dir / "solvability.png"))
    rr = rb.metrics.get("recoveries")
    if rr:
        fig, ax = plt.subplots(figsize=(max(6, len(models) * 0.6), 4))
        xs = range(len(models))
        ax.bar([x - 0.2 for x in xs], [rr[m].recoveries for m in models], 0.4, color="tab:green", label="recoveries")
        ax.bar([x + 0.2 for x in xs], [rr[m].regressions for m in models], 0.4, color="tab:red", label="regressions")
        ax.set_xticks(list(xs), models, rotation=45, ha="right")
        ax.legend()
        out.append(_save(fig, fig_dir / "recoveries.png"))
    ps = rb.metrics.get("psr")
    if ps:
        fig, ax = plt.subplots(figsize=(max(6, len(models) * 0.6), 4))
        ax.bar(models, [ps[m].percent or 0 for m in models], color="tab:purple")
        ax.set_ylabel("PSR (%)")
        ax.tick_params(axis="x", rotation=45)
        out.append(_save(fig, fig_dir / "psr.png"))
    ub = rb.metrics.get("unanswered_by_hops")
    if ub:
        depths = sorted({d for v in ub.values() for d in v})
        fig, ax = plt.subplots(figsize=(6, 4))
        width = 0.8 / max(len(ub), 1)
        for i, (r, counts) in enumerate(ub.items()):
            ax.bar([d + i * width for d in depths], [counts[d] for d in depths], width, label=r)
        ax.set_xlabel("hops")
        ax.set_ylabel("questions unanswered by every model")
        ax.legend()
        out.append(_save(fig, fig_dir / "unanswered_by_hops.png"))
    bins = rb.metrics.get("sufficiency_coverage")
    if bins:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        grid = [[(bins[f"{s}/{c}"]["percent"] if bins[f"{s}/{c}"]["den"] else float("nan")) for s in M.SUFFICIENCY_BANDS]
                for c in M.COVERAGE_BANDS]
        im = ax.imshow(grid, cmap="magma", vmin=0, vmax=100, origin="lower")
        ax.set_xticks(range(3), [f"s {b}" for b in M.SUFFICIENCY_BANDS])
        ax.set_yticks(range(2), [f"c {b}" for b in M.COVERAGE_BANDS])
        fig.colorbar(im, ax=ax, label="accuracy (%)")
        out.append(_save(fig, fig_dir / "sufficiency_coverage.png"))
    s, cv = rb.metrics.get("token_scaling"), rb.metrics.get("token_cv")
    if s and cv:
        fig, ax = plt.subplots(figsize=(5, 4))
        pts = [(m, s[m], cv[m]) for m in models if s[m] is not None and cv[m] is not None]
        ax.scatter([p[1] for p in pts], [p[2] for p in pts])
        for m, x, y in pts:
            ax.annotate(m, (x, y), fontsize=7)
        ax.set_xlabel("token scaling factor S")
        ax.set_ylabel("mean CV (%)")
        out.append(_save(fig, fig_dir / "token_adaptivity.png"))
    return out


def damage_table(rows: Iterable[Mapping]) -> Table:
    """Damage index from (model, flag, prevalence_pct, delta_pp) rows."""
    by_model: dict[str, dict[str, float]] = {}
    flags: list[str] = []
    for r in rows:
        f = r["flag"]
        if f not in flags:
            flags.append(f)
        d = M.damage_index(float(r["prevalence_pct"]), float(r["delta_pp"]))
        by_model.setdefault(r["model"], {})[f] = M.round_half_up(d, M.PP_PLACES)
    return Table("damage", "Damage index (expected pp lost per question)", ["model", *flags],
                 [[m] + [v.get(f) for f in flags] for m, v in by_model.items()])
