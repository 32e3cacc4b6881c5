"""Acceptance criteria, one test per criterion; conftest prints a PASS/FAIL line for each."""

import csv
import math
import os
import random
import shutil
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import build_run, two_hop_question

from iterrag import metrics as M
from iterrag.controller import FORCED_BUDGET, VOLUNTARY, run_iterative
from iterrag.corpus import Chunk, Document, chunk_document
from iterrag.dataset import Hop, Question
from iterrag.diagnostics import (
    OVERCONFIDENT,
    UNDERCONFIDENT,
    WELL_CALIBRATED,
    CoverageAudit,
    DiagnosticReport,
    FinalAudit,
    audit_run,
)
from iterrag.evaluator import EASY, HARD, MEDIUM, stratify_difficulty
from iterrag.gateway import Gateway, ModelConfig, ScriptedBackend, ScriptedEmbedder
from iterrag.harness import ExperimentConfig, JsonlLog, pipeline
from iterrag.index import VectorIndex
from iterrag.results import GOLD_CONTEXT, ITERATIVE, NO_CONTEXT, REGIMES, ResultMatrix
from iterrag.synthetic import generate

pytestmark = pytest.mark.acceptance


# ---- 1. PCR table ------------------------------------------------------------------

TABLE2 = {
    "C3.7": ((305, 276, 29, 0), 100.00, 90.5),
    "C3.7R": ((325, 284, 35, 6), 98.15, 89.0),
    "Llama": ((207, 135, 68, 4), 98.07, 66.5),
    "Mistral": ((279, 224, 47, 8), 97.13, 82.7),
    "4o": ((263, 218, 34, 11), 95.82, 86.5),
    "C4.5": ((337, 298, 23, 16), 95.25, 92.8),
    "Gemini": ((352, 297, 35, 20), 94.32, 89.5),
    "DS": ((330, 265, 45, 20), 93.94, 85.5),
    "GLM": ((289, 232, 32, 25), 91.35, 87.9),
    "Grok": ((254, 204, 27, 23), 90.94, 88.3),
    "GPT5": ((390, 237, 29, 124), 68.21, 89.1),
}


def test_criterion_1_pcr_table():
    t0 = time.perf_counter()
    bad = []
    for model, (counts, pcr, success) in TABLE2.items():
        s = M.pcr_from_counts(*counts)
        if s.pcr.rounded(2) != pcr or s.success.rounded(1) != success:
            bad.append((model, s.pcr.rounded(2), s.success.rounded(1), pcr, success))
    assert bad == []
    assert time.perf_counter() - t0 < 1.0


# ---- 2. damage indices -------------------------------------------------------------

FLAGS = ("coverage_gap", "overconfident", "distractor_latch")
S2 = {"C37": (9.2, 3.2, 20.4), "Grok": (12.7, 17.9, 16.7), "Gemini": (13.9, 15.5, 19.1),
      "Mistral": (15.6, 12.6, 25.8), "GPT5": (29.2, 22.9, 17.2), "Llama": (27.4, 15.8, 24.2),
      "C37R": (10.7, 4.5, 19.1), "GLM": (16.4, 29.6, 16.4), "DS": (18.4, 33.9, 21.6),
      "C45": (13.6, 11.5, 15.0), "4o": (14.0, 35.0, 22.1)}
S3 = {"C37": (38.9, 21.5, 53.5), "Grok": (12.2, 21.3, 43.6), "Gemini": (30.8, 9.0, 60.8),
      "Mistral": (31.2, 23.8, 47.9), "GPT5": (15.8, 15.6, 58.6), "Llama": (21.9, 24.0, 53.8),
      "C37R": (28.7, 0.0, 46.1), "GLM": (31.0, 23.1, 51.8), "DS": (27.7, 8.2, 55.0),
      "C45": (14.7, 11.1, 54.4), "4o": (24.4, 13.7, 52.2)}
S4 = {"C37": (3.6, 0.7, 10.9), "Grok": (1.5, 3.8, 7.3), "Gemini": (4.3, 1.4, 11.6),
      "Mistral": (4.9, 3.0, 12.4), "GPT5": (4.6, 3.6, 10.1), "Llama": (6.0, 3.8, 13.0),
      "C37R": (3.1, 0.0, 8.8), "GLM": (5.1, 3.9, 8.5), "DS": (5.1, 2.2, 11.9),
      "C45": (2.0, 1.3, 8.2), "4o": (3.4, 0.9, 11.5)}


def damage_mismatches(tol=0.1):
    out = []
    for model in S2:
        for i, flag in enumerate(FLAGS):
            d = M.damage_index(S2[model][i], S3[model][i])
            if abs(d - S4[model][i]) > tol + 1e-9:
                out.append(f"{model}/{flag}: {d:.2f} vs {S4[model][i]}")
    return out


@pytest.mark.xfail(strict=True, reason="three published cells are not p x delta of their own inputs; see ledger")
def test_criterion_2_damage_indices():
    t0 = time.perf_counter()
    assert len(S2) * len(FLAGS) == 33
    bad = damage_mismatches()
    assert time.perf_counter() - t0 < 1.0
    assert bad == [], "; ".join(bad)


def test_criterion_2_mismatch_is_exactly_three_cells():
    # pins the failure above to the inconsistent published cells and nothing else
    assert [b.split(":")[0] for b in damage_mismatches()] == [
        "GLM/overconfident", "DS/overconfident", "4o/overconfident"]


# ---- 3. PSR and coverage-gap penalty from synthetic cohorts -----------------------

def _report(model, qid, gap, calibration=WELL_CALIBRATED):
    cov = CoverageAudit({1: 1, 2: None if gap else 1}, [2] if gap else [], [], 0.5 if gap else 1.0)
    final = FinalAudit(False, None, 1.0, cov.hop_coverage, calibration, False, None, 1, 1)
    return DiagnosticReport(f"{model}::{qid}", qid, model, "deterministic", True, 2, 2, cov, [], final)


def test_criterion_3_psr_and_coverage_penalty():
    t0 = time.perf_counter()
    # 54 of 383 parametric wins lost under retrieval -> 14.1; 10 of 370 -> 2.7
    m = ResultMatrix()
    for model, known, lost in (("mistral", 383, 54), ("claude", 370, 10)):
        for i in range(500):
            q = f"q{i:03d}"
            nc = i < known
            m.add(model, q, NO_CONTEXT, nc)
            m.add(model, q, ITERATIVE, (i >= lost) if nc else False)
    psr = M.psr(m)
    assert psr["mistral"].rounded(1) == 14.1
    assert psr["claude"].rounded(1) == 2.7

    # knowledge-gap cohort: 779/1000 correct without a gap, 246/500 with one
    g = ResultMatrix()
    reports = []
    for i in range(1500):
        q = f"k{i:04d}"
        gap = i >= 1000
        ok = (i < 779) if not gap else (i - 1000 < 246)
        g.add("pooled", q, NO_CONTEXT, False)
        g.add("pooled", q, ITERATIVE, ok)
        reports.append(_report("pooled", q, gap))
    st = M.conditional_impact(g, reports, "coverage_gap")
    assert st.without_flag.rounded(1) == 77.9
    assert st.with_flag.rounded(1) == 49.2
    assert M.round_half_up(st.delta, 1) == 28.7
    assert time.perf_counter() - t0 < 1.0


# ---- 4. controller protocol --------------------------------------------------------

def _cluster_index(n_clusters=8, per=12, dim=16):
    chunks, vecs = [], []
    for c in range(n_clusters):
        for j in range(per):
            chunks.append(Chunk(f"c{c}-{j:02d}#0000", f"c{c}-{j:02d}", 0, 3, f"cluster {c} passage {j}"))
            v = np.zeros(dim)
            v[c] = 1.0
            v[n_clusters + (j % (dim - n_clusters))] = 0.01 * (j + 1)
            vecs.append(v)
    return VectorIndex(chunks, np.array(vecs))


def _onehot(i, dim=16):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def test_criterion_4_controller_protocol():
    t0 = time.perf_counter()
    index = _cluster_index()
    q = two_hop_question()
    emb_cfg = ModelConfig("emb")
    table = {q.text: _onehot(0)} | {f"query {t}": _onehot(t) for t in range(1, 8)}
    rng = random.Random(7)
    seen_forced = seen_voluntary = seen_full = 0
    for trial in range(100):
        wants = rng.randint(1, 8)  # retrieval rounds the script would like; may exceed the budget
        entries = []
        for t in range(1, 9):
            action = "ACTION: FINALIZE" if t >= wants else f"ACTION: RETRIEVE\nQUERY: query {t}"
            entries.append({"question_id": q.question_id, "step": t, "role": "planner",
                            "text": f"PARTIAL ANSWER: partial-{trial}-{t}.\n{action}"})
            entries.append({"question_id": q.question_id, "step": t, "role": "composer",
                            "text": "FINAL ANSWER: Teldane"})
        be = ScriptedBackend(entries)
        gw = Gateway({"m": be}, {"emb": ScriptedEmbedder(table)})
        run = run_iterative(q, index, gw, ModelConfig("m"), emb_cfg, budget=5, k=10)

        assert 1 <= run.finalized_step <= 5
        assert run.steps[0].query == q.text and len(run.steps[0].retrieved) == 10
        if wants <= 5:
            assert run.finalize_reason == VOLUNTARY and run.finalized_step == wants
            seen_voluntary += 1
        else:
            assert run.finalize_reason == FORCED_BUDGET and run.finalized_step == 5
            seen_forced += 1
        planner_calls = [(tag, msgs) for tag, msgs in be.calls if tag.role == "planner"]
        assert [tag.step for tag, _ in planner_calls] == list(range(1, run.finalized_step + 1))
        for tag, msgs in planner_calls:
            prompt = msgs[-1].content
            n_passages = sum(1 for line in prompt.splitlines() if line.startswith("[c"))
            assert n_passages <= 10 + 2 * (tag.step - 1) <= 18
            if tag.step == 5:
                assert n_passages == 18
                seen_full += 1
            for prev in range(1, tag.step):
                assert f"partial-{trial}-{prev}." in prompt
            assert f"partial-{trial}-{tag.step}." not in prompt
    assert seen_forced and seen_voluntary and seen_full
    assert time.perf_counter() - t0 < 10.0


# ---- 5. retrieval oracle and chunker -----------------------------------------------

def test_criterion_5_retrieval_oracle_and_chunker():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    vecs = rng.normal(size=(1000, 32))
    # a block of exact duplicates exercises the tie-break
    vecs[500:510] = vecs[0]
    ids = [f"v{i:04d}" for i in range(1000)]
    order = rng.permutation(1000)
    chunks = [Chunk(ids[i], "d", 0, 1, "t") for i in order]
    idx = VectorIndex(chunks, vecs[order])
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    hits = 0
    for qi in range(100):
        qv = vecs[0] if qi == 0 else rng.normal(size=32)
        cos = unit @ (qv / np.linalg.norm(qv))
        brute = sorted(range(1000), key=lambda i: (-round(cos[i], 12), ids[i]))[:10]
        hits += [h.chunk_id for h in idx.search(qv, 10)] == [ids[i] for i in brute]
    assert hits == 100

    window, overlap = 220, 50
    for n in range(1, 2001):
        chunks = chunk_document(Document("d", "s", " ".join(["w"] * n)), window, overlap)
        assert chunks[0].word_start == 0 and chunks[-1].word_end == n
        assert all(b.word_start - a.word_start == window - overlap for a, b in zip(chunks, chunks[1:]))
        assert all(c.word_end - c.word_start == window for c in chunks[:-1])
        assert 0 < chunks[-1].word_end - chunks[-1].word_start <= window
        assert len(chunks) == 1 or chunks[-2].word_end < n
    assert time.perf_counter() - t0 < 30.0


# ---- 6. diagnostics definitional suite ---------------------------------------------

Q = two_hop_question()
G1, G2 = (h.gold_paragraph for h in Q.hops)
NOISE = "Gallium salts are stored under dry nitrogen in amber bottles."
FAKE = ["Teldone crystallises from Pradene mixtures as a pale solid.",
        "Reports on Teldone describe a close relative of the Pradene products."]
Q1 = Question("p1", "Which product forms when Quorbate is treated with Selvane?", "Dremite",
              (Hop(1, "What does Quorbate give with Selvane?", "Dremite",
                   "Quorbate treated with Selvane yields Dremite as colourless needles."),))
P1 = Q1.hops[0].gold_paragraph
S1 = "Varonite is treated with Kolbase to give Mirzole."
S2_ = "Mirzole is treated with Pradene to give Teldane."

LABELS = ("coverage_gap", "late_hit", "carry_drop", "vague", "over_broad", "fusion", "off_topic",
          "compound", "hallucinated_term", "contradiction", "composition_failure", "distractor_latch")

# (name, question, steps, final answer, verdict, labels set, calibration)
CASES = [
    ("clean", Q, [(Q.text, [G1], S1), ("What does Mirzole give under reflux", [G2], S2_)],
     "Teldane", True, set(), WELL_CALIBRATED),
    ("clean_single_hop", Q1, [(Q1.text, [P1], "Quorbate treated with Selvane yields Dremite.")],
     "Dremite", True, set(), WELL_CALIBRATED),
    ("extra_confirm_step", Q, [(Q.text, [G1], S1), ("What does Mirzole give under reflux", [G2], S2_),
                               ("Confirm Teldane formation under reflux", [G2], S2_)],
     "Teldane", True, set(), UNDERCONFIDENT),
    ("all_hops_at_step1_then_more", Q, [(Q.text, [G1, G2], S1), ("Mirzole under reflux", [G2], S2_)],
     "Teldane", True, set(), UNDERCONFIDENT),
    ("early_stop_missing_hop", Q, [(Q.text, [G1], S1)], "Mirzole", False,
     {"coverage_gap"}, OVERCONFIDENT),
    ("early_stop_unsupported_partial", Q, [(Q.text, [G1, G2], "Zorbium forms from Quenta.")],
     "Teldane", True, set(), OVERCONFIDENT),
    ("missed_hop_full_length", Q, [(Q.text, [G1], S1), ("Mirzole under reflux", [NOISE], "Mirzole is the intermediate.")],
     "unknown", False, {"coverage_gap"}, WELL_CALIBRATED),
    ("late_hits_both", Q, [(Q.text, [NOISE], "Nothing relevant yet."), ("Varonite treatment product", [G1], S1),
                           ("Mirzole under reflux", [G2], S2_)],
     "Teldane", True, {"late_hit"}, WELL_CALIBRATED),
    ("late_hit_single_hop", Q1, [(Q1.text, [NOISE], "Nothing relevant yet."), ("Quorbate with Selvane", [P1],
                                 "Quorbate treated with Selvane yields Dremite.")],
     "Dremite", True, {"late_hit"}, WELL_CALIBRATED),
    ("carry_drop_off_topic", Q, [(Q.text, [G1], S1), ("boiling point of water", [NOISE], "Nothing new.")],
     "unknown", False, {"coverage_gap", "carry_drop", "off_topic"}, WELL_CALIBRATED),
    ("carry_drop_vague", Q, [(Q.text, [G1], S1), ("tell me more about the reaction", [NOISE], "Nothing new.")],
     "unknown", False, {"coverage_gap", "carry_drop", "vague"}, WELL_CALIBRATED),
    ("vague_no_anchor", Q, [(Q.text, [NOISE], "Nothing relevant yet."), ("more information on this route", [NOISE], "Still nothing.")],
     "unknown", False, {"coverage_gap", "vague"}, WELL_CALIBRATED),
    ("over_broad_1", Q, [(Q.text, [G1], S1), ("overview of Mirzole chemistry", [G2], S2_)],
     "Teldane", True, {"over_broad"}, WELL_CALIBRATED),
    ("over_broad_2", Q, [(Q.text, [G1], S1), ("everything on Mirzole", [G2], S2_)],
     "Teldane", True, {"over_broad"}, WELL_CALIBRATED),
    ("fusion_compound", Q, [(Q.text, [G1, G2], S1), ("Mirzole and Teldane link", [G2], S2_)],
     "Teldane", True, {"fusion", "compound"}, UNDERCONFIDENT),
    ("fusion_only", Q, [(Q.text, [G1, G2], S1), ("Mirzole Teldane link", [G2], S2_)],
     "Teldane", True, {"fusion"}, UNDERCONFIDENT),
    ("off_topic_2", Q, [(Q.text, [G1], S1), ("Mirzole under reflux", [G2], S2_), ("boiling point of water", [NOISE], S2_)],
     "Teldane", True, {"carry_drop", "off_topic"}, UNDERCONFIDENT),
    ("compound_or", Q, [(Q.text, [G1, G2], S1), ("Mirzole reflux or Pradene", [G2], S2_)],
     "Teldane", True, {"compound"}, UNDERCONFIDENT),
    ("hallucinated_1", Q, [(Q.text, [G1], S1), ("Mirzole with Zyxtrane", [G2], S2_)],
     "Teldane", True, {"hallucinated_term"}, WELL_CALIBRATED),
    ("hallucinated_2", Q, [(Q.text, [G1], S1), ("Mirzole under Brevant conditions", [G2], S2_)],
     "Teldane", True, {"hallucinated_term"}, WELL_CALIBRATED),
    ("contradiction_1", Q, [(Q.text, [G1], S1), ("Mirzole under reflux", [G2], "The intermediate is not Mirzole.")],
     "Teldane", True, {"contradiction"}, WELL_CALIBRATED),
    ("contradiction_2", Q, [(Q.text, [G1], S1), ("Mirzole under reflux", [G2], "Mirzole was incorrect as the intermediate.")],
     "Teldane", True, {"contradiction"}, WELL_CALIBRATED),
    ("latch_no_gold", Q, [(Q.text, [G1] + FAKE, S1), ("Teldone from Mirzole", FAKE, "Mirzole leads to Teldone.")],
     "Teldone", False, {"coverage_gap", "distractor_latch"}, UNDERCONFIDENT),
    ("latch_with_gold", Q, [(Q.text, [G1] + FAKE, S1), ("Teldone from Mirzole", FAKE + [G2], "Mirzole leads to Teldone.")],
     "Teldone", False, {"distractor_latch", "composition_failure"}, UNDERCONFIDENT),
    ("composition_merged", Q, [(Q.text, [G1], S1), ("What does Mirzole give under reflux", [G2], S2_)],
     "Teldane and Mirzole", False, {"composition_failure"}, WELL_CALIBRATED),
    ("composition_wrong_entity", Q, [(Q.text, [G1], S1), ("What does Mirzole give under reflux", [G2], S2_)],
     "Mirzole", False, {"composition_failure"}, UNDERCONFIDENT),
    ("composition_vague", Q, [(Q.text, [G1], S1), ("What does Mirzole give under reflux", [G2], S2_)],
     "a pale solid", False, {"composition_failure"}, WELL_CALIBRATED),
    ("composition_excluded_gold_absent", Q, [(Q.text, [G1], S1), ("What does Mirzole give under reflux", [NOISE], "Nothing new.")],
     "Mirzole", False, {"coverage_gap"}, UNDERCONFIDENT),
]


def observed_labels(rep):
    f = rep.flags
    out = {k for k in ("coverage_gap", "late_hit", "carry_drop", "composition_failure", "distractor_latch") if f[k]}
    for qa in rep.queries:
        for name in ("vague", "over_broad", "fusion", "off_topic", "compound", "hallucinated_term"):
            if getattr(qa, name):
                out.add(name)
        if qa.contradiction_with_prev:
            out.add("contradiction")
    return out


def test_criterion_6_diagnostics_definitions():
    t0 = time.perf_counter()
    assert len(CASES) >= 25
    counts = dict.fromkeys(LABELS + (OVERCONFIDENT, UNDERCONFIDENT, WELL_CALIBRATED), 0)
    mismatches = []
    excluded = 0
    for name, q, steps, answer, verdict, labels, calib in CASES:
        rep = audit_run(build_run(q, steps, final_answer=answer), q, verdict)
        got = observed_labels(rep)
        if got != labels or rep.final.calibration != calib:
            mismatches.append(f"{name}: got {sorted(got)}/{rep.final.calibration}, want {sorted(labels)}/{calib}")
        for lab in labels:
            counts[lab] += 1
        counts[calib] += 1
        # wrong answer with the gold entity never retrieved: composition is ruled out
        excluded += (not verdict) and "composition_failure" not in labels
    assert mismatches == [], "\n".join(mismatches)
    assert min(counts.values()) >= 2, counts
    assert excluded >= 2
    assert time.perf_counter() - t0 < 10.0


# ---- 7. metrics against brute force ------------------------------------------------

def _random_experiment(seed, n_models=11, n_q=200):
    rng = np.random.default_rng(seed)
    p_q = rng.uniform(0, 1, size=n_q)
    corr = {r: rng.uniform(size=(n_models, n_q)) < p_q for r in REGIMES}
    tokens = rng.integers(1, 2000, size=(n_models, n_q))
    hops = rng.integers(1, 5, size=n_q)
    steps = rng.integers(1, 6, size=(n_models, n_q))
    gaps = rng.uniform(size=(n_models, n_q)) < 0.3
    models = [f"m{i:02d}" for i in range(n_models)]
    qs = [f"q{j:03d}" for j in range(n_q)]
    m = ResultMatrix()
    for i, mid in enumerate(models):
        for j, qid in enumerate(qs):
            for r in REGIMES:
                m.add(mid, qid, r, bool(corr[r][i, j]), tokens_out=int(tokens[i, j]) if r == ITERATIVE else 0)
    return m, models, qs, corr, tokens, hops, steps, gaps


def _brute(models, qs, corr, tokens, hops, steps, gaps):
    nc, gc, it = corr[NO_CONTEXT], corr[GOLD_CONTEXT], corr[ITERATIVE]
    out = {"solv": {}, "rr": {}, "psr": {}, "pcr": {}, "S": {}, "CV": {}}
    wrong = (~it).sum(axis=0)
    band = np.where(wrong <= 2, 0, np.where((wrong >= 5) & (wrong <= 7), 1, np.where(wrong >= 9, 2, -1)))
    for i, mid in enumerate(models):
        cats = np.where(nc[i], 0, np.where(gc[i], 1, np.where(it[i], 2, 3)))
        out["solv"][mid] = tuple(int((cats == c).sum()) for c in range(4))
        out["rr"][mid] = (int((~gc[i] & it[i]).sum()), int((gc[i] & ~it[i]).sum()))
        out["psr"][mid] = (int((nc[i] & ~it[i]).sum()), int(nc[i].sum()))
        known = nc[i] & (hops > 1)
        multi = steps[i] >= 2
        out["pcr"][mid] = (int(known.sum()), int((known & multi & ~gaps[i]).sum()),
                           int((known & multi & gaps[i]).sum()), int((known & ~multi & gaps[i]).sum()))
        tok = tokens[i].astype(float)
        easy, med, hard = tok[band == 0], tok[band == 1], tok[band == 2]
        out["S"][mid] = hard.mean() / easy.mean()
        out["CV"][mid] = float(np.mean([x.std(ddof=0) / x.mean() * 100 for x in (easy, med, hard)]))
    out["unanswered"] = {r: {int(h): int(sum(1 for j in range(len(qs)) if hops[j] == h and not corr[r][:, j].any()))
                             for h in sorted(set(hops.tolist()))} for r in REGIMES}
    return out


def test_criterion_7_metrics_match_brute_force():
    t0 = time.perf_counter()
    for seed in range(100):
        m, models, qs, corr, tokens, hops, steps, gaps = _random_experiment(seed)
        want = _brute(models, qs, corr, tokens, hops, steps, gaps)
        num_hops = {q: int(h) for q, h in zip(qs, hops)}
        run_steps = {(mid, q): int(steps[i, j]) for i, mid in enumerate(models) for j, q in enumerate(qs)}
        cov = {(mid, q): bool(gaps[i, j]) for i, mid in enumerate(models) for j, q in enumerate(qs)}

        part = M.solvability_partition(m)
        rr = M.recoveries_regressions(m)
        psr = M.psr(m)
        pcr = M.pcr(m, num_hops, run_steps, cov)
        labels = stratify_difficulty(m)
        s = M.token_scaling_factor(m, labels)
        cv = M.token_consistency_cv(m, labels)
        for mid in models:
            assert tuple(part[mid][c].num for c in M.SOLVABILITY) == want["solv"][mid]
            assert (rr[mid].recoveries, rr[mid].regressions) == want["rr"][mid]
            assert (psr[mid].num, psr[mid].den) == want["psr"][mid]
            p = pcr[mid]
            assert (p.known, p.effective, p.ineffective, p.non_compliant) == want["pcr"][mid]
            assert math.isclose(s[mid], want["S"][mid], rel_tol=1e-12)
            assert math.isclose(cv[mid], want["CV"][mid], rel_tol=1e-12)
        assert M.unanswered_by_hops(m, num_hops, REGIMES) == want["unanswered"]
        assert {lab.label for lab in labels} >= {EASY, MEDIUM, HARD}
    assert time.perf_counter() - t0 < 60.0


# ---- 8. end-to-end scripted replay -------------------------------------------------

def _cli(cfg_path, *args):
    return subprocess.run([sys.executable, "-m", "iterrag.harness.cli", *args, "--config", str(cfg_path)],
                          capture_output=True, text=True, timeout=120)


def _full_pipeline(cfg_path):
    for verb in ("ingest", "run", "audit", "report"):
        res = _cli(cfg_path, verb)
        assert res.returncode == 0, res.stderr


def _artifacts(root: Path) -> dict[str, bytes]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and "logs" not in p.parts:
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def _log_records(root: Path) -> dict[str, list]:
    logs = root / "out" / "logs"
    return {
        "results": JsonlLog(logs / "results.jsonl", key=lambda r: f"{r['model_id']}::{r['question_id']}::{r['regime']}").records(),
        "runs": JsonlLog(logs / "runs.jsonl", key=lambda r: r["run_id"]).records(),
    }


def test_criterion_8_end_to_end_replay(tmp_path):
    t0 = time.perf_counter()
    src = tmp_path / "src"
    generate(src, n_questions=20, seed=11)
    a, b, c = (tmp_path / x for x in "abc")
    for d in (a, b, c):
        shutil.copytree(src, d)

    _full_pipeline(a / "config.yaml")
    _full_pipeline(b / "config.yaml")
    art_a, art_b = _artifacts(a), _artifacts(b)
    assert art_a == art_b
    assert (a / "out" / "logs" / "results.jsonl").read_bytes() == (b / "out" / "logs" / "results.jsonl").read_bytes()
    assert any(k.endswith(".png") for k in art_a) and any(k.endswith(".csv") for k in art_a)

    # forced kill mid-run, then resume
    assert _cli(c / "config.yaml", "ingest").returncode == 0
    results = c / "out" / "logs" / "results.jsonl"
    proc = subprocess.Popen([sys.executable, "-m", "iterrag.harness.cli", "run", "--config", str(c / "config.yaml")],
                            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    deadline = time.time() + 60
    while time.time() < deadline:
        if results.exists() and results.stat().st_size > 0 and results.read_bytes().count(b"\n") >= 100:
            break
        time.sleep(0.005)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
    done_before = results.read_bytes().count(b"\n")
    assert 0 < done_before < 660, "kill did not land mid-run"
    res = _cli(c / "config.yaml", "run", "--resume")
    assert res.returncode == 0, res.stderr
    for verb in ("audit", "report"):
        assert _cli(c / "config.yaml", verb).returncode == 0
    art_c = _artifacts(c)
    assert {k: v for k, v in art_c.items() if "quarantine" not in k} == art_a
    assert _log_records(c) == _log_records(a)
    assert time.perf_counter() - t0 < 120.0


# ---- 9. live smoke -----------------------------------------------------------------

@pytest.mark.live
@pytest.mark.skipif(not os.environ.get("ITERRAG_LIVE_CONFIG"), reason="set ITERRAG_LIVE_CONFIG to a config with a real backend")
def test_criterion_9_live_smoke(tmp_path):
    cfg = ExperimentConfig.load(os.environ["ITERRAG_LIVE_CONFIG"])
    cfg = cfg.with_overrides(output_dir=str(tmp_path / "out"), models=[cfg.models[0].model_id])
    questions = pipeline.load_questions(cfg.path(cfg.dataset))[:5]
    sub = tmp_path / "dataset.jsonl"
    from iterrag.dataset import write_questions
    write_questions(sub, questions)
    cfg = cfg.with_overrides(dataset=str(sub))
    if not (cfg.path(cfg.index_dir) / "manifest.json").exists():
        pipeline.ingest(cfg)
    out = pipeline.run(cfg)
    assert not out.failed
    with open(cfg.path(cfg.output_dir) / "matrix.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * len(REGIMES)
