import json

import pytest
from conftest import build_run, two_hop_question

from iterrag.diagnostics import (
    DETERMINISTIC,
    JUDGE,
    OVERCONFIDENT,
    UNDERCONFIDENT,
    WELL_CALIBRATED,
    DiagnosticReport,
    JudgeAuditor,
    QueryAudit,
    Thresholds,
    agreement_matrix,
    audit_run,
)
from iterrag.diagnostics.deterministic import (
    audit_anchor_carry,
    audit_coverage,
    audit_queries,
    classify_calibration,
    composition_pattern,
    detect_distractor_latch,
    sufficiency,
)
from iterrag.diagnostics.text import contains_form, extract_anchors, split_sentences
from iterrag.gateway import Gateway, ModelConfig, ScriptedBackend

Q = two_hop_question()
G1, G2 = (h.gold_paragraph for h in Q.hops)
NOISE = "Gallium salts are stored under dry nitrogen."


def test_contains_form_boundaries():
    assert contains_form("made LiCl here", "licl")
    assert not contains_form("LiClO4 salt", "LiCl")
    assert contains_form("the  Lithium\nchloride", "lithium chloride")


def test_extract_anchors():
    assert extract_anchors("The salt is LiCl and HAT works with Fe(IV)=O in Varonite.") == \
        ["LiCl", "HAT", "Fe(IV)=O", "Varonite"]
    assert extract_anchors("Mirzole forms (LiCl).") == ["LiCl"]
    assert extract_anchors("It gives the Product.") == []


def test_split_sentences_drops_citations_and_empty():
    assert split_sentences("Salt is blue [d#0001]. ... Acid is red!") == ["Salt is blue .", "Acid is red!"]


def test_coverage_first_hits_and_late():
    run = build_run(Q, [(Q.text, [NOISE], "x"), ("Varonite Kolbase", [G1, G2], "y")])
    cov = audit_coverage(run, Q)
    assert cov.first_hit_step == {1: 2, 2: 2}
    assert cov.late_hits == [1] and cov.missed_hops == [] and cov.hop_coverage == 1.0
    assert not cov.coverage_gap


def test_coverage_gap():
    run = build_run(Q, [(Q.text, [G1], "Varonite gives Mirzole.")])
    cov = audit_coverage(run, Q)
    assert cov.missed_hops == [2] and cov.hop_coverage == 0.5 and cov.coverage_gap


def test_carry_drop():
    run = build_run(Q, [
        (Q.text, [G1], "Varonite gives Mirzole."),
        ("what does Mirzole give", [G2], "Mirzole gives Teldane."),
        ("reflux conditions", [NOISE], "nothing"),
    ])
    assert audit_anchor_carry(run, Q) == [None, False, True]


def test_carry_none_without_anchors():
    run = build_run(Q, [(Q.text, [G1], "nothing yet."), ("reflux", [NOISE], "still nothing")])
    assert audit_anchor_carry(run, Q) == [None, None]


@pytest.mark.parametrize("query,flag", [
    ("tell me more about the reaction", "vague"),
    ("boiling point of water", "off_topic"),
    ("Varonite Mirzole Teldane", "fusion"),
    ("overview of all properties of Varonite", "over_broad"),
])
def test_query_exclusive_flags(query, flag):
    run = build_run(Q, [(query, [NOISE], "")])
    a = audit_queries(run, Q)[0]
    on = [f for f in ("vague", "off_topic", "fusion", "over_broad") if getattr(a, f)]
    assert on == [flag]


def test_query_audit_rejects_two_exclusive_flags():
    with pytest.raises(ValueError):
        QueryAudit(step=2, vague=True, fusion=True)
    with pytest.raises(ValueError):
        QueryAudit(step=1, anchored=True)


def test_hallucinated_term_and_next_hop():
    run = build_run(Q, [
        (Q.text, [G1], "Varonite gives Mirzole."),
        ("Mirzole with Zyxtrane", [G2], "Mirzole gives Teldane."),
    ])
    a = audit_queries(run, Q)
    assert a[1].hallucinated_term and a[1].anchored
    assert a[1].predicted_hop == 2 and a[1].is_next_logical_hop
    assert a[0].predicted_hop == 1 and a[0].is_next_logical_hop


def test_contradiction_with_previous_partial():
    run = build_run(Q, [
        (Q.text, [G1], "Varonite gives Mirzole."),
        ("Mirzole Pradene", [G2], "The product is not Mirzole but Teldane."),
    ])
    assert audit_queries(run, Q)[1].contradiction_with_prev


def test_compound_query():
    run = build_run(Q, [("Varonite reagents and Pradene conditions", [G1], "")])
    assert audit_queries(run, Q)[0].compound


def test_distractor_latch():
    fake = ["Teldone crystallises from Pradene mixtures.", "Reports on Teldone describe a pale solid."]
    run = build_run(Q, [(Q.text, [G1] + fake, "x"), ("Teldone", fake, "y")])
    assert detect_distractor_latch(run, Q)
    once = build_run(Q, [(Q.text, [G1] + fake, "x"), ("Mirzole", [G2], "y")])
    assert not detect_distractor_latch(once, Q)


def test_sufficiency_counts_supported_sentences():
    run = build_run(Q, [(Q.text, [G1], "Varonite is treated with Kolbase to give Mirzole. Then Zorbium appears.")])
    assert sufficiency(run) == (1, 2)


@pytest.mark.parametrize("args,want", [
    ((1, 2, 0.5, 1.0, None), OVERCONFIDENT),
    ((1, 2, 1.0, 0.5, None), OVERCONFIDENT),
    ((1, 2, 1.0, 1.0, None), WELL_CALIBRATED),
    ((4, 2, 1.0, 1.0, 2), UNDERCONFIDENT),
    ((2, 2, 0.5, 0.0, 2), WELL_CALIBRATED),
    ((1, 2, 0.5, 0.0, None), OVERCONFIDENT),
])
def test_classify_calibration(args, want):
    assert classify_calibration(*args) == want


def test_calibration_threshold_configurable():
    assert classify_calibration(1, 2, 0.75, 1.0, None, Thresholds(coverage=0.7)) == WELL_CALIBRATED
    assert classify_calibration(1, 2, 0.75, 1.0, None) == OVERCONFIDENT
    with pytest.raises(ValueError):
        classify_calibration(1, 2, 1.5, 0.0)


@pytest.mark.parametrize("answer,want", [
    ("Teldane and Mirzole", "merged_entities"),
    ("Mirzole", "wrong_entity"),
    ("a white solid", "vague_paraphrase"),
])
def test_composition_patterns(answer, want):
    run = build_run(Q, [(Q.text, [G1, G2], "x")], final_answer=answer)
    assert composition_pattern(run, Q, verdict=False) == want
    assert composition_pattern(run, Q, verdict=True) is None


def test_composition_needs_gold_in_evidence():
    run = build_run(Q, [(Q.text, [G1], "x")], final_answer="Mirzole")
    assert composition_pattern(run, Q, verdict=False) is None


def test_audit_run_report_roundtrip():
    run = build_run(Q, [(Q.text, [G1], "Varonite gives Mirzole.")], final_answer="Mirzole")
    rep = audit_run(run, Q, False)
    assert rep.flags["coverage_gap"] and rep.flags["overconfident"]
    assert rep.mode == DETERMINISTIC and rep.run_id == "m1::q1"
    back = DiagnosticReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back.to_dict() == rep.to_dict()


def _judge_gateway(responder):
    return Gateway({"aud": ScriptedBackend(responder=responder)})


def test_judge_mode_uses_auditor_json():
    def responder(messages, tag):
        if tag.role.startswith("audit_coverage"):
            return json.dumps({"first_hit_step": {"1": 1, "2": None}, "missed_hops": [2], "carry_drop": []})
        flags = {"vague": False, "over_broad": False, "fusion": False, "off_topic": False, "compound": False,
                 "anchored": False, "hallucinated_term": False, "partial_contradiction_with_prev": False}
        if tag.role.startswith("audit_query"):
            return json.dumps({"steps": [{**flags, "vague": True, "fusion": True, "predicted_hop": 1,
                                          "is_next_logical_hop": True}],
                               "distractor_latch": True})
        return "Here you go: " + json.dumps({
            "composition_failure": True, "composition_pattern": "wrong_entity",
            "sufficiency_score_est": 0.2, "hop_coverage_est": 0.5, "overconfident": True,
            "underconfident": False, "earliest_sufficient_step": None})

    aud = JudgeAuditor(_judge_gateway(responder), ModelConfig("aud"), Thresholds())
    run = build_run(Q, [(Q.text, [G1], "Varonite gives Mirzole.")], final_answer="Mirzole")
    rep = audit_run(run, Q, False, mode=JUDGE, judge=aud)
    assert rep.mode == JUDGE and rep.divergence == []
    assert rep.final.calibration == OVERCONFIDENT and rep.final.sufficiency_score == 0.2
    assert rep.final.composition_pattern == "wrong_entity" and rep.final.distractor_latch
    assert rep.coverage.missed_hops == [2]
    # exclusivity enforced with the deterministic precedence
    assert rep.queries[0].vague and not rep.queries[0].fusion


def test_judge_mode_falls_back_on_garbage():
    aud = JudgeAuditor(_judge_gateway(lambda m, t: "no json here"), ModelConfig("aud"), Thresholds())
    run = build_run(Q, [(Q.text, [G1], "Varonite gives Mirzole.")], final_answer="Mirzole")
    rep = audit_run(run, Q, False, mode=JUDGE, judge=aud)
    det = audit_run(run, Q, False)
    assert rep.coverage == det.coverage and rep.final == det.final
    assert rep.divergence == ["coverage", "queries", "final"]


def test_judge_mode_falls_back_when_auditor_unreachable():
    aud = JudgeAuditor(Gateway({}), ModelConfig("aud"), Thresholds())
    run = build_run(Q, [(Q.text, [G1], "Varonite gives Mirzole.")], final_answer="Mirzole")
    rep = audit_run(run, Q, False, mode=JUDGE, judge=aud)
    assert rep.divergence == ["coverage", "queries", "final"]


def test_agreement_matrix():
    run = build_run(Q, [(Q.text, [G1], "Varonite gives Mirzole.")], final_answer="Mirzole")
    a = audit_run(run, Q, False)
    b = audit_run(run, Q, False)
    m = agreement_matrix([(a, b)])
    assert m.rate() == 1.0 and m.passes(0.9) and not m.disagreements
