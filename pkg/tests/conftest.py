import pytest

from iterrag.corpus import Document, chunk_corpus
from iterrag.dataset import Hop, Question
from iterrag.gateway import Gateway, HashingEmbedder, ModelConfig, ScriptedBackend
from iterrag.index import build_index

CHAT = ModelConfig("m1", adapter="scripted")
JUDGE = ModelConfig("judge", adapter="scripted")
EMB = ModelConfig("hash-64", adapter="hashing", dim=64)


def two_hop_question(qid="q1"):
    return Question(
        question_id=qid,
        text="Starting from Varonite, what compound is finally obtained after the 2-step route?",
        gold_answer="Teldane",
        hops=(
            Hop(1, "What does Varonite give with Kolbase?", "Mirzole",
                "When Varonite is treated with Kolbase under reflux, the isolated product is Mirzole."),
            Hop(2, "What does Mirzole give with Pradene?", "Teldane",
                "When Mirzole is treated with Pradene under reflux, the isolated product is Teldane."),
        ),
    )


def small_docs():
    q = two_hop_question()
    docs = [Document(f"gold-{h.index}", "t", h.gold_paragraph) for h in q.hops]
    docs.append(Document("noise-1", "t", "Gallium salts are stored under dry nitrogen in amber bottles."))
    docs.append(Document("noise-2", "t", "A distillation column separates volatile solvents by boiling point."))
    return docs


@pytest.fixture
def question():
    return two_hop_question()


@pytest.fixture
def index():
    chunks = chunk_corpus(small_docs())
    emb = HashingEmbedder(64)
    return build_index(chunks, lambda t: emb.embed(EMB, t), encoder_id=EMB.model_id)


def make_gateway(entries=(), judge_entries=(), sleep=lambda s: None, **kw):
    return Gateway(
        {"m1": ScriptedBackend(entries), "judge": ScriptedBackend(judge_entries)},
        {EMB.model_id: HashingEmbedder(64)},
        sleep=sleep,
        **kw,
    )


def build_run(q, steps, final_answer="", model_id="m1", finalize_reason="voluntary"):
    """RunRecord from (query, [snippet texts], partial answer) triples."""
    from iterrag.controller import RunRecord, StepRecord
    from iterrag.corpus import Chunk
    from iterrag.index import ScoredChunk

    recs = []
    for t, (query, snippets, partial) in enumerate(steps, start=1):
        hits = [ScoredChunk(Chunk(f"s{t}-{i}#0000", f"s{t}-{i}", 0, len(s.split()), s), 1.0 - i / 100)
                for i, s in enumerate(snippets)]
        recs.append(StepRecord(t, query, hits, partial))
    return RunRecord(q.question_id, model_id, recs, final_answer=final_answer, finalize_reason=finalize_reason)


# ---- acceptance summary: one line per criterion ----------------------------------

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    crit = name.split("_")[2]
    if report.when == "call" or (report.when == "setup" and report.skipped):
        if hasattr(report, "wasxfail"):
            status = "FAIL" if report.skipped else "PASS"
        elif report.skipped:
            status = "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
        prev = _ACCEPTANCE.get(crit)
        if prev is None or prev[0] == "PASS":
            _ACCEPTANCE[crit] = (status, name)
    elif report.failed:
        _ACCEPTANCE[crit] = ("FAIL", name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=int):
        status, name = _ACCEPTANCE[crit]
        terminalreporter.write_line(f"ACCEPTANCE {crit} {status}: {name}")
