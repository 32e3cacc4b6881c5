"""Synthetic scripted experiment: invented reaction chains plus canned model behaviour.

Everything needed for an offline ingest -> run -> audit -> report pass is written to one
directory. Outcomes are planned per question so every difficulty band is populated and
the diagnostics see a mix of careful, premature, vague, latching and over-long runs.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import yaml

from .results import GOLD_CONTEXT, ITERATIVE, NO_CONTEXT

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "br", "kl", "tr"]
_VOWELS = ["a", "e", "i", "o", "u"]
_SUFFIX = ["ite", "ane", "ium", "ole", "ene", "ide", "ose"]

STYLES = ("careful", "alias", "overlong", "early", "vague", "latch")
# planned failing-model counts: two per band so easy/medium/hard all appear
_WRONG_COUNTS = (0, 1, 2, 5, 6, 7, 9, 10, 11)


class _Names:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def make(self) -> str:
        while True:
            syl = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(2))
            name = (syl + self.rng.choice(_SUFFIX)).capitalize()
            if name not in self.used:
                self.used.add(name)
                return name


def look_alike(name: str, taken: set[str]) -> str:
    """Swap one vowel; the result stays close enough to fool a careless reader."""
    for i in range(1, len(name) - 1):
        if name[i] in "aeiou":
            for v in "yaeiou":
                cand = name[:i] + v + name[i + 1:]
                if v != name[i] and cand not in taken:
                    return cand
    return name + "x"


def _model_ids(n: int) -> list[str]:
    return [f"model-{chr(ord('a') + i)}" for i in range(n)]


def _question(i: int, n_hops: int, names: _Names) -> tuple[dict, list[dict], dict]:
    qid = f"q{i:03d}"
    ents = [names.make() for _ in range(n_hops + 1)]
    reagents = [names.make() for _ in range(n_hops)]
    hops, docs = [], []
    for h in range(n_hops):
        para = (f"When {ents[h]} is treated with {reagents[h]} under reflux, "
                f"the isolated product is {ents[h + 1]}.")
        hops.append({
            "index": h + 1,
            "sub_question": f"What does {ents[h]} give with {reagents[h]}?",
            "entity": ents[h + 1],
            "gold_paragraph": para,
        })
        docs.append({"doc_id": f"{qid}-gold-{h + 1}", "source": "synthetic", "text": para})
    final = ents[-1]
    fake = look_alike(final, names.used)
    names.used.add(fake)
    for j in range(2):
        docs.append({
            "doc_id": f"{qid}-distract-{j + 1}",
            "source": "synthetic",
            "text": f"Reports on {fake} describe it as a close relative of the {reagents[-1]} products; "
                    f"{fake} crystallises from {reagents[-1]} mixtures as a pale solid.",
        })
    text = f"Starting from {ents[0]}, what compound is finally obtained after the {n_hops}-step route?"
    alias = f"{final} compound"
    q = {"question_id": qid, "text": text, "gold_answer": final, "aliases": [alias], "hops": hops}
    info = {"qid": qid, "ents": ents, "reagents": reagents, "fake": fake, "alias": alias, "docs": docs}
    return q, docs, info


def _reply(partial: str, query: str | None) -> str:
    if query is None:
        return f"PARTIAL ANSWER: {partial}\nACTION: FINALIZE"
    return f"PARTIAL ANSWER: {partial}\nACTION: RETRIEVE\nQUERY: {query}"


def _trajectory(style: str, info: dict, budget: int) -> tuple[list[str], str, str]:
    """Planner replies, composer text and the final answer string for one run."""
    ents, reagents = info["ents"], info["reagents"]
    n = len(reagents)
    qid = info["qid"]

    def cite(h):
        return f"[{qid}-gold-{h}#0000]"

    def careful_steps():
        out = []
        for t in range(1, n + 1):
            partial = f"{ents[t - 1]} is treated with {reagents[t - 1]} to give {ents[t]}."
            nxt = None if t == n else f"What does {ents[t]} give with {reagents[t]}?"
            out.append(_reply(partial, nxt))
        return out

    final = ents[-1]
    if style in ("careful", "alias"):
        answer = final if style == "careful" else info["alias"]
        comp = f"The route ends in {final} {cite(n)}.\nFINAL ANSWER: {answer}"
        return careful_steps(), comp, answer
    if style == "overlong":
        steps = careful_steps()[:-1]
        while len(steps) < budget:
            t = min(len(steps) + 1, n)
            steps.append(_reply(f"{ents[t - 1]} is treated with {reagents[t - 1]} to give {ents[t]}.",
                                f"Confirm that {ents[t]} is formed from {ents[t - 1]} with {reagents[t - 1]}"))
        comp = f"The route ends in {final} {cite(n)}.\nFINAL ANSWER: {final}"
        return steps, comp, final
    if style == "early":
        wrong = ents[1] if n > 1 else info["fake"]
        steps = [_reply(f"The product of the route is {wrong}.", None)]
        comp = f"The passages show {wrong} {cite(1)}.\nFINAL ANSWER: {wrong}"
        return steps, comp, wrong
    if style == "vague":
        steps = [_reply(f"{ents[0]} is the starting material.", "more information about the reaction")]
        while len(steps) < budget:
            steps.append(_reply("Nothing further is established.", "other details about this topic"))
        comp = "The passages do not support a specific product.\nFINAL ANSWER: unknown"
        return steps, comp, "unknown"
    # latch: follows the look-alike from step 2 on
    fake = info["fake"]
    steps = [_reply(f"{ents[0]} is treated with {reagents[0]} to give {ents[1]}.",
                    f"{fake} {reagents[-1]} product")]
    steps.append(_reply(f"The {reagents[-1]} product appears to be {fake}.", f"{fake} crystallises from {reagents[-1]}"))
    steps.append(_reply(f"The final product is {fake}.", None))
    comp = f"{fake} is reported from {reagents[-1]} mixtures [{qid}-distract-1#0000].\nFINAL ANSWER: {fake}"
    return steps, comp, fake


def generate(out_dir: str | Path, n_questions: int = 20, n_models: int = 11, seed: int = 0,
             budget: int = 5) -> Path:
    """Write dataset, corpus, scripts, prices and config.yaml; return the config path."""
    out = Path(out_dir)
    (out / "scripts").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    names = _Names(rng)
    models = _model_ids(n_models)
    questions, corpus, infos = [], [], []
    for i in range(n_questions):
        q, docs, info = _question(i, 1 + i % 4, names)
        questions.append(q)
        corpus += docs
        infos.append(info)
    for j in range(max(10, n_questions)):
        corpus.append({"doc_id": f"filler-{j:03d}", "source": "synthetic",
                       "text": f"{names.make()} is a common laboratory solvent stored under nitrogen."})

    scripts = {m: [] for m in models}
    judge: list[dict] = []
    # per-model verbosity so token scaling differs across the roster
    verbosity = {m: 40 + 15 * k for k, m in enumerate(models)}

    def add_judge(info, regime, m, answer):
        if answer.casefold() == info["ents"][-1].casefold():
            return
        ok = answer == info["alias"]
        judge.append({"question_id": info["qid"], "step": 0, "role": f"judge:{regime}:{m}",
                      "text": "true" if ok else "false"})

    failing_styles = ("early", "vague", "latch")
    for qi, info in enumerate(infos):
        n_wrong = min(_WRONG_COUNTS[qi % len(_WRONG_COUNTS)], n_models)
        wrong = set(rng.sample(models, n_wrong))
        final = info["ents"][-1]
        for k, m in enumerate(models):
            ok = m not in wrong
            style = (("careful", "alias", "overlong")[(qi + k) % 3] if ok
                     else failing_styles[(qi + k) % 3])
            steps, comp, answer = _trajectory(style, info, budget)
            base = verbosity[m]
            for t, text in enumerate(steps, start=1):
                scripts[m].append({"question_id": info["qid"], "step": t, "role": "planner",
                                   "text": text, "output_tokens": base + 10 * t})
            scripts[m].append({"question_id": info["qid"], "step": len(steps), "role": "composer",
                               "text": comp, "output_tokens": base})
            add_judge(info, ITERATIVE, m, answer)

            # single-shot regimes: gold context mostly succeeds, parametric recall rarely
            gold_ok = rng.random() < (0.85 if ok else 0.6)
            gold_ans = final if gold_ok else info["ents"][max(0, len(info["ents"]) - 2)]
            scripts[m].append({"question_id": info["qid"], "step": 0, "role": GOLD_CONTEXT,
                               "text": f"FINAL ANSWER: {gold_ans}", "output_tokens": base // 2})
            add_judge(info, GOLD_CONTEXT, m, gold_ans)
            r = rng.random()
            if r < 0.1:
                scripts[m].append({"question_id": info["qid"], "step": 0, "role": NO_CONTEXT,
                                   "text": "", "output_tokens": base // 3, "truncated": True})
            else:
                nc_ans = final if r < 0.35 else info["fake"]
                scripts[m].append({"question_id": info["qid"], "step": 0, "role": NO_CONTEXT,
                                   "text": f"FINAL ANSWER: {nc_ans}", "output_tokens": base // 3})
                add_judge(info, NO_CONTEXT, m, nc_ans)

    # one transient rate limit, retried by the gateway
    first = models[0]
    scripts[first].insert(0, {"question_id": infos[0]["qid"], "step": 1, "role": "planner", "error": "rate_limit"})

    def dump(path: Path, rows: list[dict]):
        path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")

    dump(out / "dataset.jsonl", questions)
    dump(out / "corpus.jsonl", corpus)
    for m, entries in scripts.items():
        (out / "scripts" / f"{m}.json").write_text(json.dumps({"responses": entries}, indent=1), encoding="utf-8")
    (out / "scripts" / "judge.json").write_text(json.dumps({"responses": judge}, indent=1), encoding="utf-8")
    prices = {m: {"input_per_1k": 0.001 * (k + 1), "output_per_1k": 0.002 * (k + 1)} for k, m in enumerate(models)}
    prices["judge"] = {"input_per_1k": 0.0005, "output_per_1k": 0.001}
    (out / "prices.json").write_text(json.dumps(prices, indent=1), encoding="utf-8")
    cfg = {
        "corpus": "corpus.jsonl",
        "dataset": "dataset.jsonl",
        "index_dir": "index",
        "output_dir": "out",
        "budget": budget,
        "models": [{"model_id": m, "adapter": "scripted", "script": f"scripts/{m}.json"} for m in models],
        "judge": {"model_id": "judge", "adapter": "scripted", "script": "scripts/judge.json"},
        "embedder": {"model_id": "hashing-512", "adapter": "hashing", "dim": 512},
        "auditor_mode": "deterministic",
        "prices": "prices.json",
        "deterministic": True,
    }
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return path
