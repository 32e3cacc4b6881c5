"""Surface-form matching, anchor extraction and sentence splitting for the auditors.

Anchor rules (version ``ANCHOR_RULES_VERSION``), applied to whitespace tokens after
stripping edge punctuation:

* formula-like tokens: containing a digit, ``(``, ``)``, ``=`` or an internal capital (``LiCl``)
* all-caps acronyms of two or more letters (``HAT``)
* capitalized words that do not start a sentence
* any known entity phrase (hop entities, aliases) found in the text

Words on ``GENERIC_WORDS`` are never anchors.
"""

from __future__ import annotations

import re
import unicodedata
from difflib import SequenceMatcher
from functools import lru_cache
from typing import Iterable, Sequence

ANCHOR_RULES_VERSION = "1"

STOPWORDS = frozenset(
    """a an the of in on at to for from by with without about into onto over under and or not no nor
    is are was were be been being am do does did has have had it its this that these those there
    which who whom whose what when where why how than then so such as if but also very more most
    can could may might will would shall should must their them they he she his her we our you your
    i me my one ones any some all each both either neither other another same between within upon
    after before during while through per via using used use find tell know learn information""".split()
)

GENERIC_WORDS = frozenset(
    """catalyst catalysts compound compounds reaction reactions solvent solvents molecule molecules
    material materials product products reagent reagents substance substances structure structures
    mechanism mechanisms process processes method methods system systems property properties
    element elements species sample samples answer question step steps study studies paper result
    results overview based type types class classes group groups form forms the a an it this that
    these those what which however therefore thus""".split()
)

_EDGE = "\"'`.,;:!?«»“”‘’[]{}"
_CITE = re.compile(r"\[[^\[\]]*\]")
_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+")
_WORD = re.compile(r"[^\W_]+(?:[-'][^\W_]+)*")


def norm(text: str) -> str:
    return " ".join(unicodedata.normalize("NFKC", text or "").casefold().split())


@lru_cache(maxsize=4096)
def _form_pattern(form: str) -> re.Pattern:
    return re.compile(r"(?<![^\W_])" + re.escape(norm(form)) + r"(?![^\W_])")


def contains_form(text: str, form: str) -> bool:
    """Case-folded, whitespace-normalized phrase match at word boundaries."""
    f = norm(form)
    if not f:
        return False
    return _form_pattern(f).search(norm(text)) is not None


def mentions_any(text: str, forms: Iterable[str]) -> bool:
    return any(contains_form(text, f) for f in forms)


def content_words(text: str) -> set[str]:
    return {w for w in _WORD.findall(norm(text)) if w not in STOPWORDS and len(w) > 1}


def strip_citations(text: str) -> str:
    return _CITE.sub(" ", text or "")


def split_sentences(text: str) -> list[str]:
    text = " ".join(strip_citations(text).split())
    if not text:
        return []
    return [s.strip() for s in _SENT_SPLIT.split(text) if content_words(s)]


def _is_formula(tok: str) -> bool:
    if any(ch.isdigit() for ch in tok) and any(ch.isalpha() for ch in tok):
        return True
    if any(ch in "()=" for ch in tok) and any(ch.isalpha() for ch in tok):
        return True
    return any(ch.isupper() for ch in tok[1:]) and any(ch.islower() for ch in tok)


def _is_acronym(tok: str) -> bool:
    letters = [c for c in tok if c.isalpha()]
    return len(letters) >= 2 and all(c.isupper() for c in letters) and tok.isalnum()


def extract_anchors(text: str, known_entities: Sequence[str] = ()) -> list[str]:
    """Salient anchors in order of first appearance, deduplicated case-insensitively."""
    out: list[str] = []
    seen: set[str] = set()

    def add(a: str) -> None:
        key = norm(a)
        if key and key not in seen and key not in GENERIC_WORDS:
            seen.add(key)
            out.append(a)

    for ent in known_entities:
        if ent and contains_form(text, ent):
            add(ent)
    for sentence in split_sentences(text):
        for i, raw in enumerate(sentence.split()):
            tok = raw.strip(_EDGE)
            # prose parentheses, e.g. "(LiCl)" or "LiCl)," but keep "Fe(IV)=O"
            if tok.startswith("(") and tok.endswith(")") and "(" not in tok[1:-1] and ")" not in tok[1:-1]:
                tok = tok[1:-1]
            if tok.startswith("(") and tok.count("(") > tok.count(")"):
                tok = tok[1:]
            if tok.endswith(")") and tok.count(")") > tok.count("("):
                tok = tok[:-1]
            if len(tok) < 2 or norm(tok) in STOPWORDS:
                continue
            if _is_formula(tok) or _is_acronym(tok):
                add(tok)
            elif i > 0 and tok[0].isupper() and tok.isalpha():
                add(tok)
    return out


def similar(a: str, b: str, threshold: float = 0.75) -> bool:
    return SequenceMatcher(None, norm(a), norm(b)).ratio() >= threshold
