"""Versioned prompt assets, referenced by content hash in run manifests."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template

PROMPT_NAMES = (
    "planner",
    "composer",
    "no_context",
    "gold_context",
    "verifier",
    "auditor_coverage",
    "auditor_query",
    "auditor_faithfulness",
)

_FINAL = re.compile(r"^\s*\**\s*final answer\s*\**\s*[:\-]\s*(.*)$", re.IGNORECASE | re.MULTILINE)


@dataclass(frozen=True)
class PromptAsset:
    name: str
    text: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def render(self, **values) -> str:
        return Template(self.text).safe_substitute(**values)


@lru_cache(maxsize=None)
def load_prompt(name: str) -> PromptAsset:
    if name not in PROMPT_NAMES:
        raise KeyError(f"unknown prompt asset {name!r}")
    text = resources.files("iterrag").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")
    return PromptAsset(name, text)


def prompt_hashes() -> dict[str, str]:
    return {name: load_prompt(name).sha256 for name in PROMPT_NAMES}


def extract_final_answer(text: str) -> str:
    """Return the text after the last ``FINAL ANSWER:`` label, or the whole reply stripped."""
    matches = _FINAL.findall(text or "")
    for candidate in reversed(matches):
        if candidate.strip():
            return candidate.strip()
    return (text or "").strip()
