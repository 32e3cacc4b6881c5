"""Deterministic offline backends: canned chat replies and local embedders."""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .types import (
    AuthError,
    CallTag,
    Completion,
    GatewayError,
    Message,
    ModelConfig,
    RateLimitError,
    TransientError,
)

Key = tuple[str, int, str]
Responder = Callable[[Sequence[Message], CallTag], str]

_ERRORS = {"rate_limit": RateLimitError, "transport": TransientError, "auth": AuthError}


class ScriptMissError(GatewayError):
    pass


def count_tokens(text: str) -> int:
    """Whitespace token count used by the offline backends."""
    return len(text.split())


class ScriptedBackend:
    """Replays canned replies keyed by (question_id, step, role).

    Several entries under one key are served in order; the last one repeats once the
    queue is exhausted. An entry may carry explicit token counts, ``truncated`` or an
    ``error`` kind (``rate_limit``, ``transport``, ``auth``) to exercise failure paths.
    Unmatched keys go to ``responder`` when one is given.
    """

    def __init__(self, entries: Sequence[Mapping] = (), responder: Responder | None = None,
                 delay_s: float = 0.0):
        self._script: dict[Key, list[Mapping]] = defaultdict(list)
        for e in entries:
            self._script[(str(e.get("question_id", "")), int(e.get("step", 0)), str(e.get("role", "")))].append(e)
        self._cursor: dict[Key, int] = defaultdict(int)
        self._lock = threading.Lock()
        self.responder = responder
        self.delay_s = delay_s
        self.calls: list[tuple[CallTag, list[Message]]] = []

    @classmethod
    def from_file(cls, path: str | Path, responder: Responder | None = None) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text())
        entries = data["responses"] if isinstance(data, dict) else data
        delay = float(data.get("delay_s", 0.0)) if isinstance(data, dict) else 0.0
        return cls(entries, responder=responder, delay_s=delay)

    def reset(self) -> None:
        with self._lock:
            self._cursor.clear()
            self.calls.clear()

    def _next_entry(self, key: Key) -> Mapping | None:
        with self._lock:
            queue = self._script.get(key)
            if not queue:
                return None
            i = self._cursor[key]
            self._cursor[key] = i + 1
            return queue[min(i, len(queue) - 1)]

    def complete(self, cfg: ModelConfig, messages: Sequence[Message], tag: CallTag) -> Completion:
        with self._lock:
            self.calls.append((tag, list(messages)))
        if self.delay_s:
            time.sleep(self.delay_s)
        key = (tag.question_id, tag.step, tag.role)
        entry = self._next_entry(key)
        if entry is None:
            if self.responder is None:
                raise ScriptMissError(f"no scripted reply for {key} ({cfg.model_id})")
            entry = {"text": self.responder(messages, tag)}
        if entry.get("error"):
            raise _ERRORS[entry["error"]](f"scripted {entry['error']} for {key}")
        text = str(entry.get("text", ""))
        out_tokens = int(entry.get("output_tokens", count_tokens(text)))
        in_tokens = int(entry.get("input_tokens", sum(count_tokens(m.content) for m in messages)))
        truncated = bool(entry.get("truncated", False))
        if out_tokens > cfg.max_output_tokens:
            truncated = True
            text = " ".join(text.split()[: cfg.max_output_tokens])
            out_tokens = cfg.max_output_tokens
        return Completion(
            text=text,
            input_tokens=in_tokens,
            output_tokens=out_tokens,
            reasoning_tokens=int(entry.get("reasoning_tokens", 0)),
            latency_ms=0.0,
            truncated=truncated,
            model_id=cfg.model_id,
        )


class ScriptedEmbedder:
    """Maps known texts to fixed vectors; unknown texts raise unless a fallback is set."""

    def __init__(self, table: Mapping[str, Sequence[float]], fallback: "HashingEmbedder | None" = None):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.fallback = fallback

    def embed(self, cfg: ModelConfig, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for t in texts:
            if t in self.table:
                out.append(self.table[t].copy())
            elif self.fallback is not None:
                out.extend(self.fallback.embed(cfg, [t]))
            else:
                raise ScriptMissError(f"no scripted embedding for {t[:40]!r}")
        return out


_TOKEN = re.compile(r"\w+", re.UNICODE)


class HashingEmbedder:
    """Feature-hashed bag of words (casefolded word unigrams), L2-normalized.

    Dependency-free and deterministic; good enough for lexical retrieval on synthetic
    corpora and for offline pipeline tests.
    """

    def __init__(self, dim: int = 512):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        v = int.from_bytes(h, "little")
        return v % self.dim, (1.0 if (v >> 63) & 1 else -1.0)

    def vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in _TOKEN.findall(text.casefold()):
            i, sign = self._bucket(tok)
            vec[i] += sign
        n = np.sqrt((vec * vec).sum())
        if n == 0:
            # empty/punctuation-only text still needs a valid direction
            vec[0] = 1.0
            return vec
        return vec / n

    def embed(self, cfg: ModelConfig | None, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.vector(t) for t in texts]
