"""Routing, retries, concurrency limits and usage accounting over chat/embedding backends."""

from __future__ import annotations

import logging
import random
import threading
import time
from collections import defaultdict
from decimal import Decimal
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .pricing import PriceTable, accumulate_cost
from .types import CallTag, Completion, GatewayError, Message, ModelConfig, PreconditionError

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 5


class ChatBackend(Protocol):
    def complete(self, cfg: ModelConfig, messages: Sequence[Message], tag: CallTag) -> Completion: ...


class EmbedBackend(Protocol):
    def embed(self, cfg: ModelConfig, texts: Sequence[str]) -> list[np.ndarray]: ...


def backoff_delays(attempts: int, base: float = 0.5, cap: float = 8.0, rng: random.Random | None = None):
    """Full-jitter exponential backoff: uniform(0, min(cap, base * 2**i))."""
    rng = rng or random.Random()
    for i in range(attempts):
        yield rng.uniform(0, min(cap, base * (2 ** i)))


class UsageLedger:
    """Thread-safe per-model record of completions."""

    def __init__(self):
        self._lock = threading.Lock()
        self._rows: dict[str, list[Completion]] = defaultdict(list)

    def add(self, c: Completion) -> None:
        with self._lock:
            self._rows[c.model_id].append(c)

    def rows(self, model_id: str | None = None) -> list[Completion]:
        with self._lock:
            if model_id is not None:
                return list(self._rows.get(model_id, ()))
            return [c for m in sorted(self._rows) for c in self._rows[m]]

    def totals(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {
                m: {
                    "calls": len(rows),
                    "input_tokens": sum(r.input_tokens for r in rows),
                    "output_tokens": sum(r.output_tokens for r in rows),
                    "reasoning_tokens": sum(r.reasoning_tokens for r in rows),
                }
                for m, rows in sorted(self._rows.items())
            }

    def cost(self, prices: PriceTable, model_id: str | None = None) -> Decimal:
        return accumulate_cost(self.rows(model_id), prices)


class Gateway:
    """Shared client layer; safe to use from several evaluation workers at once."""

    def __init__(
        self,
        chat: Mapping[str, ChatBackend] | None = None,
        embed: Mapping[str, EmbedBackend] | None = None,
        *,
        max_attempts: int = MAX_ATTEMPTS,
        concurrency: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        seed: int = 0,
        record_latency: bool = True,
    ):
        self.chat_backends = dict(chat or {})
        self.embed_backends = dict(embed or {})
        self.max_attempts = max_attempts
        self.sleep = sleep
        self.record_latency = record_latency
        self.usage = UsageLedger()
        self._rng = random.Random(seed)
        self._limiters: dict[str, threading.BoundedSemaphore] = defaultdict(
            lambda: threading.BoundedSemaphore(concurrency)
        )
        self._limiter_lock = threading.Lock()

    def _limiter(self, model_id: str) -> threading.BoundedSemaphore:
        with self._limiter_lock:
            return self._limiters[model_id]

    def _with_retries(self, label: str, fn):
        delays = backoff_delays(self.max_attempts - 1, rng=self._rng)
        attempt = 0
        while True:
            try:
                return fn(), attempt
            except GatewayError as exc:
                if not exc.retryable or attempt >= self.max_attempts - 1:
                    raise
                delay = next(delays)
                attempt += 1
                logger.warning("%s: %s; retry %d/%d in %.2fs", label, exc, attempt,
                               self.max_attempts - 1, delay)
                self.sleep(delay)

    def complete(self, cfg: ModelConfig, messages: Sequence[Message], tag: CallTag = CallTag()) -> Completion:
        messages = [m if isinstance(m, Message) else Message(*m) for m in messages]
        if not messages:
            raise PreconditionError("messages must be non-empty")
        if messages[0].role != "system":
            raise PreconditionError("first message must carry the system role")
        try:
            backend = self.chat_backends[cfg.model_id]
        except KeyError:
            raise GatewayError(f"no chat backend registered for {cfg.model_id!r}") from None
        with self._limiter(cfg.model_id):
            completion, retries = self._with_retries(
                f"complete[{cfg.model_id}]", lambda: backend.complete(cfg, messages, tag)
            )
        if retries:
            logger.info("complete[%s] succeeded after %d retries", cfg.model_id, retries)
        completion.retries = retries
        completion.model_id = cfg.model_id
        if not self.record_latency:
            completion.latency_ms = 0.0
        self.usage.add(completion)
        return completion

    def embed(self, cfg: ModelConfig, texts: Sequence[str]) -> list[np.ndarray]:
        texts = list(texts)
        if not texts or any(not t for t in texts):
            raise PreconditionError("texts must be non-empty strings")
        try:
            backend = self.embed_backends[cfg.model_id]
        except KeyError:
            raise GatewayError(f"no embedding backend registered for {cfg.model_id!r}") from None
        with self._limiter(cfg.model_id):
            vectors, _ = self._with_retries(f"embed[{cfg.model_id}]", lambda: backend.embed(cfg, texts))
        vectors = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
        if len(vectors) != len(texts):
            raise GatewayError(f"embedder returned {len(vectors)} vectors for {len(texts)} texts")
        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1:
            raise GatewayError(f"embedding dimension drift within batch: {sorted(dims)}")
        if not all(np.all(np.isfinite(v)) for v in vectors):
            raise GatewayError("embedder returned non-finite values")
        return vectors

    def embedder(self, cfg: ModelConfig) -> Callable[[list[str]], list[np.ndarray]]:
        return lambda texts: self.embed(cfg, texts)
