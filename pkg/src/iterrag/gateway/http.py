"""HTTP adapters for OpenAI-compatible and Anthropic-style chat/embedding APIs."""

from __future__ import annotations

import os
import time
from typing import Sequence

import httpx
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


def _raise_for_status(resp: httpx.Response) -> None:
    if resp.status_code in (401, 403):
        raise AuthError(f"auth failure ({resp.status_code})")
    if resp.status_code == 429:
        raise RateLimitError("rate limited (429)")
    if resp.status_code >= 500:
        raise TransientError(f"server error ({resp.status_code})")
    if resp.status_code >= 400:
        raise GatewayError(f"request rejected ({resp.status_code}): {resp.text[:200]}")


def _api_key(cfg: ModelConfig) -> str | None:
    if not cfg.api_key_env:
        return None
    key = os.environ.get(cfg.api_key_env)
    if not key:
        raise AuthError(f"environment variable {cfg.api_key_env} is not set")
    return key


class _HttpAdapter:
    path = ""

    def __init__(self, client: httpx.Client | None = None, timeout: float = 120.0):
        self.client = client or httpx.Client(timeout=timeout)

    def url(self, cfg: ModelConfig, path: str | None = None) -> str:
        path = self.path if path is None else path
        base = cfg.endpoint.rstrip("/")
        return base if base.endswith(path) else base + path

    def _post(self, url: str, payload: dict, headers: dict) -> dict:
        try:
            resp = self.client.post(url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        _raise_for_status(resp)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransientError("response body is not JSON") from exc


class OpenAIChatAdapter(_HttpAdapter):
    """POST {endpoint}/chat/completions with the OpenAI request/response schema."""

    path = "/chat/completions"

    def complete(self, cfg: ModelConfig, messages: Sequence[Message], tag: CallTag) -> Completion:
        headers = {}
        key = _api_key(cfg)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": cfg.wire_model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }
        if cfg.reasoning_mode:
            payload["max_completion_tokens"] = cfg.max_output_tokens
        else:
            payload["max_tokens"] = cfg.max_output_tokens
            payload["temperature"] = cfg.temperature
        t0 = time.perf_counter()
        body = self._post(self.url(cfg), payload, headers)
        latency = (time.perf_counter() - t0) * 1000
        try:
            choice = body["choices"][0]
            text = choice["message"].get("content") or ""
            finish = choice.get("finish_reason")
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected response shape: {str(body)[:200]}") from exc
        usage = body.get("usage") or {}
        details = usage.get("completion_tokens_details") or {}
        return Completion(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            reasoning_tokens=int(details.get("reasoning_tokens") or 0),
            latency_ms=latency,
            truncated=finish == "length",
            model_id=cfg.model_id,
        )

    def embed(self, cfg: ModelConfig, texts: Sequence[str]) -> list[np.ndarray]:
        headers = {}
        key = _api_key(cfg)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = self._post(self.url(cfg, "/embeddings"), {"model": cfg.wire_model, "input": list(texts)}, headers)
        try:
            rows = sorted(body["data"], key=lambda r: r["index"])
            return [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise GatewayError("unexpected embedding response shape") from exc


class AnthropicAdapter(_HttpAdapter):
    """POST {endpoint}/v1/messages; the leading system message goes in the ``system`` field."""

    path = "/v1/messages"
    api_version = "2023-06-01"

    def complete(self, cfg: ModelConfig, messages: Sequence[Message], tag: CallTag) -> Completion:
        headers = {"anthropic-version": self.api_version}
        key = _api_key(cfg)
        if key:
            headers["x-api-key"] = key
        system = messages[0].content if messages and messages[0].role == "system" else None
        rest = [m for m in messages if m.role != "system"]
        payload = {
            "model": cfg.wire_model,
            "max_tokens": cfg.max_output_tokens,
            "messages": [{"role": m.role, "content": m.content} for m in rest],
        }
        if system:
            payload["system"] = system
        if not cfg.reasoning_mode:
            payload["temperature"] = cfg.temperature
        t0 = time.perf_counter()
        body = self._post(self.url(cfg), payload, headers)
        latency = (time.perf_counter() - t0) * 1000
        blocks = body.get("content") or []
        text = "".join(b.get("text", "") for b in blocks if b.get("type") == "text")
        usage = body.get("usage") or {}
        return Completion(
            text=text,
            input_tokens=int(usage.get("input_tokens", 0)),
            output_tokens=int(usage.get("output_tokens", 0)),
            latency_ms=latency,
            truncated=body.get("stop_reason") == "max_tokens",
            model_id=cfg.model_id,
        )
