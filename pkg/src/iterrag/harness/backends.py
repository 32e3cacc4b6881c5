"""Build a Gateway from the model roster in an experiment config."""

from __future__ import annotations

import time

from ..gateway import (
    AnthropicAdapter,
    Gateway,
    HashingEmbedder,
    ModelConfig,
    OpenAIChatAdapter,
    ScriptedBackend,
)
from .config import ConfigError, ExperimentConfig


def chat_backend(cfg: ExperimentConfig, m: ModelConfig):
    if m.adapter == "scripted":
        path = cfg.path(m.script)
        return ScriptedBackend.from_file(path) if path else ScriptedBackend()
    if m.adapter == "openai":
        return OpenAIChatAdapter()
    if m.adapter == "anthropic":
        return AnthropicAdapter()
    raise ConfigError(f"model {m.model_id}: adapter {m.adapter!r} cannot serve chat")


def embed_backend(m: ModelConfig):
    if m.adapter == "hashing":
        return HashingEmbedder(m.dim or 512)
    if m.adapter == "openai":
        return OpenAIChatAdapter()
    raise ConfigError(f"embedder {m.model_id}: adapter {m.adapter!r} cannot embed")


def build_gateway(cfg: ExperimentConfig, sleep=time.sleep) -> Gateway:
    chat = {}
    for m in cfg.models + [x for x in (cfg.judge, cfg.auditor) if x is not None]:
        if m.model_id not in chat:
            chat[m.model_id] = chat_backend(cfg, m)
    return Gateway(
        chat,
        {cfg.embedder.model_id: embed_backend(cfg.embedder)},
        max_attempts=cfg.max_attempts,
        concurrency=cfg.workers,
        sleep=sleep,
        record_latency=not cfg.deterministic,
    )
