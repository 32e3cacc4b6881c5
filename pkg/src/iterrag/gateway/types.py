from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple
from urllib.parse import urlparse

HTTP_ADAPTERS = ("openai", "anthropic")
LOCAL_ADAPTERS = ("scripted", "hashing")


class GatewayError(RuntimeError):
    retryable = False


class TransientError(GatewayError):
    """Transport failure or 5xx; retried."""

    retryable = True


class RateLimitError(TransientError):
    pass


class AuthError(GatewayError):
    pass


class PreconditionError(GatewayError, ValueError):
    pass


class Message(NamedTuple):
    role: str
    content: str


class CallTag(NamedTuple):
    """Routing metadata for a call; real backends ignore it, scripted ones key on it."""

    question_id: str = ""
    step: int = 0
    role: str = ""


@dataclass(frozen=True)
class ModelConfig:
    model_id: str
    adapter: str = "scripted"
    endpoint: str = ""
    api_key_env: str | None = None
    reasoning_mode: bool = False
    max_output_tokens: int = 8196
    temperature: float = 0.0
    provider_model: str | None = None
    script: str | None = None
    dim: int | None = None

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id is required")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.adapter in HTTP_ADAPTERS:
            u = urlparse(self.endpoint)
            if u.scheme not in ("http", "https") or not u.netloc:
                raise ValueError(f"malformed endpoint for {self.model_id}: {self.endpoint!r}")
        elif self.adapter not in LOCAL_ADAPTERS:
            raise ValueError(f"unknown adapter {self.adapter!r}")

    @property
    def wire_model(self) -> str:
        return self.provider_model or self.model_id

    def to_dict(self) -> dict:
        # the key itself is never part of the config, only the variable name
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Completion:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    reasoning_tokens: int = 0
    latency_ms: float = 0.0
    truncated: bool = False
    model_id: str = ""
    retries: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.input_tokens, self.output_tokens, self.reasoning_tokens) < 0:
            raise ValueError("token counts must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("meta")
        return d
