from .client import Gateway, UsageLedger, backoff_delays
from .http import AnthropicAdapter, OpenAIChatAdapter
from .pricing import PriceTable, PricingError, accumulate_cost
from .scripted import HashingEmbedder, ScriptedBackend, ScriptedEmbedder, ScriptMissError, count_tokens
from .types import (
    AuthError,
    CallTag,
    Completion,
    GatewayError,
    Message,
    ModelConfig,
    PreconditionError,
    RateLimitError,
    TransientError,
)

__all__ = [
    "AnthropicAdapter", "AuthError", "CallTag", "Completion", "Gateway", "GatewayError",
    "HashingEmbedder", "Message", "ModelConfig", "OpenAIChatAdapter", "PreconditionError",
    "PriceTable", "PricingError", "RateLimitError", "ScriptMissError", "ScriptedBackend",
    "ScriptedEmbedder", "TransientError", "UsageLedger", "accumulate_cost", "backoff_delays",
    "count_tokens",
]
