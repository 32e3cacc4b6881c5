"""Per-model token prices and cost accumulation in exact decimal arithmetic."""

from __future__ import annotations

import json
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping

from .types import Completion

_THOUSAND = Decimal(1000)


class PricingError(ValueError):
    pass


class PriceTable:
    def __init__(self, prices: Mapping[str, Mapping[str, object]]):
        self._prices: dict[str, tuple[Decimal, Decimal]] = {}
        for model_id, entry in prices.items():
            try:
                inp = Decimal(str(entry["input_per_1k"]))
                out = Decimal(str(entry["output_per_1k"]))
            except (KeyError, TypeError) as exc:
                raise PricingError(f"bad price entry for {model_id}: {entry!r}") from exc
            if inp < 0 or out < 0:
                raise PricingError(f"negative price for {model_id}")
            self._prices[model_id] = (inp, out)

    @classmethod
    def load(cls, path: str | Path) -> "PriceTable":
        # parse_float keeps "0.003" exact instead of routing it through binary floats
        return cls(json.loads(Path(path).read_text(), parse_float=Decimal))

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._prices

    def rates(self, model_id: str) -> tuple[Decimal, Decimal]:
        try:
            return self._prices[model_id]
        except KeyError:
            raise PricingError(f"no price entry for model {model_id!r}") from None

    def cost(self, model_id: str, input_tokens: int, output_tokens: int) -> Decimal:
        inp, out = self.rates(model_id)
        return Decimal(input_tokens) / _THOUSAND * inp + Decimal(output_tokens) / _THOUSAND * out

    def to_dict(self) -> dict:
        return {m: {"input_per_1k": str(i), "output_per_1k": str(o)} for m, (i, o) in sorted(self._prices.items())}


def accumulate_cost(usages: Iterable[Completion], prices: PriceTable) -> Decimal:
    total = Decimal(0)
    for u in usages:
        total += prices.cost(u.model_id, u.input_tokens, u.output_tokens)
    return total
