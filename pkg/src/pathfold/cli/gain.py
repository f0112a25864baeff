"""Expected-gain scoring of candidate responses.

Each response lists the gain it earns under each outcome and the outcome
probabilities, normally taken from a predictive distribution. Responses
are scored independently; correlations between responses are not modelled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ValidationError

PROBABILITY_TOL = 1e-9


@dataclass(frozen=True)
class ResponseOption:
    label: str
    values: tuple[float, ...]
    probabilities: tuple[float, ...]
    exhaustive: bool = True

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if len(self.values) != len(self.probabilities):
            raise ValidationError(f"{len(self.values)} values but {len(self.probabilities)} "
                                  "probabilities", self.label)
        if not self.values:
            raise ValidationError("a response needs at least one outcome", self.label)
        if any(not math.isfinite(v) for v in self.values):
            raise ValidationError("gain values must be finite", self.label)
        if any(not (p >= 0.0) for p in self.probabilities):
            raise ValidationError("probabilities must be non-negative", self.label)
        total = math.fsum(self.probabilities)
        if self.exhaustive and abs(total - 1.0) > PROBABILITY_TOL:
            raise ValidationError(f"probabilities sum to {total!r}, not 1", self.label)
        if not self.exhaustive and total > 1.0 + PROBABILITY_TOL:
            raise ValidationError(f"probabilities sum to {total!r} > 1", self.label)

    @property
    def expected(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probabilities))

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseOption":
        try:
            return cls(str(d["label"]), tuple(d["values"]), tuple(d["probabilities"]),
                       bool(d.get("exhaustive", True)))
        except KeyError as exc:
            raise ValidationError(f"response is missing {exc.args[0]!r}") from None


def expected_gain(options) -> list[tuple[str, float]]:
    """``(label, sum of value * probability)`` for every option, best first.

    Ties in expected gain are ordered by label (ascending string order).
    """
    scored = [(o.label, o.expected) for o in options]
    return sorted(scored, key=lambda item: (-item[1], item[0]))
