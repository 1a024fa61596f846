"""Serialize a step record into the single string a classifier reads."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .data import StepRecord

DEFAULT_MAX_TOKENS = 128
LITERAL_SEPARATOR = "|"
NO_ACTION = "NO_ACTION"


class EmptyEquation(ValueError):
    pass


class InputMode(str, Enum):
    CONTROL = "control"
    ACTION = "action_included"

    @classmethod
    def parse(cls, value: "str | InputMode") -> "InputMode":
        if isinstance(value, cls):
            return value
        return cls.ACTION if value in ("action", "action_included") else cls(value)


@dataclass(frozen=True)
class SerializedInput:
    text: str
    truncated: bool = False


def build_input(
    record: StepRecord,
    mode: InputMode | str = InputMode.CONTROL,
    separator: str = LITERAL_SEPARATOR,
    count_tokens: Callable[[str], int] | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> SerializedInput:
    """Join prior equation, optional action text and current equation.

    ``separator`` is the model family's segment marker (``[SEP]``, ``</s>``,
    or ``|`` when it has none).  ``count_tokens`` measures length in model
    tokens (characters if omitted).  Over-long inputs lose characters from
    the front of the prior equation first, then from the front of the action
    text, and only then from the end of the current equation.
    """
    mode = InputMode.parse(mode)
    prior = record.prior_step.equation.strip()
    current = record.current_step.equation.strip()
    if not prior or not current:
        raise EmptyEquation(f"record {record.record_id!r} has an empty equation")
    count = count_tokens or len
    if mode is InputMode.ACTION:
        action = (record.current_step.action or "").strip() or NO_ACTION
        parts = [prior, action, current]
    else:
        parts = [prior, current]

    def render(ps) -> str:
        return f" {separator} ".join(ps)

    text = render(parts)
    if count(text) <= max_tokens:
        return SerializedInput(text, False)

    # trim each part in turn; the last part is trimmed from its end
    for idx in range(len(parts)):
        from_end = idx == len(parts) - 1
        original = parts[idx]

        def fits(n_removed: int) -> bool:
            trial = list(parts)
            trial[idx] = original[: len(original) - n_removed] if from_end else original[n_removed:]
            return count(render(trial)) <= max_tokens

        if not fits(len(original)):
            parts[idx] = ""
            continue
        lo, hi = 0, len(original)  # smallest removal that fits, by bisection
        while lo < hi:
            mid = (lo + hi) // 2
            if fits(mid):
                hi = mid
            else:
                lo = mid + 1
        parts[idx] = original[: len(original) - lo] if from_end else original[lo:]
        break
    return SerializedInput(render(parts), True)
