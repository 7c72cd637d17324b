"""Accuracy-plus-format scoring of decoded completions.

The total reward is the sum of a binary correctness term (the last boxed
answer matches the gold integer) and a structural term granting +0.25 for
each of the four required tags. Both terms are computed on the raw decoded
text, independently of each other.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

REQUIRED_TAGS = ("<think>", "</think>", "<answer>", "</answer>")
TAG_VALUE = 0.25
_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")


@dataclass(frozen=True)
class RewardBreakdown:
    acc: float
    fmt: float

    @property
    def total(self) -> float:
        return self.acc + self.fmt


def extract_answer(text: str):
    """Content of the last ``\\boxed{...}`` as an int, or None."""
    matches = _BOXED.findall(text)
    if not matches:
        return None
    raw = matches[-1].strip()
    try:
        return int(raw)
    except ValueError:
        return None


def format_reward(text: str, strict: bool = False) -> float:
    """+0.25 per required tag present; capped once per tag type.

    With ``strict=True`` a tag only counts when it appears after the previous
    required tag, i.e. credit goes to the longest in-order prefix of
    ``<think> </think> <answer> </answer>``.
    """
    if not strict:
        return TAG_VALUE * sum(1 for tag in REQUIRED_TAGS if tag in text)
    count = 0
    cursor = 0
    for tag in REQUIRED_TAGS:
        found = text.find(tag, cursor)
        if found < 0:
            break
        count += 1
        cursor = found + len(tag)
    return TAG_VALUE * count


def score(text: str, gold: int, strict: bool = False) -> RewardBreakdown:
    """Pure scoring function: identical text always yields the same breakdown."""
    acc = 1.0 if extract_answer(text) == gold else 0.0
    return RewardBreakdown(acc=acc, fmt=format_reward(text, strict=strict))
