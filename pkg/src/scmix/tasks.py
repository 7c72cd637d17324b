"""Synthetic arithmetic tasks, the character-level vocabulary, and dataset files.

Prompts look like ``17+25=``; the model is trained to answer inside a fixed
tag protocol: ``<think> ... </think><answer>\\boxed{gold}</answer>``. The
structural tags are atomic vocabulary tokens so a tiny model can learn the
format without spending sequence length on spelling them out.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, TokenizeError

DIGITS = tuple("0123456789")
OPERATORS = ("+", "-", "*", "=")
TAG_TOKENS = ("<think>", "</think>", "<answer>", "</answer>", "\\boxed{", "}")
SPECIALS = ("<bos>", "<eos>", "<pad>")

TIERS = ("1-digit", "2-digit", "mixed-op")


class Vocab:
    """Fixed bijective token <-> id map with longest-match tokenization."""

    def __init__(self):
        self.tokens = list(DIGITS + OPERATORS + TAG_TOKENS + (" ",) + SPECIALS)
        self.id_of = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.id_of) != len(self.tokens):
            raise ContractError("duplicate token in vocabulary")
        self._by_length = sorted(self.tokens, key=len, reverse=True)
        self.bos_id = self.id_of["<bos>"]
        self.eos_id = self.id_of["<eos>"]
        self.pad_id = self.id_of["<pad>"]

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        ids = []
        i = 0
        while i < len(text):
            for tok in self._by_length:
                if text.startswith(tok, i):
                    ids.append(self.id_of[tok])
                    i += len(tok)
                    break
            else:
                raise TokenizeError(
                    f"cannot tokenize {text[i]!r} at position {i}", position=i
                )
        return ids

    def decode(self, ids, strip_special: bool = False) -> str:
        parts = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= len(self.tokens):
                raise TokenizeError(f"token id {i} out of range")
            tok = self.tokens[i]
            if strip_special and tok in SPECIALS:
                continue
            parts.append(tok)
        return "".join(parts)


@dataclass(frozen=True)
class TaskInstance:
    prompt: str
    gold: int
    tier: str


def evaluate_expression(expr: str) -> int:
    """Exact integer evaluation with * binding tighter than + and -."""
    terms: list[int] = []
    ops: list[str] = []
    num = ""
    sign = 1
    i = 0
    while i < len(expr):
        ch = expr[i]
        if ch.isdigit():
            num += ch
        elif ch in "+-*":
            if num == "" and ch == "-" and not terms and not ops:
                sign = -1
            elif num == "":
                raise DataError(f"malformed expression {expr!r}")
            else:
                terms.append(sign * int(num))
                ops.append(ch)
                num, sign = "", 1
        else:
            raise DataError(f"unexpected character {ch!r} in expression {expr!r}")
        i += 1
    if num == "":
        raise DataError(f"malformed expression {expr!r}")
    terms.append(sign * int(num))

    # multiplication pass, then left-to-right addition/subtraction
    k = 0
    while k < len(ops):
        if ops[k] == "*":
            terms[k] = terms[k] * terms[k + 1]
            del terms[k + 1], ops[k]
        else:
            k += 1
    result = terms[0]
    for op, term in zip(ops, terms[1:]):
        result = result + term if op == "+" else result - term
    return result


def gen_task(seed: int, tier: str) -> TaskInstance:
    """Sample one task; operands are uniform within the tier's range."""
    if tier not in TIERS:
        raise ContractError(f"unknown tier {tier!r}, expected one of {TIERS}")
    rng = np.random.default_rng(seed)
    ops = "+-*"
    if tier == "1-digit":
        a, b = rng.integers(0, 10, size=2)
        prompt = f"{a}{ops[rng.integers(0, 3)]}{b}="
    elif tier == "2-digit":
        a, b = rng.integers(10, 100, size=2)
        prompt = f"{a}{ops[rng.integers(0, 3)]}{b}="
    else:
        a, b, c = rng.integers(0, 21, size=3)
        op1, op2 = ops[rng.integers(0, 3)], ops[rng.integers(0, 3)]
        prompt = f"{a}{op1}{b}{op2}{c}="
    return TaskInstance(prompt=prompt, gold=evaluate_expression(prompt[:-1]), tier=tier)


def infer_tier(prompt: str) -> str:
    body = prompt.rstrip("=")
    n_ops = sum(1 for i, ch in enumerate(body) if ch in "+-*" and i > 0)
    if n_ops >= 2:
        return "mixed-op"
    digit_runs = [len(run) for run in body.replace("+", " ").replace("-", " ").replace("*", " ").split()]
    return "2-digit" if digit_runs and max(digit_runs) >= 2 else "1-digit"


def _trace_steps(prompt: str) -> list[str]:
    """Stepwise decomposition equations, honoring operator precedence."""
    body = prompt.rstrip("=")
    parts: list = []
    num = ""
    for ch in body:
        if ch.isdigit() or (ch == "-" and num == "" and not parts):
            num += ch
        elif ch in "+-*":
            parts.extend([int(num), ch])
            num = ""
        else:
            raise DataError(f"unexpected character {ch!r} in prompt {prompt!r}")
    parts.append(int(num))

    total = evaluate_expression(body)
    if len(parts) == 3:
        a, op, b = parts
        return [f"{a}{op}{b}={total}"]
    a, op1, b, op2, c = parts
    if op2 == "*" and op1 != "*":
        bc = b * c
        return [f"{b}{op2}{c}={bc}", f"{a}{op1}{bc}={total}"]
    ab = evaluate_expression(f"{a}{op1}{b}")
    return [f"{a}{op1}{b}={ab}", f"{ab}{op2}{c}={total}"]


def render_exemplar(task: TaskInstance) -> str:
    """Full training string: prompt plus a tagged trace and boxed answer.

    Always scores total reward 2.0 against the task's gold answer.
    """
    trace = " ".join(_trace_steps(task.prompt))
    return (
        f"<bos>{task.prompt}<think>{trace}</think>"
        f"<answer>\\boxed{{{task.gold}}}</answer><eos>"
    )


def completion_text(task: TaskInstance) -> str:
    """The exemplar's completion part (everything after the prompt)."""
    trace = " ".join(_trace_steps(task.prompt))
    return f"<think>{trace}</think><answer>\\boxed{{{task.gold}}}</answer><eos>"


def prompt_tokens(vocab: Vocab, task: TaskInstance) -> list[int]:
    return [vocab.bos_id] + vocab.encode(task.prompt)


def save_dataset(path, tasks) -> None:
    lines = [f"{t.prompt}\t{t.gold}\n" for t in tasks]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_dataset(path) -> list[TaskInstance]:
    text = Path(path).read_text(encoding="utf-8")
    tasks = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected 'prompt<TAB>gold', got {line!r}")
        prompt, gold_text = fields
        try:
            gold = int(gold_text)
        except ValueError:
            raise DataError(f"{path}:{lineno}: gold answer {gold_text!r} is not an integer")
        if evaluate_expression(prompt.rstrip("=")) != gold:
            raise DataError(f"{path}:{lineno}: gold {gold} does not match {prompt!r}")
        tasks.append(TaskInstance(prompt=prompt, gold=gold, tier=infer_tier(prompt)))
    if not tasks:
        raise DataError(f"{path}: dataset is empty")
    return tasks


def make_tasks(seed: int, tier: str, count: int) -> list[TaskInstance]:
    """Deterministic batch of tasks with per-instance derived seeds."""
    root = np.random.SeedSequence([seed])
    child_seeds = root.generate_state(count, np.uint64)
    return [gen_task(int(s), tier) for s in child_seeds]
