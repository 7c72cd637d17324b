"""Autoregressive sampling under the concept-mixed policy.

Each group is K independent generations of one prompt, each with a seed
derived from (group seed, rollout index) so whole training runs replay
exactly. The recorded per-step log-probability is taken from the unfiltered
enhanced distribution q, the same measure the trainer recomputes, so the
importance ratio is well defined; top-k and top-p only shape what the
sampler draws from.

Rollouts read the parameters without writing; records are ordered by rollout
index regardless of how the calls are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ContractError, LengthError
from .mixing import MixingMode, mix_step
from .model import ModelParams, forward

SEED_TASKS = 1
SEED_ROLLOUT = 2
SEED_SHUFFLE = 3
SEED_EVAL = 4


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts (order-sensitive)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DecodeControls:
    temperature: float = 0.6
    top_k: int | None = 30
    top_p: float = 0.95
    max_new_tokens: int = 48
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.top_k is not None and self.top_k < 1:
            raise ContractError(f"top_k must be >= 1 or None, got {self.top_k}")
        if not 0 < self.top_p <= 1:
            raise ContractError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.max_new_tokens < 1:
            raise ContractError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class RolloutRecord:
    prompt_tokens: tuple[int, ...]
    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    entropies: tuple[float, ...]
    terminated_by: str  # "eos" | "length"
    mode: MixingMode
    seed: int

    def full_tokens(self) -> list[int]:
        return list(self.prompt_tokens) + list(self.tokens)


@dataclass(frozen=True)
class RolloutGroup:
    prompt_tokens: tuple[int, ...]
    records: tuple[RolloutRecord, ...]


def filter_probs(q: np.ndarray, top_k: int | None, top_p: float) -> np.ndarray:
    """Top-k then nucleus filtering; returns a renormalized distribution.

    The nucleus keeps the smallest prefix of the (top-k surviving) tokens,
    in descending probability, whose pre-filter mass reaches top_p. At least
    one token always survives.
    """
    v = q.shape[0]
    order = np.argsort(-q, kind="stable")
    keep = order[: min(top_k or v, v)]
    if top_p < 1.0:
        csum = np.cumsum(q[keep])
        cut = int(np.searchsorted(csum, top_p)) + 1
        keep = keep[: min(cut, keep.size)]
    out = np.zeros_like(q)
    out[keep] = q[keep]
    total = out.sum()
    if total <= 0:
        raise ContractError("filtering removed all probability mass")
    return out / total


def _entropy(q: np.ndarray) -> float:
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


def generate(
    params: ModelParams,
    prompt,
    controls: DecodeControls,
    mode: MixingMode,
    eos_id: int,
) -> RolloutRecord:
    """Sample one completion, stopping at ``eos_id`` or the length cap.

    Records the log of the pre-filter enhanced probability of every sampled
    token, plus the enhanced distribution's entropy as a diagnostic.
    """
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise ContractError("prompt must be nonempty")
    cap = params.config.max_seq_len
    if len(prompt) + controls.max_new_tokens > cap:
        raise LengthError(
            f"prompt length {len(prompt)} + max_new_tokens "
            f"{controls.max_new_tokens} exceeds max_seq_len {cap}"
        )
    rng = np.random.default_rng(controls.seed)
    ids = list(prompt)
    generated: list[int] = []
    logprobs: list[float] = []
    entropies: list[float] = []
    terminated = "length"
    for _ in range(controls.max_new_tokens):
        with ad.no_grad():
            trace = forward(params, ids)
            step = mix_step(trace.h[-1], params, mode, controls.temperature)
        q = step.q.data
        filtered = filter_probs(q, controls.top_k, controls.top_p)
        token = int(rng.choice(q.shape[0], p=filtered))
        generated.append(token)
        logprobs.append(float(np.log(q[token])))
        entropies.append(_entropy(q))
        ids.append(token)
        if token == eos_id:
            terminated = "eos"
            break
    return RolloutRecord(
        prompt_tokens=tuple(prompt),
        tokens=tuple(generated),
        logprobs=tuple(logprobs),
        entropies=tuple(entropies),
        terminated_by=terminated,
        mode=mode,
        seed=controls.seed,
    )


def sample_group(
    params: ModelParams,
    prompt,
    k: int,
    controls: DecodeControls,
    mode: MixingMode,
    eos_id: int,
) -> RolloutGroup:
    """K independent rollouts of one prompt with derived per-rollout seeds."""
    if k < 2:
        raise ContractError(f"group size must be >= 2, got {k}")
    records = []
    for index in range(k):
        child = replace(controls, seed=derive_seed(controls.seed, SEED_ROLLOUT, index))
        records.append(generate(params, prompt, child, mode, eos_id))
    return RolloutGroup(prompt_tokens=tuple(int(t) for t in prompt), records=tuple(records))


def write_rollout_dump(path, rows) -> None:
    """Debug dump: one line-delimited record per scored rollout.

    ``rows`` are dicts with prompt/generation text and reward fields.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tprompt\tgeneration\tacc\tfmt\ttotal\tterminated_by\n")
        for row in rows:
            fh.write(
                f"{row['step']}\t{row['prompt']}\t{row['generation']}\t"
                f"{row['acc']!r}\t{row['fmt']!r}\t{row['total']!r}\t{row['terminated_by']}\n"
            )
