"""Group-relative policy optimization over the concept-mixed policy.

A rollout group's rewards are standardized against the group's own mean and
population standard deviation, replacing a learned value baseline. The loss
is the clipped surrogate with per-token importance ratios and the rollout's
scalar advantage broadcast over its tokens; there is no KL penalty and no
value network. A sequence-level ratio variant is available behind
``ratio_level="sequence"`` for A/B comparisons, but the per-token form is the
default since the product ratio explodes numerically for long sequences.

Supervised pretraining (plain next-token cross-entropy on rendered
exemplars) produces the format-capable base policy that RL starts from.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError
from .mixing import MixingMode, mixed_forward_logprobs
from .model import ModelParams, forward
from .rewards import RewardBreakdown, score
from .rollout import (
    SEED_EVAL,
    SEED_ROLLOUT,
    SEED_SHUFFLE,
    SEED_TASKS,
    DecodeControls,
    RolloutGroup,
    derive_seed,
    generate,
    sample_group,
)
from .tasks import TaskInstance, Vocab, gen_task, prompt_tokens


# ---- advantages ---------------------------------------------------------------


@dataclass(frozen=True)
class GroupAdvantages:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    mean: float
    std: float
    eps_std: float = 1e-8


def compute_advantages(rewards, eps_std: float = 1e-8) -> GroupAdvantages:
    """Standardize rewards against the group mean and population std."""
    rewards = tuple(float(r) for r in rewards)
    if len(rewards) < 2:
        raise ContractError(f"advantage baseline needs K >= 2 rewards, got {len(rewards)}")
    arr = np.array(rewards)
    mean = float(arr.mean())
    std = float(arr.std())  # population std
    adv = tuple(float(a) for a in (arr - mean) / (std + eps_std))
    return GroupAdvantages(rewards=rewards, advantages=adv, mean=mean, std=std, eps_std=eps_std)


# ---- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    k: int = 8
    clip_eps: float = 0.2
    lr: float = 5e-4  # desk scale; far larger than full-scale fine-tuning rates
    prompts_per_batch: int = 8  # x K=8 rollouts = 64 sampled completions per step
    inner_epochs: int = 1
    total_steps: int = 200
    seed: int = 0
    mode: MixingMode = MixingMode.SCM
    tier: str = "1-digit"
    task_pool_size: int = 64  # 0 draws unbounded fresh tasks instead
    rollout_temperature: float | None = 1.0  # exploration; None reuses decode temperature
    eps_std: float = 1e-8
    ratio_level: str = "token"  # or "sequence"

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ContractError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if self.k < 2:
            raise ContractError(f"group size must be >= 2, got {self.k}")
        if self.task_pool_size < 0:
            raise ContractError("task_pool_size must be >= 0")
        if self.rollout_temperature is not None and self.rollout_temperature <= 0:
            raise ContractError("rollout_temperature must be positive")
        if self.ratio_level not in ("token", "sequence"):
            raise ContractError(f"ratio_level must be token or sequence, got {self.ratio_level}")


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 8
    lr: float = 3e-3
    batch_size: int = 8
    seed: int = 0


# ---- optimizer --------------------------------------------------------------------


class Adam:
    """Adam over a named parameter set; deterministic given its state."""

    def __init__(self, params: ModelParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---- loss ------------------------------------------------------------------------------


@dataclass
class ScoredGroup:
    group: RolloutGroup
    gold: int
    breakdowns: tuple[RewardBreakdown, ...]
    advantages: GroupAdvantages


def grpo_loss(
    params: ModelParams,
    scored: list[ScoredGroup],
    clip_eps: float | None,
    mode: MixingMode,
    temperature: float,
    ratio_level: str = "token",
):
    """Clipped surrogate loss; returns (scalar Tensor, stats dict).

    Per rollout the policy log-probabilities are recomputed by teacher
    forcing under the current parameters; ``clip_eps=None`` gives the
    unclipped surrogate. Stats report the fraction of importance ratios
    outside the clip range.
    """
    if not scored:
        raise ContractError("grpo_loss needs at least one scored group")
    group_means = []
    clipped = 0
    ratio_count = 0
    for item in scored:
        rollout_terms = []
        for rec, advantage in zip(item.group.records, item.advantages.advantages):
            if not rec.logprobs:
                raise ContractError("rollout record carries no old-policy logprobs")
            logp = mixed_forward_logprobs(params, rec.full_tokens(), mode, temperature)
            gen = logp[len(rec.prompt_tokens) - 1 :]
            old = np.array(rec.logprobs)
            a = Tensor(advantage)
            if ratio_level == "sequence":
                ratio = ad.exp(gen.sum() - Tensor(old.sum()))
            else:
                ratio = ad.exp(gen - Tensor(old))
            surrogate = ratio * a
            if clip_eps is not None:
                surrogate = ad.minimum(surrogate, ad.clip(ratio, 1 - clip_eps, 1 + clip_eps) * a)
                clipped += int(np.sum(np.abs(ratio.data - 1.0) > clip_eps))
                ratio_count += ratio.data.size
            rollout_terms.append(surrogate.mean())
        total = rollout_terms[0]
        for term in rollout_terms[1:]:
            total = total + term
        group_means.append(total * (1.0 / len(rollout_terms)))
    loss = group_means[0]
    for term in group_means[1:]:
        loss = loss + term
    loss = -(loss * (1.0 / len(group_means)))
    stats = {"clip_fraction": clipped / ratio_count if ratio_count else 0.0}
    return loss, stats


# ---- supervised pretraining ---------------------------------------------------------------


def sequence_nll(params: ModelParams, tokens) -> Tensor:
    """Mean next-token negative log-likelihood over one sequence."""
    ids = np.asarray(tokens, dtype=np.intp)
    if ids.size < 2:
        raise ContractError("sequence must have at least two tokens")
    trace = forward(params, ids)
    logp = ad.log_softmax(trace.logits[:-1])
    return -ad.gather_last(logp, ids[1:]).mean()


def pretrain_supervised(
    params: ModelParams,
    corpus: list[list[int]],
    config: PretrainConfig,
) -> list[dict]:
    """Next-token cross-entropy training on rendered exemplars.

    Returns per-epoch metrics; the parameters are updated in place.
    """
    if not corpus:
        raise ContractError("pretraining corpus is empty")
    optimizer = Adam(params, lr=config.lr)
    metrics = []
    order = np.arange(len(corpus))
    for epoch in range(config.epochs):
        rng = np.random.default_rng(derive_seed(config.seed, SEED_SHUFFLE, epoch))
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            batch_loss = None
            for idx in batch:
                nll = sequence_nll(params, corpus[idx]) * (1.0 / len(batch))
                batch_loss = nll if batch_loss is None else batch_loss + nll
            if not np.isfinite(batch_loss.data).all():
                raise NumericError(f"pretraining loss diverged at epoch {epoch}")
            batch_loss.backward()
            optimizer.step()
            losses.append(batch_loss.item())
        metrics.append({"epoch": epoch, "loss": float(np.mean(losses))})
    return metrics


# ---- reinforcement learning loop --------------------------------------------------------------


def train_rl(
    params: ModelParams,
    config: TrainConfig,
    controls: DecodeControls,
    vocab: Vocab,
    tasks: list[TaskInstance] | None = None,
    on_step=None,
    on_scored=None,
) -> list[dict]:
    """The outer RL loop: sample groups, score, standardize, step.

    ``tasks`` is the training pool; prompts per step are drawn from it with a
    step-derived rng. When None, a pool of ``task_pool_size`` tier tasks is
    built from the seed (the pool revisits each prompt many times over a run,
    which is what makes the sparse group signal add up; ``task_pool_size=0``
    draws unbounded fresh tasks instead).

    Each step snapshots the policy implicitly: rollouts sampled before the
    gradient updates carry the old-policy logprobs, so with one inner epoch
    the importance ratios start at exactly 1. Rollout sampling explores at
    ``rollout_temperature``; the loss recomputes the policy at that same
    temperature so the importance ratio stays under one measure. Metrics are
    appended per step; ``on_step`` (if given) receives each row as produced.
    """
    if tasks is None and config.task_pool_size > 0:
        tasks = [
            gen_task(derive_seed(config.seed, SEED_TASKS, i), config.tier)
            for i in range(config.task_pool_size)
        ]
    temperature = (
        controls.temperature if config.rollout_temperature is None else config.rollout_temperature
    )
    rollout_controls = replace(controls, temperature=temperature)
    optimizer = Adam(params, lr=config.lr)
    metrics: list[dict] = []
    for step in range(config.total_steps):
        if tasks is None:
            batch = [
                gen_task(derive_seed(config.seed, SEED_TASKS, step, i), config.tier)
                for i in range(config.prompts_per_batch)
            ]
        else:
            rng = np.random.default_rng(derive_seed(config.seed, SEED_TASKS, step))
            picks = rng.choice(len(tasks), size=config.prompts_per_batch, replace=True)
            batch = [tasks[i] for i in picks]
        scored = []
        for i, task in enumerate(batch):
            prompt = prompt_tokens(vocab, task)
            group_controls = replace(
                rollout_controls, seed=derive_seed(config.seed, SEED_ROLLOUT, step, i)
            )
            group = sample_group(
                params, prompt, config.k, group_controls, config.mode, vocab.eos_id
            )
            breakdowns = tuple(
                score(vocab.decode(rec.tokens), task.gold) for rec in group.records
            )
            adv = compute_advantages([b.total for b in breakdowns], config.eps_std)
            scored.append(ScoredGroup(group, task.gold, breakdowns, adv))
        if on_scored is not None:
            on_scored(step, scored)

        loss_value = 0.0
        clip_fraction = 0.0
        for _ in range(config.inner_epochs):
            loss, stats = grpo_loss(
                params, scored, config.clip_eps, config.mode,
                temperature, config.ratio_level,
            )
            if not np.isfinite(loss.data).all():
                raise NumericError(f"grpo loss diverged at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_value = loss.item()
            clip_fraction = stats["clip_fraction"]

        all_breakdowns = [b for item in scored for b in item.breakdowns]
        all_advantages = [a for item in scored for a in item.advantages.advantages]
        all_entropies = [e for item in scored for rec in item.group.records for e in rec.entropies]
        row = {
            "step": step,
            "mean_reward": float(np.mean([b.total for b in all_breakdowns])),
            "mean_acc": float(np.mean([b.acc for b in all_breakdowns])),
            "mean_fmt": float(np.mean([b.fmt for b in all_breakdowns])),
            "loss": loss_value,
            "clip_fraction": clip_fraction,
            "entropy": float(np.mean(all_entropies)),
            "mean_abs_advantage": float(np.mean(np.abs(all_advantages))),
        }
        metrics.append(row)
        if on_step is not None:
            on_step(row)
    return metrics


# ---- evaluation ----------------------------------------------------------------------------------


def evaluate_pass1(
    params: ModelParams,
    tasks: list[TaskInstance],
    controls: DecodeControls,
    mode: MixingMode,
    vocab: Vocab,
) -> dict:
    """Single-sample accuracy and mean reward over a task list."""
    if not tasks:
        raise ContractError("evaluation task list is empty")
    rows = []
    for i, task in enumerate(tasks):
        child = replace(controls, seed=derive_seed(controls.seed, SEED_EVAL, i))
        rec = generate(params, prompt_tokens(vocab, task), child, mode, vocab.eos_id)
        text = vocab.decode(rec.tokens)
        breakdown = score(text, task.gold)
        rows.append(
            {
                "index": i,
                "prompt": task.prompt,
                "gold": task.gold,
                "generation": text,
                "acc": breakdown.acc,
                "fmt": breakdown.fmt,
                "total": breakdown.total,
                "terminated_by": rec.terminated_by,
            }
        )
    accuracy = float(np.mean([r["acc"] for r in rows]))
    return {
        "accuracy": accuracy,
        "mean_reward": float(np.mean([r["total"] for r in rows])),
        "mean_fmt": float(np.mean([r["fmt"] for r in rows])),
        "rows": rows,
    }


def held_out_format_reward(
    params: ModelParams,
    tasks: list[TaskInstance],
    controls: DecodeControls,
    mode: MixingMode,
    vocab: Vocab,
) -> float:
    report = evaluate_pass1(params, tasks, controls, mode, vocab)
    return report["mean_fmt"]
