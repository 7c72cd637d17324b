"""Soft concept vectors and hidden-state mixing.

At each decoding step the distribution over the vocabulary is turned into a
soft concept vector, the probability-weighted average of all token embedding
rows. In SCM mode that vector is added to the final hidden state and the
sampling distribution is recomputed from the enhanced state. The whole
mechanism is parameter-free, so switching modes never changes the parameter
count.

Order of computation per step: p is derived from the original hidden state,
the soft vector from p, and the enhanced distribution from h + se. Mixing is
applied at every generated position, and the teacher-forced recomputation
(`mixed_forward_logprobs`) applies the same mixing under the current
parameters, so the policy is a pure function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .model import ModelParams, forward


class MixingMode(Enum):
    SCM = "scm"
    NO_MIX = "no-mix"
    NO_HIDDEN_FUSION = "no-hidden-fusion"


@dataclass
class MixedStep:
    """One step's distributions: p from h, q from the (possibly) enhanced state."""

    p: Tensor
    se: Tensor
    h_prime: Tensor
    q: Tensor


def soft_concept_vector(p: Tensor, embedding: Tensor) -> Tensor:
    """Probability-weighted average of embedding rows, sum_i p_i * e_i.

    ``p`` is [V] or [T, V]; the result is [d] or [T, d]. Differentiable with
    respect to both the distribution and the embedding table.
    """
    probs = p.data
    if probs.shape[-1] != embedding.shape[0]:
        raise ContractError(
            f"distribution size {probs.shape[-1]} does not match "
            f"vocabulary {embedding.shape[0]}"
        )
    if probs.min() < 0:
        raise ContractError(f"distribution has negative entries (min={probs.min()})")
    sums = probs.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ContractError("distribution rows must sum to 1 within 1e-6")
    if p.ndim == 1:
        return ad.matmul(p.reshape(1, -1), embedding).reshape(-1)
    return ad.matmul(p, embedding)


def mix_distributions(h: Tensor, params: ModelParams, mode: MixingMode, temperature: float) -> MixedStep:
    """Vectorized mixing over a [T, d] block of hidden states."""
    head = params.output_head()
    p = ad.softmax(ad.matmul(h, head), temperature)
    if mode is MixingMode.NO_MIX:
        se = Tensor(np.zeros(h.shape))
        return MixedStep(p=p, se=se, h_prime=h, q=p)
    se = soft_concept_vector(p, params.embedding_table())
    if mode is MixingMode.NO_HIDDEN_FUSION:
        return MixedStep(p=p, se=se, h_prime=h, q=p)
    h_prime = h + se
    q = ad.softmax(ad.matmul(h_prime, head), temperature)
    return MixedStep(p=p, se=se, h_prime=h_prime, q=q)


def mix_step(h: Tensor, params: ModelParams, mode: MixingMode, temperature: float) -> MixedStep:
    """Single-step mixing for a [d] hidden state; fields come back 1D."""
    if h.ndim != 1:
        raise ContractError(f"mix_step expects a 1D hidden state, got {h.shape}")
    if not np.isfinite(h.data).all():
        raise ContractError("hidden state contains non-finite values")
    step = mix_distributions(h.reshape(1, -1), params, mode, temperature)
    return MixedStep(
        p=step.p.reshape(-1),
        se=step.se.reshape(-1),
        h_prime=step.h_prime.reshape(-1),
        q=step.q.reshape(-1),
    )


def mixed_forward_logprobs(
    params: ModelParams, tokens, mode: MixingMode, temperature: float
) -> Tensor:
    """Teacher-forced log q of each realized token under the current params.

    Returns a [T-1] tensor: entry t is log q(tokens[t+1] | tokens[..t]) with
    the mixing applied at every position. Differentiable with respect to the
    parameters; this is the per-token quantity inside the policy probability.
    """
    ids = np.asarray(tokens, dtype=np.intp)
    if ids.size < 2:
        raise ContractError("need at least two tokens to score transitions")
    trace = forward(params, ids)
    h = trace.h[:-1]
    head = params.output_head()
    base_logits = trace.logits[:-1]
    if mode is MixingMode.SCM:
        p = ad.softmax(base_logits, temperature)
        se = soft_concept_vector(p, params.embedding_table())
        logq = ad.log_softmax(ad.matmul(h + se, head), temperature)
    else:
        logq = ad.log_softmax(base_logits, temperature)
    return ad.gather_last(logq, ids[1:])
