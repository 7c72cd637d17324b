"""Desk-scale soft concept mixing: a tiny autoregressive transformer whose
decoding step averages token embeddings under the step distribution, adds
the average to the hidden state, samples from the enhanced state, and is
trained with group-relative policy optimization against an
accuracy-plus-format reward. Includes the PCA latent-shift diagnostic."""

from .autodiff import Tensor, no_grad
from .grpo import TrainConfig, compute_advantages, grpo_loss, pretrain_supervised, train_rl
from .mixing import MixingMode, mix_step, mixed_forward_logprobs, soft_concept_vector
from .model import ModelParams, TransformerConfig, forward, init_params
from .rewards import RewardBreakdown, extract_answer, format_reward, score
from .rollout import DecodeControls, RolloutGroup, RolloutRecord, generate, sample_group
from .tasks import TaskInstance, Vocab, gen_task, render_exemplar

__version__ = "0.1.0"

__all__ = [
    "DecodeControls",
    "MixingMode",
    "ModelParams",
    "RewardBreakdown",
    "RolloutGroup",
    "RolloutRecord",
    "TaskInstance",
    "Tensor",
    "TrainConfig",
    "TransformerConfig",
    "Vocab",
    "compute_advantages",
    "extract_answer",
    "format_reward",
    "forward",
    "gen_task",
    "generate",
    "grpo_loss",
    "init_params",
    "mix_step",
    "mixed_forward_logprobs",
    "no_grad",
    "pretrain_supervised",
    "render_exemplar",
    "sample_group",
    "score",
    "soft_concept_vector",
    "train_rl",
]
