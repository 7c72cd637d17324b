"""Decoder-only autoregressive transformer over the autodiff tape.

Exposes per-layer hidden states, the final pre-logit hidden state, the token
embedding table, and the output head. The embedding dimension equals the
model width so a convex combination of embedding rows can be added to the
final hidden state without a projection.

Attention keys and values are zero-padded to ``max_seq_len`` before the score
and mixing matmuls. This keeps every reduction length independent of the
actual sequence length, so logits at a position are bit-identical no matter
how many tokens follow it (exact causality, cheap at desk scale).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, LengthError, ShapeError

INIT_STD = 0.02
LN_EPS = 1e-5


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 64
    tie_embeddings: bool = True

    def __post_init__(self):
        if self.vocab_size < 8:
            raise ContractError(f"vocab_size must be >= 8, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_model", "n_layers", "n_heads", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class ModelParams:
    """Named parameter tensors; iteration order is the checkpoint order."""

    config: TransformerConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        clone = {name: ad.param(t.data.copy()) for name, t in self.tensors.items()}
        return ModelParams(self.config, clone)

    def embedding_table(self) -> Tensor:
        return self.tensors["tok_emb"]

    def output_head(self) -> Tensor:
        """The [d_model, vocab] projection; a transposed view of E when tied."""
        if self.config.tie_embeddings:
            return ad.transpose(self.tensors["tok_emb"], (1, 0))
        return self.tensors["w_out"]

    def assert_finite(self):
        for name, t in self.tensors.items():
            if not np.isfinite(t.data).all():
                raise ContractError(f"parameter {name} contains non-finite values")


@dataclass
class ForwardTrace:
    """Hidden states of one forward pass.

    ``layers`` has n_layers + 1 entries (the input embedding counts as layer
    0) and is only populated when the pass was run with capture_layers.
    ``h`` is the final pre-logit hidden state; ``logits = h @ W_out``.
    """

    layers: list[Tensor] | None
    h: Tensor
    logits: Tensor


def init_params(config: TransformerConfig, seed: int) -> ModelParams:
    """Deterministic initialization: normal(0, 0.02) weights, unit LN gains."""
    rng = np.random.default_rng(seed)
    d, v = config.d_model, config.vocab_size

    def w(*shape):
        return ad.param(rng.normal(0.0, INIT_STD, size=shape))

    tensors: dict[str, Tensor] = {}
    tensors["tok_emb"] = w(v, d)
    tensors["pos_emb"] = w(config.max_seq_len, d)
    for i in range(config.n_layers):
        p = f"l{i}."
        tensors[p + "ln1.g"] = ad.param(np.ones(d))
        tensors[p + "ln1.b"] = ad.param(np.zeros(d))
        for proj in ("wq", "wk", "wv", "wo"):
            tensors[p + "attn." + proj] = w(d, d)
            tensors[p + "attn.b" + proj[1]] = ad.param(np.zeros(d))
        tensors[p + "ln2.g"] = ad.param(np.ones(d))
        tensors[p + "ln2.b"] = ad.param(np.zeros(d))
        tensors[p + "mlp.w1"] = w(d, 4 * d)
        tensors[p + "mlp.b1"] = ad.param(np.zeros(4 * d))
        tensors[p + "mlp.w2"] = w(4 * d, d)
        tensors[p + "mlp.b2"] = ad.param(np.zeros(d))
    tensors["ln_f.g"] = ad.param(np.ones(d))
    tensors["ln_f.b"] = ad.param(np.zeros(d))
    if not config.tie_embeddings:
        tensors["w_out"] = w(d, v)
    return ModelParams(config, tensors)


def expected_param_count(config: TransformerConfig) -> int:
    """Closed-form parameter count for a given configuration."""
    d, v = config.d_model, config.vocab_size
    per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d)
    total = v * d + config.max_seq_len * d + config.n_layers * per_layer + 2 * d
    if not config.tie_embeddings:
        total += d * v
    return total


_mask_cache: dict[int, np.ndarray] = {}


def _causal_mask(width: int) -> np.ndarray:
    mask = _mask_cache.get(width)
    if mask is None:
        mask = np.triu(np.full((width, width), -1e9), k=1)
        _mask_cache[width] = mask
    return mask


def validate_tokens(config: TransformerConfig, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError(f"token sequence must be a nonempty 1D list, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ShapeError(
            f"token id out of range [0, {config.vocab_size}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    if ids.size > config.max_seq_len:
        raise LengthError(
            f"sequence length {ids.size} exceeds max_seq_len {config.max_seq_len}"
        )
    return ids


def forward(params: ModelParams, tokens, capture_layers: bool = False) -> ForwardTrace:
    """Causal forward pass returning the trace used by sampling, loss and PCA.

    Every block runs at a constant ``max_seq_len`` row count so BLAS kernels
    never change with the actual length: pad rows are zero after the
    embedding, masked out of attention, and sliced away at the end.
    """
    cfg = params.config
    ids = validate_tokens(cfg, tokens)
    t = ids.size
    width = cfg.max_seq_len
    scale = 1.0 / np.sqrt(cfg.head_dim)

    x = ad.embedding(params["tok_emb"], ids) + params["pos_emb"][:t]
    layers = [x] if capture_layers else None
    x = ad.pad_axis(x, 0, width)
    for i in range(cfg.n_layers):
        p = f"l{i}."
        a = ad.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"], LN_EPS)
        heads = []
        for proj in ("wq", "wk", "wv"):
            out = ad.matmul(a, params[p + "attn." + proj]) + params[p + "attn.b" + proj[1]]
            heads.append(ad.transpose(out.reshape(width, cfg.n_heads, cfg.head_dim), (1, 0, 2)))
        q, k, v = heads
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * scale + Tensor(_causal_mask(width))
        attn = ad.matmul(ad.softmax(scores), v)
        attn = ad.transpose(attn, (1, 0, 2)).reshape(width, cfg.d_model)
        x = x + ad.matmul(attn, params[p + "attn.wo"]) + params[p + "attn.bo"]
        m = ad.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"], LN_EPS)
        m = ad.gelu(ad.matmul(m, params[p + "mlp.w1"]) + params[p + "mlp.b1"])
        x = x + ad.matmul(m, params[p + "mlp.w2"]) + params[p + "mlp.b2"]
        if capture_layers:
            layers.append(x[:t])

    normed = ad.layer_norm(x, params["ln_f.g"], params["ln_f.b"], LN_EPS)
    logits = ad.matmul(normed, params.output_head())
    return ForwardTrace(layers=layers, h=normed[:t], logits=logits[:t])
