"""Plain key=value run configuration with [section] headers.

No external config language: lines are ``key = value`` grouped under
``[model]``, ``[pretrain]``, ``[train]`` and ``[decode]``. Unknown sections
or keys are rejected with the offending name and line number, and every
value is coerced against the target dataclass before any long work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError
from .grpo import PretrainConfig, TrainConfig
from .mixing import MixingMode
from .model import TransformerConfig
from .rollout import DecodeControls

MODE_NAMES = {
    "scm": MixingMode.SCM,
    "grpo": MixingMode.NO_MIX,
    "no-mix": MixingMode.NO_MIX,
    "no-hidden-fusion": MixingMode.NO_HIDDEN_FUSION,
}


def parse_mode(name: str) -> MixingMode:
    try:
        return MODE_NAMES[name.strip().lower()]
    except KeyError:
        raise ConfigError(
            f"unknown mode {name!r}; expected one of {sorted(MODE_NAMES)}"
        ) from None


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _parse_optional_int(raw: str):
    return None if raw.strip().lower() in ("none", "off") else int(raw)


def _parse_optional_float(raw: str):
    return None if raw.strip().lower() in ("none", "off") else float(raw)


_SCHEMA = {
    "model": {
        "vocab_size": int,
        "d_model": int,
        "n_layers": int,
        "n_heads": int,
        "max_seq_len": int,
        "tie_embeddings": _parse_bool,
    },
    "pretrain": {
        "epochs": int,
        "lr": float,
        "batch_size": int,
        "seed": int,
    },
    "train": {
        "k": int,
        "clip_eps": float,
        "lr": float,
        "prompts_per_batch": int,
        "inner_epochs": int,
        "total_steps": int,
        "seed": int,
        "mode": parse_mode,
        "tier": str,
        "task_pool_size": int,
        "rollout_temperature": _parse_optional_float,
        "eps_std": float,
        "ratio_level": str,
    },
    "decode": {
        "temperature": float,
        "top_k": _parse_optional_int,
        "top_p": float,
        "max_new_tokens": int,
        "seed": int,
    },
}


@dataclass
class RunConfig:
    model: TransformerConfig
    pretrain: PretrainConfig
    train: TrainConfig
    decode: DecodeControls

    def with_seed(self, seed: int) -> "RunConfig":
        """Propagate one global seed into every sub-configuration."""
        return RunConfig(
            model=self.model,
            pretrain=replace(self.pretrain, seed=seed),
            train=replace(self.train, seed=seed),
            decode=replace(self.decode, seed=seed),
        )


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict]:
    """Sectioned key=value parsing with coercion against the schema."""
    values: dict[str, dict] = {name: {} for name in _SCHEMA}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(
                    f"{source}:{lineno}: unknown section [{section}]; "
                    f"expected one of {sorted(_SCHEMA)}"
                )
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any [section]")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        schema = _SCHEMA[section]
        if key not in schema:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r} in section [{section}]"
            )
        try:
            values[section][key] = schema[key](raw)
        except (ValueError, TypeError):
            raise ConfigError(
                f"{source}:{lineno}: cannot parse value {raw!r} for key {key!r}"
            ) from None
    return values


def load_run_config(path, vocab_size: int) -> RunConfig:
    """Build the full run configuration, defaulting everything not present.

    ``path`` may be None for an all-defaults configuration. The vocabulary
    size is owned by the task suite; a config may restate it but only with
    the same value.
    """
    values = (
        parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))
        if path is not None
        else {name: {} for name in _SCHEMA}
    )
    model_kwargs = dict(values["model"])
    stated = model_kwargs.pop("vocab_size", None)
    if stated is not None and stated != vocab_size:
        raise ConfigError(
            f"vocab_size {stated} conflicts with the task vocabulary ({vocab_size})"
        )
    return RunConfig(
        model=TransformerConfig(vocab_size=vocab_size, **model_kwargs),
        pretrain=PretrainConfig(**values["pretrain"]),
        train=TrainConfig(**values["train"]),
        decode=DecodeControls(**values["decode"]),
    )
