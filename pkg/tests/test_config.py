import pytest

from scmix.config import load_run_config, parse_config_text, parse_mode
from scmix.errors import ConfigError
from scmix.mixing import MixingMode

GOOD = """
# desk run
[model]
d_model = 32
n_heads = 4

[train]
k = 4
mode = grpo
tier = 2-digit

[decode]
top_k = none
temperature = 0.9
"""


def test_parse_and_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(GOOD, encoding="utf-8")
    run = load_run_config(path, vocab_size=24)
    assert run.model.d_model == 32
    assert run.model.vocab_size == 24
    assert run.model.n_layers == 2  # default
    assert run.train.k == 4
    assert run.train.mode is MixingMode.NO_MIX
    assert run.train.tier == "2-digit"
    assert run.decode.top_k is None
    assert run.decode.temperature == 0.9
    assert run.decode.top_p == 0.95  # default


def test_all_defaults_without_file():
    run = load_run_config(None, vocab_size=24)
    assert run.train.k == 8
    assert run.train.clip_eps == 0.2
    assert run.decode.top_k == 30
    assert run.decode.temperature == 0.6


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError, match=r"<config>:3: unknown key 'd_mdoel'"):
        parse_config_text("\n[model]\nd_mdoel = 3\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match=r"unknown section \[optimizer\]"):
        parse_config_text("[optimizer]\nlr = 1\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="outside"):
        parse_config_text("lr = 1\n")


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match=r"cannot parse value 'fast' for key 'lr'"):
        parse_config_text("[train]\nlr = fast\n")


def test_vocab_size_conflict(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[model]\nvocab_size = 99\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="vocab_size"):
        load_run_config(path, vocab_size=24)


def test_vocab_size_restated_consistently(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[model]\nvocab_size = 24\n", encoding="utf-8")
    run = load_run_config(path, vocab_size=24)
    assert run.model.vocab_size == 24


def test_parse_mode_names():
    assert parse_mode("scm") is MixingMode.SCM
    assert parse_mode("grpo") is MixingMode.NO_MIX
    assert parse_mode("no-mix") is MixingMode.NO_MIX
    assert parse_mode("no-hidden-fusion") is MixingMode.NO_HIDDEN_FUSION
    with pytest.raises(ConfigError):
        parse_mode("magic")


def test_with_seed_propagates():
    run = load_run_config(None, vocab_size=24).with_seed(77)
    assert run.train.seed == 77
    assert run.pretrain.seed == 77
    assert run.decode.seed == 77
