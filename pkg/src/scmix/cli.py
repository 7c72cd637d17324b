"""Operator entry points: dataset generation, pretraining, RL training,
evaluation, representation-shift reports and one-off generation.

Every verb honors --seed for end-to-end reproducibility, exits 0 on success
and nonzero with a one-line ``error:<category>: message`` on failure.
Report-producing verbs write line-delimited records and render a matching
figure next to them (suppress with --no-plots).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config, parse_mode
from .errors import CheckpointError, ConfigError, DataError, ScmixError
from .grpo import (
    evaluate_pass1,
    held_out_format_reward,
    pretrain_supervised,
    train_rl,
)
from .mixing import MixingMode
from .model import init_params
from .pca import collect_states, shift_report, write_report, write_scatter
from .rewards import score
from .rollout import SEED_EVAL, DecodeControls, derive_seed, generate, write_rollout_dump
from .tasks import (
    TaskInstance,
    Vocab,
    evaluate_expression,
    load_dataset,
    make_tasks,
    prompt_tokens,
    render_exemplar,
    save_dataset,
)

METRICS_COLUMNS = ("step", "mean_reward", "mean_acc", "mean_fmt", "loss", "clip_fraction", "entropy")


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_tsv(path, rows: list[dict], columns) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[c]) for c in columns) + "\n")


def _require_file(path, error_cls, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise error_cls(f"{what} not found: {p}")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(args, vocab: Vocab) -> RunConfig:
    path = getattr(args, "config", None)
    if path is not None:
        _require_file(path, ConfigError, "config file")
    run = load_run_config(path, vocab.size)
    seed = getattr(args, "seed", None)
    if seed is not None:
        run = run.with_seed(seed)
    return run


def _controls_from_args(args, base: DecodeControls) -> DecodeControls:
    updates = {}
    for name in ("temperature", "top_p", "max_new_tokens"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            updates[name] = value
    if getattr(args, "top_k", None) is not None:
        updates["top_k"] = None if args.top_k <= 0 else args.top_k
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return replace(base, **updates) if updates else base


def _clamp_top_k(controls: DecodeControls, vocab_size: int) -> DecodeControls:
    if controls.top_k is not None and controls.top_k > vocab_size:
        return replace(controls, top_k=vocab_size)
    return controls


def _fit_context(controls: DecodeControls, max_seq_len: int, prompt_lengths) -> DecodeControls:
    """Shrink max_new_tokens so every prompt fits the model context."""
    room = max_seq_len - max(prompt_lengths)
    if room < 1:
        raise DataError(f"a prompt does not fit the model context of {max_seq_len}")
    if controls.max_new_tokens > room:
        return replace(controls, max_new_tokens=room)
    return controls


# ---- verbs --------------------------------------------------------------------------


def cmd_make_data(args) -> int:
    out = _out_dir(args.out)
    train = make_tasks(seed=args.seed, tier=args.tier, count=args.count)
    eval_count = args.eval_count if args.eval_count is not None else max(1, args.count // 5)
    held_out = make_tasks(seed=derive_seed(args.seed, SEED_EVAL), tier=args.tier, count=eval_count)
    for task in train + held_out:
        if evaluate_expression(task.prompt.rstrip("=")) != task.gold:
            raise DataError(f"generated gold failed the arithmetic oracle: {task}")
    save_dataset(out / "train.tsv", train)
    save_dataset(out / "eval.tsv", held_out)
    print(f"wrote {len(train)} train and {len(held_out)} eval instances to {out}")
    return 0


def cmd_pretrain(args) -> int:
    vocab = Vocab()
    run = _load_config(args, vocab)
    data = _require_file(args.data, DataError, "dataset")
    out = _out_dir(args.out)
    tasks = load_dataset(data)
    corpus = [vocab.encode(render_exemplar(t)) for t in tasks]
    longest = max(len(seq) for seq in corpus)
    if longest > run.model.max_seq_len:
        raise DataError(
            f"longest exemplar has {longest} tokens but max_seq_len is {run.model.max_seq_len}"
        )
    params = init_params(run.model, seed=run.pretrain.seed)
    metrics = pretrain_supervised(params, corpus, run.pretrain)
    save_checkpoint(out / "model.ckpt", params)
    write_tsv(out / "pretrain_metrics.tsv", metrics, ("epoch", "loss"))
    if not args.no_plots:
        figures.pretrain_curve(metrics, out / "pretrain_loss.png")

    held_out = make_tasks(
        seed=derive_seed(run.pretrain.seed, SEED_EVAL), tier=tasks[0].tier, count=32
    )
    controls = _clamp_top_k(run.decode, vocab.size)
    fmt = held_out_format_reward(params, held_out, controls, run.train.mode, vocab)
    print(f"final_loss={metrics[-1]['loss']!r}")
    print(f"held_out_format_reward={fmt!r}")
    if fmt < 0.9:
        print("warning: held-out format reward below 0.9", file=sys.stderr)
    print(f"checkpoint={out / 'model.ckpt'}")
    return 0


def cmd_train_rl(args) -> int:
    vocab = Vocab()
    run = _load_config(args, vocab)
    ckpt = _require_file(args.checkpoint, CheckpointError, "checkpoint")
    out = _out_dir(args.out)
    params = load_checkpoint(ckpt)
    if params.config.vocab_size != vocab.size:
        raise CheckpointError(
            f"checkpoint vocab {params.config.vocab_size} does not match task vocabulary {vocab.size}"
        )
    train_config = replace(run.train, mode=parse_mode(args.mode))
    controls = _clamp_top_k(run.decode, vocab.size)

    dump_rows = []

    def on_scored(step, scored):
        if not args.dump_rollouts:
            return
        for item in scored:
            prompt_text = vocab.decode(item.group.prompt_tokens, strip_special=True)
            for rec, b in zip(item.group.records, item.breakdowns):
                dump_rows.append(
                    {
                        "step": step,
                        "prompt": prompt_text,
                        "generation": vocab.decode(rec.tokens),
                        "acc": b.acc,
                        "fmt": b.fmt,
                        "total": b.total,
                        "terminated_by": rec.terminated_by,
                    }
                )

    metrics = train_rl(params, train_config, controls, vocab, on_scored=on_scored)
    save_checkpoint(out / "model.ckpt", params)
    write_tsv(out / "metrics.tsv", metrics, METRICS_COLUMNS)
    if args.dump_rollouts:
        write_rollout_dump(out / "rollouts.tsv", dump_rows)
    if not args.no_plots:
        figures.training_curves(metrics, out / "training_curves.png")
    first = float(np.mean([m["mean_reward"] for m in metrics[: max(1, len(metrics) // 10)]]))
    last = float(np.mean([m["mean_reward"] for m in metrics[-max(1, len(metrics) // 10) :]]))
    print(f"steps={len(metrics)} first_decile_reward={first!r} last_decile_reward={last!r}")
    print(f"checkpoint={out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    vocab = Vocab()
    ckpt = _require_file(args.checkpoint, CheckpointError, "checkpoint")
    data = _require_file(args.data, DataError, "dataset")
    params = load_checkpoint(ckpt)
    tasks = load_dataset(data)
    controls = _clamp_top_k(_controls_from_args(args, DecodeControls()), vocab.size)
    controls = _fit_context(
        controls, params.config.max_seq_len,
        [len(prompt_tokens(vocab, t)) for t in tasks],
    )
    report = evaluate_pass1(params, tasks, controls, parse_mode(args.mode), vocab)
    if args.out is not None:
        write_tsv(
            args.out,
            report["rows"],
            ("index", "prompt", "gold", "generation", "acc", "fmt", "total", "terminated_by"),
        )
    print(
        f"pass1_accuracy={report['accuracy']!r} mean_reward={report['mean_reward']!r} "
        f"n={len(report['rows'])}"
    )
    return 0


def cmd_pca_shift(args) -> int:
    vocab = Vocab()
    ckpt_a = _require_file(args.checkpoint_a, CheckpointError, "checkpoint")
    ckpt_b = _require_file(args.checkpoint_b, CheckpointError, "checkpoint")
    data = _require_file(args.data, DataError, "dataset")
    out = _out_dir(args.out)
    params_a = load_checkpoint(ckpt_a)
    params_b = load_checkpoint(ckpt_b)
    tasks = load_dataset(data)
    sequences = [
        vocab.encode(render_exemplar(t))[: params_a.config.max_seq_len] for t in tasks
    ]
    mode = parse_mode(args.mode)
    dump_a = collect_states(params_a, sequences, tag="orig", mode=mode)
    dump_b = collect_states(params_b, sequences, tag="post", mode=mode)
    report = shift_report(dump_a, dump_b, aggregate=args.aggregate, keep_projections=True)
    write_report(out / "pca_layers.tsv", report)
    write_scatter(out / "pca_scatter.tsv", report)
    if not args.no_plots:
        figures.pca_shift_figure(report, out / "pca_shift.png")
    per_layer = " ".join(f"{d!r}" for d in report.layer_distances)
    print(f"layer_distances={per_layer}")
    print(f"aggregate={report.aggregate!r}")
    return 0


def cmd_generate(args) -> int:
    vocab = Vocab()
    ckpt = _require_file(args.checkpoint, CheckpointError, "checkpoint")
    params = load_checkpoint(ckpt)
    controls = _clamp_top_k(_controls_from_args(args, DecodeControls()), vocab.size)
    task = TaskInstance(prompt=args.prompt, gold=args.gold if args.gold is not None else 0,
                        tier="unknown")
    prompt = prompt_tokens(vocab, task)
    controls = _fit_context(controls, params.config.max_seq_len, [len(prompt)])
    rec = generate(params, prompt, controls, parse_mode(args.mode), vocab.eos_id)
    text = vocab.decode(rec.tokens)
    print(f"prompt={args.prompt}")
    print(f"completion={text}")
    print(f"terminated_by={rec.terminated_by}")
    if args.gold is not None:
        b = score(text, args.gold)
        print(f"reward: acc={b.acc!r} fmt={b.fmt!r} total={b.total!r}")
    return 0


# ---- parser -----------------------------------------------------------------------------


def _add_controls_flags(sub):
    sub.add_argument("--temperature", type=float, default=None)
    sub.add_argument("--top-k", type=int, default=None, help="0 disables top-k")
    sub.add_argument("--top-p", type=float, default=None)
    sub.add_argument("--max-new-tokens", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scmix",
        description="concept-mixed decoding and group-relative RL at desk scale",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("make-data", help="emit train/eval dataset splits")
    p.add_argument("--tier", required=True, choices=("1-digit", "2-digit", "mixed-op"))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("pretrain", help="supervised pretraining on rendered exemplars")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-rl", help="group-relative RL from a pretrained checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="scm", choices=("scm", "grpo", "no-hidden-fusion"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-rollouts", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("eval", help="pass@1 accuracy on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="scm", choices=("scm", "grpo", "no-hidden-fusion"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    _add_controls_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pca-shift", help="representation-shift report between two checkpoints")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="grpo", choices=("scm", "grpo", "no-hidden-fusion"))
    p.add_argument("--aggregate", default="mean-distance",
                   choices=("mean-distance", "pooled-center"))
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_pca_shift)

    p = sub.add_parser("generate", help="decode one prompt and score it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--mode", default="scm", choices=("scm", "grpo", "no-hidden-fusion"))
    p.add_argument("--gold", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_controls_flags(p)
    p.set_defaults(func=cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScmixError as err:
        print(f"error:{err.category}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error:io: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
