"""Command-line pipeline: prepare, train, evaluate, ablate, stats.

Machine-readable artifacts go to files in the work directory (byte-stable
across reruns); progress logs carry timestamps and go to stderr only.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from .config import (
    apply_overrides,
    default_config,
    kd_config_from,
    load_config,
    model_config_from,
    noise_spec_from,
    save_config,
)
from .data import (
    Tokenizer,
    build_examples,
    generate_synthetic,
    load_dataset,
    load_examples,
    save_dataset,
    save_examples,
    split_stories,
)
from .distill import train_student, train_teacher
from .errors import (
    BoundsError,
    ConfigError,
    ContractError,
    DataError,
    LengthError,
    ParameterError,
    ShapeError,
)
from .evaluation import evaluate
from .experiments import (
    ABLATION_FIELDS,
    TEMPERATURE_GRID,
    ablate_fusion,
    ablate_temperature,
)
from .fusion import FUSION_MODES
from .model import QAModel
from .noise import corpus_wer, corrupt_stories

_USER_ERRORS = (BoundsError, ConfigError, ContractError, DataError, LengthError,
                ParameterError, ShapeError)

SPLITS = ("train", "dev", "test")
ROLES = ("teacher", "student")


def _log(message):
    stamp = time.strftime("%Y-%m-%d %H:%M:%S")
    print(f"[{stamp}] {message}", file=sys.stderr)


def _resolve_config(args, *, workdir=None):
    if workdir is not None:
        config = load_config(workdir / "config.json")
    elif getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = default_config()
    return apply_overrides(config, args.set)


def _texts_for_vocab(stories):
    texts = []
    for story in stories:
        texts.append(story.document)
        if story.asr_document:
            texts.append(story.asr_document)
        for turn in story.turns:
            texts.append(turn.question)
            texts.append(turn.answer)
            if turn.asr_question:
                texts.append(turn.asr_question)
    return texts


def _examples_config(config):
    return {
        "history_k": config.data.history_k,
        "max_len": config.data.max_len,
        "speech_vocab_size": config.data.speech_vocab_size,
        "speech_repeat": config.data.speech_repeat,
        "speech_seed": config.data.speech_seed,
    }


def _build_split_examples(stories, tokenizer, config):
    return build_examples(
        stories, tokenizer,
        history_k=config.data.history_k, max_len=config.data.max_len,
        speech_vocab_size=config.data.speech_vocab_size,
        speech_repeat=config.data.speech_repeat,
        speech_seed=config.data.speech_seed,
    )


def cmd_prepare(args):
    config = _resolve_config(args)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    if args.input:
        stories = load_dataset(args.input)
        _log(f"loaded {len(stories)} stories from {args.input}")
    else:
        stories = generate_synthetic(config.data.num_stories, config.data.seed,
                                     num_sentences=config.data.num_sentences)
        _log(f"generated {len(stories)} synthetic stories")

    if all(s.asr_document is not None for s in stories):
        _log("input already carries an ASR view; keeping it")
    else:
        spec = noise_spec_from(config)
        stories = corrupt_stories(stories, spec)
        _log(f"corrupted documents and questions at target WER {spec.target_wer:.2f}")

    splits = dict(zip(SPLITS, split_stories(stories, config.data.seed,
                                            config.data.fractions)))
    for name, part in splits.items():
        save_dataset(workdir / f"dataset.{name}.json", part)

    tokenizer = Tokenizer.build(_texts_for_vocab(splits["train"]),
                                min_freq=config.data.min_freq)
    tokenizer.save(workdir / "vocab.json")
    _log(f"built vocabulary of {tokenizer.vocab_size} tokens from the train split")

    stats = {
        "corpus_wer": corpus_wer(stories),
        "tokenizer": {"vocab_size": tokenizer.vocab_size,
                      "fingerprint": tokenizer.fingerprint},
        "splits": {},
    }
    for name, part in splits.items():
        examples = _build_split_examples(part, tokenizer, config)
        save_examples(workdir / f"examples.{name}.json", examples, tokenizer,
                      _examples_config(config))
        turns = [t for s in part for t in s.turns]
        stats["splits"][name] = {
            "stories": len(part),
            "turns": len(turns),
            "examples": len(examples),
            "unanswerable": sum(not t.answerable for t in turns),
        }
        _log(f"packed {len(examples)} {name} examples")

    with open(workdir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    save_config(workdir / "config.json", config)
    _log(f"prepare finished; artifacts in {workdir}")
    return 0


def _load_tokenizer(workdir):
    path = workdir / "vocab.json"
    if not path.exists():
        raise ConfigError(f"{path}: missing vocabulary; run prepare first")
    return Tokenizer.load(path)


def _load_split(workdir, split, tokenizer):
    path = workdir / f"examples.{split}.json"
    if not path.exists():
        raise ConfigError(f"{path}: missing examples cache; run prepare first")
    examples, _ = load_examples(path, expected_tokenizer_fingerprint=tokenizer.fingerprint)
    return examples


def _load_model(workdir, role, tokenizer):
    path = workdir / f"{role}.ckpt"
    if not path.exists():
        raise ConfigError(f"{path}: missing checkpoint; train the {role} first")
    model, meta = QAModel.load(path)
    expected = meta.get("tokenizer_fingerprint")
    if expected is not None and expected != tokenizer.fingerprint:
        raise ConfigError(
            f"{path}: checkpoint was trained with a different vocabulary "
            f"({str(expected)[:12]} vs {tokenizer.fingerprint[:12]})"
        )
    return model, meta


def cmd_train(args):
    workdir = Path(args.workdir)
    config = _resolve_config(args, workdir=workdir)
    tokenizer = _load_tokenizer(workdir)
    model_config = model_config_from(config, tokenizer.vocab_size)

    if args.dry_run:
        model = QAModel(model_config)
        print(json.dumps({
            "role": args.role,
            "parameter_count": model.parameter_count(),
            "fusion": model_config.fusion,
            "vocab_size": model_config.vocab_size,
        }, sort_keys=True))
        return 0

    examples = _load_split(workdir, "train", tokenizer)
    ckpt_path = workdir / f"{args.role}.ckpt"
    state_path = workdir / f"{args.role}.state"
    resume_from = None
    if args.resume:
        if not (ckpt_path.exists() and state_path.exists()):
            raise ConfigError(
                f"cannot resume: {ckpt_path} and {state_path} must both exist"
            )
        model, _ = _load_model(workdir, args.role, tokenizer)
        resume_from = state_path
        _log(f"resuming {args.role} from {state_path}")
    else:
        model = QAModel(model_config)

    common = dict(steps=config.train.steps, lr=config.train.lr,
                  seed=config.train.seed, log_every=config.train.log_every,
                  log=_log, state_path=state_path, resume_from=resume_from)
    if args.role == "teacher":
        report = train_teacher(model, examples, **common)
    else:
        kd = kd_config_from(config)
        teacher = None
        if kd.alpha > 0.0:
            teacher, _ = _load_model(workdir, "teacher", tokenizer)
        report = train_student(model, teacher, examples, kd=kd, **common)

    model.save(ckpt_path, meta={"tokenizer_fingerprint": tokenizer.fingerprint,
                                "role": args.role})
    with open(workdir / f"{args.role}.report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    _log(f"trained {args.role} for {report.steps} steps "
         f"(final loss {report.final_loss:.4f}, {report.wall_seconds:.1f}s)")
    return 0


def cmd_evaluate(args):
    workdir = Path(args.workdir)
    _resolve_config(args, workdir=workdir)  # validates workdir and overrides
    tokenizer = _load_tokenizer(workdir)
    view = args.view or ("asr" if args.split == "test" else "clean")
    examples = _load_split(workdir, args.split, tokenizer)
    model, _ = _load_model(workdir, args.role, tokenizer)
    report = evaluate(model, examples, tokenizer, view=view, split=args.split)
    report.model_fingerprint = model.fingerprint()

    stem = workdir / f"eval.{args.role}.{args.split}.{view}"
    with open(f"{stem}.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "story_id", "turn_index", "predicted", "golds", "em", "f1",
            "no_answer", "start", "end", "score",
        ])
        writer.writeheader()
        for row in report.per_example:
            flat = dict(row)
            flat["golds"] = "|".join(row["golds"])
            writer.writerow(flat)
    _log(f"evaluated {args.role} on {args.split}/{view}: "
         f"em {report.em:.4f} f1 {report.f1:.4f} over {report.count} examples")
    print(json.dumps({"em": report.em, "f1": report.f1, "count": report.count,
                      "split": args.split, "view": view}, sort_keys=True))
    return 0


def cmd_ablate(args):
    workdir = Path(args.workdir)
    config = _resolve_config(args, workdir=workdir)
    tokenizer = _load_tokenizer(workdir)
    train_examples = _load_split(workdir, "train", tokenizer)
    eval_examples = _load_split(workdir, "test", tokenizer)
    teacher, _ = _load_model(workdir, "teacher", tokenizer)
    model_config = model_config_from(config, tokenizer.vocab_size)
    kd = kd_config_from(config)

    out_path = workdir / f"ablation.{args.kind}.csv"
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(ABLATION_FIELDS))
        writer.writeheader()
        fh.flush()

        def on_row(row):
            writer.writerow(row)
            fh.flush()  # partial grids survive interruption
            _log(f"{row['grid_key']}: em {row['em']:.4f} f1 {row['f1']:.4f}")

        common = dict(model_config=model_config, steps=config.train.steps,
                      lr=config.train.lr, seed=config.train.seed,
                      on_row=on_row, log=_log)
        if args.kind == "temperature":
            grid = (tuple(float(v) for v in args.grid.split(","))
                    if args.grid else TEMPERATURE_GRID)
            ablate_temperature(teacher, train_examples, eval_examples, tokenizer,
                               alpha=kd.alpha, kl_direction=kd.kl_direction,
                               hard_target=kd.hard_target, grid=grid, **common)
        else:
            modes = (tuple(args.modes.split(",")) if args.modes else FUSION_MODES)
            ablate_fusion(teacher, train_examples, eval_examples, tokenizer,
                          kd=kd, modes=modes, **common)
    _log(f"wrote {out_path}")
    return 0


def cmd_stats(args):
    workdir = Path(args.workdir)
    stories = []
    counts = {}
    for split in SPLITS:
        path = workdir / f"dataset.{split}.json"
        if not path.exists():
            raise ConfigError(f"{path}: missing dataset; run prepare first")
        part = load_dataset(path)
        stories.extend(part)
        turns = [t for s in part for t in s.turns]
        counts[split] = {
            "stories": len(part),
            "turns": len(turns),
            "unanswerable": sum(not t.answerable for t in turns),
        }
    print(json.dumps({"corpus_wer": corpus_wer(stories), "splits": counts},
                     sort_keys=True, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spokenqa",
        description="Conversational QA over noisy transcripts with distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--workdir", required=True, help="artifact directory")
        p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                       help="config override, e.g. --set train.steps=800")

    p = sub.add_parser("prepare", help="generate/ingest data, build caches")
    common(p)
    p.add_argument("--config", help="JSON config file (defaults otherwise)")
    p.add_argument("--input", help="existing dataset JSON instead of synthetic data")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train the teacher or the student")
    common(p)
    p.add_argument("--role", required=True, choices=ROLES)
    p.add_argument("--dry-run", action="store_true",
                   help="print the parameter count and exit")
    p.add_argument("--resume", action="store_true",
                   help="continue from the saved checkpoint and training state")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on one split")
    common(p)
    p.add_argument("--role", required=True, choices=ROLES)
    p.add_argument("--split", default="dev", choices=SPLITS)
    p.add_argument("--view", choices=("clean", "asr"),
                   help="default: asr on test, clean elsewhere")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep one knob against a fixed teacher")
    common(p)
    p.add_argument("kind", choices=("temperature", "fusion"))
    p.add_argument("--grid", help="comma-separated temperatures")
    p.add_argument("--modes", help="comma-separated fusion modes")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("stats", help="print corpus statistics as JSON")
    p.add_argument("--workdir", required=True)
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
