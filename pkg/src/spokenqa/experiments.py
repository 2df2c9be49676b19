"""Reusable experiment harnesses: single KD runs, ablation grids, comparisons.

Every grid walks through the same `train_and_eval_student` core, so a
single-point grid reproduces a direct run bit for bit. Teachers are trained
once and reused across grid points and seeds; only the student varies.
"""

from __future__ import annotations

import dataclasses

from .distill import KDConfig, train_student
from .errors import ParameterError
from .evaluation import evaluate
from .fusion import FUSION_MODES
from .model import QAModel

TEMPERATURE_GRID = (1.0, 2.0, 4.0, 6.0, 8.0, 10.0)

ABLATION_FIELDS = ("grid_key", "split", "em", "f1", "steps", "seed")


def train_and_eval_student(teacher, train_examples, eval_examples, tokenizer, *,
                           model_config, kd, steps, lr=3e-4, seed=0,
                           eval_view="asr", eval_split="test", log=None):
    """Fresh student: distill, then score. Returns (student, train, eval)."""
    student = QAModel(model_config)
    train_report = train_student(student, teacher, train_examples, steps=steps,
                                 kd=kd, lr=lr, seed=seed, log=log)
    eval_report = evaluate(student, eval_examples, tokenizer, view=eval_view,
                           split=eval_split)
    eval_report.model_fingerprint = student.fingerprint()
    return student, train_report, eval_report


def _row(grid_key, eval_report, steps, seed):
    return {
        "grid_key": grid_key,
        "split": f"{eval_report.split}/{eval_report.view}",
        "em": eval_report.em,
        "f1": eval_report.f1,
        "steps": steps,
        "seed": seed,
    }


def ablate_temperature(teacher, train_examples, eval_examples, tokenizer, *,
                       model_config, grid=TEMPERATURE_GRID, alpha=0.9,
                       kl_direction="student_first", hard_target="student",
                       steps=200, lr=3e-4, seed=0, eval_view="asr",
                       eval_split="test", on_row=None, log=None):
    """One student per softening temperature, against one fixed teacher."""
    if not grid:
        raise ParameterError("temperature grid must not be empty")
    rows = []
    for temperature in grid:
        kd = KDConfig(alpha=alpha, temperature=float(temperature),
                      kl_direction=kl_direction, hard_target=hard_target)
        _, _, eval_report = train_and_eval_student(
            teacher, train_examples, eval_examples, tokenizer,
            model_config=model_config, kd=kd, steps=steps, lr=lr, seed=seed,
            eval_view=eval_view, eval_split=eval_split, log=log,
        )
        row = _row(f"temperature={temperature:g}", eval_report, steps, seed)
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def ablate_fusion(teacher, train_examples, eval_examples, tokenizer, *,
                  model_config, modes=FUSION_MODES, kd=None, steps=200,
                  lr=3e-4, seed=0, eval_view="asr", eval_split="test",
                  on_row=None, log=None):
    """One student per fusion mode; everything else, teacher included, fixed."""
    if not modes:
        raise ParameterError("fusion mode list must not be empty")
    kd = kd if kd is not None else KDConfig()
    rows = []
    for mode in modes:
        config = dataclasses.replace(model_config, fusion=mode)
        _, _, eval_report = train_and_eval_student(
            teacher, train_examples, eval_examples, tokenizer,
            model_config=config, kd=kd, steps=steps, lr=lr, seed=seed,
            eval_view=eval_view, eval_split=eval_split, log=log,
        )
        row = _row(f"fusion={mode}", eval_report, steps, seed)
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def compare_kd_to_baseline(teacher, train_examples, eval_examples, tokenizer, *,
                           model_config, kd=None, steps=200, lr=3e-4,
                           seeds=(0, 1, 2, 3, 4), eval_view="asr",
                           eval_split="test", log=None):
    """Paired comparison: distilled student vs plain ASR training, per seed.

    Each seed fixes both the student initialization and the data order, so
    the two arms differ only in the loss; deltas are genuinely paired.
    """
    if len(seeds) < 2:
        raise ParameterError(f"need at least two seeds to compare, got {seeds}")
    kd = kd if kd is not None else KDConfig()
    baseline_kd = KDConfig(alpha=0.0, temperature=kd.temperature,
                           kl_direction=kd.kl_direction, hard_target="student")
    rows = []
    for seed in seeds:
        config = dataclasses.replace(model_config, seed=seed)
        _, _, ev_kd = train_and_eval_student(
            teacher, train_examples, eval_examples, tokenizer,
            model_config=config, kd=kd, steps=steps, lr=lr, seed=seed,
            eval_view=eval_view, eval_split=eval_split, log=log,
        )
        _, _, ev_base = train_and_eval_student(
            None, train_examples, eval_examples, tokenizer,
            model_config=config, kd=baseline_kd, steps=steps, lr=lr, seed=seed,
            eval_view=eval_view, eval_split=eval_split, log=log,
        )
        rows.append({
            "seed": seed,
            "f1_kd": ev_kd.f1,
            "f1_baseline": ev_base.f1,
            "em_kd": ev_kd.em,
            "em_baseline": ev_base.em,
            "delta_f1": ev_kd.f1 - ev_base.f1,
        })
        if log:
            log(f"seed {seed}: kd f1 {ev_kd.f1:.4f} vs baseline {ev_base.f1:.4f}")
    n = len(rows)
    return {
        "rows": rows,
        "mean_f1_kd": sum(r["f1_kd"] for r in rows) / n,
        "mean_f1_baseline": sum(r["f1_baseline"] for r in rows) / n,
        "mean_delta_f1": sum(r["delta_f1"] for r in rows) / n,
        "wins": sum(r["delta_f1"] > 0 for r in rows),
        "losses": sum(r["delta_f1"] < 0 for r in rows),
    }
