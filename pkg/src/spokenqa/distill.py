"""Span losses, teacher-student distillation, Adam, and the training loop.

The student reads the ASR view while the teacher scores the clean view of the
same turn; both logit vectors live on the shared document grid, so the soft
loss compares them slot for slot over the intersection of their real slots.

Per head (start and end):

    loss = alpha * tau^2 * KL(soft student, soft teacher) + (1 - alpha) * XE

and the example loss is the mean of the two heads. The tau^2 factor keeps
gradient magnitude roughly constant in tau, so the temperature can be swept
without retuning the learning rate.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_params, save_params
from .encoder import NEG_MASK
from .errors import ConfigError, ContractError, DataError, ParameterError
from .seeding import rng_for
from .tensor import Tensor, log_softmax_t, no_grad, softmax_t, take, tsum

KL_DIRECTIONS = ("student_first", "teacher_first")
HARD_TARGETS = ("student", "teacher_literal")


@dataclass(frozen=True)
class KDConfig:
    alpha: float = 0.9            # weight on the soft (teacher) term
    temperature: float = 2.0
    kl_direction: str = "student_first"
    hard_target: str = "student"  # which view's gold span anchors the XE term

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.temperature <= 0.0:
            raise ParameterError(
                f"temperature must be positive, got {self.temperature}"
            )
        if self.kl_direction not in KL_DIRECTIONS:
            raise ParameterError(
                f"kl_direction must be one of {KL_DIRECTIONS}, got {self.kl_direction!r}"
            )
        if self.hard_target not in HARD_TARGETS:
            raise ParameterError(
                f"hard_target must be one of {HARD_TARGETS}, got {self.hard_target!r}"
            )


def _xe(logits, gold_slot):
    log_probs = log_softmax_t(logits, 1.0)
    return -take(log_probs, (0, int(gold_slot)))


def _head_loss(s_logits, t_logits, support, gold_slot, config):
    xe = _xe(s_logits, gold_slot)
    if config.alpha == 0.0:
        return xe
    tau = config.temperature
    floor = Tensor(np.where(support, 0.0, NEG_MASK)[None, :])
    s_m = s_logits + floor
    t_m = t_logits + floor
    log_ps = log_softmax_t(s_m, tau)
    log_pt = log_softmax_t(t_m, tau)
    if config.kl_direction == "student_first":
        kl = tsum(softmax_t(s_m, tau) * (log_ps - log_pt))
    else:
        kl = tsum(softmax_t(t_m, tau) * (log_pt - log_ps))
    return kl * (config.alpha * tau * tau) + xe * (1.0 - config.alpha)


def kd_loss(student, teacher, gold_slots, config: KDConfig):
    """Distillation loss for one example; `student`/`teacher` are SpanLogits.

    With alpha == 0 the teacher is not consulted at all (it may be None), so
    the loss degenerates to plain supervised span cross-entropy.
    """
    gs, ge = gold_slots
    n = student.valid.shape[0]
    if not (0 <= gs < n and 0 <= ge < n):
        raise ContractError(f"gold slots ({gs}, {ge}) outside {n} logit slots")
    if not (student.valid[gs] and student.valid[ge]):
        raise ContractError(f"gold slots ({gs}, {ge}) fall on masked positions")
    if config.alpha == 0.0:
        start = _head_loss(student.start, None, None, gs, config)
        end = _head_loss(student.end, None, None, ge, config)
        return (start + end) * 0.5
    if teacher is None:
        raise ContractError("alpha > 0 requires teacher logits")
    if teacher.valid.shape[0] != n:
        raise ContractError(
            f"student has {n} logit slots but teacher has {teacher.valid.shape[0]}; "
            "views must be packed on a shared grid"
        )
    support = student.valid & teacher.valid
    start = _head_loss(student.start, teacher.start, support, gs, config)
    end = _head_loss(student.end, teacher.end, support, ge, config)
    return (start + end) * 0.5


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with global-norm gradient clipping across all parameters."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=1.0):
        if lr <= 0:
            raise ParameterError(f"lr must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ParameterError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if clip_norm is not None and clip_norm <= 0:
            raise ParameterError(f"clip_norm must be positive, got {clip_norm}")
        self.params = dict(sorted(params.items()))
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {
            k: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for k, p in self.params.items()
        }
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / c1
            v_hat = self.v[k] / c2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm


# ---------------------------------------------------------------------------
# training state (for exact resume)


def save_training_state(path, optimizer, *, step, epoch, pos, dropout_rng,
                        extra=None):
    arrays = {}
    for k in optimizer.params:
        arrays[f"m.{k}"] = optimizer.m[k]
        arrays[f"v.{k}"] = optimizer.v[k]
    meta = {
        "step": step,
        "epoch": epoch,
        "pos": pos,
        "adam_step": optimizer.step_count,
        "dropout_state": dropout_rng.bit_generator.state,
    }
    if extra:
        meta.update(extra)
    save_params(path, arrays, meta=meta)


def load_training_state(path, optimizer):
    arrays, meta = load_params(path)
    expected = set()
    for k in optimizer.params:
        expected.add(f"m.{k}")
        expected.add(f"v.{k}")
    if expected != set(arrays):
        raise DataError(f"{path}: training state does not match the model's parameters")
    for k in optimizer.params:
        optimizer.m[k] = arrays[f"m.{k}"]
        optimizer.v[k] = arrays[f"v.{k}"]
    optimizer.step_count = int(meta["adam_step"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["dropout_state"]
    return {"step": int(meta["step"]), "epoch": int(meta["epoch"]),
            "pos": int(meta["pos"]), "dropout_rng": rng, "meta": meta}


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainReport:
    role: str
    view: str
    steps: int
    seed: int
    lr: float
    num_examples: int
    final_loss: float
    loss_curve: list = field(default_factory=list)
    model_fingerprint: str = ""
    wall_seconds: float = 0.0  # logged, never serialized: files stay byte-stable

    def to_dict(self):
        return {
            "role": self.role,
            "view": self.view,
            "steps": self.steps,
            "seed": self.seed,
            "lr": self.lr,
            "num_examples": self.num_examples,
            "final_loss": self.final_loss,
            "loss_curve": self.loss_curve,
            "model_fingerprint": self.model_fingerprint,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _train(model, examples, loss_fn, *, role, view, steps, lr, seed,
           log_every=50, log=None, state_path=None, resume_from=None):
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if not examples:
        raise DataError("cannot train on an empty example list")
    opt = Adam(model.named_parameters(), lr=lr)
    step, epoch, pos = 0, 0, 0
    dropout_rng = rng_for(seed, "dropout")
    if resume_from is not None:
        restored = load_training_state(resume_from, opt)
        step, epoch, pos = restored["step"], restored["epoch"], restored["pos"]
        dropout_rng = restored["dropout_rng"]
        if step >= steps:
            raise ConfigError(
                f"resume state is already at step {step}, nothing left of {steps}"
            )
    started = time.monotonic()
    curve = []
    last = float("nan")
    while step < steps:
        perm = rng_for(seed, "order", epoch).permutation(len(examples))
        while pos < len(perm) and step < steps:
            example = examples[perm[pos]]
            loss = loss_fn(model, example, dropout_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            last = float(loss.data)
            step += 1
            pos += 1
            if step % log_every == 0 or step == steps:
                curve.append({"step": step, "loss": last})
                if log:
                    log(f"{role} step {step}/{steps} loss {last:.4f}")
        if pos >= len(perm):
            epoch += 1
            pos = 0
    if state_path is not None:
        save_training_state(state_path, opt, step=step, epoch=epoch, pos=pos,
                            dropout_rng=dropout_rng)
    return TrainReport(
        role=role, view=view, steps=steps, seed=seed, lr=lr,
        num_examples=len(examples), final_loss=last, loss_curve=curve,
        model_fingerprint=model.fingerprint(),
        wall_seconds=time.monotonic() - started,
    )


def train_teacher(model, examples, *, steps, lr=3e-4, seed=0, view="clean",
                  log_every=50, log=None, state_path=None, resume_from=None):
    """Supervised span training on one view (the teacher reads clean text)."""
    config = KDConfig(alpha=0.0)

    def loss_fn(m, example, rng):
        packed = example.view(view)
        logits = m.forward(packed, example.speech_ids, training=True, rng=rng)
        return kd_loss(logits, None, packed.gold_slots, config)

    return _train(model, examples, loss_fn, role="teacher", view=view,
                  steps=steps, lr=lr, seed=seed, log_every=log_every, log=log,
                  state_path=state_path, resume_from=resume_from)


def _clamp_slots(slots, valid):
    """Push gold slots onto the student's populated prefix (sentinel + doc)."""
    top = int(valid.sum()) - 1  # valid slots are a contiguous prefix
    return min(slots[0], top), min(slots[1], top)


def train_student(student, teacher, examples, *, steps, kd: KDConfig = None,
                  lr=3e-4, seed=0, log_every=50, log=None, state_path=None,
                  resume_from=None):
    """Distill the clean-view teacher into a student reading the ASR view.

    With kd.alpha == 0 the teacher is never consulted, so the run is
    bit-identical to plain supervised training on the ASR view.
    """
    kd = kd if kd is not None else KDConfig()
    if kd.alpha > 0.0 and teacher is None:
        raise ContractError("alpha > 0 requires a teacher model")

    def loss_fn(m, example, rng):
        packed = example.view("asr")
        logits = m.forward(packed, example.speech_ids, training=True, rng=rng)
        teacher_logits = None
        if kd.alpha > 0.0:
            clean = example.view("clean")
            with no_grad():
                teacher_logits = teacher.forward(clean, example.speech_ids)
        if kd.hard_target == "teacher_literal":
            gold = _clamp_slots(example.view("clean").gold_slots, logits.valid)
        else:
            gold = packed.gold_slots
        return kd_loss(logits, teacher_logits, gold, kd)

    return _train(student, examples, loss_fn, role="student", view="asr",
                  steps=steps, lr=lr, seed=seed, log_every=log_every, log=log,
                  state_path=state_path, resume_from=resume_from)
