"""Knowledge-distillation losses over forward traces.

The student is supervised at four levels: embedding output, per-layer
attention maps, per-layer hidden states (all mean squared error), and
a soft cross entropy between teacher and student logits.  The combined
objective is a weighted sum; zero-weight terms are skipped entirely.

The soft cross entropy divides only the student logits by the
temperature, leaving the teacher softmax untempered.  That asymmetry
is deliberate and is invisible at the default t=1; set
symmetric_temperature to temper both sides.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MappingError, RangeError, ShapeError
from .model import GradInjections, softmax


@dataclass(frozen=True)
class DistillConfig:
    embedding_weight: float = 1.0
    attention_weight: float = 1.0
    hidden_weight: float = 1.0
    prediction_weight: float = 1.0
    temperature: float = 1.0
    symmetric_temperature: bool = False
    hard_label_weight: float = 0.0

    def __post_init__(self):
        weights = (self.embedding_weight, self.attention_weight,
                   self.hidden_weight, self.prediction_weight)
        if any(w < 0 for w in weights) or self.hard_label_weight < 0:
            raise RangeError("loss weights must be non-negative")
        if not any(w > 0 for w in weights):
            raise RangeError("at least one distillation weight must be positive")
        if self.temperature <= 0:
            raise RangeError(f"temperature must be positive, got {self.temperature}")


def _as_array(x):
    return x.array if hasattr(x, "array") else np.asarray(x, dtype=np.float64)


def mse_loss(student, teacher):
    """Mean of squared elementwise differences."""
    s, t = _as_array(student), _as_array(teacher)
    if s.shape != t.shape:
        raise ShapeError(f"shape mismatch {s.shape} vs {t.shape}")
    d = s - t
    return float(np.mean(d * d))


def _log_softmax(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def prediction_loss(teacher_logits, student_logits, t=1.0,
                    symmetric=False):
    """Soft cross entropy -softmax(teacher) . log softmax(student / t).

    1-D inputs are one example; 2-D inputs average over the batch.
    """
    if t <= 0:
        raise RangeError(f"temperature must be positive, got {t}")
    ft = _as_array(teacher_logits)
    fs = _as_array(student_logits)
    if ft.shape != fs.shape:
        raise ShapeError(f"logit shape mismatch {ft.shape} vs {fs.shape}")
    if ft.ndim == 1:
        ft, fs = ft[None, :], fs[None, :]
    target = softmax(ft / t) if symmetric else softmax(ft)
    per_row = -np.sum(target * _log_softmax(fs / t), axis=-1)
    return float(per_row.mean())


def total_distill_loss(teacher_trace, student_trace, cfg):
    """Weighted four-level loss; returns (total, per-term breakdown)."""
    total, breakdown, _ = distill_injections(teacher_trace, student_trace,
                                             cfg, want_grads=False)
    return total, breakdown


def distill_injections(teacher_trace, student_trace, cfg, want_grads=True):
    """Loss, breakdown, and the upstream gradients for backward.

    The teacher trace is a constant; gradients are with respect to the
    student trace only.
    """
    if len(teacher_trace.attention) != len(student_trace.attention):
        raise MappingError(
            f"teacher has {len(teacher_trace.attention)} layers, "
            f"student has {len(student_trace.attention)}; cannot align"
        )
    if teacher_trace.logits.shape[0] != student_trace.logits.shape[0]:
        raise MappingError("teacher and student traces cover different batches")

    breakdown = {"embedding": 0.0, "attention": 0.0,
                 "hidden": 0.0, "prediction": 0.0}
    inj = GradInjections()

    if cfg.embedding_weight > 0:
        s, t = student_trace.embedding_out, teacher_trace.embedding_out
        breakdown["embedding"] = cfg.embedding_weight * mse_loss(s, t)
        if want_grads:
            inj.embedding = cfg.embedding_weight * 2.0 * (s - t) / s.size

    if cfg.attention_weight > 0:
        grads = []
        for s, t in zip(student_trace.attention, teacher_trace.attention):
            breakdown["attention"] += cfg.attention_weight * mse_loss(s, t)
            if want_grads:
                grads.append(cfg.attention_weight * 2.0 * (s - t) / s.size)
        if want_grads:
            inj.attention = tuple(grads)

    if cfg.hidden_weight > 0:
        grads = []
        for s, t in zip(student_trace.hidden, teacher_trace.hidden):
            breakdown["hidden"] += cfg.hidden_weight * mse_loss(s, t)
            if want_grads:
                grads.append(cfg.hidden_weight * 2.0 * (s - t) / s.size)
        if want_grads:
            inj.hidden = tuple(grads)

    if cfg.prediction_weight > 0:
        ft, fs = teacher_trace.logits, student_trace.logits
        tmp = cfg.temperature
        breakdown["prediction"] = cfg.prediction_weight * prediction_loss(
            ft, fs, tmp, symmetric=cfg.symmetric_temperature)
        if want_grads:
            target = softmax(ft / tmp) if cfg.symmetric_temperature else softmax(ft)
            batch = fs.shape[0]
            inj.logits = (cfg.prediction_weight / (batch * tmp)
                          * (softmax(fs / tmp) - target))

    total = sum(breakdown.values())
    return total, breakdown, inj


@dataclass(frozen=True)
class DistillRecord:
    total: float
    embedding: float
    attention: float
    hidden: float
    prediction: float


def distill_step(student, teacher, tokens, cfg, opt, hard_labels=None):
    """One optimizer step on the distillation objective.

    Masked student entries keep gradient zero and stay exactly zero
    after the update.  The teacher is only read.
    """
    teacher_trace = teacher.forward(tokens)
    student_trace, cache = student.forward(tokens, with_cache=True)
    total, breakdown, inj = distill_injections(teacher_trace, student_trace, cfg)
    if cfg.hard_label_weight > 0:
        if hard_labels is None:
            raise RangeError("hard_label_weight > 0 requires labels")
        from .tasks import cross_entropy

        ce, dlogits = cross_entropy(student_trace.logits, hard_labels)
        total += cfg.hard_label_weight * ce
        extra = cfg.hard_label_weight * dlogits
        inj.logits = extra if inj.logits is None else inj.logits + extra
    grads = student.backward(cache, inj)
    opt.step(student, grads)
    return DistillRecord(total, breakdown["embedding"], breakdown["attention"],
                         breakdown["hidden"], breakdown["prediction"])
