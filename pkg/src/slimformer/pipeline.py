"""The iterative compress-then-distill loop.

Each iteration shrinks the retained-parameter budget by the plan's
delta (geometric schedule, clipped at the overall target), re-compresses
the current student at fractions interpolated toward the plan targets,
and fine-tunes it against the teacher by distillation.  Interpolation
is geometric: at budget s the group fractions are p^tau with
tau = ln(s) / ln(p_overall), so the product trajectory follows the
budget sequence and the final iteration lands exactly on the plan.

Compression always acts on the student's current effective weights
(the fine-tuned factored form multiplied out), not on the original
teacher weights.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .budget import CompressionPlan, allocate
from .distill import DistillConfig, distill_step
from .errors import DivergenceError, NonFiniteError, RangeError
from .factorize import factorize_layer
from .model import Adam, EncoderModel
from .prune import topk_mask
from .tasks import evaluate
from .tensor import DenseMatrix


@dataclass(frozen=True)
class TrainingRecord:
    step: int
    retained_fraction: float
    loss_total: float
    loss_embedding: float
    loss_attention: float
    loss_hidden: float
    loss_prediction: float
    val_accuracy: float


@dataclass(frozen=True)
class ScheduleState:
    """Snapshot after one compress-and-fine-tune iteration."""

    iteration: int
    budget_fraction: float
    retained_fraction: float
    group_fractions: dict
    student_bundle: object
    records: tuple
    notes: tuple


@dataclass(frozen=True)
class PipelineResult:
    student: EncoderModel
    records: tuple
    states: tuple


def budget_sequence(delta, p_overall):
    """Geometric budgets delta^k clipped to the target: the last entry
    is exactly p_overall and appears once."""
    if not 0.0 < delta < 1.0:
        raise RangeError(f"delta must be in (0, 1), got {delta}")
    if not 0.0 < p_overall <= 1.0:
        raise RangeError(f"p_overall must be in (0, 1], got {p_overall}")
    seq = []
    k = 1
    while p_overall < 1.0:
        s = delta ** k
        # the tolerance keeps delta**k == p_overall from producing a
        # near-duplicate event when the power rounds up by one ulp
        if s <= p_overall * (1.0 + 1e-12):
            seq.append(p_overall)
            break
        seq.append(s)
        k += 1
    return seq


def interpolated_plan(plan, budget):
    """Group fractions p^tau, tau = ln(budget)/ln(p_overall)."""
    tau = math.log(budget) / math.log(plan.p_overall)
    return CompressionPlan(
        p_overall=budget,
        p_embd=plan.p_embd ** tau,
        p_svd=plan.p_svd ** tau,
        p_weight=plan.p_weight ** tau,
        delta=plan.delta,
    )


def compress_model(model, plan):
    """Apply one allocation to the model's current effective weights.

    Returns the compressed student and the allocation that shaped it.
    Factor halves whose mask would be all ones carry no mask (pure
    low-rank factorization, as for embedding matrices).
    """
    alloc = allocate(model.config.shapes(), plan)
    params = {}
    masks = {}
    for e in alloc.entries:
        w = model.effective_weight(e.name)
        if e.kind == "dense":
            params[e.name] = w.copy()
            continue
        if e.kind == "masked":
            if e.ones == e.rows * e.cols:
                params[e.name] = w.copy()
                continue
            mask = topk_mask(DenseMatrix(w), e.ones).bits.array
            params[e.name] = w * mask
            masks[e.name] = mask
            continue
        pair = factorize_layer(DenseMatrix(w), rank=e.rank)
        for half, arr, ones in (("a", pair.a.array, e.ones_a),
                                ("b", pair.b.array, e.ones_b)):
            key = f"{e.name}.{half}"
            if ones == arr.size:
                params[key] = arr
            else:
                mask = topk_mask(DenseMatrix(arr), ones).bits.array
                params[key] = arr * mask
                masks[key] = mask
    return EncoderModel(model.config, params, masks), alloc


def one_shot_compress(teacher, plan):
    """Hybrid compression straight to the plan targets, no fine-tuning."""
    if plan.p_overall == 1.0:
        return teacher.copy()
    student, _ = compress_model(teacher, plan)
    return student


def run_pipeline(teacher, plan, task, distill_cfg=None,
                 epochs_per_iteration=2, lr=2e-5, batch_size=32, seed=0):
    """Iteratively compress and fine-tune a student of the teacher.

    The teacher is only read.  A plan with p_overall = 1 returns a
    bit-identical copy of the teacher and no records.  Raises
    DivergenceError (with a state dump) when the fine-tuning loss goes
    non-finite or grows tenfold over its minimum within an iteration.
    """
    cfg = distill_cfg if distill_cfg is not None else DistillConfig()
    student = teacher.copy()
    total = sum(e.size for e in teacher.config.shapes())
    rng = np.random.default_rng(seed)
    records = []
    states = []
    step = 0

    for iteration, budget in enumerate(budget_sequence(plan.delta,
                                                       plan.p_overall), 1):
        student, alloc = compress_model(student, interpolated_plan(plan, budget))
        opt = Adam(lr=lr)
        retained = student.retained_count() / total
        iter_records = []
        iter_min = math.inf
        for _ in range(epochs_per_iteration):
            order = rng.permutation(len(task.tokens_train))
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                try:
                    rec = distill_step(student, teacher,
                                       task.tokens_train[idx], cfg, opt)
                    check_divergence(rec.total, iter_min,
                                     _state_dump(iteration, budget, step,
                                                 records))
                    iter_min = min(iter_min, rec.total)
                    accuracy = evaluate(student, task.tokens_val,
                                        task.labels_val)
                except NonFiniteError as exc:
                    raise DivergenceError(
                        f"forward produced non-finite values at step {step}",
                        state=_state_dump(iteration, budget, step, records),
                    ) from exc
                row = TrainingRecord(step, retained, rec.total, rec.embedding,
                                     rec.attention, rec.hidden, rec.prediction,
                                     accuracy)
                records.append(row)
                iter_records.append(row)
                step += 1
        group_totals = {g: 0 for g in ("embedding", "encoder", "classifier")}
        for e in teacher.config.shapes():
            group_totals[e.group] += e.size
        live = student.retained_by_group()
        states.append(ScheduleState(
            iteration=iteration,
            budget_fraction=budget,
            retained_fraction=student.retained_count() / total,
            group_fractions={g: live[g] / group_totals[g] for g in live},
            student_bundle=student.to_bundle(),
            records=tuple(iter_records),
            notes=alloc.notes,
        ))
    return PipelineResult(student, tuple(records), tuple(states))


def check_divergence(total, iteration_minimum, state):
    """Abort rule: loss non-finite, or tenfold over its iteration minimum."""
    if not math.isfinite(total):
        raise DivergenceError(f"loss became non-finite: {total}", state=state)
    if total > 10.0 * iteration_minimum + 1e-12:
        raise DivergenceError(
            f"loss {total:.6g} grew past 10x its iteration minimum "
            f"{iteration_minimum:.6g}",
            state=state,
        )


def _state_dump(iteration, budget, step, records):
    return {
        "iteration": iteration,
        "budget_fraction": budget,
        "step": step,
        "recent_records": tuple(records[-10:]),
    }


CURVE_COLUMNS = ("step", "retained_fraction", "loss_total", "loss_embedding",
                 "loss_attention", "loss_hidden", "loss_prediction",
                 "val_accuracy")


def record_curve(records):
    """Training records as CSV text with a stable column order."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for r in records:
        writer.writerow([r.step, repr(r.retained_fraction), repr(r.loss_total),
                         repr(r.loss_embedding), repr(r.loss_attention),
                         repr(r.loss_hidden), repr(r.loss_prediction),
                         repr(r.val_accuracy)])
    return out.getvalue()


def truncated_config_for_budget(config, target_count):
    """Smaller architecture of the same family whose parameter count
    best matches the target; the pure-distillation baseline student."""
    from .model import ModelConfig

    best = None
    for heads in (1, 2, 4):
        for d in range(heads, config.embed_dim + 1, heads):
            # the count is monotone in the ffn width; bisect to the target
            lo, hi = 1, config.ffn_dim
            while lo < hi:
                mid = (lo + hi) // 2
                if _config_count(config, d, heads, mid) < target_count:
                    lo = mid + 1
                else:
                    hi = mid
            for f in (lo - 1, lo, lo + 1):
                if not 1 <= f <= config.ffn_dim:
                    continue
                count = _config_count(config, d, heads, f)
                gap = abs(count - target_count)
                if best is None or gap < best[0]:
                    best = (gap, d, heads, f, count)
    _, d, heads, f, _ = best
    return ModelConfig(config.vocab_size, d, config.num_layers, heads, f,
                       config.max_seq_len, config.num_classes)


def _config_count(config, d, heads, f):
    from .budget import transformer_shapes

    if f < 1:
        return 0
    table = transformer_shapes(config.vocab_size, d, config.num_layers, f,
                               config.max_seq_len, config.num_classes)
    return table.group_total()
