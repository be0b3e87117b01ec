"""Synthetic classification tasks and supervised training helpers.

Tasks are sequence-classification problems over synthetic token ids:
the label is the bucket (token id modulo the class count) holding the
majority of the sequence's tokens.  Sampling is stratified: targets
cycle through the classes and sequences are biased toward the target
bucket, so the label histogram stays balanced and the task is learnable
by a small encoder.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError
from .model import Adam, GradInjections, softmax


@dataclass(frozen=True)
class TaskConfig:
    seed: int
    vocab_size: int = 64
    seq_len: int = 16
    num_classes: int = 3
    train_count: int = 512
    val_count: int = 256
    bucket_bias: float = 0.35

    def __post_init__(self):
        if self.num_classes < 2 or self.num_classes > self.vocab_size:
            raise RangeError(
                f"num_classes {self.num_classes} outside [2, vocab_size]"
            )
        if not 0.0 <= self.bucket_bias < 1.0:
            raise RangeError(f"bucket_bias {self.bucket_bias} outside [0, 1)")
        for name in ("vocab_size", "seq_len", "train_count", "val_count"):
            if getattr(self, name) < 1:
                raise RangeError(f"{name} must be positive")


@dataclass(frozen=True)
class SyntheticTask:
    config: TaskConfig
    tokens_train: np.ndarray
    labels_train: np.ndarray
    tokens_val: np.ndarray
    labels_val: np.ndarray


def bucket_label(tokens, num_classes):
    """Majority bucket of one sequence; ties resolve to the lowest class."""
    counts = np.bincount(np.asarray(tokens) % num_classes,
                         minlength=num_classes)
    return int(np.argmax(counts))


def _sample_split(rng, cfg, count):
    buckets = [np.arange(c, cfg.vocab_size, cfg.num_classes)
               for c in range(cfg.num_classes)]
    tokens = np.empty((count, cfg.seq_len), dtype=np.int64)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        target = i % cfg.num_classes
        for _ in range(50):
            biased = rng.random(cfg.seq_len) < cfg.bucket_bias
            seq = rng.integers(0, cfg.vocab_size, size=cfg.seq_len)
            pool = buckets[target]
            seq[biased] = pool[rng.integers(0, len(pool), size=biased.sum())]
            if bucket_label(seq, cfg.num_classes) == target:
                break
        tokens[i] = seq
        labels[i] = bucket_label(seq, cfg.num_classes)
    return tokens, labels


def generate_task(cfg):
    rng = np.random.default_rng(cfg.seed)
    tokens_train, labels_train = _sample_split(rng, cfg, cfg.train_count)
    tokens_val, labels_val = _sample_split(rng, cfg, cfg.val_count)
    return SyntheticTask(cfg, tokens_train, labels_train,
                         tokens_val, labels_val)


def cross_entropy(logits, labels):
    """Mean CE over the batch plus the gradient w.r.t. the logits."""
    probs = softmax(logits)
    n = logits.shape[0]
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def evaluate(model, tokens, labels, batch_size=128):
    """Fraction of sequences whose argmax logit matches the label."""
    hits = 0
    for start in range(0, len(tokens), batch_size):
        chunk = tokens[start:start + batch_size]
        trace = model.forward(chunk)
        hits += int((np.argmax(trace.logits, axis=1)
                     == labels[start:start + batch_size]).sum())
    return hits / len(tokens)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_accuracy: float


def train_classifier(model, task, epochs, lr=2e-5, batch_size=32, seed=0):
    """Supervised fine-tuning on the task's hard labels, in place."""
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    history = []
    n = len(task.tokens_train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            trace, cache = model.forward(task.tokens_train[idx], with_cache=True)
            loss, dlogits = cross_entropy(trace.logits, task.labels_train[idx])
            grads = model.backward(cache, GradInjections(logits=dlogits))
            opt.step(model, grads)
            losses.append(loss)
        acc = evaluate(model, task.tokens_val, task.labels_val)
        history.append(EpochRecord(epoch, float(np.mean(losses)), acc))
    return history
