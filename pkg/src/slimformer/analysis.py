"""One-shot compression bias distributions and learning-curve summaries.

The bias of a compression scheme is the elementwise difference between
the compressed realization of a weight matrix and the original.  The
study here compares the bias spread of pure pruning, pure low-rank
factorization, and the hybrid of the two at a matched parameter budget,
on seeded Gaussian matrices standing in for pretrained weights.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InputError, RangeError, ShapeError
from .factorize import factorize_layer, reconstruct
from .hybrid import compress_layer, effective_weight
from .prune import apply_mask, magnitude_mask
from .tensor import DenseMatrix

MODES = ("prune", "svd", "hybrid")


@dataclass(frozen=True)
class BiasHistogram:
    """Uniform-bin histogram of one arm's bias values.

    Bins are symmetric about zero and cover every observed value, so
    counts always sum to the element count of the analyzed matrix.
    """
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    mode: str


def bias_matrix(original, compressed):
    """Elementwise compression error, compressed minus original."""
    if original.shape != compressed.shape:
        raise ShapeError(
            f"compressed shape {compressed.shape} does not match "
            f"original {original.shape}"
        )
    return DenseMatrix(compressed.array - original.array)


def compressed_matrix(w, mode, retain, split=None):
    """One-shot dense realization of w under the named scheme.

    A retained fraction of 1 skips the stage entirely, so every mode
    returns the matrix unchanged.  The hybrid split defaults to pruning
    half the factor entries, mirroring the reference configuration
    (retain 0.2 from factorization to 0.4 then pruning to 0.5 of that).
    """
    if not 0.0 < retain <= 1.0:
        raise RangeError(f"retain must be in (0, 1], got {retain}")
    if mode == "prune":
        return apply_mask(w, magnitude_mask(w, retain))
    if mode == "svd":
        if retain == 1.0:
            return w
        return reconstruct(factorize_layer(w, retain))
    if mode == "hybrid":
        if split is None:
            split = (1.0, 1.0) if retain == 1.0 else (2.0 * retain, 0.5)
        svd_f, prune_f = split
        if not (0.0 < svd_f <= 1.0 and 0.0 < prune_f <= 1.0):
            raise RangeError(f"infeasible split {split} for retain {retain}")
        if abs(svd_f * prune_f - retain) > 1e-9:
            raise RangeError(
                f"split {split} multiplies to {svd_f * prune_f}, "
                f"not retain {retain}"
            )
        if svd_f == 1.0:
            return apply_mask(w, magnitude_mask(w, prune_f))
        return effective_weight(compress_layer(w, svd_f, prune_f))
    raise InputError(f"unknown mode {mode!r}, expected one of {MODES}")


def bias_histogram(bias, mode, bins=101):
    """Histogram the bias entries into uniform bins symmetric about 0."""
    if bins < 1:
        raise RangeError(f"bins must be >= 1, got {bins}")
    flat = bias.array.ravel() if isinstance(bias, DenseMatrix) else np.ravel(bias)
    limit = float(np.max(np.abs(flat)))
    if limit == 0.0:
        limit = 1.0
    edges = np.linspace(-limit, limit, bins + 1)
    counts, _ = np.histogram(flat, edges)
    return BiasHistogram(
        edges=edges,
        counts=counts,
        mean=float(flat.mean()),
        std=float(flat.std()),
        mode=mode,
    )


def bias_study(w, retain, split=None, bins=101):
    """Bias histograms of the three schemes at one retained fraction.

    Returns (prune, svd, hybrid) histograms, all computed one-shot with
    no fine-tuning.  The pure arms compress straight to retain; the
    hybrid arm uses the split (svd fraction, prune fraction), whose
    product must equal retain.
    """
    out = []
    for mode in MODES:
        compressed = compressed_matrix(w, mode, retain, split=split)
        out.append(bias_histogram(bias_matrix(w, compressed), mode, bins=bins))
    return tuple(out)


def gaussian_testbed(count=20, rows=64, cols=64, seed=0):
    """Seeded standard-normal matrices standing in for pretrained weights."""
    rng = np.random.default_rng(seed)
    return [DenseMatrix(rng.standard_normal((rows, cols)))
            for _ in range(count)]


def histogram_csv(hist):
    """Bin rows plus a trailing stats row holding mean and deviation."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("bin_left", "bin_right", "count"))
    for left, right, count in zip(hist.edges[:-1], hist.edges[1:],
                                  hist.counts):
        writer.writerow((repr(float(left)), repr(float(right)), int(count)))
    writer.writerow(("stats", repr(hist.mean), repr(hist.std)))
    return out.getvalue()


DEFAULT_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class CurveComparison:
    metric: str
    thresholds: tuple
    first_steps_a: tuple
    first_steps_b: tuple
    final_a: float
    final_b: float


def _read_curve(text, metric):
    reader = csv.DictReader(io.StringIO(text))
    fields = reader.fieldnames or ()
    if "step" not in fields or metric not in fields:
        raise InputError(
            f"curve needs step and {metric} columns, got {list(fields)}"
        )
    rows = list(reader)
    if not rows:
        raise InputError("curve has no data rows")
    steps = [int(float(r["step"])) for r in rows]
    values = [float(r[metric]) for r in rows]
    return steps, values


def _first_step(steps, values, threshold):
    for step, value in zip(steps, values):
        if value >= threshold:
            return step
    return None


def compare_curves(curve_a, curve_b, metric="val_accuracy",
                   thresholds=DEFAULT_THRESHOLDS):
    """First step each curve reaches each threshold, plus final values.

    Curves are CSV text with a step column and the metric column; a
    curve that never reaches a threshold reports None for it.
    """
    steps_a, values_a = _read_curve(curve_a, metric)
    steps_b, values_b = _read_curve(curve_b, metric)
    return CurveComparison(
        metric=metric,
        thresholds=tuple(thresholds),
        first_steps_a=tuple(_first_step(steps_a, values_a, t)
                            for t in thresholds),
        first_steps_b=tuple(_first_step(steps_b, values_b, t)
                            for t in thresholds),
        final_a=values_a[-1],
        final_b=values_b[-1],
    )


def comparison_csv(comp):
    """Threshold rows plus a trailing row with the final metric values."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("threshold", "first_step_a", "first_step_b"))
    for threshold, a, b in zip(comp.thresholds, comp.first_steps_a,
                               comp.first_steps_b):
        writer.writerow((repr(float(threshold)),
                         "" if a is None else a,
                         "" if b is None else b))
    writer.writerow(("final", repr(comp.final_a), repr(comp.final_b)))
    return out.getvalue()
