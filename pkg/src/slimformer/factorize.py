"""Low-rank factor pairs built from truncated SVD.

A weight matrix W (m x n) is replaced by A @ B.T with A = U_r sqrt(S_r)
and B = V_r sqrt(S_r), so the product equals the rank-r truncation of W.
The rank is chosen from a target retained fraction: storing the pair
costs (m+n)*r parameters against m*n for the dense matrix.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ExpansionWarning, RangeError, ShapeError
from .svd import svd, truncate
from .tensor import DenseMatrix


@dataclass(frozen=True)
class LowRankPair:
    """Balanced factor pair (a: m x r, b: n x r) with a @ b.T ~ W."""

    a: DenseMatrix
    b: DenseMatrix
    r: int

    def __post_init__(self):
        if self.r < 1:
            raise RangeError(f"rank must be >= 1, got {self.r}")
        if self.a.cols != self.r or self.b.cols != self.r:
            raise ShapeError(
                f"factor widths {self.a.cols} and {self.b.cols} "
                f"do not match rank {self.r}"
            )

    @property
    def shape(self):
        """Shape of the reconstructed matrix."""
        return (self.a.rows, self.b.rows)


def rank_for_ratio(m, n, p_svd):
    """Rank whose factor pair retains at most fraction p_svd of m*n.

    r = max(1, floor(m*n/(m+n) * p_svd)); the floor keeps the pair at or
    under budget, the clamp guarantees a usable rank.
    """
    if m < 1 or n < 1:
        raise RangeError(f"matrix dims must be >= 1, got {m}x{n}")
    if not 0.0 < p_svd <= 1.0:
        raise RangeError(f"p_svd must be in (0, 1], got {p_svd}")
    return max(1, math.floor(m * n / (m + n) * p_svd))


def factor_ratio(m, n, r):
    """Retained fraction (m+n)*r / (m*n) of a rank-r factor pair."""
    if m < 1 or n < 1:
        raise RangeError(f"matrix dims must be >= 1, got {m}x{n}")
    if not 1 <= r <= min(m, n):
        raise RangeError(f"rank {r} out of [1, {min(m, n)}] for {m}x{n}")
    return (m + n) * r / (m * n)


def factorize_layer(w, p_svd=1.0, rank=None):
    """Factor w into a LowRankPair at retained fraction p_svd.

    When rank is given it overrides the ratio-derived value.  A pair that
    would store more parameters than the dense matrix raises
    ExpansionWarning but is still returned; budget code must not accept
    such a layer silently.
    """
    r = rank_for_ratio(w.rows, w.cols, p_svd) if rank is None else rank
    ratio = factor_ratio(w.rows, w.cols, r)
    if ratio > 1.0:
        warnings.warn(
            f"rank {r} pair for {w.rows}x{w.cols} stores {ratio:.4f} "
            "of the dense parameter count",
            ExpansionWarning,
            stacklevel=2,
        )
    res = truncate(svd(w), r)
    root = np.sqrt(res.singular_values)
    return LowRankPair(
        a=DenseMatrix(res.u.array * root),
        b=DenseMatrix(res.v.array * root),
        r=r,
    )


def reconstruct(pair):
    """Densify a pair back to a @ b.T."""
    return DenseMatrix(pair.a.array @ pair.b.array.T)
