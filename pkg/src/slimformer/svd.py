"""One-sided Jacobi singular value decomposition and rank truncation.

The decomposition W = U diag(s) V^T is computed by orthogonalizing the
columns of W with plane rotations.  Each sweep visits every column pair once
in a fixed round-robin schedule, so pairs within a round are disjoint and the
rotations of a round can be applied as one vectorized update.  Convergence is
reached when the largest off-diagonal coherence |w_i . w_j| / (|w_i||w_j|)
seen in a sweep drops below 1e-12; the sweep cap is 60.

Wide matrices are decomposed through their transpose.  Signs are normalized
so the largest-magnitude entry of every U column is non-negative, which makes
the output deterministic across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import RangeError, SvdConvergenceError
from .tensor import DenseMatrix

COHERENCE_TOL = 1e-12
SWEEP_CAP = 60


@dataclass(frozen=True)
class SvdResult:
    """U (m x p), singular values (descending, length p), V (n x p)."""

    u: DenseMatrix
    singular_values: np.ndarray
    v: DenseMatrix

    @property
    def p(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> DenseMatrix:
        """U diag(s) V^T."""
        return DenseMatrix((self.u.array * self.singular_values) @ self.v.array.T)


def svd(w: DenseMatrix, max_sweeps: int = SWEEP_CAP) -> SvdResult:
    """Full singular value decomposition of a dense matrix.

    Deterministic for a fixed input.  Raises :class:`SvdConvergenceError`
    with the residual coherence if the sweep cap is hit.
    """
    a = w.array
    if a.shape[0] >= a.shape[1]:
        u, s, v = _jacobi(a, max_sweeps)
    else:
        v, s, u = _jacobi(a.T, max_sweeps)
    u, v = _fix_signs(u, v)
    return SvdResult(DenseMatrix(u), s, DenseMatrix(v))


def truncate(s: SvdResult, r: int) -> SvdResult:
    """Keep the top r singular triples."""
    _check_rank(s, r)
    return SvdResult(
        DenseMatrix(s.u.array[:, :r]),
        s.singular_values[:r].copy(),
        DenseMatrix(s.v.array[:, :r]),
    )


def truncation_error(s: SvdResult, r: int) -> float:
    """Frobenius error of the best rank-r approximation: sqrt(sum of discarded s_i^2)."""
    _check_rank(s, r)
    return float(np.sqrt(np.sum(s.singular_values[r:] ** 2)))


def _check_rank(s: SvdResult, r: int) -> None:
    if not 1 <= r <= s.p:
        raise RangeError(f"rank {r} outside valid range [1, {s.p}]")


def _jacobi(a: np.ndarray, max_sweeps: int):
    """One-sided Jacobi on a tall (m >= n) matrix; returns U (m x n), s, V (n x n)."""
    m, n = a.shape
    w = np.array(a, dtype=np.float64, order="F", copy=True)
    v = np.eye(n, order="F")

    if n > 1:
        residual = _sweep_to_convergence(w, v, max_sweeps)
        if residual >= COHERENCE_TOL:
            raise SvdConvergenceError(residual, max_sweeps)

    s = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]

    # Columns with negligible norm carry no direction information; replace
    # them with a deterministic orthonormal completion so U stays orthogonal.
    cutoff = s[0] * max(m, n) * 1e-14 if s[0] > 0 else 0.0
    u = np.zeros((m, n))
    kept = s > cutoff
    u[:, kept] = w[:, kept] / s[kept]
    if not kept.all():
        _complete_columns(u, kept)
    return u, s, v


def _sweep_to_convergence(w, v, max_sweeps) -> float:
    n = w.shape[1]
    schedule = _round_robin(n)
    residual = np.inf
    for _ in range(max_sweeps):
        residual = 0.0
        for ps, qs in schedule:
            wp = w[:, ps]
            wq = w[:, qs]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            denom = np.sqrt(alpha * beta)
            live = denom > 0.0
            coh = np.zeros_like(gamma)
            np.divide(np.abs(gamma), denom, out=coh, where=live)
            residual = max(residual, float(coh.max()))
            rot = coh >= COHERENCE_TOL
            if not rot.any():
                continue
            zeta = (beta[rot] - alpha[rot]) / (2.0 * gamma[rot])
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = c * t
            pr, qr = ps[rot], qs[rot]
            wp, wq = w[:, pr], w[:, qr]
            w[:, pr] = wp * c - wq * sn
            w[:, qr] = wp * sn + wq * c
            vp, vq = v[:, pr], v[:, qr]
            v[:, pr] = vp * c - vq * sn
            v[:, qr] = vp * sn + vq * c
        if residual < COHERENCE_TOL:
            return residual
    return residual


@lru_cache(maxsize=64)
def _round_robin(n: int):
    """Round-robin pair schedule: n-1 rounds of disjoint pairs covering all pairs."""
    players = list(range(n)) + ([n] if n % 2 else [])  # n is a bye slot
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = sorted(
            tuple(sorted((players[i], players[k - 1 - i])))
            for i in range(k // 2)
            if players[i] != n and players[k - 1 - i] != n
        )
        ps = np.array([p for p, _ in pairs], dtype=np.intp)
        qs = np.array([q for _, q in pairs], dtype=np.intp)
        rounds.append((ps, qs))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _complete_columns(u: np.ndarray, kept: np.ndarray) -> None:
    """Fill non-kept columns with unit vectors orthogonal to all others (in place)."""
    m = u.shape[0]
    basis = [u[:, j] for j in np.flatnonzero(kept)]
    for j in np.flatnonzero(~kept):
        for i in range(m):
            cand = np.zeros(m)
            cand[i] = 1.0
            for b in basis:  # two Gram-Schmidt passes for stability
                cand -= (b @ cand) * b
            for b in basis:
                cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 0.5:
                col = cand / norm
                u[:, j] = col
                basis.append(col)
                break


def _fix_signs(u: np.ndarray, v: np.ndarray):
    flip = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])] < 0
    if flip.any():
        u = u.copy()
        v = v.copy()
        u[:, flip] = -u[:, flip]
        v[:, flip] = -v[:, flip]
    return u, v
