"""Dense matrix values and Frobenius geometry on families of blocks.

A *block family* is an ordered sequence of equally shaped ``(n, s)`` arrays.
The diamond product of two families is their Gram matrix under the
Frobenius inner product, and :func:`global_qr` is Gram-Schmidt carried out
block-wise with that inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericalError

__all__ = [
    "GlobalQRResult",
    "as_matrix",
    "check_finite",
    "diamond_product",
    "frobenius_inner",
    "frobenius_norm",
    "global_qr",
    "combine",
    "project",
    "RANK_TOL",
]

#: relative threshold below which a Gram-Schmidt residual counts as zero
RANK_TOL = 1e-12


def as_matrix(x, name="matrix"):
    """Return ``x`` as a C-contiguous 2-D float64 array.

    1-D input is promoted to a single column. Raises
    :class:`DimensionError` for other ranks and :class:`NumericalError`
    for non-finite entries.
    """
    a = np.array(x, dtype=np.float64, order="C", copy=True)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    check_finite(a, name)
    return a


def check_finite(a, name="matrix", interval=None):
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} contains non-finite entries", interval=interval)
    return a


def _same_shape(a, b, what="operands"):
    if a.shape != b.shape:
        raise DimensionError(f"{what} have different shapes {a.shape} and {b.shape}")


def frobenius_inner(a, b):
    """Frobenius inner product ``tr(b.T @ a) = sum_ij a_ij b_ij``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.dot(a.ravel(), a.ravel())))


def _block_shape(blocks: Sequence[np.ndarray]):
    shape = None
    for i, z in enumerate(blocks):
        if shape is None:
            shape = z.shape
        elif z.shape != shape:
            raise DimensionError(f"block {i} has shape {z.shape}, expected {shape}")
    return shape


def diamond_product(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    """Gram matrix ``A^T <> B`` with entries ``<A_i, B_j>_F``.

    Returns an array of shape ``(len(a), len(b))``.
    """
    sa = _block_shape(a)
    sb = _block_shape(b)
    if sa is not None and sb is not None and sa != sb:
        raise DimensionError(f"block shapes differ: {sa} vs {sb}")
    if not a or not b:
        return np.zeros((len(a), len(b)))
    fa = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in a])
    fb = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in b])
    return fa @ fb.T


@dataclass
class GlobalQRResult:
    """Outcome of :func:`global_qr`.

    Attributes
    ----------
    q : list of ndarray
        The F-orthonormal blocks that were kept, in input order.
    r : ndarray, shape (k, k)
        Upper triangular coefficients for all ``k`` input blocks. Rows and
        columns of eliminated blocks are kept in place with a zero
        diagonal; use :attr:`r_kept` for the reduced factor.
    kept : list of int
        Input indices whose residual survived the rank test.
    """

    q: list
    r: np.ndarray
    kept: list = field(default_factory=list)

    @property
    def r_kept(self) -> np.ndarray:
        idx = np.asarray(self.kept, dtype=int)
        return self.r[np.ix_(idx, idx)]

    @property
    def rank(self) -> int:
        return len(self.kept)


def global_qr(z: Sequence[np.ndarray], basis: Sequence[np.ndarray] = (),
              reorthogonalize: bool = True, rank_tol: float = RANK_TOL) -> GlobalQRResult:
    """Block Gram-Schmidt with respect to the Frobenius inner product.

    Parameters
    ----------
    z : sequence of (n, s) arrays
        Blocks to factor.
    basis : sequence of (n, s) arrays, optional
        An F-orthonormal family that is already in the span; new blocks are
        orthogonalized against it and it is never modified. Columns of ``r``
        only cover ``z``; coefficients against ``basis`` are not returned.
    reorthogonalize : bool
        Run a second Gram-Schmidt pass on each block (coefficients of both
        passes are accumulated into ``r``). Keeps ``Q^T <> Q = I`` at round-off
        level when blocks are nearly dependent.
    rank_tol : float
        A residual is dropped when ``r_ii <= rank_tol * max(1, ||Z_i||_F)``.

    Returns
    -------
    GlobalQRResult
        Only newly created blocks appear in ``q``.
    """
    blocks = [np.asarray(b, dtype=np.float64) for b in z]
    fixed = [np.asarray(b, dtype=np.float64) for b in basis]
    _block_shape(fixed + blocks)
    k = len(blocks)
    r = np.zeros((k, k))
    q: list = []
    kept: list = []
    if k == 0:
        return GlobalQRResult(q=q, r=r, kept=kept)

    passes = 2 if reorthogonalize else 1
    for i, zi in enumerate(blocks):
        w = zi.copy()
        znorm = frobenius_norm(zi)
        for _ in range(passes):
            for qb in fixed:
                w -= frobenius_inner(w, qb) * qb
            for j, qj in zip(kept, q):
                c = frobenius_inner(w, qj)
                r[j, i] += c
                w -= c * qj
        rii = frobenius_norm(w)
        if rii <= rank_tol * max(1.0, znorm):
            continue
        r[i, i] = rii
        q.append(w / rii)
        kept.append(i)
    for qi in q:
        if not np.all(np.isfinite(qi)):
            raise NumericalError("global_qr produced non-finite blocks")
    return GlobalQRResult(q=q, r=r, kept=kept)


def project(q: Sequence[np.ndarray], y):
    """Orthogonal projection of ``y`` onto ``span(q)``.

    ``q`` must be F-orthonormal. Returns ``(coeffs, projection)`` where
    ``coeffs = Q^T <> Y``.
    """
    y = np.asarray(y, dtype=np.float64)
    if not q:
        return np.zeros(0), np.zeros_like(y)
    for i, qi in enumerate(q):
        if qi.shape != y.shape:
            raise DimensionError(f"block {i} has shape {qi.shape}, input has {y.shape}")
    coeffs = diamond_product(q, [y])[:, 0]
    return coeffs, combine(q, coeffs)


def combine(blocks: Sequence[np.ndarray], coeffs) -> np.ndarray:
    """Return ``sum_i coeffs[i] * blocks[i]`` accumulated in list order."""
    if len(blocks) != len(coeffs):
        raise DimensionError(f"{len(blocks)} blocks but {len(coeffs)} coefficients")
    out = np.zeros_like(blocks[0])
    for c, b in zip(coeffs, blocks):
        out += c * b
    return out
