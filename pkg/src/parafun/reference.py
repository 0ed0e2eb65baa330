"""Independent oracles and test problem generators.

The matrix-function oracles here use truncated Taylor series with scaling
and squaring (or double-angle recovery), and the inverse uses a pivoted LU.
None of them share code with the ODE-based evaluators they are used to
check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve, solve_triangular

from .errors import DimensionError, SingularMatrixError
from .flows import Propagator, TimeGrid, propagate
from .matcore import as_matrix

__all__ = [
    "ProblemSpec",
    "generate",
    "laplacian_1d",
    "laplacian_2d",
    "spd_random_shifted",
    "reference_inverse",
    "reference_exp",
    "reference_cos",
    "reference_sin",
    "reference_cos_sin",
    "ilu0",
    "approx_inverse",
    "sequential_fine",
    "inf_norm",
    "scaling_exponent",
]

FAMILIES = ("laplacian_1d", "laplacian_2d", "spd_random_shifted")


def inf_norm(a) -> float:
    """Maximum absolute row sum."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.abs(a).sum(axis=1).max())


def scaling_exponent(a) -> int:
    """Smallest ``m >= 0`` with ``2**-m * ||a||_inf <= 1``."""
    norm = inf_norm(a)
    m = 0
    # power-of-two scaling is exact, so this scan matches the condition literally
    while np.ldexp(norm, -m) > 1.0:
        m += 1
    return m


@dataclass(frozen=True)
class ProblemSpec:
    """A reproducible test matrix.

    ``scaling`` is ``"none"``, ``"frobenius"`` (divide by the Frobenius
    norm), ``"mesh"`` (divide by ``h**2`` with ``h = 1/(n+1)``, i.e. the
    finite-difference Laplacian on the unit interval or square), or
    ``("pow2", m)`` (divide by ``2**m``).
    """

    family: str
    n: int
    scaling: Union[str, tuple] = "none"
    seed: int = 0


def laplacian_1d(n: int) -> np.ndarray:
    """``tridiag(-1, 2, -1)`` of order ``n``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    a = 2.0 * np.eye(n)
    i = np.arange(n - 1)
    a[i, i + 1] = -1.0
    a[i + 1, i] = -1.0
    return a


def laplacian_2d(n: int) -> np.ndarray:
    """5-point Laplacian on an ``n x n`` grid (order ``n**2``)."""
    t = laplacian_1d(n)
    eye = np.eye(n)
    return np.kron(eye, t) + np.kron(t, eye)


def spd_random_shifted(n: int, seed: int = 0) -> np.ndarray:
    """``Q^T diag(1..n) Q`` with a seeded random orthogonal ``Q``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    a = q.T @ np.diag(np.arange(1.0, n + 1.0)) @ q
    return 0.5 * (a + a.T)


def generate(spec: ProblemSpec) -> np.ndarray:
    if spec.n < 2:
        raise ValueError("n must be at least 2")
    if spec.family == "laplacian_1d":
        a = laplacian_1d(spec.n)
    elif spec.family == "laplacian_2d":
        a = laplacian_2d(spec.n)
    elif spec.family == "spd_random_shifted":
        a = spd_random_shifted(spec.n, spec.seed)
    else:
        raise ValueError(f"unknown family {spec.family!r}; expected one of {FAMILIES}")

    scaling = spec.scaling
    if scaling == "none":
        return a
    if scaling == "frobenius":
        return a / np.linalg.norm(a, "fro")
    if scaling == "mesh":
        return a * float(spec.n + 1) ** 2
    if isinstance(scaling, tuple) and len(scaling) == 2 and scaling[0] == "pow2":
        return np.ldexp(a, -int(scaling[1]))
    raise ValueError(f"unknown scaling {scaling!r}")


def reference_inverse(a) -> np.ndarray:
    """Inverse via LU with partial pivoting."""
    a = as_matrix(a, "a")
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"matrix must be square, got {a.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(a, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= n * np.finfo(float).eps * max(d.max(), 1e-300):
        raise SingularMatrixError("matrix is singular to working precision")
    return lu_solve((lu, piv), np.eye(n), check_finite=False)


def _square(a, name="a"):
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got {a.shape}")
    return a


def _taylor(a, start, parity, sign=1.0, max_terms=200):
    """Sum ``sign^j a^k / k!`` over ``k = start, start+parity, ...``.

    ``parity == 1`` sums every power, ``2`` every other power with
    alternating sign (cos/sin series).
    """
    n = a.shape[0]
    term = np.eye(n) if start == 0 else a.copy()
    total = term.copy()
    k = start
    a2 = a @ a if parity == 2 else a
    for _ in range(max_terms):
        if parity == 1:
            k += 1
            term = term @ a / k
        else:
            term = sign * (term @ a2) / ((k + 1) * (k + 2))
            k += 2
        total += term
        if np.linalg.norm(term, "fro") < 1e-20:
            break
    return total


def reference_exp(a) -> np.ndarray:
    """``exp(a)`` by Taylor series on ``a/2**m`` followed by ``m`` squarings."""
    a = _square(a)
    m = scaling_exponent(a)
    e = _taylor(np.ldexp(a, -m), 0, 1)
    for _ in range(m):
        e = e @ e
    return e


def reference_cos_sin(a):
    """``(cos(a), sin(a))`` by Taylor series and double-angle recovery."""
    a = _square(a)
    m = scaling_exponent(a)
    s = np.ldexp(a, -m)
    c = _taylor(s, 0, 2, sign=-1.0)
    sn = _taylor(s, 1, 2, sign=-1.0)
    eye = np.eye(a.shape[0])
    for _ in range(m):
        c, sn = 2.0 * (c @ c) - eye, 2.0 * (sn @ c)
    return c, sn


def reference_cos(a) -> np.ndarray:
    return reference_cos_sin(a)[0]


def reference_sin(a) -> np.ndarray:
    return reference_cos_sin(a)[1]


def ilu0(a):
    """ILU(0) factors of ``a`` on its own sparsity pattern.

    Returns ``(L, U)`` with unit lower triangular ``L``. Raises
    :class:`SingularMatrixError` on a zero pivot.
    """
    a = _square(a)
    n = a.shape[0]
    w = a.copy()
    pattern = a != 0.0
    for i in range(1, n):
        for k in np.nonzero(pattern[i, :i])[0]:
            if w[k, k] == 0.0:
                raise SingularMatrixError(f"zero pivot at row {k} in ILU(0)")
            w[i, k] /= w[k, k]
            cols = np.nonzero(pattern[i, k + 1:])[0] + k + 1
            w[i, cols] -= w[i, k] * w[k, cols]
    if np.any(np.diag(w) == 0.0):
        raise SingularMatrixError("zero pivot in ILU(0)")
    lower = np.tril(w, -1) + np.eye(n)
    upper = np.triu(w)
    return lower, upper


def approx_inverse(a, method="ilu0_solve", rhs=None, level=0.01):
    """Cheap approximation of ``a^{-1} @ rhs`` (``rhs`` defaults to the identity).

    ``method="ilu0_solve"`` solves ``L U X = rhs`` with the ILU(0) factors;
    ``method="threshold"`` keeps the entries of the exact inverse whose
    magnitude is at least ``level`` times the largest one, then applies the
    result to ``rhs``.
    """
    a = _square(a)
    n = a.shape[0]
    rhs = np.eye(n) if rhs is None else as_matrix(rhs, "rhs")
    if rhs.shape[0] != n:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, matrix has order {n}")
    if method == "ilu0_solve":
        lower, upper = ilu0(a)
        y = solve_triangular(lower, rhs, lower=True, unit_diagonal=True)
        return solve_triangular(upper, y, lower=False)
    if method == "threshold":
        inv = reference_inverse(a)
        big = np.abs(inv).max()
        inv = np.where(np.abs(inv) < level * big, 0.0, inv)
        return inv @ rhs
    raise ValueError(f"unknown approximation method {method!r}")


def sequential_fine(flow, grid: TimeGrid, scheme, u0) -> list:
    """Fine solution at every coarse node by one sequential sweep.

    Interval ``n`` is advanced with ``grid.n_fine`` substeps of ``scheme``,
    exactly as a parareal fine propagator would do it.
    """
    prop = scheme if isinstance(scheme, Propagator) else Propagator(flow, scheme, grid.n_fine)
    times = grid.times
    out = [np.array(u0, dtype=np.float64)]
    for n in range(grid.n_coarse):
        out.append(propagate(prop, float(times[n]), float(times[n + 1]), out[-1], interval=n))
    return out
