"""Matrix ODE right-hand sides and single-interval propagators.

Every flow acts on a dense ``(n, s)`` state. Linear flows have the form
``dX/dt = L @ X + C`` with a constant square ``L`` and a constant source
``C`` (``None`` for homogeneous flows); the propagators below exploit that
structure for Crank-Nicolson and for affine recombination.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import DimensionError, NumericalError, SingularMatrixError, UnsupportedSchemeError
from .matcore import as_matrix

__all__ = [
    "FlowSpec",
    "TimeGrid",
    "Propagator",
    "rhs_eval",
    "propagate",
    "propagate_affine",
    "EULER",
    "CRANK_NICOLSON",
]

EULER = "explicit_euler"
CRANK_NICOLSON = "crank_nicolson"
SCHEMES = (EULER, CRANK_NICOLSON)
_SCHEME_ALIASES = {"euler": EULER, "cn": CRANK_NICOLSON, EULER: EULER, CRANK_NICOLSON: CRANK_NICOLSON}

LINEAR_KINDS = ("linear_homogeneous", "linear_inhomogeneous", "trig_block", "steady_residual")
KINDS = LINEAR_KINDS + ("inverse_riccati",)


@dataclass(frozen=True, eq=False)
class FlowSpec:
    """Right-hand side of a matrix ODE.

    Build instances with the classmethod constructors rather than directly.
    ``operator`` is the square matrix the flow is built from (``B``,
    ``A_op``, ``A`` depending on the kind), ``source`` the constant
    inhomogeneous term, and ``shift`` the homotopy start ``X0ref`` for the
    inverse and trigonometric flows.
    """

    kind: str
    operator: np.ndarray
    source: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    _linear: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        op = self.operator
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise DimensionError(f"flow operator must be square, got {op.shape}")
        if self.shift is not None and self.shift.shape != op.shape:
            raise DimensionError(f"shift shape {self.shift.shape} does not match operator {op.shape}")
        if self.source is not None and self.source.shape[0] != self.state_rows:
            raise DimensionError(
                f"source has {self.source.shape[0]} rows, state has {self.state_rows}")

    # -- constructors -----------------------------------------------------
    @classmethod
    def linear_homogeneous(cls, b):
        """``dX/dt = B X``."""
        return cls("linear_homogeneous", as_matrix(b, "B"))

    @classmethod
    def linear_inhomogeneous(cls, a_op, g_source):
        """``dX/dt = A_op X + G``, ``G`` constant in time."""
        return cls("linear_inhomogeneous", as_matrix(a_op, "A_op"), source=as_matrix(g_source, "G"))

    @classmethod
    def inverse_riccati(cls, a, x0ref=None):
        """``dQ/dt = -Q (A - X0ref) Q``; with ``Q(0) = X0ref^{-1}`` gives the inverse path."""
        a = as_matrix(a, "A")
        x0ref = np.eye(a.shape[0]) if x0ref is None else as_matrix(x0ref, "X0ref")
        return cls("inverse_riccati", a, shift=x0ref)

    @classmethod
    def trig_block(cls, a, x0ref=None):
        """Stacked state ``(X; Y)`` with ``X' = (A - X0) Y`` and ``Y' = -(A - X0) X``."""
        a = as_matrix(a, "A")
        x0ref = np.zeros_like(a) if x0ref is None else as_matrix(x0ref, "X0ref")
        return cls("trig_block", a, shift=x0ref)

    @classmethod
    def steady_residual(cls, a, rhs):
        """``dX/dt = RHS - A X``; the steady state solves ``A X = RHS``."""
        return cls("steady_residual", as_matrix(a, "A"), source=as_matrix(rhs, "RHS"))

    # -- structure --------------------------------------------------------
    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    @property
    def is_homogeneous(self) -> bool:
        return self.kind in ("linear_homogeneous", "trig_block")

    @property
    def state_rows(self) -> int:
        n = self.operator.shape[0]
        return 2 * n if self.kind == "trig_block" else n

    @property
    def shifted(self) -> np.ndarray:
        """``A - X0ref`` for the homotopy flows."""
        return self.operator - self.shift

    def linear_part(self):
        """Return ``(L, C)`` with ``dX/dt = L X + C``; ``C`` is ``None`` if homogeneous."""
        if not self.is_linear:
            raise UnsupportedSchemeError(f"{self.kind} flow is not linear")
        if self._linear is None:
            if self.kind in ("linear_homogeneous", "linear_inhomogeneous"):
                lin = (self.operator, self.source)
            elif self.kind == "steady_residual":
                lin = (-self.operator, self.source)
            else:
                m = self.shifted
                z = np.zeros_like(m)
                lin = (np.block([[z, m], [-m, z]]), None)
            object.__setattr__(self, "_linear", lin)
        return self._linear

    def check_state(self, x):
        if x.ndim != 2 or x.shape[0] != self.state_rows:
            raise DimensionError(
                f"state of shape {x.shape} incompatible with {self.kind} flow "
                f"(expected {self.state_rows} rows)")
        if self.source is not None and self.source.shape != x.shape:
            raise DimensionError(f"source shape {self.source.shape} differs from state {x.shape}")
        if self.kind == "inverse_riccati" and x.shape[1] != x.shape[0]:
            raise DimensionError("inverse_riccati state must be square")
        if self.kind == "trig_block" and x.shape[1] != self.operator.shape[0]:
            raise DimensionError("trig_block state must be a stack of two square blocks")


def rhs_eval(flow: FlowSpec, t: float, x) -> np.ndarray:
    """Evaluate the time derivative of ``flow`` at state ``x``."""
    x = np.asarray(x, dtype=np.float64)
    flow.check_state(x)
    kind = flow.kind
    if kind == "linear_homogeneous":
        return flow.operator @ x
    if kind == "linear_inhomogeneous":
        return flow.operator @ x + flow.source
    if kind == "steady_residual":
        return flow.source - flow.operator @ x
    if kind == "inverse_riccati":
        return -(x @ flow.shifted @ x)
    # trig_block, evaluated block-wise
    n = flow.operator.shape[0]
    m = flow.shifted
    return np.vstack((m @ x[n:], -(m @ x[:n])))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform coarse partition of ``[t_start, t_end]`` into ``n_coarse``
    intervals, each split into ``n_fine`` substeps."""

    t_start: float
    t_end: float
    n_coarse: int
    n_fine: int = 1

    def __post_init__(self):
        if int(self.n_coarse) != self.n_coarse or self.n_coarse < 1:
            raise ValueError(f"n_coarse must be a positive integer, got {self.n_coarse}")
        if int(self.n_fine) != self.n_fine or self.n_fine < 1:
            raise ValueError(f"n_fine must be a positive integer, got {self.n_fine}")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def coarse_step(self) -> float:
        return (self.t_end - self.t_start) / self.n_coarse

    @property
    def fine_step(self) -> float:
        return self.coarse_step / self.n_fine

    @property
    def times(self) -> np.ndarray:
        n = np.arange(self.n_coarse + 1)
        return self.t_start + (self.t_end - self.t_start) * n / self.n_coarse

    def interval(self, n: int):
        t = self.times
        return float(t[n]), float(t[n + 1])


class Propagator:
    """Advance a flow across ``[t0, t1]`` with ``steps`` uniform substeps.

    Crank-Nicolson is restricted to linear flows; its system matrix
    ``I - h/2 L`` is LU-factored once per distinct step size and cached.
    Pass ``interval`` to build the factorization for ``h = interval/steps``
    eagerly.
    """

    def __init__(self, flow: FlowSpec, scheme: str = EULER, steps: int = 1,
                 interval: Optional[float] = None):
        try:
            scheme = _SCHEME_ALIASES[scheme]
        except KeyError:
            raise UnsupportedSchemeError(f"unknown scheme {scheme!r}; use one of {SCHEMES}") from None
        if int(steps) != steps or steps < 1:
            raise ValueError(f"steps must be a positive integer, got {steps}")
        if scheme == CRANK_NICOLSON and not flow.is_linear:
            raise UnsupportedSchemeError(f"Crank-Nicolson needs a linear flow, got {flow.kind}")
        self.flow = flow
        self.scheme = scheme
        self.steps = int(steps)
        self._lu = {}
        self._lock = threading.Lock()
        self._local = threading.local()
        if scheme == CRANK_NICOLSON and interval is not None:
            self._factor(interval / self.steps)

    def __repr__(self):
        return f"Propagator({self.flow.kind}, {self.scheme}, steps={self.steps})"

    def with_steps(self, steps: int) -> "Propagator":
        return Propagator(self.flow, self.scheme, steps)

    def _factor(self, h):
        with self._lock:
            cached = self._lu.get(h)
            if cached is not None:
                return cached
            lin, src = self.flow.linear_part()
            eye = np.eye(lin.shape[0])
            lhs = eye - 0.5 * h * lin
            with warnings.catch_warnings():
                # singularity is reported below as SingularMatrixError
                warnings.simplefilter("ignore", LinAlgWarning)
                lu, piv = lu_factor(lhs, check_finite=False)
            d = np.abs(np.diag(lu))
            if d.min() <= np.finfo(float).eps * d.max() or not np.all(np.isfinite(lu)):
                raise SingularMatrixError(f"Crank-Nicolson system matrix is singular for h={h!r}")
            rhs_op = eye + 0.5 * h * lin
            shift = None if src is None else lu_solve((lu, piv), h * src, check_finite=False)
            cached = ((lu, piv), rhs_op, shift)
            self._lu[h] = cached
            return cached

    def _solver(self, h):
        """Cached factorization for step ``h`` with LU arrays private to the calling thread.

        Concurrent ``lu_solve`` calls that share factor arrays corrupt the
        heap with the bundled LAPACK, so each worker thread gets its own copy.
        """
        local = getattr(self._local, "lu", None)
        if local is None:
            local = self._local.lu = {}
        entry = local.get(h)
        if entry is None:
            (lu, piv), rhs_op, shift = self._factor(h)
            entry = local[h] = ((lu.copy(), piv.copy()), rhs_op, shift)
        return entry

    def __call__(self, t0, t1, x0, interval=None):
        return propagate(self, t0, t1, x0, interval=interval)


def propagate(p: Propagator, t0: float, t1: float, x0, interval=None) -> np.ndarray:
    """Apply ``p.steps`` substeps of ``p.scheme`` from ``t0`` to ``t1``.

    ``interval`` only labels a :class:`NumericalError` raised on
    non-finite output.
    """
    if not t1 > t0:
        raise ValueError(f"t1 must exceed t0 (got {t0}, {t1})")
    x = np.array(x0, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    p.flow.check_state(x)
    h = (t1 - t0) / p.steps
    # overflow is detected by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        if p.scheme == EULER:
            t = t0
            for j in range(p.steps):
                x = x + h * rhs_eval(p.flow, t, x)
                t = t0 + (j + 1) * h
        else:
            factors, rhs_op, shift = p._solver(h)
            for _ in range(p.steps):
                x = lu_solve(factors, rhs_op @ x, check_finite=False)
                if shift is not None:
                    x = x + shift
    if not np.all(np.isfinite(x)):
        where = "" if interval is None else f" in interval {interval}"
        raise NumericalError(f"non-finite state after propagation{where}", interval=interval)
    return x


def propagate_affine(p: Propagator, t0, t1, basis: Sequence[np.ndarray], coeffs,
                     zero_image=None, images: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """Propagate ``sum_i coeffs[i] * basis[i]`` through a linear flow by
    recombining images.

    Uses ``F(sum a_i B_i) = sum a_i (F(B_i) - F(0)) + F(0)``. ``images`` are
    the precomputed ``F(B_i)``; missing images and ``zero_image`` are
    computed on demand.
    """
    if not p.flow.is_linear:
        raise UnsupportedSchemeError("affine recombination needs a linear flow")
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    if len(basis) != coeffs.size:
        raise DimensionError(f"{len(basis)} basis blocks but {coeffs.size} coefficients")
    if images is None:
        images = [propagate(p, t0, t1, b) for b in basis]
    elif len(images) != len(basis):
        raise DimensionError(f"{len(images)} images for {len(basis)} basis blocks")
    if zero_image is None:
        if p.flow.is_homogeneous:
            zero_image = np.zeros_like(basis[0])
        else:
            zero_image = propagate(p, t0, t1, np.zeros_like(basis[0]))
    out = np.zeros_like(zero_image)
    for a, img in zip(coeffs, images):
        out += a * (img - zero_image)
    return out + zero_image
