"""Accelerated convergence to the steady state of ``dX/dt = B - A X``.

The accelerated iterations add a control term ``u`` to the explicit
Euler (or steepest-descent) step. Starting from ``u = X~ - X0`` for an
approximation ``X~`` of the steady state, ``u`` follows the discrete
decay ``u <- (I - dt A) u``. Every routine also runs the unaccelerated
iteration alongside and records the ratio of the two residual norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, DivergenceError, NotSPDError, NumericalError

__all__ = [
    "RatioHistory",
    "AccelState",
    "accelerator_init",
    "accelerator_step",
    "simple_gradient_accelerated",
    "steepest_descent_accelerated",
    "inverse_accelerated",
    "cg_accelerated",
]

DIVERGENCE_LIMIT = 1e12
# slack on the cutoff time so that k * dt == 1 up to rounding still counts
_CUTOFF_SLACK = 1e-12


@dataclass
class RatioHistory:
    """Residual norms of the plain and accelerated iterations over time.

    ``ratio[i] = residual_accel[i] / residual_plain[i]``; index 0 is the
    common starting point.
    """

    times: list = field(default_factory=list)
    ratio: list = field(default_factory=list)
    residual_plain: list = field(default_factory=list)
    residual_accel: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    max_drift: float = 0.0

    def record(self, step, t, res_plain, res_accel):
        self.steps.append(step)
        self.times.append(t)
        self.residual_plain.append(res_plain)
        self.residual_accel.append(res_accel)
        if res_plain > 0.0:
            self.ratio.append(res_accel / res_plain)
        else:
            self.ratio.append(0.0 if res_accel == 0.0 else np.inf)

    def ratio_at(self, t: float) -> float:
        """Ratio at the first recorded time ``>= t``."""
        idx = int(np.searchsorted(np.asarray(self.times), t - 1e-12 * max(1.0, abs(t))))
        return self.ratio[min(idx, len(self.ratio) - 1)]


@dataclass
class AccelState:
    x: np.ndarray
    u: np.ndarray
    r: Optional[np.ndarray] = None
    k: int = 0
    dt_history: list = field(default_factory=list)


def _norm(x) -> float:
    return float(np.linalg.norm(x))


def accelerator_init(x_tilde, x0) -> np.ndarray:
    """Initial accelerator ``u0 = X~ - X0``."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x_tilde.shape != x0.shape:
        raise DimensionError(f"shapes differ: {x_tilde.shape} vs {x0.shape}")
    return x_tilde - x0


def _operator(a):
    """Dense float array, or CSR if ``a`` is a scipy sparse matrix."""
    if sp.issparse(a):
        return sp.csr_matrix(a, dtype=np.float64)
    return np.asarray(a, dtype=np.float64)


def accelerator_step(u, a, dt: float) -> np.ndarray:
    """``(I - dt A) u``; ``a`` may be dense or scipy sparse."""
    u = np.asarray(u, dtype=np.float64)
    a = _operator(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[1] != u.shape[0]:
        raise DimensionError(f"operator {a.shape} cannot act on {u.shape}")
    return u - dt * (a @ u)


def _setup(a, b, x0, x_tilde):
    a = _operator(a)
    b = np.asarray(b, dtype=np.float64)
    x0 = np.array(x0, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"operator must be square, got {a.shape}")
    if b.shape != x0.shape or b.shape[0] != a.shape[0]:
        raise DimensionError(f"b {b.shape} and x0 {x0.shape} must match and conform to A {a.shape}")
    return a, b, x0, accelerator_init(x_tilde, x0)


def _check(res, k):
    if not np.isfinite(res) or res > DIVERGENCE_LIMIT:
        raise DivergenceError(f"residual {res:.3e} exceeded the divergence limit at step {k}")


def simple_gradient_accelerated(a, b, x0, x_tilde, dt: float, k_max: int,
                                cutoff: bool = False, record_every: int = 1):
    """Explicit Euler on ``dX/dt = b - A X`` with an additive accelerator.

    ``X <- X + dt (b - A X + u)`` and ``u <- (I - dt A) u``. With
    ``cutoff`` the accelerator only acts on steps that end by ``t = 1``,
    which discretizes the control ``chi_[0,1](t) exp(-tA)(X~ - X0)``.

    Returns ``(x, hist)`` with ``x`` the accelerated iterate after
    ``k_max`` steps.
    """
    a, b, x, u = _setup(a, b, x0, x_tilde)
    y = x.copy()
    hist = RatioHistory()
    res = _norm(a @ x - b)
    hist.record(0, 0.0, res, res)
    for k in range(k_max):
        if cutoff and (k + 1) * dt > 1.0 + _CUTOFF_SLACK:
            u = np.zeros_like(u)
        x = x + dt * (b - a @ x)
        y = y + dt * (b - a @ y + u)
        u = accelerator_step(u, a, dt)
        if (k + 1) % record_every == 0 or k + 1 == k_max:
            rp = _norm(a @ x - b)
            ra = _norm(a @ y - b)
            _check(max(rp, ra), k + 1)
            hist.record(k + 1, (k + 1) * dt, rp, ra)
    return y, hist


def inverse_accelerated(a, x0, x_tilde, dt: float, k_max: int, cutoff: bool = False,
                        record_every: int = 1):
    """Accelerated Euler iteration for ``dX/dt = I - A X`` (steady state ``A^{-1}``).

    Residual norms in the history are Frobenius norms of ``I - A X``.
    ``a`` may be scipy sparse, which keeps large Laplacians affordable.
    """
    a = _operator(a)
    return simple_gradient_accelerated(a, np.eye(a.shape[0]), x0, x_tilde, dt, k_max,
                                       cutoff=cutoff, record_every=record_every)


def _rayleigh_step(a, r, what):
    ar = a @ r
    num = float(np.vdot(r, r))
    den = float(np.vdot(ar, r))
    if den <= 0.0:
        raise NotSPDError(f"<A r, r> = {den:.3e} is not positive ({what})")
    return num / den, ar


def steepest_descent_accelerated(a, b, x0, x_tilde, k_max: int, cutoff: bool = False,
                                 tol: float = 0.0, drift_tol: float = 1e-10):
    """Steepest descent with accelerator.

    Per step: ``dt = <r,r>/<Ar,r>``, ``X <- X + dt (r + u)``,
    ``u <- (I - dt A) u``, ``r <- r - dt A (r + u)`` (old ``u``). The
    plain twin runs classical steepest descent with its own step sizes.
    Recorded times are the accumulated step sizes of the accelerated run;
    ``cutoff`` zeroes ``u`` on steps that would end after that time reaches 1.

    The recursive residual is compared with ``b - A X`` at every step and a
    :class:`NumericalError` is raised if they drift apart by more than
    ``drift_tol`` relative to the initial residual. Iteration stops early
    once the accelerated residual falls below ``tol`` times the initial one.
    """
    a, b, x, u = _setup(a, b, x0, x_tilde)
    y = x.copy()
    r = b - a @ y
    rx = r.copy()
    r0 = _norm(r)
    hist = RatioHistory()
    hist.record(0, 0.0, r0, r0)
    t = 0.0
    for k in range(k_max):
        if _norm(r) <= tol * r0 or not np.any(r):
            break
        dt, _ = _rayleigh_step(a, r, "accelerated iteration")
        if cutoff and t + dt > 1.0 + _CUTOFF_SLACK:
            u = np.zeros_like(u)
        w = r + u
        y = y + dt * w
        r = r - dt * (a @ w)
        u = u - dt * (a @ u)
        t += dt
        if np.any(rx):
            dtx, arx = _rayleigh_step(a, rx, "plain iteration")
            x = x + dtx * rx
            rx = rx - dtx * arx
        direct = b - a @ y
        drift = _norm(r - direct) / max(r0, np.finfo(float).tiny)
        hist.max_drift = max(hist.max_drift, drift)
        if drift > drift_tol:
            raise NumericalError(f"residual recursion drifted by {drift:.3e} at step {k + 1}")
        rp, ra = _norm(rx), _norm(r)
        _check(max(rp, ra), k + 1)
        hist.record(k + 1, t, rp, ra)
    return y, hist


def cg_accelerated(a, b, x0, k_max: Optional[int] = None, tol: float = 1e-12,
                   callback: Optional[Callable] = None):
    """Variable-step iteration ``X <- X + alpha_k (b - A X + V_k)`` that
    reproduces conjugate gradients.

    ``alpha_k = <r,r>/<r,Ar>`` is the steepest-descent step and ``V_k`` is
    chosen so that ``alpha_k (r_k + V_k)`` equals the CG update along the
    conjugate direction. Stops once ``||r|| <= tol ||b||`` or after
    ``k_max`` steps (default: the order of ``a``). ``callback(k, x)`` is
    called after every step.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != x.shape or b.shape[0] != n:
        raise DimensionError("inconsistent shapes for cg_accelerated")
    k_max = n if k_max is None else k_max
    stop = tol * _norm(b)

    r = b - a @ x
    p = r.copy()
    rr = float(np.vdot(r, r))
    for k in range(k_max):
        if np.sqrt(rr) <= stop or rr == 0.0:
            break
        alpha, _ = _rayleigh_step(a, r, "cg_accelerated")
        ap = a @ p
        pap = float(np.vdot(p, ap))
        if pap <= 0.0:
            raise NotSPDError(f"<A p, p> = {pap:.3e} is not positive")
        alpha_cg = rr / pap
        v = (alpha_cg / alpha) * p - r
        x = x + alpha * (r + v)
        r = r - alpha_cg * ap
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        if callback is not None:
            callback(k + 1, x)
    return x
