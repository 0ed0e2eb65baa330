"""Virtual-control capture of a steady state ``RHS - A X = 0``.

The time horizon is split into coarse intervals. Interval ``k`` starts
from a free state ``lambda_k`` (``lambda_0 = X0`` is fixed) and is driven
by a control ``u`` through ``dy/dt = RHS - A y + B u``. The penalized cost

    J = alpha/2 ||RHS - A y_{N-1}(T)||_F^2 + 1/2 int ||u||_F^2
        + 1/(2 eps dT) sum_k ||y_{k-1}(T_k) - lambda_k||_F^2

is minimized by gradient descent. Gradients come from the exact discrete
adjoint of the fine time stepper, so they agree with finite differences of
the discrete cost. The ``lambda`` gradient is preconditioned with the
coarse propagation matrix.

Controls are piecewise constant on the fine grid: ``u[k][j]`` acts on the
``j``-th fine step of interval ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, StallError, UnsupportedSchemeError
from .flows import _SCHEME_ALIASES, CRANK_NICOLSON, EULER, TimeGrid
from .matcore import frobenius_norm
from .parareal import parallel_map

__all__ = [
    "ControlProblem",
    "ControlState",
    "initial_state",
    "forward_sweep",
    "cost_eval",
    "adjoint_sweep",
    "gradient",
    "gradient_step",
    "apply_propagation_matrix",
    "solve_propagation_matrix",
    "assemble_propagation_matrix",
    "solve_steady_control",
    "uncontrolled_terminal_residual",
]


@dataclass(eq=False)
class ControlProblem:
    """Linear steady-state control problem on ``grid``.

    ``b_ctrl`` is the ``n x p`` control injection map. ``x0`` defaults to
    zeros shaped like ``rhs``. ``scheme`` is the fine time stepper
    (explicit Euler or Crank-Nicolson); the coarse preconditioner takes one
    step of the same scheme per interval.
    """

    a: np.ndarray
    rhs: np.ndarray
    b_ctrl: np.ndarray
    grid: TimeGrid
    alpha: float = 1.0
    epsilon: float = 0.1
    rho: float = 1.0
    x0: Optional[np.ndarray] = None
    scheme: str = EULER
    workers: Optional[int] = 1

    def __post_init__(self):
        self.a = _mat(self.a, "a")
        self.rhs = _mat(self.rhs, "rhs")
        self.b_ctrl = _mat(self.b_ctrl, "b_ctrl")
        n = self.a.shape[0]
        if self.a.shape != (n, n):
            raise DimensionError(f"a must be square, got {self.a.shape}")
        if self.rhs.shape[0] != n or self.b_ctrl.shape[0] != n:
            raise DimensionError("rhs and b_ctrl must have as many rows as a")
        self.x0 = np.zeros_like(self.rhs) if self.x0 is None else _mat(self.x0, "x0")
        if self.x0.shape != self.rhs.shape:
            raise DimensionError(f"x0 {self.x0.shape} must match rhs {self.rhs.shape}")
        for name in ("alpha", "epsilon", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        try:
            self.scheme = _SCHEME_ALIASES[self.scheme]
        except KeyError:
            raise UnsupportedSchemeError(f"unknown scheme {self.scheme!r}") from None
        h = self.grid.fine_step
        self._step, self._inject = _step_matrices(self.a, h, self.scheme)
        self._coarse, _ = _step_matrices(self.a, self.grid.coarse_step, self.scheme)

    @property
    def n_controls(self) -> int:
        return self.b_ctrl.shape[1]

    @property
    def penalty(self) -> float:
        """Jump penalty weight ``1/(eps dT)``."""
        return 1.0 / (self.epsilon * self.grid.coarse_step)

    @property
    def coarse_block(self) -> np.ndarray:
        """Linear part of one coarse step, the sub-diagonal block of the preconditioner."""
        return self._coarse

    def residual(self, x) -> np.ndarray:
        return self.rhs - self.a @ x


def _mat(x, name):
    x = np.array(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be a matrix")
    return x


def _step_matrices(a, h, scheme):
    """``(S, K)`` with one fine step ``y <- S y + h K (rhs + B u)``."""
    eye = np.eye(a.shape[0])
    if scheme == EULER:
        return eye - h * a, eye
    if scheme == CRANK_NICOLSON:
        k = np.linalg.inv(eye + 0.5 * h * a)
        return k @ (eye - 0.5 * h * a), k
    raise UnsupportedSchemeError(f"unsupported scheme {scheme!r}")


@dataclass
class ControlState:
    """Optimization variables and sweep results.

    ``u[k]`` has shape ``(J, p, s)``; ``y[k]`` and ``p[k]`` have shape
    ``(J+1, n, s)`` with ``y[k][0] = lambdas[k]`` and ``p[k][j]`` the
    derivative of the cost with respect to ``y[k][j]``.
    """

    u: list
    lambdas: list
    y: list = field(default_factory=list)
    p: list = field(default_factory=list)
    cost: float = np.nan


def initial_state(prob: ControlProblem, lambdas: Optional[Sequence] = None) -> ControlState:
    """Zero controls; ``lambdas`` default to a coarse sweep from ``x0``."""
    grid = prob.grid
    n_int, j = grid.n_coarse, grid.n_fine
    shape = (j, prob.n_controls, prob.rhs.shape[1])
    u = [np.zeros(shape) for _ in range(n_int)]
    if lambdas is None:
        lam = [prob.x0.copy()]
        dt = grid.coarse_step
        _, kc = _step_matrices(prob.a, dt, prob.scheme)
        for _ in range(n_int - 1):
            lam.append(prob.coarse_block @ lam[-1] + dt * (kc @ prob.rhs))
    else:
        lam = [_mat(x, "lambda") for x in lambdas]
        if len(lam) != n_int:
            raise DimensionError(f"need {n_int} interval states, got {len(lam)}")
        lam[0] = prob.x0.copy()
    return ControlState(u=u, lambdas=lam)


def _forward_interval(prob, lam, u, k):
    h = prob.grid.fine_step
    s, kk = prob._step, prob._inject
    drive = h * (kk @ prob.rhs)
    inj = h * (kk @ prob.b_ctrl)
    y = np.empty((u.shape[0] + 1,) + lam.shape)
    y[0] = lam
    for j in range(u.shape[0]):
        y[j + 1] = s @ y[j] + drive + inj @ u[j]
    if not np.all(np.isfinite(y)):
        raise NumericalError(f"non-finite state in interval {k}", interval=k)
    return y


def forward_sweep(prob: ControlProblem, state: ControlState) -> ControlState:
    """Integrate every interval from its ``lambda`` (intervals are independent)."""
    n_int = prob.grid.n_coarse
    state.y = parallel_map(lambda k: _forward_interval(prob, state.lambdas[k], state.u[k], k),
                           range(n_int), prob.workers)
    return state


def _jumps(state):
    return [state.y[k - 1][-1] - state.lambdas[k] for k in range(1, len(state.lambdas))]


def cost_eval(prob: ControlProblem, state: ControlState) -> float:
    """Penalized cost of the current forward sweep."""
    if not state.y:
        raise ValueError("run forward_sweep before cost_eval")
    h = prob.grid.fine_step
    terminal = 0.5 * prob.alpha * frobenius_norm(prob.residual(state.y[-1][-1])) ** 2
    control = 0.5 * h * sum(float(np.sum(uk * uk)) for uk in state.u)
    jumps = 0.5 * prob.penalty * sum(frobenius_norm(d) ** 2 for d in _jumps(state))
    cost = terminal + control + jumps
    if not np.isfinite(cost):
        raise NumericalError("cost is not finite")
    state.cost = cost
    return cost


def _adjoint_interval(prob, terminal, steps, k):
    st = prob._step.T
    p = np.empty((steps + 1,) + terminal.shape)
    p[-1] = terminal
    for j in range(steps - 1, -1, -1):
        p[j] = st @ p[j + 1]
    if not np.all(np.isfinite(p)):
        raise NumericalError(f"non-finite adjoint in interval {k}", interval=k)
    return p


def adjoint_sweep(prob: ControlProblem, state: ControlState) -> ControlState:
    """Backward sweep of the discrete adjoint on every interval.

    Terminal data: ``-alpha A^T (RHS - A y_{N-1}(T))`` on the last interval
    and the scaled jump ``(y_k(T_{k+1}) - lambda_{k+1}) / (eps dT)`` on the
    others.
    """
    if not state.y:
        raise ValueError("run forward_sweep before adjoint_sweep")
    n_int = prob.grid.n_coarse
    jumps = _jumps(state)
    ends = [prob.penalty * d for d in jumps]
    ends.append(-prob.alpha * (prob.a.T @ prob.residual(state.y[-1][-1])))
    steps = prob.grid.n_fine
    state.p = parallel_map(lambda k: _adjoint_interval(prob, ends[k], steps, k),
                           range(n_int), prob.workers)
    return state


def gradient(prob: ControlProblem, state: ControlState):
    """``(du, dlam)``: derivatives of the cost with respect to ``u`` and ``lambda``.

    ``du[k][j] = h (u[k][j] + B^T K^T p[k][j+1])`` and
    ``dlam[k] = p[k][0] - (y_{k-1}(T_k) - lambda_k) / (eps dT)`` for
    ``k >= 1`` (``dlam[0] = 0``).
    """
    if not state.p:
        raise ValueError("run adjoint_sweep before gradient")
    h = prob.grid.fine_step
    bt = (prob._inject @ prob.b_ctrl).T
    du = [h * (uk + np.einsum("pn,jns->jps", bt, pk[1:])) for uk, pk in zip(state.u, state.p)]
    dlam = [np.zeros_like(state.lambdas[0])]
    for k, d in enumerate(_jumps(state), start=1):
        dlam.append(state.p[k][0] - prob.penalty * d)
    return du, dlam


def _precondition(prob, dlam):
    """``Mc^{-1} Mc^{-T}`` on the free states ``lambda_1..lambda_{N-1}``.

    ``Mc`` is the coarse propagation matrix restricted to those states, so
    ``lambda_0`` stays fixed and the product is symmetric positive definite.
    """
    free = dlam[1:]
    if not free:
        return dlam
    blocks = [prob.coarse_block] * (len(free) - 1)
    back = solve_propagation_matrix(blocks, free, adjoint=True)
    out = solve_propagation_matrix(blocks, back)
    return [np.zeros_like(dlam[0])] + out


def gradient_step(prob: ControlProblem, state: ControlState, rho: Optional[float] = None,
                  grads=None) -> ControlState:
    """One descent step; returns a new state (sweeps not yet run).

    Controls move along the L2 gradient ``u + B^T K^T p``; interval states
    along the preconditioned ``lambda`` gradient.
    """
    rho = prob.rho if rho is None else rho
    du, dlam = gradient(prob, state) if grads is None else grads
    h = prob.grid.fine_step
    u = [uk - (rho / h) * g for uk, g in zip(state.u, du)]
    direction = _precondition(prob, dlam)
    lam = [state.lambdas[0]] + [lk - rho * d for lk, d in zip(state.lambdas[1:], direction[1:])]
    return ControlState(u=u, lambdas=lam)


def _blocks_check(blocks, lambdas):
    if len(blocks) != len(lambdas) - 1:
        raise DimensionError(f"{len(lambdas)} states need {len(lambdas) - 1} blocks, got {len(blocks)}")
    for f in blocks:
        if f.ndim != 2 or f.shape[0] != f.shape[1] or f.shape[1] != lambdas[0].shape[0]:
            raise DimensionError(f"block of shape {f.shape} does not act on states {lambdas[0].shape}")


def apply_propagation_matrix(blocks: Sequence, lambdas: Sequence) -> list:
    """``(M L)_0 = L_0`` and ``(M L)_n = L_n - F_{n-1} L_{n-1}``.

    ``blocks[n]`` is the propagator ``F_n`` of interval ``n``; one block
    fewer than states.
    """
    lambdas = [_mat(x, "lambda") for x in lambdas]
    blocks = [np.asarray(f, dtype=np.float64) for f in blocks]
    _blocks_check(blocks, lambdas)
    out = [lambdas[0].copy()]
    for n in range(1, len(lambdas)):
        out.append(lambdas[n] - blocks[n - 1] @ lambdas[n - 1])
    return out


def solve_propagation_matrix(blocks: Sequence, rhs: Sequence, adjoint: bool = False) -> list:
    """Solve ``M X = rhs`` by forward substitution, or ``M^T X = rhs`` by
    backward substitution when ``adjoint`` is set."""
    rhs = [_mat(x, "rhs") for x in rhs]
    blocks = [np.asarray(f, dtype=np.float64) for f in blocks]
    _blocks_check(blocks, rhs)
    out = [None] * len(rhs)
    if adjoint:
        out[-1] = rhs[-1].copy()
        for n in range(len(rhs) - 2, -1, -1):
            out[n] = rhs[n] + blocks[n].T @ out[n + 1]
    else:
        out[0] = rhs[0].copy()
        for n in range(1, len(rhs)):
            out[n] = rhs[n] + blocks[n - 1] @ out[n - 1]
    return out


def assemble_propagation_matrix(blocks: Sequence) -> np.ndarray:
    """Dense block lower-bidiagonal ``M`` (identity diagonal, ``-F`` below)."""
    blocks = [np.asarray(f, dtype=np.float64) for f in blocks]
    if not blocks:
        raise DimensionError("need at least one block")
    n = blocks[0].shape[0]
    big = np.eye(n * (len(blocks) + 1))
    for i, f in enumerate(blocks):
        big[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = -f
    return big


def uncontrolled_terminal_residual(prob: ControlProblem) -> float:
    """``||RHS - A X(T)||_F`` for the fine solution with ``u = 0`` from ``x0``."""
    total = prob.grid.n_coarse * prob.grid.n_fine
    x = prob.x0.copy()
    drive = prob.grid.fine_step * (prob._inject @ prob.rhs)
    for _ in range(total):
        x = prob._step @ x + drive
    return frobenius_norm(prob.residual(x))


def _snapshot(prob, state):
    """``(cost, terminal residual, max jump)`` of a swept state."""
    jumps = [frobenius_norm(d) for d in _jumps(state)]
    return (state.cost, frobenius_norm(prob.residual(state.y[-1][-1])), max(jumps, default=0.0))


def solve_steady_control(prob: ControlProblem, m_max: int = 200, tol: float = 0.0,
                         state: Optional[ControlState] = None, max_halvings: int = 40,
                         stall_limit: int = 10):
    """Minimize the penalized cost by backtracked gradient descent.

    Each iteration tries ``rho`` (starting from ``prob.rho``, halved until
    the cost does not increase, and doubled again after an accepted step
    up to ``prob.rho``). Stops when the cost is at most ``tol`` or after
    ``m_max`` iterations. Raises :class:`StallError` when the cost fails to
    decrease over ``stall_limit`` consecutive iterations.

    Returns ``(x, diagnostics)`` with ``x = y_{N-1}(T)``. ``diagnostics``
    holds the cost sequence, one ``(cost, terminal residual, max jump)``
    tuple per iteration under ``"history"``, and the final state.
    """
    state = initial_state(prob) if state is None else state
    forward_sweep(prob, state)
    cost = cost_eval(prob, state)
    costs = [cost]
    history = [_snapshot(prob, state)]
    rhos = []
    rho = prob.rho
    stalled = 0
    it = 0
    while it < m_max and cost > tol:
        adjoint_sweep(prob, state)
        grads = gradient(prob, state)
        trial = None
        for _ in range(max_halvings):
            cand = gradient_step(prob, state, rho, grads)
            forward_sweep(prob, cand)
            c_new = cost_eval(prob, cand)
            if c_new <= cost:
                trial = cand
                break
            rho *= 0.5
        it += 1
        if trial is None or not trial.cost < cost:
            stalled += 1
            if stalled >= stall_limit:
                raise StallError(
                    f"cost did not decrease over {stall_limit} iterations (rho={rho:.3e}); "
                    "try a smaller rho")
        else:
            stalled = 0
        if trial is not None:
            state, cost = trial, trial.cost
            rhos.append(rho)
            rho = min(2.0 * rho, prob.rho)
        costs.append(cost)
        history.append(_snapshot(prob, state))
    x = state.y[-1][-1].copy()
    jumps = [frobenius_norm(d) for d in _jumps(state)]
    diagnostics = {
        "iterations": it,
        "costs": costs,
        "history": history,
        "rho": rhos,
        "terminal_residual": frobenius_norm(prob.residual(x)),
        "jumps": jumps,
        "max_jump": max(jumps) if jumps else 0.0,
        "converged": cost <= tol,
        "state": state,
    }
    return x, diagnostics
