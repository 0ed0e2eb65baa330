"""Classical and subspace-projected (modified) parareal on matrix states.

All variants share the same skeleton: a sequential coarse sweep, then
iterations whose expensive fine propagations are independent across
intervals (or basis blocks) and run through :func:`parallel_map`, followed
by a strictly sequential correction sweep. Since every parallel task is a
pure function of its input and the sweep fixes the reduction order, the
iterates do not depend on the number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError, UnsupportedSchemeError
from .flows import Propagator, TimeGrid, propagate
from .matcore import frobenius_norm, global_qr

__all__ = [
    "PararealRun",
    "parallel_map",
    "coarse_sweep",
    "classical_parareal",
    "modified_parareal_homogeneous",
    "modified_parareal_inhomogeneous",
    "trajectory_error",
]


def parallel_map(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Ordered ``[fn(x) for x in items]`` evaluated on up to ``workers`` threads."""
    items = list(items)
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def trajectory_error(traj: Sequence[np.ndarray], ref: Sequence[np.ndarray]) -> float:
    """``max_n max_ij |traj_n - ref_n| / max_n max_ij |ref_n|``."""
    num = max(float(np.abs(u - r).max()) for u, r in zip(traj, ref))
    den = max(float(np.abs(r).max()) for r in ref)
    if den == 0.0:
        return num
    return num / den


@dataclass
class PararealRun:
    """History of a parareal solve.

    ``iterates[k][n]`` is ``U^k_n``. ``increments[k-1]`` holds
    ``max_n ||U^k_n - U^{k-1}_n||_F``. ``errors_vs_fine[k]`` is filled only
    when a reference trajectory was supplied. For the modified variants,
    ``subspace_dims[k]`` is the dimension of the subspace used to build
    ``U^{k+1}``.
    """

    grid: TimeGrid
    method: str
    iterates: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    errors_vs_fine: list = field(default_factory=list)
    subspace_dims: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def trajectory(self) -> list:
        return self.iterates[-1]

    @property
    def result(self) -> np.ndarray:
        return self.iterates[-1][-1]


def coarse_sweep(g: Propagator, grid: TimeGrid, u0) -> list:
    """Sequential sweep ``U_{n+1} = G(T_{n+1}, T_n, U_n)``; element 0 is ``u0``."""
    times = grid.times
    out = [np.array(u0, dtype=np.float64)]
    for n in range(grid.n_coarse):
        out.append(propagate(g, float(times[n]), float(times[n + 1]), out[-1], interval=n))
    return out


def _check_args(k_max, grid):
    if k_max is None:
        k_max = grid.n_coarse
    if int(k_max) != k_max or k_max < 1:
        raise ValueError(f"k_max must be a positive integer, got {k_max}")
    return int(k_max)


def _finish_iteration(run, new, old, stop_tol, scale, reference):
    inc = max(frobenius_norm(a - b) for a, b in zip(new, old))
    run.increments.append(inc)
    run.iterates.append(new)
    if reference is not None:
        run.errors_vs_fine.append(trajectory_error(new, reference))
    if not np.isfinite(inc):
        raise NumericalError("parareal iterate is not finite")
    return inc <= stop_tol * scale


def classical_parareal(f: Propagator, g: Propagator, grid: TimeGrid, u0, k_max=None,
                       stop_tol=1e-12, reference=None, workers=None) -> PararealRun:
    """Classical parareal.

    Iterates ``U^{k+1}_{n+1} = G(U^{k+1}_n) + F(U^k_n) - G(U^k_n)`` with the
    ``N`` fine solves of each iteration run concurrently. Stops once
    ``max_n ||U^{k+1}_n - U^k_n||_F <= stop_tol * max(1, ||u0||_F)`` or after
    ``k_max`` iterations (default ``N``).

    ``reference`` is an optional fine trajectory (length ``N+1``) used to
    record ``errors_vs_fine``.
    """
    k_max = _check_args(k_max, grid)
    u0 = np.array(u0, dtype=np.float64)
    times = grid.times
    spans = [(float(times[n]), float(times[n + 1])) for n in range(grid.n_coarse)]
    scale = max(1.0, frobenius_norm(u0))

    u = coarse_sweep(g, grid, u0)
    g_prev = u[1:]
    run = PararealRun(grid=grid, method="classical", iterates=[u])
    if reference is not None:
        run.errors_vs_fine.append(trajectory_error(u, reference))

    for _ in range(k_max):
        fine = parallel_map(
            lambda n: propagate(f, spans[n][0], spans[n][1], u[n], interval=n),
            range(grid.n_coarse), workers)
        new = [u0]
        g_new = []
        for n, (t0, t1) in enumerate(spans):
            gn = propagate(g, t0, t1, new[n], interval=n)
            g_new.append(gn)
            new.append(gn + (fine[n] - g_prev[n]))
        done = _finish_iteration(run, new, u, stop_tol, scale, reference)
        u, g_prev = new, g_new
        if done:
            run.converged = True
            break
    return run


def modified_parareal_homogeneous(f: Propagator, g: Propagator, grid: TimeGrid, u0, k_max=None,
                                  stop_tol=1e-12, reference=None, workers=None,
                                  share_images=True) -> PararealRun:
    """Modified parareal for ``dU/dt = B U``.

    Each iteration enlarges an F-orthonormal basis of the span of all
    previous iterates, pushes only the new basis blocks through the fine
    propagator (concurrently), and then sweeps
    ``U^{k+1}_{n+1} = F(P U^{k+1}_n) + G((I - P) U^{k+1}_n)``, where the fine
    part is the stored combination of basis images.

    With ``share_images`` (the default) one image per basis block is
    computed on the first interval and reused on all of them, which is
    valid for the autonomous flows and uniform grids used here.
    """
    if not f.flow.is_linear or not g.flow.is_linear:
        raise UnsupportedSchemeError("modified parareal needs a linear flow")
    return _modified(f, g, grid, u0, k_max, stop_tol, reference, workers, share_images,
                     affine=False)


def modified_parareal_inhomogeneous(f: Propagator, g: Propagator, grid: TimeGrid, u0, k_max=None,
                                    stop_tol=1e-12, reference=None, workers=None,
                                    share_images=True) -> PararealRun:
    """Modified parareal for ``dU/dt = A U + G`` with a constant source.

    Same as :func:`modified_parareal_homogeneous` but the zero images
    ``F(0)`` and ``G(0)`` are computed once up front and the update reads
    ``U^{k+1}_{n+1} = F(P U) + G((I - P) U) - G(0)``, with the fine part
    recombined affinely from the basis images and ``F(0)``.
    """
    if not f.flow.is_linear or not g.flow.is_linear:
        raise UnsupportedSchemeError("modified parareal needs a linear flow")
    return _modified(f, g, grid, u0, k_max, stop_tol, reference, workers, share_images,
                     affine=True)


def _modified(f, g, grid, u0, k_max, stop_tol, reference, workers, share_images, affine):
    k_max = _check_args(k_max, grid)
    u0 = np.array(u0, dtype=np.float64)
    n_int = grid.n_coarse
    times = grid.times
    spans = [(float(times[n]), float(times[n + 1])) for n in range(n_int)]
    scale = max(1.0, frobenius_norm(u0))
    size = u0.size
    cap = (n_int + 1) * (k_max + 1)
    image_spans = [spans[0]] if share_images else spans

    zero = np.zeros_like(u0)
    if affine:
        f_zero = parallel_map(lambda n: propagate(f, spans[n][0], spans[n][1], zero, interval=n),
                              range(n_int), workers)
        g_zero = [propagate(g, t0, t1, zero, interval=n) for n, (t0, t1) in enumerate(spans)]
        f_zero_img = [f_zero[0]] if share_images else f_zero
    else:
        f_zero = g_zero = f_zero_img = None

    u = coarse_sweep(g, grid, u0)
    run = PararealRun(grid=grid, method="modified", iterates=[u])
    if reference is not None:
        run.errors_vs_fine.append(trajectory_error(u, reference))

    basis: list = []
    q_flat = np.zeros((0, size))
    # one (dim, size) matrix of F(Q_i) - F(0) per image span
    img_flat = [np.zeros((0, size)) for _ in image_spans]

    for _ in range(k_max):
        new_blocks = global_qr(u, basis=basis).q
        room = cap - len(basis)
        new_blocks = new_blocks[:max(room, 0)]
        if new_blocks:
            tasks = [(m, i) for m in range(len(image_spans)) for i in range(len(new_blocks))]

            def fine_image(task):
                m, i = task
                t0, t1 = image_spans[m]
                img = propagate(f, t0, t1, new_blocks[i], interval=m)
                if affine:
                    img = img - f_zero_img[m]
                return img

            images = parallel_map(fine_image, tasks, workers)
            for m in range(len(image_spans)):
                rows = [images[m * len(new_blocks) + i].ravel() for i in range(len(new_blocks))]
                img_flat[m] = np.vstack([img_flat[m]] + rows)
            basis.extend(new_blocks)
            q_flat = np.vstack([q_flat] + [b.ravel() for b in new_blocks])
        run.subspace_dims.append(len(basis))

        new = [u0]
        for n, (t0, t1) in enumerate(spans):
            cur = new[n]
            alpha = q_flat @ cur.ravel()
            proj = (alpha @ q_flat).reshape(cur.shape)
            fpart = (alpha @ img_flat[0 if share_images else n]).reshape(cur.shape)
            gpart = propagate(g, t0, t1, cur - proj, interval=n)
            if affine:
                fpart = fpart + f_zero[n]
                gpart = gpart - g_zero[n]
            new.append(fpart + gpart)
        done = _finish_iteration(run, new, u, stop_tol, scale, reference)
        u = new
        if done:
            run.converged = True
            break
    return run
