"""Vectorized Dormand-Prince 5(4) integrator with per-row step control.

Every row of the state matrix is an independent initial value problem that
keeps its own time, step size and accept/reject history; rows only share
right-hand-side evaluations. A row's trajectory therefore does not depend on
which other rows are in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + s h) = y + h * K^T P [s, s^2, s^3, s^4]
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

ACTIVE, FINISHED, STOPPED, FAILED = 0, 1, 2, 3


@dataclass
class Trajectory:
    """Accepted steps of one row, with the dense-output polynomial of each step."""

    t: list = field(default_factory=list)
    y: list = field(default_factory=list)
    q: list = field(default_factory=list)  # (d, 4) per step, step i spans t[i]..t[i+1]

    def arrays(self):
        return np.array(self.t), np.array(self.y), np.array(self.q)


def dense_eval(t0, y0, h, q, t):
    s = (t - t0) / h
    return y0 + q @ np.array([s, s * s, s ** 3, s ** 4])


@dataclass
class BatchResult:
    t: np.ndarray
    y: np.ndarray
    status: np.ndarray
    n_steps: np.ndarray
    trajectories: Optional[list] = None


def integrate(rhs: Callable, t0, y0, t_end, *, rtol: float, atol: float,
              h_max: float = np.inf, h0: Optional[float] = None,
              stop: Optional[Callable] = None, max_steps: int = 200000,
              record: bool = False) -> BatchResult:
    """Integrate ``y' = rhs(t, y)`` row by row.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, Y)`` with ``t`` of shape (m,) and ``Y`` of shape (m, d).
    t0, t_end : float or array (N,)
    y0 : array (N, d)
    stop : callable, optional
        ``stop(t, Y, rows) -> bool mask`` checked after every accepted step
        (``rows`` are the batch indices); rows for which it is true end with
        status STOPPED.
    record : bool
        Keep the accepted steps (with dense output) of every row.
    """
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim == 1:
        y = y[None, :]
    n, d = y.shape
    t = np.broadcast_to(np.asarray(t0, dtype=float), (n,)).copy()
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (n,)).copy()
    status = np.where(t < t_end, ACTIVE, FINISHED)
    n_steps = np.zeros(n, dtype=int)
    f = np.asarray(rhs(t, y), dtype=float)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        fn = np.max(np.abs(f) / scale, axis=1)
        h = np.where(fn > 0, 0.01 / np.maximum(fn, 1e-300) ** 0.2, 1e-3)
        h = np.minimum(h, 1e-2 * h_max if np.isfinite(h_max) else h)
    else:
        h = np.full(n, float(h0))
    h = np.minimum(np.minimum(h, h_max), t_end - t)
    trajs = [Trajectory() for _ in range(n)] if record else None
    if record:
        for i in range(n):
            trajs[i].t.append(t[i])
            trajs[i].y.append(y[i].copy())

    K = np.empty((7, n, d))
    while True:
        idx = np.nonzero(status == ACTIVE)[0]
        if idx.size == 0:
            break
        ti, yi, hi = t[idx], y[idx], h[idx]
        k = K[:, : idx.size]
        k[0] = f[idx]
        for s in range(1, 6):
            dy = np.tensordot(A[s], k[:s], axes=(0, 0))
            k[s] = rhs(ti + C[s] * hi, yi + hi[:, None] * dy)
        y_new = yi + hi[:, None] * np.tensordot(B, k[:6], axes=(0, 0))
        t_new = ti + hi
        k[6] = rhs(t_new, y_new)
        err = hi[:, None] * np.tensordot(E, k, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        err_norm = np.max(np.abs(err) / scale, axis=1)
        ok = err_norm <= 1.0

        acc = idx[ok]
        if acc.size:
            if record:
                for j in np.nonzero(ok)[0]:
                    r = idx[j]
                    trajs[r].q.append(hi[j] * (k[:, j].T @ P))
                    trajs[r].t.append(t_new[j])
                    trajs[r].y.append(y_new[j].copy())
            t[acc] = t_new[ok]
            y[acc] = y_new[ok]
            f[acc] = k[6][ok]
            n_steps[acc] += 1
            done = t_end[acc] - t[acc] <= 1e-13 * np.maximum(np.abs(t_end[acc]), 1.0)
            status[acc[done]] = FINISHED
            if stop is not None:
                live = acc[~done]
                if live.size:
                    hit = np.asarray(stop(t[live], y[live], live), dtype=bool)
                    status[live[hit]] = STOPPED
            status[acc[(n_steps[acc] >= max_steps) & (status[acc] == ACTIVE)]] = FAILED

        with np.errstate(divide="ignore"):
            fac = np.where(err_norm == 0, 5.0, 0.9 * err_norm ** -0.2)
        fac = np.clip(fac, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        h_new = np.minimum(hi * fac, h_max)
        h[idx] = np.minimum(h_new, np.maximum(t_end[idx] - t[idx], 0.0))
        tiny = (h[idx] <= 1e-14 * np.maximum(np.abs(t[idx]), 1.0)) & (status[idx] == ACTIVE)
        status[idx[tiny]] = FAILED

    return BatchResult(t, y, status, n_steps, trajs)
