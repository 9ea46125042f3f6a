"""Bicharacteristics of H(x, p) = |p|^2 - q(x) launched from the plane x^n = -a.

The flow is ``x' = 2 p``, ``p' = grad q(x)`` with ``x(0) = (y, -a)`` and
``p(0) = e_n``. Alongside it we integrate the action ``S' = 2 |p|^2``
(``S(0) = -a``) and, optionally, the tangent flow ``M = d(x, p)/dy``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import _rk
from .errors import DegenerateCaustic, EnergyDrift, TrappedRay
from .potential import Potential, seed_grid

ZERO_HADAMARD = 1e-9  # |det| / prod(|columns|) below this counts as singular


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_time: Optional[float] = None
    exit_radius: Optional[float] = None
    dense_output_step: Optional[float] = None
    energy_tol: float = 1e-8

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-4:
                raise ValueError(f"{name} must lie in (0, 1e-4], got {v}")

    def resolved(self, pot: Potential) -> "IntegratorOptions":
        """Fill the potential-dependent defaults."""
        r_sup = pot.support_radius
        r_exit = self.exit_radius
        if r_exit is None:
            r_exit = r_sup + 0.05 * max(r_sup, 1.0)
        if not r_exit > r_sup:
            raise ValueError(f"exit radius {r_exit} must exceed support radius {r_sup}")
        t_max = self.max_time if self.max_time is not None else 50.0 * (pot.plane_offset + r_exit)
        step = self.dense_output_step
        if step is None:
            step = 0.05 * min((p.radius for p in pot.parts), default=10.0)
        return replace(self, max_time=t_max, exit_radius=r_exit, dense_output_step=step)


def tangent_basis(w: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the tangent plane of the unit sphere at w."""
    w = np.asarray(w, dtype=float)
    n = w.shape[-1]
    if n == 2:
        return np.array([[-w[1]], [w[0]]])
    helper = np.eye(3)[np.argmin(np.abs(w))]
    e1 = helper - (helper @ w) * w
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(w, e1)
    return np.stack([e1, e2], axis=1)


def tangent_basis_batch(W: np.ndarray) -> np.ndarray:
    return np.stack([tangent_basis(w) for w in W]) if len(W) else np.zeros((0,) + W.shape[1:] + (W.shape[1] - 1,))


# -- state layout ----------------------------------------------------------------

def _state_dim(n: int, variational: bool) -> int:
    return 2 * n + 1 + (2 * n * (n - 1) if variational else 0)


def _initial_state(pot: Potential, Y: np.ndarray, variational: bool) -> np.ndarray:
    n = pot.dimension
    N = Y.shape[0]
    z = np.zeros((N, _state_dim(n, variational)))
    z[:, : n - 1] = Y
    z[:, n - 1] = -pot.plane_offset
    z[:, 2 * n - 1] = 1.0
    z[:, 2 * n] = -pot.plane_offset
    if variational:
        M = np.zeros((N, 2 * n, n - 1))
        M[:, : n - 1, :] = np.eye(n - 1)
        z[:, 2 * n + 1:] = M.reshape(N, -1)
    return z


def _make_rhs(pot: Potential, variational: bool, sign: float = 1.0):
    n = pot.dimension

    def rhs(t, Z):
        x = Z[:, :n]
        p = Z[:, n: 2 * n]
        out = np.empty_like(Z)
        out[:, :n] = 2.0 * p
        out[:, n: 2 * n] = pot.grad(x)
        out[:, 2 * n] = 2.0 * np.einsum("ij,ij->i", p, p)
        if variational:
            M = Z[:, 2 * n + 1:].reshape(-1, 2 * n, n - 1)
            dM = np.empty_like(M)
            dM[:, :n] = 2.0 * M[:, n:]
            dM[:, n:] = pot.hess(x) @ M[:, :n]
            out[:, 2 * n + 1:] = dM.reshape(Z.shape[0], -1)
        if sign != 1.0:
            out *= sign
        return out

    return rhs


def _split(Z: np.ndarray, n: int):
    x = Z[..., :n]
    p = Z[..., n: 2 * n]
    S = Z[..., 2 * n]
    M = Z[..., 2 * n + 1:].reshape(Z.shape[:-1] + (2 * n, n - 1)) if Z.shape[-1] > 2 * n + 1 else None
    return x, p, S, M


def jacobian_det(M: np.ndarray, p: np.ndarray) -> np.ndarray:
    """det D(x)/D(y, s): columns are the x-block of M followed by dx/ds = 2p."""
    n = p.shape[-1]
    mat = np.concatenate([M[..., :n, :], 2.0 * p[..., :, None]], axis=-1)
    return np.linalg.det(mat)


def _hadamard(M: np.ndarray, p: np.ndarray) -> np.ndarray:
    n = p.shape[-1]
    mat = np.concatenate([M[..., :n, :], 2.0 * p[..., :, None]], axis=-1)
    norms = np.prod(np.linalg.norm(mat, axis=-2), axis=-1)
    return np.linalg.det(mat) / norms


def direction_jacobian(M_exit: np.ndarray, p_inf: np.ndarray) -> np.ndarray:
    """|det DJ/Dy| from the exit tangent data, in a tangent basis at p_inf."""
    p_inf = np.atleast_2d(p_inf)
    M_exit = M_exit.reshape((-1,) + M_exit.shape[-2:])
    n = p_inf.shape[-1]
    out = np.empty(len(p_inf))
    for i, (M, w) in enumerate(zip(M_exit, p_inf)):
        E = tangent_basis(w)
        out[i] = abs(np.linalg.det(E.T @ M[n:, :]))
    return out


# -- batches ----------------------------------------------------------------------

@dataclass
class RayBatch:
    """Exit data for many rays traced together."""

    y: np.ndarray
    s_exit: np.ndarray
    x_exit: np.ndarray
    p_exit: np.ndarray
    S_exit: np.ndarray
    M_exit: Optional[np.ndarray]
    exited: np.ndarray
    energy_drift: np.ndarray
    t_max: float

    @property
    def p_inf(self) -> np.ndarray:
        return self.p_exit / np.linalg.norm(self.p_exit, axis=1, keepdims=True)

    @property
    def detDJ(self) -> np.ndarray:
        if self.M_exit is None:
            raise ValueError("batch was traced without the variational flow")
        return direction_jacobian(self.M_exit, self.p_inf)

    @property
    def DJ(self) -> np.ndarray:
        """dp_inf/dy, shape (N, n, n-1)."""
        n = self.p_exit.shape[1]
        return self.M_exit[:, n:, :]

    def check(self, energy_tol: float) -> None:
        bad = np.nonzero(~self.exited)[0]
        if bad.size:
            raise TrappedRay(self.y[bad[0]], self.t_max)
        drift = np.nonzero(self.energy_drift > energy_tol)[0]
        if drift.size:
            i = drift[0]
            raise EnergyDrift(self.y[i], self.energy_drift[i], energy_tol)


def trace_rays(pot: Potential, Y, opts: IntegratorOptions = IntegratorOptions(),
               variational: bool = False) -> RayBatch:
    """Trace a batch of rays up to the exit sphere; never raises on single rays."""
    opts = opts.resolved(pot)
    n = pot.dimension
    Y = np.asarray(Y, dtype=float).reshape(-1, n - 1)
    N = Y.shape[0]
    z0 = _initial_state(pot, Y, variational)
    drift = np.zeros(N)
    r2 = opts.exit_radius ** 2

    def stop(t, Z, rows):
        x, p, _, _ = _split(Z, n)
        e = np.abs(np.einsum("ij,ij->i", p, p) - pot.q(x) - 1.0)
        drift[rows] = np.maximum(drift[rows], e)
        return (np.einsum("ij,ij->i", x, x) > r2) & (np.einsum("ij,ij->i", x, p) > 0)

    if N == 0:
        res = _rk.BatchResult(np.zeros(0), z0, np.zeros(0, int), np.zeros(0, int))
    else:
        res = _rk.integrate(_make_rhs(pot, variational), 0.0, z0, opts.max_time,
                            rtol=opts.rel_tol, atol=opts.abs_tol,
                            h_max=opts.dense_output_step, stop=stop)
    x, p, S, M = _split(res.y, n)
    return RayBatch(Y, res.t, x, p, S, M, res.status == _rk.STOPPED, drift, opts.max_time)


# -- single rays ------------------------------------------------------------------

@dataclass
class Ray:
    y: np.ndarray
    s: np.ndarray
    x: np.ndarray
    p: np.ndarray
    S: np.ndarray
    M: Optional[np.ndarray]
    p_inf: np.ndarray
    exited: bool
    s_exit: float
    n_integrated: int  # samples[:n_integrated] come from the integrator
    plane_offset: float
    detDJ: Optional[float] = None
    maslov: Optional[int] = None
    caustics_before_exit: Optional[list] = None
    caustics_after_exit: Optional[list] = None
    _dense: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def jacobian(self) -> Optional[np.ndarray]:
        """det D(x)/D(y, s) at every sample."""
        if self.M is None:
            return None
        return jacobian_det(self.M, self.p)

    def state_at(self, s: float) -> np.ndarray:
        """Full state (x, p, S[, M]) at flow time s from dense output / free motion."""
        n = self.x.shape[1]
        if s < self.s[0] - 1e-14 or s > self.s[-1] + 1e-14:
            raise ValueError(f"s={s} outside the sample range [{self.s[0]}, {self.s[-1]}]")
        m = self.n_integrated
        if s <= self.s[m - 1]:
            i = int(np.clip(np.searchsorted(self.s[:m], s) - 1, 0, m - 2))
            z0 = self._state_vector(i)
            return _rk.dense_eval(self.s[i], z0, self.s[i + 1] - self.s[i], self._dense[i], s)
        return self._free_state(s)

    def _state_vector(self, i):
        parts = [self.x[i], self.p[i], [self.S[i]]]
        if self.M is not None:
            parts.append(self.M[i].ravel())
        return np.concatenate(parts)

    def _free_state(self, s):
        i = self.n_integrated - 1
        tau = s - self.s[i]
        x = self.x[i] + 2 * tau * self.p[i]
        S = self.S[i] + 2 * tau * (self.p[i] @ self.p[i])
        parts = [x, self.p[i], [S]]
        if self.M is not None:
            M = self.M[i].copy()
            n = len(x)
            M[:n] += 2 * tau * M[n:]
            parts.append(M.ravel())
        return np.concatenate(parts)

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        jac = self.jacobian
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
                       + ["S", "det_Dx_Dys"])
            for j in range(len(self.s)):
                w.writerow([repr(float(self.s[j]))] + [repr(float(v)) for v in self.x[j]]
                           + [repr(float(v)) for v in self.p[j]] + [repr(float(self.S[j]))]
                           + [repr(float(jac[j])) if jac is not None else ""])


def integrate_ray(pot: Potential, y, opts: IntegratorOptions = IntegratorOptions(),
                  variational: bool = False) -> Ray:
    """Trace one ray, keeping every accepted step plus a few free-flight samples."""
    opts = opts.resolved(pot)
    n = pot.dimension
    y = np.asarray(y, dtype=float).reshape(n - 1)
    z0 = _initial_state(pot, y[None, :], variational)
    r2 = opts.exit_radius ** 2

    def stop(t, Z, rows):
        x, p, _, _ = _split(Z, n)
        return (np.einsum("ij,ij->i", x, x) > r2) & (np.einsum("ij,ij->i", x, p) > 0)

    res = _rk.integrate(_make_rhs(pot, variational), 0.0, z0, opts.max_time,
                        rtol=opts.rel_tol, atol=opts.abs_tol,
                        h_max=opts.dense_output_step, stop=stop, record=True)
    if res.status[0] != _rk.STOPPED:
        raise TrappedRay(y, opts.max_time)
    s, Z, Q = res.trajectories[0].arrays()
    x, p, S, M = _split(Z, n)
    drift = np.max(np.abs(np.einsum("ij,ij->i", p, p) - pot.q(x) - 1.0))
    if drift > opts.energy_tol:
        raise EnergyDrift(y, drift, opts.energy_tol)
    m = len(s)
    ray = Ray(y=y, s=s, x=x, p=p, S=S, M=M, p_inf=p[-1] / np.linalg.norm(p[-1]),
              exited=True, s_exit=float(s[-1]), n_integrated=m,
              plane_offset=pot.plane_offset, _dense=Q)
    # free-flight extension far enough that |x| exceeds both a and the exit radius
    reach = max(pot.plane_offset, opts.exit_radius)
    extra = [ray._free_state(s[-1] + j * reach) for j in (1, 2, 3)]
    Zx = np.vstack([Z] + [e[None, :] for e in extra])
    ray.s = np.concatenate([s, s[-1] + reach * np.array([1.0, 2.0, 3.0])])
    ray.x, ray.p, ray.S, ray.M = _split(Zx, n)
    if variational:
        ray.detDJ = float(direction_jacobian(M[-1], ray.p_inf)[0])
        ray.maslov = maslov_index(ray)
    return ray


def variational_flow(pot: Potential, y, opts: IntegratorOptions = IntegratorOptions()) -> Ray:
    return integrate_ray(pot, y, opts, variational=True)


def direction_J(pot: Potential, y, opts: IntegratorOptions = IntegratorOptions()) -> np.ndarray:
    """Outgoing unit direction.

    Accepts a single point (n-1,) or a batch (N, n-1).
    """
    Y = np.asarray(y, dtype=float)
    single = Y.ndim == 1
    batch = trace_rays(pot, Y.reshape(-1, pot.dimension - 1), opts)
    batch.check(opts.energy_tol)
    return batch.p_inf[0] if single else batch.p_inf


def action_S(ray: Ray, s: float) -> float:
    """Action -a + int_0^s <p, dx> along the ray."""
    n = ray.x.shape[1]
    return float(ray.state_at(s)[2 * n])


# -- caustics ---------------------------------------------------------------------

def _rank_drop(M, p, rel=1e-6) -> int:
    n = p.shape[-1]
    mat = np.concatenate([M[:n, :], 2.0 * p[:, None]], axis=-1)
    mat = mat / np.linalg.norm(mat, axis=0)
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv < rel * sv[0]))


def _hadamard_at(ray: Ray, s: float) -> tuple[float, np.ndarray, np.ndarray]:
    n = ray.x.shape[1]
    z = ray.state_at(s)
    x, p, S, M = _split(z[None, :], n)
    return float(_hadamard(M[0], p[0])), M[0], p[0]


def _bisect(ray, a, b, fa, iters=200):
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm, _, _ = _hadamard_at(ray, m)
        if fm == 0.0:
            return m
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b = m
        if b - a <= 1e-14 * max(1.0, abs(b)):
            break
    return 0.5 * (a + b)


def _post_exit_roots(M, p) -> list[float]:
    """Zeros of det[(Mx + 2 tau Mp) | 2p] for tau > 0 (field-free motion)."""
    n = p.shape[-1]
    a = M[:n, :]
    b = 2.0 * M[n:, :]
    c = 2.0 * p
    if n == 2:
        coef = [np.linalg.det(np.column_stack([b[:, 0], c])),
                np.linalg.det(np.column_stack([a[:, 0], c]))]
    else:
        d = lambda u, v: np.linalg.det(np.column_stack([u, v, c]))
        coef = [d(b[:, 0], b[:, 1]),
                d(b[:, 0], a[:, 1]) + d(a[:, 0], b[:, 1]),
                d(a[:, 0], a[:, 1])]
    scale = max(abs(v) for v in coef) or 1.0
    coef = np.array(coef) / scale
    while len(coef) > 1 and abs(coef[0]) < 1e-13:
        coef = coef[1:]
    if len(coef) <= 1:
        return []
    roots = np.roots(coef)
    out = []
    for r in roots:
        if abs(r.imag) <= 1e-7 * max(1.0, abs(r.real)) and r.real > 0:
            out.append(float(r.real))
    return sorted(out)


def maslov_index(ray: Ray) -> int:
    """Number of zeros of det D(x)/D(y,s) along the whole bicharacteristic.

    Zeros before the exit sphere are located by sign-change bisection on the
    dense output (plus a check of touching minima); zeros on the free-flight
    part are the positive roots of the polynomial det in the free flight time.
    Each zero is weighted by the rank drop of D(x)/D(y,s).
    """
    if ray.M is None:
        raise ValueError("maslov_index needs a ray traced with the variational flow")
    m = ray.n_integrated
    p, M, s = ray.p[:m], ray.M[:m], ray.s[:m]
    h = _hadamard(M, p)
    small = np.abs(h) < ZERO_HADAMARD
    if np.any(small[1:] & small[:-1]):
        i = int(np.nonzero(small[1:] & small[:-1])[0][0])
        raise DegenerateCaustic(f"det D(x)/D(y,s) vanishes over s in [{s[i]:.6g}, {s[i + 1]:.6g}]")
    zeros: list[float] = []
    count = 0
    for i in range(m - 1):
        if h[i] == 0.0:
            continue
        if np.sign(h[i]) != np.sign(h[i + 1]) and h[i + 1] != 0.0:
            sz = _bisect(ray, s[i], s[i + 1], h[i])
            _, Mz, pz = _hadamard_at(ray, sz)
            count += max(1, _rank_drop(Mz, pz))
            zeros.append(sz)
    # pairs of zeros inside one step, and touching zeros: refine every local
    # minimum of |h| that has no sign change around it
    ah = np.abs(h)
    for i in range(1, m - 1):
        sg = np.sign(h[i])
        if not (ah[i] <= ah[i - 1] and ah[i] <= ah[i + 1]
                and np.sign(h[i - 1]) == sg == np.sign(h[i + 1])):
            continue
        res = minimize_scalar(lambda t: sg * _hadamard_at(ray, t)[0],
                              bounds=(s[i - 1], s[i + 1]), method="bounded",
                              options={"xatol": 1e-13})
        if res.fun < -ZERO_HADAMARD:
            for lo, hi_ in ((s[i - 1], res.x), (res.x, s[i + 1])):
                sz = _bisect(ray, lo, hi_, _hadamard_at(ray, lo)[0])
                _, Mz, pz = _hadamard_at(ray, sz)
                count += max(1, _rank_drop(Mz, pz))
                zeros.append(sz)
        elif res.fun < ZERO_HADAMARD:
            _, Mz, pz = _hadamard_at(ray, res.x)
            r = _rank_drop(Mz, pz, rel=1e-4)
            if r % 2 == 1:
                raise DegenerateCaustic(
                    f"det D(x)/D(y,s) touches zero without changing sign at s={res.x:.6g}")
            count += r
            zeros.append(float(res.x))
    post = _post_exit_roots(M[-1], p[-1])
    ray.caustics_before_exit = sorted(zeros)
    ray.caustics_after_exit = [ray.s_exit + t for t in post]
    return count + len(post)


# -- non-trapping ---------------------------------------------------------------

@dataclass
class NontrappingReport:
    n_rays: int
    max_exit_time: float
    trapped: list
    t_max: float

    @property
    def ok(self) -> bool:
        return not self.trapped

    def as_dict(self) -> dict:
        return {"n_rays": self.n_rays, "max_exit_time": self.max_exit_time,
                "t_max": self.t_max, "trapped": [list(e.y) for e in self.trapped]}


def nontrapping_scan(pot: Potential, ys: Optional[Sequence] = None,
                     opts: IntegratorOptions = IntegratorOptions(),
                     per_axis: int = 24) -> NontrappingReport:
    ropts = opts.resolved(pot)
    if ys is None:
        ys = seed_grid(pot.impact_set(), per_axis)
        if len(ys) == 0:
            ys = np.zeros((1, pot.dimension - 1))
    batch = trace_rays(pot, ys, ropts)
    trapped = [TrappedRay(y, ropts.max_time) for y in batch.y[~batch.exited]]
    t_exit = batch.s_exit[batch.exited]
    return NontrappingReport(len(batch.y), float(t_exit.max()) if t_exit.size else 0.0,
                             trapped, ropts.max_time)


def integrate_backward(pot: Potential, x, p, duration: float,
                       opts: IntegratorOptions = IntegratorOptions()):
    """Run the flow backwards for ``duration`` from state (x, p)."""
    opts = opts.resolved(pot)
    n = pot.dimension
    z = np.concatenate([x, p, [0.0]])[None, :]
    res = _rk.integrate(_make_rhs(pot, False, sign=-1.0), 0.0, z, duration,
                        rtol=opts.rel_tol, atol=opts.abs_tol, h_max=opts.dense_output_step)
    return res.y[0, :n], res.y[0, n: 2 * n]
