"""Classical scattering: branch inversion of the direction map and cross sections."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from .errors import BranchUncertain, NonregularDirection, OrbitingDetected
from .potential import Potential, impact_quadrature
from .rays import (IntegratorOptions, Ray, direction_J, tangent_basis, trace_rays,
                   variational_flow)

NONREGULAR_DET = 1e-8
ORBIT_TOL = 1e-10  # radicand minimum below ORBIT_TOL * b^2 counts as a double root


@dataclass(frozen=True)
class Branch:
    y: np.ndarray
    omega: np.ndarray
    detDJ: float
    F: float
    nu: int

    def as_row(self) -> list:
        return [*map(float, self.y), *map(float, self.omega), self.detDJ, self.F, self.nu]


def polar_angle(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return np.arccos(np.clip(omega[..., -1] / np.linalg.norm(omega, axis=-1), -1.0, 1.0))


def direction_from_angles(theta: float, phi: float = 0.0, dimension: int = 3) -> np.ndarray:
    if dimension == 2:
        return np.array([np.sin(theta), np.cos(theta)])
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


# -- Newton inversion of J -----------------------------------------------------

def _newton(pot: Potential, Y0: np.ndarray, omega: np.ndarray, opts: IntegratorOptions,
            max_iter: int = 30, tol: float = 1e-11, max_step: float | None = None):
    """Batched Newton for J(y) = omega from the rows of Y0.

    Returns (Y, converged mask). Rows that leave the impact region, hit a
    singular Jacobian or stop decreasing are marked unconverged.
    """
    region = pot.impact_set()
    E = tangent_basis(omega)
    Y = np.array(Y0, dtype=float).reshape(-1, pot.dimension - 1)
    N = len(Y)
    conv = np.zeros(N, dtype=bool)
    alive = region.contains(Y)
    best = np.full(N, np.inf)
    stalls = np.zeros(N, dtype=int)
    if max_step is None:
        lo, hi = region.bounding_box() if not region.is_empty else (np.zeros(1), np.ones(1))
        max_step = 0.25 * float(np.max(hi - lo))
    for _ in range(max_iter):
        idx = np.nonzero(alive & ~conv)[0]
        if idx.size == 0:
            break
        B = trace_rays(pot, Y[idx], opts, variational=True)
        ok = B.exited & (B.energy_drift <= opts.energy_tol)
        J = B.p_inf
        res = np.linalg.norm(J - omega, axis=1)
        hit = ok & (res < tol)
        conv[idx[hit]] = True
        # stall detection on the residual
        improving = res < 0.5 * best[idx]
        stalls[idx] = np.where(improving, 0, stalls[idx] + 1)
        best[idx] = np.minimum(best[idx], res)
        g = J @ E
        Jg = np.einsum("ki,nkj->nij", E, B.DJ)
        det = np.linalg.det(Jg)
        good = ok & ~hit & (J @ omega > 0) & (np.abs(det) > 1e-14) & (stalls[idx] < 4)
        step = np.zeros_like(g)
        if np.any(good):
            step[good] = -np.linalg.solve(Jg[good], g[good][..., None])[..., 0]
        norm = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, max_step / np.maximum(norm, 1e-300))[:, None]
        Y[idx[good]] += step[good]
        drop = idx[~good & ~hit]
        alive[drop] = False
        alive[idx] &= region.contains(Y[idx])
    return Y, conv


def _screen_seeds(pot: Potential, omega: np.ndarray, per_axis: int,
                  opts: IntegratorOptions) -> np.ndarray:
    """Grid seeds worth a Newton start.

    A seed qualifies if |J(y) - omega| is a local minimum over its grid
    neighbours, or if the linearized Newton step from it is shorter than
    two grid cells. The second test catches roots in regions where J turns
    by more than the grid can resolve.
    """
    region = pot.impact_set()
    m = pot.dimension - 1
    lo, hi = region.bounding_box()
    cell = float(np.max(hi - lo)) / per_axis
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(per_axis) + 0.5) / per_axis for i in range(m)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    flat = grid.reshape(-1, m)
    inside = region.contains(flat)
    res = np.full(len(flat), np.inf)
    near = np.zeros(len(flat), dtype=bool)
    B = trace_rays(pot, flat[inside], opts, variational=True)
    ok = B.exited & (B.p_inf @ omega > 0)
    res[inside] = np.where(B.exited, np.linalg.norm(B.p_inf - omega, axis=1), np.inf)
    E = tangent_basis(omega)
    g = B.p_inf @ E
    Jg = np.einsum("ki,nkj->nij", E, B.DJ)
    reg = ok & (np.abs(np.linalg.det(Jg)) > 1e-14)
    step = np.full(len(g), np.inf)
    if np.any(reg):
        step[reg] = np.linalg.norm(np.linalg.solve(Jg[reg], g[reg][..., None])[..., 0], axis=1)
    near[inside] = step < 2.0 * cell
    R = res.reshape(grid.shape[:-1])
    pad = np.pad(R, 1, constant_values=np.inf)
    is_min = np.isfinite(R)
    shape = R.shape
    for off in np.ndindex(*([3] * m)):
        if all(o == 1 for o in off):
            continue
        sl = tuple(slice(o, o + s) for o, s in zip(off, shape))
        is_min &= R <= pad[sl]
    return flat[is_min.ravel() | near]


def _dedup(Y: np.ndarray, radius: float) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for y in Y:
        if all(np.linalg.norm(y - z) > radius for z in out):
            out.append(y)
    return out


def phase_F(ray: Ray, sample: int = -1) -> float:
    """S - <omega, x> at a free-flight sample of the ray (default: the last one)."""
    return float(ray.S[sample] - ray.p_inf @ ray.x[sample])


def _branch_from_ray(ray: Ray) -> Branch:
    return Branch(y=np.array(ray.y), omega=ray.p_inf.copy(), detDJ=float(ray.detDJ),
                  F=phase_F(ray), nu=int(ray.maslov))


def polish_branch(pot: Potential, y, omega, opts: IntegratorOptions,
                  tol: float = 1e-11, max_iter: int = 12) -> Ray:
    """Single-ray Newton refinement; returns the converged variational ray."""
    E = tangent_basis(omega)
    n = pot.dimension
    y = np.array(y, dtype=float)
    for _ in range(max_iter):
        ray = variational_flow(pot, y, opts)
        if np.linalg.norm(ray.p_inf - omega) < tol:
            return ray
        Mp = ray.M[ray.n_integrated - 1][n:, :]
        Jg = E.T @ Mp
        y = y - np.linalg.solve(Jg, E.T @ ray.p_inf)
    raise BranchUncertain(f"Newton stalled near y={tuple(y)} for omega={tuple(omega)}")


def find_branches(pot: Potential, omega, seed_grid: int | np.ndarray = 80, tol: float = 1e-5,
                  opts: IntegratorOptions = IntegratorOptions(), interior_margin: float = 0.0,
                  allow_nonregular: bool = False) -> list[Branch]:
    """All preimages y_j of omega under the direction map.

    A uniform grid of ``seed_grid`` points per axis over the bounding box of
    the impact region is screened for local minima of |J - omega|; Newton
    runs from those seeds (or from an explicit array of seeds), and the
    converged points are merged within ``tol``.
    """
    omega = np.asarray(omega, dtype=float)
    omega = omega / np.linalg.norm(omega)
    region = pot.impact_set()
    if region.is_empty:
        return []
    if isinstance(seed_grid, (int, np.integer)):
        seeds = _screen_seeds(pot, omega, int(seed_grid), opts)
    else:
        seeds = np.asarray(seed_grid, dtype=float)
    if len(seeds) == 0:
        return []
    Y, conv = _newton(pot, seeds, omega, opts)
    cand = Y[conv]
    if interior_margin > 0:
        cand = cand[region.interior_depth(cand) > interior_margin]
    branches = []
    for y in _dedup(cand, tol):
        ray = polish_branch(pot, y, omega, opts)
        if interior_margin > 0 and region.interior_depth(ray.y) <= interior_margin:
            continue
        branches.append(_branch_from_ray(ray))
    # polishing can merge candidates that were just outside the dedup radius
    uniq: list[Branch] = []
    for b in branches:
        if all(np.linalg.norm(b.y - u.y) > tol for u in uniq):
            uniq.append(b)
    if not allow_nonregular:
        bad = [b for b in uniq if b.detDJ < NONREGULAR_DET]
        if bad:
            raise NonregularDirection(
                f"|DJ/Dy| = {bad[0].detDJ:.3g} at y={tuple(bad[0].y)}: direction is near a caustic")
    return sorted(uniq, key=lambda b: tuple(b.y))


def branches_to_csv(branches: Sequence[Branch], path, dimension: int = 3) -> None:
    m = dimension - 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{i + 1}" for i in range(m)] + [f"omega{i + 1}" for i in range(dimension)]
                   + ["detDJ", "F", "nu"])
        for b in branches:
            w.writerow([repr(float(v)) for v in b.as_row()[:-1]] + [b.nu])


# -- cross sections ---------------------------------------------------------------

def classical_dcs(branches: Sequence[Branch]) -> float:
    """|f_cl|^2 = sum_j |DJ(y_j)/Dy_j|^-1."""
    total = 0.0
    for b in branches:
        if b.detDJ < NONREGULAR_DET:
            raise NonregularDirection(f"|DJ/Dy| = {b.detDJ:.3g} at y={tuple(b.y)}")
        total += 1.0 / b.detDJ
    return total


def sigma_cl(pot: Potential) -> float:
    return pot.impact_set().measure


def pushforward_integral(pot: Potential, phi: Callable[[np.ndarray], np.ndarray],
                         y_grid: Optional[tuple[np.ndarray, np.ndarray]] = None,
                         opts: IntegratorOptions = IntegratorOptions(),
                         n_radial: int = 160, n_azimuth: int = 48) -> float:
    """Integral of phi(J(y)) over the impact region.

    ``phi`` maps an array of unit vectors (N, n) to values (N,). ``y_grid`` is
    an optional (nodes, weights) rule over the impact region.
    """
    region = pot.impact_set()
    if y_grid is None:
        y_grid = impact_quadrature(region, n_radial, n_azimuth)
    nodes, weights = y_grid
    if len(nodes) == 0:
        return 0.0
    J = direction_J(pot, nodes, opts)
    return float(np.dot(weights, phi(J)))


# -- radial oracle ----------------------------------------------------------------

def _require_radial(pot: Potential):
    if not pot.is_radial:
        raise ValueError("deflection oracle needs a potential whose parts are all origin-centered")


def deflection_radial(pot: Potential, b: float) -> float:
    """Deflection angle Theta(b), positive when the ray is bent toward the axis.

    Theta = 2 int_{r_min}^inf b / (r^2 sqrt(1 + q - b^2/r^2)) dr - pi, with the
    part beyond the support done in closed form and the turning-point
    singularity removed by r = r_min + t^2.
    """
    _require_radial(pot)
    b = abs(float(b))
    R = pot.support_radius
    if b == 0.0 or b >= R:
        return 0.0

    def g(r):
        r = np.asarray(r, dtype=float)
        return r * r * (1.0 + pot.q_radial(r)) - b * b

    def dg(r):
        r = np.asarray(r, dtype=float)
        x = np.zeros(r.shape + (pot.dimension,))
        x[..., -1] = r
        return 2.0 * r * (1.0 + pot.q_radial(r)) + r * r * pot.grad(x)[..., -1]

    rs = np.linspace(R, 0.0, 4001)
    gs = g(rs)
    k = int(np.argmax(gs < 0))
    r_min = brentq(lambda r: float(g(r)), rs[k], rs[k - 1], xtol=1e-15, rtol=1e-15,
                   maxiter=200)
    slope = float(dg(r_min))
    if slope * r_min < 1e-8 * b * b:
        raise OrbitingDetected(f"double turning point at r={r_min:.6g} for b={b:.6g}")
    # a near-double root outside r_min that the scan stepped over
    for i in range(1, k - 1):
        if gs[i] <= gs[i - 1] and gs[i] <= gs[i + 1]:
            loc = minimize_scalar(lambda r: float(g(r)), bounds=(rs[i + 1], rs[i - 1]),
                                  method="bounded", options={"xatol": 1e-13})
            if loc.fun < ORBIT_TOL * b * b:
                raise OrbitingDetected(
                    f"near-double turning point at r={loc.x:.6g} for b={b:.6g}")

    # g(r_min + d) / d, by Gauss-Legendre on g' when d is small to avoid cancellation
    xi, wi = np.polynomial.legendre.leggauss(6)
    xi, wi = 0.5 * (xi + 1.0), 0.5 * wi

    def ratio(d):
        if d < 1e-3 * R:
            return float(wi @ dg(r_min + d * xi))
        return float(g(r_min + d)) / d

    def integrand(t):
        d = t * t
        return 2.0 * b / ((r_min + d) * np.sqrt(max(ratio(d), 1e-300)))

    upper = np.sqrt(R - r_min)
    inner, _ = quad(integrand, 0.0, upper, epsabs=1e-13, epsrel=1e-12, limit=500)
    swept = inner + np.arcsin(b / R)
    return float(2.0 * swept - np.pi)


def deflection_derivative(pot: Potential, b: float, h: float = 1e-5) -> float:
    """dTheta/db by fourth-order central differences of the quadrature oracle."""
    f = lambda v: deflection_radial(pot, v)
    return (-f(b + 2 * h) + 8 * f(b + h) - 8 * f(b - h) + f(b - 2 * h)) / (12 * h)


@dataclass
class DeflectionTable:
    """Deflection function sampled on [0, rho] for a radial potential."""

    pot: Potential
    b: np.ndarray
    theta: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["b", "Theta"])
            for bi, ti in zip(self.b, self.theta):
                w.writerow([repr(float(bi)), repr(float(ti))])

    @property
    def max_deflection(self) -> float:
        return float(np.max(np.abs(polar_of_signed(self.theta))))

    def invert(self, theta: float) -> list[float]:
        """All impact parameters b > 0 whose outgoing polar angle is theta."""
        targets = [theta, -theta, 2 * np.pi - theta, -(2 * np.pi - theta)]
        roots = []
        for tgt in targets:
            d = self.theta - tgt
            for i in np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]:
                f = lambda v: deflection_radial(self.pot, v) - tgt
                roots.append(brentq(f, self.b[i], self.b[i + 1], xtol=1e-14, rtol=1e-14))
        return sorted(roots)

    def dcs(self, theta: float) -> float:
        """sum over branches of (b / sin theta) |db/dTheta| (n = 3)."""
        return sum(b / (np.sin(theta) * abs(deflection_derivative(self.pot, b)))
                   for b in self.invert(theta))

    def pushforward(self, phi_theta: Callable[[float], float], points=None) -> float:
        """2 pi int phi(polar(Theta(b))) b db over the support disk (n = 3)."""
        R = self.pot.support_radius
        f = lambda b: phi_theta(float(polar_of_signed(deflection_radial(self.pot, b)))) * b
        val, _ = quad(f, 0.0, R, limit=400, epsabs=1e-11, epsrel=1e-10, points=points)
        return 2 * np.pi * val


def polar_of_signed(theta) -> np.ndarray:
    return np.arccos(np.cos(theta))


def deflection_table(pot: Potential, n: int = 401) -> DeflectionTable:
    _require_radial(pot)
    b = np.linspace(0.0, pot.support_radius, n)
    th = np.array([deflection_radial(pot, v) for v in b])
    return DeflectionTable(pot, b, th)


# -- assumption checkers ------------------------------------------------------------

def _signed_jacobian(B) -> np.ndarray:
    """Oriented area factor of y -> J(y) on the sphere (n = 3) or signed dtheta/dy (n = 2)."""
    J = B.p_inf
    DJ = B.DJ
    if J.shape[1] == 2:
        return J[:, 1] * DJ[:, 0, 0] - J[:, 0] * DJ[:, 1, 0]
    return np.einsum("ni,ni->n", np.cross(DJ[:, :, 0], DJ[:, :, 1]), J)


def assumption2_check(pot: Potential, resolutions: Sequence[int] = (40, 80),
                      opts: IntegratorOptions = IntegratorOptions(),
                      near_zero: float = 1e-6, interior_margin: float = 0.05) -> dict:
    """Empirical evidence for the critical-set and forward-preimage conditions.

    For each grid resolution the report gives the fraction of grid points with
    |DJ/Dy| < ``near_zero`` and the fraction of grid cells across which the
    oriented Jacobian changes sign (this one shrinks like the grid spacing
    when the critical set is a curve). Interior forward preimages are found
    by Newton and flagged when their Jacobian is near zero.
    """
    region = pot.impact_set()
    report = {"grid_sizes": list(resolutions), "near_zero_threshold": near_zero,
              "near_zero_fraction": [], "sign_change_cell_fraction": [],
              "forward_preimages": [], "violation": False, "degenerate": False}
    if region.is_empty:
        report["degenerate"] = True
        report["violation"] = True
        report["note"] = "empty support: J is constant, every direction map point is forward-critical"
        return report
    m = pot.dimension - 1
    lo, hi = region.bounding_box()
    for per_axis in resolutions:
        axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(per_axis) + 0.5) / per_axis for i in range(m)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        flat = grid.reshape(-1, m)
        inside = region.contains(flat)
        B = trace_rays(pot, flat[inside], opts, variational=True)
        B.check(opts.energy_tol)
        det = B.detDJ
        report["near_zero_fraction"].append(float(np.mean(det < near_zero)))
        sj = np.full(len(flat), np.nan)
        sj[inside] = _signed_jacobian(B)
        SJ = sj.reshape(grid.shape[:-1])
        changes, cells = 0, 0
        for ax in range(m):
            a = np.take(SJ, np.arange(per_axis - 1), axis=ax)
            b = np.take(SJ, np.arange(1, per_axis), axis=ax)
            valid = np.isfinite(a) & np.isfinite(b)
            cells += int(valid.sum())
            changes += int(np.sum(valid & (np.sign(a) != np.sign(b))))
        report["sign_change_cell_fraction"].append(changes / max(cells, 1))
    fwd = find_branches(pot, pot.incidence, seed_grid=resolutions[0], opts=opts,
                        interior_margin=interior_margin * float(np.max(region.radii)),
                        allow_nonregular=True)
    for b in fwd:
        report["forward_preimages"].append({"y": [float(v) for v in b.y], "detDJ": b.detDJ})
    report["violation"] = any(b.detDJ < near_zero for b in fwd)
    return report


def _rotate(omega: np.ndarray, direction: np.ndarray, angle: float) -> np.ndarray:
    return np.cos(angle) * omega + np.sin(angle) * direction


def assumption3_check(pot: Potential, omegas: Sequence, opts: IntegratorOptions = IntegratorOptions(),
                      h: float = 1e-4, flag_below: float = 1e-6, seed_grid: int = 80) -> dict:
    """Tangential gradients of F_i - F_j over pairs of branches.

    Each branch is continued by Newton to the directions omega rotated by
    +-h along an orthonormal tangent basis; the gradient of F_i - F_j is the
    central difference. Directions with fewer than two branches are listed
    as vacuously unflagged.
    """
    entries = []
    for omega in omegas:
        omega = np.asarray(omega, dtype=float)
        omega = omega / np.linalg.norm(omega)
        try:
            brs = find_branches(pot, omega, seed_grid=seed_grid, opts=opts)
        except NonregularDirection as exc:
            entries.append({"omega": omega.tolist(), "skipped": str(exc)})
            continue
        if len(brs) < 2:
            entries.append({"omega": omega.tolist(), "n_branches": len(brs), "pairs": []})
            continue
        E = tangent_basis(omega)
        grads = []
        for br in brs:
            g = []
            for col in E.T:
                vals = []
                for sgn in (1.0, -1.0):
                    w = _rotate(omega, col, sgn * h)
                    ray = polish_branch(pot, br.y, w, opts)
                    vals.append(phase_F(ray))
                g.append((vals[0] - vals[1]) / (2 * h))
            grads.append(np.array(g))
        pairs = []
        for i in range(len(brs)):
            for j in range(i + 1, len(brs)):
                gn = float(np.linalg.norm(grads[i] - grads[j]))
                gap = float(abs(brs[i].F - brs[j].F))
                pairs.append({"i": i, "j": j, "grad_norm": gn, "phase_gap": gap,
                              "flagged": gn < flag_below, "coincident_phase": gap < 1e-9})
        entries.append({"omega": omega.tolist(), "n_branches": len(brs), "pairs": pairs})
    flagged = [e for e in entries if any(p["flagged"] for p in e.get("pairs", []))]
    return {"n_directions": len(entries), "flag_threshold": flag_below, "step": h,
            "entries": entries, "n_flagged": len(flagged)}
