"""Smooth compactly supported potentials built from bump functions.

A potential is a finite sum of translated bumps

    q0 * exp(1 - 1/(1 - |x - c|^2 / rho^2))     for |x - c| < rho

and exactly zero elsewhere. Incidence is always along the last coordinate
axis; particles are launched from the plane ``x[-1] = -a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# exp(-1/t) underflows well before t reaches this value
_T_CUTOFF = 1.0e-3


class PotentialError(ValueError):
    """Raised when a potential violates one of its construction invariants."""


@dataclass(frozen=True)
class BumpPart:
    center: tuple[float, ...]
    radius: float
    amplitude: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise PotentialError(f"bump radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Potential:
    """Sum of bump parts in ``dimension`` space dimensions.

    Parameters
    ----------
    dimension : int
        2 or 3.
    parts : sequence of BumpPart
        May be empty (free field).
    plane_offset : float, optional
        Launch-plane offset ``a``; defaults to ``2 * support_radius`` (or 1 for
        the free field). Must exceed the support radius.
    """

    dimension: int
    parts: tuple[BumpPart, ...] = ()
    plane_offset: float | None = None
    support_radius: float = field(init=False)

    def __post_init__(self):
        n = int(self.dimension)
        if n not in (2, 3):
            raise PotentialError(f"dimension must be 2 or 3, got {self.dimension}")
        object.__setattr__(self, "dimension", n)
        parts = tuple(self.parts)
        for part in parts:
            if len(part.center) != n:
                raise PotentialError(
                    f"part center {part.center} does not have dimension {n}")
        object.__setattr__(self, "parts", parts)
        r_sup = max((np.linalg.norm(p.center) + p.radius for p in parts), default=0.0)
        object.__setattr__(self, "support_radius", float(r_sup))
        a = self.plane_offset
        if a is None:
            a = 2.0 * r_sup if r_sup > 0 else 1.0
        a = float(a)
        if not a > r_sup:
            raise PotentialError(
                f"plane offset a={a} must exceed the support radius {r_sup}")
        object.__setattr__(self, "plane_offset", a)
        self._check_positivity()

    # -- construction helpers ------------------------------------------------

    @classmethod
    def radial_bump(cls, amplitude: float, radius: float = 1.0, dimension: int = 3,
                    plane_offset: float | None = None) -> "Potential":
        part = BumpPart((0.0,) * dimension, radius, amplitude)
        return cls(dimension, (part,), plane_offset)

    @classmethod
    def free(cls, dimension: int = 3, plane_offset: float = 1.0) -> "Potential":
        return cls(dimension, (), plane_offset)

    @classmethod
    def from_dict(cls, d: dict) -> "Potential":
        n = int(d.get("dimension", 3))
        try:
            parts = tuple(BumpPart(tuple(float(c) for c in p["center"]), float(p["radius"]),
                                   float(p["amplitude"])) for p in d.get("parts", []))
        except (KeyError, TypeError) as exc:
            raise PotentialError(f"bad part description: {exc}") from None
        return cls(n, parts, d.get("plane_offset"))

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "plane_offset": self.plane_offset,
            "parts": [{"center": list(p.center), "radius": p.radius,
                       "amplitude": p.amplitude} for p in self.parts],
        }

    def _check_positivity(self):
        if not self.parts:
            return
        # sufficient condition first; fall back to sampling
        if 1.0 + sum(min(p.amplitude, 0.0) for p in self.parts) > 0:
            return
        pts = [np.array(p.center) for p in self.parts]
        r = self.support_radius
        g = np.linspace(-r, r, 50)
        grid = np.stack(np.meshgrid(*([g] * self.dimension), indexing="ij"), -1)
        vmin = min(np.min(1.0 + self.q(grid)), np.min(1.0 + self.q(np.array(pts))))
        if not vmin > 0:
            raise PotentialError(
                f"1 + q must stay positive; found min(1 + q) = {vmin:.3g}")

    # -- evaluators -----------------------------------------------------------

    @property
    def is_free(self) -> bool:
        return not self.parts

    @property
    def is_radial(self) -> bool:
        """True when every part is centered at the origin."""
        return all(not any(c != 0.0 for c in p.center) for p in self.parts)

    @property
    def incidence(self) -> np.ndarray:
        e = np.zeros(self.dimension)
        e[-1] = 1.0
        return e

    def _profile(self, x):
        """Yield (d, rho, amplitude, g, t, inside) per part for points x (..., n)."""
        for part in self.parts:
            d = x - np.asarray(part.center)
            u = np.einsum("...i,...i->...", d, d) / part.radius ** 2
            t = 1.0 - u
            inside = t > _T_CUTOFF
            ts = np.where(inside, t, 1.0)
            g = np.where(inside, np.exp(1.0 - 1.0 / ts), 0.0)
            yield d, part.radius, part.amplitude, g, ts, inside

    def q(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for _, _, q0, g, _, _ in self._profile(x):
            out = out + q0 * g
        return out

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for d, rho, q0, g, t, _ in self._profile(x):
            h = -2.0 * q0 * g / (rho ** 2 * t ** 2)
            out = out + h[..., None] * d
        return out

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        out = np.zeros(x.shape + (n,))
        eye = np.eye(n)
        for d, rho, q0, g, t, _ in self._profile(x):
            h = -2.0 * q0 * g / (rho ** 2 * t ** 2)
            dh_du = -2.0 * q0 * g * (2.0 * t - 1.0) / (rho ** 2 * t ** 4)
            out = out + h[..., None, None] * eye \
                + (2.0 / rho ** 2) * dh_du[..., None, None] * d[..., :, None] * d[..., None, :]
        return out

    def q_radial(self, r) -> np.ndarray:
        """q as a function of radius (radial potentials only)."""
        r = np.asarray(r, dtype=float)
        x = np.zeros(r.shape + (self.dimension,))
        x[..., -1] = r
        return self.q(x)

    def impact_set(self) -> "ImpactRegion":
        return impact_set(self)


def eval_q(pot: Potential, x) -> np.ndarray:
    return pot.q(x)


def grad_q(pot: Potential, x) -> np.ndarray:
    return pot.grad(x)


def hess_q(pot: Potential, x) -> np.ndarray:
    return pot.hess(x)


# -- projected support ---------------------------------------------------------

@dataclass(frozen=True)
class ImpactRegion:
    """Union of closed disks (intervals when n = 2) in the launch plane."""

    centers: np.ndarray  # (m, n-1)
    radii: np.ndarray    # (m,)

    @property
    def dimension(self) -> int:
        return self.centers.shape[1] if self.centers.ndim == 2 else 0

    @property
    def is_empty(self) -> bool:
        return len(self.radii) == 0

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.is_empty:
            return np.zeros(y.shape[:-1], dtype=bool)
        d = np.linalg.norm(y[..., None, :] - self.centers, axis=-1)
        return np.any(d <= self.radii, axis=-1)

    def interior_depth(self, y) -> np.ndarray:
        """Largest ``r_i - |y - c_i|`` over the disks (positive inside)."""
        y = np.asarray(y, dtype=float)
        if self.is_empty:
            return np.full(y.shape[:-1], -np.inf)
        d = np.linalg.norm(y[..., None, :] - self.centers, axis=-1)
        return np.max(self.radii - d, axis=-1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.min(self.centers - self.radii[:, None], axis=0),
                np.max(self.centers + self.radii[:, None], axis=0))

    @property
    def measure(self) -> float:
        if self.is_empty:
            return 0.0
        if self.dimension == 1:
            return _union_interval_length(self.centers[:, 0], self.radii)
        return _union_disk_area(self.centers, self.radii)


def impact_set(pot: Potential) -> ImpactRegion:
    """Projection of supp q onto the launch plane."""
    m = pot.dimension - 1
    if pot.is_free:
        return ImpactRegion(np.zeros((0, m)), np.zeros(0))
    centers = np.array([p.center[:-1] for p in pot.parts], dtype=float).reshape(-1, m)
    radii = np.array([p.radius for p in pot.parts], dtype=float)
    return ImpactRegion(centers, radii)


def _union_interval_length(c, r) -> float:
    iv = sorted(zip(c - r, c + r))
    total, (lo, hi) = 0.0, iv[0]
    for a, b in iv[1:]:
        if a > hi:
            total += hi - lo
            lo, hi = a, b
        else:
            hi = max(hi, b)
    return float(total + hi - lo)


def _merge(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def _union_disk_area(centers: np.ndarray, radii: np.ndarray) -> float:
    """Exact area of a union of disks via Green's theorem on the uncovered arcs."""
    disks = []
    for c, r in zip(map(tuple, centers), radii):
        if (c, r) not in disks:
            disks.append((c, float(r)))
    area = 0.0
    for i, ((cx, cy), ri) in enumerate(disks):
        covered: list[tuple[float, float]] = []
        swallowed = False
        for j, ((dx, dy), rj) in enumerate(disks):
            if i == j:
                continue
            dist = np.hypot(dx - cx, dy - cy)
            if dist + ri <= rj:
                swallowed = True
                break
            if dist >= ri + rj or dist + rj <= ri:
                continue
            alpha = np.arctan2(dy - cy, dx - cx)
            beta = np.arccos(np.clip((ri ** 2 + dist ** 2 - rj ** 2) / (2 * ri * dist), -1, 1))
            lo, hi = alpha - beta, alpha + beta
            # normalize into [0, 2pi)
            lo_m = lo % (2 * np.pi)
            hi_m = lo_m + (hi - lo)
            if hi_m > 2 * np.pi:
                covered += [(lo_m, 2 * np.pi), (0.0, hi_m - 2 * np.pi)]
            else:
                covered.append((lo_m, hi_m))
        if swallowed:
            continue
        free, last = [], 0.0
        for a, b in _merge(covered):
            if a > last:
                free.append((last, a))
            last = max(last, b)
        if last < 2 * np.pi:
            free.append((last, 2 * np.pi))
        for t1, t2 in free:
            area += 0.5 * (ri ** 2 * (t2 - t1)
                           + cx * ri * (np.sin(t2) - np.sin(t1))
                           - cy * ri * (np.cos(t2) - np.cos(t1)))
    return float(area)


def impact_quadrature(region: ImpactRegion, n_radial: int = 96, n_azimuth: int = 64,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and weights over the impact region.

    Each disk gets a Gauss-Legendre (radius) x uniform (azimuth) rule; nodes
    already covered by an earlier disk are dropped, so disjoint unions are
    integrated exactly and overlaps only lose accuracy at the seams.
    """
    m = region.dimension
    if region.is_empty:
        return np.zeros((0, m)), np.zeros(0)
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    nodes, weights = [], []
    for i, (c, r) in enumerate(zip(region.centers, region.radii)):
        if m == 1:
            pts = c[0] + r * xg
            y = pts[:, None]
            w = r * wg
        else:
            rr = 0.5 * r * (xg + 1.0)
            wr = 0.5 * r * wg * rr
            phi = 2 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
            R, P = np.meshgrid(rr, phi, indexing="ij")
            y = np.stack([c[0] + R * np.cos(P), c[1] + R * np.sin(P)], -1).reshape(-1, 2)
            w = np.repeat(wr * 2 * np.pi / n_azimuth, n_azimuth)
        if i > 0:
            prev = ImpactRegion(region.centers[:i], region.radii[:i])
            keep = ~prev.contains(y)
            y, w = y[keep], w[keep]
        nodes.append(y)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def seed_grid(region: ImpactRegion, per_axis: int) -> np.ndarray:
    """Uniform grid over the bounding box of the region, restricted to the region."""
    if region.is_empty:
        return np.zeros((0, region.dimension))
    lo, hi = region.bounding_box()
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(per_axis) + 0.5) / per_axis
            for i in range(region.dimension)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, region.dimension)
    return grid[region.contains(grid)]

