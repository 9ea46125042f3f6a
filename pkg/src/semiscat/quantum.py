"""Partial-wave oracle for radial potentials in three dimensions.

The radial equation u'' + [k^2 (1 + q) - l(l+1)/r^2] u = 0 is integrated in
Pruefer form, tan(theta) = k u / u', which keeps every partial wave bounded
and lets all l share one batched integration.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from . import _rk
from ._quadrature import gauss_legendre
from .errors import MatchFailure, QuadratureUnderResolved, TailNotConverged
from .potential import Potential

TAIL_TOL = 1e-10


@dataclass(frozen=True)
class PhaseShiftTable:
    k: float
    l_max: int
    delta: np.ndarray
    dimension: int = 3
    r_match: float = float("nan")

    @property
    def ell(self) -> np.ndarray:
        return np.arange(self.l_max + 1)

    @classmethod
    def from_deltas(cls, k: float, delta) -> "PhaseShiftTable":
        delta = np.asarray(delta, dtype=float)
        return cls(float(k), len(delta) - 1, delta)

    @property
    def partial_amplitudes(self) -> np.ndarray:
        """(2l + 1) e^{i delta} sin(delta) / k."""
        d = self.delta
        return (2 * self.ell + 1) * np.exp(1j * d) * np.sin(d) / self.k

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "delta"])
            for l, d in enumerate(self.delta):
                w.writerow([l, repr(float(d))])


def default_lmax(k: float, R: float) -> int:
    kR = k * R
    return int(np.ceil(kR) + np.ceil(10.0 * kR ** (1.0 / 3.0)) + 20)


def _riccati(l: np.ndarray, x: float):
    """x j_l, x y_l and their x-derivatives."""
    j = spherical_jn(l, x)
    y = spherical_yn(l, x)
    jd = spherical_jn(l, x, derivative=True)
    yd = spherical_yn(l, x, derivative=True)
    return x * j, x * y, j + x * jd, y + x * yd


def _start_angle(l: np.ndarray, r0: np.ndarray, kappa: np.ndarray, k: float) -> np.ndarray:
    """Pruefer angle of the constant-kappa regular solution r j_l(kappa r) at r0."""
    x = kappa * r0
    j = spherical_jn(l, x)
    jd = spherical_jn(l, x, derivative=True)
    # u'/u = 1/r + kappa j'/j; tiny j for large l * small x is handled by the series limit
    with np.errstate(divide="ignore", invalid="ignore"):
        logd = 1.0 / r0 + kappa * jd / j
    series = (l + 1) / r0 - kappa ** 2 * r0 / (2 * l + 3)
    logd = np.where(np.isfinite(logd) & (np.abs(j) > 1e-280), logd, series)
    return np.arctan2(k, logd)


def phase_shifts(pot: Potential, k: float, l_max: Optional[int] = None,
                 r_match: Optional[float] = None, rtol: float = 1e-11,
                 atol: float = 1e-12, check_tail: bool = True) -> PhaseShiftTable:
    """Phase shifts delta_l, l = 0..l_max, of a radial potential in n = 3."""
    if pot.dimension != 3:
        raise ValueError("the partial-wave oracle is three-dimensional")
    if not pot.is_radial:
        raise ValueError("the partial-wave oracle needs a radial potential")
    if k <= 0:
        raise ValueError("k must be positive")
    R = pot.support_radius if not pot.is_free else 1.0
    if l_max is None:
        l_max = default_lmax(k, R)
    if r_match is None:
        r_match = 1.01 * R
    elif r_match <= pot.support_radius:
        raise ValueError("r_match must lie outside the support")
    l = np.arange(l_max + 1)
    if pot.is_free:
        return PhaseShiftTable(float(k), int(l_max), np.zeros(l_max + 1), 3, float(r_match))

    L = l * (l + 1.0)
    rs = np.linspace(0.0, R, 2001)
    kappa_max = k * np.sqrt(np.max(1.0 + pot.q_radial(rs)))
    r_turn = (l + 0.5) / kappa_max
    r0 = np.maximum(1e-6, 0.5 * r_turn * 10.0 ** (-16.0 / (2 * l + 1)))
    r0 = np.minimum(r0, 0.9 * r_match)
    kappa0 = k * np.sqrt(1.0 + pot.q_radial(r0))
    th0 = _start_angle(l, r0, kappa0, k)

    # state: (Pruefer angle, l(l+1)); the second column is constant
    def rhs(t, Y):
        Q = k * k * (1.0 + pot.q_radial(t)) - Y[:, 1] / (t * t)
        c, s = np.cos(Y[:, 0]), np.sin(Y[:, 0])
        out = np.zeros_like(Y)
        out[:, 0] = k * c * c + (Q / k) * s * s
        return out

    res = _rk.integrate(rhs, r0, np.stack([th0, L], axis=1), np.full(len(l), r_match),
                        rtol=rtol, atol=atol)
    if np.any(res.status != _rk.FINISHED):
        raise MatchFailure("radial integration did not reach the matching radius")
    theta = res.y[:, 0]
    jh, yh, jd, yd = _riccati(l, k * r_match)
    wr = jh * yd - jd * yh
    s, c = np.sin(theta), np.cos(theta)
    num = jd * s - jh * c
    den = yd * s - yh * c
    if np.any(np.abs(wr - 1.0) > 1e-8) or np.any(np.hypot(num, den) < 1e-12):
        bad = int(np.argmax(np.abs(wr - 1.0)))
        raise MatchFailure(f"ill-conditioned matching at l={bad}, k={k}, R={r_match}")
    delta = np.arctan(num / den)
    table = PhaseShiftTable(float(k), int(l_max), delta, 3, float(r_match))
    if check_tail and abs(delta[-1]) > TAIL_TOL:
        raise TailNotConverged(f"|delta_{l_max}| = {abs(delta[-1]):.3g} > {TAIL_TOL:g}; raise l_max")
    return table


# -- amplitudes and cross sections -------------------------------------------------

def legendre_table(l_max: int, mu) -> np.ndarray:
    """P_l(mu) for l = 0..l_max by upward recurrence, shape (l_max + 1,) + mu.shape."""
    mu = np.asarray(mu, dtype=float)
    P = np.empty((l_max + 1,) + mu.shape)
    P[0] = 1.0
    if l_max >= 1:
        P[1] = mu
    for l in range(1, l_max):
        P[l + 1] = ((2 * l + 1) * mu * P[l] - l * P[l - 1]) / (l + 1)
    return P


def amplitude_mu(table: PhaseShiftTable, mu) -> np.ndarray:
    """f as a function of mu = cos(theta)."""
    mu = np.asarray(mu, dtype=float)
    a = table.partial_amplitudes
    out = np.zeros(mu.shape, dtype=complex)
    P_prev = np.ones(mu.shape)
    out += a[0] * P_prev
    if table.l_max == 0:
        return out
    P = mu.copy()
    out += a[1] * P
    for l in range(1, table.l_max):
        P_prev, P = P, ((2 * l + 1) * mu * P - l * P_prev) / (l + 1)
        out += a[l + 1] * P
    return out


def quantum_amplitude(table: PhaseShiftTable, theta) -> np.ndarray:
    """f(theta, k) = (1/k) sum (2l+1) e^{i delta_l} sin(delta_l) P_l(cos theta)."""
    theta = np.asarray(theta, dtype=float)
    out = amplitude_mu(table, np.cos(theta))
    return out if out.ndim else complex(out)


def gamma_n(n: int, k: float) -> complex:
    """-(1/4 pi) (k / 2 pi i)^{(n-3)/2}, principal branch."""
    if n not in (2, 3):
        raise ValueError("n must be 2 or 3")
    if k <= 0:
        raise ValueError("k must be positive")
    if n == 3:
        return complex(-1.0 / (4.0 * np.pi))
    return complex(-1.0 / (4.0 * np.pi) * (k / (2j * np.pi)) ** ((n - 3) / 2))


def total_xsec_optical(table: PhaseShiftTable) -> float:
    """sigma = Im f(0) / (-gamma_n k)."""
    f0 = complex(amplitude_mu(table, np.array(1.0)))
    return float(f0.imag / (-gamma_n(3, table.k).real * table.k))


def total_xsec_partial(table: PhaseShiftTable) -> float:
    """(4 pi / k^2) sum (2l+1) sin^2 delta_l."""
    return float(4 * np.pi / table.k ** 2 * np.sum((2 * table.ell + 1) * np.sin(table.delta) ** 2))


def mu_integral(table: PhaseShiftTable, weight: Optional[Callable] = None,
                lo: float = -1.0, hi: float = 1.0, extra_degree: int = 0) -> float:
    """2 pi int_lo^hi |f(mu)|^2 w(mu) dmu by Gauss-Legendre.

    Exact when ``weight`` is a polynomial of degree at most ``extra_degree``.
    """
    n = table.l_max + 1 + (extra_degree + 1) // 2 + 1
    mu, w = gauss_legendre(n, lo, hi)
    f2 = np.abs(amplitude_mu(table, mu)) ** 2
    if weight is not None:
        f2 = f2 * weight(mu)
    return float(2 * np.pi * np.dot(w, f2))


def sigma_angular(table: PhaseShiftTable) -> float:
    """2 pi int |f|^2 sin(theta) dtheta."""
    return mu_integral(table)


def forward_mass(table: PhaseShiftTable, delta: float) -> float:
    """M(delta, k): the |f|^2 mass inside the cone of half-angle delta."""
    return mu_integral(table, lo=np.cos(delta), hi=1.0)


def transport_xsec(table: PhaseShiftTable) -> float:
    return mu_integral(table, weight=lambda mu: 1.0 - mu, extra_degree=1)


def amplitudes_to_csv(table: PhaseShiftTable, theta, path) -> None:
    theta = np.asarray(theta, dtype=float)
    f = np.atleast_1d(quantum_amplitude(table, theta))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "re_f", "im_f", "abs_f2"])
        for t, v in zip(np.atleast_1d(theta), f):
            w.writerow([repr(float(t)), repr(v.real), repr(v.imag), repr(abs(v) ** 2)])


# -- far-field surface representation ---------------------------------------------

def scattered_field(table: PhaseShiftTable, r: float, mu):
    """Scattered wave and its radial derivative at radius r outside the support."""
    l = table.ell
    x = table.k * r
    h = spherical_jn(l, x) + 1j * spherical_yn(l, x)
    hd = spherical_jn(l, x, derivative=True) + 1j * spherical_yn(l, x, derivative=True)
    c = (1j ** ((l + 1) % 4)) * (2 * l + 1) * np.exp(1j * table.delta) * np.sin(table.delta)
    P = legendre_table(table.l_max, mu)
    u = np.tensordot(c * h, P, axes=(0, 0))
    du = np.tensordot(c * table.k * hd, P, axes=(0, 0))
    return u, du


def _surface_rule(table: PhaseShiftTable, omega: np.ndarray, R: float, order: int) -> complex:
    mu, wmu = gauss_legendre(order)
    n_phi = 2 * order
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    u, du = scattered_field(table, R, mu)
    st = np.sqrt(1.0 - mu * mu)
    xhat = np.stack([st[:, None] * np.cos(phi)[None, :], st[:, None] * np.sin(phi)[None, :],
                     np.broadcast_to(mu[:, None], (order, n_phi))], axis=-1)
    proj = xhat @ omega
    k = table.k
    integrand = (du[:, None] + 1j * k * proj * u[:, None]) * np.exp(-1j * k * R * proj)
    total = np.sum(wmu[:, None] * integrand) * (2 * np.pi / n_phi) * R * R
    return complex(gamma_n(3, k) * total)


def surface_integral_amplitude(table: PhaseShiftTable, omega, R: float,
                               order: Optional[int] = None, tol: float = 1e-6,
                               support_radius: float = 0.0) -> complex:
    """f(omega, k) from the outgoing-flux integral over the sphere of radius R.

    Gauss-Legendre in cos(theta) times a uniform azimuth rule; the result is
    compared with the rule of twice the order.
    """
    if R <= support_radius:
        raise ValueError("the sphere must enclose the support")
    omega = np.asarray(omega, dtype=float)
    omega = omega / np.linalg.norm(omega)
    if order is None:
        order = int(np.ceil((table.l_max + table.k * R) / 2.0)) + 20
    a = _surface_rule(table, omega, R, order)
    b = _surface_rule(table, omega, R, 2 * order)
    if abs(a - b) > tol * max(abs(b), 1e-300) and abs(a - b) > tol * 1e-3:
        raise QuadratureUnderResolved(
            f"surface rule of order {order} moved by {abs(a - b):.3g} on doubling")
    return b
