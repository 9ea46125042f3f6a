"""Leading-order semiclassical amplitude assembled from classical branches."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classical import NONREGULAR_DET, Branch, polar_angle
from .errors import NonregularDirection


@dataclass(frozen=True)
class SemiclassicalAmplitude:
    omega: np.ndarray
    k: float
    value: complex
    branches_used: tuple = field(default=())

    @property
    def dcs(self) -> float:
        return abs(self.value) ** 2

    @property
    def bound(self) -> float:
        """(sum_j |detDJ_j|^{-1/2})^2, an upper bound for |value|^2."""
        return float(sum(b.detDJ ** -0.5 for b in self.branches_used)) ** 2


def _check(branches: Sequence[Branch]) -> None:
    for b in branches:
        if b.detDJ < NONREGULAR_DET:
            raise NonregularDirection(f"|DJ/Dy| = {b.detDJ:.3g} at y={tuple(b.y)}")


def vainberg_amplitude(branches: Sequence[Branch], k: float) -> complex:
    """sum_j |detDJ_j|^{-1/2} exp(i k F_j - i pi nu_j / 2)."""
    if k <= 0:
        raise ValueError("k must be positive")
    _check(branches)
    total = 0j
    for b in branches:
        total += b.detDJ ** -0.5 * np.exp(1j * (k * b.F - 0.5 * np.pi * b.nu))
    return complex(total)


def semiclassical_amplitude(branches: Sequence[Branch], k: float,
                            omega=None) -> SemiclassicalAmplitude:
    if omega is None:
        omega = branches[0].omega if branches else np.array([0.0, 0.0, 1.0])
    return SemiclassicalAmplitude(np.asarray(omega, dtype=float), float(k),
                                  vainberg_amplitude(branches, k), tuple(branches))


def semiclassical_dcs(branches: Sequence[Branch], k: float,
                      window: Optional[float] = None) -> float:
    """|f_sc|^2 at k, or its average over [k, k + window].

    The average is closed form: cross terms 2 a_i a_j cos(k dF + c) average
    to 2 a_i a_j [sin((k+w) dF + c) - sin(k dF + c)] / (w dF).
    """
    if window is None:
        return abs(vainberg_amplitude(branches, k)) ** 2
    if window <= 0:
        raise ValueError("window must be positive")
    _check(branches)
    amp = [b.detDJ ** -0.5 for b in branches]
    total = sum(a * a for a in amp)
    for i in range(len(branches)):
        for j in range(i + 1, len(branches)):
            dF = branches[i].F - branches[j].F
            c = -0.5 * np.pi * (branches[i].nu - branches[j].nu)
            if abs(dF) * window < 1e-12:
                mean = np.cos(k * dF + c)
            else:
                mean = (np.sin((k + window) * dF + c) - np.sin(k * dF + c)) / (window * dF)
            total += 2 * amp[i] * amp[j] * mean
    return float(total)


def amplitude_grid_to_csv(rows: Sequence[SemiclassicalAmplitude], path) -> None:
    """Columns: polar and azimuthal angle, k, Re f, Im f, |f|^2."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "phi", "k", "re_f", "im_f", "abs_f2"])
        for r in rows:
            om = r.omega
            th = float(polar_angle(om))
            ph = float(np.arctan2(om[1], om[0])) if len(om) == 3 else 0.0
            w.writerow([repr(th), repr(ph), repr(r.k), repr(r.value.real), repr(r.value.imag),
                        repr(abs(r.value) ** 2)])
