"""Quadrature rules shared by the oracle and the harness."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    # numpy's nodes, polished by Newton in extended precision; the library
    # weights near the endpoints are only good to ~1e-12 relative at n ~ 300
    x0, _ = np.polynomial.legendre.leggauss(n)
    X = x0.astype(np.longdouble)
    for _ in range(3):
        P, dP = _legendre_and_derivative(X, n)
        X = X - P / dP
    _, dP = _legendre_and_derivative(X, n)
    W = 2 / ((1 - X * X) * dP * dP)
    x, w = X.astype(float), W.astype(float)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _legendre_and_derivative(X, n: int):
    P0 = np.ones_like(X)
    P1 = X.copy()
    for l in range(1, n):
        P0, P1 = P1, ((2 * l + 1) * X * P1 - l * P0) / (l + 1)
    return P1, n * (X * P1 - P0) / (X * X - 1)


def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights on [lo, hi]."""
    if n < 1:
        raise ValueError("need at least one node")
    if n == 1:
        x, w = np.zeros(1), np.full(1, 2.0)
    else:
        x, w = _gauss_legendre(int(n))
    half = 0.5 * (hi - lo)
    return half * x + 0.5 * (hi + lo), half * w


def composite_gauss(edges, points_per_panel) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on each panel [edges[i], edges[i+1]].

    ``points_per_panel`` is an int or one int per panel.
    """
    edges = np.asarray(edges, dtype=float)
    npan = len(edges) - 1
    ppp = np.broadcast_to(np.asarray(points_per_panel, dtype=int), (npan,))
    xs, ws = [], []
    for a, b, m in zip(edges[:-1], edges[1:], ppp):
        x, w = gauss_legendre(int(m), a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)
