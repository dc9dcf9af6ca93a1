"""Small quadrature and finite-difference helpers shared by the grid code."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def staggered_theta(n: int):
    """Polar nodes ``(j + 1/2) pi / n``; no node sits on a pole."""
    return (np.arange(n) + 0.5) * np.pi / n


@lru_cache(maxsize=None)
def _fejer(n: int):
    theta = staggered_theta(n)
    l = np.arange(1, n // 2 + 1)
    series = np.cos(2 * np.outer(theta, l)) / (4 * l**2 - 1)
    w = (2.0 / n) * (1.0 - 2.0 * series.sum(axis=1))
    w.setflags(write=False)
    return w


def fejer_weights(n: int):
    """Fejer's first rule: ``int_{-1}^{1} g(x) dx ~ sum w_j g(cos theta_j)``."""
    return _fejer(n)


def sphere_rule(n_theta: int, n_phi: int):
    """Tensor rule on the unit sphere; weights sum to ``4 pi``."""
    theta = staggered_theta(n_theta)
    phi = np.arange(n_phi) * (2 * np.pi / n_phi)
    w = np.outer(fejer_weights(n_theta), np.full(n_phi, 2 * np.pi / n_phi))
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    return th, ph, w


def fd_weights(offsets, deriv: int = 1):
    """Finite-difference weights at 0 for samples at ``offsets`` (Fornberg)."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    c = np.zeros((n, deriv + 1))
    c1 = 1.0
    c4 = x[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, deriv)
        c2 = 1.0
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, deriv]


def lagrange_weights(t, n_points: int = 4):
    """Weights of the ``n_points`` Lagrange interpolant at local coordinate ``t``.

    Nodes are at ``0, 1, ..., n_points - 1``; ``t`` may be an array.
    """
    t = np.asarray(t, dtype=float)
    nodes = np.arange(n_points, dtype=float)
    w = np.ones(t.shape + (n_points,))
    for a in range(n_points):
        for b in range(n_points):
            if a != b:
                w[..., a] *= (t - nodes[b]) / (nodes[a] - nodes[b])
    return w


GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
TRIANGLE3 = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
