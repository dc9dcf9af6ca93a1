"""Finite-element operators on an :class:`AnnularGrid`.

Trilinear hexahedra fill the structured part of the grid and prismatic
wedges close it at the two pole columns.  All element integrals use the
Gauss points precomputed by the grid, so assembling a weighted stiffness
matrix is a single matrix product followed by a ``bincount``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from confcap.grid import AnnularGrid


class Assembler:
    """Sparse stiffness assembly with a fixed CSR pattern."""

    def __init__(self, grid: AnnularGrid):
        self.grid = grid
        n = grid.n_nodes
        hn, wn = grid.hex_nodes, grid.wedge_nodes
        rows = np.concatenate([np.repeat(hn, 8, axis=1).ravel(), np.repeat(wn, 6, axis=1).ravel()])
        cols = np.concatenate([np.tile(hn, (1, 8)).ravel(), np.tile(wn, (1, 6)).ravel()])
        keys = rows.astype(np.int64) * n + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self.nnz = len(uniq)
        self._indices = (uniq % n).astype(np.int32)
        self._indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)
        self._keys = uniq
        nh = hn.size * 8
        self._pos_hex = inv[:nh].reshape(len(hn), 64)
        self._pos_wedge = inv[nh:].reshape(len(wn), 36)
        # wedge element table: G^T G per Gauss point, flattened
        G = grid.wedge_G
        self._wedge_T = np.einsum("eqca,eqcb->eqab", G, G).reshape(len(wn), 6, 36)

    def _matrix(self, data):
        n = self.grid.n_nodes
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(n, n))

    def stiffness(self, sigma_hex=None, sigma_wedge=None):
        """Matrix of ``int sigma grad(phi_a) . grad(phi_b)``; sigma defaults to 1."""
        g = self.grid
        wh = g.hex_wdet if sigma_hex is None else g.hex_wdet * sigma_hex
        ww = g.wedge_wdet if sigma_wedge is None else g.wedge_wdet * sigma_wedge
        kh = (wh[:, :, None, None] * g.hex_M).reshape(len(wh), 72) @ g._hex_T
        kw = np.einsum("eq,eqk->ek", ww, self._wedge_T)
        data = np.bincount(self._pos_hex.ravel(), weights=kh.ravel(), minlength=self.nnz)
        data += np.bincount(self._pos_wedge.ravel(), weights=kw.ravel(), minlength=self.nnz)
        return self._matrix(data)

    def face_mass(self, i_face: int, coefficient=None):
        """Matrix of ``int_S c phi_a phi_b da`` over the shell ``s = s_i``.

        ``coefficient`` maps Gauss-point positions ``(..., 3)`` to values.
        """
        n = self.grid.n_nodes
        rows, cols, vals = [], [], []
        for conn, N, pts, w in self.grid.face_elements(i_face):
            c = w if coefficient is None else w * coefficient(pts)
            loc = np.einsum("eq,qa,qb->eab", c, N, N)
            k = conn.shape[1]
            rows.append(np.repeat(conn, k, axis=1).ravel())
            cols.append(np.tile(conn, (1, k)).ravel())
            vals.append(loc.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def face_load(self, i_face: int, coefficient=None):
        """Vector of ``int_S c phi_a da`` over the shell ``s = s_i``."""
        out = np.zeros(self.grid.n_nodes)
        for conn, N, pts, w in self.grid.face_elements(i_face):
            c = w if coefficient is None else w * coefficient(pts)
            np.add.at(out, conn.ravel(), (c @ N).ravel())
        return out


class GaussGradients:
    """Gauss-point gradients of a nodal field, kept for line searches."""

    def __init__(self, grid: AnnularGrid, u):
        u = np.asarray(u, dtype=float)
        self.grid = grid
        # hex: keep reference-space gradients, lengths through the metric M
        self.hex = np.einsum("qca,ea->eqc", grid.hex_dN, u[grid.hex_nodes])
        self.wedge = np.einsum("eqca,ea->eqc", grid.wedge_G, u[grid.wedge_nodes])

    def dot(self, other: "GaussGradients"):
        g = self.grid
        h = np.einsum("eqc,eqcd,eqd->eq", self.hex, g.hex_M, other.hex)
        w = np.sum(self.wedge * other.wedge, axis=-1)
        return h, w


def grad_sq(grid: AnnularGrid, u):
    gg = GaussGradients(grid, u)
    return gg.dot(gg)


def regularized_energy(grid: AnnularGrid, u, eps: float) -> float:
    """``(1/3) int (|grad u|^2 + eps^2)^(3/2)``."""
    h, w = grad_sq(grid, u)
    return grid.gauss_integral((h + eps * eps) ** 1.5, (w + eps * eps) ** 1.5) / 3.0


def p_energy(grid: AnnularGrid, u) -> float:
    """``int |grad u|^3`` of the finite-element interpolant."""
    h, w = grad_sq(grid, u)
    return grid.gauss_integral(h**1.5, w**1.5)


class LineEnergy:
    """Energy restricted to the line ``u + tau d`` (quadratic gradient algebra)."""

    def __init__(self, grid: AnnularGrid, u, d, eps: float):
        gu, gd = GaussGradients(grid, u), GaussGradients(grid, d)
        self.grid = grid
        self.eps2 = eps * eps
        self.uu = gu.dot(gu)
        self.ud = gu.dot(gd)
        self.dd = gd.dot(gd)

    def _sq(self, tau):
        return tuple(a + 2 * tau * b + tau * tau * c for a, b, c in zip(self.uu, self.ud, self.dd))

    def value(self, tau: float) -> float:
        q = self._sq(tau)
        return self.grid.gauss_integral(*((x + self.eps2) ** 1.5 / 3.0 for x in q))

    def delta(self, tau: float) -> float:
        """``value(tau) - value(0)`` evaluated without cancellation."""
        parts = []
        for a2, b, c in zip(self.uu, self.ud, self.dd):
            dq = tau * (2 * b + tau * c)
            a = np.sqrt(a2 + self.eps2)
            bb = np.sqrt(a2 + dq + self.eps2)
            parts.append(dq * (a * a + a * bb + bb * bb) / (a + bb) / 3.0)
        return self.grid.gauss_integral(*parts)

    def derivatives(self, tau: float):
        q = self._sq(tau)
        sig = [np.sqrt(x + self.eps2) for x in q]
        lin = [b + tau * c for b, c in zip(self.ud, self.dd)]
        d1 = self.grid.gauss_integral(*(s * l for s, l in zip(sig, lin)))
        d2 = self.grid.gauss_integral(*(s * c + l * l / s for s, l, c in zip(sig, lin, self.dd)))
        return d1, d2
