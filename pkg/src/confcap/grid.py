"""Boundary-fitted, logarithmically graded grid on the truncated exterior.

Nodes sit at ``x = c + r w(theta, phi)`` with ``r = rho(w)^(1-s) R_out^s``,
``s`` uniform in ``[0, 1]``, staggered polar angles and periodic azimuth.
Two pole columns close the grid at ``theta = 0, pi``; around them the chart
``(s, a, b) = (s, theta cos phi, theta sin phi)`` is used.

The node array is laid out as the structured block ``(ns, nt, nph)`` in C
order followed by ``ns`` north-pole nodes and ``ns`` south-pole nodes.
"""

from __future__ import annotations

import numpy as np

from confcap.domain import ImplicitDomain, angles, directions
from confcap.quadrature import (
    GAUSS2,
    TRIANGLE3,
    fd_weights,
    fejer_weights,
    lagrange_weights,
    staggered_theta,
)


class GridError(ValueError):
    pass


def _omega_derivs(theta, phi):
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    omega = np.stack([st * cp, st * sp, ct], axis=-1)
    d_th = np.stack([ct * cp, ct * sp, -st], axis=-1)
    d_ph = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=-1)
    return omega, d_th, d_ph


def polar_direction(a, b, sign):
    t = np.sqrt(a * a + b * b)
    sinc = np.where(t > 1e-12, np.sin(t) / np.where(t > 1e-12, t, 1.0), 1.0 - t * t / 6.0)
    return np.stack([a * sinc, b * sinc, sign * np.cos(t)], axis=-1)


class AnnularGrid:
    """Immutable mapped grid; build with :func:`build_grid`."""

    def __init__(self, domain: ImplicitDomain, r_out: float, shape):
        ns, nt, nph = (int(n) for n in shape)
        self.domain = domain
        self.r_out = float(r_out)
        self.shape = (ns, nt, nph)
        self.ns, self.nt, self.nph = ns, nt, nph
        self.s = np.linspace(0.0, 1.0, ns)
        self.theta = staggered_theta(nt)
        self.phi = np.arange(nph) * (2 * np.pi / nph)
        self.ds = 1.0 / (ns - 1)
        self.dth = np.pi / nt
        self.dph = 2 * np.pi / nph
        self.center = domain.center
        self.n_struct = ns * nt * nph
        self.n_nodes = self.n_struct + 2 * ns
        self._build_nodes()
        self._build_hexes()
        self._build_wedges()
        self._build_weights()

    # -- indexing ---------------------------------------------------------

    def index(self, i, j, k):
        return (np.asarray(i) * self.nt + np.asarray(j)) * self.nph + np.mod(k, self.nph)

    def north(self, i):
        return self.n_struct + np.asarray(i)

    def south(self, i):
        return self.n_struct + self.ns + np.asarray(i)

    def structured(self, values):
        """View the structured block of a nodal array as ``(ns, nt, nph, ...)``."""
        values = np.asarray(values)
        return values[: self.n_struct].reshape(self.shape + values.shape[1:])

    def node_ijk(self):
        """Integer labels per node; poles get ``j = -1`` (north) and ``j = nt`` (south)."""
        i, j, k = np.meshgrid(np.arange(self.ns), np.arange(self.nt), np.arange(self.nph), indexing="ij")
        ii = np.concatenate([i.ravel(), np.arange(self.ns), np.arange(self.ns)])
        jj = np.concatenate([j.ravel(), np.full(self.ns, -1), np.full(self.ns, self.nt)])
        kk = np.concatenate([k.ravel(), np.zeros(self.ns, int), np.zeros(self.ns, int)])
        return ii, jj, kk

    # -- geometry of the map ------------------------------------------------

    def _radial(self, rho, s):
        return rho ** (1.0 - s) * self.r_out**s

    def map_structured(self, s, theta, phi):
        """Positions and chart Jacobians ``dx/d(s, theta, phi)``; arrays broadcast."""
        rho, r_th, r_ph = self.domain.radial_graph.angular_derivatives(theta, phi)
        omega, o_th, o_ph = _omega_derivs(theta, phi)
        s = np.asarray(s, dtype=float)
        r = self._radial(rho, s)
        L = np.log(self.r_out / rho)
        x = self.center + r[..., None] * omega
        jac = np.empty(np.shape(r) + (3, 3))
        jac[..., :, 0] = (r * L)[..., None] * omega
        jac[..., :, 1] = (r * (1 - s) * r_th / rho)[..., None] * omega + r[..., None] * o_th
        jac[..., :, 2] = (r * (1 - s) * r_ph / rho)[..., None] * omega + r[..., None] * o_ph
        return x, jac

    def map_polar(self, s, a, b, sign, h=1e-6):
        """Positions and Jacobians ``dx/d(s, a, b)`` in a pole chart."""
        s, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s, a, b)))
        graph = self.domain.radial_graph

        def pos(aa, bb):
            om = polar_direction(aa, bb, sign)
            rho = graph(om)
            return self.center + self._radial(rho, s)[..., None] * om, rho, om

        x, rho, om = pos(a, b)
        jac = np.empty(s.shape + (3, 3))
        jac[..., :, 0] = (self._radial(rho, s) * np.log(self.r_out / rho))[..., None] * om
        jac[..., :, 1] = (pos(a + h, b)[0] - pos(a - h, b)[0]) / (2 * h)
        jac[..., :, 2] = (pos(a, b + h)[0] - pos(a, b - h)[0]) / (2 * h)
        return x, jac

    def _build_nodes(self):
        S, TH, PH = np.meshgrid(self.s, self.theta, self.phi, indexing="ij")
        x, jac = self.map_structured(S, TH, PH)
        xs, js = [x.reshape(-1, 3)], [jac.reshape(-1, 3, 3)]
        for sign in (1.0, -1.0):
            xp, jp = self.map_polar(self.s, 0.0, 0.0, sign)
            xs.append(xp)
            js.append(jp)
        self.points = np.concatenate(xs)
        self.jac = np.concatenate(js)
        det = np.linalg.det(self.jac)
        # the south pole chart (a, b) is left-handed, only non-degeneracy matters there
        det[self.n_struct + self.ns :] *= -1.0
        if np.any(~(det > 0)):
            bad = np.argmin(det)
            d = self.points[bad] - self.center
            raise GridError(
                f"non-positive Jacobian (rays cross) near direction {np.round(d / np.linalg.norm(d), 4).tolist()}"
            )
        self.jinv_t = np.linalg.inv(self.jac).transpose(0, 2, 1)
        self.s_node = np.concatenate([S.ravel(), self.s, self.s])
        d = self.points - self.center
        self.radius = np.linalg.norm(d, axis=1)
        self.omega = d / self.radius[:, None]
        self.inner = self.s_node == 0.0
        self.outer = self.s_node == 1.0
        self.boundary = self.inner | self.outer

    # -- finite elements: hexahedra between theta rows, wedges at the poles --

    def _build_hexes(self):
        ns, nt, nph = self.shape
        i, j, k = np.meshgrid(np.arange(ns - 1), np.arange(nt - 1), np.arange(nph), indexing="ij")
        conn = []
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    conn.append(self.index(i + di, j + dj, k + dk).ravel())
        self.hex_nodes = np.stack(conn, axis=1)
        g = GAUSS2
        # reference values and derivatives of trilinear shape functions at Gauss points
        qpts = np.array([(g[a], g[b], g[c]) for a in (0, 1) for b in (0, 1) for c in (0, 1)])
        bits = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])
        N = np.ones((8, 8))
        dN = np.ones((8, 3, 8))
        for q, xi in enumerate(qpts):
            for a, bt in enumerate(bits):
                lin = np.where(bt == 1, xi, 1 - xi)
                sgn = np.where(bt == 1, 1.0, -1.0)
                N[q, a] = np.prod(lin)
                for c in range(3):
                    dN[q, c, a] = sgn[c] * np.prod(np.delete(lin, c))
        self.hex_N = N
        self.hex_dN = dN
        # angular quantities at the angular Gauss points, then broadcast along s
        th = (self.theta[:-1, None] + g[None, :] * self.dth)  # (nt-1, 2)
        ph = (self.phi[:, None] + g[None, :] * self.dph)  # (nph, 2)
        sg = (self.s[:-1, None] + g[None, :] * self.ds)  # (ns-1, 2)
        S = sg[:, None, None, :, None, None]
        TH = th[None, :, None, None, :, None]
        PH = ph[None, None, :, None, None, :]
        x, jac = self.map_structured(S, TH, PH)  # (ns-1, nt-1, nph, 2, 2, 2, ...)
        x = np.broadcast_to(x, jac.shape[:-1])
        jac = jac * np.array([self.ds, self.dth, self.dph])
        jac = jac.reshape(-1, 8, 3, 3)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            raise GridError("non-positive Jacobian inside a grid cell")
        jinv = np.linalg.inv(jac)
        self.hex_M = jinv @ jinv.transpose(0, 1, 3, 2)
        self.hex_wdet = det / 8.0
        self.hex_points = x.reshape(-1, 8, 3)
        # table T[q, c, d, a, b] = dN[q, c, a] dN[q, d, b]
        self._hex_T = np.einsum("qca,qdb->qcdab", dN, dN).reshape(8 * 9, 64)

    def _build_wedges(self):
        ns, nt, nph = self.shape
        t0 = self.theta[0]
        i, k = np.meshgrid(np.arange(ns - 1), np.arange(nph), indexing="ij")
        i, k = i.ravel(), k.ravel()
        g = GAUSS2
        tri = TRIANGLE3
        # reference shape functions at 6 points: triangle (alpha, beta) x zeta
        qref = [(z, al, be) for z in g for (al, be) in tri]
        N = np.zeros((6, 6))
        dN = np.zeros((6, 3, 6))
        for q, (z, al, be) in enumerate(qref):
            lam = np.array([1 - al - be, al, be])
            dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
            for layer, (zv, dz) in enumerate(((1 - z, -1.0), (z, 1.0))):
                for v in range(3):
                    a = layer * 3 + v
                    N[q, a] = lam[v] * zv
                    dN[q, 0, a] = lam[v] * dz
                    dN[q, 1, a] = dlam[v, 0] * zv
                    dN[q, 2, a] = dlam[v, 1] * zv
        self.wedge_N = N
        conns, grads, wdets, pts = [], [], [], []
        for sign, ring_j, pole in ((1.0, 0, self.north), (-1.0, nt - 1, self.south)):
            conn = np.stack(
                [
                    pole(i),
                    self.index(i, ring_j, k),
                    self.index(i, ring_j, k + 1),
                    pole(i + 1),
                    self.index(i + 1, ring_j, k),
                    self.index(i + 1, ring_j, k + 1),
                ],
                axis=1,
            )
            A = t0 * np.stack([np.cos(self.phi[k]), np.sin(self.phi[k])], axis=1)
            B = t0 * np.stack([np.cos(self.phi[(k + 1) % nph]), np.sin(self.phi[(k + 1) % nph])], axis=1)
            ne = len(i)
            T = np.zeros((ne, 3, 3))
            T[:, 0, 0] = self.ds
            T[:, 1, 1], T[:, 2, 1] = A[:, 0], A[:, 1]
            T[:, 1, 2], T[:, 2, 2] = B[:, 0], B[:, 1]
            G = np.empty((ne, 6, 3, 6))
            W = np.empty((ne, 6))
            P = np.empty((ne, 6, 3))
            for q, (z, al, be) in enumerate(qref):
                sq = self.s[i] + z * self.ds
                ab = al * A + be * B
                x, jc = self.map_polar(sq, ab[:, 0], ab[:, 1], sign)
                J = jc @ T
                det = np.linalg.det(J)
                G[:, q] = np.linalg.solve(J.transpose(0, 2, 1), np.broadcast_to(dN[q], (ne, 3, 6)))
                W[:, q] = np.abs(det) / 12.0
                P[:, q] = x
            conns.append(conn)
            grads.append(G)
            wdets.append(W)
            pts.append(P)
        self.wedge_nodes = np.concatenate(conns)
        self.wedge_G = np.concatenate(grads)
        self.wedge_wdet = np.concatenate(wdets)
        self.wedge_points = np.concatenate(pts)

    def _build_weights(self):
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.hex_nodes.ravel(), (self.hex_wdet @ self.hex_N).ravel())
        np.add.at(w, self.wedge_nodes.ravel(), (self.wedge_wdet @ self.wedge_N).ravel())
        self.weights = w

    @property
    def total_volume(self) -> float:
        return float(self.weights.sum())

    # -- element-level gradients ---------------------------------------------

    def element_grad_sq(self, u):
        """Squared gradient norm at Gauss points: ``(hex (nh, 8), wedge (nw, 6))``."""
        u = np.asarray(u, dtype=float)
        gxi = np.einsum("qca,ea->eqc", self.hex_dN, u[self.hex_nodes])
        hex_sq = np.einsum("eqc,eqcd,eqd->eq", gxi, self.hex_M, gxi)
        gw = np.einsum("eqca,ea->eqc", self.wedge_G, u[self.wedge_nodes])
        wedge_sq = np.sum(gw * gw, axis=-1)
        return hex_sq, wedge_sq

    def gauss_integral(self, hex_vals, wedge_vals) -> float:
        return float(np.sum(self.hex_wdet * hex_vals) + np.sum(self.wedge_wdet * wedge_vals))

    # -- nodal finite differences ---------------------------------------------

    def _s_derivative(self, col, order):
        """Derivative along axis 0 of ``col`` (ns, ...) in units of s."""
        n = col.shape[0]
        out = np.empty_like(col)
        if order == 2:
            out[1:-1] = (col[2:] - col[:-2]) / 2.0
            out[0] = (-3 * col[0] + 4 * col[1] - col[2]) / 2.0
            out[-1] = (3 * col[-1] - 4 * col[-2] + col[-3]) / 2.0
        else:
            w = fd_weights([-2, -1, 0, 1, 2])
            out[2:-2] = sum(w[m] * col[m : n - 4 + m] for m in range(5))
            for i, offs in ((0, range(0, 5)), (1, range(-1, 4)), (n - 2, range(-3, 2)), (n - 1, range(-4, 1))):
                offs = list(offs)
                w = fd_weights(offs)
                out[i] = sum(wm * col[i + o] for wm, o in zip(w, offs))
        return out / self.ds

    def _theta_extended(self, block, ghosts):
        """Pad the theta axis with ghost rows taken across the poles."""
        half = self.nph // 2
        anti = np.roll(block, -half, axis=2)
        top = anti[:, ghosts - 1 :: -1]  # rows j = ghosts-1..0 give theta = -theta_{g-1}..-theta_0
        bottom = anti[:, : -ghosts - 1 : -1]
        return np.concatenate([top, block, bottom], axis=1)

    def chart_derivatives(self, values, order: int = 2):
        """Derivatives with respect to the chart coordinates at every node.

        ``values`` has shape ``(N,)`` or ``(N, m)``; returns ``(N, 3[, m])``.
        """
        values = np.asarray(values, dtype=float)
        squeeze = values.ndim == 1
        if squeeze:
            values = values[:, None]
        m = values.shape[1]
        ns, nt, nph = self.shape
        block = values[: self.n_struct].reshape(ns, nt, nph, m)
        out = np.empty((self.n_nodes, 3, m))
        d_s = self._s_derivative(block, order)
        if order == 2:
            ext = self._theta_extended(block, 1)
            d_th = (ext[:, 2:] - ext[:, :-2]) / (2 * self.dth)
            d_ph = (np.roll(block, -1, axis=2) - np.roll(block, 1, axis=2)) / (2 * self.dph)
        else:
            w = fd_weights([-2, -1, 0, 1, 2])
            ext = self._theta_extended(block, 2)
            d_th = sum(w[a] * ext[:, a : a + nt] for a in range(5)) / self.dth
            d_ph = sum(w[a] * np.roll(block, 2 - a, axis=2) for a in range(5)) / self.dph
        out[: self.n_struct, 0] = d_s.reshape(-1, m)
        out[: self.n_struct, 1] = d_th.reshape(-1, m)
        out[: self.n_struct, 2] = d_ph.reshape(-1, m)
        q = nph // 4
        offs = [-1.5, -0.5, 0.5, 1.5] if order != 2 else [-0.5, 0.5]
        wp = fd_weights(offs) / self.dth
        rows_n = [1, 0, 0, 1] if order != 2 else [0, 0]
        for pole, rows in ((self.north, rows_n), (self.south, [nt - 1 - r for r in rows_n])):
            col = values[pole(np.arange(ns))]
            out[pole(np.arange(ns)), 0] = self._s_derivative(col, order)
            for axis, (kp, km) in ((1, (0, 2 * q)), (2, (q, 3 * q))):
                npts = len(offs)
                acc = 0.0
                for a in range(npts):
                    kk = km if offs[a] < 0 else kp
                    acc = acc + wp[a] * block[:, rows[a], kk]
                out[pole(np.arange(ns)), axis] = acc
        return out[..., 0] if squeeze else out

    def gradient(self, values, order: int = 2):
        """Cartesian gradient at every node; ``(N, 3)`` or ``(N, 3, m)``."""
        d = self.chart_derivatives(values, order)
        if d.ndim == 2:
            return np.einsum("nab,nb->na", self.jinv_t, d)
        return np.einsum("nab,nbm->nam", self.jinv_t, d)

    def gradient_at(self, values, node, order: int = 2):
        return self.gradient(values, order)[node]

    def hessian(self, values, order: int = 4):
        """Symmetrized Hessian by differentiating the nodal gradient again."""
        g = self.gradient(values, order)
        h = self.gradient(g, order)  # (N, 3 (deriv), 3 (component))
        return 0.5 * (h + h.transpose(0, 2, 1)), g

    # -- integrals ----------------------------------------------------------

    def volume_integral(self, values, region=None) -> float:
        """Lumped quadrature of a nodal field; ``region`` is a boolean mask or predicate."""
        values = np.broadcast_to(np.asarray(values, dtype=float), (self.n_nodes,))
        w = self.weights
        if region is not None:
            mask = region(self.points) if callable(region) else np.asarray(region, dtype=bool)
            w = w * mask
        return float(np.sum(w * values))

    def shell_rule(self, i: int):
        """Angular quadrature on the shell ``s = s_i`` for the structured nodes.

        Returns ``(weights (nt, nph), normals (nt, nph, 3), node indices)`` with
        ``sum(w * F)`` approximating the surface integral of ``F`` and
        outward unit normals.
        """
        idx = self.index(i, *np.meshgrid(np.arange(self.nt), np.arange(self.nph), indexing="ij"))
        jac = self.jac[idx]
        cross = np.cross(jac[..., :, 1], jac[..., :, 2])
        area = np.linalg.norm(cross, axis=-1)
        fw = fejer_weights(self.nt) / np.sin(self.theta)
        w = fw[:, None] * self.dph * area
        return w, cross / area[..., None], idx

    def shell_flux(self, vectors, i: int) -> float:
        w, nrm, idx = self.shell_rule(i)
        return float(np.sum(w * np.sum(np.asarray(vectors)[idx] * nrm, axis=-1)))

    def face_elements(self, i: int):
        """Gauss data for surface integrals over the shell ``s = s_i``.

        Returns a list of blocks ``(conn, N, points, weights)`` for the
        bilinear quads and the polar triangles.
        """
        nt, nph = self.nt, self.nph
        g = GAUSS2
        j, k = np.meshgrid(np.arange(nt - 1), np.arange(nph), indexing="ij")
        j, k = j.ravel(), k.ravel()
        conn = np.stack(
            [self.index(i, j, k), self.index(i, j, k + 1), self.index(i, j + 1, k), self.index(i, j + 1, k + 1)],
            axis=1,
        )
        qs = [(a, b) for a in g for b in g]
        N = np.array([[(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b] for a, b in qs])
        TH = self.theta[j][:, None] + np.array([a for a, _ in qs])[None] * self.dth
        PH = self.phi[k][:, None] + np.array([b for _, b in qs])[None] * self.dph
        x, jac = self.map_structured(self.s[i], TH, PH)
        area = np.linalg.norm(np.cross(jac[..., :, 1], jac[..., :, 2]), axis=-1) * self.dth * self.dph / 4.0
        blocks = [(conn, N, x, area)]
        t0 = self.theta[0]
        kk = np.arange(nph)
        A = t0 * np.stack([np.cos(self.phi), np.sin(self.phi)], axis=1)
        B = np.roll(A, -1, axis=0)
        Nt = np.array([[1 - al - be, al, be] for al, be in TRIANGLE3])
        for sign, ring_j, pole in ((1.0, 0, self.north), (-1.0, nt - 1, self.south)):
            tconn = np.stack([np.full(nph, pole(i)), self.index(i, ring_j, kk), self.index(i, ring_j, kk + 1)], axis=1)
            xs, ws = [], []
            detT = np.abs(A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0])
            for al, be in TRIANGLE3:
                ab = al * A + be * B
                x, jac = self.map_polar(self.s[i], ab[:, 0], ab[:, 1], sign)
                xs.append(x)
                ws.append(np.linalg.norm(np.cross(jac[..., :, 1], jac[..., :, 2]), axis=-1) * detT / 6.0)
            blocks.append((tconn, Nt, np.stack(xs, axis=1), np.stack(ws, axis=1)))
        return blocks

    # -- interpolation --------------------------------------------------------

    def locate(self, points):
        """Chart coordinates ``(s, theta, phi)`` of physical points."""
        d = np.asarray(points, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1)
        omega = d / r[..., None]
        theta, phi = angles(omega)
        rho = self.domain.rho(omega)
        s = np.log(r / rho) / np.log(self.r_out / rho)
        return s, theta, phi

    def interpolate(self, values, points):
        """Tensor cubic Lagrange interpolation of a nodal field at points."""
        values = np.asarray(values, dtype=float)
        ns, nt, nph = self.shape
        block = values[: self.n_struct].reshape((ns, nt, nph) + values.shape[1:])
        s, theta, phi = self.locate(points)
        fi = s / self.ds
        i0 = np.clip(np.floor(fi).astype(int) - 1, 0, ns - 4)
        wi = lagrange_weights(fi - i0)
        fj = theta / self.dth - 0.5
        j0 = np.floor(fj).astype(int) - 1
        wj = lagrange_weights(fj - j0)
        fk = phi / self.dph
        k0 = np.floor(fk).astype(int) - 1
        wk = lagrange_weights(fk - k0)
        out = 0.0
        for b in range(4):
            j = j0 + b
            flip = (j < 0) | (j >= nt)
            jj = np.where(j < 0, -1 - j, np.where(j >= nt, 2 * nt - 1 - j, j))
            for c in range(4):
                k = np.mod(k0 + c + np.where(flip, nph // 2, 0), nph)
                for a in range(4):
                    w = wi[..., a] * wj[..., b] * wk[..., c]
                    v = block[i0 + a, jj, k]
                    out = out + (w.reshape(w.shape + (1,) * (v.ndim - w.ndim))) * v
        return out

    # -- output ---------------------------------------------------------------

    def dump(self, path):
        """Write ``node i j k x y z w`` lines."""
        ii, jj, kk = self.node_ijk()
        with open(path, "w") as fh:
            for n in range(self.n_nodes):
                x, y, z = self.points[n]
                fh.write(f"node {ii[n]} {jj[n]} {kk[n]} {x:.12g} {y:.12g} {z:.12g} {self.weights[n]:.12g}\n")


def build_grid(domain: ImplicitDomain, r_out: float, resolution=(64, 24, 48), check_ratio: bool = True) -> AnnularGrid:
    """Build the truncated-exterior grid between the domain boundary and ``|x - c| = r_out``."""
    ns, nt, nph = (int(n) for n in resolution)
    if ns < 16 or nt < 8 or nph < 16:
        raise GridError(f"resolution {resolution} below the minimum (16, 8, 16)")
    if nph % 4:
        raise GridError("azimuthal node count must be a multiple of 4 (pole stencils)")
    if check_ratio and r_out < 4 * domain.bounding_radius:
        raise GridError(f"R_out={r_out:g} must be at least 4x the bounding radius {domain.bounding_radius:g}")
    theta = staggered_theta(max(nt, 32))
    phi = np.arange(2 * max(nt, 32)) * np.pi / max(nt, 32)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    rho = domain.rho(directions(th, ph))
    if np.max(rho) >= r_out:
        bad = np.unravel_index(np.argmax(rho), rho.shape)
        raise GridError(f"boundary reaches the truncation sphere near theta={th[bad]:.3f}, phi={ph[bad]:.3f}")
    return AnnularGrid(domain, r_out, (ns, nt, nph))
