"""Dense matrices of the lattice fractional Laplacian restricted to a node set.

The discrete energy is

    E(v) = (c/2) sum_{i != j} (v_i - v_j)^2 W_{i-j} h^N + self-cell terms,

summed over the whole lattice with v = 0 off the node set, so the row sums of
the restricted matrix carry the exterior (zero extension) exactly.  A
*mapped* assembly discretizes the same energy for the image Phi(Omega) by
pulling it back to the reference lattice: pair weights are multiplied by
J_i J_j (|x_i - x_j| / |Phi x_i - Phi x_j|)^(N+2s) and the part of space
outside the mapped grid box enters through a boundary integral.  In two
dimensions pairs within ``MAPPED_NEAR`` cells and the self cell use cell
integrals of the kernel under the local Jacobian, since the ratio rule alone
is biased under anisotropic maps.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .grid import Lattice
from .kernel import (FracOrder, exterior_total, normalization_constant,
                     self_cell_moment, weight_table)

MAPPED_NEAR = 2
_GX, _GW = np.polynomial.legendre.leggauss(6)
_PX, _PW = np.polynomial.legendre.leggauss(16)


@njit(cache=True)
def _aniso_cell(G00, G01, G10, G11, c1, c2, expo, gx, gw):
    # integral of |G w|^-expo over the unit cell centred at (c1, c2)
    sub = 4
    hs = 1.0 / sub
    acc = 0.0
    for p in range(sub):
        for q in range(sub):
            x0 = c1 - 0.5 + p * hs
            y0 = c2 - 0.5 + q * hs
            for u in range(gx.size):
                x = x0 + hs * (gx[u] + 1) / 2
                for v in range(gx.size):
                    y = y0 + hs * (gx[v] + 1) / 2
                    z1 = G00 * x + G01 * y
                    z2 = G10 * x + G11 * y
                    acc += gw[u] * gw[v] * (z1 * z1 + z2 * z2) ** (-expo / 2)
    return acc * hs * hs / 4


@njit(cache=True)
def _self_tensor(G00, G01, G10, G11, expo, px, pw):
    # int over the unit cell of w w^T |G w|^-expo, via octant polar quadrature
    T = np.zeros(3)
    q = 4.0 - expo
    for k in range(8):
        a = k * math.pi / 4
        for u in range(px.size):
            th = a + math.pi / 8 * (px[u] + 1)
            c = math.cos(th)
            sn = math.sin(th)
            r = 0.5 / max(abs(c), abs(sn))
            z1 = G00 * c + G01 * sn
            z2 = G10 * c + G11 * sn
            f = pw[u] * math.pi / 8 * (z1 * z1 + z2 * z2) ** (-expo / 2) * r**q / q
            T[0] += f * c * c
            T[1] += f * c * sn
            T[2] += f * sn * sn
    return T


@njit(cache=True)
def _fill_plain(I, W, K1, K2, nnw, dval, A):
    m = I.shape[0]
    for a in range(m):
        A[a, a] = dval
        for b in range(a + 1, m):
            d1 = I[b, 0] - I[a, 0]
            d2 = I[b, 1] - I[a, 1]
            w = W[d1 + K1, d2 + K2]
            if abs(d1) + abs(d2) == 1:
                w += nnw
            A[a, b] = -w
            A[b, a] = -w


@njit(cache=True)
def _fill_mapped(Iall, Q, J, Gall, omega, pos, W, K1, K2, h, expo, nnw, near, A, diag,
                 gx, gw):
    m = omega.shape[0]
    hs = h ** (2.0 - expo)
    nbox = Iall.shape[0]
    for a in range(m):
        i = omega[a]
        acc = 0.0
        for j in range(nbox):
            if j == i:
                continue
            d1 = Iall[j, 0] - Iall[i, 0]
            d2 = Iall[j, 1] - Iall[i, 1]
            r0 = h * math.sqrt(d1 * d1 + d2 * d2)
            q1 = Q[j, 0] - Q[i, 0]
            q2 = Q[j, 1] - Q[i, 1]
            r1 = math.sqrt(q1 * q1 + q2 * q2)
            if max(abs(d1), abs(d2)) <= near:
                w = J[i] * J[j] * hs * _aniso_cell(
                    0.5 * (Gall[i, 0, 0] + Gall[j, 0, 0]), 0.5 * (Gall[i, 0, 1] + Gall[j, 0, 1]),
                    0.5 * (Gall[i, 1, 0] + Gall[j, 1, 0]), 0.5 * (Gall[i, 1, 1] + Gall[j, 1, 1]),
                    d1, d2, expo, gx, gw)
            else:
                rho = J[i] * J[j] * (r0 / r1) ** expo
                w = W[d1 + K1, d2 + K2]
                if abs(d1) + abs(d2) == 1:
                    w += nnw
                w *= rho
            acc += w
            b = pos[j]
            if b >= 0:
                A[a, b] = -w
        diag[a] = acc


@njit(cache=True)
def _add_self_cells(Iall, J, Gall, omega, pos, dims2, h, expo, A, px, pw):
    # (1/8) sum over quadrants of g^T T g with one-sided gradients g
    scale = h ** (4.0 - expo) / (h * h)
    D = np.zeros((2, 3))
    idx = np.empty(3, dtype=np.int64)
    for i in range(Iall.shape[0]):
        i1 = Iall[i, 0]
        i2 = Iall[i, 1]
        a = pos[i]
        if a < 0:
            # exterior cells only matter next to the node set
            hit = False
            for e1, e2 in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                n1 = i1 + e1
                n2 = i2 + e2
                if 0 <= n1 < dims2[0] and 0 <= n2 < dims2[1] and pos[n1 * dims2[1] + n2] >= 0:
                    hit = True
            if not hit:
                continue
        G = Gall[i]
        T3 = _self_tensor(G[0, 0], G[0, 1], G[1, 0], G[1, 1], expo, px, pw)
        f = J[i] * J[i] * scale / 8.0
        T00 = T3[0] * f
        T01 = T3[1] * f
        T11 = T3[2] * f
        for s1 in (-1, 1):
            for s2 in (-1, 1):
                idx[0] = a
                n1 = i1 + s1
                n2 = i2 + s2
                idx[1] = -1
                idx[2] = -1
                if 0 <= n1 < dims2[0]:
                    idx[1] = pos[n1 * dims2[1] + i2]
                if 0 <= n2 < dims2[1]:
                    idx[2] = pos[i1 * dims2[1] + n2]
                D[0, 0] = -s1
                D[0, 1] = s1
                D[0, 2] = 0.0
                D[1, 0] = -s2
                D[1, 1] = 0.0
                D[1, 2] = s2
                for u in range(3):
                    if idx[u] < 0:
                        continue
                    for v in range(3):
                        if idx[v] < 0:
                            continue
                        A[idx[u], idx[v]] += (D[0, u] * (T00 * D[0, v] + T01 * D[1, v])
                                              + D[1, u] * (T01 * D[0, v] + T11 * D[1, v]))


@njit(cache=True)
def _box_tail(Y, Z, NW, two_s, expo):
    m = Y.shape[0]
    out = np.zeros(m)
    for a in range(m):
        acc = 0.0
        for b in range(Z.shape[0]):
            z1 = Z[b, 0] - Y[a, 0]
            z2 = Z[b, 1] - Y[a, 1]
            r = math.sqrt(z1 * z1 + z2 * z2)
            acc += (z1 * NW[b, 0] + z2 * NW[b, 1]) / r**expo
        out[a] = acc / two_s
    return out


def _pad2(I):
    I = np.asarray(I, dtype=np.int64)
    if I.shape[1] == 1:
        I = np.concatenate([I, np.zeros_like(I)], axis=1)
    return np.ascontiguousarray(I)


def _table2(o, lat):
    W = weight_table(o, lat.h, lat.dims)
    if W.ndim == 1:
        W = W[:, None]
    return np.ascontiguousarray(W), (W.shape[0] - 1) // 2, (W.shape[1] - 1) // 2


def restricted_matrix(o: FracOrder, lat: Lattice, mask: np.ndarray) -> np.ndarray:
    """Matrix of (-Delta)^s on the nodes where ``mask`` is true (zero elsewhere)."""
    I = _pad2(lat.indices()[np.asarray(mask).ravel()])
    W, K1, K2 = _table2(o, lat)
    h = lat.h
    m2 = self_cell_moment(o, h)
    nnw = m2 / (2 * h * h)
    dval = exterior_total(o, h) + 2 * o.N * nnw
    A = np.empty((I.shape[0], I.shape[0]))
    _fill_plain(I, W, K1, K2, nnw, dval, A)
    A *= normalization_constant(o)
    return A


def _mapped_box_boundary(lat: Lattice, mapping, per_cell: int = 6):
    """Quadrature nodes and (outward normal x weight) on the mapped grid box."""
    lo, hi = lat.box()
    gx, gw = np.polynomial.legendre.leggauss(per_cell)
    corners = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1]), (lo[0], lo[1])]
    pts, tan, wts = [], [], []
    for k in range(4):
        p0 = np.asarray(corners[k])
        p1 = np.asarray(corners[k + 1])
        npan = max(4, int(round(np.linalg.norm(p1 - p0) / lat.h)))
        e = np.linspace(0.0, 1.0, npan + 1)
        sg = (e[:-1, None] + (e[1:, None] - e[:-1, None]) * (gx[None, :] + 1) / 2).ravel()
        pts.append(p0 + (p1 - p0) * sg[:, None])
        tan.append(np.broadcast_to(p1 - p0, (sg.size, 2)))
        wts.append(np.tile(gw / (2 * npan), npan))
    P = np.vstack(pts)
    T = np.vstack(tan)
    w = np.concatenate(wts)
    Z = mapping(P)
    Jm = mapping.jacobian(P)
    qt = np.einsum("nij,nj->ni", Jm, T)
    NW = np.stack([qt[:, 1], -qt[:, 0]], axis=1) * w[:, None]
    return np.ascontiguousarray(Z), np.ascontiguousarray(NW)


def mapped_matrix(o: FracOrder, lat: Lattice, mask: np.ndarray, mapping):
    """Pulled-back matrix and mass weights for the image of the masked nodes under ``mapping``.

    ``mapping(P)`` returns image points; ``mapping.jacobian(P)`` the (n, N, N)
    derivative.  Returns ``(A, mass)`` with ``mass_i = h^N det DPhi(x_i)``.
    """
    P = lat.points()
    mask = np.asarray(mask).ravel()
    omega = np.flatnonzero(mask).astype(np.int64)
    pos = -np.ones(lat.size, dtype=np.int64)
    pos[omega] = np.arange(omega.size)
    Q = np.asarray(mapping(P), float)
    Gall = np.asarray(mapping.jacobian(P), float)
    J = np.linalg.det(Gall) if lat.ndim == 2 else Gall[:, 0, 0]
    if np.any(J <= 0):
        raise ValueError("mapping is not orientation preserving on the grid")
    W, K1, K2 = _table2(o, lat)
    h = lat.h
    expo = o.exponent
    two_d = lat.ndim == 2
    nnw = 0.0 if two_d else self_cell_moment(o, h) / (2 * h * h)
    G2 = np.ascontiguousarray(Gall) if two_d else np.zeros((lat.size, 2, 2))
    m = omega.size
    A = np.zeros((m, m))
    diag = np.empty(m)
    Iall = _pad2(lat.indices())
    Q2 = _pad2_float(Q)
    _fill_mapped(Iall, Q2, np.ascontiguousarray(J), G2, omega, pos, W, K1, K2, h, expo, nnw,
                 MAPPED_NEAR if two_d else -1, A, diag, _GX, _GW)
    Y = Q[omega]
    if lat.ndim == 1:
        lo, hi = lat.box()
        ends = mapping(np.array([[lo[0]], [hi[0]]]))[:, 0]
        y = Y[:, 0]
        tail = ((y - ends[0]) ** (-2 * o.s) + (ends[1] - y) ** (-2 * o.s)) / (2 * o.s)
    else:
        Z, NW = _mapped_box_boundary(lat, mapping)
        tail = _box_tail(np.ascontiguousarray(Y), Z, NW, 2 * o.s, expo)
    diag += J[omega] * tail
    A[np.diag_indices(m)] = diag
    if two_d:
        _add_self_cells(Iall, np.ascontiguousarray(J), G2, omega, pos,
                        np.asarray(lat.dims, dtype=np.int64), h, expo, A, _PX, _PW)
    A *= normalization_constant(o)
    return A, J[omega] * h**lat.ndim


def _pad2_float(Q):
    Q = np.asarray(Q, float)
    if Q.shape[1] == 1:
        Q = np.concatenate([Q, np.zeros_like(Q)], axis=1)
    return np.ascontiguousarray(Q)


class IdentityMap:
    def __call__(self, P):
        return np.asarray(P, float)

    def jacobian(self, P):
        P = np.asarray(P)
        return np.broadcast_to(np.eye(P.shape[1]), (P.shape[0], P.shape[1], P.shape[1])).copy()


class FlowMap:
    """x -> x + tau X(x) for a vector field with ``__call__`` and ``jacobian``."""

    def __init__(self, field, tau: float):
        self.field = field
        self.tau = float(tau)

    def __call__(self, P):
        P = np.asarray(P, float)
        return P + self.tau * self.field(P)

    def jacobian(self, P):
        P = np.asarray(P, float)
        n = P.shape[1]
        return np.eye(n)[None] + self.tau * self.field.jacobian(P)
