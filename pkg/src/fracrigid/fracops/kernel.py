"""Lattice weights for the kernel |z|^(-N-2s) and its regularized variant.

Weights are exact integrals over lattice cells; for spacing h they scale
like h^(-2s) (singular kernel) so tables are built once at h = 1 and cached.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)

#: cells with |k|_inf <= NEAR_RADIUS get adaptive Gauss quadrature
NEAR_RADIUS = 16


@dataclass(frozen=True)
class FracOrder:
    """Order s of the operator and ambient dimension N."""

    s: float
    N: int = 1

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.N not in (1, 2):
            raise ValueError(f"only N = 1 or N = 2 supported, got {self.N}")

    @property
    def exponent(self) -> float:
        return self.N + 2.0 * self.s


def normalization_constant(o: FracOrder) -> float:
    """c_{N,s} = pi^(-N/2) s 4^s Gamma(N/2+s) / Gamma(1-s)."""
    N, s = o.N, o.s
    return math.pi ** (-N / 2) * s * 4.0**s * gamma(N / 2 + s) / gamma(1 - s)


def gamma_factor(s: float) -> float:
    """Gamma(1+s)^2, the boundary weight of the shape derivative."""
    return float(gamma(1.0 + s) ** 2)


def _cell_integral_2d(f, x0, y0, size, sub):
    hh = size / sub
    tot = 0.0
    for u in range(sub):
        for v in range(sub):
            xs = x0 + u * hh + hh * (_GL_X + 1) / 2
            ys = y0 + v * hh + hh * (_GL_X + 1) / 2
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            tot += np.sum(np.outer(_GL_W, _GL_W) * f(X, Y)) * hh * hh / 4
    return tot


@lru_cache(maxsize=32)
def _unit_table(s: float, N: int, K1: int, K2: int) -> np.ndarray:
    """W_k at h = 1 for |k_i| <= K_i, W_0 = 0."""
    a = N + 2 * s
    if N == 1:
        k = np.abs(np.arange(-K1, K1 + 1, dtype=float))
        W = np.zeros_like(k)
        nz = k > 0
        W[nz] = ((k[nz] - 0.5) ** (-2 * s) - (k[nz] + 0.5) ** (-2 * s)) / (2 * s)
        W.setflags(write=False)
        return W
    i = np.arange(-K1, K1 + 1, dtype=float)
    j = np.arange(-K2, K2 + 1, dtype=float)
    I, J = np.meshgrid(i, j, indexing="ij")
    r2 = I * I + J * J
    with np.errstate(divide="ignore"):
        # midpoint + fourth-order cell corrections for the far field
        W = r2 ** (-a / 2) * (1 + a * a / (24 * r2) + a * a * (a + 2) ** 2 / (1920 * r2 * r2))
    f = lambda X, Y: (X * X + Y * Y) ** (-a / 2)
    R = NEAR_RADIUS
    cache = {}
    for p in range(0, min(R, K1) + 1):
        for q in range(0, min(R, K2) + 1):
            if p == 0 and q == 0:
                continue
            key = (min(p, q), max(p, q))
            if key not in cache:
                sub = 4 if max(p, q) <= 2 else 2
                cache[key] = _cell_integral_2d(f, key[0] - 0.5, key[1] - 0.5, 1.0, sub)
            val = cache[key]
            for sp in {p, -p}:
                for sq in {q, -q}:
                    W[sp + K1, sq + K2] = val
    W[K1, K2] = 0.0
    W.setflags(write=False)
    return W


def weight_table(o: FracOrder, h: float, dims) -> np.ndarray:
    """Cell integrals of |z|^(-N-2s) for every lattice offset within ``dims``.

    Entry ``[k + dims - 1]`` is int_{cell k} |z|^(-N-2s) dz with the cell of
    offset k; the centre entry is zero.
    """
    dims = tuple(int(d) for d in dims)
    K = [d - 1 for d in dims] + [0]
    return _unit_table(float(o.s), o.N, K[0], K[1]) * h ** (-2 * o.s)


@lru_cache(maxsize=32)
def _unit_constants(s: float, N: int):
    if N == 1:
        dtot = 2 * 0.5 ** (-2 * s) / (2 * s)
        m2 = 2 * 0.5 ** (2 - 2 * s) / (2 - 2 * s)
        return dtot, m2
    ang = quad(lambda t: math.cos(t) ** (2 * s), 0, math.pi / 4, epsabs=1e-14, epsrel=1e-13)[0]
    dtot = 8 * ang * 0.5 ** (-2 * s) / (2 * s)
    mom = quad(lambda t: (0.5 / math.cos(t)) ** (2 - 2 * s), 0, math.pi / 4, epsabs=1e-14, epsrel=1e-13)[0]
    m2 = 0.5 * 8 * mom / (2 - 2 * s)
    return dtot, m2


def exterior_total(o: FracOrder, h: float) -> float:
    """int over R^N minus the centred cell of |z|^(-N-2s): the full lattice sum."""
    return _unit_constants(float(o.s), o.N)[0] * h ** (-2 * o.s)


def self_cell_moment(o: FracOrder, h: float) -> float:
    """int over the centred cell of z_1^2 |z|^(-N-2s)."""
    return _unit_constants(float(o.s), o.N)[1] * h ** (2 - 2 * o.s)


def ball_tail_integral(o: FracOrder, eps: float) -> float:
    """int_{R^N} (|z|^2 + eps^2)^(-(N+2s)/2) dz."""
    N, s = o.N, o.s
    return math.pi ** (N / 2) * gamma(s) / gamma(N / 2 + s) * eps ** (-2 * s)


def regularized_table(o: FracOrder, h: float, dims, eps: float) -> np.ndarray:
    """Cell integrals of kappa_eps = (|z|^2 + eps^2)^(-(N+2s)/2) on the lattice offsets.

    Gauss-Legendre per cell; cells next to the origin are subdivided when
    eps is small compared with h.
    """
    dims = tuple(int(d) for d in dims)
    a = o.N + 2 * o.s
    gx, gw = np.polynomial.legendre.leggauss(6)
    sub = int(min(256, max(1, math.ceil(3 * h / eps))))
    near = 2

    def cell_1d(c, m):
        e = np.linspace(c - 0.5 * h, c + 0.5 * h, m + 1)
        pts = (0.5 * (e[:-1] + e[1:]))[:, None] + (0.5 * h / m) * gx[None, :]
        return float(np.sum((pts * pts + eps * eps) ** (-a / 2) * gw) * (0.5 * h / m))

    if o.N == 1:
        k = np.arange(-(dims[0] - 1), dims[0]) * h
        pts = k[:, None] + 0.5 * h * gx[None, :]
        out = (pts * pts + eps * eps) ** (-a / 2) @ gw * (h / 2)
        c = dims[0] - 1
        for j in range(-near, near + 1):
            if 0 <= c + j < out.size:
                out[c + j] = cell_1d(j * h, sub)
        return out
    k1 = np.arange(-(dims[0] - 1), dims[0]) * h
    k2 = np.arange(-(dims[1] - 1), dims[1]) * h
    out = np.zeros((k1.size, k2.size))
    for p, wp in zip(gx, gw):
        for q, wq in zip(gx, gw):
            X = k1[:, None] + 0.5 * h * p
            Y = k2[None, :] + 0.5 * h * q
            out += wp * wq * (X * X + Y * Y + eps * eps) ** (-a / 2)
    out *= h * h / 4
    if sub > 1:
        c1, c2 = dims[0] - 1, dims[1] - 1
        m = sub
        hs = h / m
        loc = (np.arange(m) + 0.5) * hs - 0.5 * h
        P = (loc[:, None] + 0.5 * hs * gx[None, :]).ravel()
        Wt = np.tile(gw, m) * 0.5 * hs
        for i in range(-near, near + 1):
            for j in range(-near, near + 1):
                if 0 <= c1 + i < out.shape[0] and 0 <= c2 + j < out.shape[1]:
                    X = i * h + P
                    Y = j * h + P
                    val = (X[:, None] ** 2 + Y[None, :] ** 2 + eps * eps) ** (-a / 2)
                    out[c1 + i, c2 + j] = float(Wt @ val @ Wt)
    return out
