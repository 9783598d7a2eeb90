"""Torsion function, the lambda_{s,p} minimizer and its boundary trace.

A :class:`Discretization` holds the dense operator ``A`` on the nodes of a
domain and the node masses ``m``; the discrete energy is ``h^N v^T A v`` and
``||v||_p^p = sum_i m_i |v_i|^p``.  Plain grids have ``m_i = h^N``; grids
pulled back through a deformation carry the Jacobian in ``m``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import cho_factor, cho_solve

from .fracops.assembly import mapped_matrix, restricted_matrix
from .fracops.grid import GridFunction, Lattice
from .fracops.kernel import FracOrder
from .geometry import ConvexDomain, DomainError

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Linear or nonlinear solve that did not reach its tolerance."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class TraceError(ValueError):
    pass


@dataclass
class Discretization:
    domain: ConvexDomain
    order: FracOrder
    lattice: Lattice
    mask: np.ndarray
    A: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    mapping: object = None
    _chol: object = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def rhs_weight(self) -> np.ndarray:
        """m / h^N: the load of a unit right-hand side."""
        return self.mass / self.h**self.lattice.ndim

    def nodes(self) -> np.ndarray:
        return self.lattice.points()[self.mask]

    def factor(self):
        if self._chol is None:
            self._chol = cho_factor(self.A, lower=True, check_finite=False)
        return self._chol

    def solve(self, b) -> np.ndarray:
        return cho_solve(self.factor(), b, check_finite=False)

    def energy(self, v) -> float:
        return float(v @ (self.A @ v)) * self.h**self.lattice.ndim

    def lp_norm(self, v, p) -> float:
        return float(np.sum(self.mass * np.abs(v) ** p)) ** (1.0 / p)

    def to_grid(self, v) -> GridFunction:
        full = np.zeros(self.lattice.size)
        full[self.mask] = v
        return GridFunction(self.lattice, full.reshape(self.lattice.dims))


def grid_for(dom: ConvexDomain, n: int, offset=None, margin: int = 2) -> Lattice:
    """Lattice with ``n`` cells across the longest side of the bounding box."""
    lo, hi = dom.bbox
    h = float(np.max(hi - lo)) / n
    return Lattice.covering(lo, hi, h, margin=margin, offset=offset)


def discretize(dom: ConvexDomain, o: FracOrder, n: int = 96, offset=None, mapping=None,
               lattice: Lattice | None = None) -> Discretization:
    """Assemble the operator on the nodes of ``dom`` (optionally pulled back by ``mapping``)."""
    if dom.dim != o.N:
        raise DomainError(f"domain dimension {dom.dim} does not match N = {o.N}")
    lat = lattice if lattice is not None else grid_for(dom, n, offset)
    P = lat.points()
    mask = dom.contains(P)
    # nodes on the boundary up to rounding are exterior (u = 0 there); keeps mirror symmetry
    mask[mask] = dom.boundary_distance(P[mask]) > 1e-9 * lat.h
    if mask.sum() < 4:
        raise DomainError("grid too coarse: fewer than four interior nodes")
    if mapping is None:
        A = restricted_matrix(o, lat, mask)
        mass = np.full(int(mask.sum()), lat.h**lat.ndim)
    else:
        A, mass = mapped_matrix(o, lat, mask, mapping)
    return Discretization(dom, o, lat, mask, A, mass, mapping)


def _as_disc(target, o, n) -> Discretization:
    if isinstance(target, Discretization):
        return target
    if o is None:
        raise ValueError("a FracOrder is needed to discretize a domain")
    return discretize(target, o, n)


def _torsion_vector(disc: Discretization, tol: float = 1e-10):
    b = disc.rhs_weight
    w = disc.solve(b)
    res = float(np.linalg.norm(disc.A @ w - b) / np.linalg.norm(b))
    if not res <= tol:
        raise SolverError(f"torsion solve residual {res:.3e} above {tol:.0e}", [res])
    return w, res


def solve_torsion(target, o: FracOrder | None = None, n: int = 96, tol: float = 1e-10) -> GridFunction:
    """w with (-Delta)^s w = 1 on the domain nodes and w = 0 elsewhere."""
    disc = _as_disc(target, o, n)
    w, _ = _torsion_vector(disc, tol)
    return disc.to_grid(w)


def _torsion_kappa(dom: ConvexDomain, s: float, m: int = 8192) -> float:
    # (-Delta)^s (1 - g)_+^s = kappa for the quadratic level function g
    from scipy.special import gamma

    N = dom.dim
    KN = 4.0**s * gamma(1 + s) * gamma(N / 2 + s) / gamma(N / 2)
    if N == 1:
        return KN * (0.5 * (dom.b - dom.a)) ** (-2 * s)
    ax, _ = dom.principal_axes()
    a, b = ax
    th = (np.arange(m) + 0.5) * 2 * np.pi / m
    return float(KN * a * b * np.mean((a * a * np.cos(th) ** 2 + b * b * np.sin(th) ** 2) ** (-(N + 2 * s) / 2)))


def torsion_closed_form(dom: ConvexDomain, o: FracOrder) -> dict:
    """Exact p = 1 data on intervals, balls and ellipses.

    The torsion function is (1 - g)_+^s / kappa with g the quadratic level
    function of the domain; the L^1-normalized minimizer is u = lambda w with
    lambda = 1 / ||w||_1, and u / delta^s -> lambda |grad g|^s / kappa.
    Returns ``w0`` (value at the centre), ``lam``, and ``ratio`` (callable on
    boundary points).
    """
    from scipy.special import gamma

    if not dom.smooth:
        raise DomainError("closed form only for intervals, balls and ellipses")
    s = o.s
    kap = _torsion_kappa(dom, s)
    if dom.dim == 1:
        R = 0.5 * (dom.b - dom.a)
        c = 0.5 * (dom.a + dom.b)
        mass = R * math.sqrt(math.pi) * gamma(1 + s) / gamma(1.5 + s) / kap
        grad = lambda P: 2 * np.abs(np.asarray(P, float).reshape(-1) - c) / R**2
    else:
        mass = math.pi * float(np.prod(dom.principal_axes()[0])) / ((1 + s) * kap)
        grad = lambda P: 2 * np.linalg.norm((np.asarray(P, float).reshape(-1, 2) - dom.center) @ dom.Q, axis=1)
    lam = 1.0 / mass
    return {"w0": 1.0 / kap, "lam": lam, "kappa": kap,
            "ratio": lambda P: lam * grad(P) ** s / kap}


@dataclass
class SpectralSolution:
    u: GridFunction
    lam: float
    p: float
    s: float
    residual: float
    iterations: int
    history: list = field(default_factory=list, repr=False)
    disc: Discretization | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {"lambda": self.lam, "p": self.p, "s": self.s, "residual": self.residual,
                "iterations": self.iterations}

    def save(self, stem, trace: "BoundaryTrace | None" = None) -> list:
        """Write ``stem.csv`` (grid function) and ``stem.json`` (sidecar)."""
        stem = Path(stem)
        self.u.to_csv(stem.with_suffix(".csv"))
        meta = self.summary()
        if trace is not None:
            meta["trace"] = trace.summary()
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return [stem.with_suffix(".csv"), stem.with_suffix(".json")]

    @classmethod
    def load(cls, stem) -> "SpectralSolution":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        u = GridFunction.from_csv(stem.with_suffix(".csv"))
        return cls(u, meta["lambda"], meta["p"], meta["s"], meta["residual"], meta["iterations"])


def _el_residual(disc, u, lam, p):
    g = disc.rhs_weight * (np.ones_like(u) if p == 1 else np.abs(u) ** (p - 1))
    r = disc.A @ u - lam * g
    return float(np.linalg.norm(r) / np.linalg.norm(lam * g))


def _project(u):
    low = float(u.min())
    if low < -1e-12 * float(np.abs(u).max()):
        log.warning("iterate has negative entries down to %.3e; projecting", low)
    return np.clip(u, 0.0, None)


def solve_lambda(target, o: FracOrder | None = None, p: float = 2.0, n: int = 96,
                 theta: float = 0.5, tol: float = 1e-9, max_iter: int = 2000) -> SpectralSolution:
    """Positive minimizer of [u]^2 subject to ||u||_p = 1, for p in [1, 2].

    p = 1 goes through the torsion function, p = 2 uses inverse power
    iteration, and 1 < p < 2 the damped normalized fixed point
    u <- (1 - theta) u + theta S(u^{p-1}) / ||S(u^{p-1})||_p.  lambda is the
    discrete seminorm of the converged iterate.
    """
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    disc = _as_disc(target, o, n)
    hist = []
    w, _ = _torsion_vector(disc)
    u = w / disc.lp_norm(w, p)
    it = 0
    if p == 1:
        pass
    elif p == 2:
        lam_old = disc.energy(u)
        for it in range(1, max_iter + 1):
            z = disc.solve(disc.rhs_weight * u)
            z /= disc.lp_norm(z, 2)
            lam = disc.energy(z)
            change = float(np.max(np.abs(z - u)) / np.max(np.abs(z)))
            hist.append(change)
            u = z
            if change <= tol and abs(lam - lam_old) <= 1e-13 * lam:
                break
            lam_old = lam
        else:
            raise SolverError("inverse iteration did not converge", hist)
    else:
        for it in range(1, max_iter + 1):
            z = disc.solve(disc.rhs_weight * u ** (p - 1))
            z /= disc.lp_norm(z, p)
            new = (1 - theta) * u + theta * z
            new = _project(new)
            new /= disc.lp_norm(new, p)
            change = float(np.max(np.abs(new - u)) / np.max(np.abs(new)))
            hist.append(change)
            u = new
            if change <= tol:
                break
            if it > 50 and change > 0.5 * hist[-50]:
                raise SolverError(f"fixed point stagnates at change {change:.3e}", hist)
        else:
            raise SolverError("fixed point did not converge", hist)
    u = _project(u)
    lam = disc.energy(u)
    res = _el_residual(disc, u, lam, p)
    return SpectralSolution(disc.to_grid(u), lam, float(p), disc.order.s, res, it, hist, disc, u)


# -- boundary trace -------------------------------------------------------------

@dataclass
class BoundaryTrace:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    theta: np.ndarray
    values: np.ndarray
    residuals: np.ndarray
    method: str
    coef: np.ndarray | None = field(default=None, repr=False)
    modes: int = 0
    fit_tol: float = 0.05

    @property
    def mean(self) -> float:
        return float(np.sum(self.values * self.weights) / np.sum(self.weights))

    @property
    def variation(self) -> float:
        return float((self.values.max() - self.values.min()) / self.mean)

    @property
    def flagged(self) -> np.ndarray:
        return self.residuals > self.fit_tol

    def summary(self) -> dict:
        return {"mean": self.mean, "relative_variation": self.variation, "samples": int(self.values.size),
                "flagged": int(self.flagged.sum()), "method": self.method}

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.points.shape[1]
            head = ["theta"] + [f"x{k}" for k in range(dim)] + [f"n{k}" for k in range(dim)]
            w.writerow(head + ["weight", "ratio", "residual"])
            for k in range(self.values.size):
                row = [self.theta[k], *self.points[k], *self.normals[k], self.weights[k],
                       self.values[k], self.residuals[k]]
                w.writerow([repr(float(x)) for x in row])


def _fourier(theta, K):
    cols = [np.ones_like(theta)]
    for k in range(1, K + 1):
        cols += [np.cos(k * theta), np.sin(k * theta)]
    return np.stack(cols, axis=1)


def _side_basis(theta):
    right = np.cos(theta) > 0
    return np.stack([right, ~right], axis=1).astype(float)


def _default_powers(degree, s, p):
    pw = [float(j) for j in range(degree + 1)]
    # for p > 1 the right side lambda u^{p-1} ~ delta^{s(p-1)} adds delta^{sp} to u / delta^s
    if p > 1.0 and all(abs(s * p - j) > 1e-6 for j in pw):
        pw.append(s * p)
    return tuple(sorted(pw))


def _default_layer_powers(dim, s):
    if dim > 1:
        return (2.0,)
    q = 2.0 - 2.0 * s
    return (1.0, 2.0) if abs(q - 1.0) < 0.1 else (1.0, q)


def boundary_ratio(sol: SpectralSolution, dom: ConvexDomain, o: FracOrder | None = None,
                   method: str = "band", n_samples: int = 256, band=None,
                   modes: int = 8, degree: int = 2, layer_modes: int = 8,
                   layer_powers=None, powers=None, correction_modes: int = 4) -> BoundaryTrace:
    """Fitted boundary ratio C(x0) = lim u / delta^s on boundary samples.

    ``method="band"`` (default) regresses u / delta^s over all nodes with
    delta in ``band`` grid units (default [3, 20]) against a smooth model in the angular
    boundary parameter of the nearest boundary point:

        u / delta^s ~ C(theta) + D(theta) delta + E(theta) delta^2 + sum_k F_k(theta) (h / delta)^k,

    with C a truncated Fourier series of ``modes`` modes, the interior
    corrections D, E (and a delta^{sp} term for p > 1) of
    ``correction_modes`` modes and F_k of ``layer_modes`` modes; the (h/delta)^k columns absorb the discrete
    boundary layer of the lattice solution (k in ``layer_powers``; by
    default 1 and 2 - 2s on an interval, 2 replacing 2 - 2s when the two
    coincide, and (2,) in the plane).  ``method="ray"`` fits
    u(x0 - tau nu) ~ C tau^s along each inward normal with bilinear
    interpolation over tau in ``band`` grid units (default [2, 12]), sample
    by sample.
    """
    if not dom.smooth:
        raise TraceError("boundary ratios are only evaluated on smooth domains (interval, ball, ellipse)")
    s = sol.s if o is None else o.s
    lat = sol.u.lattice
    h = lat.h
    quad = dom.boundary_quadrature(n_samples)
    th_q = quad.theta
    if method == "ray":
        return _ray_trace(sol, dom, quad, s, (2.0, 12.0) if band is None else band)
    if method != "band":
        raise ValueError(f"unknown trace method {method!r}")
    band = (3.0, 20.0) if band is None else band
    P = lat.points()
    vals = sol.u.values.ravel()
    inside = dom.contains(P) & (vals > 0)
    F, dist = dom.boundary_projection(P[inside])
    d = dist / h
    sel = (d >= band[0] - 1e-9) & (d <= band[1] + 1e-9)
    Pn, Fn, dn, vn = P[inside][sel], F[sel], dist[sel], vals[inside][sel]
    th = dom.boundary_angle(Fn)
    basis = _side_basis if dom.dim == 1 else (lambda t: _fourier(t, modes))
    lbasis = _side_basis if dom.dim == 1 else (lambda t: _fourier(t, layer_modes))
    B = basis(th)
    if powers is None:
        powers = _default_powers(degree, s, sol.p)
    B1 = B if dom.dim == 1 else _fourier(th, min(correction_modes, modes))
    cols = [(B if i == 0 else B1) * (dn**j)[:, None] for i, j in enumerate(powers)]
    if layer_powers is None:
        layer_powers = _default_layer_powers(dom.dim, s)
    for k in layer_powers:
        cols.append(lbasis(th) * ((h / dn) ** k)[:, None])
    X = np.hstack(cols)
    if X.shape[0] < 2 * X.shape[1] or B.shape[0] < 6:
        raise TraceError(f"only {X.shape[0]} fit points for {X.shape[1]} unknowns; refine the grid")
    v = vn / dn**s
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    C = basis(th_q) @ coef[: B.shape[1]]
    rel = (X @ coef - v) / np.where(np.abs(v) > 0, np.abs(v), 1.0)
    res = np.empty(C.size)
    for k in range(C.size):
        near = np.linalg.norm(Fn - quad.points[k], axis=1) <= 6 * h
        if near.sum() < 6:
            raise TraceError(f"fewer than 6 fit points near boundary sample {k}")
        res[k] = math.sqrt(float(np.mean(rel[near] ** 2)))
    return BoundaryTrace(quad.points, quad.normals, quad.weights, th_q, C, res, "band", coef, modes)


def _ray_trace(sol, dom, quad, s, band):
    lat = sol.u.lattice
    h = lat.h
    interp = RegularGridInterpolator(lat.axes(), sol.u.values, bounds_error=False, fill_value=0.0)
    tau = np.linspace(band[0] * h, band[1] * h, 11)
    C = np.empty(len(quad))
    res = np.empty(len(quad))
    for k in range(len(quad)):
        pts = quad.points[k][None, :] - tau[:, None] * quad.normals[k][None, :]
        v = interp(pts)
        if np.count_nonzero(v > 0) < 6:
            raise TraceError(f"fewer than 6 valid fit points at boundary sample {k}")
        g = tau**s
        C[k] = float(v @ g / (g @ g))
        res[k] = float(np.linalg.norm(v - C[k] * g) / max(np.linalg.norm(C[k] * g), 1e-300))
    return BoundaryTrace(quad.points, quad.normals, quad.weights, quad.theta, C, res, "ray")
