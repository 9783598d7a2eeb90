"""Shape functional, boundary shape derivatives and the rigidity experiment.

J(Omega) = lambda_{s,p}(Omega) + C0^2 Gamma(1+s)^2 |Omega|.  Along a Lipschitz
field X,

    dlambda . X = -Gamma(1+s)^2 int_{dOmega} (u / delta^s)^2 X.nu,
    dVol . X    = int_{dOmega} X.nu,
    dJ . X      = dlambda . X + C0^2 Gamma(1+s)^2 dVol . X.

Finite-difference estimates solve on the deformed domain by pulling the
operator back to the reference grid (see :func:`fracops.mapped_matrix`), so
the node set does not change with t and the quotients are smooth in t.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .eigensolve import BoundaryTrace, SpectralSolution, boundary_ratio, discretize, grid_for, solve_lambda
from .fracops.assembly import FlowMap
from .fracops.kernel import FracOrder, gamma_factor
from .geometry import ConvexDomain, DomainError, _rot, _split_edges
from .steiner import _drop_collinear, symmetrize_set

log = logging.getLogger(__name__)

BATTERY_VERSION = "battery-v1"
CRITICAL_THRESHOLD = 5e-3
TRACE_VARIATION_MAX = 0.02
STEINER_FRAMES = (0.0, 45.0, 90.0, 135.0)


class StepTooLargeError(ValueError):
    """Deformation step for which the flow map is no longer injective."""


# -- vector fields -------------------------------------------------------------

class VectorField:
    """Lipschitz field on the plane (or line) with a Jacobian.

    Subclasses implement ``_eval``; the default Jacobian is a central
    difference, exact enough for the pulled-back assembly.
    """

    kind = "analytic"
    name = "field"
    affine = None

    def __call__(self, P) -> np.ndarray:
        return self._eval(np.atleast_2d(np.asarray(P, float)))

    def jacobian(self, P) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, float))
        n, d = P.shape
        if self.affine is not None:
            return np.broadcast_to(self.affine[0], (n, d, d)).copy()
        eps = 1e-6 * max(1.0, float(np.abs(P).max(initial=0.0)))
        out = np.empty((n, d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = eps
            out[:, :, j] = (self._eval(P + e) - self._eval(P - e)) / (2 * eps)
        return out

    @property
    def lipschitz(self) -> float:
        if self.affine is not None:
            return float(np.linalg.norm(self.affine[0], 2))
        return float("nan")

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind, "lipschitz": self.lipschitz}


class Translation(VectorField):
    def __init__(self, direction, name=None):
        self.direction = np.asarray(direction, float).ravel()
        d = self.direction.size
        self.affine = (np.zeros((d, d)), self.direction)
        self.name = name or "translation"

    def _eval(self, P):
        return np.broadcast_to(self.direction, P.shape).copy()


class Dilation(VectorField):
    """The identity field X(x) = x - center."""

    def __init__(self, dim=2, center=None, name="identity"):
        c = np.zeros(dim) if center is None else np.asarray(center, float)
        self.affine = (np.eye(dim), -c)
        self.center = c
        self.name = name

    def _eval(self, P):
        return P - self.center


class AffineField(VectorField):
    def __init__(self, A, b=None, name="affine"):
        A = np.atleast_2d(np.asarray(A, float))
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, float)
        self.affine = (A, b)
        self.name = name

    def _eval(self, P):
        return P @ self.affine[0].T + self.affine[1]


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


class NormalBump(VectorField):
    """Normal bump k of ``count`` on a ball or ellipse.

    X = beta(theta - 2 pi k / count) psi(rho) grad g / |grad g| where g is the
    level function, rho = sqrt(g), theta the angular boundary parameter,
    beta(a) = cos^2(count a / 4) on |a| < 2 pi / count and psi a C^1 cutoff
    that vanishes near the centre.
    """

    def __init__(self, dom: ConvexDomain, k: int, count: int = 8, inner=(0.3, 0.6)):
        if dom.kind not in ("ball", "ellipse"):
            raise DomainError("normal bumps are defined on balls and ellipses")
        self.dom = dom
        self.k = int(k)
        self.count = int(count)
        self.inner = inner
        self.name = f"bump-{k}"
        if dom.kind == "ball":
            self._ax, self._U = np.array([dom.radius, dom.radius]), np.eye(2)
        else:
            self._ax, self._U = dom.principal_axes()

    def _eval(self, P):
        L = (P - self.dom.center) @ self._U
        z = L / self._ax
        th = np.arctan2(z[:, 1], z[:, 0])
        rho = np.hypot(z[:, 0], z[:, 1])
        half = 2 * math.pi / self.count
        a = np.angle(np.exp(1j * (th - self.k * half)))
        beta = np.where(np.abs(a) < half, np.cos(0.5 * math.pi * a / half) ** 2, 0.0)
        psi = _smoothstep((rho - self.inner[0]) / (self.inner[1] - self.inner[0]))
        g = (P - self.dom.center) @ self.dom.Q
        gn = np.linalg.norm(g, axis=1)
        gn = np.where(gn > 0, gn, 1.0)
        return (beta * psi / gn)[:, None] * g

    @property
    def lipschitz(self) -> float:
        lo, hi = self.dom.bbox
        xs = [np.linspace(l - 0.5, h + 0.5, 81) for l, h in zip(lo, hi)]
        P = np.stack(np.meshgrid(*xs, indexing="ij"), -1).reshape(-1, 2)
        return float(np.max(np.linalg.norm(self.jacobian(P), ord=2, axis=(1, 2))))


class SteinerField(VectorField):
    """V(x) = -1/2 (y1(x') + y2(x')) e in the frame rotated by ``angle``.

    x' is the coordinate along R e_1 and (y1, y2) the section of the domain
    along e = R e_2.  By default V vanishes off the closed domain; with
    ``extend=True`` the midpoint is evaluated at x' clamped to the projection
    interval, a Lipschitz extension to the whole plane (used to move the
    grid in finite-difference runs; it agrees with V on the closure).
    """

    kind = "steiner"

    def __init__(self, dom: ConvexDomain, angle: float = 0.0, extend: bool = False):
        if not dom.check_convex():
            raise DomainError("the Steiner field is only defined for convex domains")
        self.dom = dom
        self.angle = float(angle)
        self.extend = extend
        self.name = f"steiner-{math.degrees(angle):g}"
        self._R = _rot(angle) if dom.dim == 2 else np.eye(1)
        self._frame = dom.rotated(-angle) if (dom.dim == 2 and angle) else dom
        self.affine = self._affine_part()

    def _affine_part(self):
        if self.dom.dim == 1:
            return (np.zeros((1, 1)), np.array([-0.5 * (self.dom.a + self.dom.b)]))
        if self.extend or self.dom.kind == "polygon":
            return None
        d = self._frame
        k = -d.Q[0, 1] / d.Q[1, 1]
        cx, cy = d.center
        # midpoint m(x') = cy + k (x' - cx) is affine in x' = R[:, 0] . x
        e = self._R[:, 1]
        A = -k * np.outer(e, self._R[:, 0])
        b = -(cy - k * cx) * e
        return (A, b)

    def with_extension(self, extend=True) -> "SteinerField":
        return SteinerField(self.dom, self.angle, extend)

    def midpoint(self, xp):
        lo, hi = self._frame.projection()
        xa = np.clip(np.asarray(xp, float), lo, hi)
        y1, y2 = self._frame.vertical_section(xa)
        return 0.5 * (np.asarray(y1) + np.asarray(y2))

    def breakpoints(self):
        """Projection coordinates where the midpoint has kinks (polygons)."""
        if self.dom.kind != "polygon":
            return np.empty(0)
        return np.unique(self._frame.vertices[:, 0])

    def _closure(self, P):
        inside = self.dom.contains(P)
        if np.all(inside):
            return inside
        return inside | (self.dom.boundary_distance(P) <= 1e-10)

    def _eval(self, P):
        if self.dom.dim == 1:
            v = np.full((P.shape[0], 1), -0.5 * (self.dom.a + self.dom.b))
        else:
            xp = P @ self._R[:, 0]
            m = self.midpoint(xp)
            v = -m[:, None] * self._R[:, 1][None, :]
        if not self.extend:
            v[~self._closure(P)] = 0.0
        return v

    def jacobian(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        n, d = P.shape
        if d == 1:
            return np.zeros((n, 1, 1))
        xp = P @ self._R[:, 0]
        lo, hi = self._frame.projection()
        s1, s2 = self._frame.section_slopes(xp)
        slope = np.where((xp > lo) & (xp < hi), 0.5 * (s1 + s2), 0.0)
        out = -slope[:, None, None] * np.einsum("i,j->ij", self._R[:, 1], self._R[:, 0])[None]
        if not self.extend:
            out[~self._closure(P)] = 0.0
        return out

    @property
    def lipschitz(self) -> float:
        if self.dom.dim == 1:
            return 0.0
        lo, hi = self._frame.projection()
        s1, s2 = self._frame.section_slopes(np.linspace(lo, hi, 401)[1:-1])
        return float(np.max(np.abs(0.5 * (s1 + s2))))

    def quadrature(self, n=256):
        """Boundary quadrature split at the midpoint kinks."""
        if self.dom.kind == "polygon":
            return self.dom.boundary_quadrature(n, breaks=(self._R[:, 0], self.breakpoints()))
        return self.dom.boundary_quadrature(n)


def steiner_vector_field(dom: ConvexDomain, angle: float = 0.0, extend: bool = False) -> SteinerField:
    return SteinerField(dom, angle, extend)


def battery(dom: ConvexDomain, steiner_angle: float = math.pi / 4) -> list:
    """The fixed battery of test fields (``BATTERY_VERSION``).

    2D: translations along e_1 and e_2, the identity field, eight normal
    bumps and the Steiner field in the frame rotated by 45 degrees.  On an
    interval: translation, identity and the Steiner field.
    """
    if dom.dim == 1:
        return [Translation([1.0], "translation-x"), Dilation(1), SteinerField(dom)]
    fields = [Translation([1.0, 0.0], "translation-x"), Translation([0.0, 1.0], "translation-y"), Dilation(2)]
    fields += [NormalBump(dom, k) for k in range(8)]
    fields.append(SteinerField(dom, steiner_angle))
    return fields


def _quad_for(dom, X, n):
    if isinstance(X, SteinerField):
        return X.quadrature(n)
    return dom.boundary_quadrature(n)


# -- derivatives -----------------------------------------------------------------

def shape_functional(dom: ConvexDomain, o: FracOrder, p: float, C0: float, n: int = 96,
                     sol: SpectralSolution | None = None) -> float:
    if C0 < 0:
        raise ValueError("C0 must be nonnegative")
    if sol is None:
        sol = solve_lambda(dom, o, p, n=n)
    return sol.lam + C0**2 * gamma_factor(o.s) * dom.volume


def volume_derivative(dom: ConvexDomain, X: VectorField, n: int = 256) -> float:
    """int_{dOmega} X . nu."""
    q = _quad_for(dom, X, n)
    return q.integrate(q.normal_component(X))


@dataclass
class ShapeDerivative:
    dJ: float
    dlam: float
    dvol: float

    def __float__(self):
        return self.dJ


def shape_derivative(dom: ConvexDomain, sol: SpectralSolution, trace: BoundaryTrace, X: VectorField,
                     C0: float) -> ShapeDerivative:
    """dJ . X from the fitted boundary trace (with dlambda . X and dVol . X)."""
    if trace is None or trace.values.size == 0:
        raise ValueError("a boundary trace with samples is required")
    if not np.all(np.isfinite(trace.values)):
        raise ValueError("boundary trace has missing samples")
    G2 = gamma_factor(sol.s)
    xn = np.sum(X(trace.points) * trace.normals, axis=1)
    dlam = -G2 * float(np.sum(trace.weights * trace.values**2 * xn))
    dvol = volume_derivative(dom, X, max(len(trace.points), 8))
    return ShapeDerivative(dlam + C0**2 * G2 * dvol, dlam, dvol)


def normalization(dom, trace, X, C0, s) -> float:
    """Gamma(1+s)^2 C0^2 |dOmega| max |X . nu|."""
    xn = np.abs(np.sum(X(trace.points) * trace.normals, axis=1)).max()
    return gamma_factor(s) * C0**2 * dom.perimeter * float(xn)


# -- deformations ----------------------------------------------------------------

def _flow_tau(X, t):
    return -math.expm1(-t) if isinstance(X, SteinerField) else t


def _check_injective(dom, X, tau, n=64):
    lo, hi = dom.bbox
    if dom.dim == 1:
        P = np.linspace(lo[0], hi[0], 4 * n)[:, None]
    else:
        xs = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        P = np.stack(np.meshgrid(*xs, indexing="ij"), -1).reshape(-1, 2)
        P = P[dom.contains(P)]
    J = np.linalg.det(np.eye(dom.dim)[None] + tau * X.jacobian(P))
    if J.size and float(J.min()) <= 0:
        raise StepTooLargeError(f"flow map folds at tau = {tau:g} (min Jacobian {J.min():.3e})")


def deform(dom: ConvexDomain, X: VectorField, t: float) -> ConvexDomain:
    """Phi_t(Omega) with Phi_t = id + t X, or id + (1 - e^{-t}) V for Steiner fields."""
    if t == 0:
        return ConvexDomain.from_dict(dom.to_dict())
    tau = _flow_tau(X, t)
    _check_injective(dom, X, tau)
    if isinstance(X, SteinerField) and dom.kind == "polygon":
        V = _split_edges(dom.vertices, X._R[:, 0], X.breakpoints())
        return ConvexDomain.polygon(_drop_collinear(V + tau * X(V)))
    if X.affine is not None:
        A, b = X.affine
        return dom.affine_image(np.eye(dom.dim) + tau * A, tau * b)
    if dom.kind == "polygon":
        V = dom.vertices
        return ConvexDomain.polygon(V + tau * X(V))
    if dom.kind == "interval":
        ends = np.array([[dom.a], [dom.b]])
        e = ends + tau * X(ends)
        return ConvexDomain.interval(float(e[0, 0]), float(e[1, 0]))
    # smooth domain, non-affine field: fine polygon through pushed boundary points
    B = dom.boundary_curve(2048)
    poly = ConvexDomain.polygon(B + tau * X(B), validate=False)
    if not poly.check_convex():
        raise DomainError("deformed domain is not convex; use pushed_volume for its area")
    return poly


def pushed_volume(dom: ConvexDomain, X: VectorField, tau: float, m: int = 8192) -> float:
    """|Phi(Omega)| for Phi = id + tau X from the pushed boundary.

    Smooth kinds use the periodic trapezoid rule on 1/2 (x y' - y x') in the
    angular parameter, with the tangent pushed by DPhi.
    """
    if dom.kind == "interval":
        e = np.array([[dom.a], [dom.b]])
        f = e + tau * X(e)
        return float(f[1, 0] - f[0, 0])
    if dom.kind == "polygon":
        q = _quad_for(dom, X, 64 * len(dom.vertices))
        # divergence form: int x.nu_pushed / 2 with pushed tangent
        T = np.stack([-q.normals[:, 1], q.normals[:, 0]], axis=1)
        P = q.points + tau * X(q.points)
        Tp = np.einsum("nij,nj->ni", np.eye(2)[None] + tau * X.jacobian(q.points), T)
        return 0.5 * float(np.sum(q.weights * (P[:, 0] * Tp[:, 1] - P[:, 1] * Tp[:, 0])))
    th = 2 * math.pi * np.arange(m) / m
    B = dom.boundary_point(th)
    T = dom.boundary_tangent(th)
    P = B + tau * X(B)
    Tp = np.einsum("nij,nj->ni", np.eye(2)[None] + tau * X.jacobian(B), T)
    return 0.5 * float(np.mean(P[:, 0] * Tp[:, 1] - P[:, 1] * Tp[:, 0])) * 2 * math.pi


@dataclass
class FiniteDifference:
    estimate: float
    dlam: float
    dvol: float
    times: list
    quotients: list
    order: float

    def as_dict(self):
        return asdict(self)


def _extrapolate(ts, qs):
    ts = np.asarray(ts, float)
    qs = np.asarray(qs, float)
    if ts.size == 1:
        return float(qs[0])
    return float(np.polyval(np.polyfit(ts, qs, ts.size - 1), 0.0))


def _order(ts, qs):
    if len(qs) < 3:
        return float("nan")
    d1, d2 = qs[0] - qs[1], qs[1] - qs[2]
    if d1 == 0 or d2 == 0 or d1 * d2 < 0:
        return float("nan")
    return math.log(abs(d1 / d2)) / math.log(ts[0] / ts[1])


def finite_difference_shape_derivative(dom: ConvexDomain, o: FracOrder, p: float, C0: float,
                                       X: VectorField, times=(0.02, 0.01, 0.005), n: int = 96,
                                       base: float | None = None) -> FiniteDifference:
    """(J(Phi_t(Omega)) - J(Omega)) / t for decreasing t, extrapolated to t = 0.

    lambda on Phi_t(Omega) is solved from scratch on the pulled-back grid;
    the volume comes from the pushed boundary.  ``base`` may pass a
    precomputed lambda(Omega) on the same grid.
    """
    ts = [float(t) for t in times]
    if not ts or any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
        raise ValueError("times must be positive and strictly decreasing")
    G2 = gamma_factor(o.s)
    lat = grid_for(dom, n)
    if base is None:
        base = solve_lambda(discretize(dom, o, lattice=lat), p=p).lam
    vol0 = dom.volume
    Xe = X.with_extension() if isinstance(X, SteinerField) else X
    ql, qv = [], []
    for t in ts:
        tau = _flow_tau(X, t)
        _check_injective(dom, Xe, tau)
        disc = discretize(dom, o, lattice=lat, mapping=FlowMap(Xe, tau))
        lam = solve_lambda(disc, p=p).lam
        ql.append((lam - base) / t)
        qv.append((pushed_volume(dom, X, tau) - vol0) / t)
    qj = [a + C0**2 * G2 * b for a, b in zip(ql, qv)]
    diffs = np.diff(qj)
    if diffs.size > 1 and np.any(diffs[1:] * diffs[:-1] < 0):
        scale = max(abs(q) for q in qj)
        if np.max(np.abs(diffs)) > 1e-3 * max(scale, 1e-12):
            warnings.warn("finite-difference quotients are not monotone in t", RuntimeWarning)
    return FiniteDifference(_extrapolate(ts, qj), _extrapolate(ts, ql), _extrapolate(ts, qv), ts, qj,
                            _order(ts, qj))


# -- rigidity experiment ------------------------------------------------------------

@dataclass
class FieldEntry:
    field: str
    dJ: float
    dlam: float
    dvol: float
    normalized: float
    fd: float | None = None
    discrepancy: float | None = None
    fd_order: float | None = None


@dataclass
class ShapeReport:
    domain: dict
    s: float
    p: float
    n: int
    lam: float
    volume: float
    perimeter: float
    C0: float
    J: float
    trace: dict
    entries: list
    steiner_sweep: dict
    dJ_V: float
    max_normalized: float
    threshold: float
    verdict: str
    battery: str = BATTERY_VERSION
    flow: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def critical(self) -> bool:
        return self.verdict == "critical"

    def flow_strictly_decreasing(self) -> bool:
        if not self.flow:
            return False
        return bool(np.all(np.diff(self.flow["J"]) < 0))

    def message(self) -> str:
        if self.critical:
            return (f"critical: trace variation {self.trace['relative_variation']:.2%}, "
                    f"max normalized |dJ.X| = {self.max_normalized:.2e}")
        return (f"not critical: dJ.V = {self.dJ_V:.4e} (max normalized |dJ.X| = {self.max_normalized:.2e}, "
                f"trace variation {self.trace['relative_variation']:.2%})")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["version"] = __version__
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(_clean(self.as_dict()), indent=2, sort_keys=True))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field", "dJ_analytic", "dJ_fd", "dVol", "discrepancy", "normalized"])
            for e in self.entries:
                w.writerow([e["field"], _fmt(e["dJ"]), _fmt(e["fd"]), _fmt(e["dvol"]), _fmt(e["discrepancy"]),
                            _fmt(e["normalized"])])

    def flow_to_csv(self, path) -> None:
        if not self.flow:
            raise ValueError("no flow curve in this report")
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "J"])
            for t, j in zip(self.flow["t"], self.flow["J"]):
                w.writerow([_fmt(t), _fmt(j)])

    @classmethod
    def from_json(cls, path) -> "ShapeReport":
        d = json.loads(Path(path).read_text())
        d.pop("version", None)
        return cls(**d)


def _fmt(x):
    return "" if x is None else repr(float(x))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def steiner_flow_curve(dom, o, p, C0, angle, times, n=96) -> dict:
    """J along Phi_t = id + (1 - e^{-t}) V, solved on the pulled-back grid."""
    G2 = gamma_factor(o.s)
    V = SteinerField(dom, angle)
    Ve = V.with_extension()
    lat = grid_for(dom, n)
    out = {"t": [], "J": [], "lambda": [], "volume": [], "angle": math.degrees(angle)}
    for t in times:
        tau = _flow_tau(V, t)
        mapping = FlowMap(Ve, tau) if t > 0 else None
        lam = solve_lambda(discretize(dom, o, lattice=lat, mapping=mapping), p=p).lam
        vol = pushed_volume(dom, V, tau)
        out["t"].append(float(t))
        out["lambda"].append(lam)
        out["volume"].append(vol)
        out["J"].append(lam + C0**2 * G2 * vol)
    return out


def rigidity_check(dom: ConvexDomain, o: FracOrder, p: float, n: int = 96, C0: float | None = None,
                   n_samples: int = 256, threshold: float = CRITICAL_THRESHOLD,
                   frames=STEINER_FRAMES, finite_differences: bool = False,
                   fd_times=(0.02, 0.01, 0.005), flow_times=None, sol: SpectralSolution | None = None,
                   **trace_kw) -> ShapeReport:
    """Criticality test of J over the field battery.

    C0 defaults to the mean boundary ratio.  The verdict is "critical" iff
    the trace relative variation is at most 2% and every normalized
    |dJ . X| is at most ``threshold``.  The Steiner field is evaluated in
    every frame of ``frames`` (degrees); dJ_V is the most negative value.
    """
    if not dom.check_convex():
        raise DomainError("rigidity check requires a convex domain")
    if not dom.smooth:
        raise DomainError("rigidity check requires a smooth domain (interval, ball or ellipse)")
    if sol is None:
        sol = solve_lambda(discretize(dom, o, n), p=p)
    trace = boundary_ratio(sol, dom, o, n_samples=n_samples, **trace_kw)
    if C0 is None:
        C0 = trace.mean
    G2 = gamma_factor(o.s)
    entries = []
    for X in battery(dom):
        d = shape_derivative(dom, sol, trace, X, C0)
        nz = normalization(dom, trace, X, C0, o.s)
        e = FieldEntry(X.name, d.dJ, d.dlam, d.dvol, abs(d.dJ) / nz if nz > 0 else 0.0)
        if finite_differences:
            fd = finite_difference_shape_derivative(dom, o, p, C0, X, fd_times, n, base=sol.lam)
            floor = 1e-3 * G2 * C0**2 * dom.perimeter
            e.fd = fd.estimate
            e.fd_order = fd.order
            e.discrepancy = abs(fd.estimate - d.dJ) / max(abs(d.dJ), floor)
        entries.append(e)
    sweep = {}
    for deg in (frames if dom.dim == 2 else (0.0,)):
        V = SteinerField(dom, math.radians(deg))
        sweep[f"{deg:g}"] = shape_derivative(dom, sol, trace, V, C0).dJ
    dJ_V = min(sweep.values())
    max_norm = max(e.normalized for e in entries)
    verdict = "critical" if (trace.variation <= TRACE_VARIATION_MAX and max_norm <= threshold) else "not-critical"
    flow = None
    if flow_times is not None:
        worst = min(sweep, key=sweep.get)
        flow = steiner_flow_curve(dom, o, p, C0, math.radians(float(worst)), flow_times, n)
    J = sol.lam + C0**2 * G2 * dom.volume
    return ShapeReport(dom.to_dict(), o.s, float(p), n, sol.lam, dom.volume, dom.perimeter, C0, J,
                       trace.summary(), [asdict(e) for e in entries], sweep, dJ_V, max_norm, threshold,
                       verdict, flow=flow)
