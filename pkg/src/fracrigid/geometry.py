"""Bounded convex domains in one and two dimensions.

A domain is an interval, a ball, an ellipse ``{(x - c)^T Q (x - c) < 1}`` or a
strictly convex polygon with counterclockwise vertices.  Vertical sections are
taken along the last coordinate, so in 2D the projection variable is ``x``
and sections are intervals in ``y``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.special import ellipe

KINDS = ("interval", "ball", "ellipse", "polygon")


class DomainError(ValueError):
    """Invalid or unsupported domain description."""


@dataclass(frozen=True)
class BoundarySample:
    point: np.ndarray
    normal: np.ndarray
    weight: float


class BoundaryQuadrature:
    """Boundary nodes with outward normals and surface weights.

    ``theta`` holds the angular parameter of each node for the smooth kinds
    (the generalized angle of the ellipse, the position angle of a ball,
    0 and pi for the right and left end of an interval); ``None`` for polygons.
    """

    def __init__(self, points, normals, weights, theta=None):
        self.points = np.asarray(points, float)
        self.normals = np.asarray(normals, float)
        self.weights = np.asarray(weights, float)
        self.theta = None if theta is None else np.asarray(theta, float)

    def __len__(self):
        return self.weights.size

    def __getitem__(self, k) -> BoundarySample:
        return BoundarySample(self.points[k], self.normals[k], float(self.weights[k]))

    def __iter__(self) -> Iterator[BoundarySample]:
        return (self[k] for k in range(len(self)))

    def integrate(self, values) -> float:
        return float(np.sum(np.asarray(values, float) * self.weights))

    def normal_component(self, field) -> np.ndarray:
        """X . nu at the nodes for a callable field X(P)."""
        return np.sum(field(self.points) * self.normals, axis=1)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _polygon_issue(V):
    """Index of the first vertex where strict convexity fails, or None."""
    n = len(V)
    for k in range(n):
        if _cross(V[k - 1], V[k], V[(k + 1) % n]) <= 0:
            return k
    return None


def _shoelace(V):
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _split_edges(V, direction, values):
    """Polygon vertices with extra vertices where x . direction hits ``values``."""
    d = np.asarray(direction, float)
    values = np.asarray(values, float)
    out = []
    for k in range(len(V)):
        p, q = V[k], V[(k + 1) % len(V)]
        out.append(p)
        a, b = p @ d, q @ d
        if a == b:
            continue
        inner = values[(values - min(a, b) > 1e-12) & (max(a, b) - values > 1e-12)]
        fr = np.sort((inner - a) / (b - a))
        out.extend(p + f * (q - p) for f in fr)
    return np.asarray(out)


def _rot(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def _ellipse_foot(y0, y1, e0, e1, iters=120):
    """Closest point on x^2/e0^2 + y^2/e1^2 = 1 for y0, y1 >= 0, e0 >= e1.

    Vectorized bisection on the root of the secular equation.
    """
    y0 = np.asarray(y0, float)
    y1 = np.asarray(y1, float)
    x0 = np.empty_like(y0)
    x1 = np.empty_like(y1)
    gen = (y1 > 0) & (y0 > 0)
    if np.any(gen):
        z0 = y0[gen] / e0
        z1 = y1[gen] / e1
        g = z0 * z0 + z1 * z1 - 1
        r0 = (e0 / e1) ** 2
        n0 = r0 * z0
        lo = z1 - 1
        hi = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            G = (n0 / (mid + r0)) ** 2 + (z1 / (mid + 1)) ** 2 - 1
            pos = G > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        sr = 0.5 * (lo + hi)
        x0[gen] = r0 * y0[gen] / (sr + r0)
        x1[gen] = y1[gen] / (sr + 1)
    ax0 = (~gen) & (y0 <= 0)
    x0[ax0] = 0.0
    x1[ax0] = e1
    ax1 = (~gen) & (y0 > 0)
    if np.any(ax1):
        lim = (e0 * e0 - e1 * e1) / e0
        inner = y0[ax1] < lim
        xx0 = np.where(inner, e0 * e0 * y0[ax1] / max(e0 * e0 - e1 * e1, 1e-300), e0)
        xx1 = np.where(inner, e1 * np.sqrt(np.clip(1 - (xx0 / e0) ** 2, 0, None)), 0.0)
        x0[ax1] = xx0
        x1[ax1] = xx1
    return x0, x1


class ConvexDomain:
    """Validated convex domain; immutable after construction.

    Parameters are stored in canonical form:

    * interval: ``a < b``
    * ball: ``center`` (length 2), ``radius``
    * ellipse: ``center`` and the SPD matrix ``Q``
    * polygon: ``vertices`` (k, 2), counterclockwise, strictly convex
    """

    def __init__(self, kind: str, params: dict, validate: bool = True):
        if kind not in KINDS:
            raise DomainError(f"unknown domain kind {kind!r}; expected one of {KINDS}")
        self.kind = kind
        p = dict(params)
        if kind == "interval":
            self.a = float(p["a"])
            self.b = float(p["b"])
            if not self.b > self.a:
                raise DomainError("degenerate interval: need a < b")
        elif kind == "ball":
            self.center = np.asarray(p.get("center", (0.0, 0.0)), float).reshape(2)
            self.radius = float(p["radius"])
            if not self.radius > 0:
                raise DomainError("degenerate ball: radius must be positive")
            self.Q = np.eye(2) / self.radius**2
        elif kind == "ellipse":
            self.center = np.asarray(p.get("center", (0.0, 0.0)), float).reshape(2)
            if "matrix" in p:
                Q = np.asarray(p["matrix"], float).reshape(2, 2)
                Q = 0.5 * (Q + Q.T)
            else:
                ax = np.asarray(p["axes"], float).reshape(2)
                if np.any(ax <= 0):
                    raise DomainError("degenerate ellipse: semi-axes must be positive")
                R = _rot(float(p.get("angle", 0.0)))
                Q = R @ np.diag(1.0 / ax**2) @ R.T
                Q = 0.5 * (Q + Q.T)
            ev = np.linalg.eigvalsh(Q)
            if not (np.all(np.isfinite(ev)) and ev[0] > 0):
                raise DomainError("degenerate ellipse: shape matrix is not positive definite")
            self.Q = Q
        else:
            V = np.asarray(p["vertices"], float)
            if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
                raise DomainError("polygon needs at least three [x, y] vertices")
            self.vertices = V
            if validate:
                area = _shoelace(V)
                if abs(area) <= 1e-14 * max(1.0, float(np.abs(V).max()) ** 2):
                    raise DomainError("degenerate polygon: zero area")
                k = _polygon_issue(V)
                if k is not None:
                    raise DomainError(f"polygon is not strictly convex (counterclockwise) at vertex index {k}")

    # -- construction helpers ----------------------------------------------
    @classmethod
    def interval(cls, a=-1.0, b=1.0):
        return cls("interval", {"a": a, "b": b})

    @classmethod
    def ball(cls, center=(0.0, 0.0), radius=1.0):
        return cls("ball", {"center": center, "radius": radius})

    @classmethod
    def ellipse(cls, axes, center=(0.0, 0.0), angle=0.0):
        return cls("ellipse", {"center": center, "axes": axes, "angle": angle})

    @classmethod
    def polygon(cls, vertices, validate=True):
        return cls("polygon", {"vertices": vertices}, validate=validate)

    # -- basic quantities ----------------------------------------------------
    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def smooth(self) -> bool:
        return self.kind != "polygon"

    def principal_axes(self):
        """Semi-axes (descending) and the rotation whose columns are the axes."""
        w, U = np.linalg.eigh(self.Q)
        ax = 1.0 / np.sqrt(w)
        order = np.argsort(-ax)
        U = U[:, order]
        if np.linalg.det(U) < 0:
            U[:, 1] = -U[:, 1]
        return ax[order], U

    @property
    def volume(self) -> float:
        if self.kind == "interval":
            return self.b - self.a
        if self.kind == "polygon":
            return abs(_shoelace(self.vertices))
        return math.pi / math.sqrt(np.linalg.det(self.Q))

    @property
    def perimeter(self) -> float:
        """|boundary|; for an interval the endpoint count 2."""
        if self.kind == "interval":
            return 2.0
        if self.kind == "ball":
            return 2 * math.pi * self.radius
        if self.kind == "polygon":
            V = self.vertices
            return float(np.sum(np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)))
        (a, b), _ = self.principal_axes()
        return float(4 * a * ellipe(1 - (b / a) ** 2))

    @property
    def bbox(self):
        """(lo, hi) corners of the bounding box."""
        if self.kind == "interval":
            return np.array([self.a]), np.array([self.b])
        if self.kind == "polygon":
            return self.vertices.min(axis=0), self.vertices.max(axis=0)
        half = np.sqrt(np.diag(np.linalg.inv(self.Q)))
        return self.center - half, self.center + half

    # -- membership and distance --------------------------------------------
    def contains(self, P) -> np.ndarray:
        """Open-set membership for points P of shape (n, dim)."""
        P = np.atleast_2d(np.asarray(P, float))
        if self.kind == "interval":
            x = P[:, 0]
            return (x > self.a) & (x < self.b)
        if self.kind == "polygon":
            V = self.vertices
            E = np.roll(V, -1, axis=0) - V
            cr = E[None, :, 0] * (P[:, None, 1] - V[None, :, 1]) - E[None, :, 1] * (P[:, None, 0] - V[None, :, 0])
            return np.all(cr > 0, axis=1)
        return self.level(P) < 1.0

    def level(self, P) -> np.ndarray:
        """(x - c)^T Q (x - c) for balls and ellipses."""
        if self.kind not in ("ball", "ellipse"):
            raise DomainError(f"level function not defined for {self.kind}")
        D = np.atleast_2d(np.asarray(P, float)) - self.center
        return np.einsum("ni,ij,nj->n", D, self.Q, D)

    def boundary_projection(self, P):
        """Nearest boundary points and distances for points P (n, dim)."""
        P = np.atleast_2d(np.asarray(P, float))
        if self.kind == "interval":
            x = P[:, 0]
            right = np.abs(self.b - x) <= np.abs(x - self.a)
            foot = np.where(right, self.b, self.a)
            return foot[:, None], np.abs(x - foot)
        if self.kind == "ball":
            D = P - self.center
            r = np.linalg.norm(D, axis=1)
            safe = np.where(r > 0, r, 1.0)
            U = np.where(r[:, None] > 0, D / safe[:, None], np.array([1.0, 0.0]))
            return self.center + self.radius * U, np.abs(r - self.radius)
        if self.kind == "ellipse":
            (e0, e1), U = self.principal_axes()
            L = (P - self.center) @ U
            s0 = np.where(L[:, 0] < 0, -1.0, 1.0)
            s1 = np.where(L[:, 1] < 0, -1.0, 1.0)
            x0, x1 = _ellipse_foot(np.abs(L[:, 0]), np.abs(L[:, 1]), e0, e1)
            F = np.stack([s0 * x0, s1 * x1], axis=1)
            dist = np.linalg.norm(F - L, axis=1)
            return F @ U.T + self.center, dist
        V = self.vertices
        W = np.roll(V, -1, axis=0)
        E = W - V
        ee = np.sum(E * E, axis=1)
        t = np.clip(((P[:, None, :] - V[None]) * E[None]).sum(-1) / ee[None], 0.0, 1.0)
        F = V[None] + t[..., None] * E[None]
        d = np.linalg.norm(P[:, None, :] - F, axis=2)
        k = np.argmin(d, axis=1)
        idx = np.arange(len(P))
        return F[idx, k], d[idx, k]

    def boundary_distance(self, P) -> np.ndarray:
        """dist(x, boundary) for every point (inside or outside)."""
        return self.boundary_projection(P)[1]

    def boundary_angle(self, F) -> np.ndarray:
        """Angular parameter of boundary points F (see BoundaryQuadrature)."""
        F = np.atleast_2d(np.asarray(F, float))
        if self.kind == "interval":
            return np.where(F[:, 0] >= 0.5 * (self.a + self.b), 0.0, math.pi)
        if self.kind == "ball":
            D = F - self.center
            return np.arctan2(D[:, 1], D[:, 0])
        if self.kind == "ellipse":
            (e0, e1), U = self.principal_axes()
            L = (F - self.center) @ U
            return np.arctan2(L[:, 1] / e1, L[:, 0] / e0)
        raise DomainError("angular boundary parameter is only defined for smooth kinds")

    def boundary_point(self, theta) -> np.ndarray:
        """Inverse of boundary_angle for balls and ellipses."""
        theta = np.asarray(theta, float)
        if self.kind == "ball":
            return self.center + self.radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        if self.kind == "ellipse":
            (e0, e1), U = self.principal_axes()
            L = np.stack([e0 * np.cos(theta), e1 * np.sin(theta)], axis=-1)
            return L @ U.T + self.center
        raise DomainError("boundary_point is only defined for balls and ellipses")

    def boundary_tangent(self, theta) -> np.ndarray:
        """d/dtheta of :meth:`boundary_point`."""
        theta = np.asarray(theta, float)
        if self.kind == "ball":
            return self.radius * np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
        if self.kind == "ellipse":
            (e0, e1), U = self.principal_axes()
            return np.stack([-e0 * np.sin(theta), e1 * np.cos(theta)], axis=-1) @ U.T
        raise DomainError("boundary_tangent is only defined for balls and ellipses")

    # -- sections ------------------------------------------------------------
    def projection(self):
        """Closed projection interval [x'_min, x'_max] of a 2D domain."""
        if self.dim != 2:
            raise DomainError("projection needs a 2D domain")
        lo, hi = self.bbox
        return float(lo[0]), float(hi[0])

    def vertical_section(self, xp):
        """(y1, y2) with (x', y) in the domain exactly for y1 < y < y2.

        Accepts a scalar or an array of projection coordinates.
        """
        if self.dim != 2:
            raise DomainError("vertical sections need a 2D domain")
        xa = np.atleast_1d(np.asarray(xp, float))
        lo, hi = self.projection()
        tol = 1e-12 * max(1.0, hi - lo)
        if np.any(xa < lo - tol) or np.any(xa > hi + tol):
            raise DomainError(f"x' outside the projection [{lo}, {hi}]")
        xa = np.clip(xa, lo, hi)
        if self.kind == "polygon":
            y1, y2 = self._polygon_sections(xa)
        else:
            Q = self.Q
            dx = xa - self.center[0]
            disc = Q[0, 1] ** 2 * dx * dx - Q[1, 1] * (Q[0, 0] * dx * dx - 1.0)
            root = np.sqrt(np.clip(disc, 0.0, None))
            y1 = self.center[1] + (-Q[0, 1] * dx - root) / Q[1, 1]
            y2 = self.center[1] + (-Q[0, 1] * dx + root) / Q[1, 1]
        if np.ndim(xp) == 0:
            return float(y1[0]), float(y2[0])
        return y1, y2

    def _polygon_sections(self, xa):
        V = self.vertices
        W = np.roll(V, -1, axis=0)
        y1 = np.full(xa.shape, np.inf)
        y2 = np.full(xa.shape, -np.inf)
        for (xa0, ya0), (xb0, yb0) in zip(V, W):
            xl, xr = min(xa0, xb0), max(xa0, xb0)
            on = (xa >= xl) & (xa <= xr)
            if not np.any(on):
                continue
            if xr == xl:
                ylo, yhi = min(ya0, yb0), max(ya0, yb0)
                y1[on] = np.minimum(y1[on], ylo)
                y2[on] = np.maximum(y2[on], yhi)
                continue
            y = ya0 + (yb0 - ya0) * (xa[on] - xa0) / (xb0 - xa0)
            y1[on] = np.minimum(y1[on], y)
            y2[on] = np.maximum(y2[on], y)
        return y1, y2

    def section_slopes(self, xp, dx: float = 1e-7):
        """Central-difference slopes of y1 and y2 (used for Lipschitz estimates)."""
        lo, hi = self.projection()
        xa = np.clip(np.atleast_1d(np.asarray(xp, float)), lo + dx, hi - dx)
        a1, a2 = self.vertical_section(xa - dx)
        b1, b2 = self.vertical_section(xa + dx)
        return (b1 - a1) / (2 * dx), (b2 - a2) / (2 * dx)

    # -- boundary quadrature --------------------------------------------------
    def boundary_quadrature(self, n: int = 256, breaks=None) -> BoundaryQuadrature:
        """Quadrature of the boundary measure with ``n`` nodes.

        Smooth kinds use the periodic trapezoid rule in the angular parameter
        (spectrally accurate); polygons use Gauss-Legendre points per edge.
        ``breaks`` (polygons only) is a pair ``(direction, values)``: edges are
        split where ``x . direction`` crosses one of the values, so that
        integrands with kinks there are still integrated exactly.
        """
        if self.kind == "interval":
            return BoundaryQuadrature([[self.a], [self.b]], [[-1.0], [1.0]], [1.0, 1.0], [math.pi, 0.0])
        if n < 8:
            raise DomainError("boundary quadrature needs n >= 8 in 2D")
        if self.kind in ("ball", "ellipse"):
            th = 2 * math.pi * np.arange(n) / n
            if self.kind == "ball":
                ax, U = np.array([self.radius, self.radius]), np.eye(2)
            else:
                ax, U = self.principal_axes()
            L = np.stack([ax[0] * np.cos(th), ax[1] * np.sin(th)], axis=1)
            T = np.stack([-ax[0] * np.sin(th), ax[1] * np.cos(th)], axis=1) @ U.T
            sp = np.linalg.norm(T, axis=1)
            nrm = np.stack([T[:, 1], -T[:, 0]], axis=1) / sp[:, None]
            return BoundaryQuadrature(L @ U.T + self.center, nrm, sp * (2 * math.pi / n), th)
        V = self.vertices if breaks is None else _split_edges(self.vertices, *breaks)
        W = np.roll(V, -1, axis=0)
        lens = np.linalg.norm(W - V, axis=1)
        per = lens.sum()
        pts, nrm, wts = [], [], []
        for k in range(len(V)):
            m = max(1, int(round(n * lens[k] / per)))
            gx, gw = np.polynomial.legendre.leggauss(m)
            tt = 0.5 * (gx + 1)
            pts.append(V[k] + tt[:, None] * (W[k] - V[k]))
            e = (W[k] - V[k]) / lens[k]
            nrm.append(np.tile([e[1], -e[0]], (m, 1)))
            wts.append(0.5 * gw * lens[k])
        return BoundaryQuadrature(np.vstack(pts), np.vstack(nrm), np.concatenate(wts))

    def boundary_curve(self, n: int = 512) -> np.ndarray:
        """Closed boundary polyline (n points) for plotting and Hausdorff checks."""
        if self.kind == "polygon":
            return self.vertices.copy()
        if self.kind == "interval":
            return np.array([[self.a], [self.b]])
        return self.boundary_point(2 * math.pi * np.arange(n) / n)

    # -- convexity -----------------------------------------------------------
    def check_convex(self) -> bool:
        if self.kind != "polygon":
            return True
        return _polygon_issue(self.vertices) is None

    # -- transformations -----------------------------------------------------
    def affine_image(self, A, b=None) -> "ConvexDomain":
        """Image under x -> A x + b (A invertible)."""
        A = np.atleast_2d(np.asarray(A, float))
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, float).reshape(A.shape[0])
        det = float(np.linalg.det(A))
        if abs(det) < 1e-14:
            raise DomainError("affine map is singular")
        if self.kind == "interval":
            ends = sorted([A[0, 0] * self.a + b[0], A[0, 0] * self.b + b[0]])
            return ConvexDomain.interval(*ends)
        if self.kind == "polygon":
            V = self.vertices @ A.T + b
            if det < 0:
                V = V[::-1]
            return ConvexDomain.polygon(V)
        c = A @ self.center + b
        Ai = np.linalg.inv(A)
        Q = Ai.T @ self.Q @ Ai
        Q = 0.5 * (Q + Q.T)
        w = np.linalg.eigvalsh(Q)
        if abs(w[1] - w[0]) <= 1e-13 * w[1]:
            return ConvexDomain.ball(c, 1.0 / math.sqrt(w.mean()))
        return ConvexDomain("ellipse", {"center": c, "matrix": Q})

    def translated(self, v) -> "ConvexDomain":
        return self.affine_image(np.eye(self.dim), v)

    def rotated(self, angle: float) -> "ConvexDomain":
        """Rotation about the origin by ``angle`` radians (2D)."""
        return self.affine_image(_rot(angle))

    def scaled(self, r: float) -> "ConvexDomain":
        return self.affine_image(r * np.eye(self.dim))

    # -- persistence -----------------------------------------------------------
    def to_dict(self) -> dict:
        if self.kind == "interval":
            params = {"a": self.a, "b": self.b}
        elif self.kind == "ball":
            params = {"center": self.center.tolist(), "radius": self.radius}
        elif self.kind == "ellipse":
            ax, U = self.principal_axes()
            ang = math.atan2(U[1, 0], U[0, 0])
            ang = (ang + 0.5 * math.pi) % math.pi - 0.5 * math.pi
            params = {"center": self.center.tolist(), "axes": ax.tolist(), "angle": ang,
                      "matrix": self.Q.tolist()}
        else:
            params = {"vertices": self.vertices.tolist()}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvexDomain":
        if "kind" not in d:
            raise DomainError("domain description needs a 'kind'")
        params = dict(d.get("params", {}))
        if d["kind"] == "ellipse" and "matrix" in params and "axes" in params:
            params.pop("axes")
            params.pop("angle", None)
        return cls(d["kind"], params)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ConvexDomain":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self):
        return f"ConvexDomain({json.dumps(self.to_dict()['params'])[:80]}, kind={self.kind!r})"


def build_domain(spec) -> ConvexDomain:
    """Domain from a ``{"kind", "params"}`` mapping, a JSON string or a file path."""
    if isinstance(spec, ConvexDomain):
        return spec
    if isinstance(spec, (str, Path)):
        text = str(spec)
        if text.lstrip().startswith("{"):
            spec = json.loads(text)
        else:
            spec = json.loads(Path(text).read_text())
    return ConvexDomain.from_dict(spec)


def vertical_section(dom: ConvexDomain, xp):
    return dom.vertical_section(xp)


def boundary_distance(dom: ConvexDomain, x):
    x = np.asarray(x, float)
    d = dom.boundary_distance(x.reshape(-1, dom.dim))
    return float(d[0]) if x.ndim <= 1 and d.size == 1 else d


def boundary_quadrature(dom: ConvexDomain, n: int = 256) -> BoundaryQuadrature:
    return dom.boundary_quadrature(n)


def check_convex(dom: ConvexDomain) -> bool:
    return dom.check_convex()


def hausdorff_to_boundary(points, dom: ConvexDomain) -> float:
    """max over points of dist(point, boundary of dom)."""
    return float(np.max(dom.boundary_distance(points)))
