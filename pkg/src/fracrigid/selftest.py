"""Seeded property suites behind ``fracrigid selftest``.

Each suite draws random inputs from one ``numpy.random.Generator`` and
returns ``{"name", "ok", "detail"}``.  The suites are small versions of the
package's property tests and run in well under a minute.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .fracops import FracOrder, GridFunction, Lattice, riesz_pairing, seminorm_squared
from .geometry import ConvexDomain
from .shape import SteinerField, deform, volume_derivative
from .steiner import IntervalUnion, symmetrize_function, symmetrize_interval, symmetrize_set


def _random_union(rng, k=None):
    k = int(rng.integers(1, 6)) if k is None else k
    cuts = np.sort(rng.uniform(-5, 5, 2 * k))
    return IntervalUnion(cuts.reshape(k, 2))


def suite_interval(rng) -> dict:
    worst = 0.0
    for _ in range(1000):
        a = rng.uniform(-10, 10)
        b = a + rng.uniform(1e-3, 10)
        t = rng.exponential(1.0)
        at, bt = symmetrize_interval(a, b, t)
        worst = max(worst, abs((bt - at) - (b - a)) / (b - a))
    ok = symmetrize_interval(1.0, 3.0, math.log(2)) == (0.0, 2.0) and worst <= 1e-14
    return {"name": "interval closed form", "ok": bool(ok), "detail": f"max width drift {worst:.1e}"}


def suite_union_axioms(rng) -> dict:
    bad = []
    for _ in range(300):
        M = _random_union(rng)
        t, s = rng.exponential(1.0, 2)
        if abs(M.symmetrize(t).measure() - M.measure()) > 1e-12 * M.measure():
            bad.append("measure")
        if M.symmetrize(t).symmetrize(s).hausdorff(M.symmetrize(t + s)) > 1e-12:
            bad.append("semigroup")
        # a nested pair: grow every interval of M into less than half of each gap
        I = M.intervals
        gaps = np.concatenate([[1.0], I[1:, 0] - I[:-1, 1], [1.0]])
        grow = rng.uniform(0, 0.49, (len(M), 2)) * np.stack([gaps[:-1], gaps[1:]], axis=1)
        N = IntervalUnion(I + grow * [-1, 1])
        if not M.symmetrize(t).issubset(N.symmetrize(t), tol=1e-12):
            bad.append("monotonicity")
    return {"name": "interval-union axioms", "ok": not bad,
            "detail": "all hold" if not bad else f"violations: {sorted(set(bad))}"}


def _bumps(rng, x, count):
    u = np.zeros_like(x[0])
    for _ in range(count):
        c = rng.uniform(-1, 1, len(x))
        r = rng.uniform(0.15, 0.6)
        a = rng.uniform(0.2, 1.0)
        rho = sum((xi - ci) ** 2 for xi, ci in zip(x, c)) / r**2
        u += a * np.clip(1 - rho, 0, None) ** 2
    return u


def suite_functions(rng) -> dict:
    lat = Lattice((-2.5,), 5 / 512, (513,))
    x = (lat.axes()[0],)
    o = FracOrder(0.5, 1)
    worst_e = worst_p = worst_n = -np.inf
    for _ in range(15):
        u = GridFunction(lat, _bumps(rng, x, int(rng.integers(1, 4))))
        v = GridFunction(lat, _bumps(rng, x, int(rng.integers(1, 4))))
        e0 = seminorm_squared(u, o)
        p0 = riesz_pairing(u, u, o, 0.1)
        for t in (0.1, 0.5, 2.0):
            ut, vt = symmetrize_function(u, t), symmetrize_function(v, t)
            worst_e = max(worst_e, seminorm_squared(ut, o) / e0 - 1)
            worst_p = max(worst_p, 1 - riesz_pairing(ut, ut, o, 0.1) / p0)
            d0 = np.abs(u.values - v.values).sum()
            worst_n = max(worst_n, (np.abs(ut.values - vt.values).sum() - d0) / max(d0, 1e-300))
    ok = worst_e <= 1e-6 and worst_p <= 1e-12 and worst_n <= 1e-12
    return {"name": "function symmetrization", "ok": bool(ok),
            "detail": f"energy excess {worst_e:.1e}, pairing loss {worst_p:.1e}, L1 expansion {worst_n:.1e}"}


def suite_steiner_field(rng) -> dict:
    worst = 0.0
    vol = 0.0
    for _ in range(4):
        c = rng.uniform(-0.5, 0.5, 2)
        dom = ConvexDomain.ellipse(rng.uniform(0.5, 1.5, 2), center=c, angle=rng.uniform(0, math.pi))
        V = SteinerField(dom)
        for t in (0.05, 0.1, 0.5):
            a = deform(dom, V, t).boundary_curve(256)
            b = symmetrize_set(dom, t)
            worst = max(worst, float(np.max(b.boundary_distance(a))))
        vol = max(vol, abs(volume_derivative(dom, V)) / dom.volume)
    ok = worst <= 1e-8 and vol <= 1e-6
    return {"name": "Steiner field vs set flow", "ok": bool(ok),
            "detail": f"Hausdorff {worst:.1e}, |dVol.V|/Vol {vol:.1e}"}


SUITES = (suite_interval, suite_union_axioms, suite_functions, suite_steiner_field)


def run_suites(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for suite in SUITES:
        t0 = time.perf_counter()
        try:
            r = suite(rng)
        except Exception as exc:  # a crash is a failed suite, not a crashed run
            r = {"name": suite.__name__, "ok": False, "detail": f"{type(exc).__name__}: {exc}"}
        r["seconds"] = round(time.perf_counter() - t0, 3)
        out.append(r)
    return out
