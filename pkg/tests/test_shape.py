import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracrigid.eigensolve import boundary_ratio, solve_lambda
from fracrigid.fracops import FracOrder, gamma_factor
from fracrigid.geometry import ConvexDomain, DomainError
from fracrigid.shape import (AffineField, Dilation, NormalBump, ShapeReport, StepTooLargeError,
                             SteinerField, Translation, battery, deform, finite_difference_shape_derivative,
                             normalization, pushed_volume, rigidity_check, shape_derivative, shape_functional,
                             steiner_flow_curve, steiner_vector_field, volume_derivative)
from fracrigid.steiner import symmetrize_set

INTERVAL = ConvexDomain.interval()
DISK = ConvexDomain.ball()
ELLIPSE = ConvexDomain.ellipse((1.3, 0.8))


def heptagon(shift=(0.2, 0.4)):
    th = 0.3 + 2 * math.pi * np.arange(7) / 7
    return ConvexDomain.polygon(np.stack([np.cos(th) + shift[0], 0.6 * np.sin(th) + shift[1]], 1))


ellipses = st.builds(lambda a, b, ang, cx, cy: ConvexDomain.ellipse((a, b), (cx, cy), ang),
                     st.floats(0.4, 1.6), st.floats(0.4, 1.6), st.floats(0, math.pi),
                     st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))


# -- fields ------------------------------------------------------------------------------

def test_affine_fields():
    P = np.array([[1.0, 2.0], [-0.5, 0.3]])
    assert np.array_equal(Translation([1, 0])(P), [[1, 0], [1, 0]])
    assert np.allclose(Dilation(2, center=[1, 1])(P), P - 1)
    A = [[0, 1], [-1, 0]]
    X = AffineField(A, [0.5, 0])
    assert np.allclose(X(P), P @ np.array(A).T + [0.5, 0])
    assert np.allclose(X.jacobian(P), np.array(A)[None])
    assert X.lipschitz == pytest.approx(1.0)


def test_bump_is_normal_on_boundary_and_supported():
    X = NormalBump(ELLIPSE, 2)
    q = ELLIPSE.boundary_quadrature(256)
    V = X(q.points)
    # parallel to the normal
    assert np.allclose(V[:, 0] * q.normals[:, 1] - V[:, 1] * q.normals[:, 0], 0, atol=1e-12)
    # cos^2 profile on a quarter of the boundary centred at theta = pi / 2
    a = np.angle(np.exp(1j * (q.theta - math.pi / 2)))
    beta = np.where(np.abs(a) < math.pi / 4, np.cos(2 * a) ** 2, 0)
    assert np.allclose(np.sum(V * q.normals, 1), beta, atol=1e-12)
    assert np.allclose(X(np.array([[0.1, 0.05]])), 0)
    assert np.isfinite(X.lipschitz)


def test_bump_needs_smooth_domain():
    with pytest.raises(DomainError):
        NormalBump(heptagon(), 0)


def test_bumps_partition_unity_on_boundary():
    q = ELLIPSE.boundary_quadrature(128)
    tot = sum(np.sum(NormalBump(ELLIPSE, k)(q.points) * q.normals, 1) for k in range(8))
    assert np.allclose(tot, 1.0)


@given(ellipses, st.floats(0, math.pi))
def test_steiner_field_on_boundary_is_minus_midpoint(dom, ang):
    V = SteinerField(dom, ang)
    rot = dom.rotated(-ang)
    q = dom.boundary_quadrature(64)
    xp = q.points @ np.array([math.cos(ang), math.sin(ang)])
    y1, y2 = rot.vertical_section(np.clip(xp, *rot.projection()))
    e = np.array([-math.sin(ang), math.cos(ang)])
    assert np.allclose(V(q.points), -0.5 * (y1 + y2)[:, None] * e[None], atol=1e-9)


def test_steiner_field_vanishes_outside_unless_extended():
    V = SteinerField(ConvexDomain.ball((0, 0.5), 1.0))
    far = np.array([[5.0, 5.0]])
    assert np.allclose(V(far), 0)
    assert np.allclose(V.with_extension()(far), [[0, -0.5]])
    assert V.affine is not None and V.with_extension().affine is None


def test_polygon_steiner_jacobian_matches_difference_quotient():
    dom = heptagon()
    V = SteinerField(dom, extend=True)
    rng = np.random.default_rng(0)
    lo, hi = dom.bbox
    P = rng.uniform(lo, hi, (50, 2))
    bk = V.breakpoints()
    P = P[np.min(np.abs(P[:, :1] - bk[None]), axis=1) > 1e-3]
    J = V.jacobian(P)
    eps = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        num = (V(P + e) - V(P - e)) / (2 * eps)
        assert np.allclose(J[:, :, j], num, atol=1e-5)
    assert V.lipschitz > 0


def test_interval_steiner_field_is_translation():
    V = steiner_vector_field(ConvexDomain.interval(1, 3))
    assert np.allclose(V(np.array([[2.0], [1.5]])), -2.0)
    assert V.lipschitz == 0.0


def test_battery_layout():
    names = [X.name for X in battery(ELLIPSE)]
    assert names == (["translation-x", "translation-y", "identity"] + [f"bump-{k}" for k in range(8)]
                     + ["steiner-45"])
    assert [X.name for X in battery(INTERVAL)] == ["translation-x", "identity", "steiner-0"]


# -- volumes ------------------------------------------------------------------------------

@pytest.mark.parametrize("dom", [ELLIPSE, heptagon(), ConvexDomain.ball((0.3, 0.2), 0.7)])
def test_volume_derivatives(dom):
    assert volume_derivative(dom, Dilation(2)) == pytest.approx(2 * dom.volume, rel=1e-10)
    assert volume_derivative(dom, Translation([0.3, -0.7])) == pytest.approx(0, abs=1e-10)
    assert volume_derivative(dom, SteinerField(dom, 0.4)) == pytest.approx(0, abs=1e-6 * dom.volume)


def test_volume_derivative_matches_pushed_volume():
    X = NormalBump(ELLIPSE, 1)
    tau = 1e-4
    fd = (pushed_volume(ELLIPSE, X, tau) - pushed_volume(ELLIPSE, X, -tau)) / (2 * tau)
    assert volume_derivative(ELLIPSE, X) == pytest.approx(fd, rel=1e-6)


@given(ellipses, st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_pushed_volume_affine_is_exact(dom, a, b):
    A = np.array([[a, b], [0.2, -a]])
    X = AffineField(A, [0.1, 0.0])
    assert pushed_volume(dom, X, 0.5) == pytest.approx(abs(np.linalg.det(np.eye(2) + 0.5 * A)) * dom.volume,
                                                       rel=1e-10)


def test_pushed_volume_polygon_and_interval():
    dom = heptagon()
    X = AffineField([[0.1, 0.2], [0.0, -0.3]])
    assert pushed_volume(dom, X, 0.7) == pytest.approx(deform(dom, X, 0.7).volume, rel=1e-10)
    assert pushed_volume(INTERVAL, Dilation(1), 0.5) == pytest.approx(3.0)


# -- deformations -------------------------------------------------------------------------

@settings(max_examples=25)
@given(ellipses, st.floats(0, math.pi), st.sampled_from([0.05, 0.1, 0.5, 2.0]))
def test_steiner_flow_equals_set_symmetrization(dom, ang, t):
    a = deform(dom, SteinerField(dom, ang), t).boundary_curve(256)
    b = symmetrize_set(dom, t, ang)
    assert float(np.max(b.boundary_distance(a))) <= 1e-8


def test_steiner_flow_equals_set_symmetrization_polygon():
    dom = heptagon()
    for t in (0.05, 0.3, 1.0):
        a = deform(dom, SteinerField(dom), t)
        b = symmetrize_set(dom, t)
        assert a.volume == pytest.approx(b.volume, rel=1e-12)
        assert float(np.max(b.boundary_distance(a.vertices))) <= 1e-12


def test_deform_smooth_by_bump_is_convex_polygon():
    out = deform(ELLIPSE, NormalBump(ELLIPSE, 0), 0.02)
    assert out.kind == "polygon" and out.check_convex()
    assert out.volume == pytest.approx(pushed_volume(ELLIPSE, NormalBump(ELLIPSE, 0), 0.02), rel=1e-5)


def test_deform_time_zero_copies():
    out = deform(ELLIPSE, Dilation(2), 0.0)
    assert out is not ELLIPSE and out.to_dict() == ELLIPSE.to_dict()


def test_deform_detects_folding():
    with pytest.raises(StepTooLargeError):
        deform(ELLIPSE, AffineField([[1.0, 0.0], [0.0, -1.0]]), 1.5)


# -- shape derivatives ------------------------------------------------------------------------

def test_shape_functional():
    o = FracOrder(0.5, 1)
    sol = solve_lambda(INTERVAL, o, p=1.0, n=256)
    J = shape_functional(INTERVAL, o, 1.0, 0.5, sol=sol)
    assert J == pytest.approx(sol.lam + 0.25 * gamma_factor(0.5) * 2.0)
    with pytest.raises(ValueError):
        shape_functional(INTERVAL, o, 1.0, -1.0, sol=sol)


@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_interval_pohozaev_identity(s, p):
    # d lambda . x = (N - 2s - 2N/p) lambda from the fitted boundary ratio
    o = FracOrder(s, 1)
    sol = solve_lambda(INTERVAL, o, p=p, n=1024)
    tr = boundary_ratio(sol, INTERVAL, o)
    d = shape_derivative(INTERVAL, sol, tr, Dilation(1), tr.mean)
    assert d.dlam == pytest.approx((1 - 2 * s - 2 / p) * sol.lam, rel=0.03)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_interval_finite_difference_dilation_is_scaling_law(p):
    s = 0.4
    o = FracOrder(s, 1)
    sol = solve_lambda(INTERVAL, o, p=p, n=512)
    fd = finite_difference_shape_derivative(INTERVAL, o, p, 0.3, Dilation(1), n=512, base=sol.lam)
    assert fd.dlam == pytest.approx((1 - 2 * s - 2 / p) * sol.lam, rel=1e-4)
    assert fd.dvol == pytest.approx(2.0, rel=1e-10)
    assert fd.estimate == pytest.approx(fd.dlam + 0.09 * gamma_factor(s) * fd.dvol, rel=1e-12)


def test_translation_derivatives_vanish_on_disk():
    o = FracOrder(0.5, 2)
    sol = solve_lambda(DISK, o, p=1.0, n=48)
    tr = boundary_ratio(sol, DISK, o)
    for X in battery(DISK)[:2]:
        d = shape_derivative(DISK, sol, tr, X, tr.mean)
        assert abs(d.dJ) <= 1e-3 * normalization(DISK, tr, X, tr.mean, 0.5)


def test_shape_derivative_rejects_missing_trace():
    o = FracOrder(0.5, 1)
    sol = solve_lambda(INTERVAL, o, p=1.0, n=128)
    tr = boundary_ratio(sol, INTERVAL, o)
    with pytest.raises(ValueError):
        shape_derivative(INTERVAL, sol, None, Dilation(1), 1.0)
    tr.values = np.array([np.nan, 1.0])
    with pytest.raises(ValueError):
        shape_derivative(INTERVAL, sol, tr, Dilation(1), 1.0)


def test_finite_difference_validates_times():
    with pytest.raises(ValueError):
        finite_difference_shape_derivative(INTERVAL, FracOrder(0.5, 1), 1.0, 0.5, Dilation(1), times=(0.01, 0.02),
                                           n=64)


# -- rigidity -----------------------------------------------------------------------------------

def test_interval_is_critical_and_flow_flat():
    o = FracOrder(0.5, 1)
    rep = rigidity_check(ConvexDomain.interval(0, 2), o, 1.5, n=1024, flow_times=[0, 0.1, 0.2])
    assert rep.critical
    assert rep.max_normalized < 1e-10
    assert np.ptp(rep.flow["J"]) <= 1e-12 * rep.J
    # a shifted interval has a nonzero Steiner field that is a pure translation
    assert rep.steiner_sweep["0"] == pytest.approx(0, abs=1e-10)


def test_rigidity_refuses_polygons():
    with pytest.raises(DomainError):
        rigidity_check(heptagon(), FracOrder(0.5, 2), 1.5, n=48)
    bad = ConvexDomain.polygon([[0, 0], [2, 0], [1, 0.5], [2, 2], [0, 2]], validate=False)
    with pytest.raises(DomainError, match="convex"):
        rigidity_check(bad, FracOrder(0.5, 2), 1.5, n=48)


def test_report_roundtrip(tmp_path):
    rep = rigidity_check(INTERVAL, FracOrder(0.5, 1), 1.0, n=512)
    rep.to_json(tmp_path / "r.json")
    back = ShapeReport.from_json(tmp_path / "r.json")
    assert back.verdict == rep.verdict and back.entries == rep.entries
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("field,dJ_analytic")
    with pytest.raises(ValueError):
        rep.flow_to_csv(tmp_path / "f.csv")


def test_steiner_flow_curve_on_translated_interval():
    dom = ConvexDomain.interval(0.5, 2.5)
    o = FracOrder(0.5, 1)
    out = steiner_flow_curve(dom, o, 1.5, 0.4, 0.0, [0, 0.2, 0.4], n=512)
    assert np.ptp(out["J"]) <= 1e-10 * out["J"][0]
    assert out["volume"] == pytest.approx([2.0, 2.0, 2.0])
