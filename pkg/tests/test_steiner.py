import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from fracrigid.fracops import FracOrder, GridFunction, Lattice, seminorm_squared
from fracrigid.geometry import ConvexDomain, DomainError
from fracrigid.steiner import (FlowReport, IntervalUnion, quantization_bound, steiner_flow_report,
                               symmetrize_function, symmetrize_grid_column, symmetrize_interval, symmetrize_interval_union,
                               symmetrize_set)

times = st.floats(0, 8)


@st.composite
def unions(draw, max_k=5):
    k = draw(st.integers(1, max_k))
    cuts = sorted(draw(st.lists(st.floats(-5, 5), min_size=2 * k, max_size=2 * k, unique=True)))
    assume(all(b - a > 1e-6 for a, b in zip(cuts, cuts[1:])))
    return IntervalUnion(np.reshape(cuts, (k, 2)))


def com(M):
    return float(np.sum(M.widths * M.midpoints) / M.measure())


# -- single intervals -------------------------------------------------------------

def test_interval_closed_form_values():
    assert symmetrize_interval(1.0, 3.0, math.log(2)) == (0.0, 2.0)
    assert symmetrize_interval(-4.0, 1.0, 0.0) == (-4.0, 1.0)
    assert symmetrize_interval(1.0, 3.0, math.inf) == (-1.0, 1.0)


@given(st.floats(-10, 10), st.floats(1e-3, 10), times)
def test_interval_width_and_midpoint(a, w, t):
    at, bt = symmetrize_interval(a, a + w, t)
    assert bt - at == pytest.approx(w, rel=1e-12)
    assert 0.5 * (at + bt) == pytest.approx((a + 0.5 * w) * math.exp(-t), abs=1e-12)


@pytest.mark.parametrize("a,b,t", [(1.0, 1.0, 0.1), (2.0, 1.0, 0.1), (0.0, 1.0, -0.1), (0.0, 1.0, math.nan)])
def test_interval_rejects_bad_input(a, b, t):
    with pytest.raises(ValueError):
        symmetrize_interval(a, b, t)


# -- unions ----------------------------------------------------------------------------

def test_symmetric_pair_merges_at_log2():
    M = IntervalUnion([[-3, -1], [1, 3]])
    before = M.symmetrize(0.5 * math.log(2))
    assert len(before) == 2
    at = M.symmetrize(math.log(2))
    assert len(at) == 1 and at.intervals[0] == pytest.approx([-2, 2])
    assert M.symmetrize(5.0).intervals[0] == pytest.approx([-2, 2])


def test_asymmetric_merge_keeps_centre_of_mass():
    M = IntervalUnion([[0, 1], [3, 5]])
    # contact when 4 q - q / 2 = 3 / 2, q = 3 / 7
    tc = math.log(7 / 3)
    assert len(M.symmetrize(tc - 1e-9)) == 2
    late = M.symmetrize(tc + 0.3)
    assert len(late) == 1
    assert late.midpoints[0] == pytest.approx(8.5 / 3 * math.exp(-(tc + 0.3)), rel=1e-12)
    assert late.widths[0] == 3.0


def test_touching_intervals_fuse_on_construction():
    M = IntervalUnion([[0, 1], [1, 2.5]])
    assert len(M) == 1 and M.measure() == 2.5


def test_overlapping_intervals_rejected():
    with pytest.raises(ValueError):
        IntervalUnion([[0, 2], [1, 3]])


def test_empty_union():
    M = IntervalUnion(np.zeros((0, 2)))
    assert len(M.symmetrize(1.0)) == 0 and M.measure() == 0


@given(unions(), times)
def test_union_equimeasurable(M, t):
    assert M.symmetrize(t).measure() == M.measure()


@given(unions(), times, times)
def test_union_semigroup(M, t, s):
    assert M.symmetrize(t).symmetrize(s).hausdorff(M.symmetrize(t + s)) <= 1e-12 * (1 + np.abs(M.intervals).max())


@given(unions(), times)
def test_union_centre_of_mass_decays(M, t):
    assert com(M.symmetrize(t)) == pytest.approx(com(M) * math.exp(-t), abs=1e-12)


@given(unions())
def test_union_limit_is_centred(M):
    inf = M.symmetrize(math.inf)
    assert len(inf) == 1 and inf.intervals[0] == pytest.approx([-0.5 * M.measure(), 0.5 * M.measure()])


@given(unions(), st.lists(st.floats(0, 0.49), min_size=10, max_size=10), times)
def test_union_monotone_under_inclusion(M, grow, t):
    I = M.intervals
    gaps = np.concatenate([[1.0], I[1:, 0] - I[:-1, 1], [1.0]])
    g = np.reshape(grow[: 2 * len(M)], (len(M), 2)) * np.stack([gaps[:-1], gaps[1:]], 1)
    N = IntervalUnion(I + g * [-1, 1])
    assert M.symmetrize(t).issubset(N.symmetrize(t), tol=1e-12)


def test_free_function_matches_method():
    M = IntervalUnion([[-4, -3], [0, 1], [2, 2.5]])
    assert symmetrize_interval_union(M, 0.7).hausdorff(M.symmetrize(0.7)) == 0


# -- sets ---------------------------------------------------------------------------------

def test_ball_moves_to_axis():
    dom = ConvexDomain.ball((0.3, 0.5), 0.8)
    out = symmetrize_set(dom, 1.0)
    assert out.kind == "ball"
    assert out.center == pytest.approx([0.3, 0.5 * math.exp(-1)])


@given(st.tuples(st.floats(0.3, 2), st.floats(0.3, 2)), st.floats(0, math.pi), st.floats(-1, 1), times,
       st.floats(0.02, 0.98))
def test_ellipse_sections_follow_interval_flow(ax, ang, cy, t, f):
    dom = ConvexDomain.ellipse(ax, (0.2, cy), ang)
    out = symmetrize_set(dom, t)
    assert out.volume == pytest.approx(dom.volume, rel=1e-10)
    lo, hi = dom.projection()
    x = lo + f * (hi - lo)
    ref = symmetrize_interval(*dom.vertical_section(x), t)
    assert out.vertical_section(x) == pytest.approx(ref, abs=1e-9)


def test_polygon_sections_follow_interval_flow():
    th = 0.3 + 2 * math.pi * np.arange(7) / 7
    dom = ConvexDomain.polygon(np.stack([np.cos(th) + 0.2, 0.6 * np.sin(th) + 0.4], 1))
    for t in (0.1, 0.7, 3.0):
        out = symmetrize_set(dom, t)
        assert out.volume == pytest.approx(dom.volume, rel=1e-12)
        lo, hi = dom.projection()
        for x in np.linspace(lo + 1e-3, hi - 1e-3, 23):
            assert out.vertical_section(x) == pytest.approx(symmetrize_interval(*dom.vertical_section(x), t),
                                                            abs=1e-12)


def test_rotated_direction():
    dom = ConvexDomain.ball((0.5, 0.0), 1.0)
    # symmetrize along e_2 rotated by 90 degrees: the x offset decays
    out = symmetrize_set(dom, math.log(2), angle=math.pi / 2)
    assert out.center == pytest.approx([0.25, 0.0], abs=1e-12)


def test_interval_domain():
    out = symmetrize_set(ConvexDomain.interval(1, 3), math.log(2))
    assert (out.a, out.b) == (0.0, 2.0)


def test_nonconvex_set_rejected():
    dom = ConvexDomain.polygon([[0, 0], [2, 0], [1, 0.5], [2, 2], [0, 2]], validate=False)
    with pytest.raises(DomainError):
        symmetrize_set(dom, 0.5)


# -- functions ------------------------------------------------------------------------

def grid_1d(n=257, L=2.0):
    return Lattice((-L,), 2 * L / (n - 1), (n,))


def two_bumps(lat, c1=-0.8, c2=0.5, r1=0.4, r2=0.3):
    x = lat.axes()[-1]
    if lat.ndim == 2:
        X, x = np.meshgrid(lat.axes()[0], x, indexing="ij")
    u = np.clip(1 - ((x - c1) / r1) ** 2, 0, None) ** 2 + 0.6 * np.clip(1 - ((x - c2) / r2) ** 2, 0, None) ** 2
    if lat.ndim == 2:
        u = u * np.clip(1 - X**2, 0, None)
    return GridFunction(lat, u)


@given(st.floats(0.01, 5), st.floats(-0.5, 0.5))
def test_snap_is_a_columnwise_rearrangement(t, shift):
    lat = Lattice((-1.5, -2.0), 3.0 / 40, (41, 65))
    u = two_bumps(lat, c1=-0.8 + shift)
    ut = symmetrize_function(u, t)
    # values are rebuilt from layer increments, so equal up to rounding
    for a, b in zip(u.values, ut.values):
        assert np.allclose(np.sort(a), np.sort(b), rtol=0, atol=4e-16)


@given(st.floats(0.01, 5))
def test_overlap_keeps_integral(t):
    u = two_bumps(grid_1d())
    ut = symmetrize_function(u, t, resample="overlap")
    assert ut.integral() == pytest.approx(u.integral(), rel=1e-12)
    assert ut.values.max() <= u.values.max() * (1 + 1e-12)


def test_time_zero_is_identity():
    u = two_bumps(grid_1d())
    assert np.array_equal(symmetrize_function(u, 0.0).values, u.values)


def test_symmetric_decreasing_is_fixed():
    lat = grid_1d(256)
    x = lat.axes()[0] + 0.5 * lat.h  # nodes symmetric about 0
    lat = Lattice((x[0],), lat.h, lat.dims)
    u = GridFunction(lat, np.exp(-4 * lat.axes()[0] ** 2))
    for t in (0.1, 1.0, math.inf):
        assert np.array_equal(symmetrize_function(u, t).values, u.values)


def test_infinite_time_is_unimodal_and_centred():
    lat = Lattice((-2.0 + 2.0 / 256,), 4.0 / 256, (256,))
    u = two_bumps(lat)
    v = symmetrize_function(u, math.inf).values
    k = int(np.argmax(v))
    assert np.all(np.diff(v[: k + 1]) >= -1e-15) and np.all(np.diff(v[k:]) <= 1e-15)
    # every superlevel run sits within half a cell of the centre
    x = lat.axes()[0]
    assert abs(np.sum(x * v) / np.sum(v)) <= 0.5 * lat.h


def test_levels_mode_error_bound():
    u = two_bumps(grid_1d())
    exact = symmetrize_function(u, 0.6, resample="overlap")
    coarse = symmetrize_function(u, 0.6, levels=64, resample="overlap")
    assert np.abs(coarse.values - exact.values).max() <= u.values.max() / 64 * (1 + 1e-9)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.05, 0.3, 1.0, 4.0]), st.sampled_from([1.0, 2.0, math.inf]))
def test_snap_error_within_quantization_bound(seed, t, p):
    # overlap is the cell average of the exact rearrangement and averaging is an
    # L^p contraction, so snap - overlap is no larger than snap - exact
    rng = np.random.default_rng(seed)
    lat = grid_1d()
    x = lat.axes()[0]
    u = np.zeros_like(x)
    for _ in range(3):
        c, r = rng.uniform(-1, 1), rng.uniform(0.1, 0.5)
        u += rng.uniform(0.2, 1) * np.clip(1 - ((x - c) / r) ** 2, 0, None)
    u = GridFunction(lat, u)
    d = symmetrize_function(u, t).values - symmetrize_function(u, t, resample="overlap").values
    assert u.with_values(d).lp_norm(p) <= quantization_bound(u, p) * (1 + 1e-12)


def test_quantization_bound_of_a_block():
    lat = Lattice((0.0,), 0.5, (10,))
    u = GridFunction(lat, np.r_[np.zeros(3), np.full(4, 2.0), np.zeros(3)])
    # one run of height 2: L1 error at most 2 h, pointwise at most 2
    assert quantization_bound(u, 1.0) == pytest.approx(1.0)
    assert quantization_bound(u, math.inf) == 2.0
    assert quantization_bound(u, 2.0) == pytest.approx(math.sqrt(2.0))
    assert quantization_bound(u, math.inf, levels=20) == pytest.approx(2.1)


@pytest.mark.parametrize("kw,msg", [({"levels": 8}, "levels"), ({"resample": "nearest"}, "resample")])
def test_function_options_validated(kw, msg):
    with pytest.raises(ValueError, match=msg):
        symmetrize_function(two_bumps(grid_1d()), 0.3, **kw)


def test_negative_function_rejected():
    u = two_bumps(grid_1d())
    with pytest.raises(ValueError):
        symmetrize_function(u.with_values(u.values - 0.1), 0.3)


def test_support_leaving_grid_raises():
    lat = Lattice((0.0,), 0.01, (200,))
    u = GridFunction(lat, np.where(lat.axes()[0] > 1.5, 1.0, 0.0))
    with pytest.raises(ValueError, match="leaves the grid"):
        symmetrize_function(u, 5.0)


def test_grid_column_helper_matches_function():
    lat = grid_1d()
    u = two_bumps(lat)
    col = symmetrize_grid_column(u.values, lat.origin[0], lat.h, 0.4)
    assert np.array_equal(col, symmetrize_function(u, 0.4).values)


def test_translated_profile_snaps_to_lattice_shift():
    lat = Lattice((-2.0,), 0.01, (401,))
    x = lat.axes()[0]
    u = GridFunction(lat, np.clip(1 - ((x - 0.8) / 0.3) ** 2, 0, None))
    ut = symmetrize_function(u, math.log(2))
    # the centre moves from 0.8 to 0.4: an exact shift by 40 cells
    assert np.array_equal(ut.values, np.roll(u.values, -40))


# -- flow reports -------------------------------------------------------------------

def test_flow_report_decreases_for_two_bumps():
    u = two_bumps(grid_1d(513))
    rep = steiner_flow_report(u, FracOrder(0.5, 1), np.linspace(0, 0.5, 6))
    assert rep.strictly_decreasing
    assert rep.weakly_decreasing()
    assert np.all(np.diff(rep.energies) < 0)


def test_flow_report_csv_roundtrip(tmp_path):
    u = two_bumps(grid_1d())
    rep = steiner_flow_report(u, FracOrder(0.4, 1), [0, 0.1, 0.2, 0.4])
    rep.to_csv(tmp_path / "flow.csv")
    back = FlowReport.from_csv(tmp_path / "flow.csv")
    assert np.array_equal(back.energies, rep.energies)
    assert back.rate == rep.rate


@pytest.mark.parametrize("ts", [[], [0.1, 0.2], [0, 0.2, 0.1]])
def test_flow_report_validates_times(ts):
    with pytest.raises(ValueError):
        steiner_flow_report(two_bumps(grid_1d()), FracOrder(0.5, 1), ts)


def test_energy_flat_for_symmetric_profile():
    lat = Lattice((-2.0 + 2.0 / 256,), 4.0 / 256, (256,))
    u = GridFunction(lat, np.exp(-5 * lat.axes()[0] ** 2))
    rep = steiner_flow_report(u, FracOrder(0.5, 1), [0, 0.25, 0.5])
    assert np.ptp(rep.energies) <= 1e-12 * rep.energies[0]
    assert seminorm_squared(u, FracOrder(0.5, 1)) == rep.energies[0]
