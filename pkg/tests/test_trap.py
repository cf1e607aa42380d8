import csv
import io
import json
import warnings

import numpy as np
import pytest
from skimage import measure

from geomtrap import fields as F
from geomtrap import reduction as R
from geomtrap import trap as T
from geomtrap.numerics import Grid


def spin(spec):
    return R.SpinHalf(spec)


# -- scans ------------------------------------------------------------------------

def test_uniform_scan_constant():
    s = spin(F.FieldSpec((F.UniformField((0.3, 0, 0.4)),)))
    res = T.scan_potential(s, Grid.from_bounds([-1, -1, -1], [1, 1, 1], 5))
    assert res.valid.all()
    assert np.allclose(res.v_total, -0.5) and np.allclose(res.v_geom, 0)


def test_helical_line_scan():
    s = spin(F.helical_xz(1.0, 2.0))
    res = T.scan_potential(s, Grid.from_bounds([0], [3], 200, axes=(1,)))
    assert np.allclose(res.v_total, -1 + 4 / 8, atol=1e-8)


def test_scan_row_major_and_csv():
    s = spin(F.preset_ring_waveguide())
    g = Grid.from_bounds([-0.5, -0.4], [0.5, 0.4], [4, 3], axes=(0, 1))
    res = T.scan_potential(s, g)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["x", "y", "z", "v_dyn", "v_geom", "v_total", "valid"]
    xy = [(float(r[0]), float(r[1])) for r in rows[1:]]
    # last grid axis varies fastest
    assert xy[:3] == [(-0.5, -0.4), (-0.5, 0.0), (-0.5, 0.4)]
    assert len(xy) == 12
    assert float(rows[5][5]) == res.v_total.ravel()[4]
    d = json.loads(res.to_json())
    assert d["columns"][-1] == "valid" and len(d["v_total"]) == 12


def test_scan_deterministic():
    s = spin(F.preset_cube_trap())
    g = Grid.from_bounds([-0.5] * 3, [0.5] * 3, 6)
    assert T.scan_potential(s, g).to_csv() == T.scan_potential(s, g).to_csv()


def test_scan_warns_when_mostly_invalid():
    s = spin(F.FieldSpec((F.UniformField((0, 0, 0)),)))
    with pytest.warns(T.ScanWarning, match="invalid"):
        res = T.scan_potential(s, Grid.from_bounds([0, 0], [1, 1], 3, axes=(0, 1)))
    assert not res.valid.any()
    assert "nan" in res.to_csv() and res.to_dict()["v_total"][0] is None


def test_without_geometric_part():
    s = spin(F.helical_xz(1.0, 2.0))
    res = T.scan_potential(s, Grid.from_bounds([0], [1], 5, axes=(1,)), include_geom=False)
    assert np.allclose(res.v_total, -1)


def test_waveguide_landscape_shape():
    s = spin(F.preset_ring_waveguide(N=10, a=1.0, B0=1.0))
    r = np.linspace(0, 1.3, 66)
    th = np.pi / 10  # between two wires
    pts = np.stack([r * np.cos(th), r * np.sin(th), 0 * r], -1)
    V = T.as_potential(s)(pts)
    k = int(np.argmax(V))
    assert 0.5 < r[k] < 1.0
    assert np.all(np.diff(V[: k + 1]) >= -1e-12)
    assert V[-1] < V[k] and np.argmin(V[: k + 1]) == 0


# -- minima -----------------------------------------------------------------------

BOX = (np.full(3, -1.0), np.full(3, 1.0))


def test_quadratic_bowl():
    c = np.array([0.2, -0.3, 0.1])
    V = lambda x: np.sum((x - c) ** 2, axis=-1) + 1.0  # noqa: E731
    ms = T.find_minima(V, BOX, n_starts=8)
    assert len(ms) == 1
    m = ms[0]
    assert m.kind == "minimum" and np.allclose(m.location, c, atol=1e-6)
    assert np.allclose(m.hessian_eigenvalues, 2.0, rtol=1e-5)
    assert m.gradient_norm < 1e-6 * abs(m.value) / 2.0


def test_saddle_excluded():
    V = lambda x: x[..., 0] ** 2 - x[..., 1] ** 2 + x[..., 2] ** 2  # noqa: E731
    eigs, kind = T.classify_point(V, np.zeros(3))
    assert kind == "saddle" and np.allclose(sorted(eigs), [-2, 2, 2], rtol=1e-6)
    with pytest.warns(T.ScanWarning):
        assert T.find_minima(lambda x: x[..., 0] ** 2 - x[..., 1] ** 2, BOX, n_starts=8) == []


def test_classify_hessian_cases():
    assert T.classify_hessian([1, 2, 3], 1e-8) == "minimum"
    assert T.classify_hessian([-1, -2, -3], 1e-8) == "maximum"
    assert T.classify_hessian([-1, 2, 3], 1e-8) == "saddle"
    assert T.classify_hessian([1e-12, 2, 3], 1e-8) == "degenerate"
    # relative floor: a tiny eigenvalue next to large ones counts as zero
    assert T.classify_hessian([1e-5, 100, 200], 1e-8) == "degenerate"


def test_two_wells_sorted_and_deterministic():
    def V(x):
        a = np.sum((x - [0.5, 0, 0]) ** 2, axis=-1)
        b = np.sum((x + [0.5, 0, 0]) ** 2, axis=-1)
        return np.minimum(a, b + 0.1) + 1.0 - 0.0 * x[..., 0]

    ms = T.find_minima(V, BOX, n_starts=16, seed=3)
    assert [round(m.location[0], 4) for m in ms] == [0.5, -0.5]
    assert ms[0].value < ms[1].value
    again = T.find_minima(V, BOX, n_starts=16, seed=3)
    assert [m.to_dict() for m in ms] == [m.to_dict() for m in again]


def test_minimum_record_json():
    m = T.Minimum(np.zeros(3), -1.0, np.ones(3), "minimum", 1e-9, 2)
    d = json.loads(json.dumps(m.to_dict()))
    assert d["class"] == "minimum" and d["seed_index"] == 2


def test_cube_trap_minimum_needs_geometric_potential():
    s = spin(F.preset_cube_trap(a=2.0, B0=(0, 0, 0.5), I=1.0))
    x0 = np.array([0.05545991, -0.08615292, 0.14481866])
    eigs, kind = T.classify_point(s, x0)
    assert kind == "minimum"
    _, kind_dyn = T.classify_point(R.total_potential(s, include_geom=False), x0)
    assert kind_dyn != "minimum"


# -- Wing ---------------------------------------------------------------------------

def test_wing_uniform_and_single_wire():
    u = F.FieldSpec((F.UniformField((0, 0, 1)),))
    (_, lap, _), = T.wing_check(u, [[0.3, 0.1, 0.2]])
    assert abs(lap) < 1e-6
    w = F.FieldSpec((F.WireLine((0, 0, 0), (0, 0, 1), 1.0),))
    (_, lap, _), = T.wing_check(w, [[1.0, 0.0, 0.3]])
    assert abs(lap - 1.0) < 1e-6


def test_wing_cube_random_points():
    spec = F.preset_cube_trap()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.9, 0.9, size=(400, 3))
    pts = pts[np.all(F.wire_distances(spec, pts) > 0.1, axis=-1)][:100]
    out = T.wing_check(spec, pts)
    assert len(out) == 100
    assert min(l / s for _, l, s in out) >= -1e-6


def test_wing_skips_invalid_points():
    w = F.FieldSpec((F.WireLine((0, 0, 0), (0, 0, 1), 1.0),))
    with pytest.warns(T.ScanWarning, match="skipped 1"):
        out = T.wing_check(w, [[0, 0, 0], [1, 0, 0]])
    assert len(out) == 1


# -- contours -------------------------------------------------------------------------

def circle_scan(n=81, shift=(0.0, 0.0)):
    g = Grid.from_bounds(np.array([-2, -2]) + shift, np.array([2, 2]) + shift, n, axes=(0, 1))
    return T.ScanResult.from_function(g, lambda x: x[..., 0] ** 2 + x[..., 1] ** 2)


def test_circle_contour():
    scan = circle_scan()
    cs = T.contour_slice(scan, 1.0, reference=(0, 0))
    assert len(cs) == 1
    c = cs[0]
    assert c.closed and c.encloses
    assert np.array_equal(c.points[0], c.points[-1])
    r = np.hypot(*c.points.T)
    assert np.abs(r - 1).max() < scan.grid.spacing[0]
    assert not c.contains((1.5, 0))


def test_matches_skimage_oracle():
    scan = circle_scan(n=41)
    vals = scan.v_total
    ours = T.contour_slice(scan, 1.3)[0].points
    ref = measure.find_contours(vals, 1.3)[0]
    h = scan.grid.spacing[0]
    ref_xy = -2 + ref * h  # index -> coordinate
    # every vertex of ours lies on a vertex of the oracle polyline
    d = np.min(np.linalg.norm(ours[:, None, :] - ref_xy[None, :, :], axis=-1), axis=1)
    assert d.max() < 1e-12
    assert len(np.unique(np.round(ours, 12), axis=0)) == len(np.unique(np.round(ref_xy, 12), axis=0))


def test_line_contour_open():
    g = Grid.from_bounds([-1, -1], [1, 1], 21, axes=(0, 1))
    scan = T.ScanResult.from_function(g, lambda x: x[..., 0] + 0.013)
    cs = T.contour_slice(scan, 0.0)
    assert len(cs) == 1 and not cs[0].closed
    assert np.allclose(cs[0].points[:, 0], -0.013)
    assert np.ptp(cs[0].points[:, 1]) == pytest.approx(2.0)


def test_level_out_of_range():
    assert T.contour_slice(circle_scan(), 100.0) == []
    assert T.contour_slice(circle_scan(), -1.0) == []


def test_translation_by_whole_cells():
    h = 4 / 80
    a = T.contour_slice(circle_scan(), 1.0)[0].points
    b = T.contour_slice(circle_scan(shift=(3 * h, -2 * h)), 1.0)[0].points
    ka = {tuple(np.round(p, 9)) for p in a}
    kb = {tuple(np.round(p, 9)) for p in b}
    assert ka == kb


def test_saddle_cell_rule():
    # corners v00 = v11 = 1 above, v10 = v01 = 0 below; mean 0.5
    vals = np.array([[1.0, 0.0], [0.0, 1.0]])
    xs = ys = np.array([0.0, 1.0])
    low = T.marching_squares(vals, xs, ys, 0.4)   # centre above -> separate the low corners
    high = T.marching_squares(vals, xs, ys, 0.6)  # centre below -> separate the high corners
    assert len(low) == 2 and len(high) == 2
    mids_low = sorted(tuple(np.round(p.mean(axis=0), 3)) for p, _ in low)
    mids_high = sorted(tuple(np.round(p.mean(axis=0), 3)) for p, _ in high)
    assert mids_low == [(0.2, 0.8), (0.8, 0.2)]
    assert mids_high == [(0.2, 0.2), (0.8, 0.8)]


def test_nan_cells_skipped():
    scan = circle_scan(n=41)
    scan.v_dyn[20, 20] = np.nan
    scan.valid[20, 20] = False
    cs = T.contour_slice(scan, 1.0, reference=(0, 0))
    assert len(cs) == 1 and cs[0].closed


def test_waveguide_inner_contour():
    s = spin(F.preset_ring_waveguide())
    g = Grid.from_bounds([-1.3, -1.3], [1.3, 1.3], 64, axes=(0, 1))
    scan = T.scan_potential(s, g)
    V0 = float(T.as_potential(s)(np.zeros(3)))
    cs = T.contour_slice(scan, V0 + 1e-3, reference=(0, 0))
    inner = [c for c in cs if c.encloses]
    assert inner and all(c.closed for c in inner)


def test_slices_around_point():
    V = lambda x: np.sum(np.array([1.0, 2.0, 3.0]) * x**2, axis=-1)  # noqa: E731
    out = T.slice_contours_around(V, np.zeros(3), 0.01, 0.2, n=33)
    assert set(out) == {"xy", "xz", "yz"}
    assert all(len(v) == 1 and v[0].closed and v[0].encloses for v in out.values())


def test_contour_json():
    c = T.contour_slice(circle_scan(n=21), 1.0, reference=(0, 0))[0]
    d = json.loads(json.dumps(c.to_dict()))
    assert d["closed"] and d["encloses"] and len(d["points"]) == len(c.points)


def test_wing_flat_field_near_waveguide_axis():
    # |B| is flat to round-off here; the ratio must stay at round-off level
    spec = F.preset_ring_waveguide()
    (_, lap, scale), = T.wing_check(spec, [[0.017, 0.0196, 0.455]])
    assert scale > 0 and abs(lap / scale) < 1e-6
