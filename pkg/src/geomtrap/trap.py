"""Trap analysis: potential scans, minimum search, Wing checks, contours.

Potentials handed to this module are either a fast system from
:mod:`geomtrap.reduction` or a vectorised callable mapping points of shape
``(..., 3)`` to values of shape ``(...)``.  Invalid points evaluate to NaN.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from . import fields as _fields
from .numerics import Grid
from .reduction import Generic, SpinHalf, potential_arrays

__all__ = [
    "ScanWarning",
    "ScanResult",
    "Minimum",
    "Contour",
    "scan_potential",
    "as_potential",
    "classify_hessian",
    "classify_point",
    "find_minima",
    "wing_check",
    "contour_slice",
    "marching_squares",
    "slice_contours_around",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("x", "y", "z", "v_dyn", "v_geom", "v_total", "valid")


class ScanWarning(UserWarning):
    """Emitted for suspicious scans or searches (mostly invalid, nothing converged)."""


# -- scans ---------------------------------------------------------------

@dataclass
class ScanResult:
    """Potential values on a :class:`~geomtrap.numerics.Grid`.

    Arrays have the grid shape; ``valid`` is False where the reduction is
    undefined and the values there are NaN.
    """

    grid: Grid
    points: np.ndarray
    v_dyn: np.ndarray
    v_geom: np.ndarray
    valid: np.ndarray

    @property
    def v_total(self):
        return self.v_dyn + self.v_geom

    @classmethod
    def from_function(cls, grid, V):
        """Scan an arbitrary potential; it is stored entirely as ``v_dyn``."""
        pts = grid.points()
        vals = np.asarray(V(pts), dtype=float)
        valid = np.isfinite(vals)
        return cls(grid, pts, vals, np.where(valid, 0.0, np.nan), valid)

    def rows(self):
        pts = self.points.reshape(-1, 3)
        vd = self.v_dyn.ravel()
        vg = self.v_geom.ravel()
        vt = self.v_total.ravel()
        ok = self.valid.ravel()
        for k in range(len(pts)):
            yield (*pts[k], vd[k], vg[k], vt[k], bool(ok[k]))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for x, y, z, vd, vg, vt, ok in self.rows():
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z)),
                        repr(float(vd)), repr(float(vg)), repr(float(vt)), int(ok)])
        return buf.getvalue()

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        return {
            "grid": self.grid.to_dict(),
            "columns": list(CSV_COLUMNS),
            "v_dyn": clean(self.v_dyn),
            "v_geom": clean(self.v_geom),
            "v_total": clean(self.v_total),
            "valid": [bool(v) for v in self.valid.ravel()],
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def scan_potential(sys, grid, include_geom=True):
    """Evaluate the slow potentials of ``sys`` at every point of ``grid``.

    Output arrays are in row-major grid order.  Emits a :class:`ScanWarning`
    when more than half the points are invalid.
    """
    pts = grid.points()
    vd, vg = potential_arrays(sys, pts)
    if not include_geom:
        vg = np.where(np.isfinite(vg), 0.0, vg)
    valid = np.isfinite(vd) & np.isfinite(vg)
    vd = np.where(valid, vd, np.nan)
    vg = np.where(valid, vg, np.nan)
    frac = 1.0 - valid.mean()
    if frac > 0.5:
        warnings.warn(f"{100 * frac:.0f}% of scan points are invalid", ScanWarning, stacklevel=2)
    return ScanResult(grid, pts, vd, vg, valid)


def as_potential(obj, include_geom=True):
    """Vectorised total-potential callable for a fast system (callables pass through)."""
    if isinstance(obj, (SpinHalf, Generic)):
        def V(x):
            vd, vg = potential_arrays(obj, x)
            return vd + vg if include_geom else vd
        return V
    return obj


# -- minima --------------------------------------------------------------

@dataclass
class Minimum:
    location: np.ndarray
    value: float
    hessian_eigenvalues: np.ndarray
    kind: str
    gradient_norm: float = 0.0
    seed_index: int = -1

    def to_dict(self):
        return {
            "location": [float(v) for v in self.location],
            "value": float(self.value),
            "hessian_eigenvalues": [float(v) for v in self.hessian_eigenvalues],
            "class": self.kind,
            "gradient_norm": float(self.gradient_norm),
            "seed_index": int(self.seed_index),
        }


def _stencil_grad(V, X, h):
    """Central-difference gradients at each row of X (S, d), batched in one call."""
    S, d = X.shape
    E = np.eye(d) * h
    pts = np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)
    vals = np.asarray(V(pts), dtype=float)
    return (vals[:, :d] - vals[:, d:]) / (2.0 * h)


def _hessian(V, x, h):
    """Central-difference Hessian, Richardson-extrapolated from steps h and h/2."""
    return (4.0 * _hessian_step(V, x, 0.5 * h) - _hessian_step(V, x, h)) / 3.0


def _hessian_step(V, x, h):
    d = x.size
    E = np.eye(d) * h
    offs = [np.zeros(d)]
    for i in range(d):
        offs += [E[i], -E[i]]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        offs += [E[i] + E[j], E[i] - E[j], -E[i] + E[j], -E[i] - E[j]]
    vals = np.asarray(V(x + np.array(offs)), dtype=float)
    f0 = vals[0]
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (vals[1 + 2 * i] - 2 * f0 + vals[2 + 2 * i]) / h**2
    base = 1 + 2 * d
    for k, (i, j) in enumerate(pairs):
        pp, pm, mp, mm = vals[base + 4 * k: base + 4 * k + 4]
        H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h**2)
    return H


#: Eigenvalues smaller than this fraction of the largest |eigenvalue| are
#: treated as zero; FD truncation error on a sharply curved valley is
#: roughly that big.
HESS_COND = 1e-6


def classify_hessian(eigs, tol, cond=HESS_COND):
    """Class of a critical point from its Hessian eigenvalues.

    An eigenvalue counts as zero when ``|e| <= max(tol, cond * max|e|)``.
    """
    eigs = np.asarray(eigs)
    if eigs.size:
        tol = max(tol, cond * float(np.max(np.abs(eigs))))
    if np.all(eigs > tol):
        return "minimum"
    if np.all(eigs < -tol):
        return "maximum"
    if np.any(eigs > tol) and np.any(eigs < -tol):
        return "saddle"
    return "degenerate"


def classify_point(V, x, length=1.0, value_floor=1e-3, hess_rtol=1e-8):
    """Hessian eigenvalues and class of the critical point ``x`` of ``V``."""
    V = as_potential(V)
    x = np.asarray(x, dtype=float)
    f = float(V(x))
    H = _hessian(V, x, 1e-4 * length)
    eigs = np.linalg.eigvalsh(H)
    tol = hess_rtol * max(abs(f), value_floor) / length**2
    return eigs, classify_hessian(eigs, tol)


def find_minima(potential, region, n_starts=32, seed=0, gtol=1e-6, max_iter=3000,
                value_floor=None, hess_rtol=1e-8, include_critical=False):
    """Multistart gradient descent for local minima of a potential.

    Parameters
    ----------
    potential : SpinHalf, Generic or callable
        Systems are reduced to ``v_dyn + v_geom``; callables must accept
        point arrays of shape ``(..., 3)``.
    region : (lo, hi)
        Box of 3-vectors.  Starts are scrambled Halton points in the box,
        reproducible through ``seed``; a start that leaves the box (padded
        by 10%) is discarded.
    gtol : float
        Convergence when ``|grad V| < gtol * max(|V|, value_floor) / L``
        with ``L`` the largest box side.
    include_critical : bool
        Also return converged points that are not minima.

    Returns
    -------
    list of Minimum
        Sorted by value; duplicates within ``1e-4 * L`` merged.
    """
    V = as_potential(potential)
    lo, hi = (np.asarray(r, dtype=float) for r in region)
    L = float(np.max(hi - lo))
    pad = 0.1 * (hi - lo)
    sampler = qmc.Halton(d=lo.size, scramble=True, seed=seed)
    X = qmc.scale(sampler.random(n_starts), lo, hi)
    h = 1e-6 * L

    f = np.asarray(V(X), dtype=float)
    ok = np.isfinite(f)
    if value_floor is None:
        value_floor = 1e-3 * (np.max(np.abs(f[ok])) if np.any(ok) else 1.0)
    active = ok.copy()
    converged = np.zeros(n_starts, dtype=bool)
    g = np.zeros_like(X)
    gnorm = np.full(n_starts, np.inf)
    alpha = np.full(n_starts, np.nan)
    prev_x = X.copy()
    prev_g = np.zeros_like(X)

    for it in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g[idx] = _stencil_grad(V, X[idx], h)
        gnorm[idx] = np.linalg.norm(g[idx], axis=1)
        bad = ~np.isfinite(gnorm[idx])
        active[idx[bad]] = False
        done = gnorm[idx] < gtol * np.maximum(np.abs(f[idx]), value_floor) / L
        converged[idx[done & ~bad]] = True
        active[idx[done]] = False
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break

        # Barzilai-Borwein step guess, first step moves 1% of the box.
        new = ~np.isfinite(alpha[idx])
        s = X[idx] - prev_x[idx]
        y = g[idx] - prev_g[idx]
        sy = np.einsum("ij,ij->i", s, y)
        ss = np.einsum("ij,ij->i", s, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            bb = np.where(sy > 0, ss / sy, np.nan)
        a = np.where(new | ~np.isfinite(bb), 0.01 * L / gnorm[idx], bb)
        a = np.where(np.isfinite(a), a, 0.01 * L / gnorm[idx])

        prev_x[idx] = X[idx]
        prev_g[idx] = g[idx]
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            trial = X[idx[p]] - a[p, None] * g[idx[p]]
            ft = np.asarray(V(trial), dtype=float)
            accept = np.isfinite(ft) & (ft <= f[idx[p]] - 1e-4 * a[p] * gnorm[idx[p]] ** 2)
            acc = p[accept]
            X[idx[acc]] = trial[accept]
            f[idx[acc]] = ft[accept]
            pending[acc] = False
            a[p[~accept]] *= 0.5
        # line search failed: no descent left at FD resolution
        active[idx[pending]] = False
        alpha[idx] = a
        out = np.any((X[idx] < lo - pad) | (X[idx] > hi + pad), axis=1)
        active[idx[out]] = False

    results = []
    for k in np.flatnonzero(converged):
        x = X[k]
        if np.any((x < lo - pad) | (x > hi + pad)):
            continue
        H = _hessian(V, x, 1e-4 * L)
        eigs = np.linalg.eigvalsh(H)
        tol = hess_rtol * max(abs(f[k]), value_floor) / L**2
        kind = classify_hessian(eigs, tol)
        if kind != "minimum" and not include_critical:
            continue
        results.append(Minimum(x.copy(), float(f[k]), eigs, kind, float(gnorm[k]), int(k)))

    merged = []
    for m in sorted(results, key=lambda m: (m.value, m.seed_index)):
        if all(np.linalg.norm(m.location - q.location) > 1e-4 * L for q in merged):
            merged.append(m)
    if not merged:
        warnings.warn("find_minima: no start converged to a minimum", ScanWarning, stacklevel=2)
    return merged


# -- Wing's theorem --------------------------------------------------------

def wing_check(spec, points, h=1e-4):
    """FD Laplacian of ``|B|`` at each valid point.

    Returns a list of ``(point, laplacian, scale)``.  ``scale`` is the
    larger of the summed magnitudes of the three second differences and
    ``|B| / d^2``, with ``d`` the distance to the nearest wire (the field
    scale when there are no wires).  The second term keeps the ratio
    meaningful where the curvature of ``|B|`` is below round-off.  Points
    inside wire cores (or whose stencil touches one) are skipped with a
    :class:`ScanWarning`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    step = h * spec.scale
    mag = lambda x: _fields.field_magnitude(spec, x)  # noqa: E731
    f0 = mag(pts)
    lap = np.zeros(len(pts))
    scale = np.zeros(len(pts))
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        d2 = (mag(pts + e) - 2.0 * f0 + mag(pts - e)) / step**2
        lap += d2
        scale += np.abs(d2)
    dist = _fields.wire_distances(spec, pts)
    d = dist.min(axis=-1) if dist.shape[-1] else np.full(len(pts), spec.scale)
    scale = np.maximum(scale, f0 / d**2)
    out = []
    skipped = 0
    for p, l, s in zip(pts, lap, scale):
        if not np.isfinite(l):
            skipped += 1
            continue
        out.append((p, float(l), float(s)))
    if skipped:
        warnings.warn(f"wing_check: skipped {skipped} invalid point(s)", ScanWarning, stacklevel=2)
    return out


# -- contours ------------------------------------------------------------

@dataclass
class Contour:
    """Level-set polyline in the 2-D coordinates of a scan slice."""

    level: float
    points: np.ndarray
    closed: bool
    encloses: Optional[bool] = None

    def winding_number(self, p):
        if not self.closed:
            return 0
        rel = self.points - np.asarray(p, dtype=float)
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        d = np.diff(ang)
        d = (d + np.pi) % (2 * np.pi) - np.pi
        return int(round(d.sum() / (2 * np.pi)))

    def contains(self, p):
        return self.winding_number(p) != 0

    def to_dict(self):
        return {
            "level": float(self.level),
            "closed": bool(self.closed),
            "encloses": self.encloses,
            "points": self.points.tolist(),
        }


# Edge ids inside a cell: 0 bottom (j), 1 right (i+1), 2 top (j+1), 3 left (i).
# Bit order of the case index: v00, v10, v11, v01.
_SEGMENTS = {
    0: (), 15: (),
    1: ((3, 0),), 14: ((3, 0),),
    2: ((0, 1),), 13: ((0, 1),),
    3: ((3, 1),), 12: ((3, 1),),
    4: ((1, 2),), 11: ((1, 2),),
    6: ((0, 2),), 9: ((0, 2),),
    7: ((3, 2),), 8: ((3, 2),),
}


def _edge_key(i, j, e):
    # Horizontal edges ("x" direction) between (i,j)-(i+1,j); vertical between (i,j)-(i,j+1).
    if e == 0:
        return ("h", i, j)
    if e == 2:
        return ("h", i, j + 1)
    if e == 3:
        return ("v", i, j)
    return ("v", i + 1, j)


def marching_squares(values, xs, ys, level):
    """Level-set polylines of ``values[i, j]`` sampled at ``(xs[i], ys[j])``.

    Saddle cells are resolved by comparing the mean of the four corners
    with the level.  Cells touching a NaN are skipped.  Returns a list of
    ``(points, closed)`` with closed chains repeating their first point.
    """
    F = np.asarray(values, dtype=float)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    above = F > level
    nx, ny = F.shape

    def crossing(key):
        kind, i, j = key
        if kind == "h":
            a, b = F[i, j], F[i + 1, j]
            t = (level - a) / (b - a)
            return (xs[i] + t * (xs[i + 1] - xs[i]), ys[j])
        a, b = F[i, j], F[i, j + 1]
        t = (level - a) / (b - a)
        return (xs[i], ys[j] + t * (ys[j + 1] - ys[j]))

    adj = {}
    for i in range(nx - 1):
        for j in range(ny - 1):
            c = (F[i, j], F[i + 1, j], F[i + 1, j + 1], F[i, j + 1])
            if not all(np.isfinite(c)):
                continue
            case = (int(above[i, j]) | int(above[i + 1, j]) << 1
                    | int(above[i + 1, j + 1]) << 2 | int(above[i, j + 1]) << 3)
            if case in (5, 10):
                centre_above = sum(c) / 4.0 > level
                if case == 5:  # v00 and v11 above
                    segs = ((0, 1), (2, 3)) if centre_above else ((3, 0), (1, 2))
                else:  # v10 and v01 above
                    segs = ((3, 0), (1, 2)) if centre_above else ((0, 1), (2, 3))
            else:
                segs = _SEGMENTS[case]
            for e1, e2 in segs:
                k1, k2 = _edge_key(i, j, e1), _edge_key(i, j, e2)
                adj.setdefault(k1, []).append(k2)
                adj.setdefault(k2, []).append(k1)

    chains = []
    seen = set()
    # open chains start at degree-1 nodes; sorted for deterministic output
    starts = sorted(k for k, v in adj.items() if len(v) == 1) + sorted(k for k, v in adj.items() if len(v) != 1)
    for start in starts:
        if start in seen:
            continue
        chain = [start]
        seen.add(start)
        prev, cur = None, start
        closed = False
        while True:
            cands = [n for n in adj[cur] if n != prev]
            if not cands:
                break
            n = cands[0]
            if n == start:
                closed = True
                break
            if n in seen:
                break
            seen.add(n)
            chain.append(n)
            prev, cur = cur, n
        pts = np.array([crossing(k) for k in chain])
        if closed:
            pts = np.vstack([pts, pts[:1]])
        chains.append((pts, closed))
    return chains


def contour_slice(scan, level, reference=None):
    """Equipotential contours of the total potential on a 2-D scan.

    Returns an empty list when ``level`` lies outside the range of valid
    values.  With ``reference`` (2-D point in slice coordinates) each
    contour records whether it encloses that point.
    """
    if scan.grid.ndim != 2:
        raise ValueError("contour_slice needs a 2-D scan")
    vals = np.where(scan.valid, scan.v_total, np.nan)
    finite = vals[np.isfinite(vals)]
    if finite.size == 0 or not (finite.min() < level < finite.max()):
        return []
    xs, ys = scan.grid.coords(0), scan.grid.coords(1)
    out = []
    for pts, closed in marching_squares(vals, xs, ys, level):
        c = Contour(float(level), pts, closed)
        if reference is not None:
            c.encloses = c.contains(reference)
        out.append(c)
    return out


def slice_contours_around(potential, centre, level, half_width, n=65):
    """Contours through ``centre`` on the three axis-aligned planes.

    Returns ``{plane: [Contour, ...]}`` keyed ``"xy"``, ``"xz"``, ``"yz"``,
    each contour flagged with whether it encloses the centre.
    """
    V = as_potential(potential)
    centre = np.asarray(centre, dtype=float)
    out = {}
    for name, axes in (("xy", (0, 1)), ("xz", (0, 2)), ("yz", (1, 2))):
        lo = centre[list(axes)] - half_width
        hi = centre[list(axes)] + half_width
        grid = Grid.from_bounds(lo, hi, n, axes=axes, fixed=centre)
        scan = ScanResult.from_function(grid, V)
        out[name] = contour_slice(scan, level, reference=centre[list(axes)])
    return out
