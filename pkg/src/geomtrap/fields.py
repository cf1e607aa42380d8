"""Static laboratory magnetic fields built from simple sources.

Natural units are used throughout: an infinite wire carrying current ``I``
produces an azimuthal field of magnitude ``I / d`` at perpendicular
distance ``d`` (the prefactor mu0/2pi is absorbed into the current).

Field evaluation is vectorised: every function accepts points with shape
``(..., 3)``.  Points closer than ``core_radius`` to a wire axis are invalid
and come back as NaN rows; callers check with :func:`valid_mask`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .numerics import DEFAULT_STEP

__all__ = [
    "SpecError",
    "WireLine",
    "UniformField",
    "AnalyticPreset",
    "FieldSpec",
    "eval_B",
    "eval_grad_B",
    "field_magnitude",
    "valid_mask",
    "wire_distances",
    "preset_cube_trap",
    "preset_ring_waveguide",
    "constant_direction",
    "helical_xz",
    "transverse_helix",
    "hedgehog",
    "PRESET_KINDS",
]

WIRE_CORE_RADIUS = 1e-9


class SpecError(ValueError):
    """Malformed field description."""


def _vec3(v, name):
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise SpecError(f"{name} must be a 3-vector, got {v!r}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} must be finite, got {v!r}")
    return tuple(float(c) for c in arr)


@dataclass(frozen=True)
class WireLine:
    """Infinite straight wire through ``anchor`` along ``direction``.

    ``direction`` is normalised on construction.
    """

    anchor: tuple
    direction: tuple
    current: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "anchor", _vec3(self.anchor, "wire anchor"))
        d = np.asarray(_vec3(self.direction, "wire direction"))
        norm = np.linalg.norm(d)
        if norm == 0.0:
            raise SpecError("wire direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(c) for c in d / norm))
        if not np.isfinite(self.current):
            raise SpecError("wire current must be finite")
        object.__setattr__(self, "current", float(self.current))

    def to_dict(self):
        return {"type": "wire", "anchor": list(self.anchor), "direction": list(self.direction), "current": self.current}


@dataclass(frozen=True)
class UniformField:
    """Spatially constant field, e.g. from a long solenoid."""

    vector: tuple

    def __post_init__(self):
        object.__setattr__(self, "vector", _vec3(self.vector, "uniform field vector"))

    def to_dict(self):
        return {"type": "uniform", "vector": list(self.vector)}


_PRESET_DEFAULTS = {
    "constant_direction": {"B0": 1.0, "eps": 0.1},
    "helical_xz": {"B0": 1.0, "k": 1.0},
    "transverse_helix": {"B0": 1.0, "k": 1.0},
    "hedgehog": {"B0": 1.0, "core": 0.05},
}
PRESET_KINDS = tuple(_PRESET_DEFAULTS)


@dataclass(frozen=True)
class AnalyticPreset:
    """Closed-form field used to isolate individual geometric effects.

    kinds
        ``constant_direction``: ``B0 (1 + eps z) x``.
        ``helical_xz``: ``B0 (cos a(y), 0, sin a(y))`` with ``a(y) = k y``, or
        the polynomial ``sum_n coeffs[n] y**n`` when ``coeffs`` is given.
        ``transverse_helix``: ``B0 (cos ky, 1, sin ky)``.
        ``hedgehog``: ``B0 r_vec / (r + core)``, radial everywhere.
    """

    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PRESET_DEFAULTS:
            raise SpecError(f"unknown preset kind {self.kind!r}; expected one of {', '.join(PRESET_KINDS)}")
        merged = dict(_PRESET_DEFAULTS[self.kind])
        for key, val in dict(self.params).items():
            if key == "coeffs" and self.kind == "helical_xz":
                merged["coeffs"] = tuple(float(c) for c in val)
                continue
            if key not in merged:
                raise SpecError(f"preset {self.kind}: unknown parameter {key!r}")
            merged[key] = float(val)
        if not merged["B0"] > 0:
            raise SpecError(f"preset {self.kind}: B0 must be positive")
        if self.kind == "hedgehog" and not merged["core"] >= 0:
            raise SpecError("preset hedgehog: core must be non-negative")
        object.__setattr__(self, "params", tuple(sorted(merged.items())))

    @property
    def p(self):
        return dict(self.params)

    def angle(self, y):
        """Rotation angle a(y) of the helical_xz preset."""
        p = self.p
        coeffs = p.get("coeffs", (0.0, p["k"]))
        return np.polynomial.polynomial.polyval(y, coeffs)

    def angle_slope(self, y):
        p = self.p
        coeffs = p.get("coeffs", (0.0, p["k"]))
        return np.polynomial.polynomial.polyval(y, np.polynomial.polynomial.polyder(coeffs))

    def evaluate(self, x):
        p = self.p
        B0 = p["B0"]
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        if self.kind == "constant_direction":
            mag = B0 * (1.0 + p["eps"] * Z)
            return np.stack([mag, np.zeros_like(mag), np.zeros_like(mag)], axis=-1)
        if self.kind == "helical_xz":
            a = self.angle(Y)
            return B0 * np.stack([np.cos(a), np.zeros_like(a), np.sin(a)], axis=-1)
        if self.kind == "transverse_helix":
            ky = p["k"] * Y
            return B0 * np.stack([np.cos(ky), np.ones_like(ky), np.sin(ky)], axis=-1)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return B0 * x / (r + p["core"])

    def to_dict(self):
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params}
        return {"type": "preset", "kind": self.kind, "params": params}


Source = Union[WireLine, UniformField, AnalyticPreset]


@dataclass(frozen=True)
class FieldSpec:
    """Superposition of field sources with an overall geometric scale.

    A scale factor ``f`` shrinks the whole configuration:
    ``B_scaled(x) = B(x / f)``.
    """

    sources: tuple
    scale: float = 1.0
    core_radius: float = WIRE_CORE_RADIUS

    def __post_init__(self):
        srcs = tuple(self.sources)
        if not srcs:
            raise SpecError("field needs at least one source")
        for s in srcs:
            if not isinstance(s, (WireLine, UniformField, AnalyticPreset)):
                raise SpecError(f"unsupported source {s!r}")
        object.__setattr__(self, "sources", srcs)
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise SpecError("scale must be positive")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def wires(self):
        return [s for s in self.sources if isinstance(s, WireLine)]

    def scaled(self, f):
        """Copy with the geometric scale multiplied by ``f``."""
        return FieldSpec(self.sources, self.scale * f, self.core_radius)

    def with_sources(self, *extra):
        return FieldSpec(self.sources + tuple(extra), self.scale, self.core_radius)

    def to_dict(self):
        return {"sources": [s.to_dict() for s in self.sources], "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, Mapping):
            raise SpecError("field block must be an object")
        if "sources" not in d:
            raise SpecError("field block: missing 'sources'")
        sources = []
        for i, src in enumerate(d["sources"]):
            sources.append(_source_from_dict(src, i))
        return cls(tuple(sources), float(d.get("scale", 1.0)))


def _require(src, key, where):
    if key not in src:
        raise SpecError(f"{where}: missing {key!r}")
    return src[key]


def _source_from_dict(src, i):
    where = f"source {i}"
    if not isinstance(src, Mapping):
        raise SpecError(f"{where}: expected an object")
    kind = _require(src, "type", where)
    try:
        if kind == "wire":
            return WireLine(
                _require(src, "anchor", f"{where} (wire)"),
                _require(src, "direction", f"{where} (wire)"),
                float(_require(src, "current", f"{where} (wire)")),
            )
        if kind == "uniform":
            return UniformField(_require(src, "vector", f"{where} (uniform)"))
        if kind == "preset":
            return AnalyticPreset(_require(src, "kind", f"{where} (preset)"), src.get("params", {}))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"{where}: {exc}") from exc
    raise SpecError(f"{where}: unknown source type {kind!r}")


def _cross(a, b):
    # np.cross is slow for small trailing axes; spell the components out.
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _wire_arrays(spec):
    # Stacked anchors, directions and currents, cached on the (frozen) spec.
    cache = spec.__dict__.get("_wire_cache")
    if cache is None:
        ws = spec.wires
        cache = (
            np.array([w.anchor for w in ws], dtype=float).reshape(-1, 3),
            np.array([w.direction for w in ws], dtype=float).reshape(-1, 3),
            np.array([w.current for w in ws], dtype=float),
        )
        object.__setattr__(spec, "_wire_cache", cache)
    return cache


def _wire_geometry(spec, u):
    """Unit directions, perpendicular offsets and squared distances to all wires.

    ``u`` is in unscaled coordinates; outputs carry an extra wire axis
    before the component axis, e.g. ``r_perp`` has shape (..., n, 3).
    """
    A, D, I = _wire_arrays(spec)
    rel = u[..., None, :] - A
    along = np.einsum("...ni,ni->...n", rel, D)
    r_perp = rel - along[..., None] * D
    rho2 = np.einsum("...ni,...ni->...n", r_perp, r_perp)
    return D, I, r_perp, rho2


def _core_mask(spec, rho2):
    if rho2.shape[-1] == 0:
        return np.ones(rho2.shape[:-1], dtype=bool)
    return np.all(rho2 > (spec.core_radius / spec.scale) ** 2, axis=-1)


def _wire_field(spec, u):
    D, I, r_perp, rho2 = _wire_geometry(spec, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        B = np.einsum("n,...ni->...i", I, _cross(np.broadcast_to(D, r_perp.shape), r_perp) / rho2[..., None])
    return B, _core_mask(spec, rho2)


def _wire_jacobian(spec, u):
    # J[i, j] = dB_j / dx_i = I [ (d x e_i)_j / rho^2 - 2 r_i (d x r)_j / rho^4 ]
    D, I, r_perp, rho2 = _wire_geometry(spec, u)
    d_cross_e = _cross(D[:, None, :], np.eye(3)[None, :, :])  # (n, i, j)
    dxr = _cross(np.broadcast_to(D, r_perp.shape), r_perp)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / rho2
        term1 = np.einsum("...n,nij->...ij", I * inv, d_cross_e)
        term2 = 2.0 * np.einsum("...n,...ni,...nj->...ij", I * inv**2, r_perp, dxr)
    return term1 - term2, _core_mask(spec, rho2)


def wire_distances(spec, x):
    """Perpendicular distance from each point to each wire, shape (..., n_wires)."""
    u = np.asarray(x, dtype=float) / spec.scale
    return np.sqrt(_wire_geometry(spec, u)[3]) * spec.scale


def valid_mask(spec, x):
    """True where ``x`` is farther than the core radius from every wire."""
    u = np.asarray(x, dtype=float) / spec.scale
    return _core_mask(spec, _wire_geometry(spec, u)[3])


def _eval_unscaled(spec, u):
    total = np.zeros(u.shape)
    ok = np.ones(u.shape[:-1], dtype=bool)
    if spec.wires:
        total, ok = _wire_field(spec, u)
    for s in spec.sources:
        if isinstance(s, UniformField):
            total = total + np.asarray(s.vector)
        elif isinstance(s, AnalyticPreset):
            total = total + s.evaluate(u)
    return total, ok


def eval_B(spec, x):
    """Magnetic field of ``spec`` at points ``x`` (shape (..., 3)).

    Rows for points inside a wire core are NaN.
    """
    x = np.asarray(x, dtype=float)
    B, ok = _eval_unscaled(spec, x / spec.scale)
    if not np.all(ok):
        B = np.where(ok[..., None], B, np.nan)
    return B


def eval_grad_B(spec, x, h=None):
    """Jacobian ``J[..., i, j] = dB_j/dx_i``.

    Wires and uniform fields use closed forms; analytic presets use
    central differences with step ``h`` (default ``1e-5`` in unscaled
    length units).
    """
    x = np.asarray(x, dtype=float)
    u = x / spec.scale
    J = np.zeros(x.shape + (3,))
    ok = np.ones(x.shape[:-1], dtype=bool)
    if spec.wires:
        J, ok = _wire_jacobian(spec, u)
    presets = [s for s in spec.sources if isinstance(s, AnalyticPreset)]
    if presets:
        step = DEFAULT_STEP if h is None else h
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            diff = sum(p.evaluate(u + e) - p.evaluate(u - e) for p in presets)
            J[..., i, :] += diff / (2.0 * step)
    J = J / spec.scale
    if not np.all(ok):
        J = np.where(ok[..., None, None], J, np.nan)
    return J


def field_magnitude(spec, x):
    return np.linalg.norm(eval_B(spec, x), axis=-1)


# -- presets -----------------------------------------------------------------

def preset_cube_trap(a=2.0, B0=(0.0, 0.0, 0.5), I=1.0, scale=1.0):
    """Twelve infinite wires along the edges of a cube of side ``a``.

    Four wires run parallel to each axis at transverse offsets
    ``(+-a/2, +-a/2)`` and carry ``+I`` in the positive axis direction.
    ``B0`` is the uniform bias; a scalar is taken as a field along z.
    """
    if not a > 0:
        raise SpecError("cube side a must be positive")
    bias = np.asarray(B0, dtype=float)
    if bias.ndim == 0:
        bias = np.array([0.0, 0.0, float(bias)])
    h = 0.5 * a
    wires = []
    for axis in range(3):
        t1, t2 = [k for k in range(3) if k != axis]
        direction = np.zeros(3)
        direction[axis] = 1.0
        for s1 in (h, -h):
            for s2 in (h, -h):
                anchor = np.zeros(3)
                anchor[t1] = s1
                anchor[t2] = s2
                wires.append(WireLine(anchor, direction, I))
    return FieldSpec(tuple(wires) + (UniformField(bias),), scale)


def preset_ring_waveguide(N=10, a=1.0, B0=1.0, I=1.0, currents=None, scale=1.0):
    """``N`` z-directed wires equally spaced on a circle of radius ``a``.

    All wires carry ``+I`` unless ``currents`` (length ``N``) is given.
    The bias ``B0`` points along z.
    """
    if N < 3:
        raise SpecError("ring waveguide needs at least 3 wires")
    if not a > 0:
        raise SpecError("ring radius a must be positive")
    if currents is None:
        currents = [I] * N
    if len(currents) != N:
        raise SpecError("currents must have one entry per wire")
    wires = []
    for j in range(N):
        phi = 2.0 * np.pi * j / N
        wires.append(WireLine((a * np.cos(phi), a * np.sin(phi), 0.0), (0.0, 0.0, 1.0), currents[j]))
    return FieldSpec(tuple(wires) + (UniformField((0.0, 0.0, B0)),), scale)


def constant_direction(B0=1.0, eps=0.1):
    return FieldSpec((AnalyticPreset("constant_direction", {"B0": B0, "eps": eps}),))


def helical_xz(B0=1.0, k=1.0, coeffs=None):
    params = {"B0": B0, "k": k}
    if coeffs is not None:
        params["coeffs"] = coeffs
    return FieldSpec((AnalyticPreset("helical_xz", params),))


def transverse_helix(B0=1.0, k=1.0):
    return FieldSpec((AnalyticPreset("transverse_helix", {"B0": B0, "k": k}),))


def hedgehog(B0=1.0, core=0.05):
    return FieldSpec((AnalyticPreset("hedgehog", {"B0": B0, "core": core}),))
