"""Command-line front end.

Every subcommand reads one JSON config (``--config``) and writes a CSV or
JSON artifact (``--out``, default stdout).  A one-line summary goes to
stderr.  Exit codes: 0 success, 1 empty result, 2 configuration error.

Config layout (all blocks except ``field`` are optional)::

    {
      "units":    {"hbar": 1, "mass": 1, "mu": 1, "wire_prefactor": 1},
      "field":    {"sources": [...], "scale": 1}
                  or {"preset": "cube_trap", "params": {...}},
      "points":   [[x, y, z], ...],
      "scan":     {"lo": [...], "hi": [...], "dims": [...], "axes": [...], "fixed": [x, y, z]},
      "minima":   {"region": [[lo], [hi]], "n_starts": 32, "seed": 0,
                   "b0_scan": [...], "include_geom": true, "max_iter": 3000},
      "contour":  {"level": v, "reference": [u, v]},
      "spectrum": {"lo": [...], "hi": [...], "dims": [...], "axes": [...], "fixed": [...],
                   "box": {"length": L, "sites": n, "axis": 1},
                   "ring": {"length": L, "sites": n, "axis": 1},
                   "boundary": "open", "k": 4, "potential": "total"},
      "wing":     {"n_points": 100, "region": [[lo], [hi]], "seed": 0, "min_wire_distance": 0.1},
      "output":   {"path": null, "format": "csv"}
    }
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fields as F
from . import reduction as R
from . import spectrum as S
from . import trap as T
from .numerics import Grid

__all__ = ["ConfigError", "Config", "main", "build_field", "build_system", "PRESETS"]

EXIT_OK = 0
EXIT_EMPTY = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key."""


# -- presets -----------------------------------------------------------------

def _cube(p):
    return F.preset_cube_trap(a=p.get("a", 2.0), B0=p.get("B0", 0.5), I=p.get("I", 1.0),
                              scale=p.get("scale", 1.0))


def _ring(p):
    return F.preset_ring_waveguide(N=int(p.get("N", 10)), a=p.get("a", 1.0), B0=p.get("B0", 1.0),
                                   I=p.get("I", 1.0), currents=p.get("currents"),
                                   scale=p.get("scale", 1.0))


def _analytic(kind):
    def make(p):
        scale = p.pop("scale", 1.0)
        return F.FieldSpec((F.AnalyticPreset(kind, p),), scale)
    return make


PRESETS = {
    "cube_trap": _cube,
    "ring_waveguide": _ring,
    **{k: _analytic(k) for k in F.PRESET_KINDS},
}

_PRESET_KEYS = {
    "cube_trap": {"a", "B0", "I", "scale"},
    "ring_waveguide": {"N", "a", "B0", "I", "currents", "scale"},
}


# -- config ------------------------------------------------------------------

_UNIT_DEFAULTS = {"hbar": 1.0, "mass": 1.0, "mu": 1.0, "wire_prefactor": 1.0}
_MINIMA_DEFAULTS = {"n_starts": 32, "seed": 0, "b0_scan": None, "include_geom": True, "max_iter": 3000}
_SPECTRUM_DEFAULTS = {"boundary": "open", "k": 4, "potential": "total"}
_WING_DEFAULTS = {"n_points": 100, "seed": 0, "min_wire_distance": 0.1}
_BLOCKS = ("units", "field", "points", "scan", "minima", "contour", "spectrum", "wing", "output")


def _known(block, d, allowed):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{block}: unknown key(s) {', '.join(sorted(extra))}")


def _num(block, key, v, positive=False, integer=False, nonzero=False):
    try:
        x = int(v) if integer else float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{block}.{key}: expected a number, got {v!r}") from None
    if integer and x != v:
        raise ConfigError(f"{block}.{key}: expected an integer, got {v!r}")
    if not np.isfinite(x):
        raise ConfigError(f"{block}.{key}: must be finite")
    if positive and not x > 0:
        raise ConfigError(f"{block}.{key}: must be positive, got {v!r}")
    if nonzero and x == 0:
        raise ConfigError(f"{block}.{key}: must be non-zero")
    return x


def _vec(block, key, v, n=None):
    try:
        arr = [float(c) for c in v]
    except TypeError:
        raise ConfigError(f"{block}.{key}: expected a list of numbers, got {v!r}") from None
    if n is not None and len(arr) != n:
        raise ConfigError(f"{block}.{key}: expected {n} entries, got {len(arr)}")
    if not all(np.isfinite(arr)):
        raise ConfigError(f"{block}.{key}: entries must be finite")
    return arr


_GRID_KEYS = {"lo", "hi", "dims", "axes", "fixed"}


def _norm_grid(block, d, need=True, extra=()):
    _known(block, d, _GRID_KEYS | set(extra))
    if "lo" not in d or "hi" not in d:
        if need:
            raise ConfigError(f"{block}: missing {'lo' if 'lo' not in d else 'hi'!r}")
        return {}
    lo = _vec(block, "lo", d["lo"])
    hi = _vec(block, "hi", d["hi"], len(lo))
    if not 1 <= len(lo) <= 3:
        raise ConfigError(f"{block}.lo: grids have 1 to 3 axes")
    if any(b <= a for a, b in zip(lo, hi)):
        raise ConfigError(f"{block}: every hi must exceed lo")
    dims = d.get("dims", 32)
    dims = [int(dims)] * len(lo) if np.isscalar(dims) else [int(v) for v in dims]
    if len(dims) != len(lo) or any(v < 2 for v in dims):
        raise ConfigError(f"{block}.dims: need one entry >= 2 per axis")
    axes = [int(a) for a in d.get("axes", range(len(lo)))]
    if len(axes) != len(lo) or len(set(axes)) != len(axes) or not all(0 <= a < 3 for a in axes):
        raise ConfigError(f"{block}.axes: need {len(lo)} distinct axis indices in 0..2")
    fixed = _vec(block, "fixed", d.get("fixed", [0.0, 0.0, 0.0]), 3)
    return {"lo": lo, "hi": hi, "dims": dims, "axes": axes, "fixed": fixed}


def _grid_of(g):
    return Grid.from_bounds(g["lo"], g["hi"], g["dims"], axes=tuple(g["axes"]), fixed=g["fixed"])


def _norm_field(d):
    if not isinstance(d, dict):
        raise ConfigError("field: expected an object")
    if "preset" in d:
        _known("field", d, {"preset", "params"})
        name = d["preset"]
        if name not in PRESETS:
            raise ConfigError(f"field.preset: unknown preset {name!r}; expected one of {', '.join(sorted(PRESETS))}")
        params = dict(d.get("params", {}))
        allowed = _PRESET_KEYS.get(name)
        if allowed is not None:
            _known(f"field.params ({name})", params, allowed)
        out = {"preset": name, "params": params}
    else:
        try:
            spec = F.FieldSpec.from_dict(d)
        except F.SpecError as exc:
            raise ConfigError(f"field: {exc}") from None
        out = spec.to_dict()
    # construct once so errors surface at parse time
    try:
        _spec_from(out, 1.0)
    except F.SpecError as exc:
        raise ConfigError(f"field: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field.params: {exc}") from None
    return out


def _spec_from(fd, wire_prefactor):
    if "preset" in fd:
        spec = PRESETS[fd["preset"]](copy.deepcopy(fd["params"]))
    else:
        spec = F.FieldSpec.from_dict(fd)
    if wire_prefactor != 1.0:
        srcs = tuple(F.WireLine(s.anchor, s.direction, s.current * wire_prefactor)
                     if isinstance(s, F.WireLine) else s for s in spec.sources)
        spec = F.FieldSpec(srcs, spec.scale, spec.core_radius)
    return spec


@dataclass(frozen=True)
class Config:
    """Validated, normalised configuration.

    Blocks are plain dicts with defaults filled in, so ``Config.from_dict(c.to_dict()) == c``.
    """

    field: dict
    units: dict = field(default_factory=lambda: dict(_UNIT_DEFAULTS))
    points: Optional[list] = None
    scan: Optional[dict] = None
    minima: Optional[dict] = None
    contour: Optional[dict] = None
    spectrum: Optional[dict] = None
    wing: Optional[dict] = None
    output: dict = field(default_factory=lambda: {"path": None, "format": "csv"})

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be an object")
        _known("config", d, _BLOCKS)
        if "field" not in d:
            raise ConfigError("config: missing 'field'")
        units = dict(_UNIT_DEFAULTS)
        u = d.get("units", {}) or {}
        _known("units", u, _UNIT_DEFAULTS)
        for k, v in u.items():
            units[k] = _num("units", k, v, positive=(k != "mu"), nonzero=True)
        out = {"field": _norm_field(d["field"]), "units": units}

        if d.get("points") is not None:
            pts = d["points"]
            if not isinstance(pts, list) or not pts:
                raise ConfigError("points: expected a non-empty list of 3-vectors")
            out["points"] = [_vec("points", str(i), p, 3) for i, p in enumerate(pts)]
        if d.get("scan") is not None:
            out["scan"] = _norm_grid("scan", d["scan"])
        if d.get("minima") is not None:
            m = dict(d["minima"])
            _known("minima", m, set(_MINIMA_DEFAULTS) | {"region"})
            if "region" not in m:
                raise ConfigError("minima: missing 'region'")
            reg = m["region"]
            if not isinstance(reg, list) or len(reg) != 2:
                raise ConfigError("minima.region: expected [[lo x, y, z], [hi x, y, z]]")
            lo, hi = _vec("minima", "region[0]", reg[0], 3), _vec("minima", "region[1]", reg[1], 3)
            if any(b <= a for a, b in zip(lo, hi)):
                raise ConfigError("minima.region: every hi must exceed lo")
            mm = dict(_MINIMA_DEFAULTS)
            mm.update(m)
            mm["region"] = [lo, hi]
            mm["n_starts"] = int(_num("minima", "n_starts", mm["n_starts"], positive=True, integer=True))
            mm["seed"] = int(_num("minima", "seed", mm["seed"], integer=True))
            mm["max_iter"] = int(_num("minima", "max_iter", mm["max_iter"], positive=True, integer=True))
            mm["include_geom"] = bool(mm["include_geom"])
            if mm["b0_scan"] is not None:
                if d["field"].get("preset") not in ("cube_trap", "ring_waveguide"):
                    raise ConfigError("minima.b0_scan: needs field.preset cube_trap or ring_waveguide")
                mm["b0_scan"] = _vec("minima", "b0_scan", mm["b0_scan"])
            out["minima"] = mm
        if d.get("contour") is not None:
            c = dict(d["contour"])
            _known("contour", c, {"level", "reference"})
            out["contour"] = {
                "level": None if c.get("level") is None else _num("contour", "level", c["level"]),
                "reference": None if c.get("reference") is None else _vec("contour", "reference", c["reference"], 2),
            }
        if d.get("spectrum") is not None:
            sp = dict(d["spectrum"])
            ss = _norm_grid("spectrum", sp, need=False, extra=("box", "ring", "boundary", "k", "potential"))
            for key in ("box", "ring"):
                if key in sp:
                    b = sp[key]
                    _known(f"spectrum.{key}", b, {"length", "sites", "axis", "origin"})
                    for req in ("length", "sites"):
                        if req not in b:
                            raise ConfigError(f"spectrum.{key}: missing {req!r}")
                    ss[key] = {
                        "length": _num(f"spectrum.{key}", "length", b["length"], positive=True),
                        "sites": int(_num(f"spectrum.{key}", "sites", b["sites"], positive=True, integer=True)),
                        "axis": int(_num(f"spectrum.{key}", "axis", b.get("axis", 1), integer=True)),
                        "origin": _num(f"spectrum.{key}", "origin", b.get("origin", 0.0)),
                    }
            if sum(k in ss for k in ("lo", "box", "ring")) != 1:
                raise ConfigError("spectrum: give exactly one of a grid (lo/hi), 'box' or 'ring'")
            for k, v in _SPECTRUM_DEFAULTS.items():
                ss[k] = sp.get(k, v)
            if "ring" in ss:
                ss["boundary"] = sp.get("boundary", "periodic")
            if ss["boundary"] not in S.BOUNDARIES:
                raise ConfigError(f"spectrum.boundary: expected one of {', '.join(S.BOUNDARIES)}")
            if ss["potential"] not in ("total", "dyn", "geom", "none"):
                raise ConfigError("spectrum.potential: expected total, dyn, geom or none")
            ss["k"] = int(_num("spectrum", "k", ss["k"], positive=True, integer=True))
            out["spectrum"] = ss
        if d.get("wing") is not None:
            w = dict(d["wing"])
            _known("wing", w, set(_WING_DEFAULTS) | {"region"})
            ww = dict(_WING_DEFAULTS)
            ww.update(w)
            if "region" in w:
                reg = w["region"]
                if not isinstance(reg, list) or len(reg) != 2:
                    raise ConfigError("wing.region: expected [[lo x, y, z], [hi x, y, z]]")
                ww["region"] = [_vec("wing", "region[0]", reg[0], 3), _vec("wing", "region[1]", reg[1], 3)]
            else:
                ww["region"] = [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]
            ww["n_points"] = int(_num("wing", "n_points", ww["n_points"], positive=True, integer=True))
            ww["seed"] = int(_num("wing", "seed", ww["seed"], integer=True))
            ww["min_wire_distance"] = _num("wing", "min_wire_distance", ww["min_wire_distance"])
            out["wing"] = ww
        o = dict(d.get("output", {}) or {})
        _known("output", o, {"path", "format"})
        fmt = o.get("format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigError("output.format: expected csv or json")
        out["output"] = {"path": o.get("path"), "format": fmt}
        return cls(**out)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self):
        d = {k: copy.deepcopy(getattr(self, k)) for k in _BLOCKS}
        return {k: v for k, v in d.items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def spec(self, **override):
        fd = copy.deepcopy(self.field)
        if override and "preset" in fd:
            fd["params"].update(override)
        return _spec_from(fd, self.units["wire_prefactor"])

    def system(self, **override):
        u = self.units
        return R.SpinHalf(self.spec(**override), mu=u["mu"], hbar=u["hbar"], mass=u["mass"])


def build_field(config):
    return config.spec()


def build_system(config):
    return config.system()


# -- output ------------------------------------------------------------------

def _fmt(v):
    v = float(v) + 0.0  # drop negative zero
    if not np.isfinite(v):
        return "nan"
    r = repr(v)
    return r[:-2] if r.endswith(".0") else r


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _write(text, path):
    """Write to ``path`` atomically (temp file + rename); ``None`` means stdout."""
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_of(args, cfg):
    path = args.out or cfg.output["path"]
    if path and path.endswith(".json"):
        return "json"
    if path and path.endswith(".csv"):
        return "csv"
    return cfg.output["format"]


def _json(obj):
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (float, np.floating)):
            return float(o) if np.isfinite(o) else None
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o
    return json.dumps(clean(obj), indent=1, sort_keys=True) + "\n"


def _summary(msg):
    print(msg, file=sys.stderr)


# -- commands ----------------------------------------------------------------

def _require(cfg, block):
    if getattr(cfg, block) is None:
        raise ConfigError(f"config: missing {block!r} block")
    return getattr(cfg, block)


def _scan_grid(cfg, args):
    g = copy.deepcopy(_require(cfg, "scan"))
    if args.slice:
        axis, val = _parse_slice(args.slice)
        keep = [a for a in range(3) if a != axis]
        if len(g["axes"]) == 3:
            g["lo"] = [g["lo"][a] for a in keep]
            g["hi"] = [g["hi"][a] for a in keep]
            g["dims"] = [g["dims"][a] for a in keep]
        elif len(g["axes"]) != 2 or set(g["axes"]) != set(keep):
            raise ConfigError(f"--slice: scan axes {g['axes']} do not match a slice normal to axis {axis}")
        g["axes"] = keep
        g["fixed"][axis] = val
    if args.grid:
        g["dims"] = [int(args.grid)] * len(g["axes"])
    return _grid_of(g)


def _parse_slice(s):
    try:
        name, val = s.split("=")
        axis = "xyz".index(name.strip())
        return axis, float(val)
    except ValueError:
        raise ConfigError(f"--slice: expected x=v, y=v or z=v, got {s!r}") from None


def cmd_field_eval(cfg, args):
    spec = cfg.spec()
    pts = np.array(_require(cfg, "points"))
    B = F.eval_B(spec, pts)
    mag = np.linalg.norm(B, axis=-1)
    ok = np.isfinite(mag)
    rows = [(*p, *b, m) for p, b, m in zip(pts, B, mag)]
    if _fmt_of(args, cfg) == "json":
        text = _json({"config": cfg.to_dict(), "points": pts.tolist(), "B": B.tolist(),
                      "B_abs": mag.tolist(), "valid": ok.tolist()})
    else:
        text = _csv(("x", "y", "z", "bx", "by", "bz", "b_abs"), rows)
    _write(text, args.out or cfg.output["path"])
    _summary(f"field-eval: {len(pts)} points, {int((~ok).sum())} invalid, "
             f"|B| in [{np.nanmin(mag) if ok.any() else float('nan'):.6g}, "
             f"{np.nanmax(mag) if ok.any() else float('nan'):.6g}]")
    if not ok.all() and not args.allow_invalid:
        return EXIT_EMPTY
    return EXIT_OK


def cmd_potentials(cfg, args):
    sys_ = cfg.system()
    pts = np.array(_require(cfg, "points"))
    samples = [R.potentials(sys_, p) for p in pts]
    ok = np.array([s.valid for s in samples])
    if _fmt_of(args, cfg) == "json":
        text = _json({"config": cfg.to_dict(),
                      "samples": [dict(point=p.tolist(), **s.to_dict()) for p, s in zip(pts, samples)]})
    else:
        rows = [(*p, s.v_dyn, s.v_geom, s.v_total, int(s.valid)) for p, s in zip(pts, samples)]
        text = _csv(T.CSV_COLUMNS, rows)
    _write(text, args.out or cfg.output["path"])
    _summary(f"potentials: {len(pts)} points, {int((~ok).sum())} invalid")
    if not ok.all() and not args.allow_invalid:
        return EXIT_EMPTY
    return EXIT_OK


def cmd_scan(cfg, args):
    grid = _scan_grid(cfg, args)
    t0 = time.perf_counter()
    res = T.scan_potential(cfg.system(), grid)
    dt = time.perf_counter() - t0
    if _fmt_of(args, cfg) == "json":
        d = res.to_dict()
        d["config"] = cfg.to_dict()
        text = _json(d)
    else:
        text = res.to_csv()
    _write(text, args.out or cfg.output["path"])
    vt = res.v_total[res.valid]
    rng = f"[{vt.min():.6g}, {vt.max():.6g}]" if vt.size else "[]"
    _summary(f"scan: {grid.size} points, {int((~res.valid).sum())} invalid, v_total in {rng}, {dt:.2f}s")
    return EXIT_OK if vt.size else EXIT_EMPTY


def cmd_minima(cfg, args):
    m = _require(cfg, "minima")
    seed = m["seed"] if args.seed is None else args.seed
    region = (np.array(m["region"][0]), np.array(m["region"][1]))
    b0s = m["b0_scan"] if m["b0_scan"] is not None else [None]
    runs = []
    t0 = time.perf_counter()
    n_min = 0
    for b0 in b0s:
        sys_ = cfg.system() if b0 is None else cfg.system(B0=_scaled_bias(cfg, b0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", T.ScanWarning)
            found = T.find_minima(T.as_potential(sys_, m["include_geom"]), region,
                                  n_starts=m["n_starts"], seed=seed, max_iter=m["max_iter"])
        n_min += sum(f.kind == "minimum" for f in found)
        runs.append({"B0": b0, "minima": [f.to_dict() for f in found]})
    dt = time.perf_counter() - t0
    _write(_json({"config": cfg.to_dict(), "seed": seed, "runs": runs}), args.out or cfg.output["path"])
    best = min((r for run in runs for r in run["minima"]), key=lambda r: r["value"], default=None)
    tail = f", lowest {best['value']:.9g} at {np.round(best['location'], 6).tolist()}" if best else ""
    _summary(f"minima: {len(b0s)} run(s), {n_min} minimum(s){tail}, {dt:.2f}s")
    return EXIT_OK if n_min else EXIT_EMPTY


def _scaled_bias(cfg, b0):
    # keep the configured bias direction, replace its magnitude
    base = cfg.field["params"].get("B0", 0.5 if cfg.field["preset"] == "cube_trap" else 1.0)
    if np.isscalar(base):
        return float(b0)
    v = np.asarray(base, dtype=float)
    return (float(b0) * v / np.linalg.norm(v)).tolist()


def cmd_contour(cfg, args):
    grid = _scan_grid(cfg, args)
    if grid.ndim != 2:
        raise ConfigError("contour: scan must be 2-D (set two axes or use --slice)")
    res = T.scan_potential(cfg.system(), grid)
    c = cfg.contour or {"level": None, "reference": None}
    level = args.level if args.level is not None else c["level"]
    vt = res.v_total[res.valid]
    if level is None:
        level = _default_level(cfg, grid, vt, c["reference"])
    contours = T.contour_slice(res, level, reference=c["reference"])
    _write(_json({"config": cfg.to_dict(), "level": level, "plane_axes": list(grid.axes),
                  "contours": [k.to_dict() for k in contours]}), args.out or cfg.output["path"])
    n_closed = sum(k.closed for k in contours)
    _summary(f"contour: level {level:.9g}, {len(contours)} contour(s), {n_closed} closed")
    return EXIT_OK if contours else EXIT_EMPTY


def _default_level(cfg, grid, vt, reference):
    """A level just above the reference point's value (or the scan minimum)."""
    if not vt.size:
        return float("nan")
    if reference is not None:
        p = np.array(grid.origin, dtype=float)
        p[list(grid.axes)] = reference
        v0 = float(sum(R.potential_arrays(cfg.system(), p)))
        if np.isfinite(v0):
            return v0 + 1e-3 * max(abs(v0), 1e-12)
    lo = float(vt.min())
    return lo + 1e-3 * (float(np.median(vt)) - lo)


def _spectrum_grid(ss, args):
    if "box" in ss:
        b = ss["box"]
        return S.box_grid(b["length"], args.grid or b["sites"], b["axis"], b["origin"])
    if "ring" in ss:
        b = ss["ring"]
        return S.ring_grid(b["length"], args.grid or b["sites"], b["axis"], b["origin"])
    g = copy.deepcopy(ss)
    if args.grid:
        g["dims"] = [int(args.grid)] * len(g["axes"])
    return _grid_of(g)


def cmd_spectrum(cfg, args):
    ss = _require(cfg, "spectrum")
    grid = _spectrum_grid(ss, args)
    sys_ = cfg.system()
    t0 = time.perf_counter()
    try:
        H = S.build_lattice(sys_, grid, ss["boundary"],
                            include_geom=ss["potential"] in ("total", "geom"),
                            include_dyn=ss["potential"] in ("total", "dyn"))
        res = S.lowest_eigenpairs(H, min(ss["k"], grid.size), vectors=False)
    except R.InvalidSampleError as exc:
        _summary(f"spectrum: {exc}")
        return EXIT_EMPTY
    dt = time.perf_counter() - t0
    d = res.to_dict()
    d["config"] = cfg.to_dict()
    if ss["boundary"] == "periodic" and grid.ndim == 1:
        d["loop_phase"] = float(H.loop_phase(0))
    _write(_json(d), args.out or cfg.output["path"])
    _summary(f"spectrum: {grid.size} sites, {len(res.eigenvalues)} levels, "
             f"E0 = {res.eigenvalues[0]:.9g}, max residual {res.residuals.max():.2e}, {dt:.2f}s")
    return EXIT_OK


def cmd_wing_check(cfg, args):
    w = _require(cfg, "wing")
    spec = cfg.spec()
    seed = w["seed"] if args.seed is None else args.seed
    if cfg.points is not None:
        pts = np.array(cfg.points)
    else:
        rng = np.random.default_rng(seed)
        lo, hi = np.array(w["region"][0]), np.array(w["region"][1])
        pts = []
        tries = 0
        while len(pts) < w["n_points"] and tries < 1000 * w["n_points"]:
            p = rng.uniform(lo, hi)
            tries += 1
            dist = F.wire_distances(spec, p)
            if dist.size == 0 or dist.min() > w["min_wire_distance"]:
                pts.append(p)
        pts = np.array(pts).reshape(-1, 3)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always", T.ScanWarning)
        out = T.wing_check(spec, pts)
    rows = [(*p, lap, sc) for p, lap, sc in out]
    if _fmt_of(args, cfg) == "json":
        text = _json({"config": cfg.to_dict(), "seed": seed,
                      "points": [{"point": list(p), "laplacian": l, "scale": s} for p, l, s in out]})
    else:
        text = _csv(("x", "y", "z", "laplacian", "scale"), rows)
    _write(text, args.out or cfg.output["path"])
    if not out:
        _summary("wing-check: no valid points")
        return EXIT_EMPTY
    rel = min(l / s if s > 0 else 0.0 for _, l, s in out)
    _summary(f"wing-check: {len(out)} points, min laplacian/scale {rel:.3e}")
    return EXIT_OK


COMMANDS = {
    "field-eval": cmd_field_eval,
    "potentials": cmd_potentials,
    "scan": cmd_scan,
    "minima": cmd_minima,
    "contour": cmd_contour,
    "spectrum": cmd_spectrum,
    "wing-check": cmd_wing_check,
}


def make_parser():
    p = argparse.ArgumentParser(prog="geomtrap", description="Slow-mode potentials and traps for atoms in magnetic fields.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--grid", type=int, help="override grid points per axis")
        sp.add_argument("--slice", help="2-D plane normal to an axis, e.g. z=0")
        sp.add_argument("--level", type=float, help="contour level")
        sp.add_argument("--seed", type=int, help="override the random seed")
        sp.add_argument("--allow-invalid", action="store_true", help="exit 0 even if some points are invalid")
        sp.add_argument("--echo-config", action="store_true", help="print the normalised config and exit")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from None
        cfg = Config.from_json(text)
        if args.grid is not None and args.grid < 2:
            raise ConfigError("--grid: need at least 2 points")
        if args.echo_config:
            sys.stdout.write(cfg.to_json() + "\n")
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, F.SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
