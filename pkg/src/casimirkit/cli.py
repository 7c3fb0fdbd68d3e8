"""Command-line driver: ``casimirkit {run,compare,sweep,validate} CONFIG``.

A scenario is one YAML document::

    kind: plates                 # plates | mirrors1d | cylinders2d |
                                 # cylinders2d_spectral | spheres3d | integrand_map
    name: pm-plates
    materials:
      metal: {kind: perfect_metal}
    geometry: {a: 1.0, bodies: [metal, metal]}
    method: {path: lifshitz}
    frequency: {rule: gauss_laguerre, points: 40, scale: 0.5}
    temperature: {kelvin: 0}
    output: {dir: out/pm-plates, plots: true}
    tolerance: 1.0e-6            # used by ``compare``

Lengths are in micrometres and everything inside runs in natural units
(hbar = c = 1); reports carry natural and SI columns.  Exit codes: 0 ok,
2 configuration error, 3 numerical failure, 4 comparison FAIL.
"""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import fd_solver as fd
from . import lifshitz as lf
from . import materials as mt
from . import scattering as sc
from . import svg
from .errors import CasimirError, ConfigError, NumericalError
from .quadrature import build_rule
from .units import SI_FACTORS, SI_UNITS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_COMPARE = 0, 2, 3, 4

KINDS = ("plates", "mirrors1d", "cylinders2d", "cylinders2d_spectral", "spheres3d", "integrand_map")
SECTIONS = {"kind", "name", "materials", "geometry", "method", "frequency", "temperature",
            "output", "tolerance"}

# sweepable parameter -> (section, key)
SWEEPABLE = {"a": ("geometry", "a"), "d": ("geometry", "d"), "dx": ("method", "dx"),
             "cutoff": ("method", "cutoff"), "l_max": ("method", "cutoff"),
             "T": ("temperature", "kelvin"), "n": ("frequency", "points")}

NATURAL_UNITS = {"pressure": "hbar*c/um^4", "energy": "hbar*c/um",
                 "force": "hbar*c/um^2"}

GEOMETRY_KEYS = {
    "plates": {"a", "bodies", "gap"},
    "mirrors1d": {"a", "bodies"},
    "cylinders2d": {"R1", "R2", "d"},
    "cylinders2d_spectral": {"R1", "R2", "d"},
    "spheres3d": {"R1", "R2", "d"},
    "integrand_map": {"a"},
}
METHOD_KEYS = {
    "plates": {"path", "n_k", "n_p"},
    "mirrors1d": {"path", "cells", "dx", "richardson", "order", "margin_cells", "n_terms",
                  "levels"},
    "cylinders2d": {"dx", "levels", "richardson", "order", "subtract_isolated",
                    "vacuum_subtraction", "clearance", "solver", "margin", "stretch_growth",
                    "stretch_length", "body"},
    "cylinders2d_spectral": {"cutoff", "quantity"},
    "spheres3d": {"cutoff", "quantity", "blocked"},
    "integrand_map": {"re_range", "im_range", "n_re", "n_im", "clip"},
}


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Read a YAML scenario; syntax errors carry the line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: YAML parse error: {problem}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def _section(raw: dict, name: str, allowed: set | None) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: must be a mapping")
    if allowed is not None:
        extra = set(sec) - allowed
        if extra:
            raise ConfigError(f"{name}: unknown field(s) {sorted(extra)}")
    return sec


def _number(sec: dict, key: str, where: str, default=None, positive: bool = True,
            integer: bool = False, allow_zero: bool = False):
    if key not in sec or sec[key] is None:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: must be finite")
    if positive and not (v > 0 or (allow_zero and v == 0)):
        raise ConfigError(f"{where}.{key}: must be > 0{' or 0' if allow_zero else ''}, got {v!r}")
    return int(v) if integer else float(v)


def _flag(sec: dict, key: str, where: str, default: bool) -> bool:
    v = sec.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{where}.{key}: expected true/false, got {v!r}")
    return v


def _choice(sec: dict, key: str, where: str, options, default):
    v = sec.get(key, default)
    if v not in options:
        raise ConfigError(f"{where}.{key}: expected one of {list(options)}, got {v!r}")
    return v


def _pair(sec: dict, key: str, where: str, default):
    v = sec.get(key, default)
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
            or not v[1] > v[0]):
        raise ConfigError(f"{where}.{key}: expected [lo, hi] with hi > lo, got {v!r}")
    return (float(v[0]), float(v[1]))


def _bodies_1d(geo: dict, g: dict, mats: dict):
    """Two 1d bodies: ``{shape: mirror, x}`` or ``{shape: slab, x0, x1, material}``."""
    if "bodies" not in geo:
        return [fd.Mirror(0.0), fd.Mirror(g["a"])]
    if "a" in geo:
        raise ConfigError("geometry: give either a or bodies, not both")
    spec = geo["bodies"]
    if not (isinstance(spec, list) and len(spec) == 2):
        raise ConfigError("geometry.bodies: expected a list of two bodies")
    out = []
    for i, b in enumerate(spec):
        where = f"geometry.bodies[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(f"{where}: expected a mapping")
        shape = _choice(b, "shape", where, ("mirror", "slab"), None)
        keys = {"mirror": {"shape", "x"}, "slab": {"shape", "x0", "x1", "material"}}[shape]
        if set(b) - keys:
            raise ConfigError(f"{where}: unknown field(s) {sorted(set(b) - keys)}")
        if shape == "mirror":
            out.append(fd.Mirror(_number(b, "x", where, positive=False)))
            continue
        x0 = _number(b, "x0", where, positive=False)
        x1 = _number(b, "x1", where, positive=False)
        if not x1 > x0:
            raise ConfigError(f"{where}.x1: must exceed x0")
        mid = b.get("material")
        if mid not in mats:
            raise ConfigError(f"{where}.material: undefined material id {mid!r}")
        if mats[mid].is_perfect_metal:
            raise ConfigError(f"{where}.material: use shape: mirror for a perfect metal")
        out.append(fd.Slab(x0, x1, mats[mid]))
    ext = [(b.x, b.x) if isinstance(b, fd.Mirror) else (b.x0, b.x1) for b in out]
    if not ext[0][1] < ext[1][0]:
        raise ConfigError("geometry.bodies: bodies must be ordered left to right without overlap")
    g["a"] = ext[1][0] - ext[0][1]
    return out


@dataclass
class Scenario:
    """Validated scenario; ``raw`` is the document it was built from."""
    kind: str
    name: str
    materials: dict
    geometry: dict
    method: dict
    frequency: dict
    temperature: float
    output: dict
    tolerance: float
    raw: dict = field(repr=False)
    base_dir: Path = Path(".")


def parse_scenario(raw: dict, base_dir=".") -> Scenario:
    """Validate a config mapping.  Every error names the offending field."""
    base_dir = Path(base_dir)
    extra = set(raw) - SECTIONS
    if extra:
        raise ConfigError(f"unknown top-level field(s) {sorted(extra)}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind: expected one of {list(KINDS)}, got {kind!r}")
    name = str(raw.get("name", kind))

    mats = {"vacuum": mt.vacuum()}
    for mid, spec in (_section(raw, "materials", None)).items():
        spec = dict(spec) if isinstance(spec, dict) else spec
        if isinstance(spec, dict) and "file" in spec:
            spec["file"] = str((base_dir / spec["file"]).resolve())
        try:
            m = mt.from_config(spec)
        except ConfigError as exc:
            raise ConfigError(f"materials.{mid}: {exc}") from None
        problems = mt.validate(m)
        if problems:
            raise ConfigError(f"materials.{mid}: {'; '.join(problems)}")
        mats[str(mid)] = m

    geo = _section(raw, "geometry", GEOMETRY_KEYS[kind])
    meth = _section(raw, "method", METHOD_KEYS[kind])
    freq = _section(raw, "frequency", {"rule", "points", "scale"})
    temp = _section(raw, "temperature", {"kelvin"})
    out = _section(raw, "output", {"dir", "plots"})
    T = _number(temp, "kelvin", "temperature", default=0.0, allow_zero=True)

    g = {}
    if kind in ("plates", "integrand_map") or (kind == "mirrors1d" and "bodies" not in geo):
        g["a"] = _number(geo, "a", "geometry")
    elif kind != "mirrors1d":
        for k in ("R1", "R2", "d"):
            g[k] = _number(geo, k, "geometry")
        sc.TwoBodyGeometry(3, g["R1"], g["R2"], g["d"])  # overlap check
    if kind == "plates":
        bodies = geo.get("bodies")
        if not (isinstance(bodies, list) and len(bodies) == 2):
            raise ConfigError("geometry.bodies: expected a list of two material ids")
        for b in bodies + [geo.get("gap", "vacuum")]:
            if b not in mats:
                raise ConfigError(f"geometry: undefined material id {b!r}")
        g["bodies"] = [str(b) for b in bodies]
        g["gap"] = str(geo.get("gap", "vacuum"))
    if kind == "mirrors1d":
        g["bodies"] = _bodies_1d(geo, g, mats)
    m = {}
    if kind == "plates":
        m["path"] = _choice(meth, "path", "method", ("lifshitz", "integrand"), "lifshitz")
        m["n_k"] = _number(meth, "n_k", "method", 64, integer=True)
        m["n_p"] = _number(meth, "n_p", "method", 64, integer=True)
        pm = [mats[b].is_perfect_metal for b in g["bodies"]]
        if m["path"] == "integrand" and not (all(pm) and g["gap"] == "vacuum" and T == 0):
            raise ConfigError("method.path: 'integrand' needs two perfect_metal bodies, "
                              "a vacuum gap and T = 0")
    elif kind == "mirrors1d":
        m["path"] = _choice(meth, "path", "method", ("fd", "mode_sum"), "fd")
        m["cells"] = _number(meth, "cells", "method", 40, integer=True)
        m["dx"] = _number(meth, "dx", "method", -1.0) if "dx" in meth else None
        m["richardson"] = _flag(meth, "richardson", "method", True)
        m["order"] = _number(meth, "order", "method", 2.0)
        m["margin_cells"] = _number(meth, "margin_cells", "method", 8, integer=True)
        m["n_terms"] = _number(meth, "n_terms", "method", 4000, integer=True)
        m["levels"] = _number(meth, "levels", "method", 3, integer=True)
        two_mirrors = all(isinstance(b, fd.Mirror) for b in g["bodies"])
        if m["path"] == "mode_sum" and not two_mirrors:
            raise ConfigError("method.path: 'mode_sum' needs two mirrors")
        if m["dx"] is not None:
            for b in g["bodies"]:
                if isinstance(b, fd.Mirror) and abs(b.x / m["dx"] - round(b.x / m["dx"])) > 1e-9:
                    raise ConfigError(f"method.dx: mirror at x={b.x:g} is not on the dx lattice")
        if T > 0:
            raise ConfigError("temperature.kelvin: mirrors1d is zero-temperature only")
    elif kind == "cylinders2d":
        m["dx"] = _number(meth, "dx", "method", 1.0 / 16)
        m["richardson"] = _flag(meth, "richardson", "method", True)
        m["levels"] = _number(meth, "levels", "method", 2 if m["richardson"] else 1, integer=True)
        m["order"] = _number(meth, "order", "method", 1.0)
        m["subtract_isolated"] = _flag(meth, "subtract_isolated", "method", True)
        m["vacuum_subtraction"] = _flag(meth, "vacuum_subtraction", "method", True)
        m["clearance"] = _number(meth, "clearance", "method", 2.0)
        m["solver"] = _choice(meth, "solver", "method", ("direct", "columns", "cg"), "direct")
        m["margin"] = _number(meth, "margin", "method", 1.0)
        m["stretch_growth"] = _number(meth, "stretch_growth", "method", 1.3)
        m["stretch_length"] = _number(meth, "stretch_length", "method", 300.0, allow_zero=True)
        m["body"] = _choice(meth, "body", "method", (1, 2), 2)
        if m["richardson"] and m["levels"] < 2:
            raise ConfigError("method.levels: Richardson needs at least 2 levels")
        if m["stretch_growth"] < 1.0:
            raise ConfigError("method.stretch_growth: must be >= 1")
        if T > 0:
            raise ConfigError("temperature.kelvin: cylinders2d is zero-temperature only")
        gap = g["d"] - g["R1"] - g["R2"]
        if gap < 4 * m["dx"]:
            raise ConfigError(f"method.dx: gap {gap:g} is below 4 grid cells")
    elif kind in ("cylinders2d_spectral", "spheres3d"):
        m["cutoff"] = _number(meth, "cutoff", "method", -1, integer=True) if "cutoff" in meth else None
        m["quantity"] = _choice(meth, "quantity", "method", ("force", "energy"), "force")
        m["blocked"] = _flag(meth, "blocked", "method", True)
    else:
        m["re_range"] = _pair(meth, "re_range", "method", [0.0, 20.0])
        m["im_range"] = _pair(meth, "im_range", "method", [0.2, 10.0])
        if not m["im_range"][0] > 0:
            raise ConfigError("method.im_range: must stay above the real axis (lo > 0)")
        m["n_re"] = _number(meth, "n_re", "method", 200, integer=True)
        m["n_im"] = _number(meth, "n_im", "method", 100, integer=True)
        m["clip"] = _number(meth, "clip", "method", 1e3)
        if T > 0:
            raise ConfigError("temperature.kelvin: integrand_map is zero-temperature only")

    # at T > 0 the Matsubara sum replaces the frequency rule
    f = {}
    if freq:
        f["rule"] = _choice(freq, "rule", "frequency",
                            ("gauss_laguerre", "transformed_clenshaw_curtis"), "gauss_laguerre")
        f["points"] = _number(freq, "points", "frequency", -1, integer=True) if "points" in freq else None
        f["scale"] = _number(freq, "scale", "frequency", -1.0) if "scale" in freq else None

    o = {"dir": str(out.get("dir", f"out/{name}")), "plots": _flag(out, "plots", "output", True)}
    tol = _number(raw, "tolerance", "tolerance", 1e-6) if "tolerance" in raw else 1e-6
    return Scenario(kind, name, mats, g, m, f, T, o, tol, raw, base_dir)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class SampleRow:
    """One stored integrand sample; the report value is sum(coefficient*weight*integrand)."""
    label: str
    xi: float
    integrand: float
    weight: float
    coefficient: float


@dataclass
class RunReport:
    scenario: dict
    kind: str
    observable: str | None
    value: float | None
    error: float | None
    samples: list
    convergence: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__
    files: list = field(default_factory=list)

    @property
    def unit(self) -> str:
        return NATURAL_UNITS.get(self.observable, "")

    @property
    def si_value(self):
        if self.value is None:
            return None
        return self.value * SI_FACTORS[self.observable]

    @property
    def si_unit(self) -> str:
        return SI_UNITS.get(self.observable, "")

    def reintegrate(self) -> float:
        return math.fsum(s.coefficient * s.weight * s.integrand for s in self.samples)


def _rows(label, samples, coef):
    return [SampleRow(label, float(s.xi), float(s.value), float(s.weight), float(coef))
            for s in samples]


def _freq_rule(scn: Scenario, default_n: int, default_scale: float):
    f = scn.frequency
    return build_rule(f.get("rule", "gauss_laguerre"), f.get("points") or default_n,
                      f.get("scale") or default_scale)


def _doubled(rule):
    return build_rule(rule.kind, 2 * rule.params["n"], rule.params["scale"])


def _richardson_coefficients(hs, p):
    # richardson_extrapolate is linear in the values; feed it unit vectors
    return [fd.richardson_extrapolate([(h, 1.0 if i == j else 0.0) for i, h in enumerate(hs)], p)[0]
            for j in range(len(hs))]


def _run_plates(scn: Scenario) -> RunReport:
    a = scn.geometry["a"]
    m1, m2 = (scn.materials[b] for b in scn.geometry["bodies"])
    gap = scn.materials[scn.geometry["gap"]]
    extra = {}
    if scn.method["path"] == "integrand":
        rule = _freq_rule(scn, 24, 1.0 / (2 * a))
        n_p = scn.method["n_p"]
        vals = []
        for r in (rule, _doubled(rule)):
            nodes = [float(x) for x in r.nodes]
            f = [lf.pm_inner(x, a, n_p) for x in nodes]
            vals.append((r, f))
        (r1, f1), (r2, f2) = vals
        v1 = math.fsum(w * v for w, v in zip(r1.weights, f1))
        samples = [SampleRow("eq-integrand", float(x), float(v), float(w), 1.0)
                   for x, v, w in zip(r2.nodes, f2, r2.weights)]
        value = math.fsum(s.weight * s.integrand for s in samples)
        error = abs(value - v1)
        extra["pressure_times_a4"] = value * a**4
    else:
        system = lf.PlateSystem(m1, m2, a, gap, scn.temperature)
        n_k = scn.method["n_k"]
        if scn.temperature > 0:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                value, smp = lf.lifshitz_pressure(system, n_k=n_k, return_samples=True)
            if caught:
                extra["warnings"] = sorted({str(w.message) for w in caught})
            samples = _rows("matsubara", smp, 1.0)
            error = abs(samples[-1].integrand * samples[-1].weight)
        else:
            rule = _freq_rule(scn, 40, 1.0 / (2 * a))
            value, smp = lf.lifshitz_pressure(system, rule, n_k, return_samples=True)
            value2 = lf.lifshitz_pressure(system, _doubled(rule), n_k)
            samples = _rows("lifshitz", smp, 1.0)
            error = abs(value2 - value)
    return RunReport({}, scn.kind, "pressure", float(value), float(error), samples, extra=extra)


def _run_mirrors(scn: Scenario) -> RunReport:
    a = scn.geometry["a"]
    m = scn.method
    conv = []
    if m["path"] == "mode_sum":
        res = lf.mode_sum_1d(a, "exponential", m["n_terms"], m["levels"])
        samples = [SampleRow("cutoff", float(L), float(v), 1.0, float(c))
                   for L, v, c in zip(res.cutoffs, res.values, res.coefficients)]
        conv = [{"cutoff": float(L), "value": float(v)} for L, v in zip(res.cutoffs, res.values)]
        return RunReport({}, scn.kind, "energy", res.energy, res.error, samples, conv)
    rule = _freq_rule(scn, 30, 1.0 / (2 * a))
    lay = fd.Layout1d(*scn.geometry["bodies"])
    h0 = m["dx"] if m["dx"] is not None else a / m["cells"]
    hs = [h0, h0 / 2] if m["richardson"] else [h0]
    coefs = _richardson_coefficients(hs, m["order"]) if m["richardson"] else [1.0]
    samples, conv, raw = [], [], []
    for h, c in zip(hs, coefs):
        res = fd.casimir_energy_1d(lay, rule, h, margin_cells=m["margin_cells"])
        raw.append((h, res.energy))
        samples += _rows(f"dx={h:.10g}", res.samples, c)
        conv.append({"dx": h, "value": res.energy})
    if m["richardson"]:
        value, error = fd.richardson_extrapolate(raw, m["order"])
    else:
        value, error = raw[0][1], float("nan")
    return RunReport({}, scn.kind, "energy", float(value), float(error), samples, conv)


def _run_cylinders_fd(scn: Scenario) -> RunReport:
    g, m = scn.geometry, scn.method
    R1, R2, d = g["R1"], g["R2"], g["d"]
    rule = _freq_rule(scn, 8, 1.0 / (2 * (d - R1 - R2)))
    stretch = fd.Stretch(growth=m["stretch_growth"], length=m["stretch_length"])
    hs = [m["dx"] / 2**k for k in range(m["levels"])]
    coefs = _richardson_coefficients(hs, m["order"]) if m["richardson"] else [1.0]
    samples, conv, raw = [], [], []
    for h, c in zip(hs, coefs):
        kw = dict(margin=m["margin"], stretch=stretch)
        g_ab = fd.cylinder_grid(R1, R2, d, h, **kw)
        surf = fd.cylinder_surface(g_ab, R1, R2, d, m["body"])
        opts = (m["vacuum_subtraction"], m["clearance"], m["solver"])
        res = fd.stress_force_2d(g_ab, surf, rule, *opts, label="AB")
        parts = [("AB", res, 1.0)]
        if m["subtract_isolated"]:
            g_a = fd.cylinder_grid(R1, R2, d, h, which=(True, False), **kw)
            g_b = fd.cylinder_grid(R1, R2, d, h, which=(False, True), **kw)
            res_a = fd.stress_force_2d(g_a, surf, rule, *opts, label="A")
            res_b = fd.stress_force_2d(g_b, surf, rule, *opts, label="B")
            parts += [("A", res_a, -1.0), ("B", res_b, -1.0)]
            res = fd.subtract_isolated(res, res_a, res_b)
        for label, r, sgn in parts:
            samples += [SampleRow(f"dx={h:.10g}:{label}", s[0], s[1], s[3], sgn * c) for s in r.samples]
        raw.append((h, float(res.force[0])))
        conv.append({"dx": h, "value": float(res.force[0]), "fy": float(res.force[1]),
                     "shape": list(g_ab.shape)})
    if m["richardson"]:
        value, error = fd.richardson_extrapolate(raw, m["order"])
    else:
        value, error = raw[0][1], float("nan")
    extra = {"corrections": (["isolated-body subtraction"] if m["subtract_isolated"] else [])
             + ([f"Richardson p={m['order']:g}"] if m["richardson"] else [])}
    return RunReport({}, scn.kind, "force", float(value), float(error), samples, conv,
                     extra)


def _run_spectral(scn: Scenario) -> RunReport:
    g, m = scn.geometry, scn.method
    dim = 2 if scn.kind == "cylinders2d_spectral" else 3
    geom = sc.TwoBodyGeometry(dim, g["R1"], g["R2"], g["d"])
    fn = sc.force if m["quantity"] == "force" else sc.energy
    obs = m["quantity"]
    if scn.temperature > 0:
        res = fn(geom, m["cutoff"], temperature=scn.temperature, blocked=m["blocked"])
        error = float("nan")
    else:
        rule = _freq_rule(scn, 40, 1.0 / (2 * geom.gap))
        res = fn(geom, m["cutoff"], rule, blocked=m["blocked"])
        error = abs(fn(geom, m["cutoff"], _doubled(rule), blocked=m["blocked"]).value - res.value)
    samples = _rows("logdet" if m["quantity"] == "energy" else "trace", res.samples,
                    1.0 / (2 * math.pi))
    return RunReport({}, scn.kind, obs, float(res.value), float(error), samples,
                     extra={"cutoff": res.meta["cutoff"]})


def _phase_cycles(values_row) -> float:
    ph = np.unwrap(np.angle(values_row))
    return float(abs(ph[-1] - ph[0]) / (2 * math.pi))


def _run_map(scn: Scenario) -> RunReport:
    a, m = scn.geometry["a"], scn.method
    grid = lf.integrand_map(a, m["re_range"], m["im_range"], m["n_re"], m["n_im"])
    extra = {"grid": grid, "clip": m["clip"],
             "phase_cycles_lowest_row": _phase_cycles(grid.values[0]),
             "gaps": int(np.sum(~np.isfinite(grid.values)))}
    return RunReport({}, scn.kind, None, None, None, [], extra=extra)


RUNNERS = {"plates": _run_plates, "mirrors1d": _run_mirrors, "cylinders2d": _run_cylinders_fd,
           "cylinders2d_spectral": _run_spectral, "spheres3d": _run_spectral,
           "integrand_map": _run_map}


def run_scenario(scn: Scenario) -> RunReport:
    """Dispatch to the owning module; no files are written."""
    t0 = time.perf_counter()
    try:
        rep = RUNNERS[scn.kind](scn)
    except (CasimirError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise NumericalError(f"{scn.kind} ({scn.name}): {exc}") from exc
    rep.scenario = copy.deepcopy(scn.raw)
    rep.wall_time = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _g(v) -> str:
    # shortest round-trip repr: deterministic and lossless
    if v is None:
        return ""
    return repr(float(v))


SAMPLE_COLUMNS = ("label", "xi_per_um", "integrand", "weight", "coefficient")
MAP_COLUMNS = ("re_omega_per_um", "im_omega_per_um", "abs_f", "arg_f")
SWEEP_COLUMNS = ("parameter", "parameter_value", "observable", "value_natural", "unit_natural",
                 "value_si", "unit_si", "error_natural", "rel_diff_vs_last")
COMPARE_COLUMNS = ("name_i", "name_j", "value_i", "value_j", "rel_diff", "tolerance", "status")


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(x if isinstance(x, str) else _g(x) for x in r))
    path.write_text("\n".join(lines) + "\n")


def summary_text(rep: RunReport, name: str = "") -> str:
    out = [f"casimirkit {rep.version}  scenario={name or rep.scenario.get('name', rep.kind)}  "
           f"kind={rep.kind}"]
    if rep.value is not None:
        out.append(f"{rep.observable} = {rep.value:.12g} {rep.unit}  "
                   f"(error estimate {rep.error:.3g})")
        out.append(f"{rep.observable} [SI] = {rep.si_value:.12g} {rep.si_unit}")
    for c in rep.convergence:
        out.append("  " + "  ".join(f"{k}={v}" for k, v in c.items()))
    for k, v in rep.extra.items():
        if k == "grid":
            out.append(f"grid: {len(v.re)} x {len(v.im)} points, a = {v.a:g} um")
        else:
            out.append(f"{k}: {v}")
    out.append(f"wall time: {rep.wall_time:.3f} s")
    return "\n".join(out) + "\n"


def write_report(rep: RunReport, scn: Scenario, out_dir: Path | None = None) -> list:
    """Write summary.txt, report.json, samples.csv (or map.csv) and SVG plots."""
    out_dir = Path(out_dir) if out_dir is not None else (scn.base_dir / scn.output["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    (out_dir / "summary.txt").write_text(summary_text(rep, scn.name))
    files.append(out_dir / "summary.txt")
    if scn.kind == "integrand_map":
        grid = rep.extra["grid"]
        _write_csv(out_dir / "map.csv", MAP_COLUMNS, list(grid.rows()))
        files.append(out_dir / "map.csv")
        if scn.output["plots"]:
            a = grid.a
            mag = np.log10(np.minimum(np.abs(grid.values) * a**3, rep.extra["clip"]))
            (out_dir / "map_magnitude.svg").write_text(svg.heatmap(
                mag, grid.re * a, grid.im * a, title="log10 |f(omega)| a^3 (clipped)",
                xlabel="Re omega * a", ylabel="Im omega * a", colorbar_label="log10"))
            (out_dir / "map_phase.svg").write_text(svg.heatmap(
                np.angle(grid.values), grid.re * a, grid.im * a, title="arg f(omega)",
                xlabel="Re omega * a", ylabel="Im omega * a", vmin=-math.pi, vmax=math.pi,
                cyclic=True, colorbar_label="rad"))
            files += [out_dir / "map_magnitude.svg", out_dir / "map_phase.svg"]
    else:
        _write_csv(out_dir / "samples.csv", SAMPLE_COLUMNS,
                   [(s.label, s.xi, s.integrand, s.weight, s.coefficient) for s in rep.samples])
        files.append(out_dir / "samples.csv")
        if scn.output["plots"] and rep.samples:
            series = []
            for label, grp in itertools.groupby(rep.samples, key=lambda s: s.label):
                grp = list(grp)
                series.append((label, [s.xi for s in grp], [abs(s.integrand) for s in grp]))
            logx = all(s.xi > 0 for s in rep.samples)
            (out_dir / "integrand.svg").write_text(svg.line_plot(
                series, xlabel="cutoff [1/um]" if rep.samples[0].label == "cutoff" else "xi [1/um]",
                ylabel="|integrand|",
                title=f"{scn.name}: integrand samples", logx=logx, logy=True))
            files.append(out_dir / "integrand.svg")
    meta = {"scenario": rep.scenario, "kind": rep.kind, "observable": rep.observable,
            "value_natural": rep.value, "unit_natural": rep.unit, "value_si": rep.si_value,
            "unit_si": rep.si_unit, "error_natural": rep.error, "convergence": rep.convergence,
            "extra": {k: v for k, v in rep.extra.items() if k != "grid"},
            "wall_time_s": rep.wall_time, "version": rep.version}
    (out_dir / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    files.append(out_dir / "report.json")
    rep.files = [str(f) for f in files]
    return files


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def scenario_from_path(path) -> Scenario:
    path = Path(path)
    return parse_scenario(load_config(path), path.parent)


def cmd_run(path, out_dir=None) -> RunReport:
    scn = scenario_from_path(path)
    rep = run_scenario(scn)
    write_report(rep, scn, out_dir)
    return rep


@dataclass
class Comparison:
    names: list
    values: list
    observable: str
    rows: list          # (name_i, name_j, v_i, v_j, rel, tol, status)

    @property
    def passed(self) -> bool:
        return all(r[-1] == "PASS" for r in self.rows)

    def table(self) -> str:
        w = max(len(n) for n in self.names)
        out = [f"observable: {self.observable} [{NATURAL_UNITS[self.observable]}]"]
        for n, v in zip(self.names, self.values):
            out.append(f"  {n:<{w}}  {v:.12g}")
        for r in self.rows:
            out.append(f"  {r[0]} vs {r[1]}: rel diff {r[4]:.3e}  tol {r[5]:.1e}  {r[6]}")
        return "\n".join(out) + "\n"


def rel_diff(a: float, b: float) -> float:
    s = max(abs(a), abs(b))
    return 0.0 if s == 0 else abs(a - b) / s


def compare_reports(named: list, tolerance: float | None = None) -> Comparison:
    """``named`` is a list of (name, RunReport, tolerance); pairwise tolerance is the looser of the two."""
    if len(named) < 2:
        raise ConfigError("compare needs at least two configs")
    obs = {r.observable for _, r, _ in named}
    if None in obs or len(obs) != 1:
        raise ConfigError(f"compare: observables differ or are missing: {sorted(map(str, obs))}")
    rows = []
    for (ni, ri, ti), (nj, rj, tj) in itertools.combinations(named, 2):
        tol = tolerance if tolerance is not None else max(ti, tj)
        rd = rel_diff(ri.value, rj.value)
        rows.append((ni, nj, ri.value, rj.value, rd, tol, "PASS" if rd <= tol else "FAIL"))
    return Comparison([n for n, _, _ in named], [r.value for _, r, _ in named], obs.pop(), rows)


def cmd_compare(paths, tolerance=None, out=None) -> Comparison:
    named = []
    seen = {}
    for p in paths:
        scn = scenario_from_path(p)
        name = scn.name
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}#{seen[name]}"
        named.append((name, run_scenario(scn), scn.tolerance))
    cmp = compare_reports(named, tolerance)
    if out:
        _write_csv(Path(out), COMPARE_COLUMNS, cmp.rows)
    return cmp


def cmd_sweep(path, parameter: str, values, out_dir=None):
    """One run per value of ``parameter``; writes sweep.csv and sweep.svg."""
    if parameter not in SWEEPABLE:
        raise ConfigError(f"parameter {parameter!r} is not sweepable; choose from {sorted(SWEEPABLE)}")
    path = Path(path)
    base = load_config(path)
    sec, key = SWEEPABLE[parameter]
    reports, scns = [], []
    for v in values:
        raw = copy.deepcopy(base)
        raw.setdefault(sec, {})
        if raw[sec] is None:
            raw[sec] = {}
        raw[sec][key] = int(v) if key in ("cutoff", "points") else float(v)
        scn = parse_scenario(raw, path.parent)
        if scn.kind == "integrand_map":
            raise ConfigError("integrand_map scenarios have no scalar observable to sweep")
        scns.append(scn)
        reports.append(run_scenario(scn))
    last = reports[-1].value
    rows = []
    for v, r in zip(values, reports):
        rows.append((parameter, float(v), r.observable, r.value, r.unit, r.si_value, r.si_unit,
                     r.error, rel_diff(r.value, last)))
    scn0 = scns[0]
    out_dir = Path(out_dir) if out_dir is not None else scn0.base_dir / scn0.output["dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS, rows)
    files = [out_dir / "sweep.csv"]
    if scn0.output["plots"]:
        xs = [float(v) for v in values]
        if parameter in ("cutoff", "l_max", "n"):
            plot = svg.line_plot([("|value/last - 1|", xs[:-1], [r[-1] for r in rows[:-1]])],
                                 xlabel=parameter, ylabel="relative difference vs richest",
                                 title=f"{scn0.name}: convergence in {parameter}", logy=True)
        else:
            plot = svg.line_plot([(reports[0].observable, xs, [abs(r.value) for r in reports])],
                                 xlabel=parameter, ylabel=f"|{reports[0].observable}|",
                                 title=f"{scn0.name}: sweep over {parameter}",
                                 logx=min(xs) > 0, logy=True)
        (out_dir / "sweep.svg").write_text(plot)
        files.append(out_dir / "sweep.svg")
    return rows, files


def cmd_validate(path) -> Scenario:
    return scenario_from_path(path)


def _parse_values(text: str):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--values: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--values: empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="casimirkit", description="Casimir energies and forces "
                                 "from Lifshitz integrals, finite differences and partial waves")
    ap.add_argument("--version", action="version", version=f"casimirkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one scenario and write its report")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output.dir of the config)")
    p = sub.add_parser("compare", help="run several scenarios of the same observable and compare")
    p.add_argument("configs", nargs="+")
    p.add_argument("--tolerance", type=float, help="override the per-config tolerances")
    p.add_argument("--out", help="write the comparison table as CSV")
    p = sub.add_parser("sweep", help="vary one parameter over a list of values")
    p.add_argument("config")
    p.add_argument("--param", required=True, help=f"one of {sorted(SWEEPABLE)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", help="output directory")
    p = sub.add_parser("validate", help="parse and validate a scenario without running it")
    p.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            rep = cmd_run(args.config, args.out)
            sys.stdout.write(summary_text(rep, rep.scenario.get("name", rep.kind)))
            return EXIT_OK
        if args.command == "compare":
            cmp = cmd_compare(args.configs, args.tolerance, args.out)
            sys.stdout.write(cmp.table())
            return EXIT_OK if cmp.passed else EXIT_COMPARE
        if args.command == "sweep":
            rows, files = cmd_sweep(args.config, args.param, _parse_values(args.values), args.out)
            for r in rows:
                sys.stdout.write(f"{r[0]}={r[1]:g}  {r[2]} = {r[3]:.12g} {r[4]}\n")
            sys.stdout.write(f"wrote {files[0]}\n")
            return EXIT_OK
        scn = cmd_validate(args.config)
        sys.stdout.write(f"{args.config}: OK ({scn.kind}, {len(scn.materials) - 1} material(s))\n")
        return EXIT_OK
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except NumericalError as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
