"""Dielectric response on the imaginary-frequency axis.

All models are non-magnetic (mu = 1) and evaluated at imaginary frequency
``omega = i*xi``, where the permittivity is real.  Frequencies are in
natural units (hbar = c = 1, lengths in micrometres), so ``xi`` is in 1/um.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, PerfectMetalError

KINDS = ("vacuum", "constant", "drude", "plasma", "tabulated", "perfect_metal")


@dataclass(frozen=True)
class MaterialModel:
    """Immutable description of eps(i xi).

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    eps : float
        Static value for ``kind="constant"``.
    omega_p, gamma : float
        Plasma frequency and damping (1/um) for drude/plasma.
    table : tuple of (xi, eps) pairs
        Samples for ``kind="tabulated"``; sorted by xi on construction.
    name : str
        Optional label used in reports.
    """

    kind: str
    eps: float = 1.0
    omega_p: float = 0.0
    gamma: float = 0.0
    table: tuple = ()
    name: str = ""
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown material kind {self.kind!r}")
        if self.kind in ("drude", "plasma") and not self.omega_p > 0:
            raise ConfigError(f"{self.kind} material needs omega_p > 0")
        if self.kind == "drude" and self.gamma < 0:
            raise ConfigError("drude material needs gamma >= 0")
        if self.kind == "tabulated" and len(self.table) > 0:
            tab = np.asarray(self.table, dtype=float).reshape(-1, 2)
            tab = tab[np.argsort(tab[:, 0], kind="stable")]
            if np.any(tab[:, 0] <= 0):
                raise ConfigError("tabulated xi samples must be > 0")
            if np.any(np.diff(tab[:, 0]) == 0):
                raise ConfigError("tabulated xi samples must be distinct")
            object.__setattr__(self, "table", tuple(map(tuple, tab)))
            if len(tab) >= 2:
                interp = PchipInterpolator(np.log(tab[:, 0]), tab[:, 1], extrapolate=False)
                object.__setattr__(self, "_interp", interp)

    @property
    def is_perfect_metal(self) -> bool:
        return self.kind == "perfect_metal"

    def __call__(self, xi):
        return permittivity(self, xi)


def vacuum() -> MaterialModel:
    return MaterialModel("vacuum", name="vacuum")


def constant(eps: float) -> MaterialModel:
    return MaterialModel("constant", eps=float(eps))


def drude(omega_p: float, gamma: float) -> MaterialModel:
    return MaterialModel("drude", omega_p=float(omega_p), gamma=float(gamma))


def plasma(omega_p: float) -> MaterialModel:
    return MaterialModel("plasma", omega_p=float(omega_p))


def perfect_metal() -> MaterialModel:
    return MaterialModel("perfect_metal", name="perfect_metal")


def tabulated(xi: Sequence[float], eps: Sequence[float]) -> MaterialModel:
    return MaterialModel("tabulated", table=tuple(zip(map(float, xi), map(float, eps))))


def load_table(path) -> MaterialModel:
    """Read a two-column (xi, eps) text file; '#' starts a comment."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ConfigError(f"{path}: expected two columns (xi, eps)")
    return tabulated(data[:, 0], data[:, 1])


def permittivity(model: MaterialModel, xi):
    """Return eps(i xi) for scalar or array ``xi`` (> 0).

    Raises
    ------
    PerfectMetalError
        For the perfect-metal sentinel, which has no finite permittivity.
    ConfigError
        For an empty table or non-positive frequency.
    """
    if model.kind == "perfect_metal":
        raise PerfectMetalError("perfect_metal has no numeric permittivity; "
                                "use the perfect-metal reflection path")
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(~(xi_arr > 0)):
        raise ConfigError("permittivity needs xi > 0")
    k = model.kind
    if k == "vacuum":
        out = np.ones_like(xi_arr)
    elif k == "constant":
        out = np.full_like(xi_arr, model.eps)
    elif k == "drude":
        out = 1.0 + model.omega_p**2 / (xi_arr * (xi_arr + model.gamma))
    elif k == "plasma":
        out = 1.0 + model.omega_p**2 / xi_arr**2
    else:
        if len(model.table) == 0:
            raise ConfigError("tabulated material has an empty table")
        tab = np.asarray(model.table)
        if len(tab) == 1:
            out = np.full_like(xi_arr, tab[0, 1])
        else:
            # clamped extrapolation at both ends
            lx = np.clip(np.log(xi_arr), np.log(tab[0, 0]), np.log(tab[-1, 0]))
            out = model._interp(lx)
    return out if out.ndim else float(out)


def dxi2eps(model: MaterialModel, xi):
    """d(xi^2 eps(i xi))/d xi, the weight of the field energy density."""
    if model.kind == "perfect_metal":
        raise PerfectMetalError("perfect_metal has no numeric permittivity")
    xi_arr = np.asarray(xi, dtype=float)
    k = model.kind
    if k in ("vacuum", "constant"):
        out = 2.0 * xi_arr * permittivity(model, xi_arr)
    elif k == "drude":
        # xi^2 + wp^2 xi/(xi + gamma)
        out = 2.0 * xi_arr + model.omega_p**2 * model.gamma / (xi_arr + model.gamma) ** 2
    elif k == "plasma":
        out = 2.0 * xi_arr
    else:
        eps = permittivity(model, xi_arr)
        tab = np.asarray(model.table)
        if len(tab) < 2:
            deps = np.zeros_like(xi_arr)
        else:
            lx = np.log(xi_arr)
            inside = (lx > np.log(tab[0, 0])) & (lx < np.log(tab[-1, 0]))
            d = model._interp.derivative()(np.clip(lx, np.log(tab[0, 0]), np.log(tab[-1, 0])))
            deps = np.where(inside, d / xi_arr, 0.0)
        out = 2.0 * xi_arr * eps + xi_arr**2 * deps
    return out if np.ndim(out) else float(out)


def validate(model: MaterialModel, xi_min: float = 1e-4, xi_max: float = 1e4,
             n: int = 200) -> list[str]:
    """Sample eps on a log grid and report invariant violations.

    An empty list means the model passed.  Checked: eps >= 1 everywhere and,
    for dispersive kinds, eps non-increasing in xi.  Tabulated models are
    also checked at their raw samples.
    """
    if model.kind == "perfect_metal":
        return []
    try:
        xs = np.geomspace(xi_min, xi_max, n)
        if model.kind == "tabulated" and model.table:
            xs = np.union1d(xs, np.asarray(model.table)[:, 0])
        eps = np.asarray(permittivity(model, xs))
    except ConfigError as exc:
        return [str(exc)]
    out = []
    if np.any(eps < 1.0):
        i = int(np.argmax(eps < 1.0))
        out.append(f"eps<1: eps(i*{xs[i]:.4g}) = {eps[i]:.6g}")
    if model.kind in ("drude", "plasma", "tabulated"):
        dec = np.diff(eps)
        if np.any(dec > 1e-12 * np.abs(eps[1:])):
            i = int(np.argmax(dec > 1e-12 * np.abs(eps[1:])))
            out.append(f"non-monotone: eps increases between xi={xs[i]:.4g} and {xs[i + 1]:.4g}")
    return out


def from_config(spec: dict) -> MaterialModel:
    """Build a model from a CLI config block such as ``{kind: drude, omega_p: 1}``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("material block needs a 'kind' field")
    kind = spec["kind"]
    allowed = {"vacuum": set(), "perfect_metal": set(), "constant": {"eps"},
               "drude": {"omega_p", "gamma"}, "plasma": {"omega_p"},
               "tabulated": {"file", "xi", "eps"}}
    if kind not in allowed:
        raise ConfigError(f"unknown material kind {kind!r}")
    extra = set(spec) - allowed[kind] - {"kind", "name"}
    if extra:
        raise ConfigError(f"material kind {kind!r}: unknown field(s) {sorted(extra)}")
    try:
        if kind == "vacuum":
            m = vacuum()
        elif kind == "perfect_metal":
            m = perfect_metal()
        elif kind == "constant":
            m = constant(spec["eps"])
        elif kind == "drude":
            m = drude(spec["omega_p"], spec.get("gamma", 0.0))
        elif kind == "plasma":
            m = plasma(spec["omega_p"])
        elif "file" in spec:
            m = load_table(spec["file"])
        else:
            m = tabulated(spec["xi"], spec["eps"])
    except KeyError as exc:
        raise ConfigError(f"material kind {kind!r} missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"material kind {kind!r}: {exc}") from None
    return m
