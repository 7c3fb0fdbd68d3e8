"""Parallel-plate Casimir pressure, the 1d mode sum and complex-plane maps.

Natural units throughout (hbar = c = 1, lengths in um).  Pressures are
returned as attractive magnitudes in hbar*c/um^4.

The perfect-metal plate integrand in real frequency is

    f(omega) = omega^3/pi^2 * int_1^inf p^2 dp / (1 - exp(-2 i p omega a))

which is what remains of the textbook integrand p^2 omega^3/(exp(2 i p omega a) - 1)
after the separation-independent bulk term -p^2 omega^3 is dropped.  The
pressure is Re int f(omega) d omega = Im int f(i xi) d xi, and on the
imaginary axis the p-integral is smooth and exponentially decaying.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import materials as mat
from .errors import ConfigError, NumericalError, TruncationError
from .quadrature import (FrequencyRule, build_rule, fejer2, integrate,
                         matsubara_sum)

PM_CONSTANT = math.pi**2 / 240.0          # P * a^4 for perfect metals
PRINTED_CONSTANT = 1.0 / 240.0            # the constant without pi^2


def _bose(x):
    """1/(exp(x) - 1) without overflow for large x."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-x)
    return e / -np.expm1(-x)


# ---------------------------------------------------------------------------
# perfect-metal plates from the p-integral form
# ---------------------------------------------------------------------------

def pm_inner(xi: float, a: float, n: int = 64) -> float:
    """Im f(i xi) = xi^3/pi^2 * int_1^inf p^2/(exp(2 p xi a) - 1) dp.

    The p-integral uses the transformed Clenshaw-Curtis (Fejer) rule on
    p = 1 + s*t/(1-t) with s = 1/(2 a xi), the decay length of the integrand.
    """
    t, w = fejer2(n)
    s = 1.0 / (2.0 * a * xi)
    p = 1.0 + s * t / (1.0 - t)
    wp = s * w / (1.0 - t) ** 2
    return float(xi**3 / math.pi**2 * np.sum(wp * p**2 * _bose(2.0 * p * xi * a)))


def perfect_metal_pressure(a: float, n_xi: int = 24, n_p: int = 64,
                           check: bool = True) -> float:
    """Attractive pressure between perfect-metal plates at separation ``a``.

    The Wick-rotated double integral over xi (Gauss-Laguerre, scale 1/(2a))
    and p (transformed Clenshaw-Curtis) is evaluated numerically.  The result
    equals pi^2/(240 a^4).

    Raises
    ------
    TruncationError
        If doubling both node counts changes the result by more than 1e-9
        relative (only when ``check`` is true).
    """
    if not a > 0:
        raise ConfigError(f"separation must be > 0, got {a}")

    def run(nx, npp):
        rule = build_rule("gauss_laguerre", nx, 1.0 / (2.0 * a))
        return integrate(rule, lambda x: pm_inner(x, a, npp))[0]

    val = run(n_xi, n_p)
    if check:
        ref = run(2 * n_xi, 2 * n_p)
        if abs(val - ref) > 1e-9 * abs(ref):
            raise TruncationError(f"perfect-metal quadrature not converged: {val!r} vs {ref!r}")
    return val


def perfect_metal_oracle(a: float, n_xi: int = 240, n_p: int = 640) -> float:
    """Brute-force tensor-product Gauss-Legendre evaluation of the same integral.

    Both variables are mapped from (0, 1): xi = s t/(1-t) with s = 1/(2a), and
    p = 1 + u/(1-u) /(2 a xi).  Default node counts are 10x those of the main
    path.  Used only as a verification oracle.
    """
    tg, wg = np.polynomial.legendre.leggauss(n_xi)
    t = 0.5 * (tg + 1.0)
    wt = 0.5 * wg
    s = 1.0 / (2.0 * a)
    xi = s * t / (1.0 - t)
    wxi = s * wt / (1.0 - t) ** 2
    ug, vg = np.polynomial.legendre.leggauss(n_p)
    u = 0.5 * (ug + 1.0)
    wu = 0.5 * vg
    q = u / (1.0 - u)
    wq = wu / (1.0 - u) ** 2
    X = xi[:, None]
    P = 1.0 + q[None, :] / (2.0 * a * X)
    W = wxi[:, None] * wq[None, :] / (2.0 * a * X)
    return float(np.sum(W * X**3 * P**2 * _bose(2.0 * P * X * a)) / math.pi**2)


# ---------------------------------------------------------------------------
# general Lifshitz formula
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlateSystem:
    """Two half-spaces (1 and 2) separated by a gap (medium 3) of width ``a``."""
    half_space_1: mat.MaterialModel
    half_space_2: mat.MaterialModel
    a: float
    gap_material: mat.MaterialModel = field(default_factory=mat.vacuum)
    temperature: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"separation must be > 0, got {self.a}")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.gap_material.is_perfect_metal:
            raise ConfigError("the gap material cannot be a perfect metal")


def _eps(model, xi):
    return None if model.is_perfect_metal else mat.permittivity(model, xi)


def reflection(model, kappa3, xi, eps3):
    """(r_TE, r_TM) of a half-space seen from the gap medium, per kappa3 node.

    For ``xi == 0`` the ``model`` must be a perfect metal; other materials
    reach xi = 0 only through extrapolation.
    """
    if model.is_perfect_metal:
        return -np.ones_like(kappa3), np.ones_like(kappa3)
    e = mat.permittivity(model, xi)
    de = (e - eps3) * xi * xi
    ki = np.sqrt(kappa3 * kappa3 + de)
    # (k3 - ki)/(k3 + ki) written without cancellation
    rte = -de / (kappa3 + ki) ** 2
    rtm = (e * kappa3 - eps3 * ki) / (e * kappa3 + eps3 * ki)
    return rte, rtm


def lifshitz_integrand(system: PlateSystem, xi: float, n_k: int = 64) -> float:
    """Pressure integrand at imaginary frequency ``xi`` (> 0).

    1/(2 pi^2) int k dk kappa3 sum_p r1 r2 e^{-2 kappa3 a}/(1 - r1 r2 e^{-2 kappa3 a}),
    with the k-integral rewritten over kappa3 >= sqrt(eps3) xi and evaluated
    by a transformed Clenshaw-Curtis rule of scale 1/(2a).
    """
    a = system.a
    eps3 = mat.permittivity(system.gap_material, xi)
    t, w = fejer2(n_k)
    s = 1.0 / (2.0 * a)
    k0 = math.sqrt(eps3) * xi
    kap = k0 + s * t / (1.0 - t)
    wk = s * w / (1.0 - t) ** 2
    r1 = reflection(system.half_space_1, kap, xi, eps3)
    r2 = reflection(system.half_space_2, kap, xi, eps3)
    total = np.zeros_like(kap)
    e2 = np.exp(-2.0 * kap * a)
    for ra, rb in zip(r1, r2):
        if np.any(np.abs(ra) > 1 + 1e-12) or np.any(np.abs(rb) > 1 + 1e-12):
            raise NumericalError(f"|r| > 1 at xi={xi!r}: reflection coefficients inconsistent")
        rr = ra * rb * e2
        total += rr / (1.0 - rr)
    return float(np.sum(wk * kap * kap * total) / (2.0 * math.pi**2))


def zero_frequency_term(system: PlateSystem, n_k: int = 64, h_rel: float = 1e-6) -> float:
    """xi -> 0+ limit of the pressure integrand.

    Perfect metals use the Schwinger prescription (r_TE = -1, r_TM = +1 kept
    at xi = 0) and emit a warning, since the correct thermal treatment of the
    zero-frequency TE term for metals is disputed.  Other materials are
    sampled at xi = h and h/2 with h = h_rel/a and Richardson-extrapolated
    assuming a linear leading term.
    """
    pm = system.half_space_1.is_perfect_metal or system.half_space_2.is_perfect_metal
    h = h_rel / system.a
    if pm:
        warnings.warn("perfect-metal zero-frequency term uses the Schwinger prescription "
                      "(r_TE=-1, r_TM=+1 at xi=0); this choice is disputed for real metals",
                      stacklevel=2)
    f1 = lifshitz_integrand(system, h, n_k)
    f2 = lifshitz_integrand(system, 0.5 * h, n_k)
    if pm and system.half_space_1.is_perfect_metal and system.half_space_2.is_perfect_metal:
        # the perfect-metal integrand is flat at xi=0 to O(xi^2)
        return f2
    return 2.0 * f2 - f1


def default_rule(a: float, n: int = 40) -> FrequencyRule:
    return build_rule("gauss_laguerre", n, 1.0 / (2.0 * a))


def lifshitz_pressure(system: PlateSystem, rule: FrequencyRule | None = None,
                      n_k: int = 64, return_samples: bool = False,
                      natural_temperature: bool = False, n_max: int | None = None):
    """Attractive pressure between two half-spaces (positive = attraction).

    At ``system.temperature == 0`` the xi-integral uses ``rule`` (default:
    40-point Gauss-Laguerre with scale 1/(2a)).  At T > 0 the integral is
    replaced by a Matsubara sum; ``system.temperature`` is in kelvin unless
    ``natural_temperature`` is true.
    """
    f = lambda x: lifshitz_integrand(system, x, n_k)  # noqa: E731
    if system.temperature > 0:
        res = matsubara_sum(system.temperature, f, n_max=n_max,
                            zero_term=lambda: zero_frequency_term(system, n_k),
                            natural=natural_temperature, return_samples=True)
        return res if return_samples else res[0]
    if rule is None:
        rule = default_rule(system.a)
    val, samples = integrate(rule, f)
    return (val, samples) if return_samples else val


# ---------------------------------------------------------------------------
# 1d mode sum
# ---------------------------------------------------------------------------

@dataclass
class ModeSumResult:
    energy: float
    error: float
    cutoffs: list
    values: list
    coefficients: list    # energy = sum(coefficients * values)


def smooth_cutoff_energy(a: float, cutoff: float, n_terms: int) -> float:
    """sum_n (omega_n/2) e^{-omega_n/cutoff} minus the continuum a*cutoff^2/(2 pi).

    Modes omega_n = n pi/a, n = 1..n_terms.
    """
    n = np.arange(1, n_terms + 1, dtype=float)
    w = n * math.pi / a
    return float(np.sum(0.5 * w * np.exp(-w / cutoff)) - a * cutoff**2 / (2.0 * math.pi))


def sharp_cutoff_energy(a: float, cutoff: float) -> float:
    """Unregularized mode sum with a hard cutoff minus its continuum a*cutoff^2/(4 pi)."""
    nmax = int(math.floor(cutoff * a / math.pi + 1e-12))
    n = np.arange(1, nmax + 1, dtype=float)
    return float(np.sum(0.5 * n * math.pi / a) - a * cutoff**2 / (4.0 * math.pi))


def mode_sum_1d(a: float, cutoff_policy: str = "exponential", n_terms: int = 4000,
                levels: int = 3, tol: float = 1e-9) -> ModeSumResult:
    """Interaction energy of two perfect mirrors in 1d from the regularized mode sum.

    The cutoff sum differs from the limit by a series in 1/cutoff^2; three
    cutoffs (largest one chosen so the truncated terms are below e^-40) are
    combined by Richardson extrapolation.  The limit is -pi/(24 a).
    """
    if not a > 0:
        raise ConfigError(f"separation must be > 0, got {a}")
    if n_terms < 10:
        raise ConfigError("mode_sum_1d needs n_terms >= 10")
    if cutoff_policy != "exponential":
        raise ConfigError(f"unknown cutoff policy {cutoff_policy!r}")
    lam_max = n_terms * math.pi / (40.0 * a)
    lams = [lam_max / 2**k for k in range(levels)]
    vals = [smooth_cutoff_energy(a, L, n_terms) for L in lams]
    # Richardson table in h = 1/cutoff with even powers 2, 4, ...; it is
    # linear in the samples, so it is carried as coefficient vectors
    table = [list(np.eye(levels))]
    for j in range(1, levels):
        prev = table[-1]
        fac = 4.0**j
        table.append([(fac * prev[i] - prev[i + 1]) / (fac - 1.0) for i in range(len(prev) - 1)])
    coef = table[-1][0]
    energy = float(np.dot(coef, vals))
    err = abs(energy - float(np.dot(table[-2][0], vals))) if levels > 1 else abs(vals[0])
    if err > max(tol, 1e-6 * abs(energy)):
        raise TruncationError(f"mode sum extrapolation not converged (error {err:.3e})")
    return ModeSumResult(energy, err, lams, vals, [float(c) for c in coef])


def cutoff_oscillation(a: float, k: int, n_terms: int | None = None):
    """Differences between results at the adjacent cutoffs k pi/a and (k+1) pi/a.

    Returns ``(sharp_difference, smooth_difference)``.  The hard-cutoff sum
    jumps by pi/(4a) per mode while the smooth-cutoff value barely moves.
    """
    if n_terms is None:
        n_terms = 60 * (k + 1)
    l1, l2 = k * math.pi / a, (k + 1) * math.pi / a
    sharp = sharp_cutoff_energy(a, l2) - sharp_cutoff_energy(a, l1)
    smooth = smooth_cutoff_energy(a, l2, n_terms) - smooth_cutoff_energy(a, l1, n_terms)
    return sharp, smooth


# ---------------------------------------------------------------------------
# complex-plane integrand map
# ---------------------------------------------------------------------------

@dataclass
class ContourGrid:
    re: np.ndarray
    im: np.ndarray
    values: np.ndarray           # shape (len(im), len(re)), row-major in im
    a: float = 1.0

    def rows(self):
        for i, y in enumerate(self.im):
            for j, x in enumerate(self.re):
                v = self.values[i, j]
                yield float(x), float(y), float(abs(v)), float(np.angle(v))


def plate_integrand(omega, a: float = 1.0, tol: float = 1e-15, max_terms: int = 200000):
    """f(omega) for perfect-metal plates, Im(omega) > 0, vectorized.

    Uses 1/(1 - e^{-z}) = -sum_k e^{k z} for Re z < 0 and the closed form
    int_1^inf p^2 e^{-s p} dp = e^{-s}(1/s + 2/s^2 + 2/s^3).
    """
    w = np.asarray(omega, dtype=complex)
    if np.any(w.imag <= 0):
        raise ConfigError("plate_integrand needs Im(omega) > 0")
    s1 = -2j * w * a                  # = 2 a Im(w) - 2 i a Re(w), Re > 0
    acc = np.zeros_like(w)
    k = 1
    while True:
        s = k * s1
        term = np.exp(-s) * (1.0 / s + 2.0 / s**2 + 2.0 / s**3)
        acc -= term
        if np.all(np.abs(term) <= tol * np.maximum(np.abs(acc), 1e-300)) or k >= max_terms:
            break
        k += 1
    return w**3 / math.pi**2 * acc


def integrand_map(a: float, re_range=(0.0, 20.0), im_range=(0.2, 10.0),
                  n_re: int = 200, n_im: int = 100) -> ContourGrid:
    """Sample f(omega) on a rectangular grid (ranges in units of 1/a).

    ``im_range[0]`` must be > 0: f diverges toward the real axis.
    """
    if not im_range[0] > 0:
        raise ConfigError("integrand map must stay off the real axis (im_range[0] > 0)")
    if n_re < 2 or n_im < 2:
        raise ConfigError("integrand map needs at least 2 points per axis")
    re = np.linspace(re_range[0], re_range[1], n_re) / a
    im = np.linspace(im_range[0], im_range[1], n_im) / a
    W = re[None, :] + 1j * im[:, None]
    vals = np.empty(W.shape, dtype=complex)
    with np.errstate(all="ignore"):
        for i in range(n_im):
            vals[i] = plate_integrand(W[i], a)
    # nodes that fail to evaluate are kept as NaN gaps rather than dropped
    vals[~np.isfinite(vals)] = np.nan
    return ContourGrid(re, im, vals, a)
