"""Modified Bessel functions in log space.

The partial-wave integrands combine I_nu(x), which grows like e^x / x^-nu,
with K_nu(x), which decays like e^-x and blows up like x^-nu at small x.
Raw values overflow long before the quantities of interest do, so every
routine here returns logarithms for a whole ladder of orders nu0, nu0 + 1,
..., nu0 + n at a single argument.  ``nu0`` is 0 (cylindrical) or 1/2
(spherical).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ive, kve

from .errors import NumericalError

# ive below this is treated as underflowed and rebuilt from order ratios
_TINY = 1e-280


def log_kv(nu0: float, n: int, x: float) -> np.ndarray:
    """log K_{nu0+k}(x) for k = 0..n (x > 0).

    Upward recurrence K_{v+1} = K_{v-1} + (2v/x) K_v is stable for K; it is
    run on the ratio K_{v+1}/K_v so nothing overflows.
    """
    x = float(x)
    if not x > 0:
        raise NumericalError(f"log_kv needs x > 0, got {x}")
    out = np.empty(n + 1)
    k0 = kve(nu0, x)
    out[0] = math.log(k0) - x
    if n == 0:
        return out
    k1 = kve(nu0 + 1.0, x)
    out[1] = math.log(k1) - x
    rho = k1 / k0
    for k in range(1, n):
        rho = 1.0 / rho + 2.0 * (nu0 + k) / x
        out[k + 1] = out[k] + math.log(rho)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"log K overflow at x={x}")
    return out


def _iv_ratio(nu: float, x: float, tol: float = 4e-16, max_terms: int = 100000) -> float:
    """I_nu(x)/I_{nu-1}(x) = 1/g with g = b0 + 1/(b1 + 1/(b2 + ...)), b_j = 2(nu+j)/x.

    Modified Lentz; used only where I_nu has underflowed, i.e. nu >> x,
    where it converges in a handful of terms.
    """
    f = 2.0 * nu / x
    c, d = f, 0.0
    for j in range(1, max_terms):
        b = 2.0 * (nu + j) / x
        d = 1.0 / (b + d)
        c = b + 1.0 / c
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < tol:
            return 1.0 / f
    raise NumericalError(f"I ratio continued fraction did not converge (nu={nu}, x={x})")


def log_iv(nu0: float, n: int, x: float) -> np.ndarray:
    """log I_{nu0+k}(x) for k = 0..n (x > 0).

    Orders where the scaled value ``ive`` is representable are taken
    directly; above the first order that underflows, log I is continued
    with the exact ratio I_v/I_{v-1} from its continued fraction.
    """
    x = float(x)
    if not x > 0:
        raise NumericalError(f"log_iv needs x > 0, got {x}")
    orders = nu0 + np.arange(n + 1)
    with np.errstate(under="ignore"):
        v = ive(orders, x)
    out = np.empty(n + 1)
    good = v > _TINY
    if not good[0]:
        raise NumericalError(f"I_{nu0}({x}) underflowed")
    first_bad = n + 1 if good.all() else int(np.argmin(good))
    out[:first_bad] = np.log(v[:first_bad]) + x
    for k in range(first_bad, n + 1):
        out[k] = out[k - 1] + math.log(_iv_ratio(nu0 + k, x))
    return out


def log_sph_kn(n: int, x: float) -> np.ndarray:
    """log k_l(x), l = 0..n, with k_l = sqrt(2/(pi x)) K_{l+1/2}(x), so k_0 = e^-x / x."""
    return log_kv(0.5, n, x) + 0.5 * math.log(2.0 / (math.pi * x))


def log_sph_in(n: int, x: float) -> np.ndarray:
    """log i_l(x), l = 0..n, with i_l = sqrt(pi/(2x)) I_{l+1/2}(x), so i_0 = sinh(x)/x."""
    return log_iv(0.5, n, x) + 0.5 * math.log(math.pi / (2.0 * x))
