"""Partial-wave log-determinant energies and forces for two Dirichlet bodies.

Two scalar-Dirichlet bodies (circular cylinders in 2d, spheres in 3d) sit on
the x-axis (2d) or z-axis (3d), centres a distance ``d`` apart.  At imaginary
frequency xi the interaction energy integrand is ln det(I - N) with the round
trip N = T1 U12 T2 U21:

* T is the diagonal Dirichlet T-matrix, I_m/K_m (2d) or i_l/k_l (3d);
* U12 is the translation matrix taking outgoing waves about body 2 to
  regular waves about body 1.  2d: U_mm' = K_|m-m'|(xi d) (Graf).  3d: the
  scalar addition theorem, which only couples equal m.

In the real bases used here U21 = U12^T, so with A = T1^1/2 U12 T2^1/2 the
symmetrized round trip is S = A A^T.  S is positive semi-definite with the
same determinant as N, and I - S is positive definite whenever the bodies do
not overlap.  Every evaluation goes through a Cholesky factor of I - S, which
doubles as the spectral-radius check.

Energies carry hbar*c/(2 pi) in natural units: E = (1/2pi) int ln det dxi
(2d means a scalar field in two space dimensions, not a cylinder per unit length;
in either case energies scale as 1/length).  Forces are along +d on body 2:
F = -dE/dd = (1/2pi) int tr[(I - S)^-1 dS/dd] dxi, negative when attractive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaln, sph_harm_y

from .bessel import log_iv, log_kv, log_sph_kn
from .errors import ConfigError, EvaluationError, NumericalError
from .quadrature import FrequencyRule, IntegrandSample, build_rule, evaluate, matsubara_sum


@dataclass(frozen=True)
class TwoBodyGeometry:
    """Two Dirichlet bodies of radii R1, R2 with centre separation d."""
    dim: int
    R1: float
    R2: float
    d: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if not (self.R1 > 0 and self.R2 > 0 and self.d > 0):
            raise ConfigError("radii and separation must be > 0")
        if not self.d > self.R1 + self.R2:
            raise ConfigError(f"bodies overlap: d={self.d} <= R1+R2={self.R1 + self.R2}")

    @property
    def gap(self) -> float:
        return self.d - self.R1 - self.R2

    def swapped(self) -> "TwoBodyGeometry":
        return TwoBodyGeometry(self.dim, self.R2, self.R1, self.d)

    def scaled(self, lam: float) -> "TwoBodyGeometry":
        return TwoBodyGeometry(self.dim, lam * self.R1, lam * self.R2, lam * self.d)

    def moved(self, d: float) -> "TwoBodyGeometry":
        return TwoBodyGeometry(self.dim, self.R1, self.R2, d)


def default_cutoff(geom: TwoBodyGeometry) -> int:
    """l_max (3d) or m_max (2d): ceil(10 R_max / gap) + 5."""
    return int(math.ceil(10.0 * max(geom.R1, geom.R2) / geom.gap)) + 5


def default_rule(geom: TwoBodyGeometry, n: int = 40) -> FrequencyRule:
    """Gauss-Laguerre matched to the e^(-2 xi gap) decay of the integrand."""
    return build_rule("gauss_laguerre", n, 1.0 / (2.0 * geom.gap))


# ---------------------------------------------------------------------------
# T-matrix
# ---------------------------------------------------------------------------

def log_tmatrix(dim: int, n: int, xi: float, R: float) -> np.ndarray:
    """log T for indices 0..n: log(I_m/K_m) in 2d, log(i_l/k_l) in 3d."""
    x = xi * R
    if dim == 2:
        return log_iv(0.0, n, x) - log_kv(0.0, n, x)
    if dim == 3:
        # i_l/k_l = (pi/2) I_{l+1/2}/K_{l+1/2}
        return math.log(0.5 * math.pi) + log_iv(0.5, n, x) - log_kv(0.5, n, x)
    raise ConfigError(f"dim must be 2 or 3, got {dim}")


def tmatrix_element(dim: int, index: int, xi: float, R: float) -> float:
    """Dirichlet scattering amplitude I_m/K_m (2d, |m|) or i_l/k_l (3d) at xi*R.

    Evaluated from logs; the result is +inf only when the ratio itself does
    not fit in a double (xi*R beyond about 350).
    """
    if not (xi > 0 and R > 0):
        raise ConfigError("tmatrix_element needs xi > 0 and R > 0")
    index = abs(int(index))
    with np.errstate(over="ignore"):
        return float(np.exp(log_tmatrix(dim, index, xi, R)[index]))


# ---------------------------------------------------------------------------
# Wigner 3j and addition-theorem coefficients
# ---------------------------------------------------------------------------

def wigner3j_ladder(j1: int, j2: int, m1: int, m2: int):
    """All 3j symbols (j1 j2 j; m1 m2 -m1-m2) over the allowed j.

    Three-term recurrence in j (Schulten and Gordon), run downward from
    j1 + j2, then normalized by sum (2j+1) w^2 = 1 and the sign fixed by
    the phase of the top entry.  Returns (j_min, values).
    """
    m3 = -m1 - m2
    jmin = max(abs(j1 - j2), abs(m3))
    jmax = j1 + j2
    n = jmax - jmin + 1
    if abs(m1) > j1 or abs(m2) > j2 or n <= 0:
        return jmin, np.zeros(max(n, 0))
    d2, s2, mm = (j1 - j2) ** 2, (j1 + j2 + 1) ** 2, m3 * m3
    c1 = j1 * (j1 + 1) * m3 - j2 * (j2 + 1) * m3
    dm = m2 - m1
    sqrt = math.sqrt

    def A(j):
        v = (j * j - d2) * (s2 - j * j) * (j * j - mm)
        return sqrt(v) if v > 0 else 0.0

    f = [0.0] * n
    f[-1] = 1.0
    if n > 1:
        f[-2] = (2 * jmax + 1) * (c1 - jmax * (jmax + 1) * dm) / ((jmax + 1) * A(jmax))
        a_next = A(jmax)
        for k in range(n - 3, -1, -1):
            j = jmin + k + 1
            a_j = A(j)
            b = -(2 * j + 1) * (c1 - j * (j + 1) * dm)
            f[k] = -(b * f[k + 1] + j * a_next * f[k + 2]) / ((j + 1) * a_j)
            a_next = a_j
    f = np.array(f)
    js = np.arange(jmin, jmax + 1)
    f /= sqrt(float(np.sum((2 * js + 1) * f * f)))
    if (f[-1] > 0) != ((j1 - j2 - m3) % 2 == 0):
        f = -f
    return jmin, f


def _sgn(k: int) -> int:
    return 1 if k % 2 == 0 else -1


def _w3j_zero_table(lmax: int) -> np.ndarray:
    """Z[l1, l2, lam] = (l1 l2 lam; 0 0 0) for l1, l2 <= lmax, lam <= 2 lmax (closed form)."""
    l1, l2, lam = np.ogrid[:lmax + 1, :lmax + 1, :2 * lmax + 1]
    J = l1 + l2 + lam
    g = J // 2
    ok = (J % 2 == 0) & (lam >= np.abs(l1 - l2)) & (lam <= l1 + l2)
    with np.errstate(invalid="ignore"):
        lg = (0.5 * (gammaln(J - 2 * l1 + 1) + gammaln(J - 2 * l2 + 1) + gammaln(J - 2 * lam + 1)
                     - gammaln(J + 2))
              + gammaln(g + 1) - gammaln(g - l1 + 1) - gammaln(g - l2 + 1) - gammaln(g - lam + 1))
        out = np.where(ok, np.where(g % 2 == 0, 1.0, -1.0) * np.exp(np.where(ok, lg, 0.0)), 0.0)
    return out


# coefficient tables, one per m, each built at the largest l_max requested so
# far; smaller cutoffs are leading sub-blocks.  Read-only once stored.
_TABLES: dict = {}
_ZERO: dict = {}


def _zero_table(lmax: int) -> np.ndarray:
    best = _ZERO.get("z")
    if best is None or best.shape[0] <= lmax:
        best = _w3j_zero_table(lmax)
        _ZERO["z"] = best
    return best


def _coupling(lmax: int, m: int) -> np.ndarray:
    """C[l', l, lam] for l, l' = |m|..lmax with U_l'l = sum_lam C k_lam(xi d).

    C = (-1)^(l+m) sqrt((2l+1)(2l'+1)) (2lam+1) (l l' lam; 0 0 0)(l l' lam; m -m 0).
    Only l' <= l is computed; the parity rule C_l'l = (-1)^(l+l') C_ll' fills
    the rest.
    """
    m = abs(m)
    cached = _TABLES.get(m)
    if cached is None or cached[0] < lmax:
        Z = _zero_table(lmax)
        ls = np.arange(m, lmax + 1)
        nl, nlam = len(ls), 2 * lmax + 1
        C = np.zeros((nl, nl, nlam))
        for a, lp in enumerate(ls):
            for b in range(a, nl):
                l = int(ls[b])
                jmin, w = wigner3j_ladder(l, int(lp), m, -m)
                lam = np.arange(jmin, jmin + len(w))
                C[a, b, lam] = (_sgn(l + m) * math.sqrt((2 * l + 1) * (2 * lp + 1))
                                * (2 * lam + 1) * Z[l, lp, lam] * w)
                if b != a:
                    C[b, a, :] = _sgn(l + int(lp)) * C[a, b, :]
        if not np.all(np.isfinite(C)):
            bad = np.argwhere(~np.isfinite(C))[0]
            raise EvaluationError(f"3j recursion produced non-finite coefficient at "
                                  f"(l'={ls[bad[0]]}, l={ls[bad[1]]}, m={m})")
        C.setflags(write=False)
        cached = (lmax, C)
        _TABLES[m] = cached
    L, C = cached
    n = lmax - m + 1
    return C[:n, :n, :2 * lmax + 1]


def _dense_index(lmax: int):
    return [(l, m) for l in range(lmax + 1) for m in range(-l, l + 1)]


def _dense_coupling(lmax: int) -> np.ndarray:
    """Unblocked C[(l',m'), (l,m), lam] from the general addition theorem.

    Keeps every (m, m') pair and lets the Y_{lam, m'-m} on the z-axis produce
    the zeros; used only to check the blocked assembly.
    """
    idx = _dense_index(lmax)
    n, nlam = len(idx), 2 * lmax + 1
    Z = _w3j_zero_table(lmax)
    C = np.zeros((n, n, nlam))
    for a, (lp, mp) in enumerate(idx):
        for b, (l, m) in enumerate(idx):
            z = Z[l, lp]
            jmin, w = wigner3j_ladder(l, lp, m, -mp)
            for k, lam in enumerate(range(jmin, jmin + len(w))):
                if z[lam] == 0.0 or w[k] == 0.0:
                    continue
                y = sph_harm_y(lam, mp - m, 0.0, 0.0).real * math.sqrt(4 * math.pi / (2 * lam + 1))
                C[a, b, lam] += (_sgn(l + m) * math.sqrt((2 * l + 1) * (2 * lp + 1))
                                 * (2 * lam + 1) * z[lam] * w[k] * y)
    return C


def _contract(C, a, b, lk):
    # sum_lam C[i, j, lam] exp(a_i + b_j + lk_lam), exponent formed before exp
    with np.errstate(under="ignore"):
        return np.einsum("ijl,ijl->ij", C, np.exp(a[:, None, None] + b[None, :, None] + lk[None, None, :]))


def _dlog_sph_kn(lk: np.ndarray, x: float) -> np.ndarray:
    """log(-k_l'(x)) from k_l' = -k_{l-1} - (l+1)/x k_l, with k_{-1} = k_0."""
    lam = np.arange(len(lk))
    prev = np.concatenate([[lk[0]], lk[:-1]])
    return np.logaddexp(prev, np.log((lam + 1) / x) + lk)


def translation_block(dim: int, xi: float, d: float, cutoff: int, m: int | None = 0) -> np.ndarray:
    """Translation matrix U12 at imaginary frequency xi.

    2d: (2M+1)x(2M+1) matrix K_|m-m'|(xi d), m = -M..M.  3d with integer
    ``m``: the (l', l) block for l, l' = |m|..cutoff; with ``m=None`` the
    unblocked matrix over all (l, m), l <= cutoff, ordered by l then m.
    U21 is U12^T.  In 3d that is the parity rule U(-d) = P U(d) P with
    P = diag((-1)^l), because U_l'l = (-1)^(l+l') U_ll'.
    """
    if not (xi > 0 and d > 0):
        raise ConfigError("translation_block needs xi > 0 and d > 0")
    x = xi * d
    if dim == 2:
        M = cutoff
        mm = np.arange(-M, M + 1)
        lk = log_kv(0.0, 2 * M, x)
        return np.exp(lk[np.abs(mm[:, None] - mm[None, :])])
    if dim != 3:
        raise ConfigError(f"dim must be 2 or 3, got {dim}")
    lk = log_sph_kn(2 * cutoff, x)
    if m is None:
        C = _dense_coupling(cutoff)
        z = np.zeros(C.shape[0])
    else:
        if abs(m) > cutoff:
            raise ConfigError(f"|m|={abs(m)} exceeds l_max={cutoff}")
        C = _coupling(cutoff, m)
        z = np.zeros(C.shape[0])
    return _contract(C, z, z, lk)


# ---------------------------------------------------------------------------
# assembled system
# ---------------------------------------------------------------------------

@dataclass
class Block:
    """One symmetric round-trip block S = A A^T with its d-derivative factor."""
    multiplicity: int
    A: np.ndarray
    dA: np.ndarray
    label: str = ""


@dataclass
class PartialWaveSystem:
    """Geometry plus truncation; assembles the per-xi round-trip blocks.

    ``cutoff`` is m_max (2d) or l_max (3d); ``None`` uses ``default_cutoff``.
    In 3d the assembly is m-blocked (m = 0..l_max, the +-m blocks being equal)
    unless ``blocked`` is false, which builds one dense matrix over all
    (l, m) from the general addition theorem.
    """
    geometry: TwoBodyGeometry
    cutoff: int | None = None
    blocked: bool = True
    _dense: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.cutoff is None:
            self.cutoff = default_cutoff(self.geometry)
        if int(self.cutoff) < 1:
            raise ConfigError("partial-wave cutoff must be >= 1")
        self.cutoff = int(self.cutoff)

    @property
    def size(self) -> int:
        L = self.cutoff
        return 2 * L + 1 if self.geometry.dim == 2 else (L + 1) ** 2

    def blocks(self, xi: float) -> list[Block]:
        g, L = self.geometry, self.cutoff
        if not xi > 0:
            raise ConfigError("blocks need xi > 0")
        x = xi * g.d
        if g.dim == 2:
            mm = np.arange(-L, L + 1)
            lk = log_kv(0.0, 2 * L + 1, x)
            a = 0.5 * log_tmatrix(2, L, xi, g.R1)[np.abs(mm)]
            b = 0.5 * log_tmatrix(2, L, xi, g.R2)[np.abs(mm)]
            nu = np.abs(mm[:, None] - mm[None, :])
            base = a[:, None] + b[None, :]
            with np.errstate(under="ignore"):
                A = np.exp(base + lk[nu])
                # dK_nu/dx = -(K_{nu-1} + K_{nu+1})/2, K_{-1} = K_1
                dA = -0.5 * xi * (np.exp(base + lk[np.abs(nu - 1)]) + np.exp(base + lk[nu + 1]))
            return [Block(1, A, dA, "2d")]
        lk = log_sph_kn(2 * L, x)
        ldk = _dlog_sph_kn(lk, x)
        lt1 = 0.5 * log_tmatrix(3, L, xi, g.R1)
        lt2 = 0.5 * log_tmatrix(3, L, xi, g.R2)
        if not self.blocked:
            if self._dense is None:
                self._dense = _dense_coupling(L)
            ls = np.array([l for l, _ in _dense_index(L)])
            A = _contract(self._dense, lt1[ls], lt2[ls], lk)
            dA = -xi * _contract(self._dense, lt1[ls], lt2[ls], ldk)
            return [Block(1, A, dA, "dense")]
        out = []
        for m in range(L + 1):
            C = _coupling(L, m)
            A = _contract(C, lt1[m:], lt2[m:], lk)
            dA = -xi * _contract(C, lt1[m:], lt2[m:], ldk)
            out.append(Block(1 if m == 0 else 2, A, dA, f"m={m}"))
        return out

    def round_trip(self, xi: float, symmetric: bool = True) -> np.ndarray:
        """Full round-trip matrix over the basis (block diagonal in 3d).

        ``symmetric`` returns S = A A^T; otherwise N = T1 U12 T2 U21.
        Negative-m blocks are included explicitly in 3d.
        """
        g, L = self.geometry, self.cutoff
        if g.dim == 2 or not self.blocked:
            mats = [self.blocks(xi)[0]]
            reps = [1]
        else:
            mats = self.blocks(xi)
            reps = [b.multiplicity for b in mats]
        parts = []
        for blk, r in zip(mats, reps):
            if symmetric:
                M = blk.A @ blk.A.T
            else:
                n = blk.A.shape[0]
                t1, t2 = self._tdiag(xi, blk, n)
                U = blk.A / np.sqrt(t1[:, None] * t2[None, :])
                M = (t1[:, None] * U) @ (t2[:, None] * U.T)
            parts.extend([M] * r)
        return sla.block_diag(*parts)

    def _tdiag(self, xi, blk, n):
        g, L = self.geometry, self.cutoff
        if g.dim == 2:
            idx = np.abs(np.arange(-L, L + 1))
        elif not self.blocked:
            idx = np.array([l for l, _ in _dense_index(L)])
        else:
            idx = np.arange(L + 1 - n, L + 1)
        return (np.exp(log_tmatrix(g.dim, L, xi, g.R1))[idx],
                np.exp(log_tmatrix(g.dim, L, xi, g.R2))[idx])


def spectral_radius(system: PartialWaveSystem, xi: float) -> float:
    """Largest eigenvalue of the symmetrized round trip (symmetric eigensolve)."""
    return max(float(np.max(np.linalg.eigvalsh(b.A @ b.A.T))) for b in system.blocks(xi))


def integrands(system: PartialWaveSystem, xi: float) -> tuple[float, float]:
    """(ln det(I - S), tr[(I - S)^-1 dS/dd]) at one xi.

    Raises NumericalError when I - S is not positive definite, i.e. when
    the spectral radius of the round trip reaches 1.
    """
    logdet = 0.0
    trace = 0.0
    for b in system.blocks(xi):
        n = b.A.shape[0]
        X = np.eye(n) - b.A @ b.A.T
        try:
            c = sla.cho_factor(X, lower=True)
        except np.linalg.LinAlgError:
            rho = float(np.max(np.linalg.eigvalsh(b.A @ b.A.T)))
            raise NumericalError(f"round-trip spectral radius {rho:.6g} >= 1 at xi={xi:g} "
                                 f"({b.label}); bodies overlap or assembly is broken") from None
        logdet += b.multiplicity * 2.0 * float(np.sum(np.log(np.diag(c[0]))))
        # tr(X^-1 (dA A^T + A dA^T)) = 2 sum((X^-1 dA) * A)
        trace += b.multiplicity * 2.0 * float(np.sum(sla.cho_solve(c, b.dA) * b.A))
    if not (np.isfinite(logdet) and np.isfinite(trace)):
        raise EvaluationError(f"non-finite partial-wave integrand at xi={xi:g}")
    return logdet, trace


def logdet_integrand(system: PartialWaveSystem, xi: float) -> float:
    return integrands(system, xi)[0]


def force_integrand(system: PartialWaveSystem, xi: float) -> float:
    """tr[(I - S)^-1 dS/dd]; its xi-integral over 2 pi is the force on body 2."""
    return integrands(system, xi)[1]


# ---------------------------------------------------------------------------
# energy and force
# ---------------------------------------------------------------------------

@dataclass
class SpectralResult:
    """``value`` = sum of weight * sample.value over ``samples``, divided by 2 pi."""
    value: float
    samples: list
    meta: dict

    def reintegrate(self) -> float:
        return math.fsum(s.value * s.weight for s in self.samples) / (2.0 * math.pi)


def _zero_limit(f, geom: TwoBodyGeometry, h_rel: float = 1e-6) -> float:
    # xi -> 0+ by Richardson on two small samples, assuming a linear leading term
    h = h_rel / geom.gap
    return 2.0 * f(0.5 * h) - f(h)


def _run(which: int, geom, cutoff, rule, temperature, blocked, natural_temperature, n_max):
    system = PartialWaveSystem(geom, cutoff, blocked)
    f = lambda xi: integrands(system, float(xi))[which]  # noqa: E731
    meta = dict(dim=geom.dim, R1=geom.R1, R2=geom.R2, d=geom.d, cutoff=system.cutoff,
                blocked=blocked, temperature=temperature)
    if temperature and temperature > 0:
        if rule is not None:
            raise ConfigError("give either a frequency rule or a temperature, not both")
        total, samples = matsubara_sum(temperature, f, n_max=n_max,
                                       zero_term=lambda: _zero_limit(f, geom),
                                       natural=natural_temperature, return_samples=True)
        meta["rule"] = "matsubara"
        return SpectralResult(total / (2.0 * math.pi), samples, meta)
    rule = rule or default_rule(geom)
    if rule.kind == "matsubara":
        raise ConfigError("pass temperature= for Matsubara sums")
    vals = evaluate(f, rule.nodes)
    samples = [IntegrandSample(float(x), float(v), float(w))
               for x, v, w in zip(rule.nodes, vals, rule.weights)]
    meta["rule"] = rule.kind
    meta["points"] = len(rule.nodes)
    total = math.fsum(s.value * s.weight for s in samples)
    return SpectralResult(total / (2.0 * math.pi), samples, meta)


def energy(geom: TwoBodyGeometry, cutoff: int | None = None, rule: FrequencyRule | None = None,
           temperature: float = 0.0, blocked: bool = True, natural_temperature: bool = False,
           n_max: int | None = None) -> SpectralResult:
    """Interaction energy (1/2pi) int ln det(I - N) dxi.

    At ``temperature`` > 0 (kelvin, or 1/um if ``natural_temperature``) the
    integral becomes the Matsubara free-energy sum.
    """
    return _run(0, geom, cutoff, rule, temperature, blocked, natural_temperature, n_max)


def force(geom: TwoBodyGeometry, cutoff: int | None = None, rule: FrequencyRule | None = None,
          temperature: float = 0.0, blocked: bool = True, natural_temperature: bool = False,
          n_max: int | None = None) -> SpectralResult:
    """Force on body 2 along +d, -dE/dd, from the trace formula (negative = attractive).

    Only the translation blocks depend on d; their derivative is analytic.
    """
    return _run(1, geom, cutoff, rule, temperature, blocked, natural_temperature, n_max)


@dataclass
class SweepRecord:
    cutoff: int
    value: float
    error: float  # |value - richest| / |richest|


def convergence_sweep(geom: TwoBodyGeometry, cutoffs: Sequence[int],
                      rule: FrequencyRule | None = None, quantity: str = "energy") -> list[SweepRecord]:
    """Energy (or force) versus truncation, with the richest cutoff as reference."""
    cutoffs = [int(c) for c in cutoffs]
    if len(cutoffs) < 2 or any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ConfigError("cutoffs must be a strictly increasing list of length >= 2")
    fn = {"energy": energy, "force": force}.get(quantity)
    if fn is None:
        raise ConfigError(f"unknown sweep quantity {quantity!r}")
    rule = rule or default_rule(geom)
    # richest first, so the coefficient tables are built once and sliced
    vals = [fn(geom, c, rule).value for c in reversed(cutoffs)][::-1]
    ref = vals[-1]
    return [SweepRecord(c, v, abs(v - ref) / abs(ref)) for c, v in zip(cutoffs, vals)]


def fit_log_slope(records: Sequence[SweepRecord], floor: float = 1e-13) -> float:
    """Least-squares slope of log10(error) vs cutoff, skipping the reference and errors below ``floor``."""
    pts = [(r.cutoff, math.log10(r.error)) for r in records[:-1] if r.error > floor]
    if len(pts) < 2:
        raise NumericalError("fewer than two usable points for the convergence slope")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])
