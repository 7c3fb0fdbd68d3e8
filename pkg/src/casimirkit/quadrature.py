"""Frequency rules on the imaginary axis and finite-temperature sums.

Zero-temperature integrals over xi in (0, inf) use either Gauss-Laguerre
nodes matched to an exponential decay scale or a Clenshaw-Curtis-type rule
mapped from (0, 1).  At T > 0 the integral becomes a Matsubara sum, which is
the trapezoidal rule with spacing 2*pi*T and a half-weighted xi = 0 term.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import roots_laguerre

from .errors import ConfigError, EvaluationError, TruncationError
from .units import temperature_to_natural

RULE_KINDS = ("gauss_laguerre", "transformed_clenshaw_curtis", "matsubara")
THREADS_ENV = "CASIMIRKIT_THREADS"


@dataclass(frozen=True)
class IntegrandSample:
    xi: float
    value: float
    weight: float


@dataclass(frozen=True)
class FrequencyRule:
    """Nodes and weights of a frequency quadrature.

    For ``kind="matsubara"`` the nodes start at xi = 0 and ``weights`` already
    contain the factor 2*pi*T (natural units) with the n = 0 weight halved.
    """
    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)


def n_threads() -> int:
    """Worker count from the CASIMIRKIT_THREADS environment variable (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    return max(1, n)


def evaluate(f: Callable[[float], float], nodes) -> np.ndarray:
    """Evaluate ``f`` at every node, possibly in parallel; order is preserved."""
    nodes = [float(x) for x in nodes]
    nt = n_threads()
    if nt > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            vals = list(ex.map(f, nodes))
    else:
        vals = [f(x) for x in nodes]
    out = np.array(vals, dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        i = int(np.argmax(bad))
        raise EvaluationError(f"integrand is non-finite ({out[i]}) at node xi={nodes[i]:.17g}")
    return out


def fejer2(n: int):
    """Fejer's second rule on (0, 1): Clenshaw-Curtis without the endpoints.

    Returns nodes in increasing order and positive weights summing to 1.
    """
    k = np.arange(1, n + 1)
    th = k * np.pi / (n + 1)
    j = np.arange(1, (n + 1) // 2 + 1)
    s = np.sin(np.outer(th, 2 * j - 1)) / (2 * j - 1)
    w = 4.0 * np.sin(th) / (n + 1) * s.sum(axis=1)
    t = 0.5 * (1.0 - np.cos(th))
    return t, 0.5 * w


def build_rule(kind: str, n: int, scale: float) -> FrequencyRule:
    """Zero-temperature rule with ``n`` nodes and decay scale ``scale``.

    gauss_laguerre
        exact for p(xi)*exp(-xi/scale) with deg p <= 2n-1; the weight
        exp(-xi/scale) is folded into the returned weights.
    transformed_clenshaw_curtis
        xi = scale*t/(1-t) applied to Fejer's second rule on t in (0, 1),
        with Jacobian scale/(1-t)^2 folded into the weights.
    """
    if kind not in ("gauss_laguerre", "transformed_clenshaw_curtis"):
        raise ConfigError(f"unknown zero-temperature rule {kind!r}")
    if int(n) != n or n < 1:
        raise ConfigError(f"rule needs n >= 1 points, got {n}")
    if not scale > 0:
        raise ConfigError(f"rule needs scale > 0, got {scale}")
    n = int(n)
    if kind == "gauss_laguerre":
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            x, w = roots_laguerre(n)
        # for n beyond ~180 the outermost weights underflow to 0 (< 1e-308 of
        # the weight function's mass); those nodes are dropped
        keep = np.isfinite(w) & (w > 0)
        if not np.all(np.isfinite(w)) or not keep.any():
            raise ConfigError(f"gauss_laguerre rule with n={n} points is not representable "
                              "in double precision; use fewer points")
        x, w = x[keep], w[keep]
        nodes = scale * x
        # w*exp(x) overflows for very large n; log form keeps it finite
        weights = scale * np.exp(np.log(w) + x)
    else:
        t, w = fejer2(n)
        nodes = scale * t / (1.0 - t)
        weights = scale * w / (1.0 - t) ** 2
    return FrequencyRule(kind, nodes, weights, {"n": n, "scale": float(scale)})


def integrate(rule: FrequencyRule, f: Callable[[float], float]):
    """Return ``(value, samples)`` with value = sum of weight*f(node).

    The sum is accumulated in node order so results do not depend on the
    thread count.
    """
    if rule.kind == "matsubara":
        raise ConfigError("integrate() takes a zero-temperature rule; use matsubara_sum")
    vals = evaluate(f, rule.nodes)
    value = float(np.sum(rule.weights * vals))
    samples = [IntegrandSample(float(x), float(v), float(w))
               for x, v, w in zip(rule.nodes, vals, rule.weights)]
    return value, samples


def integrate_with_error(kind: str, n: int, scale: float, f):
    """Integrate with ``n`` and ``2n`` nodes; the difference is the error estimate.

    Returns ``(value_2n, error, samples_2n)``.
    """
    v1, _ = integrate(build_rule(kind, n, scale), f)
    v2, s2 = integrate(build_rule(kind, 2 * n, scale), f)
    return v2, abs(v2 - v1), s2


def matsubara_rule(T: float, n_max: int, natural: bool = False) -> FrequencyRule:
    """Matsubara nodes xi_n = 2*pi*T*n, n = 0..n_max, with the n = 0 weight halved.

    ``T`` is in kelvin unless ``natural`` is true, in which case it is
    k_B T/(hbar c) in 1/um.
    """
    if not T > 0:
        raise ConfigError(f"matsubara rule needs T > 0, got {T}")
    if int(n_max) != n_max or n_max < 0:
        raise ConfigError(f"matsubara rule needs n_max >= 0, got {n_max}")
    t = T if natural else temperature_to_natural(T)
    n = np.arange(int(n_max) + 1)
    w = np.full(len(n), 2 * np.pi * t)
    w[0] *= 0.5
    return FrequencyRule("matsubara", 2 * np.pi * t * n, w,
                         {"T": float(T), "natural": bool(natural), "n_max": int(n_max)})


def matsubara_sum(T: float, f: Callable[[float], float], n_max: int | None = None,
                  zero_term: float | Callable[[], float] | None = None,
                  tail_tol: float = 1e-8, natural: bool = False,
                  return_samples: bool = False):
    """Finite-temperature sum 2*pi*T*[f(0)/2 + sum_{n>=1} f(xi_n)].

    Parameters
    ----------
    T : float
        Temperature in kelvin (or 1/um if ``natural``).
    f : callable
        Integrand; must be safe to call concurrently at distinct nodes.
    n_max : int or None
        Highest Matsubara index.  ``None`` grows the sum in blocks until the
        last term falls below ``tail_tol`` relative to the running sum.
    zero_term : float, callable or None
        Value used for f(0).  ``None`` evaluates ``f(0.0)`` directly.
    tail_tol : float
        Relative size allowed for the last term.

    Raises
    ------
    TruncationError
        If the last term is not below the tail tolerance at ``n_max``.
    """
    t = T if natural else temperature_to_natural(T)
    if not t > 0:
        raise ConfigError(f"matsubara_sum needs T > 0, got {T}")
    if zero_term is None:
        f0 = float(f(0.0))
    elif callable(zero_term):
        f0 = float(zero_term())
    else:
        f0 = float(zero_term)
    if not np.isfinite(f0):
        raise EvaluationError(f"zero-frequency term is non-finite ({f0})")
    step = 2 * np.pi * t
    terms = [0.5 * f0]
    cap = n_max if n_max is not None else 2_000_000
    block = 64
    n_done = 0
    while n_done < cap:
        hi = min(cap, n_done + block) if n_max is None else cap
        xs = step * np.arange(n_done + 1, hi + 1)
        terms.extend(evaluate(f, xs))
        n_done = hi
        total = abs(float(np.sum(terms)))
        if n_max is None and abs(terms[-1]) <= tail_tol * total:
            break
        block *= 2
    total = float(np.sum(terms))
    last = terms[-1] if n_done > 0 else terms[0]
    if n_done > 0 and abs(last) > tail_tol * abs(total):
        raise TruncationError(
            f"Matsubara sum not converged at n_max={n_done}: last term {last:.3e} "
            f"vs relative tail tolerance {tail_tol:g} of {total:.3e}")
    value = step * total
    if return_samples:
        w = np.full(len(terms), step)
        vals = np.array(terms, dtype=float)
        vals[0] = f0
        w[0] *= 0.5
        samples = [IntegrandSample(float(step * i), float(v), float(wi))
                   for i, (v, wi) in enumerate(zip(vals, w))]
        return value, samples
    return value
