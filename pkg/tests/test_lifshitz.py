import math

import numpy as np
import pytest

from casimirkit import lifshitz as lf
from casimirkit import materials as mt
from casimirkit.errors import ConfigError
from casimirkit.quadrature import build_rule

PM = mt.perfect_metal()


def plates(m1, m2, a=1.0, **kw):
    return lf.PlateSystem(m1, m2, a, **kw)


# --- perfect metals from the double integral ---

def test_pm_scaling():
    assert lf.perfect_metal_pressure(2.0) / lf.perfect_metal_pressure(1.0) == pytest.approx(1 / 16, rel=1e-8)


def test_pm_matches_oracle_and_pi2_constant():
    p = lf.perfect_metal_pressure(1.0)
    oracle = lf.perfect_metal_oracle(1.0)
    assert abs(p - oracle) < 1e-6 * oracle
    assert abs(oracle - lf.PM_CONSTANT) < 1e-6 * oracle
    # the constant without pi^2 is off by a factor pi^2
    assert oracle / lf.PRINTED_CONSTANT == pytest.approx(math.pi**2, rel=1e-6)


def test_pm_rejects_bad_separation():
    with pytest.raises(ConfigError):
        lf.perfect_metal_pressure(0.0)


# --- general Lifshitz formula ---

def test_vacuum_half_spaces_give_zero():
    v = mt.vacuum()
    assert lf.lifshitz_pressure(plates(v, v)) == 0.0


def test_eps_one_gives_exact_zero():
    c = mt.constant(1.0)
    assert lf.lifshitz_pressure(plates(c, c)) == 0.0


def test_lifshitz_perfect_metal_matches_double_integral():
    for a in (0.5, 1.0, 2.0):
        p = lf.lifshitz_pressure(plates(PM, PM, a))
        assert p == pytest.approx(lf.perfect_metal_pressure(a), rel=1e-6)


def test_swap_symmetry():
    m1, m2 = mt.drude(10.0, 0.5), mt.constant(3.0)
    assert lf.lifshitz_pressure(plates(m1, m2)) == lf.lifshitz_pressure(plates(m2, m1))


@pytest.mark.parametrize("m", [mt.constant(2.0), mt.drude(45.6, 0.18), mt.plasma(9.0), PM,
                               mt.tabulated([0.1, 1.0, 10.0], [8.0, 4.0, 1.5])])
@pytest.mark.parametrize("a", [0.1, 1.0, 5.0])
def test_identical_plates_attract(m, a):
    assert lf.lifshitz_pressure(plates(m, m, a)) > 0


def test_pressure_decreases_with_separation():
    a = np.array([0.3, 0.6, 1.0, 2.0, 4.0])
    h = 1e-4
    for x in a:
        dp = (lf.lifshitz_pressure(plates(PM, PM, x + h)) - lf.lifshitz_pressure(plates(PM, PM, x - h))) / (2 * h)
        assert dp < 0


def test_constant_eps_chain_monotone():
    vals = [lf.lifshitz_pressure(plates(mt.constant(e), mt.constant(e))) for e in (10, 1e2, 1e3, 1e4)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < lf.PM_CONSTANT


def test_constant_eps_against_dense_quadrature():
    # brute-force Gauss-Legendre over both variables on mapped intervals.
    # For finite eps the xi-integrand is not analytic at 0+, so Gauss-Laguerre
    # converges algebraically: about 5e-6 at the default 40 nodes, 1e-7 at 160.
    eps, a = 100.0, 1.0
    system = plates(mt.constant(eps), mt.constant(eps), a)
    direct = lf.lifshitz_pressure(system)
    fine = lf.lifshitz_pressure(system, build_rule("gauss_laguerre", 160, 0.5 / a))
    t, w = np.polynomial.legendre.leggauss(400)
    t, w = 0.5 * (t + 1), 0.5 * w
    xi = t / (1 - t)
    wxi = w / (1 - t) ** 2
    total = 0.0
    for x, wx in zip(xi, wxi):
        kap = x + t / (1 - t)
        wk = w / (1 - t) ** 2
        ki = np.sqrt(kap**2 + (eps - 1) * x * x)
        rte = (kap - ki) / (kap + ki)
        rtm = (eps * kap - ki) / (eps * kap + ki)
        e2 = np.exp(-2 * kap * a)
        s = sum(r * r * e2 / (1 - r * r * e2) for r in (rte, rtm))
        total += wx * np.sum(wk * kap * kap * s)
    ref = total / (2 * math.pi**2)
    assert direct == pytest.approx(ref, rel=1e-5)
    assert fine == pytest.approx(ref, rel=1e-6)


def test_zero_temperature_limit_of_matsubara():
    m = mt.drude(100.0, 100.0)
    p0 = lf.lifshitz_pressure(plates(m, m))
    ts = [40.0, 20.0, 10.0]
    d = [abs(lf.lifshitz_pressure(plates(m, m, temperature=T)) - p0) for T in ts]
    assert d[0] > d[1] > d[2]
    assert d[2] < 1e-3 * p0


def test_perfect_metal_zero_frequency_warns():
    with pytest.warns(UserWarning, match="Schwinger"):
        lf.lifshitz_pressure(plates(PM, PM, temperature=300.0))


def test_gap_cannot_be_perfect_metal():
    with pytest.raises(ConfigError):
        lf.PlateSystem(PM, PM, 1.0, gap_material=PM)


def test_samples_reintegrate():
    v, s = lf.lifshitz_pressure(plates(mt.drude(10.0, 1.0), mt.drude(10.0, 1.0)), return_samples=True)
    assert math.fsum(x.value * x.weight for x in s) == pytest.approx(v, rel=1e-12)


# --- 1d mode sum ---

def test_mode_sum_value_and_scaling():
    e1 = lf.mode_sum_1d(1.0).energy
    e2 = lf.mode_sum_1d(2.0).energy
    assert e2 / e1 == pytest.approx(0.5, rel=1e-6)
    assert e1 == pytest.approx(-math.pi / 24, rel=1e-3)


def test_mode_sum_coefficients_reproduce_energy():
    r = lf.mode_sum_1d(1.0)
    assert math.fsum(c * v for c, v in zip(r.coefficients, r.values)) == pytest.approx(r.energy, rel=1e-14)
    assert sum(r.coefficients) == pytest.approx(1.0, rel=1e-14)


def test_sharp_cutoff_oscillates_smooth_does_not():
    sharp, smooth = lf.cutoff_oscillation(1.0, 50)
    assert abs(sharp) > 0.5
    assert abs(smooth) < 1e-4


def test_mode_sum_rejects_bad_input():
    with pytest.raises(ConfigError):
        lf.mode_sum_1d(1.0, n_terms=5)
    with pytest.raises(ConfigError):
        lf.mode_sum_1d(1.0, cutoff_policy="gaussian")


# --- complex-plane integrand ---

def test_imaginary_axis_decays_after_peak():
    xi = np.linspace(0.05, 40, 800)
    f = np.abs(lf.plate_integrand(1j * xi, 1.0))
    k = int(np.argmax(f))
    assert np.all(np.diff(f[k:]) < 0)


def test_imaginary_axis_tail_is_negligible():
    xi = np.linspace(0.05, 60, 1200)
    f = np.abs(lf.plate_integrand(1j * xi, 1.0))
    assert np.all(f[xi > 40] < 1e-12 * f.max())


def test_imaginary_axis_matches_quadrature_integrand():
    # on omega = i xi the integrand equals the real inner integral (up to a phase)
    xi = 0.8
    f = lf.plate_integrand(np.array([1j * xi]), 1.0)[0]
    assert abs(f) == pytest.approx(lf.pm_inner(xi, 1.0, 128), rel=1e-10)


def test_phase_winds_along_horizontal_contour():
    g = lf.integrand_map(1.0, (0, 20), (0.2, 10), 400, 2)
    ph = np.unwrap(np.angle(g.values[0]))
    cycles = abs(ph[-1] - ph[0]) / (2 * math.pi)
    assert cycles >= 3
    assert cycles == pytest.approx(5.9065, abs=0.01)  # pinned by a dense direct evaluation


def test_integrand_map_grid_layout():
    g = lf.integrand_map(2.0, (0, 4), (0.5, 2), 5, 3)
    assert g.values.shape == (3, 5)
    assert g.re[-1] == pytest.approx(2.0) and g.im[0] == pytest.approx(0.25)
    rows = list(g.rows())
    assert len(rows) == 15 and rows[0][:2] == (0.0, 0.25)


def test_integrand_map_rejects_real_axis():
    with pytest.raises(ConfigError):
        lf.integrand_map(1.0, (0, 1), (0.0, 1.0))
