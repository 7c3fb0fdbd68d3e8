import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from casimirkit import fd_solver as fd
from casimirkit import materials as mt
from casimirkit.errors import ConfigError
from casimirkit.quadrature import build_rule

RULE8 = build_rule("gauss_laguerre", 8, 0.5)
RULE30 = build_rule("gauss_laguerre", 30, 0.5)
GLASS = mt.constant(4.0)


def vac1d(n=16, dx=0.1, boundary="dirichlet"):
    return fd.FdGrid(dx, (n,), boundary=boundary)


# --- operator ---

def test_1d_interior_row():
    dx, xi = 0.1, 2.0
    A = fd.build_operator(vac1d(dx=dx), xi).matrix.toarray()
    assert A[5, 4] == pytest.approx(-1 / dx**2)
    assert A[5, 6] == pytest.approx(-1 / dx**2)
    assert A[5, 5] == pytest.approx(2 / dx**2 + xi**2)


def test_xi_squared_scaling_is_diagonal():
    eps = np.r_[np.zeros(6, int), np.ones(6, int), np.zeros(4, int)]
    g = fd.FdGrid(0.1, (16,), materials=[mt.vacuum(), GLASS], material_map=eps)
    xi = 1.3
    D = (fd.build_operator(g, 2 * xi).matrix - fd.build_operator(g, xi).matrix).toarray()
    assert np.allclose(D, np.diag(np.diag(D)), atol=0)
    e = np.where(eps == 1, 4.0, 1.0)
    assert np.allclose(np.diag(D), 3 * xi**2 * e, rtol=1e-12)


def test_2d_periodic_row_sums():
    g = fd.FdGrid(0.2, (10, 12), boundary="periodic")
    A = fd.build_operator(g, 1.7).matrix
    assert np.allclose(A @ np.ones(A.shape[0]), 1.7**2, rtol=1e-12)


def test_zero_frequency_periodic_is_singular():
    g = fd.FdGrid(0.2, (8, 8), boundary="periodic")
    A = fd.build_operator(g, 0.0).matrix
    assert np.allclose(A @ np.ones(A.shape[0]), 0.0, atol=1e-9)
    assert not fd.is_positive_definite(fd.build_operator(g, 0.0))


def _random_grid(rng):
    dim = int(rng.integers(1, 3))
    shape = tuple(int(s) for s in rng.integers(8, 17, size=dim))
    boundary = rng.choice(["dirichlet", "periodic", "open"] if dim == 1 else ["dirichlet", "periodic"])
    mats = [mt.vacuum(), mt.constant(float(rng.uniform(1, 20))),
            mt.drude(float(rng.uniform(0.1, 50)), float(rng.uniform(0, 5)))]
    mmap = rng.integers(0, 3, size=shape)
    body = (rng.random(shape) < 0.2).astype(int)
    if boundary == "open":
        mmap[0] = mmap[-1] = 0
        body[0] = body[-1] = 0
    if body.all():
        body.flat[0] = 0
    stretch = None
    if boundary == "dirichlet" and rng.random() < 0.5:
        stretch = fd.Stretch("pml", cells=4) if rng.random() < 0.5 else fd.Stretch(growth=1.5, length=5.0)
    return fd.FdGrid(float(rng.uniform(0.01, 1)), shape, None, mats, mmap, body, str(boundary), stretch)


def test_spd_on_1000_random_configurations():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        g = _random_grid(rng)
        xi = float(10 ** rng.uniform(-3, 2))
        assert fd.is_positive_definite(fd.build_operator(g, xi)), (g.shape, g.boundary, xi)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e2))
def test_spd_property(seed, xi):
    g = _random_grid(np.random.default_rng(seed))
    assert fd.is_positive_definite(fd.build_operator(g, xi))


def test_symmetry_assertion_catches_asymmetry(monkeypatch):
    g = vac1d()
    real = fd._assemble

    def broken(*a, **k):
        A, idx = real(*a, **k)
        A = A.tolil()
        A[0, 1] += 1.0
        return A.tocsc(), idx
    monkeypatch.setattr(fd, "_assemble", broken)
    with pytest.raises(fd.NumericalError, match="symmetric"):
        fd.build_operator(g, 1.0)


# --- Green's function ---

def test_reciprocity_1d_and_2d():
    g1 = fd.FdGrid(0.1, (30,), materials=[mt.vacuum(), GLASS],
                   material_map=np.r_[np.zeros(10, int), np.ones(10, int), np.zeros(10, int)])
    op = fd.build_operator(g1, 0.7)
    G = fd.green_columns(op, range(op.n))
    assert np.abs(G - G.T).max() <= 1e-12 * np.abs(G).max()
    g2 = fd.cylinder_grid(0.5, 0.5, 1.6, 0.1, stretch=fd.Stretch(growth=1.5, length=10))
    op2 = fd.build_operator(g2, 1.1)
    rows = [op2.row_of((i, j)) for i, j in [(2, 3), (10, 11), (25, 7), (4, 14)]]
    G2 = fd.green_columns(op2, rows)[rows, :]
    assert np.abs(G2 - G2.T).max() <= 1e-12 * np.abs(G2).max()


def test_1d_discrete_vacuum_geometric_decay():
    dx, xi = 0.05, 3.0
    g = vac1d(n=200, dx=dx, boundary="open")
    col = fd.green_column(fd.build_operator(g, xi), 100)
    r = fd._open_root((xi * dx) ** 2)
    assert r == pytest.approx(((2 + (xi * dx) ** 2) - math.sqrt((2 + (xi * dx) ** 2) ** 2 - 4)) / 2, rel=1e-12)
    k = np.arange(200) - 100
    assert np.allclose(col, col[100] * r ** np.abs(k), rtol=1e-10)


def test_1d_continuum_limit():
    xi, x = 2.0, 0.5
    errs = []
    for dx in (0.05, 0.025, 0.0125):
        n = int(round(4 / dx)) + 1
        g = vac1d(n=n, dx=dx, boundary="open")
        col = fd.green_column(fd.build_operator(g, xi), n // 2)
        errs.append(abs(col[n // 2 + int(round(x / dx))] - math.exp(-xi * x) / (2 * xi)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_green_block_matches_columns():
    g = fd.cylinder_grid(1, 1, 3, 1 / 8)
    surf = fd.cylinder_surface(g, 1, 1, 3, 2)
    op = fd.build_operator(g, 0.9)
    nodes, _, _ = surf.faces()
    uniq = np.unique(nodes.reshape(-1, 2), axis=0)
    rows = np.array([op.row_of((i, j)) for i, j in uniq])
    B = fd.green_block(op, rows)
    C = fd.green_columns(op, rows)[rows, :]
    assert np.abs(B - C).max() <= 1e-12 * np.abs(C).max()


def test_cg_matches_direct_and_reports_failure():
    g = fd.FdGrid(0.1, (20, 20), materials=[mt.vacuum()])
    op = fd.build_operator(g, 0.5)
    a = fd.green_columns(op, [55], "direct")
    b = fd.green_columns(op, [55], "cg", rtol=1e-12)
    assert np.abs(a - b).max() <= 1e-9 * np.abs(a).max()
    with pytest.raises(fd.NumericalError, match="residual history"):
        fd.green_columns(op, [55], "cg", rtol=1e-14, maxiter=3)


def test_source_on_body_rejected():
    g = fd.FdGrid(0.1, (10,), body_mask=np.r_[np.zeros(5, int), 1, np.zeros(4, int)])
    with pytest.raises(ConfigError):
        fd.green_column(fd.build_operator(g, 1.0), 5)


# --- Richardson ---

def test_richardson_exact_on_model():
    V, c = 1.25, 3.0
    assert fd.richardson_extrapolate([(0.1, V + c * 0.01), (0.05, V + c * 0.0025)], 2)[0] == pytest.approx(V, abs=1e-14)
    assert fd.richardson_extrapolate([(0.1, V + c * 0.1), (0.05, V + c * 0.05)], 1)[0] == pytest.approx(V, abs=1e-14)


def test_richardson_rejects_duplicates():
    with pytest.raises(ConfigError):
        fd.richardson_extrapolate([(0.1, 1.0), (0.1, 2.0)], 2)
    with pytest.raises(ConfigError):
        fd.richardson_extrapolate([(0.1, 1.0)], 2)


# --- 1d energies ---

MIRRORS = fd.Layout1d(fd.Mirror(0.0), fd.Mirror(1.0))


def test_mirror_energy_scaling():
    e1 = fd.casimir_energy_1d(MIRRORS, RULE30, 0.025).energy
    e2 = fd.casimir_energy_1d(fd.Layout1d(fd.Mirror(0.0), fd.Mirror(2.0)),
                              build_rule("gauss_laguerre", 30, 0.25), 0.05).energy
    assert e2 / e1 == pytest.approx(0.5, rel=1e-12)  # same dx/a: exact discrete scaling


def test_mirror_energy_ratio_improves_with_richardson():
    raw = lambda a, h: fd.casimir_energy_1d(fd.Layout1d(fd.Mirror(0.0), fd.Mirror(a)), RULE30, h).energy  # noqa: E731
    h = 0.1
    r_raw = raw(2.0, h) / raw(1.0, h)
    r_ext = (fd.richardson_extrapolate([(h, raw(2.0, h)), (h / 2, raw(2.0, h / 2))], 2)[0]
             / fd.richardson_extrapolate([(h, raw(1.0, h)), (h / 2, raw(1.0, h / 2))], 2)[0])
    assert abs(r_raw - 0.5) < 2e-3
    assert abs(r_ext - 0.5) < 0.1 * abs(r_raw - 0.5)


def test_mirror_energy_richardson():
    val, err, raw = fd.mirror_energy_1d(1.0, RULE30, cells=40)
    exact = -math.pi / 24
    assert abs(val / exact - 1) < 5e-3
    assert abs(val - exact) < 0.1 * abs(raw[-1][1] - exact)


def test_vacuum_slab_gives_zero():
    lay = fd.Layout1d(fd.Slab(0.0, 0.5, mt.constant(1.0)), fd.Slab(1.0, 1.5, mt.vacuum()))
    assert abs(fd.casimir_energy_1d(lay, RULE30, 0.05).energy) < 1e-12


def _order(values):
    d = np.abs(np.diff(values))
    return np.log2(d[:-1] / d[1:])


def test_aligned_mirrors_converge_second_order():
    hs = [1 / 10, 1 / 20, 1 / 40]
    e = np.array([fd.casimir_energy_1d(MIRRORS, RULE30, h).energy for h in hs])
    slope = np.polyfit(np.log(hs), np.log(np.abs(e + math.pi / 24)), 1)[0]
    assert abs(slope - 2) < 0.3


def test_interfaces_between_nodes_converge_second_order():
    lay = fd.Layout1d(fd.Slab(-0.5, 0.0, GLASS), fd.Slab(1.0, 1.5, GLASS))
    hs = [0.05, 0.025, 0.0125, 0.00625]
    e = [fd.casimir_energy_1d(lay, RULE30, h, shift=-h / 2).energy for h in hs]
    assert np.all(np.abs(_order(e) - 2) < 0.3)


def test_misaligned_slab_converges_first_order():
    # the slab face sits on a node, half a cell from the nearest cell face
    lay = fd.Layout1d(fd.Mirror(0.0), fd.Slab(1.0, 1.5, GLASS))
    hs = [0.05, 0.025, 0.0125, 0.00625]
    e = [fd.casimir_energy_1d(lay, RULE30, h).energy for h in hs]
    assert np.all(np.abs(_order(e) - 1) < 0.3)


def test_mirror_off_lattice_rejected():
    with pytest.raises(ConfigError):
        fd.casimir_energy_1d(fd.Layout1d(fd.Mirror(0.0), fd.Mirror(1.01)), RULE8, 0.1)


# --- 2d stress tensor ---

def test_subtract_isolated_synthetic():
    meta = {"dx": 0.1, "shape": (8, 8), "rule": "gauss_laguerre", "n": 1, "scale": 1.0}
    mk = lambda f: fd.ForceResult(np.array([f, 0.0]), [(1.0, f, 0.0, 1.0)], dict(meta))  # noqa: E731
    out = fd.subtract_isolated(mk(1.0), mk(0.02), mk(-0.01))
    assert out.force[0] == pytest.approx(0.99) and out.force[1] == 0
    assert "isolated-body subtraction" in out.meta["corrections"]
    same = fd.subtract_isolated(mk(0.7), mk(0.0), mk(0.0))
    assert same.force[0] == 0.7
    bad = mk(0.0)
    bad.meta["dx"] = 0.2
    with pytest.raises(ConfigError, match="dx"):
        fd.subtract_isolated(mk(1.0), bad, mk(0.0))


@pytest.fixture(scope="module")
def pair_grid():
    return fd.cylinder_grid(1, 1, 3, 1 / 8)


def test_mirror_symmetric_forces(pair_grid):
    s1 = fd.cylinder_surface(pair_grid, 1, 1, 3, 1)
    s2 = fd.cylinder_surface(pair_grid, 1, 1, 3, 2)
    f1 = fd.stress_force_2d(pair_grid, s1, RULE8).force
    f2 = fd.stress_force_2d(pair_grid, s2, RULE8).force
    assert np.abs(f1 + f2).max() < 1e-10
    assert f2[0] < 0 < f1[0]  # attraction


@pytest.mark.parametrize("d", [2.6, 3.0, 4.0])
def test_force_is_attractive(d):
    res = fd.cylinder_pair_force(1, 1, d, 1 / 8, RULE8)
    assert res.force[0] < 0


def test_nested_surfaces_agree(pair_grid):
    inner = fd.cylinder_surface(pair_grid, 1, 1, 3, 2, pad=0.375)
    outer = fd.cylinder_surface(pair_grid, 1, 1, 3, 2, pad=0.75)
    fi = fd.stress_force_2d(pair_grid, inner, RULE8).force[0]
    fo = fd.stress_force_2d(pair_grid, outer, RULE8).force[0]
    # discretization error at this dx is about 25% of the force (see the
    # Richardson study); nested surfaces must agree well inside it
    assert abs(fi - fo) < 0.05 * abs(fo)


def test_surface_through_body_rejected(pair_grid):
    bad = fd.StressSurface.around(pair_grid, 1.0, 3.0, -1.5, 1.5)
    with pytest.raises(ConfigError):
        fd.stress_force_2d(pair_grid, bad, RULE8)
    both = fd.StressSurface.around(pair_grid, -2.9, 2.9, -1.5, 1.5)
    with pytest.raises(ConfigError, match="more than one"):
        fd.stress_force_2d(pair_grid, both, RULE8)


def test_isolated_cylinder_artifact_shrinks():
    forces = []
    for dx in (1 / 8, 1 / 16, 1 / 32):
        g = fd.cylinder_grid(1, 1, 3, dx, which=(False, True))
        forces.append(abs(fd.stress_force_2d(g, fd.cylinder_surface(g, 1, 1, 3, 2), RULE8).force[0]))
    assert forces[0] > forces[1] > forces[2] > 0


def test_subtraction_reduces_error_at_fixed_dx():
    ref = -0.06225128993  # partial-wave value, see test_scattering
    raw = fd.cylinder_pair_force(1, 1, 3, 1 / 8, RULE8, subtract=False).force[0]
    cor = fd.cylinder_pair_force(1, 1, 3, 1 / 8, RULE8).force[0]
    assert abs(cor - ref) < abs(raw - ref)


@pytest.mark.xfail(strict=True, reason="isolated-body subtraction removes only a small share of "
                   "the pin-rule staircase error, which dominates at these resolutions")
def test_subtraction_matches_halved_spacing():
    ref = -0.06225128993
    cor = fd.cylinder_pair_force(1, 1, 3, 1 / 8, RULE8).force[0]
    raw_fine = fd.cylinder_pair_force(1, 1, 3, 1 / 16, RULE8, subtract=False).force[0]
    assert abs(cor - ref) <= abs(raw_fine - ref)


def test_samples_reproduce_force(pair_grid):
    res = fd.stress_force_2d(pair_grid, fd.cylinder_surface(pair_grid, 1, 1, 3, 2), RULE8)
    assert math.fsum(s[1] * s[3] for s in res.samples) == pytest.approx(res.force[0], rel=1e-12)


def test_solvers_agree(pair_grid):
    s = fd.cylinder_surface(pair_grid, 1, 1, 3, 2)
    a = fd.stress_integrand(pair_grid, s, 0.7, "direct")
    b = fd.stress_integrand(pair_grid, s, 0.7, "columns")
    assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()
    with pytest.raises(ConfigError):
        fd.stress_integrand(pair_grid, s, 0.7, "magic")


def test_stretch_validation():
    with pytest.raises(ConfigError):
        fd.Stretch(growth=0.9)
    with pytest.raises(ConfigError):
        fd.Stretch("absorbing")
    w = fd.Stretch("pml", cells=8, sigma_max=4.0).padding(0.1, 2.0)
    assert np.all(w >= 0.1) and np.all(np.diff(w) > 0)


def test_grid_validation():
    with pytest.raises(ConfigError):
        fd.FdGrid(0.1, (4,))
    with pytest.raises(ConfigError):
        fd.FdGrid(-0.1, (10,))
    with pytest.raises(ConfigError):
        fd.FdGrid(0.1, (10,), materials=[mt.perfect_metal()])
    with pytest.raises(ConfigError):
        fd.cylinder_grid(1, 1, 1.5, 0.1)
