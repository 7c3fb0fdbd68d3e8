"""Imaginary-frequency finite-difference Green's functions and Casimir forces.

At imaginary frequency xi the scalar (1d, or 2d TM with out-of-plane E)
Green's function solves

    [-div grad + xi^2 eps(x)] G(x, x') = delta(x - x'),

a real symmetric positive-definite problem.  The discretization is
node-centred.  On the uniform core of the grid the operator rows are the
standard ones, e.g. [-1/dx^2, 2/dx^2 + xi^2 eps, -1/dx^2] in 1d, and the
point source is delta/dx^dim.  Outside the core an optional real coordinate
stretch grows the cell size, which pushes the outer walls far away at little
cost.  On a stretched grid the operator is written in symmetric
finite-volume form, (K + xi^2 eps M)/dx^dim, where K is the stiffness
matrix and M the diagonal matrix of dual-cell volumes.  This reduces
exactly to the stencil above where the grid is uniform.

Perfect-metal bodies are Dirichlet regions: their nodes are pinned to zero
and eliminated from the system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from . import materials as mat
from .errors import ConfigError, NumericalError
from .quadrature import FrequencyRule, IntegrandSample, evaluate

BOUNDARIES = ("dirichlet", "periodic", "open")
DENSE_LIMIT = 400


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stretch:
    """Real coordinate stretch applied outside the uniform core.

    kind="geometric"
        padding cells grow by ``growth`` per cell until ``length`` is covered
        on each side; independent of xi.
    kind="pml"
        ``cells`` padding cells of nominal width dx with stretch factor
        s = 1 + sigma(x)/xi, sigma rising quadratically to ``sigma_max``.
    """
    kind: str = "geometric"
    growth: float = 1.3
    length: float = 300.0
    cells: int = 16
    sigma_max: float = 4.0

    def __post_init__(self):
        if self.kind not in ("geometric", "pml"):
            raise ConfigError(f"unknown stretch kind {self.kind!r}")
        if self.kind == "geometric" and not (self.growth >= 1.0 and self.length >= 0):
            raise ConfigError("geometric stretch needs growth >= 1 and length >= 0")
        if self.kind == "pml" and not (self.cells >= 1 and self.sigma_max >= 0):
            raise ConfigError("pml stretch needs cells >= 1 and sigma_max >= 0")

    def padding(self, h: float, xi: float) -> np.ndarray:
        """Widths of the padding cells, innermost first (all >= h)."""
        if self.kind == "geometric":
            if self.length == 0:
                return np.zeros(0)
            if self.growth == 1.0:
                return np.full(int(math.ceil(self.length / h)), h)
            widths, total, w = [], 0.0, h
            while total < self.length:
                w *= self.growth
                widths.append(w)
                total += w
            return np.array(widths)
        k = np.arange(1, self.cells + 1) - 0.5
        sigma = self.sigma_max * (k / self.cells) ** 2
        return h * (1.0 + sigma / xi)


@dataclass
class FdGrid:
    """Node-centred finite-difference grid.

    Parameters
    ----------
    spacing : float
        Core node spacing dx.
    shape : tuple of int
        Core node counts per axis (>= 8 each).
    origin : tuple of float
        Coordinates of core node (0, ...).
    materials : list of MaterialModel
        ``materials[k]`` is the medium of nodes with ``material_map == k``;
        index 0 is the background and also fills any padding.
    material_map : int array of ``shape`` or None
        Per-node material index (all background if None).
    body_mask : int array of ``shape`` or None
        Per-node body id, 0 = none.  Body nodes are Dirichlet (perfect metal).
    boundary : str
        "dirichlet" (field zero beyond the last node), "periodic" (wraps,
        core only) or "open" (1d only: exact discrete radiation condition
        into a semi-infinite uniform background).
    stretch : Stretch or None
        Padding outside the core; not allowed with periodic boundaries.
    """
    spacing: float
    shape: tuple
    origin: tuple = None
    materials: list = field(default_factory=lambda: [mat.vacuum()])
    material_map: np.ndarray | None = None
    body_mask: np.ndarray | None = None
    boundary: str = "dirichlet"
    stretch: Stretch | None = None

    def __post_init__(self):
        self.shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if self.dim not in (1, 2):
            raise ConfigError("FdGrid supports dim 1 or 2")
        if not self.spacing > 0:
            raise ConfigError(f"grid spacing must be > 0, got {self.spacing}")
        if min(self.shape) < 8:
            raise ConfigError(f"grid needs >= 8 nodes per axis, got {self.shape}")
        if self.origin is None:
            self.origin = (0.0,) * self.dim
        self.origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"unknown boundary {self.boundary!r}")
        if self.boundary == "open" and self.dim != 1:
            raise ConfigError("open boundary is only available in 1d")
        if self.boundary in ("periodic", "open") and self.stretch is not None:
            raise ConfigError(f"{self.boundary} boundary cannot be combined with a stretch")
        if self.material_map is None:
            self.material_map = np.zeros(self.shape, dtype=int)
        if self.body_mask is None:
            self.body_mask = np.zeros(self.shape, dtype=int)
        self.material_map = np.asarray(self.material_map, dtype=int).reshape(self.shape)
        self.body_mask = np.asarray(self.body_mask, dtype=int).reshape(self.shape)
        if self.material_map.min() < 0 or self.material_map.max() >= len(self.materials):
            raise ConfigError("material_map refers to an undefined material index")
        for m in self.materials:
            if m.is_perfect_metal:
                raise ConfigError("perfect metals enter an FD grid through body_mask, not materials")
        if self.boundary == "open" and (self.body_mask[0] or self.body_mask[-1]
                                        or self.material_map[0] or self.material_map[-1]):
            raise ConfigError("open boundary needs background medium at both end nodes")

    @property
    def dim(self) -> int:
        return len(self.shape)

    def core_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.shape[axis])

    def padding(self, xi: float) -> np.ndarray:
        if self.stretch is None:
            return np.zeros(0)
        return self.stretch.padding(self.spacing, xi)

    def coords(self, axis: int, xi: float) -> np.ndarray:
        """Full node coordinates along ``axis`` including padding."""
        core = self.core_coords(axis)
        pad = np.cumsum(self.padding(xi))
        return np.concatenate([core[0] - pad[::-1], core, core[-1] + pad])

    def key(self):
        return (self.spacing, self.shape, self.origin, self.boundary, self.stretch,
                tuple(self.materials), self.material_map.tobytes())

    def with_bodies(self, body_mask) -> "FdGrid":
        return FdGrid(self.spacing, self.shape, self.origin, self.materials,
                      self.material_map, body_mask, self.boundary, self.stretch)


def _open_root(q: float) -> float:
    """Root in (0, 1) of r^2 - (2 + q) r + 1 = 0, q = xi^2 eps dx^2, computed stably."""
    b = 2.0 + q
    return 2.0 / (b + math.sqrt(q * (4.0 + q))) if q > 0 else 1.0


# ---------------------------------------------------------------------------
# operator
# ---------------------------------------------------------------------------

@dataclass
class SpdOperator:
    """Assembled operator over the free (non-Dirichlet) nodes.

    ``matrix`` acts on free nodes of the full (padded) grid.  ``free_index``
    maps full-grid flat node indices to rows (-1 for pinned nodes), and
    ``core_offset`` gives the padding width per axis so core node indices can
    be translated.
    """
    matrix: sp.csc_matrix
    free_index: np.ndarray
    full_shape: tuple
    core_offset: tuple
    xi: float
    spacing: float
    _lu: object = field(default=None, repr=False)
    _chol: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def factor(self):
        """Cholesky for small systems, sparse LU (symmetric mode) otherwise."""
        if self._lu is None and self._chol is None:
            if self.n <= DENSE_LIMIT:
                try:
                    self._chol = sla.cho_factor(self.matrix.toarray(), lower=True)
                except np.linalg.LinAlgError:
                    raise NumericalError("Cholesky failed: operator is not positive definite "
                                         "(assembly bug)") from None
            else:
                self._lu = splu(self.matrix, permc_spec="MMD_AT_PLUS_A",
                                diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
                if np.any(self._lu.U.diagonal() <= 0):
                    raise NumericalError("sparse factorization found a non-positive pivot: "
                                         "operator is not positive definite (assembly bug)")
        return self

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        self.factor()
        if self._chol is not None:
            return sla.cho_solve(self._chol, rhs)
        return self._lu.solve(rhs)

    def row_of(self, core_index) -> int:
        """Matrix row of a core node given as an int (1d) or an (i, j) tuple."""
        idx = np.atleast_1d(core_index)
        full = np.array([i + o for i, o in zip(idx, self.core_offset)])
        flat = int(np.ravel_multi_index(tuple(full), self.full_shape))
        return int(self.free_index[flat])


def _bc(vec, ax, dim):
    shape = [1] * dim
    shape[ax] = len(vec)
    return np.reshape(vec, shape)


def _assemble(coords: Sequence[np.ndarray], eps: np.ndarray, pinned: np.ndarray,
              xi: float, h: float, boundary: str, open_q=None):
    shape = tuple(len(c) for c in coords)
    dim = len(shape)
    nnode = int(np.prod(shape))
    ids = np.arange(nnode).reshape(shape)
    widths = [np.diff(c) for c in coords]
    duals = []
    for w in widths:
        d = np.zeros(len(w) + 1)
        d[:-1] += 0.5 * w
        d[1:] += 0.5 * w
        # every boundary kind gives the end node a full cell: a pinned ghost
        # node (dirichlet), a wrapped neighbour (periodic) or the exterior
        # lattice (open) sits one end-cell width away
        d[0] += 0.5 * (h if boundary == "periodic" else w[0])
        d[-1] += 0.5 * (h if boundary == "periodic" else w[-1])
        duals.append(d)
    rows, cols, vals = [], [], []
    diag = np.zeros(shape)
    for ax in range(dim):
        perp = np.ones([1] * dim)
        for o in range(dim):
            if o != ax:
                perp = perp * _bc(duals[o], o, dim)
        n_ax = shape[ax]
        lo = np.take(ids, np.arange(n_ax - 1), axis=ax)
        hi = np.take(ids, np.arange(1, n_ax), axis=ax)
        coef = np.broadcast_to(_bc(1.0 / widths[ax], ax, dim) * perp, lo.shape)
        a, b, cv = lo.ravel(), hi.ravel(), coef.ravel()
        if boundary == "periodic":
            wl = np.take(ids, [n_ax - 1], axis=ax).ravel()
            w0 = np.take(ids, [0], axis=ax).ravel()
            pc = np.broadcast_to(perp / h, np.take(ids, [0], axis=ax).shape).ravel()
            a, b, cv = np.concatenate([a, wl]), np.concatenate([b, w0]), np.concatenate([cv, pc])
        else:
            for end, w_end, q in ((0, widths[ax][0], None if open_q is None else open_q[0]),
                                  (n_ax - 1, widths[ax][-1], None if open_q is None else open_q[1])):
                g = (1.0 - _open_root(q)) / h if q is not None else 1.0 / w_end
                idx = [slice(None)] * dim
                idx[ax] = slice(end, end + 1)
                diag[tuple(idx)] += g * perp
        dflat = diag.reshape(-1)
        np.add.at(dflat, a, cv)
        np.add.at(dflat, b, cv)
        rows += [a, b]
        cols += [b, a]
        vals += [-cv, -cv]
    mass = np.ones([1] * dim)
    for ax in range(dim):
        mass = mass * _bc(duals[ax], ax, dim)
    diag = diag + xi * xi * eps * mass
    rows.append(ids.ravel())
    cols.append(ids.ravel())
    vals.append(diag.ravel())
    r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    free = ~pinned.ravel()
    index = -np.ones(nnode, dtype=int)
    index[free] = np.arange(int(free.sum()))
    keep = free[r] & free[c]
    A = sp.csc_matrix((v[keep] / h**dim, (index[r[keep]], index[c[keep]])),
                      shape=(int(free.sum()),) * 2)
    A.sum_duplicates()
    return A, index


def node_eps(grid: FdGrid, xi: float, full: bool = False) -> np.ndarray:
    """Per-node eps(i xi) on the core (or the padded grid when ``full``)."""
    vals = np.array([mat.permittivity(m, xi) for m in grid.materials])
    core = vals[grid.material_map]
    if not full:
        return core
    npad = len(grid.padding(xi))
    return np.pad(core, npad, mode="constant", constant_values=vals[0]) if npad else core


def build_operator(grid: FdGrid, xi: float, check: bool = True) -> SpdOperator:
    """Assemble the SPD operator at imaginary frequency ``xi`` (> 0).

    A symmetry assertion is applied when ``check`` is true.  ``xi = 0`` is
    accepted only so that the singular zero-frequency limit can be inspected.
    """
    if xi < 0 or not np.isfinite(xi):
        raise ConfigError(f"build_operator needs xi > 0, got {xi}")
    npad = len(grid.padding(xi)) if xi > 0 else 0
    coords = [grid.coords(ax, xi) if xi > 0 else grid.core_coords(ax) for ax in range(grid.dim)]
    eps = node_eps(grid, xi, full=True) if xi > 0 else np.ones(grid.shape)
    pinned = grid.body_mask != 0
    if npad:
        pinned = np.pad(pinned, npad, mode="constant", constant_values=False)
    open_q = None
    if grid.boundary == "open":
        e0 = eps.ravel()[0]
        e1 = eps.ravel()[-1]
        open_q = ((xi * grid.spacing) ** 2 * e0, (xi * grid.spacing) ** 2 * e1)
    A, index = _assemble(coords, eps, pinned, xi, grid.spacing, grid.boundary, open_q)
    if check:
        asym = abs(A - A.T)
        if asym.nnz and asym.max() > 1e-12 * abs(A).max():
            raise NumericalError("assembled operator is not symmetric")
    return SpdOperator(A, index, pinned.shape, (npad,) * grid.dim, float(xi), grid.spacing)


def is_positive_definite(op: SpdOperator) -> bool:
    """True when a Cholesky (dense) or pivot-free LDL-type factorization succeeds.

    Pivots at round-off level (below n * machine epsilon of the largest) count
    as failure, so a singular matrix is not reported as definite by accident.
    """
    try:
        if op.n <= DENSE_LIMIT:
            piv = np.diag(sla.cholesky(op.matrix.toarray(), lower=True)) ** 2
        else:
            lu = splu(op.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
            piv = lu.U.diagonal()
    except (np.linalg.LinAlgError, RuntimeError):
        return False
    return bool(np.all(piv > op.n * np.finfo(float).eps * np.abs(piv).max()))


# ---------------------------------------------------------------------------
# Green's function
# ---------------------------------------------------------------------------

def green_columns(op: SpdOperator, sources: Sequence[int], solver: str = "direct",
                  rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Solve for G(., x') at the given source rows (matrix-row indices).

    The source is delta/dx^dim.  Returns an array of shape (n_free, n_sources).
    """
    src = np.asarray(sources, dtype=int)
    if np.any(src < 0):
        raise ConfigError("source lies on a Dirichlet (body) node")
    B = np.zeros((op.n, len(src)))
    B[src, np.arange(len(src))] = 1.0 / op.spacing ** len(op.full_shape)
    if solver == "direct":
        return op.solve(B)
    if solver != "cg":
        raise ConfigError(f"unknown solver {solver!r}")
    out = np.empty_like(B)
    M = sp.diags(1.0 / op.matrix.diagonal())
    for k in range(B.shape[1]):
        hist = []
        bnorm = np.linalg.norm(B[:, k])
        x, info = cg(op.matrix, B[:, k], rtol=rtol, atol=0.0, M=M,
                     maxiter=maxiter or 10 * op.n,
                     callback=lambda xk: hist.append(
                         np.linalg.norm(B[:, k] - op.matrix @ xk) / bnorm))
        res = np.linalg.norm(B[:, k] - op.matrix @ x) / bnorm
        if info != 0 or res > 10 * rtol:
            raise NumericalError(f"CG did not converge for source {src[k]}: "
                                 f"residual history {hist[-5:]}")
        out[:, k] = x
    return out


def green_block(op: SpdOperator, rows: Sequence[int]) -> np.ndarray:
    """G restricted to ``rows`` x ``rows`` without solving for full columns.

    The requested rows are ordered last in an LU factorization, after a
    fill-reducing ordering of the remaining unknowns.  The trailing block of
    the factors is then the Schur complement C of the remaining unknowns, and
    (A^-1) restricted to ``rows`` is C^-1.  For a closed stress surface this
    costs about one factorization, against one triangular solve per source
    for the column approach.
    """
    rows = np.asarray(rows, dtype=int)
    if np.any(rows < 0):
        raise ConfigError("source lies on a Dirichlet (body) node")
    scale = 1.0 / op.spacing ** len(op.full_shape)
    n, s = op.n, len(rows)
    if n <= DENSE_LIMIT or s >= n // 2:
        return green_columns(op, rows)[rows, :]
    A = op.matrix.tocsc()
    rest = np.ones(n, dtype=bool)
    rest[rows] = False
    rest = np.flatnonzero(rest)
    pre = splu(A[rest][:, rest], permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
               options=dict(SymmetricMode=True))
    order = np.concatenate([rest[np.argsort(pre.perm_c)], rows])
    lu = splu(A[order][:, order].tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
              options=dict(SymmetricMode=True))
    if not (np.array_equal(lu.perm_c, np.arange(n)) and np.array_equal(lu.perm_r, np.arange(n))):
        raise NumericalError("sparse LU reordered the Schur block; cannot read it off")
    if np.any(lu.U.diagonal() <= 0):
        raise NumericalError("operator is not positive definite (non-positive LU pivot)")
    L = lu.L.tocsr()[n - s:, n - s:].toarray()
    U = lu.U.tocsr()[n - s:, n - s:].toarray()
    C = L @ U
    C = 0.5 * (C + C.T)
    return sla.cho_solve(sla.cho_factor(C, lower=True), np.eye(s)) * scale


def green_column(op: SpdOperator, source_index, solver: str = "direct", **kw) -> np.ndarray:
    """G(., x') on the core grid for a core source node; pinned nodes hold 0."""
    row = op.row_of(source_index)
    if row < 0:
        raise ConfigError("source lies on a Dirichlet (body) node")
    col = green_columns(op, [row], solver=solver, **kw)[:, 0]
    full = np.zeros(op.free_index.shape)
    ok = op.free_index >= 0
    full[ok] = col[op.free_index[ok]]
    full = full.reshape(op.full_shape)
    sl = tuple(slice(o, o + s - 2 * o) for o, s in zip(op.core_offset, op.full_shape))
    return full[sl]


def green_diagonal(op: SpdOperator) -> np.ndarray:
    """Diagonal G(x, x) over the free nodes (dense inverse; meant for 1d)."""
    if op.n > 20000:
        raise ConfigError("green_diagonal is meant for small (1d) systems")
    A = op.matrix.toarray()
    inv = sla.cho_solve(sla.cho_factor(A, lower=True), np.eye(op.n))
    return np.diag(inv) / op.spacing ** len(op.full_shape)


# ---------------------------------------------------------------------------
# extrapolation
# ---------------------------------------------------------------------------

def richardson_extrapolate(values, p: float):
    """Remove the leading dx^p error term from (dx, value) samples.

    With two samples the result is exact for v = V + c dx^p.  With more, a
    Neville-style table removes dx^p, dx^(p+1), ... in turn.  Returns
    ``(value, error_estimate)`` where the estimate is the size of the last
    eliminated correction.
    """
    pts = sorted(((float(h), float(v)) for h, v in values), key=lambda t: -t[0])
    if len(pts) < 2:
        raise ConfigError("Richardson extrapolation needs at least two samples")
    hs = [h for h, _ in pts]
    if len(set(hs)) != len(hs):
        raise ConfigError("Richardson extrapolation needs distinct spacings")
    if min(hs) <= 0:
        raise ConfigError("spacings must be > 0")
    col = [v for _, v in pts]
    order = p
    err = 0.0
    for level in range(1, len(pts)):
        new = []
        for i in range(len(col) - 1):
            ratio = (hs[i] / hs[i + level]) ** order
            new.append((ratio * col[i + 1] - col[i]) / (ratio - 1.0))
        err = abs(new[-1] - col[-1])
        col = new
        order += 1
    return col[0], err


# ---------------------------------------------------------------------------
# 1d energy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mirror:
    """Perfect mirror: a single Dirichlet node at ``x`` (snapped to the grid)."""
    x: float


@dataclass(frozen=True)
class Slab:
    """Dielectric slab occupying x0 <= x <= x1."""
    x0: float
    x1: float
    material: mat.MaterialModel


@dataclass(frozen=True)
class Layout1d:
    """Two bodies on a line in a background medium."""
    body1: object
    body2: object
    background: mat.MaterialModel = field(default_factory=mat.vacuum)


@dataclass
class EnergyResult:
    energy: float
    samples: list
    meta: dict


def _body_extent(b):
    return (b.x, b.x) if isinstance(b, Mirror) else (b.x0, b.x1)


def grid_1d(layout: Layout1d, dx: float, margin_cells: int = 8, shift: float = 0.0,
            which=(True, True)) -> FdGrid:
    """Open-boundary grid holding the chosen bodies of ``layout``.

    Nodes sit at x = origin + k dx with origin chosen so that x = shift lies
    on the lattice.  Mirrors must fall on a node (within 1e-9 dx).
    """
    lo = min(_body_extent(layout.body1)[0], _body_extent(layout.body2)[0])
    hi = max(_body_extent(layout.body1)[1], _body_extent(layout.body2)[1])
    k0 = math.floor((lo - shift) / dx + 1e-9) - margin_cells
    k1 = math.ceil((hi - shift) / dx - 1e-9) + margin_cells
    x = shift + dx * np.arange(k0, k1 + 1)
    n = len(x)
    materials = [layout.background]
    mmap = np.zeros(n, dtype=int)
    bmask = np.zeros(n, dtype=int)
    for bid, (b, on) in enumerate(zip((layout.body1, layout.body2), which), start=1):
        if not on:
            continue
        if isinstance(b, Mirror):
            k = (b.x - x[0]) / dx
            if abs(k - round(k)) > 1e-9:
                raise ConfigError(f"mirror at x={b.x} does not fall on a grid node (dx={dx})")
            bmask[int(round(k))] = bid
        elif isinstance(b, Slab):
            materials.append(b.material)
            inside = (x >= b.x0 - 1e-12 * dx) & (x <= b.x1 + 1e-12 * dx)
            mmap[inside] = len(materials) - 1
        else:
            raise ConfigError(f"unsupported 1d body {b!r}")
    return FdGrid(dx, (n,), (x[0],), materials, mmap, bmask, "open")


def _energy_density_sum(grid: FdGrid, xi: float) -> float:
    """sum_n dx (xi/2) d(xi^2 eps)/dxi G_nn over free nodes."""
    op = build_operator(grid, xi)
    g = green_diagonal(op)
    w = np.array([mat.dxi2eps(m, xi) for m in grid.materials])[grid.material_map]
    free = grid.body_mask == 0
    total = float(np.sum(grid.spacing * 0.5 * xi * w[free] * g))
    if grid.boundary == "open":
        # the exterior half-lines enter through the xi-dependent end entries
        # (1 - r)/dx^2 of the operator; their share of d(ln det)/d xi is
        # -dx G_end (dr/dxi)/dx^2
        h = grid.spacing
        for end, m_id in ((0, grid.material_map[0]), (-1, grid.material_map[-1])):
            eps = mat.permittivity(grid.materials[m_id], xi)
            q = (xi * h) ** 2 * eps
            r = _open_root(q)
            dr_dq = r / (2.0 * r - 2.0 - q)
            dq = mat.dxi2eps(grid.materials[m_id], xi) * h * h
            total += 0.5 * xi * h * g[end] * (-dr_dq * dq) / h**2
    return total


def energy_integrand_1d(layout: Layout1d, xi: float, dx: float, shift: float = 0.0,
                        margin_cells: int = 8) -> float:
    """Interaction-energy integrand at ``xi``.

    -(1/pi) sum dx (xi/2) d(xi^2 eps)/dxi [G_12 - G_1 - G_2 + G_0]_nn,
    i.e. the field energy density with the vacuum Green's function and each
    body's self-energy removed.
    """
    parts = []
    for which in ((True, True), (True, False), (False, True), (False, False)):
        g = grid_1d(layout, dx, margin_cells, shift, which)
        parts.append(_energy_density_sum(g, xi))
    inter = (parts[0] - parts[1]) - (parts[2] - parts[3])
    return -inter / math.pi


def casimir_energy_1d(layout: Layout1d, rule: FrequencyRule, dx: float,
                      shift: float = 0.0, margin_cells: int = 8) -> EnergyResult:
    """Casimir interaction energy of two 1d bodies (natural units, hbar c)."""
    if rule.kind == "matsubara":
        raise ConfigError("casimir_energy_1d takes a zero-temperature rule")
    vals = evaluate(lambda x: energy_integrand_1d(layout, x, dx, shift, margin_cells), rule.nodes)
    energy = float(np.sum(rule.weights * vals))
    samples = [IntegrandSample(float(x), float(v), float(w))
               for x, v, w in zip(rule.nodes, vals, rule.weights)]
    return EnergyResult(energy, samples, {"dx": dx, "rule": rule.kind, "n": len(rule)})


def mirror_energy_1d(a: float, rule: FrequencyRule, cells: int = 40,
                     richardson: bool = True):
    """Energy of perfect mirrors at 0 and a with a = cells*dx (and 2*cells).

    Returns ``(value, error_estimate, raw)`` with ``raw`` the list of
    (dx, energy) pairs.  The lattice-aligned error is O(dx^2).
    """
    lay = Layout1d(Mirror(0.0), Mirror(a))
    raw = []
    for c in (cells, 2 * cells) if richardson else (cells,):
        dx = a / c
        raw.append((dx, casimir_energy_1d(lay, rule, dx).energy))
    if not richardson:
        return raw[0][1], float("nan"), raw
    val, err = richardson_extrapolate(raw, 2)
    return val, err, raw


# ---------------------------------------------------------------------------
# 2d stress tensor
# ---------------------------------------------------------------------------

@dataclass
class StressSurface:
    """Axis-aligned rectangle of grid faces.

    Vertical sides lie on x = x_i + dx/2 for i = i_lo and i = i_hi, horizontal
    sides on y = y_j + dx/2 for j = j_lo and j = j_hi (core node indices).
    Each face point carries a 6-node stencil.
    """
    i_lo: int
    i_hi: int
    j_lo: int
    j_hi: int

    def __post_init__(self):
        if not (self.i_hi > self.i_lo and self.j_hi > self.j_lo):
            raise ConfigError("stress surface must have positive extent")

    @classmethod
    def around(cls, grid: FdGrid, x0, x1, y0, y1) -> "StressSurface":
        """Rectangle whose sides are the half-integer lines nearest to the given box.

        Ties are broken outward, which keeps mirror-image boxes mirror images.
        """
        h = grid.spacing
        ox, oy = grid.origin
        lo = lambda v, o: int(math.ceil((v - o) / h - 1.0 - 1e-9))  # noqa: E731
        hi = lambda v, o: int(math.floor((v - o) / h + 1e-9))  # noqa: E731
        return cls(lo(x0, ox), hi(x1, ox), lo(y0, oy), hi(y1, oy))

    def faces(self):
        """Return (nodes[nf, 6, 2], normals[nf, 2], kinds[nf]) with kind 0 = vertical side."""
        nodes, normals, kinds = [], [], []
        for i, nx in ((self.i_lo, -1.0), (self.i_hi, 1.0)):
            for j in range(self.j_lo + 1, self.j_hi + 1):
                nodes.append([(i, j - 1), (i, j), (i, j + 1), (i + 1, j - 1), (i + 1, j), (i + 1, j + 1)])
                normals.append((nx, 0.0))
                kinds.append(0)
        for j, ny in ((self.j_lo, -1.0), (self.j_hi, 1.0)):
            for i in range(self.i_lo + 1, self.i_hi + 1):
                nodes.append([(i - 1, j), (i, j), (i + 1, j), (i - 1, j + 1), (i, j + 1), (i + 1, j + 1)])
                normals.append((0.0, ny))
                kinds.append(1)
        return np.array(nodes), np.array(normals), np.array(kinds)


# stencil functionals on the 6 nodes (two rows of three across the face):
# value at the face midpoint, normal difference, tangential central difference
_U = np.array([0, .5, 0, 0, .5, 0])
_DN = np.array([0, -1., 0, 0, 1., 0])
_DT = np.array([-1., 0, 1., -1., 0, 1.]) / 4.0


def _check_surface(grid: FdGrid, surface: StressSurface, clearance: float):
    nodes, _, _ = surface.faces()
    ni, nj = grid.shape
    flat = nodes.reshape(-1, 2)
    if flat[:, 0].min() < 0 or flat[:, 0].max() >= ni or flat[:, 1].min() < 0 or flat[:, 1].max() >= nj:
        raise ConfigError("stress surface stencil leaves the uniform core of the grid")
    if np.any(grid.body_mask[flat[:, 0], flat[:, 1]] != 0):
        raise ConfigError("stress surface intersects a body")
    inside = grid.body_mask[surface.i_lo + 1:surface.i_hi + 1, surface.j_lo + 1:surface.j_hi + 1]
    ids = set(np.unique(inside)) - {0}
    if len(ids) > 1:
        raise ConfigError(f"stress surface encloses more than one body: {sorted(ids)}")
    # clearance from the rectangle's sides to every body node (in grid cells)
    bi, bj = np.nonzero(grid.body_mask)
    if len(bi):
        xs = np.array([surface.i_lo + 0.5, surface.i_hi + 0.5])
        ys = np.array([surface.j_lo + 0.5, surface.j_hi + 0.5])
        in_y = (bj >= surface.j_lo - clearance) & (bj <= surface.j_hi + 1 + clearance)
        in_x = (bi >= surface.i_lo - clearance) & (bi <= surface.i_hi + 1 + clearance)
        dx = np.min(np.abs(bi[in_y, None] - xs[None, :])) if in_y.any() else np.inf
        dy = np.min(np.abs(bj[in_x, None] - ys[None, :])) if in_x.any() else np.inf
        if min(dx, dy) < clearance:
            raise ConfigError(f"stress surface is closer than {clearance} cells to a body")
    return sorted(ids)


@dataclass
class ForceResult:
    """Force on the enclosed body; ``force`` = sum of weight * sample."""
    force: np.ndarray
    samples: list          # (xi, fx, fy, weight)
    meta: dict

    def integrand(self):
        return np.array([[s[1], s[2]] for s in self.samples])


def stress_integrand(grid: FdGrid, surface: StressSurface, xi: float,
                     solver: str = "direct", chunk: int = 512) -> np.ndarray:
    """Closed-surface integral of the Euclidean stress tensor at one xi (no vacuum removal).

    T_jk = (1/pi)[d_j d'_k G - delta_jk/2 (grad.grad' G + xi^2 G)] evaluated
    from a symmetric G on each face's 6-node stencil; the returned value is
    -sum_faces T.n dS.  ``solver`` is "direct" (Schur block, see
    ``green_block``), "columns" (one sparse LU solve per stencil node) or
    "cg".
    """
    if solver not in ("direct", "columns", "cg"):
        raise ConfigError(f"unknown solver {solver!r}")
    op = build_operator(grid, xi)
    nodes, normals, kinds = surface.faces()
    uniq, inv = np.unique(nodes.reshape(-1, 2), axis=0, return_inverse=True)
    inv = inv.reshape(nodes.shape[:2])
    rows = np.array([op.row_of((i, j)) for i, j in uniq])
    if np.any(rows < 0):
        raise ConfigError("stress surface touches a Dirichlet node")
    if solver == "direct":
        G = green_block(op, rows)
    else:
        G = np.empty((len(rows), len(rows)))
        for s in range(0, len(rows), chunk):
            cols = green_columns(op, rows[s:s + chunk], solver="direct" if solver == "columns" else solver)
            G[:, s:s + chunk] = cols[rows, :]
    G = 0.5 * (G + G.T)
    h = grid.spacing
    Gs = G[inv[:, :, None], inv[:, None, :]]               # (nf, 6, 6)
    gx = np.where(kinds[:, None] == 0, _DN[None, :], _DT[None, :]) / h
    gy = np.where(kinds[:, None] == 0, _DT[None, :], _DN[None, :]) / h
    u = np.broadcast_to(_U, gx.shape)
    q = lambda a, b: np.einsum("fi,fij,fj->f", a, Gs, b)  # noqa: E731
    xx, yy, xy, uu = q(gx, gx), q(gy, gy), q(gx, gy), q(u, u)
    tr = xx + yy + xi * xi * uu
    Txx = (xx - 0.5 * tr) / math.pi
    Tyy = (yy - 0.5 * tr) / math.pi
    Txy = xy / math.pi
    fx = -np.sum((Txx * normals[:, 0] + Txy * normals[:, 1]) * h)
    fy = -np.sum((Txy * normals[:, 0] + Tyy * normals[:, 1]) * h)
    return np.array([fx, fy])


class _VacuumCache:
    def __init__(self):
        self.store = {}

    def get(self, grid, surface, xi, solver):
        key = (grid.key(), (surface.i_lo, surface.i_hi, surface.j_lo, surface.j_hi), float(xi))
        if key not in self.store:
            empty = grid.with_bodies(np.zeros(grid.shape, dtype=int))
            self.store[key] = stress_integrand(empty, surface, xi, solver)
        return self.store[key]


VACUUM_CACHE = _VacuumCache()


def stress_force_2d(grid: FdGrid, surface: StressSurface, rule: FrequencyRule,
                    vacuum_subtraction: bool = True, clearance: float = 2.0,
                    solver: str = "direct", label: str = "") -> ForceResult:
    """Casimir force on the body enclosed by ``surface`` (scalar field in two space dimensions)."""
    if grid.dim != 2:
        raise ConfigError("stress_force_2d needs a 2d grid")
    if rule.kind == "matsubara":
        raise ConfigError("stress_force_2d takes a zero-temperature rule")
    ids = _check_surface(grid, surface, clearance)

    def f(xi):
        v = stress_integrand(grid, surface, xi, solver)
        if vacuum_subtraction:
            v = v - VACUUM_CACHE.get(grid, surface, xi, solver)
        return v

    vals = np.array([f(float(x)) for x in rule.nodes])
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite stress integrand")
    force = np.array([np.sum(rule.weights * vals[:, 0]), np.sum(rule.weights * vals[:, 1])])
    samples = [(float(x), float(v[0]), float(v[1]), float(w))
               for x, v, w in zip(rule.nodes, vals, rule.weights)]
    meta = {"dx": grid.spacing, "shape": grid.shape, "rule": rule.kind, "n": len(rule),
            "scale": rule.params.get("scale"), "bodies_enclosed": ids,
            "vacuum_subtraction": vacuum_subtraction, "corrections": [], "label": label}
    return ForceResult(force, samples, meta)


def subtract_isolated(result_ab: ForceResult, result_a: ForceResult,
                      result_b: ForceResult) -> ForceResult:
    """AB force minus each body's isolated (artifact) force on the same surface."""
    keys = ("dx", "shape", "rule", "n", "scale")
    for r in (result_a, result_b):
        for k in keys:
            if r.meta.get(k) != result_ab.meta.get(k):
                raise ConfigError(f"subtract_isolated: mismatched {k}: "
                                  f"{r.meta.get(k)!r} vs {result_ab.meta.get(k)!r}")
        if len(r.samples) != len(result_ab.samples):
            raise ConfigError("subtract_isolated: mismatched sample counts")
    samples = [(s[0], s[1] - a[1] - b[1], s[2] - a[2] - b[2], s[3])
               for s, a, b in zip(result_ab.samples, result_a.samples, result_b.samples)]
    force = np.array([sum(s[3] * s[1] for s in samples), sum(s[3] * s[2] for s in samples)])
    meta = dict(result_ab.meta)
    meta["corrections"] = list(result_ab.meta.get("corrections", [])) + ["isolated-body subtraction"]
    return ForceResult(force, samples, meta)


# ---------------------------------------------------------------------------
# cylinder-pair convenience
# ---------------------------------------------------------------------------

def cylinder_grid(R1: float, R2: float, d: float, dx: float, which=(True, True),
                  margin: float = 1.0, stretch: Stretch | None = Stretch()) -> FdGrid:
    """Grid for two Dirichlet cylinders centred at x = -d/2 and x = +d/2.

    The uniform core spans the bodies plus ``margin`` on every side and is
    symmetric about x = 0 and y = 0.  A node is pinned when its distance to a
    centre is <= R.
    """
    if not d > R1 + R2:
        raise ConfigError("cylinders overlap (need d > R1 + R2)")
    half_x = d / 2 + max(R1, R2) + margin
    half_y = max(R1, R2) + margin
    nx = int(math.ceil(half_x / dx))
    ny = int(math.ceil(half_y / dx))
    shape = (2 * nx + 1, 2 * ny + 1)
    origin = (-nx * dx, -ny * dx)
    x = origin[0] + dx * np.arange(shape[0])
    y = origin[1] + dx * np.arange(shape[1])
    X, Y = np.meshgrid(x, y, indexing="ij")
    mask = np.zeros(shape, dtype=int)
    if which[0]:
        mask[(X + d / 2) ** 2 + Y**2 <= R1**2 * (1 + 1e-12)] = 1
    if which[1]:
        mask[(X - d / 2) ** 2 + Y**2 <= R2**2 * (1 + 1e-12)] = 2
    return FdGrid(dx, shape, origin, [mat.vacuum()], None, mask, "dirichlet", stretch)


def cylinder_surface(grid: FdGrid, R1: float, R2: float, d: float, body: int = 2,
                     pad: float = 0.5) -> StressSurface:
    """Rectangle around one cylinder: from the mid-plane x = 0 to ``pad`` beyond the body."""
    if body == 2:
        return StressSurface.around(grid, 0.0, d / 2 + R2 + pad, -R2 - pad, R2 + pad)
    return StressSurface.around(grid, -d / 2 - R1 - pad, 0.0, -R1 - pad, R1 + pad)


def cylinder_pair_force(R1: float, R2: float, d: float, dx: float, rule: FrequencyRule,
                        subtract: bool = True, vacuum_subtraction: bool = True,
                        body: int = 2, **kw) -> ForceResult:
    """Force on one cylinder of a Dirichlet pair from the stress tensor."""
    g_ab = cylinder_grid(R1, R2, d, dx, **kw)
    surf = cylinder_surface(g_ab, R1, R2, d, body)
    res = stress_force_2d(g_ab, surf, rule, vacuum_subtraction, label="AB")
    if not subtract:
        return res
    g_a = cylinder_grid(R1, R2, d, dx, which=(True, False), **kw)
    g_b = cylinder_grid(R1, R2, d, dx, which=(False, True), **kw)
    res_a = stress_force_2d(g_a, surf, rule, vacuum_subtraction, label="A")
    res_b = stress_force_2d(g_b, surf, rule, vacuum_subtraction, label="B")
    return subtract_isolated(res, res_a, res_b)


def cylinder_pair_force_extrapolated(R1, R2, d, dx, rule, p: float = 1.0, **kw):
    """Richardson over dx and dx/2 of the subtracted stress force (x component).

    Returns ``(value, error_estimate, [(dx, ForceResult), ...])``.
    """
    runs = [(h, cylinder_pair_force(R1, R2, d, h, rule, **kw)) for h in (dx, dx / 2)]
    val, err = richardson_extrapolate([(h, r.force[0]) for h, r in runs], p)
    return val, err, runs
