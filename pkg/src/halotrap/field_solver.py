"""Axisymmetric Laplace solver on a uniform (r, z) grid.

The discretization is the conservative finite-volume form of
``(1/r) d/dr (r dV/dr) + d2V/dz2 = 0``: radial fluxes are weighted by the
face radius r_(i+1/2), axial fluxes by r_i, and the on-axis cell (a disc of
radius h/2) gives the usual ``4 (V_1 - V_0) / h^2`` axis stencil.  Written
this way the operator is symmetric, which lets one sparse LU factorization
serve every electrode configuration on a given geometry.

Conductor nodes are rasterized (staircase) and held at their electrode
voltage.  The outer box is either insulating (no normal field) or grounded.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridMismatch, NoConvergence, OutOfDomain
from .geometry import rasterize

DEFAULT_SPACING = 5e-6
DEFAULT_TOL = 1e-6
BINARY_MAGIC = b"HALOF1"


@dataclass(frozen=True)
class GridSpec:
    r_min: float
    r_max: float
    z_min: float
    z_max: float
    n_r: int
    n_z: int

    def __post_init__(self):
        if self.r_min < 0:
            raise ValueError("r_min must be >= 0")
        if self.n_r < 16 or self.n_z < 16:
            raise ValueError(f"grid needs at least 16 nodes per axis, got {self.n_r}x{self.n_z}")
        h_r = (self.r_max - self.r_min) / (self.n_r - 1)
        h_z = (self.z_max - self.z_min) / (self.n_z - 1)
        if not math.isclose(h_r, h_z, rel_tol=1e-9):
            raise ValueError(f"grid spacing must be uniform, got h_r={h_r:.6e} h_z={h_z:.6e}")

    @classmethod
    def from_spacing(cls, r_min, r_max, z_min, z_max, h):
        n_r = int(round((r_max - r_min) / h)) + 1
        n_z = int(round((z_max - z_min) / h)) + 1
        return cls(r_min, r_min + (n_r - 1) * h, z_min, z_min + (n_z - 1) * h, n_r, n_z)

    @classmethod
    def for_domain(cls, domain, h=DEFAULT_SPACING):
        """Grid over 0..r_max, -z_max..z_max with a node row on z = 0."""
        half = int(math.ceil(domain.z_max / h - 1e-9))
        n_r = int(math.ceil(domain.r_max / h - 1e-9)) + 1
        return cls(0.0, (n_r - 1) * h, -half * h, half * h, n_r, 2 * half + 1)

    @property
    def h(self):
        return (self.r_max - self.r_min) / (self.n_r - 1)

    @property
    def r(self):
        return self.r_min + self.h * np.arange(self.n_r)

    @property
    def z(self):
        return self.z_min + self.h * np.arange(self.n_z)

    @property
    def shape(self):
        return (self.n_r, self.n_z)

    def index_of_z(self, z):
        j = int(round((z - self.z_min) / self.h))
        if not 0 <= j < self.n_z or abs(self.z_min + j * self.h - z) > 1e-9 * self.h:
            raise OutOfDomain(f"z={z!r} is not a grid row")
        return j

    def same_as(self, other):
        a = np.array([self.r_min, self.r_max, self.z_min, self.z_max])
        b = np.array([other.r_min, other.r_max, other.z_min, other.z_max])
        return (self.n_r, self.n_z) == (other.n_r, other.n_z) and np.allclose(a, b, rtol=0, atol=1e-9 * self.h)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Potential sampled on a GridSpec; ``values`` has shape (n_r, n_z)."""

    grid: GridSpec
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    conductor: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.conductor is not None:
            mask = np.array(self.conductor, dtype=bool)
            mask.setflags(write=False)
            object.__setattr__(self, "conductor", mask)

    @cached_property
    def gradient_arrays(self):
        d_r, d_z = np.gradient(self.values, self.grid.h, self.grid.h, edge_order=2)
        d_r.setflags(write=False)
        d_z.setflags(write=False)
        return d_r, d_z

    def interpolate(self, r, z):
        return bilinear(self.grid, self.values, r, z)

    def scaled(self, factor):
        return ScalarField(self.grid, factor * self.values, dict(self.metadata), self.conductor)


def _check_inside(grid, r, z):
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any((r < grid.r_min) | (r > grid.r_max) | (z < grid.z_min) | (z > grid.z_max)):
        raise OutOfDomain("point lies outside the grid")
    return r, z


def bilinear(grid, array, r, z):
    """Bilinear interpolation of a node array at (r, z) (scalars or arrays)."""
    r, z = _check_inside(grid, r, z)
    h = grid.h
    fr = (r - grid.r_min) / h
    fz = (z - grid.z_min) / h
    i = np.clip(np.floor(fr).astype(int), 0, grid.n_r - 2)
    j = np.clip(np.floor(fz).astype(int), 0, grid.n_z - 2)
    tr = fr - i
    tz = fz - j
    out = (
        array[i, j] * (1 - tr) * (1 - tz)
        + array[i + 1, j] * tr * (1 - tz)
        + array[i, j + 1] * (1 - tr) * tz
        + array[i + 1, j + 1] * tr * tz
    )
    return out if out.ndim else float(out)


def gradient(field_, point):
    """(dV/dr, dV/dz) at ``point`` in V/m.

    Central differences on the nodes, bilinearly interpolated; exact for
    fields that are bilinear in (r, z) and second order otherwise.
    """
    r, z = point
    g = field_.grid
    if not (g.r_min < r < g.r_max and g.z_min < z < g.z_max):
        raise OutOfDomain(f"point ({r!r}, {z!r}) is not strictly inside the grid")
    d_r, d_z = field_.gradient_arrays
    return bilinear(g, d_r, r, z), bilinear(g, d_z, r, z)


class LaplaceProblem:
    """Rasterized geometry plus assembled operator for one boundary.

    Build once per geometry; ``solve`` may then be called for any number of
    voltage sets (the sparse factorization is cached).
    """

    def __init__(self, boundary, grid=None, h=DEFAULT_SPACING):
        self.boundary = boundary
        self.grid = GridSpec.for_domain(boundary.domain, h) if grid is None else grid
        g = self.grid
        if g.r_min != 0:
            raise ValueError("solver grids must start on the axis (r_min = 0)")
        r, z = g.r, g.z
        self.labels = tuple(boundary.polygons)
        label_index = np.zeros(g.shape, dtype=np.int16)
        for k, label in enumerate(self.labels, start=1):
            mask = rasterize(boundary.polygons[label], r, z, tol=1e-6 * g.h)
            label_index[mask & (label_index == 0)] = k
        self.label_index = label_index
        self.conductor = label_index > 0

        fixed = self.conductor.copy()
        if boundary.far_field_bc == "grounded":
            box = np.zeros(g.shape, dtype=bool)
            box[-1, :] = True
            box[:, 0] = True
            box[:, -1] = True
            fixed |= box
        self.fixed = fixed
        self._assemble()
        self._lu = None

    def _assemble(self):
        g = self.grid
        h = g.h
        n_r, n_z = g.shape
        idx = np.arange(n_r * n_z).reshape(n_r, n_z)
        r = g.r

        # half cells on the z edges carry half the radial flux area
        z_area = np.ones(n_z)
        z_area[0] = z_area[-1] = 0.5
        w_r = (r[:-1] + 0.5 * h)[:, None] * z_area[None, :]
        r_node = r.copy()
        r_node[0] = h / 8.0
        r_node[-1] = 0.5 * (r[-1] - 0.25 * h)  # outer half cell
        w_z = np.repeat(r_node[:, None], n_z - 1, axis=1)
        rows = np.concatenate([idx[:-1].ravel(), idx[:, :-1].ravel()])
        cols = np.concatenate([idx[1:].ravel(), idx[:, 1:].ravel()])
        vals = np.concatenate([w_r.ravel(), w_z.ravel()])
        n = n_r * n_z
        adj = sp.coo_matrix(
            (np.concatenate([vals, vals]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(n, n),
        ).tocsr()
        diag = np.asarray(adj.sum(axis=1)).ravel()
        self._diag = diag
        self._operator = (sp.diags(diag) - adj).tocsr()

        free = ~self.fixed.ravel()
        self._free = free
        op_free = self._operator[free]
        self._a_ff = op_free[:, free].tocsc()
        self._a_fc = op_free[:, ~free].tocsr()

    def fixed_values(self, voltages):
        """Node voltages on fixed nodes for a {label: V} map (missing -> 0)."""
        volts = self.boundary.group_voltages(voltages)
        table = np.zeros(len(self.labels) + 1)
        for k, label in enumerate(self.labels, start=1):
            table[k] = volts.get(label, 0.0)
        return table[self.label_index]

    def residual(self, values):
        """Max-norm of the normalized discrete Laplacian on free nodes."""
        res = (self._operator @ values.ravel()) / self._diag
        return float(np.max(np.abs(res[self._free]))) if self._free.any() else 0.0

    def _direct(self, rhs):
        if self._lu is None:
            self._lu = spla.splu(self._a_ff, permc_spec="MMD_AT_PLUS_A")
        return self._lu.solve(rhs)

    def _sor(self, rhs, x0, tol_abs, max_iter, omega):
        g = self.grid
        ii, jj = np.nonzero(~self.fixed)
        red = ((ii + jj) % 2 == 0)
        black = ~red
        a = self._a_ff
        d = a.diagonal()
        a_rb = a[red][:, black].tocsr()
        a_br = a[black][:, red].tocsr()
        x = x0.copy()
        if omega is None:
            n_eff = 2 * max(g.n_r, g.n_z)
            rho = math.cos(math.pi / n_eff)
            omega = 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))
        b_r, b_b, d_r, d_b = rhs[red], rhs[black], d[red], d[black]
        x_r, x_b = x[red], x[black]
        res = np.inf
        for it in range(1, max_iter + 1):
            x_r += omega * ((b_r - a_rb @ x_b) / d_r - x_r)
            x_b += omega * ((b_b - a_br @ x_r) / d_b - x_b)
            if it % 10 == 0:
                res = max(
                    np.max(np.abs((b_r - a_rb @ x_b) / d_r - x_r), initial=0.0),
                    np.max(np.abs((b_b - a_br @ x_r) / d_b - x_b), initial=0.0),
                )
                if res <= tol_abs:
                    x[red], x[black] = x_r, x_b
                    return x, it
        raise NoConvergence(max_iter, res)

    def solve(self, voltages, tol=DEFAULT_TOL, method="direct", max_iter=200_000, omega=None):
        if tol <= 0:
            raise ValueError("tol must be > 0")
        fixed_vals = self.fixed_values(voltages)
        vmax = max(abs(v) for v in self.boundary.group_voltages(voltages).values()) if voltages else 0.0
        values = fixed_vals.ravel().copy()
        rhs = -(self._a_fc @ values[~self._free])
        if method == "direct":
            x = self._direct(rhs)
            iterations = 1
        elif method == "sor":
            x, iterations = self._sor(rhs, np.zeros_like(rhs), tol * max(vmax, 1e-300), max_iter, omega)
        else:
            raise ValueError(f"unknown method {method!r}")
        values[self._free] = x
        values = values.reshape(self.grid.shape)
        res = self.residual(values)
        if vmax > 0 and res > tol * vmax:
            raise NoConvergence(iterations, res)
        meta = {
            "voltages": dict(sorted(self.boundary.group_voltages(voltages).items())),
            "residual": res,
            "method": method,
            "iterations": iterations,
            "far_field_bc": self.boundary.far_field_bc,
        }
        if self.boundary_window is not None:
            meta["trap_window"] = self.boundary_window
        return ScalarField(self.grid, values, meta, self.conductor)

    @property
    def boundary_window(self):
        return self.boundary.trap_window

    def basis(self, groups=None, tol=DEFAULT_TOL, method="direct"):
        groups = self.boundary.groups if groups is None else groups
        fields = {}
        for name, members in groups.items():
            members = (members,) if isinstance(members, str) else members
            fields[name] = self.solve({m: 1.0 for m in members}, tol=tol, method=method)
        return BasisFields(fields)


@dataclass(frozen=True)
class BasisFields:
    """Unit-voltage solutions, one per electrode group, others grounded."""

    fields: dict

    def __post_init__(self):
        grids = [f.grid for f in self.fields.values()]
        if grids and not all(grids[0].same_as(g) for g in grids[1:]):
            raise GridMismatch("basis fields must share one grid")

    @property
    def grid(self):
        return next(iter(self.fields.values())).grid

    def __getitem__(self, name):
        return self.fields[name]

    def __iter__(self):
        return iter(self.fields)


def solve(boundary, voltages, grid=None, tol=DEFAULT_TOL, method="direct", h=DEFAULT_SPACING):
    return LaplaceProblem(boundary, grid, h=h).solve(voltages, tol=tol, method=method)


def solve_basis(boundary, grid=None, tol=DEFAULT_TOL, groups=None, method="direct", h=DEFAULT_SPACING):
    return LaplaceProblem(boundary, grid, h=h).basis(groups, tol=tol, method=method)


def superpose(basis, coeffs):
    """Pointwise linear combination of basis fields."""
    unknown = set(coeffs) - set(basis.fields)
    if unknown:
        raise KeyError(f"no basis field for {sorted(unknown)}")
    first = next(iter(basis.fields.values()))
    values = np.zeros(first.grid.shape)
    for name, field_ in basis.fields.items():
        if not field_.grid.same_as(first.grid):
            raise GridMismatch(f"basis field {name!r} lives on a different grid")
        c = float(coeffs.get(name, 0.0))
        if c:
            values += c * field_.values
    meta = {"coefficients": {k: float(v) for k, v in sorted(coeffs.items())}}
    if "trap_window" in first.metadata:
        meta["trap_window"] = first.metadata["trap_window"]
    return ScalarField(first.grid, values, meta, first.conductor)


# -- dumps -------------------------------------------------------------------

def write_field_csv(path, field_, value_name="potential_V", values=None):
    """CSV ``r_m,z_m,<value_name>``, rows ordered with z varying fastest."""
    g = field_.grid if isinstance(field_, ScalarField) else field_
    arr = field_.values if values is None else values
    rr, zz = np.meshgrid(g.r, g.z, indexing="ij")
    table = np.column_stack([rr.ravel(), zz.ravel(), np.asarray(arr).ravel()])
    with open(path, "w", newline="") as fh:
        fh.write(f"r_m,z_m,{value_name}\n")
        np.savetxt(fh, table, delimiter=",", fmt="%.17g")


def read_field_csv(path):
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    r = np.unique(data[:, 0])
    z = np.unique(data[:, 1])
    grid = GridSpec(r[0], r[-1], z[0], z[-1], len(r), len(z))
    return ScalarField(grid, data[:, 2].reshape(len(r), len(z)), {"column": header[2]})


def write_field_binary(path, field_, values=None):
    """``HALOF1`` + 7 little-endian float64 (r_min, r_max, z_min, z_max,
    n_r, n_z, h) + n_r*n_z float64 values, z fastest."""
    g = field_.grid if isinstance(field_, ScalarField) else field_
    arr = field_.values if values is None else values
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<7d", g.r_min, g.r_max, g.z_min, g.z_max, g.n_r, g.n_z, g.h))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_field_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != BINARY_MAGIC:
        raise ValueError("not a HALOF1 field dump")
    r_min, r_max, z_min, z_max, n_r, n_z, _ = struct.unpack_from("<7d", blob, 6)
    n_r, n_z = int(n_r), int(n_z)
    values = np.frombuffer(blob, dtype="<f8", offset=6 + 56, count=n_r * n_z).reshape(n_r, n_z)
    grid = GridSpec(r_min, r_max, z_min, z_max, n_r, n_z)
    return grid, values.copy()
