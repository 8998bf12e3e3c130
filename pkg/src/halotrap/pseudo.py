"""Ponderomotive pseudopotential, trap depth and secular frequencies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .constants import ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE
from .errors import SaddleNotFound, Unstable
from .field_solver import gradient
from .fitting import locate_trap_center

DEFAULT_SECULAR_WINDOW = 30e-6


@dataclass(frozen=True)
class IonSpecies:
    """Ion or charged particle; mass in u, charge in elementary charges."""

    mass: float
    charge: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be > 0, got {self.mass}")
        if self.charge == 0 or not math.isfinite(self.charge):
            raise ValueError("charge must be non-zero and finite")

    @classmethod
    def from_si(cls, mass_kg, charge_c, name=""):
        return cls(mass_kg / ATOMIC_MASS_UNIT, charge_c / ELEMENTARY_CHARGE, name)

    @property
    def mass_kg(self):
        return self.mass * ATOMIC_MASS_UNIT

    @property
    def charge_c(self):
        return self.charge * ELEMENTARY_CHARGE


MG24 = IonSpecies(23.985041697, 1.0, "24Mg+")
CA40 = IonSpecies(39.962590863, 1.0, "40Ca+")
YB171 = IonSpecies(170.936325, 1.0, "171Yb+")


@dataclass(frozen=True)
class DriveSettings:
    V0: float
    omega_T: float

    def __post_init__(self):
        if not self.V0 > 0:
            raise ValueError("V0 must be > 0")
        if not self.omega_T > 0:
            raise ValueError("omega_T must be > 0")

    @classmethod
    def from_frequency(cls, V0, freq_hz):
        return cls(V0, 2 * math.pi * freq_hz)


@dataclass(frozen=True, eq=False)
class PseudoMap:
    """psi in eV on the solver grid (NaN where the stencil touches a conductor)."""

    grid: object
    psi: np.ndarray
    node: tuple
    saddle: tuple
    depth: float
    prefactor: float
    rf_field: object
    species: IonSpecies
    drive: DriveSettings

    def psi_at(self, r, z):
        """psi [eV] at arbitrary points from the interpolated field gradient."""
        d_r, d_z = gradient(self.rf_field, (r, z))
        return self.prefactor * (d_r * d_r + d_z * d_z)

    def summary(self):
        return {"node_r_m": self.node[0], "saddle_r_m": self.saddle[0], "depth_eV": self.depth}

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True)


def psi_prefactor(species, drive):
    """q^2 V0^2 / (4 m Omega^2), expressed so that psi comes out in eV."""
    q = species.charge_c
    return q * q * drive.V0**2 / (4.0 * species.mass_kg * drive.omega_T**2) / ELEMENTARY_CHARGE


def _psi_grid(rf_field, prefactor):
    """psi on nodes from central differences; nodes whose stencil reaches a
    conductor or the box edge are NaN.  On the axis dV/dr = 0 by symmetry."""
    v = rf_field.values
    h = rf_field.grid.h
    d_r = np.full(v.shape, np.nan)
    d_z = np.full(v.shape, np.nan)
    d_r[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    d_z[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    if rf_field.grid.r_min == 0:
        d_r[0] = 0.0
    psi = prefactor * (d_r**2 + d_z**2)
    c = rf_field.conductor
    if c is not None:
        touched = c.copy()
        touched[1:-1] |= c[2:] | c[:-2]
        touched[:, 1:-1] |= c[:, 2:] | c[:, :-2]
        psi[touched] = np.nan
    return psi


def pseudopotential(rf_field, species, drive, node_r=None):
    """Pseudopotential of a unit-voltage RF solution driven at ``drive``.

    The node is the RF null on z = 0; the escape saddle is the highest psi
    along z = 0 outward from the node.
    """
    pref = psi_prefactor(species, drive)
    psi = _psi_grid(rf_field, pref)
    g = rf_field.grid
    R = locate_trap_center(rf_field) if node_r is None else node_r
    j0 = g.index_of_z(0.0)
    row = psi[:, j0]
    r = g.r
    outward = np.nonzero((r > R) & np.isfinite(row))[0]
    if len(outward) < 3:
        raise SaddleNotFound("no usable nodes outward of the RF node")
    k = outward[np.nanargmax(row[outward])]
    if k == outward[-1] or k == outward[0] or not (np.isfinite(row[k - 1]) and np.isfinite(row[k + 1])):
        raise SaddleNotFound("psi is monotone along the escape path")
    y0, y1, y2 = row[k - 1], row[k], row[k + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
    r_s = float(r[k] + np.clip(shift, -1.0, 1.0) * g.h)
    psi_saddle = float(y1 - 0.25 * (y0 - y2) * shift)
    d_r, d_z = gradient(rf_field, (R, 0.0))
    psi_node = pref * (d_r * d_r + d_z * d_z)
    return PseudoMap(
        grid=g,
        psi=psi,
        node=(R, 0.0),
        saddle=(r_s, 0.0),
        depth=psi_saddle - psi_node,
        prefactor=pref,
        rf_field=rf_field,
        species=species,
        drive=drive,
    )


def _curvature(offsets, energy):
    coeffs = np.polyfit(offsets, energy, 2)
    return 2.0 * coeffs[0]


def secular_curvatures(pseudo, static_field=None, static_scale=0.0, species=None, window=DEFAULT_SECULAR_WINDOW):
    """Secular angular frequencies (omega_s, omega_z) and alpha = omega_z^2/omega_s^2.

    Total potential energy psi + q * static_scale * U is sampled on grid
    lines through the node and fitted with a parabola over +-window.
    """
    species = pseudo.species if species is None else species
    g = pseudo.grid
    R = pseudo.node[0]
    h = g.h
    n = max(int(window / h), 2)
    offsets = h * np.arange(-n, n + 1)
    # radial cut: nodes of the z = 0 row, so static values need no interpolation
    i_lo = int(np.ceil((R - window - g.r_min) / h))
    r_nodes = g.r_min + h * np.arange(i_lo, i_lo + 2 * n + 1)
    s_off = r_nodes - R
    z_nodes = offsets

    q_over_e = species.charge
    rescale = psi_prefactor(species, pseudo.drive) / pseudo.prefactor
    e_s = rescale * np.array([pseudo.psi_at(rv, 0.0) for rv in r_nodes])
    e_z = rescale * np.array([pseudo.psi_at(R, zv) for zv in z_nodes])
    if static_field is not None and static_scale:
        j0 = g.index_of_z(0.0)
        u_row = static_field.values[i_lo:i_lo + 2 * n + 1, j0]
        j_lo = j0 - n
        i = int(np.floor((R - g.r_min) / h))
        t = (R - g.r_min) / h - i
        cols = static_field.values[i:i + 2, j_lo:j_lo + 2 * n + 1]
        u_col = (1 - t) * cols[0] + t * cols[1]
        e_s = e_s + q_over_e * static_scale * u_row
        e_z = e_z + q_over_e * static_scale * u_col
    # energies are in eV; convert curvature to J/m^2
    k_s = _curvature(s_off, e_s) * ELEMENTARY_CHARGE
    k_z = _curvature(z_nodes, e_z) * ELEMENTARY_CHARGE
    if k_s <= 0 or k_z <= 0:
        raise Unstable(f"non-positive curvature (k_s={k_s:.3e}, k_z={k_z:.3e} J/m^2)")
    m = species.mass_kg
    omega_s = math.sqrt(k_s / m)
    omega_z = math.sqrt(k_z / m)
    return omega_s, omega_z, (omega_z / omega_s) ** 2
