"""Trap-center location and ideal-quadrupole fits.

RF model (rotated hyperbola, V0 the RF reference voltage)::

    V_rf(s, z) = -2 V0 s z / ell_rf**2,        s = r - R

static model (unit effective potential U_eff = 1 V, plus a free offset)::

    U(s, z) = U_eff (s**2 - z**2) / ell_static**2 + c

Both are linear least squares in 1/ell**2 over the grid nodes inside a disc
centered on (R, 0); the mismatch metric is the midpoint Riemann sum of the
squared residual times the cell area.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, EmptyRegion, NoNodeFound
from .field_solver import gradient

DEFAULT_REGION_RADIUS = 50e-6


@dataclass(frozen=True)
class FitRegion:
    center_r: float
    radius: float = DEFAULT_REGION_RADIUS
    center_z: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("fit region radius must be > 0")

    def mask(self, grid):
        rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
        return (rr - self.center_r) ** 2 + (zz - self.center_z) ** 2 <= self.radius**2

    def validate(self, field):
        g = field.grid
        r0, z0, a = self.center_r, self.center_z, self.radius
        if not (g.r_min < r0 - a and r0 + a < g.r_max and g.z_min < z0 - a and z0 + a < g.z_max):
            raise ValueError("fit region must lie strictly inside the grid")
        if field.conductor is not None and np.any(field.conductor & self.mask(g)):
            raise ValueError("fit region touches a conductor")


@dataclass(frozen=True)
class QuadrupoleFit:
    model: str
    ell: float
    chi2: float
    region: FitRegion
    reference_voltage: float = 1.0
    orientation: int = 1
    offset: float = 0.0

    def to_dict(self):
        return {
            "model": self.model,
            "ell_m": self.ell,
            "chi2_V2m2": self.chi2,
            "center_r_m": self.region.center_r,
            "region_radius_m": self.region.radius,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def predict(self, r, z):
        s = np.asarray(r) - self.region.center_r
        z = np.asarray(z) - self.region.center_z
        k = self.orientation * self.reference_voltage / self.ell**2
        if self.model == "rf":
            return -2.0 * k * s * z
        return k * (s**2 - z**2) + self.offset


def _region_samples(field, region):
    mask = region.mask(field.grid)
    if not mask.any():
        raise EmptyRegion("no grid node lies inside the fit region")
    rr, zz = np.meshgrid(field.grid.r, field.grid.z, indexing="ij")
    return rr[mask] - region.center_r, zz[mask] - region.center_z, field.values[mask]


def chi2(field, model_prediction, region):
    """Sum of (model - field)^2 dA over nodes inside the disc [V^2 m^2]."""
    mask = region.mask(field.grid)
    if not mask.any():
        raise EmptyRegion("no grid node lies inside the fit region")
    rr, zz = np.meshgrid(field.grid.r, field.grid.z, indexing="ij")
    resid = np.asarray(model_prediction(rr[mask] - region.center_r, zz[mask] - region.center_z)) - field.values[mask]
    return float(np.sum(resid**2) * field.grid.h**2)


def fit_rf(field, region, reference_voltage=1.0, validate=True):
    if validate:
        region.validate(field)
    s, z, v = _region_samples(field, region)
    basis = -2.0 * reference_voltage * s * z
    norm = basis @ basis
    if norm == 0:
        raise DegenerateFit("region has no s*z extent")
    coef = (basis @ v) / norm
    if coef == 0 or abs(coef) * math.sqrt(norm) <= 1e-12 * max(np.linalg.norm(v), 1e-300):
        raise DegenerateFit("field has no s*z component over the region")
    resid = coef * basis - v
    return QuadrupoleFit(
        model="rf",
        ell=abs(coef) ** -0.5,
        chi2=float(resid @ resid * field.grid.h**2),
        region=region,
        reference_voltage=reference_voltage,
        orientation=1 if coef > 0 else -1,
    )


def fit_static(field, region, effective_voltage=1.0, validate=True):
    if validate:
        region.validate(field)
    s, z, u = _region_samples(field, region)
    design = np.column_stack([s**2 - z**2, np.ones_like(s)])
    (curv, offset), *_ = np.linalg.lstsq(design, u, rcond=None)
    if not np.any(design[:, 0]) or curv == 0:
        raise DegenerateFit("field has no s^2 - z^2 component over the region")
    centered = u - offset
    if abs(curv) * np.linalg.norm(design[:, 0]) <= 1e-12 * max(np.linalg.norm(centered), 1e-300):
        raise DegenerateFit("field has no s^2 - z^2 component over the region")
    resid = design @ np.array([curv, offset]) - u
    return QuadrupoleFit(
        model="static",
        ell=math.sqrt(effective_voltage / abs(curv)),
        chi2=float(resid @ resid * field.grid.h**2),
        region=region,
        reference_voltage=effective_voltage,
        orientation=1 if curv > 0 else -1,
        offset=float(offset),
    )


def locate_trap_center(rf_field, r_bounds=None):
    """Radius of the RF node on z = 0.

    Minimizes |grad V|^2 over the z = 0 grid row inside ``r_bounds`` (by
    default the needle-to-tube window recorded by the solver), then refines
    with a parabola through the three nodes around the minimum.
    """
    g = rf_field.grid
    j0 = g.index_of_z(0.0)
    if r_bounds is None:
        r_bounds = rf_field.metadata.get("trap_window", (g.r_min, g.r_max))
    lo, hi = r_bounds
    d_r, d_z = rf_field.gradient_arrays
    g2 = d_r[:, j0] ** 2 + d_z[:, j0] ** 2
    r = g.r
    usable = (r > lo) & (r < hi)
    if rf_field.conductor is not None:
        usable &= ~rf_field.conductor[:, j0]
    idx = np.nonzero(usable)[0]
    if len(idx) < 3:
        raise NoNodeFound("search window holds fewer than three nodes")
    k = idx[np.argmin(g2[idx])]
    if k in (idx[0], idx[-1]) or k - 1 not in idx or k + 1 not in idx:
        raise NoNodeFound("|grad V|^2 has no interior minimum between the electrodes")
    y0, y1, y2 = g2[k - 1], g2[k], g2[k + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom > 0 else 0.0
    center = float(r[k] + np.clip(shift, -1.0, 1.0) * g.h)

    at_node = math.hypot(*gradient(rf_field, (center, 0.0)))
    ref = []
    for edge in (max(lo, g.r_min + g.h), min(hi, g.r_max - g.h)):
        mid = 0.5 * (center + edge)
        ref.append(math.hypot(*gradient(rf_field, (mid, 0.0))))
    if at_node > 0.01 * min(ref):
        raise NoNodeFound(f"|grad V| at r={center:.4e} is not a node ({at_node:.3e} V/m)")
    return center
