"""Halo trap electrode cross-section.

The trap is three concentric conductors, mirrored about z = 0: a solid
needle (radius ``needle_outer_radius``) with a conical tip, a control tube
and an outer tube.  Everything here lives in the (r, z) half plane; the
solver revolves it about the z axis.

Four dimensionless design parameters fix the axial spacings relative to the
tube midline radius R_t::

    aspect         A_h = (z_n + z_t) / R_t
    keystone       K_h = z_t / z_n
    control_offset V_h = (z_c - z_t) / z_n

plus the needle tip angle, measured from the z = const plane (0 deg is a
flat end cap; the apex of the cone sits on the axis at z_n).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainTooSmall, NonPositiveSpacing

DEFAULT_NEEDLE_RADIUS = 255e-6
DEFAULT_RATIOS = (1.0, 1.63, 2.16, 2.65, 3.24)
DEFAULT_SETBACK = 500e-6
DEFAULT_FAR_FIELD_FACTOR = 5.0

ELECTRODE_LABELS = (
    "needle_top",
    "needle_bottom",
    "control_top",
    "control_bottom",
    "tube_top",
    "tube_bottom",
)
FAR_FIELD = "far_field"
GROUPS = {
    "needle": ("needle_top", "needle_bottom"),
    "control": ("control_top", "control_bottom"),
    "tube": ("tube_top", "tube_bottom"),
}


@dataclass(frozen=True)
class ElectrodeRadii:
    """Fixed conductor radii in meters (stock tube and wire sizes)."""

    needle_outer_radius: float = DEFAULT_NEEDLE_RADIUS * DEFAULT_RATIOS[0]
    control_inner_radius: float = DEFAULT_NEEDLE_RADIUS * DEFAULT_RATIOS[1]
    control_outer_radius: float = DEFAULT_NEEDLE_RADIUS * DEFAULT_RATIOS[2]
    tube_inner_radius: float = DEFAULT_NEEDLE_RADIUS * DEFAULT_RATIOS[3]
    tube_outer_radius: float = DEFAULT_NEEDLE_RADIUS * DEFAULT_RATIOS[4]

    def __post_init__(self):
        seq = self.as_tuple()
        if seq[0] <= 0 or any(b <= a for a, b in zip(seq, seq[1:])):
            raise ValueError(f"electrode radii must be positive and strictly increasing, got {seq}")

    @classmethod
    def from_needle_radius(cls, needle_radius=DEFAULT_NEEDLE_RADIUS, ratios=DEFAULT_RATIOS):
        return cls(*(needle_radius * k for k in ratios))

    def as_tuple(self):
        return (
            self.needle_outer_radius,
            self.control_inner_radius,
            self.control_outer_radius,
            self.tube_inner_radius,
            self.tube_outer_radius,
        )

    @property
    def control_mid_radius(self):
        return 0.5 * (self.control_inner_radius + self.control_outer_radius)

    @property
    def tube_mid_radius(self):
        return 0.5 * (self.tube_inner_radius + self.tube_outer_radius)

    def scaled(self, factor):
        return ElectrodeRadii(*(factor * v for v in self.as_tuple()))


@dataclass(frozen=True)
class DesignParams:
    aspect: float
    keystone: float
    control_offset: float
    needle_angle_deg: float

    def __post_init__(self):
        if not self.aspect > 0:
            raise ValueError(f"aspect A_h must be > 0, got {self.aspect}")
        if not self.keystone > 0:
            raise ValueError(f"keystone K_h must be > 0, got {self.keystone}")
        if not 0 <= self.needle_angle_deg < 90:
            raise ValueError(f"needle angle must lie in [0, 90) degrees, got {self.needle_angle_deg}")
        if not math.isfinite(self.control_offset):
            raise ValueError("control offset V_h must be finite")

    def as_array(self):
        return np.array([self.aspect, self.keystone, self.control_offset, self.needle_angle_deg])

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))


TABLE1_PARAMS = DesignParams(aspect=0.676, keystone=1.68, control_offset=2.06, needle_angle_deg=16.7)


@dataclass(frozen=True)
class TrapGeometry:
    """Full cross-section: radii plus the three half gaps (meters)."""

    radii: ElectrodeRadii
    z_needle: float
    z_control: float
    z_tube: float
    needle_angle_deg: float
    insulator_setback: float = DEFAULT_SETBACK

    def __post_init__(self):
        for name in ("z_needle", "z_control", "z_tube"):
            if not getattr(self, name) > 0:
                raise NonPositiveSpacing(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0 <= self.needle_angle_deg < 90:
            raise ValueError(f"needle angle must lie in [0, 90) degrees, got {self.needle_angle_deg}")
        if not self.insulator_setback > 0:
            raise ValueError("insulator_setback must be > 0")

    @property
    def needle_edge_z(self):
        """Height of the needle's outer rim (the cone base)."""
        return self.z_needle + self.radii.needle_outer_radius * math.tan(math.radians(self.needle_angle_deg))

    @property
    def deepest_electrode_z(self):
        return max(self.needle_edge_z, self.z_control, self.z_tube)

    def scaled(self, factor):
        return TrapGeometry(
            radii=self.radii.scaled(factor),
            z_needle=factor * self.z_needle,
            z_control=factor * self.z_control,
            z_tube=factor * self.z_tube,
            needle_angle_deg=self.needle_angle_deg,
            insulator_setback=factor * self.insulator_setback,
        )

    def to_dict(self):
        return {
            "radii_m": {k: v for k, v in asdict(self.radii).items()},
            "z_needle_m": self.z_needle,
            "z_control_m": self.z_control,
            "z_tube_m": self.z_tube,
            "needle_angle_deg": self.needle_angle_deg,
            "insulator_setback_m": self.insulator_setback,
        }

    @classmethod
    def from_dict(cls, data):
        allowed = {"radii_m", "z_needle_m", "z_control_m", "z_tube_m", "needle_angle_deg", "insulator_setback_m"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
        radii = ElectrodeRadii(**data["radii_m"]) if "radii_m" in data else ElectrodeRadii()
        return cls(
            radii=radii,
            z_needle=float(data["z_needle_m"]),
            z_control=float(data["z_control_m"]),
            z_tube=float(data["z_tube_m"]),
            needle_angle_deg=float(data["needle_angle_deg"]),
            insulator_setback=float(data.get("insulator_setback_m", DEFAULT_SETBACK)),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def build_geometry(params, radii=None, insulator_setback=DEFAULT_SETBACK):
    """Invert the design-parameter definitions into physical spacings."""
    radii = ElectrodeRadii() if radii is None else radii
    r_t = radii.tube_mid_radius
    z_n = params.aspect * r_t / (1.0 + params.keystone)
    z_t = params.keystone * z_n
    z_c = z_t + params.control_offset * z_n
    if min(z_n, z_t, z_c) <= 0:
        raise NonPositiveSpacing(f"spacings z_n={z_n:.3e}, z_c={z_c:.3e}, z_t={z_t:.3e} must all be positive")
    return TrapGeometry(
        radii=radii,
        z_needle=z_n,
        z_control=z_c,
        z_tube=z_t,
        needle_angle_deg=params.needle_angle_deg,
        insulator_setback=insulator_setback,
    )


def design_params(geometry):
    r_t = geometry.radii.tube_mid_radius
    z_n, z_c, z_t = geometry.z_needle, geometry.z_control, geometry.z_tube
    return DesignParams(
        aspect=(z_n + z_t) / r_t,
        keystone=z_t / z_n,
        control_offset=(z_c - z_t) / z_n,
        needle_angle_deg=geometry.needle_angle_deg,
    )


@dataclass(frozen=True)
class Domain:
    """Solver rectangle 0 <= r <= r_max, -z_max <= z <= z_max."""

    r_max: float
    z_max: float

    def scaled(self, factor):
        return Domain(factor * self.r_max, factor * self.z_max)


def default_domain(geometry, far_field_factor=DEFAULT_FAR_FIELD_FACTOR, h=None):
    """Far-field box at ``far_field_factor`` tube radii; the slots between
    conductors end ``insulator_setback`` behind the deepest electrode end."""
    r_max = far_field_factor * geometry.radii.tube_outer_radius
    z_max = geometry.deepest_electrode_z + geometry.insulator_setback
    if h is not None:
        r_max = math.ceil(r_max / h - 1e-9) * h
        z_max = math.ceil(z_max / h - 1e-9) * h
    return Domain(r_max, z_max)


@dataclass(frozen=True)
class Segment:
    start: tuple
    end: tuple
    label: str

    def mirrored(self):
        swap = {"top": "bottom", "bottom": "top"}
        label = self.label
        if "_" in label and label != FAR_FIELD:
            base, side = label.rsplit("_", 1)
            label = f"{base}_{swap[side]}"
        (r0, z0), (r1, z1) = self.start, self.end
        return Segment((r0, -z0), (r1, -z1), label)


@dataclass(frozen=True)
class ElectrodeBoundary:
    """Labeled conductor outlines ready for rasterization.

    ``polygons`` maps each electrode label to a convex, counter-clockwise
    vertex array; ``segments`` lists the surfaces exposed to vacuum plus the
    outer box edges (``far_field``).  ``far_field_bc`` is ``"insulating"``
    (zero normal field) or ``"grounded"``.  ``trap_window`` brackets the
    radial interval where the RF node is searched for.
    """

    segments: tuple
    polygons: dict
    domain: Domain
    far_field_bc: str = "insulating"
    groups: dict = field(default_factory=lambda: dict(GROUPS))
    trap_window: tuple | None = None

    @property
    def labels(self):
        return tuple(self.polygons)

    def group_voltages(self, voltages):
        """Expand group names (``needle`` etc.) into per-electrode voltages."""
        out = {}
        for key, value in voltages.items():
            if key in self.polygons:
                out[key] = float(value)
            elif key in self.groups:
                for label in self.groups[key]:
                    out[label] = float(value)
            else:
                raise KeyError(f"unknown electrode or group {key!r}")
        return out


def _ccw(vertices):
    v = np.asarray(vertices, dtype=float)
    area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    return v if area > 0 else v[::-1].copy()


def boundary_segments(geometry, domain=None, far_field_bc="insulating"):
    """Discretize the cross-section into labeled segments and polygons.

    Conductors run from their trap-facing ends out to the domain edge; the
    needle tip is a cone meeting the axis at ``z_needle``.
    """
    if far_field_bc not in ("insulating", "grounded"):
        raise ValueError(f"far_field_bc must be 'insulating' or 'grounded', got {far_field_bc!r}")
    domain = default_domain(geometry) if domain is None else domain
    rad = geometry.radii
    r_n, r_ci, r_co, r_ti, r_to = rad.as_tuple()
    if domain.r_max < 3.0 * r_to:
        raise DomainTooSmall(
            f"r_max={domain.r_max:.3e} m must leave a margin of 2 tube radii beyond {r_to:.3e} m"
        )
    if domain.z_max <= geometry.deepest_electrode_z:
        raise DomainTooSmall(f"z_max={domain.z_max:.3e} m does not reach past the electrode ends")

    zm = domain.z_max
    z_edge = geometry.needle_edge_z
    z_n, z_c, z_t = geometry.z_needle, geometry.z_control, geometry.z_tube

    top = [
        Segment((0.0, z_n), (r_n, z_edge), "needle_top"),
        Segment((r_n, z_edge), (r_n, zm), "needle_top"),
        Segment((r_ci, zm), (r_ci, z_c), "control_top"),
        Segment((r_ci, z_c), (r_co, z_c), "control_top"),
        Segment((r_co, z_c), (r_co, zm), "control_top"),
        Segment((r_ti, zm), (r_ti, z_t), "tube_top"),
        Segment((r_ti, z_t), (r_to, z_t), "tube_top"),
        Segment((r_to, z_t), (r_to, zm), "tube_top"),
        Segment((r_n, zm), (r_ci, zm), FAR_FIELD),
        Segment((r_co, zm), (r_ti, zm), FAR_FIELD),
        Segment((r_to, zm), (domain.r_max, zm), FAR_FIELD),
    ]
    bottom = [s.mirrored() for s in top]
    side = [Segment((domain.r_max, -zm), (domain.r_max, zm), FAR_FIELD)]

    polygons = {
        "needle_top": [(0.0, z_n), (r_n, z_edge), (r_n, zm), (0.0, zm)],
        "control_top": [(r_ci, z_c), (r_co, z_c), (r_co, zm), (r_ci, zm)],
        "tube_top": [(r_ti, z_t), (r_to, z_t), (r_to, zm), (r_ti, zm)],
    }
    for name in list(polygons):
        mirrored = [(r, -z) for r, z in polygons[name]]
        polygons[name.replace("_top", "_bottom")] = mirrored
    polygons = {label: _ccw(polygons[label]) for label in ELECTRODE_LABELS}

    return ElectrodeBoundary(
        segments=tuple(top + bottom + side),
        polygons=polygons,
        domain=domain,
        far_field_bc=far_field_bc,
        trap_window=(r_n, r_ti),
    )


def rasterize(polygon, r, z, tol):
    """Boolean mask of grid nodes inside or on a convex CCW polygon."""
    rr, zz = np.meshgrid(r, z, indexing="ij")
    inside = np.ones(rr.shape, dtype=bool)
    v = np.asarray(polygon)
    for (r0, z0), (r1, z1) in zip(v, np.roll(v, -1, axis=0)):
        length = math.hypot(r1 - r0, z1 - z0)
        if length == 0:
            continue
        # signed distance to the edge line, positive inside
        dist = ((r1 - r0) * (zz - z0) - (z1 - z0) * (rr - r0)) / length
        inside &= dist >= -tol
    return inside
