"""Two-ion Coulomb crystal in a ring trap.

Lengths are in units of r_star = (k q^2 * 2 / (m w_r^2))^(1/3) and energies
in E_star = m w_r^2 r_star^2 / 2.  With ion 1 at (x, 0, z) and ion 2 at
(-x, 0, -z) the energy is

    H(x, z) = 1 / (2 sqrt(x^2 + z^2)) + 2 alpha z^2 + 2 (|x| - r0)^2

with alpha = w_z^2 / w_r^2 and r0 = R / r_star.  Stationary points:

* in plane, z = 0 and 8 x^3 - 8 r0 x^2 - 1 = 0 (independent of alpha);
* off plane (alpha < 1 only), x (1 - alpha) = r0 and x^2 + z^2 = (8 alpha)^(-2/3),
  which exists while r0 < |alpha - 1| / (2 alpha^(1/3)).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .constants import COULOMB_CONSTANT
from .errors import CoincidentIons, InvalidTrap, Singularity

IN_PLANE = "in_plane"
OFF_PLANE = "off_plane"


def r_star(species, omega_r):
    """Length scale where Coulomb repulsion balances the radial trap [m]."""
    if not omega_r > 0:
        raise ValueError("omega_r must be > 0")
    q = species.charge_c
    return (COULOMB_CONSTANT * q * q * 2.0 / (species.mass_kg * omega_r**2)) ** (1.0 / 3.0)


def e_star(species, omega_r):
    """Energy scale m w_r^2 r_star^2 / 2 [J]."""
    return 0.5 * species.mass_kg * omega_r**2 * r_star(species, omega_r) ** 2


@dataclass(frozen=True)
class ScaledTrap:
    alpha: float
    r0: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidTrap(f"alpha must be > 0, got {self.alpha}")
        if not self.r0 >= 0:
            raise InvalidTrap(f"r0 must be >= 0, got {self.r0}")

    @classmethod
    def from_physical(cls, species, omega_r, omega_z, radius):
        return cls(alpha=(omega_z / omega_r) ** 2, r0=radius / r_star(species, omega_r))


@dataclass(frozen=True)
class PhaseState:
    trap: ScaledTrap
    x: float
    z: float
    phase: str
    energy: float
    # whether the literal validity condition (r0 > boundary and alpha > 1)
    # agrees with the energy-selected phase
    literal_agrees: bool = True


def scaled_hamiltonian(x, z, trap):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    rho = np.hypot(x, z)
    if np.any(rho == 0):
        raise Singularity("ions coincide at the origin")
    out = 0.5 / rho + 2.0 * trap.alpha * z * z + 2.0 * (np.abs(x) - trap.r0) ** 2
    return out if out.ndim else float(out)


def hamiltonian_gradient(x, z, trap):
    rho3 = math.hypot(x, z) ** 3
    sx = math.copysign(1.0, x)
    g_x = -x / (2.0 * rho3) + 4.0 * (abs(x) - trap.r0) * sx
    g_z = z * (4.0 * trap.alpha - 1.0 / (2.0 * rho3))
    return np.array([g_x, g_z])


def hamiltonian_hessian(x, z, trap):
    rho2 = x * x + z * z
    rho = math.sqrt(rho2)
    rho5 = rho2 * rho2 * rho
    h_xx = (2 * x * x - z * z) / (2 * rho5) + 4.0
    h_zz = (2 * z * z - x * x) / (2 * rho5) + 4.0 * trap.alpha
    h_xz = 3 * x * z / (2 * rho5)
    return np.array([[h_xx, h_xz], [h_xz, h_zz]])


def phase_boundary(alpha):
    """Critical r0 = |alpha - 1| / (2 alpha^(1/3))."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be > 0")
    out = np.abs(alpha - 1.0) / (2.0 * np.cbrt(alpha))
    return out if out.ndim else float(out)


def in_plane_radius(r0):
    """Positive root of 8 x^3 - 8 r0 x^2 - 1 = 0.

    Cardano's form with the two cube-root terms written via
    D+ = 27 + 16 r0^3 + 3 sqrt(81 + 96 r0^3); the companion root
    D- = 256 r0^6 / D+ is never formed, so nothing cancels for small r0.
    A Newton step on the cubic polishes the last bits.
    """
    d_plus = 27.0 + 16.0 * r0**3 + 3.0 * math.sqrt(81.0 + 96.0 * r0**3)
    c = np.cbrt(d_plus)
    x = r0 / 3.0 + c / np.cbrt(432.0) + np.cbrt(16.0) * r0 * r0 / (3.0 * c)
    for _ in range(2):
        f = 8 * x**3 - 8 * r0 * x * x - 1.0
        df = 24 * x * x - 16 * r0 * x
        x -= f / df
    return x


def off_plane_position(trap):
    """(x, z) of the off-plane branch, or None where it does not exist."""
    a, r0 = trap.alpha, trap.r0
    if a >= 1.0:
        return None
    num = (a - 1.0) ** 2 - 4.0 * r0 * r0 * a ** (2.0 / 3.0)
    if num < 0:
        return None
    x = r0 / abs(a - 1.0)
    z = 0.5 * math.sqrt(num / ((a - 1.0) ** 2 * a ** (2.0 / 3.0)))
    return x, z


def _literal_in_plane(trap):
    return trap.r0 > phase_boundary(trap.alpha) and trap.alpha > 1.0


def equilibrium(trap):
    """Lowest-energy stationary configuration from the closed forms."""
    if trap.r0 == 0:
        raise InvalidTrap("r0 = 0: the ring has collapsed to a point")
    x_in = in_plane_radius(trap.r0)
    candidates = [(scaled_hamiltonian(x_in, 0.0, trap), x_in, 0.0, IN_PLANE)]
    off = off_plane_position(trap)
    if off is not None and off[1] > 0:
        x_off, z_off = off
        candidates.append((scaled_hamiltonian(x_off, z_off, trap), x_off, z_off, OFF_PLANE))
    energy, x, z, phase = min(candidates, key=lambda c: c[0])
    literal = IN_PLANE if _literal_in_plane(trap) else OFF_PLANE
    return PhaseState(trap, float(x), float(z), phase, float(energy), literal_agrees=(literal == phase))


def _newton_polish(p, trap, iterations=100):
    best = np.array(p, dtype=float)
    best_g = np.linalg.norm(hamiltonian_gradient(*best, trap))
    for _ in range(iterations):
        if best_g == 0:
            break
        step = np.linalg.lstsq(hamiltonian_hessian(*best, trap), hamiltonian_gradient(*best, trap), rcond=None)[0]
        cand = best - step
        if cand[0] <= 0:
            break
        cand_g = np.linalg.norm(hamiltonian_gradient(*cand, trap))
        if not cand_g < best_g:
            break
        best, best_g = cand, cand_g
    return best


def brute_force_minimum(trap, n_scan=241, z_tol=1e-7):
    """Global minimum of H by grid scan, Nelder-Mead, then a Newton polish.

    Uses only H and its derivatives, never the closed-form branches, so it
    serves as an independent oracle for ``equilibrium``.
    """
    xs = np.linspace(1e-3, trap.r0 + 3.0, n_scan)
    zs = np.linspace(0.0, 3.0, n_scan)
    xx, zz = np.meshgrid(xs, zs, indexing="ij")
    energy = scaled_hamiltonian(xx, zz, trap)
    i, j = np.unravel_index(np.argmin(energy), energy.shape)
    start = np.array([xs[i], zs[j] if zs[j] > 0 else 1e-3])

    def fun(p):
        if p[0] == 0 and p[1] == 0:
            return np.inf
        return scaled_hamiltonian(abs(p[0]), p[1], trap)

    res = minimize(fun, start, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 20000, "maxfev": 40000})
    x, z = abs(res.x[0]), abs(res.x[1])
    x, z = _newton_polish((x, z), trap)
    z = abs(z)
    if z <= z_tol:
        # settle onto the plane exactly and finish the one-dimensional problem
        x = _newton_polish((x, 0.0), trap)[0]
        z = 0.0
    phase = OFF_PLANE if z > 0 else IN_PLANE
    literal = IN_PLANE if _literal_in_plane(trap) else OFF_PLANE
    return PhaseState(trap, float(x), float(z), phase, scaled_hamiltonian(x, z, trap), literal == phase)


@dataclass(frozen=True, eq=False)
class IonRing:
    """N ions at scaled 3D positions (rows of an (N, 3) array)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 1:
            raise ValueError("positions must be an (N, 3) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def N(self):
        return len(self.positions)

    @classmethod
    def on_ring(cls, n, radius, z=0.0):
        phi = 2 * np.pi * np.arange(n) / n
        return cls(np.column_stack([radius * np.cos(phi), radius * np.sin(phi), np.full(n, z)]))


def n_ion_energy(ring, trap):
    """Scaled N-ion energy: sum 1/d_ij + sum [(rho_i - r0)^2 + alpha z_i^2].

    With d_ij the true scaled separation this reduces to scaled_hamiltonian
    for two ions at (x, 0, z) and (-x, 0, -z).
    """
    if not isinstance(ring, IonRing):
        ring = IonRing(ring)
    pos = ring.positions
    rho = np.hypot(pos[:, 0], pos[:, 1])
    trap_energy = np.sum((rho - trap.r0) ** 2 + trap.alpha * pos[:, 2] ** 2)
    coulomb = 0.0
    if len(pos) > 1:
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        iu = np.triu_indices(len(pos), k=1)
        d = dist[iu]
        if np.any(d == 0):
            raise CoincidentIons("two ions share a position")
        coulomb = float(np.sum(1.0 / d))
    return coulomb + float(trap_energy)


def phase_map(alphas, r0s):
    """Equilibria on the (alpha, r0) grid; returns a len(alphas) x len(r0s) list."""
    alphas = np.asarray(alphas, dtype=float)
    r0s = np.asarray(r0s, dtype=float)
    if np.any(alphas <= 0) or np.any(r0s <= 0):
        raise ValueError("alpha and r0 ranges must be positive")
    return [[equilibrium(ScaledTrap(float(a), float(r))) for r in r0s] for a in alphas]


def sweep_axes(alpha_range, r0_range, resolution):
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    (a_lo, a_hi), (r_lo, r_hi) = alpha_range, r0_range
    if not (0 < a_lo <= a_hi and 0 < r_lo <= r_hi):
        raise ValueError("sweep ranges must be positive and ordered")
    return np.linspace(a_lo, a_hi, resolution), np.linspace(r_lo, r_hi, resolution)


def phase_map_csv(states):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "r0", "x", "z", "phase", "energy"])
    for row in states:
        for s in row:
            writer.writerow([repr(s.trap.alpha), repr(s.trap.r0), repr(s.x), repr(s.z), s.phase, repr(s.energy)])
    return buf.getvalue()


def boundary_csv(alphas):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "r0_critical"])
    for a in alphas:
        writer.writerow([repr(float(a)), repr(phase_boundary(float(a)))])
    return buf.getvalue()
