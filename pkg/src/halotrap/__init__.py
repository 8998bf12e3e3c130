"""Design and analysis tools for compact toroidal (halo) RF ion traps."""

from .crystal import (
    IonRing,
    PhaseState,
    ScaledTrap,
    brute_force_minimum,
    e_star,
    equilibrium,
    n_ion_energy,
    phase_boundary,
    phase_map,
    r_star,
    scaled_hamiltonian,
)
from .errors import HaloTrapError, NumericalError
from .field_solver import GridSpec, LaplaceProblem, ScalarField, gradient, solve, solve_basis, superpose
from .fitting import FitRegion, QuadrupoleFit, fit_rf, fit_static, locate_trap_center
from .geometry import TABLE1_PARAMS, DesignParams, ElectrodeRadii, TrapGeometry, boundary_segments, build_geometry
from .optimizer import TABLE1_VOLTAGES, EvalConfig, OptimizerConfig, VoltageSet, evaluate, optimize
from .pseudo import CA40, MG24, YB171, DriveSettings, IonSpecies, pseudopotential, secular_curvatures

__version__ = "0.1.0"

__all__ = [
    "CA40", "MG24", "YB171", "TABLE1_PARAMS", "TABLE1_VOLTAGES",
    "DesignParams", "DriveSettings", "ElectrodeRadii", "EvalConfig", "FitRegion", "GridSpec",
    "HaloTrapError", "IonRing", "IonSpecies", "LaplaceProblem", "NumericalError", "OptimizerConfig",
    "PhaseState", "QuadrupoleFit", "ScalarField", "ScaledTrap", "TrapGeometry", "VoltageSet",
    "boundary_segments", "brute_force_minimum", "build_geometry", "e_star", "equilibrium", "evaluate",
    "fit_rf", "fit_static", "gradient", "locate_trap_center", "n_ion_energy", "optimize",
    "phase_boundary", "phase_map", "pseudopotential", "r_star", "scaled_hamiltonian",
    "secular_curvatures", "solve", "solve_basis", "superpose",
]
