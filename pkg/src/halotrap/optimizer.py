"""Two-stage Monte Carlo design search.

Each evaluation solves the geometry once (one sparse factorization), then:

1. RF: +-V0 on the needles and tubes (top needle and bottom tube in phase),
   fit ell_rf and chi2_rf, locate the RF node R on z = 0.
2. Static: needle at U1, control tubes at U0, outer tube at U2.  U1 and U2
   stay at their anchor values; U0 is solved so that dU/dr = 0 at (R, 0),
   i.e. the static saddle sits on the RF node.  Fit ell_static, chi2_static.

The search perturbs (A_h, K_h, V_h, theta) with Gaussian steps and keeps a
proposal only when the normalized combined chi2 does not increase.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import HaloTrapError, InfeasibleStart, NoSolution
from .field_solver import DEFAULT_SPACING, DEFAULT_TOL, LaplaceProblem, gradient, superpose
from .fitting import DEFAULT_REGION_RADIUS, FitRegion, fit_rf, fit_static, locate_trap_center
from .geometry import (
    DEFAULT_FAR_FIELD_FACTOR,
    DEFAULT_SETBACK,
    DesignParams,
    ElectrodeRadii,
    boundary_segments,
    build_geometry,
    default_domain,
)

SADDLE_TOLERANCE = 1e-4


@dataclass(frozen=True)
class VoltageSet:
    """RF amplitude and static biases [V].

    U0 is the bias on both control tubes, U1 on the needles, U2 on the outer
    tubes (the optimized trap has U0 = -42.97 V, U1 = 1.09 V, U2 = 1.03 V).
    """

    V0: float = 1.0
    U0: float = 0.0
    U1: float = 0.0
    U2: float = 0.0

    def __post_init__(self):
        vals = (self.V0, self.U0, self.U1, self.U2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("voltages must be finite")
        if not self.V0 > 0:
            raise ValueError("V0 must be > 0")

    def static_coefficients(self):
        return {"needle": self.U1, "control": self.U0, "tube": self.U2}

    def scaled(self, factor):
        """Static biases times ``factor`` (may be negative); V0 unchanged."""
        return VoltageSet(self.V0, factor * self.U0, factor * self.U1, factor * self.U2)

    def to_dict(self):
        return {"V0_V": self.V0, "U0_V": self.U0, "U1_V": self.U1, "U2_V": self.U2}


TABLE1_VOLTAGES = VoltageSet(V0=1.0, U0=-42.97, U1=1.09, U2=1.03)
DEFAULT_ANCHOR = VoltageSet(V0=1.0, U0=0.0, U1=1.09, U2=1.03)


def rf_voltages(V0=1.0):
    return {
        "needle_top": V0,
        "needle_bottom": -V0,
        "tube_top": -V0,
        "tube_bottom": V0,
        "control_top": 0.0,
        "control_bottom": 0.0,
    }


@dataclass(frozen=True)
class EvalConfig:
    h: float = DEFAULT_SPACING
    far_field_factor: float = DEFAULT_FAR_FIELD_FACTOR
    far_field_bc: str = "insulating"
    tol: float = DEFAULT_TOL
    region_radius: float = DEFAULT_REGION_RADIUS
    anchor: VoltageSet = DEFAULT_ANCHOR
    radii: ElectrodeRadii = field(default_factory=ElectrodeRadii)
    insulator_setback: float = DEFAULT_SETBACK


def _radial_gradient(field_, R):
    return gradient(field_, (R, 0.0))[0]


def static_saddle_residual(basis, R, voltages):
    """(|dU/dr| at (R, 0), tolerance) for a static voltage set."""
    coeffs = voltages.static_coefficients()
    grads = {name: _radial_gradient(basis[name], R) for name in coeffs}
    resid = abs(sum(coeffs[k] * grads[k] for k in coeffs))
    scale = max(abs(g) for g in grads.values())
    return resid, SADDLE_TOLERANCE * scale


def tune_static_voltages(basis, R, anchor=DEFAULT_ANCHOR):
    """Solve U0 (U1, U2 held at ``anchor``) so dU/dr vanishes at (R, 0)."""
    g_needle = _radial_gradient(basis["needle"], R)
    g_control = _radial_gradient(basis["control"], R)
    g_tube = _radial_gradient(basis["tube"], R)
    scale = max(abs(g_needle), abs(g_tube), abs(g_control))
    if scale == 0 or abs(g_control) <= 1e-12 * scale:
        raise NoSolution("control electrode has no radial field at the trap center")
    u0 = -(anchor.U1 * g_needle + anchor.U2 * g_tube) / g_control
    return VoltageSet(V0=anchor.V0, U0=float(u0), U1=anchor.U1, U2=anchor.U2)


@dataclass(frozen=True, eq=False)
class Evaluation:
    params: DesignParams
    geometry: object
    ell_rf: float
    chi2_rf: float
    trap_center_R: float
    voltages: VoltageSet
    ell_static: float
    chi2_static: float
    saddle_residual: float
    saddle_tolerance: float
    rf_fit: object
    static_fit: object
    rf_field: object
    static_field: object
    basis: object

    def as_tuple(self):
        return (self.ell_rf, self.chi2_rf, self.trap_center_R, self.voltages, self.ell_static, self.chi2_static)


def evaluate(params, config=None):
    """One full pipeline pass for a design (no search)."""
    config = EvalConfig() if config is None else config
    geometry = build_geometry(params, config.radii, config.insulator_setback)
    domain = default_domain(geometry, config.far_field_factor, h=config.h)
    boundary = boundary_segments(geometry, domain, config.far_field_bc)
    problem = LaplaceProblem(boundary, h=config.h)

    rf_field = problem.solve(rf_voltages(1.0), tol=config.tol)
    R = locate_trap_center(rf_field)
    region = FitRegion(R, config.region_radius)
    rf_fit = fit_rf(rf_field, region)

    basis = problem.basis(tol=config.tol)
    voltages = tune_static_voltages(basis, R, config.anchor)
    static_field = superpose(basis, voltages.static_coefficients())
    static_fit = fit_static(static_field, region)
    resid, tol = static_saddle_residual(basis, R, voltages)
    return Evaluation(
        params=params,
        geometry=geometry,
        ell_rf=rf_fit.ell,
        chi2_rf=rf_fit.chi2,
        trap_center_R=R,
        voltages=voltages,
        ell_static=static_fit.ell,
        chi2_static=static_fit.chi2,
        saddle_residual=resid,
        saddle_tolerance=tol,
        rf_fit=rf_fit,
        static_fit=static_fit,
        rf_field=rf_field,
        static_field=static_field,
        basis=basis,
    )


DEFAULT_BOUNDS = {
    "aspect": (0.3, 3.0),
    "keystone": (0.5, 4.0),
    "control_offset": (0.0, 5.0),
    "needle_angle_deg": (5.0, 45.0),
}
PARAM_NAMES = ("aspect", "keystone", "control_offset", "needle_angle_deg")


@dataclass(frozen=True)
class OptimizerConfig:
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    step_scales: tuple = (0.05, 0.05, 0.05, 0.05)
    weight_rf: float = 0.5
    halve_after: int = 20
    min_step_fraction: float = 1.0 / 16.0
    stop_after: int = 50
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))

    def __post_init__(self):
        if len(self.step_scales) != 4 or any(s < 0 for s in self.step_scales):
            raise ValueError("step_scales needs four non-negative entries")
        if not 0 <= self.weight_rf <= 1:
            raise ValueError("weight_rf must lie in [0, 1]")
        unknown = set(self.bounds) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown bound names {sorted(unknown)}")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    params: tuple  # (A_h, K_h, V_h, theta_deg) as proposed
    chi2_rf: float
    chi2_static: float
    objective: float
    accepted: bool
    saddle_residual: float = math.nan
    saddle_tolerance: float = math.nan


@dataclass(frozen=True, eq=False)
class OptimizationReport:
    best_params: DesignParams
    best_voltages: VoltageSet
    ell_rf: float
    ell_static: float
    chi2_rf: float
    chi2_static: float
    trap_center_R: float
    trace: tuple
    rng_seed: int
    stop_reason: str
    best_evaluation: Evaluation = None

    def to_dict(self):
        p = self.best_params
        return {
            "best_params": {
                "A_h": p.aspect,
                "K_h": p.keystone,
                "V_h": p.control_offset,
                "theta_deg": p.needle_angle_deg,
            },
            "best_voltages": self.best_voltages.to_dict(),
            "ell_rf_m": self.ell_rf,
            "ell_static_m": self.ell_static,
            "chi2_rf_V2m2": self.chi2_rf,
            "chi2_static_V2m2": self.chi2_static,
            "trap_center_r_m": self.trap_center_R,
            "rng_seed": self.rng_seed,
            "evaluations": len(self.trace),
            "stop_reason": self.stop_reason,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def trace_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "A_h", "K_h", "V_h", "theta_deg", "chi2_rf", "chi2_static", "accepted"])
        for e in self.trace:
            writer.writerow([
                e.iteration,
                *(repr(float(v)) for v in e.params),
                repr(e.chi2_rf),
                repr(e.chi2_static),
                int(e.accepted),
            ])
        return buf.getvalue()


def _in_bounds(values, bounds):
    for name, v in zip(PARAM_NAMES, values):
        lo, hi = bounds.get(name, (-math.inf, math.inf))
        if not lo <= v <= hi:
            return False
    return True


def optimize(initial, budget=200, seed=0, config=None):
    """Greedy Monte Carlo search from ``initial``; deterministic in (seed, budget, config)."""
    config = OptimizerConfig() if config is None else config
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(seed)
    try:
        start = evaluate(initial, config.evaluation)
    except HaloTrapError as exc:
        raise InfeasibleStart(f"initial design cannot be evaluated: {exc}") from exc

    w = config.weight_rf
    ref_rf = start.chi2_rf if start.chi2_rf > 0 else 1.0
    ref_static = start.chi2_static if start.chi2_static > 0 else 1.0

    def objective(ev):
        return w * ev.chi2_rf / ref_rf + (1 - w) * ev.chi2_static / ref_static

    best = start
    best_obj = objective(start)
    trace = [
        TraceEntry(0, tuple(initial.as_array()), start.chi2_rf, start.chi2_static, best_obj, True,
                   start.saddle_residual, start.saddle_tolerance)
    ]
    scales = np.asarray(config.step_scales, dtype=float)
    step = 1.0
    rejected = 0
    rejected_at_min = 0
    stop_reason = "budget"
    floor = np.array([1e-3 * (hi - lo) for lo, hi in (config.bounds.get(n, (0.0, 1.0)) for n in PARAM_NAMES)])

    for it in range(1, budget + 1):
        current = best.params.as_array()
        sigma = step * scales * np.maximum(np.abs(current), floor)
        proposal = current + rng.normal(0.0, 1.0, size=4) * sigma
        ev = None
        if _in_bounds(proposal, config.bounds):
            try:
                ev = evaluate(DesignParams.from_array(proposal), config.evaluation)
            except (HaloTrapError, ValueError):
                ev = None
        params = tuple(float(v) for v in proposal)
        if ev is not None and objective(ev) <= best_obj and ev.saddle_residual <= ev.saddle_tolerance:
            best, best_obj = ev, objective(ev)
            trace.append(TraceEntry(it, params, ev.chi2_rf, ev.chi2_static, best_obj, True,
                                    ev.saddle_residual, ev.saddle_tolerance))
            rejected = 0
            rejected_at_min = 0
            continue
        if ev is None:
            trace.append(TraceEntry(it, params, math.nan, math.nan, math.nan, False))
        else:
            trace.append(TraceEntry(it, params, ev.chi2_rf, ev.chi2_static, objective(ev), False,
                                    ev.saddle_residual, ev.saddle_tolerance))
        rejected += 1
        if step <= config.min_step_fraction:
            rejected_at_min += 1
            if rejected_at_min >= config.stop_after:
                stop_reason = "converged"
                break
        elif rejected % config.halve_after == 0:
            step = max(step / 2.0, config.min_step_fraction)

    return OptimizationReport(
        best_params=best.params,
        best_voltages=best.voltages,
        ell_rf=best.ell_rf,
        ell_static=best.ell_static,
        chi2_rf=best.chi2_rf,
        chi2_static=best.chi2_static,
        trap_center_R=best.trap_center_R,
        trace=tuple(trace),
        rng_seed=seed,
        stop_reason=stop_reason,
        best_evaluation=best,
    )


def with_evaluation(config, **changes):
    """Copy of an OptimizerConfig with EvalConfig fields replaced."""
    return replace(config, evaluation=replace(config.evaluation, **changes))
