"""Acceptance suite: one group per criterion, summarized at the end of the run."""

import math

import numpy as np
import pytest

from conftest import coax_problem
from halotrap.cli import DEFAULT_SPECIES_TABLE, parse_species
from halotrap.crystal import (
    IN_PLANE,
    OFF_PLANE,
    ScaledTrap,
    brute_force_minimum,
    equilibrium,
    phase_boundary,
    r_star,
)
from halotrap.field_solver import DEFAULT_SPACING, GridSpec, ScalarField
from halotrap.fitting import FitRegion, fit_rf, fit_static
from halotrap.geometry import TABLE1_PARAMS, DesignParams
from halotrap.optimizer import EvalConfig, OptimizerConfig, optimize
from halotrap.pseudo import MG24, DriveSettings, IonSpecies, pseudopotential

# ---------------------------------------------------------------- 1


@pytest.mark.criterion(1)
@pytest.mark.parametrize("row,expected_um", list(zip(DEFAULT_SPECIES_TABLE, [419, 428, 401, 429])),
                         ids=["Mg24", "Ca40", "Yb171", "PS"])
def test_r_star_table(row, expected_um):
    sp = parse_species({k: v for k, v in row.items() if k not in ("ion", "omega_r_Hz")}, "row")
    r = r_star(sp, 2 * math.pi * row["omega_r_Hz"])
    assert r * 1e6 == pytest.approx(expected_um, rel=0.01)


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2)
@pytest.mark.parametrize("name,expected", [
    ("trap_center_R", 430e-6),
    ("ell_rf", 413e-6),
    ("ell_static", 328e-6),
])
def test_table1_lengths(table1_eval, name, expected):
    assert table1_eval.rf_field.grid.h == pytest.approx(DEFAULT_SPACING, rel=1e-9)
    assert getattr(table1_eval, name) == pytest.approx(expected, rel=0.10)


@pytest.mark.criterion(2)
def test_table1_u0(table1_eval):
    assert (table1_eval.voltages.U1, table1_eval.voltages.U2) == (1.09, 1.03)
    assert table1_eval.voltages.U0 == pytest.approx(-42.97, rel=0.15)


# ---------------------------------------------------------------- 3

A, B = 1e-3, 3e-3


def _coax_max_error(h):
    f = coax_problem(h).solve({"inner": 1.0, "outer": 0.0}, tol=1e-10)
    r = f.grid.r
    j = f.grid.index_of_z(0.0)
    gap = (r >= A) & (r <= B)
    exact = np.log(B / r[gap]) / np.log(B / A)
    return np.max(np.abs(f.values[gap, j] - exact))


@pytest.mark.criterion(3)
def test_coax_error_at_default_resolution():
    # worst pointwise error across the gap, relative to the 1 V drive
    assert _coax_max_error(DEFAULT_SPACING) <= 5e-3


@pytest.mark.criterion(3)
def test_coax_error_falls_on_halving():
    errors = [_coax_max_error(h) for h in (100e-6, 50e-6, 25e-6)]
    assert errors[0] / errors[1] >= 3.0
    assert errors[1] / errors[2] >= 3.0


# ---------------------------------------------------------------- 4


def _traps_for_oracle():
    alphas = np.linspace(0.1, 3.0, 20)
    r0s = np.linspace(0.05, 2.0, 20)
    grid = [ScaledTrap(a, r) for a in alphas for r in r0s]
    rng = np.random.default_rng(2024)
    draws = [ScaledTrap(rng.uniform(0.05, 5.0), rng.uniform(0.01, 3.0)) for _ in range(500)]
    return grid + draws


@pytest.mark.criterion(4)
def test_closed_form_matches_brute_force():
    worst = 0.0
    mismatched = []
    for t in _traps_for_oracle():
        s = equilibrium(t)
        b = brute_force_minimum(t)
        worst = max(worst, abs(s.x - b.x), abs(s.z - b.z))
        if s.phase != b.phase and abs(t.r0 - phase_boundary(t.alpha)) > 1e-6:
            mismatched.append(t)
    assert worst <= 1e-6
    assert mismatched == []


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5)
def test_off_plane_exact_relations():
    for a in (0.1, 0.3, 0.5, 0.8, 0.95):
        for frac in (0.1, 0.5, 0.9, 0.999):
            t = ScaledTrap(a, frac * phase_boundary(a))
            s = equilibrium(t)
            assert s.phase == OFF_PLANE
            assert abs(s.x * abs(1 - a) - t.r0) <= 1e-10
            assert abs(s.x**2 + s.z**2 - (8 * a) ** (-2 / 3)) <= 1e-10


@pytest.mark.criterion(5)
def test_z_vanishes_continuously_at_boundary():
    a = 0.5
    rc = phase_boundary(a)
    zs = [equilibrium(ScaledTrap(a, rc * (1 - eps))).z for eps in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(z1 > z2 for z1, z2 in zip(zs, zs[1:]))
    assert zs[-1] < 1e-3
    assert equilibrium(ScaledTrap(a, rc * (1 + 1e-8))).z == 0.0


@pytest.mark.criterion(5)
def test_in_plane_radius_independent_of_alpha():
    # r0 = 2 lies above the boundary for both alpha = 0.5 and alpha = 5
    r0 = 2.0
    assert r0 > phase_boundary(0.5) and r0 > phase_boundary(5.0)
    lo, hi = equilibrium(ScaledTrap(0.5, r0)), equilibrium(ScaledTrap(5.0, r0))
    assert lo.phase == hi.phase == IN_PLANE
    assert lo.x == hi.x


# ---------------------------------------------------------------- 6

DRIVE = DriveSettings.from_frequency(300.0, 80e6)


@pytest.fixture(scope="module")
def mg_map(table1_eval):
    return pseudopotential(table1_eval.rf_field, MG24, DRIVE)


@pytest.mark.criterion(6)
def test_depth_scaling_with_drive(table1_eval):
    drives = [DriveSettings.from_frequency(300.0, 80e6),
              DriveSettings.from_frequency(150.0, 35e6),
              DriveSettings.from_frequency(720.0, 120e6)]
    reduced = [pseudopotential(table1_eval.rf_field, MG24, d).depth * d.omega_T**2 / d.V0**2 for d in drives]
    assert max(reduced) / min(reduced) - 1 <= 1e-6


@pytest.mark.criterion(6)
def test_psi_inverse_mass_pointwise(table1_eval, mg_map):
    heavy = pseudopotential(table1_eval.rf_field, IonSpecies(3 * MG24.mass), DRIVE)
    ok = np.isfinite(mg_map.psi)
    assert np.allclose(3 * heavy.psi[ok], mg_map.psi[ok], rtol=1e-12, atol=0)


@pytest.mark.criterion(6)
def test_node_is_near_zero_and_regression(mg_map):
    assert mg_map.psi_at(*mg_map.node) <= 1e-3 * mg_map.depth
    # self-derived baseline recorded at the default grid
    assert mg_map.depth == pytest.approx(1.8183, rel=1e-3)


# ---------------------------------------------------------------- 7

COARSE = OptimizerConfig(evaluation=EvalConfig(h=20e-6))


@pytest.mark.criterion(7)
def test_optimizer_determinism():
    a = optimize(TABLE1_PARAMS, budget=10, seed=11, config=COARSE)
    b = optimize(TABLE1_PARAMS, budget=10, seed=11, config=COARSE)
    assert a.trace_csv() == b.trace_csv()
    assert a.to_json() == b.to_json()


@pytest.mark.criterion(7)
def test_optimizer_monotone_and_constrained():
    rep = optimize(TABLE1_PARAMS, budget=20, seed=3, config=COARSE)
    accepted = [e for e in rep.trace if e.accepted]
    assert len(accepted) >= 1
    obj = [e.objective for e in accepted]
    assert all(x >= y for x, y in zip(obj, obj[1:]))
    assert all(e.saddle_residual <= e.saddle_tolerance for e in accepted)
    assert len(rep.trace) <= 21


@pytest.mark.criterion(7)
def test_optimizer_perturbed_start_does_not_worsen():
    start = DesignParams(0.74, 1.55, 2.25, 18.5)
    rep = optimize(start, budget=50, seed=7)
    assert len(rep.trace) <= 51
    assert rep.chi2_rf <= rep.trace[0].chi2_rf


# ---------------------------------------------------------------- 8

R0 = 430e-6


def _planted(fn):
    g = GridSpec.from_spacing(0.0, 1e-3, -3e-4, 3e-4, 5e-6)
    rr, zz = np.meshgrid(g.r, g.z, indexing="ij")
    return ScalarField(g, fn(rr - R0, zz))


@pytest.mark.criterion(8)
@pytest.mark.parametrize("ell", [250e-6, 413e-6, 800e-6])
def test_planted_rf_quadrupole(ell):
    fit = fit_rf(_planted(lambda s, z: -2 * s * z / ell**2), FitRegion(R0))
    assert fit.ell == pytest.approx(ell, rel=1e-3)
    assert fit.chi2 <= 1e-10


@pytest.mark.criterion(8)
@pytest.mark.parametrize("ell", [250e-6, 328e-6, 800e-6])
def test_planted_static_quadrupole(ell):
    fit = fit_static(_planted(lambda s, z: (s * s - z * z) / ell**2), FitRegion(R0))
    assert fit.ell == pytest.approx(ell, rel=1e-3)
    assert fit.chi2 <= 1e-10
