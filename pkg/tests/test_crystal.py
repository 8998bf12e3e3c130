import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from halotrap.crystal import (
    IN_PLANE,
    OFF_PLANE,
    IonRing,
    ScaledTrap,
    boundary_csv,
    brute_force_minimum,
    e_star,
    equilibrium,
    hamiltonian_gradient,
    hamiltonian_hessian,
    in_plane_radius,
    n_ion_energy,
    phase_boundary,
    phase_map,
    phase_map_csv,
    r_star,
    scaled_hamiltonian,
    sweep_axes,
)
from halotrap.errors import CoincidentIons, InvalidTrap, Singularity
from halotrap.pseudo import MG24, YB171


def cubic_root(r0):
    return brentq(lambda x: 8 * x**3 - 8 * r0 * x * x - 1, max(r0, 1e-9), r0 + 2.0, xtol=1e-15, rtol=1e-15)


def test_r_star_scaling_law():
    w = 2 * math.pi * 2e3
    assert r_star(MG24, 8 * w) == pytest.approx(r_star(MG24, w) / 4, rel=1e-14)


def test_e_star_definition():
    w = 2 * math.pi * 2e3
    assert e_star(MG24, w) == pytest.approx(0.5 * MG24.mass_kg * w * w * r_star(MG24, w) ** 2, rel=1e-15)


def test_r_star_rejects_bad_frequency():
    with pytest.raises(ValueError):
        r_star(YB171, 0.0)


def test_from_physical():
    w_r = 2 * math.pi * 2e3
    t = ScaledTrap.from_physical(MG24, w_r, 2 * w_r, r_star(MG24, w_r) * 1.5)
    assert t.alpha == pytest.approx(4.0)
    assert t.r0 == pytest.approx(1.5)


def test_trap_invariants():
    with pytest.raises(InvalidTrap):
        ScaledTrap(0.0, 1.0)
    with pytest.raises(InvalidTrap):
        ScaledTrap(1.0, -0.1)


def test_hamiltonian_examples():
    t = ScaledTrap(2.0, 1.0)
    assert scaled_hamiltonian(1.0, 0.0, t) == 0.5
    t = ScaledTrap(0.7, 1.3)
    assert scaled_hamiltonian(1.3, 0.0, t) == pytest.approx(1 / 2.6)
    with pytest.raises(Singularity):
        scaled_hamiltonian(0.0, 0.0, t)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 3), st.floats(0.0, 3), st.floats(0.1, 5), st.floats(0, 3))
def test_hamiltonian_symmetries(x, z, alpha, r0):
    t = ScaledTrap(alpha, r0)
    h = scaled_hamiltonian(x, z, t)
    assert scaled_hamiltonian(x, -z, t) == h
    assert scaled_hamiltonian(-x, z, t) == h


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.05, 3), st.floats(0.1, 5), st.floats(0.0, 3))
def test_gradient_matches_finite_differences(x, z, alpha, r0):
    t = ScaledTrap(alpha, r0)
    step = 1e-6
    fd = np.array([
        (scaled_hamiltonian(x + step, z, t) - scaled_hamiltonian(x - step, z, t)) / (2 * step),
        (scaled_hamiltonian(x, z + step, t) - scaled_hamiltonian(x, z - step, t)) / (2 * step),
    ])
    g = hamiltonian_gradient(x, z, t)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-6 * max(1.0, np.abs(g).max()))


@pytest.mark.parametrize("r0", [1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3])
def test_in_plane_radius_matches_bisection(r0):
    assert in_plane_radius(r0) == pytest.approx(cubic_root(r0), rel=1e-14)


def test_in_plane_example():
    s = equilibrium(ScaledTrap(2.0, 1.0))
    assert s.phase == IN_PLANE
    assert s.z == 0.0
    assert s.x == pytest.approx(1.1027, abs=1e-4)
    assert s.x == pytest.approx(cubic_root(1.0), rel=1e-14)


def test_off_plane_example():
    t = ScaledTrap(0.5, 0.1)
    s = equilibrium(t)
    b = brute_force_minimum(t)
    assert s.phase == OFF_PLANE
    assert s.x == pytest.approx(0.2, rel=1e-14)
    expected_z = 0.5 * math.sqrt((0.25 - 4 * 0.01 * 0.5 ** (2 / 3)) / (0.25 * 0.5 ** (2 / 3)))
    assert s.z == pytest.approx(expected_z, rel=1e-14)
    assert abs(b.x - s.x) < 1e-6 and abs(b.z - s.z) < 1e-6


def test_phase_boundary_values():
    assert phase_boundary(1.0) == 0.0
    assert phase_boundary(0.5) == pytest.approx(0.3150, abs=1e-4)
    assert phase_boundary(4.0) == pytest.approx(0.9449, abs=1e-4)
    with pytest.raises(ValueError):
        phase_boundary(0.0)


def test_on_boundary_z_vanishes():
    a = 0.5
    s = equilibrium(ScaledTrap(a, phase_boundary(a)))
    assert s.z == pytest.approx(0.0, abs=1e-7)


def test_zero_radius_rejected():
    with pytest.raises(InvalidTrap):
        equilibrium(ScaledTrap(1.0, 0.0))


def test_stationarity_and_minimum():
    rng = np.random.default_rng(11)
    for _ in range(200):
        t = ScaledTrap(rng.uniform(0.05, 5), rng.uniform(0.01, 3))
        s = equilibrium(t)
        assert np.linalg.norm(hamiltonian_gradient(s.x, s.z, t)) <= 1e-10
        assert np.linalg.eigvalsh(hamiltonian_hessian(s.x, s.z, t)).min() >= -1e-9
        assert s.energy == scaled_hamiltonian(s.x, s.z, t)
        assert s.x > 0 and s.z >= 0
        assert (s.phase == IN_PLANE) == (s.z == 0)


def test_isotropic_trap_stays_in_plane():
    for r0 in (0.05, 0.5, 2.0):
        assert brute_force_minimum(ScaledTrap(1.0, r0)).z == 0.0


def test_brute_force_beats_random_probes():
    t = ScaledTrap(0.4, 0.2)
    best = brute_force_minimum(t)
    rng = np.random.default_rng(0)
    xs = rng.uniform(1e-3, t.r0 + 3, 10_000)
    zs = rng.uniform(0, 3, 10_000)
    assert best.energy <= scaled_hamiltonian(xs, zs, t).min()


def test_brute_force_matches_closed_form_tightly():
    t = ScaledTrap(2.0, 1.0)
    b, s = brute_force_minimum(t), equilibrium(t)
    assert abs(b.x - s.x) < 1e-8 and abs(b.z - s.z) < 1e-8


def test_literal_condition_flag():
    # alpha = 1 lies outside the literal in-plane condition but is in plane by energy
    assert not equilibrium(ScaledTrap(1.0, 0.7)).literal_agrees
    assert equilibrium(ScaledTrap(2.0, 1.0)).literal_agrees
    assert equilibrium(ScaledTrap(0.5, 0.1)).literal_agrees


def test_n_ion_energy_reduces_to_two_ion():
    t = ScaledTrap(2.0, 1.0)
    assert n_ion_energy([[0.8, 0, 0.3], [-0.8, 0, -0.3]], t) == pytest.approx(scaled_hamiltonian(0.8, 0.3, t), rel=1e-14)


def test_n_ion_single_and_square():
    t = ScaledTrap(2.0, 1.0)
    assert n_ion_energy([[1.0, 0.0, 0.0]], t) == 0.0
    # square on the ring: four sides of length sqrt(2) and two diagonals of length 2
    assert n_ion_energy(IonRing.on_ring(4, 1.0), t) == pytest.approx(4 / math.sqrt(2) + 2 / 2, rel=1e-14)


def test_n_ion_errors():
    t = ScaledTrap(2.0, 1.0)
    with pytest.raises(CoincidentIons):
        n_ion_energy([[1, 0, 0], [1, 0, 0]], t)
    with pytest.raises(ValueError):
        IonRing(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        IonRing([[np.inf, 0, 0]])


def test_phase_map_shape_and_labels():
    alphas, r0s = sweep_axes((0.1, 3.0), (0.05, 2.0), 7)
    states = phase_map(alphas, r0s)
    assert len(states) == 7 and all(len(row) == 7 for row in states)
    for row in states:
        for s in row:
            off = s.trap.alpha < 1 and s.trap.r0 < phase_boundary(s.trap.alpha)
            assert (s.phase == OFF_PLANE) == off
    csv_text = phase_map_csv(states)
    assert csv_text.splitlines()[0] == "alpha,r0,x,z,phase,energy"
    assert len(csv_text.splitlines()) == 50


def test_boundary_csv():
    lines = boundary_csv([0.5, 1.0]).splitlines()
    assert lines[0] == "alpha,r0_critical"
    assert lines[2] == "1.0,0.0"


def test_sweep_axes_validation():
    with pytest.raises(ValueError):
        sweep_axes((0.0, 1.0), (0.1, 1.0), 3)
    with pytest.raises(ValueError):
        sweep_axes((1.0, 0.5), (0.1, 1.0), 3)
    with pytest.raises(ValueError):
        sweep_axes((0.1, 1.0), (0.1, 1.0), 0)
