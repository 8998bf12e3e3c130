"""Physical constants (CODATA 2018, 9 significant figures)."""

ELEMENTARY_CHARGE = 1.60217663e-19  # C
VACUUM_PERMITTIVITY = 8.85418781e-12  # F/m
ATOMIC_MASS_UNIT = 1.66053907e-27  # kg
PI = 3.14159265358979

COULOMB_CONSTANT = 1.0 / (4.0 * PI * VACUUM_PERMITTIVITY)
