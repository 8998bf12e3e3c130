"""Command-line front end.

Every command reads an optional JSON config (``--config``), applies flag
overrides, validates everything, computes in memory and only then writes
its outputs.  Files are staged in a temporary directory inside ``--out-dir``
and renamed into place, so a failed run leaves no partial output.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import tempfile

from . import crystal
from .constants import ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE
from .errors import HaloTrapError, NumericalError
from .field_solver import write_field_binary, write_field_csv
from .geometry import (
    DEFAULT_NEEDLE_RADIUS,
    DEFAULT_SETBACK,
    TABLE1_PARAMS,
    DesignParams,
    ElectrodeRadii,
    TrapGeometry,
    boundary_segments,
    build_geometry,
    design_params,
)
from .optimizer import DEFAULT_BOUNDS, EvalConfig, OptimizerConfig, VoltageSet, evaluate, optimize
from .pseudo import CA40, MG24, YB171, DriveSettings, IonSpecies, pseudopotential, secular_curvatures

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

BUILTIN_SPECIES = {"Mg24": MG24, "Ca40": CA40, "Yb171": YB171}

POLYSTYRENE_DENSITY = 1050.0  # kg/m^3
PS_DIAMETER = 300e-9
PS_CHARGE = 1.6e-16  # C

DEFAULT_SPECIES_TABLE = [
    {"ion": "24Mg+", "mass_u": MG24.mass, "charge_e": 1.0, "omega_r_Hz": 2000.0},
    {"ion": "40Ca+", "mass_u": CA40.mass, "charge_e": 1.0, "omega_r_Hz": 1500.0},
    {"ion": "171Yb+", "mass_u": YB171.mass, "charge_e": 1.0, "omega_r_Hz": 800.0},
    {
        "ion": "300 nm PS",
        "mass_kg": POLYSTYRENE_DENSITY * math.pi / 6.0 * PS_DIAMETER**3,
        "charge_C": PS_CHARGE,
        "omega_r_Hz": 100.0,
    },
]

DEFAULT_DRIVE = {"species": "Mg24", "V0_V": 300.0, "frequency_Hz": 80e6, "static_scale": 0.0}

BLOCKS = {"geometry", "grid", "fit", "voltages", "drive", "output", "optimizer", "phase", "species"}


class ConfigError(Exception):
    pass


# -- config parsing ------------------------------------------------------------

def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"'{where}' must be a JSON object")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {sorted(unknown)}")


def _number(block, key, where, default=None, positive=False, integer=False):
    if key not in block:
        if default is None:
            raise ConfigError(f"'{where}.{key}' is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"'{where}.{key}' must be a finite number")
    if integer and int(v) != v:
        raise ConfigError(f"'{where}.{key}' must be an integer")
    if positive and not v > 0:
        raise ConfigError(f"'{where}.{key}' must be > 0")
    return int(v) if integer else float(v)


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    _check_keys(data, BLOCKS, "config")
    return data


DESIGN_KEYS = {"A_h", "K_h", "V_h", "theta_deg", "needle_radius_m", "insulator_setback_m"}
PHYSICAL_KEYS = {"radii_m", "z_needle_m", "z_control_m", "z_tube_m", "needle_angle_deg", "insulator_setback_m"}


def parse_geometry(block):
    """Geometry block in design form (A_h, K_h, V_h, theta_deg) or in
    physical form (a TrapGeometry JSON).  Returns (params, radii, setback)."""
    if not isinstance(block, dict):
        raise ConfigError("'geometry' must be a JSON object")
    try:
        if set(block) & {"z_needle_m", "z_control_m", "z_tube_m", "radii_m"}:
            _check_keys(block, PHYSICAL_KEYS, "geometry")
            geom = TrapGeometry.from_dict(block)
            return design_params(geom), geom.radii, geom.insulator_setback
        _check_keys(block, DESIGN_KEYS, "geometry")
        params = DesignParams(
            _number(block, "A_h", "geometry"),
            _number(block, "K_h", "geometry"),
            _number(block, "V_h", "geometry"),
            _number(block, "theta_deg", "geometry"),
        )
        radii = ElectrodeRadii.from_needle_radius(
            _number(block, "needle_radius_m", "geometry", DEFAULT_NEEDLE_RADIUS, positive=True)
        )
        setback = _number(block, "insulator_setback_m", "geometry", DEFAULT_SETBACK, positive=True)
        build_geometry(params, radii, setback)
        return params, radii, setback
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc


def parse_eval_config(cfg, args, radii, setback):
    grid = cfg.get("grid", {})
    _check_keys(grid, {"h_m", "far_field_factor", "far_field_bc", "tol"}, "grid")
    fit = cfg.get("fit", {})
    _check_keys(fit, {"region_radius_m"}, "fit")
    volts = cfg.get("voltages", {})
    _check_keys(volts, {"U1_V", "U2_V"}, "voltages")
    base = EvalConfig()
    h = args.h if getattr(args, "h", None) is not None else _number(grid, "h_m", "grid", base.h, positive=True)
    if not h > 0:
        raise ConfigError("--h must be > 0")
    bc = grid.get("far_field_bc", base.far_field_bc)
    if bc not in ("insulating", "grounded"):
        raise ConfigError("'grid.far_field_bc' must be 'insulating' or 'grounded'")
    return EvalConfig(
        h=h,
        far_field_factor=_number(grid, "far_field_factor", "grid", base.far_field_factor, positive=True),
        far_field_bc=bc,
        tol=_number(grid, "tol", "grid", base.tol, positive=True),
        region_radius=_number(fit, "region_radius_m", "fit", base.region_radius, positive=True),
        anchor=VoltageSet(
            V0=1.0,
            U0=0.0,
            U1=_number(volts, "U1_V", "voltages", base.anchor.U1),
            U2=_number(volts, "U2_V", "voltages", base.anchor.U2),
        ),
        radii=radii,
        insulator_setback=setback,
    )


def parse_species(spec, where):
    if isinstance(spec, str):
        if spec not in BUILTIN_SPECIES:
            raise ConfigError(f"'{where}' must be one of {sorted(BUILTIN_SPECIES)} or an object")
        return BUILTIN_SPECIES[spec]
    _check_keys(spec, {"name", "mass_u", "mass_kg", "charge_e", "charge_C"}, where)
    if ("mass_u" in spec) == ("mass_kg" in spec):
        raise ConfigError(f"'{where}' needs exactly one of mass_u, mass_kg")
    if "charge_e" in spec and "charge_C" in spec:
        raise ConfigError(f"'{where}' takes at most one of charge_e, charge_C")
    name = str(spec.get("name", ""))
    if "mass_kg" in spec:
        mass_u = _number(spec, "mass_kg", where, positive=True) / ATOMIC_MASS_UNIT
    else:
        mass_u = _number(spec, "mass_u", where, positive=True)
    if "charge_C" in spec:
        charge_e = _number(spec, "charge_C", where) / ELEMENTARY_CHARGE
    else:
        charge_e = _number(spec, "charge_e", where, 1.0)
    try:
        return IonSpecies(mass_u, charge_e, name)
    except ValueError as exc:
        raise ConfigError(f"invalid species in '{where}': {exc}") from exc


def parse_drive(cfg):
    user = cfg.get("drive", {})
    _check_keys(user, set(DEFAULT_DRIVE), "drive")
    block = {**DEFAULT_DRIVE, **user}
    species = parse_species(block["species"], "drive.species")
    drive = DriveSettings.from_frequency(
        _number(block, "V0_V", "drive", positive=True),
        _number(block, "frequency_Hz", "drive", positive=True),
    )
    return species, drive, _number(block, "static_scale", "drive")


# -- output staging ------------------------------------------------------------

class Outputs:
    """Collects writers and commits them atomically into ``out_dir``."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.items = []

    def text(self, name, content):
        def write(path):
            with open(path, "w", newline="") as fh:
                fh.write(content)
        self.items.append((name, write))

    def json(self, name, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def call(self, name, writer):
        self.items.append((name, writer))

    def commit(self):
        if not self.items:
            return []
        os.makedirs(self.out_dir, exist_ok=True)
        stage = tempfile.mkdtemp(prefix=".halotrap-", dir=self.out_dir)
        try:
            for name, write in self.items:
                write(os.path.join(stage, name))
            for name, _ in self.items:
                os.replace(os.path.join(stage, name), os.path.join(self.out_dir, name))
        finally:
            shutil.rmtree(stage, ignore_errors=True)
        return [os.path.join(self.out_dir, name) for name, _ in self.items]


def _params_dict(p):
    return {"A_h": p.aspect, "K_h": p.keystone, "V_h": p.control_offset, "theta_deg": p.needle_angle_deg}


# -- commands ------------------------------------------------------------------

def cmd_evaluate(cfg, args):
    if "geometry" not in cfg:
        raise ConfigError("evaluate needs a 'geometry' block")
    params, radii, setback = parse_geometry(cfg["geometry"])
    econf = parse_eval_config(cfg, args, radii, setback)
    species, drive, static_scale = parse_drive(cfg)
    output = cfg.get("output", {})
    _check_keys(output, {"field_format"}, "output")
    fmt = output.get("field_format", "csv")
    if fmt not in ("csv", "binary", "both", "none"):
        raise ConfigError("'output.field_format' must be csv, binary, both or none")

    ev = evaluate(params, econf)
    pseudo = pseudopotential(ev.rf_field, species, drive, node_r=ev.trap_center_R)
    omega_s, omega_z, alpha = secular_curvatures(pseudo, ev.static_field, static_scale * drive.V0)

    out = Outputs(args.out_dir)
    fields = {"rf_field": ("potential_per_V0", ev.rf_field), "static_field": ("potential_V", ev.static_field)}
    for stem, (column, f) in fields.items():
        if fmt in ("csv", "both"):
            out.call(f"{stem}.csv", lambda p, f=f, c=column: write_field_csv(p, f, c))
        if fmt in ("binary", "both"):
            out.call(f"{stem}.bin", lambda p, f=f: write_field_binary(p, f))
    out.json("fit.json", {
        "design_params": _params_dict(params),
        "geometry": ev.geometry.to_dict(),
        "trap_center_r_m": ev.trap_center_R,
        "ell_rf_m": ev.ell_rf,
        "chi2_rf_V2m2": ev.chi2_rf,
        "ell_static_m": ev.ell_static,
        "chi2_static_V2m2": ev.chi2_static,
        "voltages_V": ev.voltages.to_dict(),
        "static_saddle_residual_V_per_m": ev.saddle_residual,
        "rf_fit": ev.rf_fit.to_dict(),
        "static_fit": ev.static_fit.to_dict(),
        "grid": {"h_m": econf.h, "far_field_factor": econf.far_field_factor, "far_field_bc": econf.far_field_bc},
    })
    out.json("pseudo.json", {
        **pseudo.summary(),
        "species": species.name,
        "mass_u": species.mass,
        "charge_e": species.charge,
        "V0_V": drive.V0,
        "drive_frequency_Hz": drive.omega_T / (2 * math.pi),
        "static_scale": static_scale,
        "secular_radial_Hz": omega_s / (2 * math.pi),
        "secular_axial_Hz": omega_z / (2 * math.pi),
        "alpha": alpha,
    })
    return out


def cmd_optimize(cfg, args):
    block = cfg.get("optimizer", {})
    _check_keys(block, {"budget", "seed", "step_scales", "weight_rf", "halve_after",
                        "min_step_fraction", "stop_after", "bounds"}, "optimizer")
    if args.seed is not None:
        seed = args.seed
    elif "seed" in block:
        seed = _number(block, "seed", "optimizer", integer=True)
    else:
        raise ConfigError("optimize needs an explicit seed (--seed or optimizer.seed)")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    budget = args.budget if args.budget is not None else _number(block, "budget", "optimizer", 200, integer=True)
    if budget < 0:
        raise ConfigError("budget must be >= 0")

    if "geometry" in cfg:
        initial, radii, setback = parse_geometry(cfg["geometry"])
    else:
        initial, radii, setback = TABLE1_PARAMS, ElectrodeRadii(), DEFAULT_SETBACK
    econf = parse_eval_config(cfg, args, radii, setback)

    bounds = dict(DEFAULT_BOUNDS)
    raw_bounds = block.get("bounds", {})
    _check_keys(raw_bounds, set(DEFAULT_BOUNDS), "optimizer.bounds")
    for name, pair in raw_bounds.items():
        if not (isinstance(pair, list) and len(pair) == 2 and pair[0] < pair[1]):
            raise ConfigError(f"'optimizer.bounds.{name}' must be [lo, hi] with lo < hi")
        bounds[name] = (float(pair[0]), float(pair[1]))
    base = OptimizerConfig()
    steps = block.get("step_scales", list(base.step_scales))
    if not (isinstance(steps, list) and len(steps) == 4):
        raise ConfigError("'optimizer.step_scales' must be a list of four numbers")
    try:
        oconf = OptimizerConfig(
            evaluation=econf,
            step_scales=tuple(float(s) for s in steps),
            weight_rf=_number(block, "weight_rf", "optimizer", base.weight_rf),
            halve_after=_number(block, "halve_after", "optimizer", base.halve_after, positive=True, integer=True),
            min_step_fraction=_number(block, "min_step_fraction", "optimizer", base.min_step_fraction, positive=True),
            stop_after=_number(block, "stop_after", "optimizer", base.stop_after, positive=True, integer=True),
            bounds=bounds,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer block: {exc}") from exc

    report = optimize(initial, budget=budget, seed=seed, config=oconf)
    out = Outputs(args.out_dir)
    out.json("report.json", report.to_dict())
    out.text("trace.csv", report.trace_csv())
    return out


def cmd_phase(cfg, args):
    block = cfg.get("phase", {})
    _check_keys(block, {"alpha_range", "r0_range", "resolution"}, "phase")
    ranges = {}
    for key, default in (("alpha_range", [0.1, 3.0]), ("r0_range", [0.05, 2.0])):
        pair = block.get(key, default)
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, (int, float)) for v in pair)):
            raise ConfigError(f"'phase.{key}' must be [lo, hi]")
        ranges[key] = (float(pair[0]), float(pair[1]))
    resolution = args.resolution if args.resolution is not None else _number(
        block, "resolution", "phase", 20, integer=True)
    try:
        alphas, r0s = crystal.sweep_axes(ranges["alpha_range"], ranges["r0_range"], resolution)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    states = crystal.phase_map(alphas, r0s)
    out = Outputs(args.out_dir)
    out.text("phase_map.csv", crystal.phase_map_csv(states))
    out.text("phase_boundary.csv", crystal.boundary_csv(alphas))
    return out


def species_table(rows):
    lines = ["ion,omega_r_Hz,r_star_um"]
    for i, row in enumerate(rows):
        where = f"species[{i}]"
        _check_keys(row, {"ion", "mass_u", "mass_kg", "charge_e", "charge_C", "omega_r_Hz"}, where)
        sp = parse_species({k: v for k, v in row.items() if k not in ("ion", "omega_r_Hz")}, where)
        f_r = _number(row, "omega_r_Hz", where, positive=True)
        name = str(row.get("ion", ""))
        if "," in name or '"' in name:
            raise ConfigError(f"'{where}.ion' must not contain commas or quotes")
        r = crystal.r_star(sp, 2 * math.pi * f_r)
        lines.append(f"{name},{f_r!r},{r * 1e6:.6f}")
    return "\n".join(lines) + "\n"


def cmd_species(cfg, args):
    rows = cfg.get("species", DEFAULT_SPECIES_TABLE)
    if not isinstance(rows, list):
        raise ConfigError("'species' must be a list")
    out = Outputs(args.out_dir)
    out.text("species.csv", species_table(rows))
    return out


def cmd_geometry(cfg, args):
    """Emit geometry.json from the config, or with --check validate a file
    previously emitted (its design_params must match its spacings)."""
    if args.check is None:
        params, radii, setback = parse_geometry(cfg.get("geometry", _params_dict(TABLE1_PARAMS)))
        geom = build_geometry(params, radii, setback)
        boundary_segments(geom)
        out = Outputs(args.out_dir)
        out.json("geometry.json", {**geom.to_dict(), "design_params": _params_dict(params)})
        return out
    try:
        with open(args.check) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {args.check}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("geometry file must hold a JSON object")
    claimed = data.pop("design_params", None)
    try:
        geom = TrapGeometry.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid geometry file: {exc}") from exc
    boundary_segments(geom)
    derived = _params_dict(design_params(geom))
    if claimed is not None:
        _check_keys(claimed, set(derived), "design_params")
        for key, value in derived.items():
            if key not in claimed or not math.isclose(claimed[key], value, rel_tol=1e-9, abs_tol=1e-12):
                raise ConfigError(f"design_params.{key} disagrees with the spacings (expected {value!r})")
    print(json.dumps({"valid": True, "design_params": derived}, sort_keys=True))
    return Outputs(args.out_dir)


COMMANDS = {
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "phase": cmd_phase,
    "species": cmd_species,
    "geometry": cmd_geometry,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")

    parser = argparse.ArgumentParser(prog="halotrap", description="Halo RF ion-trap design tools")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("evaluate", parents=[common], help="solve, fit and compute the pseudopotential")
    p.add_argument("--h", type=float, help="grid spacing [m]")
    p = sub.add_parser("optimize", parents=[common], help="Monte Carlo design search")
    p.add_argument("--h", type=float, help="grid spacing [m]")
    p.add_argument("--budget", type=int, help="number of proposals")
    p = sub.add_parser("phase", parents=[common], help="two-ion phase map")
    p.add_argument("--resolution", type=int, help="points per axis")
    sub.add_parser("species", parents=[common], help="r_star table")
    p = sub.add_parser("geometry", parents=[common], help="emit or validate geometry JSON")
    p.add_argument("--check", help="geometry JSON to validate")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        outputs = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"halotrap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"halotrap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (HaloTrapError, ValueError) as exc:
        print(f"halotrap: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outputs.commit()
    except OSError as exc:
        print(f"halotrap: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
