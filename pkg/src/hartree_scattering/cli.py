"""Command-line driver for the scattering toolkit.

Subcommands
-----------
``evolve``
    Integrate one profile under the interacting flow and record the
    conservation ledger at every stored sample.
``scatter``
    Asymptotic free profile of the interacting flow (forward direction),
    with the horizon-tail bound and a profile-convergence table.
``wave``
    Reconstruct the time-zero state whose asymptotic profile is the
    given target (inverse direction), optionally closing the loop with a
    roundtrip defect check.
``hierarchy``
    Solve the perturbation tower around a background state, report the
    per-order norm ledger and geometric rate, and verify the expansion
    remainder at the requested amplitudes.
``scaling``
    Sweep the quartic free-flow functional along the amplitude/dilation
    family and fit the scaling exponent.
``breakdown``
    Lower-bound experiments for the two scaling regimes (around zero
    data and around a small background state).
``gronwall``
    Run the discrete recursion majorant check.

Conventions shared by every subcommand:

* options resolve as built-in defaults < ``--config`` JSON file <
  explicit flags, and the fully resolved configuration (every numeric
  default included) is echoed to stdout and ``config_echo.json`` before
  any computation starts;
* given the same resolved configuration, a rerun rewrites byte-identical
  outputs — wall-clock metadata is quarantined in ``run_meta.json``;
* exit status 0 means success, 1 means the configuration was rejected
  (every violated constraint is listed on stderr), and 2 means a runtime
  alarm (conservation breach, wrap-around, failed contraction, or a
  falsified majorant).

The ``--config`` file is a flat JSON object whose keys are the option
names of the chosen subcommand with underscores (e.g. ``record_every``);
schedules may be JSON arrays or comma-separated strings.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from .experiments import (
    breakdown_off_origin,
    breakdown_origin,
    fit_exponents,
    free_energy_report,
    make_scaled,
    sigma_law_horizon,
)
from .fieldio import write_csv, write_field, write_json, write_trajectory
from .functionals import weighted_norms
from .hierarchy import (
    PicardDivergence,
    build_hierarchy,
    extract_plus,
    gronwall_sequence,
    verify_remainder,
)
from .propagator import (
    ConservationAlarm,
    SolverConfig,
    Trajectory,
    WrapAroundAlarm,
    evolve,
)
from .scattering import horizon_tail, roundtrip_check, wave_operator
from .spectral_core import (
    ComplexField,
    POSITION,
    dual_grid,
    free_propagate,
    make_grid,
    make_kernel,
)

__all__ = ["RunConfig", "ConfigError", "main", "run"]

SUBCOMMANDS = ("evolve", "scatter", "wave", "hierarchy", "scaling",
               "breakdown", "gronwall")


# ---------------------------------------------------------------------------
# option tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Option:
    """One CLI option: flag, config-file key, type and default."""

    name: str
    kind: str          # int | float | floats | str | flag | optional-float
    default: object
    help: str
    choices: tuple[str, ...] | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _meta(sub: str) -> list[_Option]:
    return [
        _Option("output_dir", "str", f"runs/{sub}",
                "directory receiving every output file"),
        _Option("threads", "int", 1,
                "worker threads over independent schedule points"),
        _Option("seed", "int", 0,
                "seed for the pseudo-random profile generator"),
    ]


def _grid(points: int, box: float) -> list[_Option]:
    return [
        _Option("dim", "int", 2, "spatial dimension (the interaction "
                "kernel needs dim 2)"),
        _Option("points", "int", points, "grid points per axis "
                "(power of two, at least 16)"),
        _Option("box", "float", box, "half box length L"),
        _Option("gamma", "float", 1.5,
                "interaction exponent, inside (4/3, 2)"),
    ]


def _profile(amplitude: float) -> list[_Option]:
    return [
        _Option("profile", "str", "gaussian",
                "initial profile family", ("gaussian", "random")),
        _Option("width", "float", 1.0, "profile length scale"),
        _Option("amplitude", "float", amplitude, "profile peak amplitude"),
    ]


def _solver(dt: float, horizon: float, record_every: int,
            tol_energy: float, tol_wrap: float) -> list[_Option]:
    return [
        _Option("dt", "float", dt, "time step"),
        _Option("horizon", "float", horizon,
                "final time T (must be an integer multiple of dt)"),
        _Option("record_every", "int", record_every,
                "store every k-th step"),
        _Option("splitting", "int", 2,
                "splitting order of the integrator (2 or 4)"),
        _Option("tol_mass", "float", 1e-8, "relative mass-drift alarm"),
        _Option("tol_energy", "float", tol_energy,
                "relative energy-drift alarm"),
        _Option("tol_wrap", "float", tol_wrap,
                "alarm on the mass fraction beyond radius L/2"),
    ]


_CHECKPOINT = _Option("checkpoint", "flag", False,
                      "store binary field/trajectory containers")
_RULE = _Option("rule", "str", "trapezoid",
                "time-quadrature rule for the source integrals",
                ("trapezoid", "simpson"))
_PICARD_TOL = _Option("picard_tol", "float", 1e-8,
                      "fixed-point iteration tolerance")

_OPTIONS: dict[str, list[_Option]] = {
    "evolve": [
        *_grid(64, 16.0), *_profile(0.5),
        *_solver(0.01, 1.0, 10, 1e-4, 1e-3),
        _CHECKPOINT, *_meta("evolve"),
    ],
    "scatter": [
        *_grid(128, 24.0), *_profile(0.2),
        *_solver(0.02, 2.0, 5, 1e-4, 1e-3),
        _Option("small_data_radius", "optional-float", None,
                "reject data above this weighted norm (off when unset)"),
        _CHECKPOINT, *_meta("scatter"),
    ],
    "wave": [
        *_grid(64, 16.0), *_profile(0.2),
        *_solver(0.02, 2.0, 5, 1e-4, 5e-2),
        _PICARD_TOL,
        _Option("max_iter", "int", 60, "fixed-point iteration budget"),
        _Option("small_data_radius", "optional-float", None,
                "reject targets above this weighted norm (off when unset)"),
        _Option("roundtrip", "flag", False,
                "also measure both operator-composition defects"),
        _Option("roundtrip_tolerance", "float", 1e-3,
                "relative defect the roundtrip must beat"),
        _CHECKPOINT, *_meta("wave"),
    ],
    "hierarchy": [
        *_grid(64, 12.0), *_profile(1.0),
        _Option("background_amplitude", "float", 0.0,
                "peak amplitude of the background state (0 = expand "
                "around zero)"),
        _Option("background_width", "float", 1.5,
                "length scale of the background state"),
        *_solver(0.02, 2.0, 5, 1e-3, 0.5),
        _Option("order", "int", 3, "depth of the coefficient tower"),
        _Option("epsilons", "floats", (0.01,),
                "perturbation amplitudes for the remainder check"),
        _RULE, _PICARD_TOL, _CHECKPOINT, *_meta("hierarchy"),
    ],
    "scaling": [
        _Option("mode", "str", "sigma",
                "which exponent to fit: amplitude (eps) or dilation "
                "(sigma)", ("eps", "sigma")),
        *_grid(512, 144.0), *_profile(1.0),
        _Option("epsilons", "floats", (0.05, 0.1, 0.2, 0.4),
                "amplitude schedule (eps mode)"),
        _Option("sigmas", "floats", (2.0, 4.0, 8.0),
                "dilation schedule (sigma mode)"),
        _Option("eps", "float", 0.1,
                "frozen amplitude used in sigma mode"),
        _Option("tail_share", "float", 0.045,
                "analytic tail share the quadrature horizon targets"),
        _Option("quad_direct", "int", 24,
                "quadrature nodes before the dual-route switch"),
        _Option("quad_lens", "int", 96,
                "geometric quadrature nodes after the switch"),
        *_meta("scaling"),
    ],
    "breakdown": [
        _Option("variant", "str", "origin",
                "expansion point of the experiment", ("origin", "off-origin")),
        *_grid(64, 12.0), *_profile(1.0),
        _Option("background_amplitude", "float", 0.1,
                "peak amplitude of the background state (off-origin)"),
        _Option("background_width", "float", 1.5,
                "length scale of the background state (off-origin)"),
        _Option("j", "float", 2.3, "coupling exponent of eps = sigma^(-j)"),
        _Option("s", "float", 2.9, "norm power in the ratio denominator"),
        _Option("sigmas", "floats", (4.0, 8.0, 16.0), "dilation schedule"),
        _Option("eps", "optional-float", None,
                "freeze the amplitude instead of coupling it (off-origin)"),
        _Option("radius", "optional-float", None,
                "small-data radius override (off-origin)"),
        _Option("horizon_scale", "optional-float", None,
                "run each sigma to horizon_scale * sigma^2 (off-origin)"),
        *_solver(0.02, 2.0, 5, 1e-3, 0.5),
        _RULE, _PICARD_TOL, *_meta("breakdown"),
    ],
    "gronwall": [
        _Option("C", "float", 1.0, "recursion constant"),
        _Option("a1", "float", 0.5, "first coefficient"),
        _Option("N", "int", 50, "highest order to compute"),
        _Option("a0", "float", 0.0,
                "zeroth coefficient (index_base 0 only)"),
        _Option("index_base", "int", 0,
                "lowest index in the recursion triples (0 or 1)"),
        *_meta("gronwall"),
    ],
}

# defaults that flip when breakdown runs around a background state
_OFF_ORIGIN_DEFAULTS: dict[str, object] = {
    "points": 128,
    "box": 36.0,
    "j": 3.6,
    "sigmas": (1.5, 2.0),
}

_HELP = {
    "evolve": "integrate one profile and record conservation ledgers",
    "scatter": "asymptotic profile of the interacting flow",
    "wave": "time-zero state matching a prescribed asymptotic profile",
    "hierarchy": "perturbation tower with remainder verification",
    "scaling": "amplitude/dilation sweeps of the free-flow functional",
    "breakdown": "lower-bound experiments for the two scaling regimes",
    "gronwall": "discrete recursion majorant check",
}


# ---------------------------------------------------------------------------
# parsing, merging, validation
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    """A rejected configuration; ``problems`` lists every violation."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = tuple(problems)


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved, immutable run request."""

    subcommand: str
    options: Mapping[str, object]

    def __post_init__(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        object.__setattr__(self, "options",
                           MappingProxyType(dict(self.options)))

    def __getitem__(self, key: str):
        return self.options[key]

    @property
    def output_dir(self) -> Path:
        return Path(str(self.options["output_dir"]))

    def echo_payload(self) -> dict:
        payload: dict[str, object] = {"subcommand": self.subcommand}
        payload.update({k: self.options[k] for k in sorted(self.options)})
        return payload


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hartree",
        description="pseudospectral toolkit for the defocusing Hartree "
                    "flow: scattering operators, perturbation towers and "
                    "scaling experiments")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for sub, options in _OPTIONS.items():
        sp = subparsers.add_parser(sub, help=_HELP[sub])
        sp.add_argument("--config", type=str, default=None,
                        help="JSON file with option defaults (flags win)")
        for opt in options:
            if opt.kind == "flag":
                sp.add_argument(opt.flag, dest=opt.name,
                                action="store_const", const=True,
                                default=None, help=opt.help)
            elif opt.kind == "int":
                sp.add_argument(opt.flag, dest=opt.name, type=int,
                                default=None, help=opt.help)
            elif opt.kind in ("float", "optional-float"):
                sp.add_argument(opt.flag, dest=opt.name, type=float,
                                default=None, help=opt.help)
            elif opt.kind == "floats":
                sp.add_argument(opt.flag, dest=opt.name, type=str,
                                default=None, metavar="A,B,...",
                                help=opt.help)
            else:
                sp.add_argument(opt.flag, dest=opt.name, type=str,
                                choices=opt.choices, default=None,
                                help=opt.help)
    return parser


def _coerce(opt: _Option, value, problems: list[str]):
    """Normalize one merged option value to its declared type."""
    label = f"{opt.name}={value!r}"
    if opt.kind == "flag":
        if isinstance(value, bool):
            return value
        problems.append(f"{label} must be a boolean")
    elif opt.kind == "int":
        if isinstance(value, bool):
            problems.append(f"{label} must be an integer")
        elif isinstance(value, int):
            return value
        elif isinstance(value, float) and value == int(value):
            return int(value)
        else:
            problems.append(f"{label} must be an integer")
    elif opt.kind == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        problems.append(f"{label} must be a number")
    elif opt.kind == "optional-float":
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        problems.append(f"{label} must be a number or null")
    elif opt.kind == "floats":
        items: Sequence = ()
        if isinstance(value, str):
            items = [part for part in value.split(",") if part.strip()]
        elif isinstance(value, (list, tuple)):
            items = value
        else:
            problems.append(f"{label} must be a comma-separated list")
            return None
        try:
            parsed = tuple(float(item) for item in items)
        except (TypeError, ValueError):
            problems.append(f"{label} must list numbers")
            return None
        if not parsed:
            problems.append(f"{opt.name} must list at least one value")
            return None
        return parsed
    else:  # str with choices
        if isinstance(value, str) and (opt.choices is None
                                       or value in opt.choices):
            return value
        problems.append(
            f"{label} must be one of {', '.join(opt.choices or ())}")
    return None


def _load_config_file(path: str, allowed: Mapping[str, _Option],
                      problems: list[str]) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        problems.append(f"config file {path}: {exc.strerror or exc}")
        return {}
    except json.JSONDecodeError as exc:
        problems.append(f"config file {path} is not valid JSON: {exc}")
        return {}
    if not isinstance(raw, dict):
        problems.append(f"config file {path} must hold a JSON object")
        return {}
    payload = {}
    for key, value in raw.items():
        if key not in allowed:
            problems.append(f"config file {path}: unknown option {key!r}")
        else:
            payload[key] = value
    return payload


def resolve_config(namespace: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file and flags into a typed RunConfig."""
    sub = namespace.subcommand
    table = {opt.name: opt for opt in _OPTIONS[sub]}
    problems: list[str] = []

    explicit = {name: getattr(namespace, name) for name in table
                if getattr(namespace, name, None) is not None}
    file_options = {}
    if getattr(namespace, "config", None):
        file_options = _load_config_file(namespace.config, table, problems)

    merged = {name: opt.default for name, opt in table.items()}
    if sub == "breakdown":
        variant = explicit.get("variant") or file_options.get("variant") \
            or merged["variant"]
        if variant == "off-origin":
            merged.update(_OFF_ORIGIN_DEFAULTS)
    merged.update(file_options)
    merged.update(explicit)

    options = {}
    for name, opt in table.items():
        options[name] = _coerce(opt, merged[name], problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(sub, options)


def _validate_grid(o: Mapping, problems: list[str]) -> None:
    dim, n, box, gamma = o["dim"], o["points"], o["box"], o["gamma"]
    if dim not in (1, 2):
        problems.append(f"d must be 1 or 2, got {dim}")
    if n < 16 or (n & (n - 1)) != 0:
        problems.append(f"n must be a power of two >= 16, got {n}")
    if not (box > 0.0 and math.isfinite(box)):
        problems.append(f"L must be positive, got {box}")
    if not (4.0 / 3.0 < gamma < 2.0):
        problems.append(f"gamma must lie in (4/3, 2), got {gamma}")
    elif dim in (1, 2) and not gamma < dim:
        problems.append(
            f"gamma must be smaller than the dimension for the Riesz "
            f"symbol (gamma={gamma}, d={dim})")


def _validate_profile(o: Mapping, problems: list[str]) -> None:
    if not (o["width"] > 0.0 and math.isfinite(o["width"])):
        problems.append(f"width must be positive, got {o['width']}")
    if not (o["amplitude"] >= 0.0 and math.isfinite(o["amplitude"])):
        problems.append(
            f"amplitude must be nonnegative, got {o['amplitude']}")


def _validate_solver(o: Mapping, problems: list[str]) -> None:
    dt, horizon = o["dt"], o["horizon"]
    if not (dt > 0.0 and math.isfinite(dt)):
        problems.append(f"dt must be positive and finite, got {dt}")
    if not (horizon > 0.0 and math.isfinite(horizon)):
        problems.append(f"horizon must be positive and finite, got {horizon}")
    elif dt > 0.0 and math.isfinite(dt):
        steps = horizon / dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            problems.append(
                f"t_span length {horizon} is not an integer multiple "
                f"of dt={dt}")
    if o["record_every"] < 1:
        problems.append(
            f"record_every must be >= 1, got {o['record_every']}")
    if o["splitting"] not in (2, 4):
        problems.append(f"order must be 2 or 4, got {o['splitting']}")
    for name in ("tol_mass", "tol_energy", "tol_wrap"):
        tol = o[name]
        if not 0.0 < tol < 1.0:
            problems.append(f"{name} must lie in (0, 1), got {tol}")


def _validate_meta(o: Mapping, problems: list[str]) -> None:
    if o["threads"] < 1:
        problems.append(f"threads must be >= 1, got {o['threads']}")


def validate(config: RunConfig) -> list[str]:
    """Every violated static constraint of the resolved configuration."""
    o = config.options
    problems: list[str] = []
    sub = config.subcommand
    _validate_meta(o, problems)
    if sub != "gronwall":
        _validate_grid(o, problems)
        _validate_profile(o, problems)
    if sub in ("evolve", "scatter", "wave", "hierarchy", "breakdown"):
        _validate_solver(o, problems)
    if sub in ("wave", "hierarchy", "breakdown"):
        if not 0.0 < o["picard_tol"] < 1.0:
            problems.append(
                f"picard_tol must lie in (0, 1), got {o['picard_tol']}")
    if sub == "wave":
        if o["max_iter"] < 1:
            problems.append(f"max_iter must be >= 1, got {o['max_iter']}")
        if not o["roundtrip_tolerance"] > 0.0:
            problems.append(
                f"roundtrip_tolerance must be positive, got "
                f"{o['roundtrip_tolerance']}")
    if sub == "hierarchy":
        if o["order"] < 1:
            problems.append(f"order must be >= 1, got {o['order']}")
        if any(not (eps > 0.0 and math.isfinite(eps))
               for eps in o["epsilons"]):
            problems.append(
                f"every eps must be positive and finite, got "
                f"{list(o['epsilons'])}")
        if o["background_amplitude"] < 0.0:
            problems.append(
                f"background_amplitude must be nonnegative, got "
                f"{o['background_amplitude']}")
    if sub == "scaling":
        if not 0.0 < o["tail_share"] < 0.05:
            problems.append(
                f"tail_share must lie in (0, 0.05), got {o['tail_share']}")
        if o["quad_direct"] < 2 or o["quad_lens"] < 2:
            problems.append(
                "quad_direct and quad_lens must both be >= 2, got "
                f"{o['quad_direct']} and {o['quad_lens']}")
        if o["mode"] == "eps":
            schedule = o["epsilons"]
            if len(schedule) < 3:
                problems.append(
                    f"at least 3 amplitudes are needed to fit the "
                    f"exponent, got {len(schedule)}")
            if any(not (eps > 0.0 and math.isfinite(eps))
                   for eps in schedule):
                problems.append(
                    f"every eps must be positive and finite, got "
                    f"{list(schedule)}")
        else:
            schedule = o["sigmas"]
            if len(schedule) < 3:
                problems.append(
                    f"at least 3 dilations are needed to fit the "
                    f"exponent, got {len(schedule)}")
            if any(not (s >= 1.0 and math.isfinite(s)) for s in schedule):
                problems.append(
                    f"every sigma must be >= 1 and finite, got "
                    f"{list(schedule)}")
            if not (o["eps"] > 0.0 and math.isfinite(o["eps"])):
                problems.append(
                    f"eps must be positive and finite, got {o['eps']}")
    if sub == "breakdown":
        if o["background_amplitude"] < 0.0:
            problems.append(
                f"background_amplitude must be nonnegative, got "
                f"{o['background_amplitude']}")
        for name in ("j", "s"):
            if not math.isfinite(o[name]):
                problems.append(f"{name} must be finite, got {o[name]}")
    if sub == "gronwall":
        if not (o["C"] > 0.0 and o["a1"] > 0.0):
            problems.append(
                f"C and a1 must be positive, got C={o['C']}, a1={o['a1']}")
        if o["N"] < 1:
            problems.append(f"N must be >= 1, got {o['N']}")
        if o["a0"] < 0.0:
            problems.append(f"a0 must be nonnegative, got {o['a0']}")
        if o["index_base"] not in (0, 1):
            problems.append(
                f"index_base must be 0 or 1, got {o['index_base']}")
        if o["index_base"] == 1 and o["a0"] != 0.0:
            problems.append("a0 is meaningful only with index_base=0")
    return problems


# ---------------------------------------------------------------------------
# profile construction
# ---------------------------------------------------------------------------

def _gaussian_values(grid, width: float, amplitude: float,
                     center: np.ndarray | None = None) -> np.ndarray:
    if center is None:
        r2 = grid.r_squared
    else:
        axes = np.meshgrid(*([grid.x1d] * grid.d), indexing="ij")
        r2 = sum((ax - c) ** 2 for ax, c in zip(axes, center))
    return amplitude * np.exp(-r2 / (2.0 * width**2)).astype(np.complex128)


def build_profile(grid, kind: str, width: float, amplitude: float,
                  seed: int) -> ComplexField:
    """Deterministic initial profile: one Gaussian, or a seeded cluster."""
    if amplitude == 0.0:
        return ComplexField(grid, np.zeros(grid.shape, dtype=np.complex128),
                            POSITION)
    if kind == "gaussian":
        return ComplexField(grid, _gaussian_values(grid, width, amplitude),
                            POSITION)
    rng = np.random.default_rng(seed)
    bumps = 3
    centers = rng.uniform(-grid.L / 6.0, grid.L / 6.0, size=(bumps, grid.d))
    widths = width * rng.uniform(0.8, 1.25, size=bumps)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=bumps)
    weights = rng.uniform(0.5, 1.0, size=bumps)
    values = np.zeros(grid.shape, dtype=np.complex128)
    for c, w, phase, weight in zip(centers, widths, phases, weights):
        values += weight * np.exp(1j * phase) \
            * _gaussian_values(grid, float(w), 1.0, c)
    values *= amplitude / float(np.max(np.abs(values)))
    return ComplexField(grid, values, POSITION)


def _grid_kernel(o: Mapping):
    grid = make_grid(o["dim"], o["points"], o["box"])
    return grid, make_kernel(grid, o["gamma"])


def _solver_config(o: Mapping, **extra) -> SolverConfig:
    return SolverConfig(
        dt=o["dt"], t_span=(0.0, o["horizon"]),
        record_every=o["record_every"], tol_mass=o["tol_mass"],
        tol_energy=o["tol_energy"], tol_wrap=o["tol_wrap"],
        order=o["splitting"], **extra)


def _norms_payload(u: ComplexField) -> dict:
    return dict(weighted_norms(u).values)


# ---------------------------------------------------------------------------
# subcommand executors
# ---------------------------------------------------------------------------

def _conservation_rows(traj: Trajectory) -> list[tuple]:
    return [(led.time, led["mass"], led["energy"], led["Q"])
            for led in traj.ledger_series]


def _drift(rows: list[tuple], index: int) -> dict:
    start, end = rows[0][index], rows[-1][index]
    scale = abs(start)
    drift = abs(end - start) / scale if scale > 0.0 else abs(end)
    return {"initial": start, "final": end, "relative_drift": drift}


def _run_evolve(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    grid, K = _grid_kernel(o)
    u0 = build_profile(grid, o["profile"], o["width"], o["amplitude"],
                       o["seed"])
    traj = evolve(u0, _solver_config(o), K)
    rows = _conservation_rows(traj)
    write_csv(out / "conservation.csv", ["time", "mass", "energy", "Q"],
              rows)
    summary = {
        "alarm": None,
        "samples": len(traj.times),
        "final_time": float(traj.times[-1]),
        "mass": _drift(rows, 1),
        "energy": _drift(rows, 2),
        "final_norms": _norms_payload(traj.final),
    }
    lines = [f"evolve: reached t={traj.times[-1]:g} with relative drifts "
             f"mass {summary['mass']['relative_drift']:.3e}, "
             f"energy {summary['energy']['relative_drift']:.3e}"]
    if o["checkpoint"]:
        write_trajectory(out / "trajectory.htrj", traj)
        lines.append(f"wrote {out / 'trajectory.htrj'}")
    return summary, lines


def _extract_with_mode(traj: Trajectory, gamma: float):
    try:
        return extract_plus(traj, gamma), "richardson"
    except ValueError:
        return extract_plus(traj, gamma, extrapolate=False,
                            cauchy_check=False), "truncation"


def _run_scatter(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    grid, K = _grid_kernel(o)
    u0 = build_profile(grid, o["profile"], o["width"], o["amplitude"],
                       o["seed"])
    cfg = _solver_config(o, small_data_radius=o["small_data_radius"])
    if cfg.small_data_radius is not None:
        sigma_norm = weighted_norms(u0).values["Sigma"]
        if sigma_norm > cfg.small_data_radius:
            raise ConfigError([
                f"initial data has weighted norm {sigma_norm:.6g}, above "
                f"the small-data radius {cfg.small_data_radius:.6g}"])
    traj = evolve(u0, cfg, K)
    u_plus, mode = _extract_with_mode(traj, K.gamma)
    T_used = float(traj.times[-1])
    plus_l2 = u_plus.l2()
    scale = plus_l2 if plus_l2 > 0.0 else 1.0
    conv_rows = []
    for t, field in zip(traj.times, traj.fields):
        profile = free_propagate(field, -float(t))
        dist = ComplexField(grid, profile.values - u_plus.values,
                            POSITION).l2()
        conv_rows.append((float(t), dist / scale))
    write_csv(out / "conservation.csv", ["time", "mass", "energy", "Q"],
              _conservation_rows(traj))
    write_csv(out / "profile_convergence.csv",
              ["time", "relative_profile_distance"], conv_rows)
    summary = {
        "alarm": None,
        "T_used": T_used,
        "tail_estimate": horizon_tail(traj.final, K, T_used),
        "extraction": mode,
        "initial_norms": _norms_payload(u0),
        "asymptotic_norms": _norms_payload(u_plus),
        "final_profile_distance": conv_rows[-1][1],
    }
    lines = [f"scatter: horizon T={T_used:g}, tail bound "
             f"{summary['tail_estimate']:.3e}, extraction {mode}"]
    if o["checkpoint"]:
        write_field(out / "u_plus.hfld", u_plus, gamma=K.gamma)
        write_trajectory(out / "trajectory.htrj", traj)
        lines.append(f"wrote {out / 'u_plus.hfld'}")
    return summary, lines


def _run_wave(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    grid, K = _grid_kernel(o)
    target = build_profile(grid, o["profile"], o["width"], o["amplitude"],
                           o["seed"])
    cfg = _solver_config(o, small_data_radius=o["small_data_radius"])
    result = wave_operator(target, cfg, K, tol=o["picard_tol"],
                           max_iter=o["max_iter"])
    reconstructed = result.u_plus
    norm_rows = [
        ("target", *(weighted_norms(target).values[k]
                     for k in ("L2", "grad_L2", "x_L2", "H1", "FH1",
                               "Sigma"))),
        ("reconstructed", *(weighted_norms(reconstructed).values[k]
                            for k in ("L2", "grad_L2", "x_L2", "H1", "FH1",
                                      "Sigma"))),
    ]
    write_csv(out / "norms.csv",
              ["state", "L2", "grad_L2", "x_L2", "H1", "FH1", "Sigma"],
              norm_rows)
    summary = {
        "alarm": None,
        "iterations": result.iterations,
        "contraction": result.contraction,
        "T_used": result.T_used,
        "tail_estimate": result.tail_estimate,
        "target_norms": _norms_payload(target),
        "reconstructed_norms": _norms_payload(reconstructed),
    }
    lines = [f"wave: converged in {result.iterations} iterations "
             f"(first contraction {result.contraction:.3f})"]
    if o["roundtrip"]:
        report = roundtrip_check(target, cfg, K,
                                 tolerance=o["roundtrip_tolerance"],
                                 tol=o["picard_tol"])
        summary["roundtrip"] = {
            "forward_error": report.forward_error,
            "reverse_error": report.reverse_error,
            "tolerance": report.tolerance,
            "passed": report.passed,
        }
        lines.append(
            f"roundtrip: forward {report.forward_error:.3e}, reverse "
            f"{report.reverse_error:.3e} against tolerance "
            f"{report.tolerance:g}")
        if not report.passed:
            summary["alarm"] = (
                f"roundtrip defect above tolerance {report.tolerance:g}: "
                f"forward {report.forward_error:.3e}, reverse "
                f"{report.reverse_error:.3e}")
    if o["checkpoint"]:
        write_field(out / "reconstructed.hfld", reconstructed,
                    gamma=K.gamma)
        lines.append(f"wrote {out / 'reconstructed.hfld'}")
    return summary, lines


def _run_hierarchy(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    grid, K = _grid_kernel(o)
    v = build_profile(grid, o["profile"], o["width"], o["amplitude"],
                      o["seed"])
    u0 = build_profile(grid, "gaussian", o["background_width"],
                       o["background_amplitude"], o["seed"])
    cfg = _solver_config(o)
    coeffs = build_hierarchy(u0, v, K, cfg, o["order"],
                             tol=o["picard_tol"], rule=o["rule"])
    rows = verify_remainder(u0, v, o["epsilons"], K, cfg, o["order"],
                            coeffs=coeffs, rule=o["rule"])
    mixed_key = next(key for key in coeffs.ledger[0].identifiers()
                     if key.startswith("spacetime-"))
    coeff_rows = []
    orders_payload = []
    for k in range(o["order"] + 1):
        led = coeffs.ledger[k]
        report = coeffs.reports[k - 1] if k >= 1 else None
        coeff_rows.append((
            k, led["sup_L2"], led[mixed_key], led["Y"],
            coeffs.extraction[k],
            report.iterations if report else 0,
            report.contraction if report else math.nan,
        ))
        orders_payload.append({
            "order": k,
            "sup_L2": led["sup_L2"],
            "mixed_spacetime": led[mixed_key],
            "Y": led["Y"],
            "extraction": coeffs.extraction[k],
            "iterations": report.iterations if report else 0,
            "contraction": report.contraction if report else None,
        })
    write_csv(out / "coefficients.csv",
              ["order", "sup_L2", "mixed_spacetime", "Y", "extraction",
               "iterations", "contraction"], coeff_rows)
    write_csv(out / "remainder.csv", ["eps", "N", "R", "ratio"],
              [(r.eps, r.N, r.R, r.ratio) for r in rows])
    summary = {
        "alarm": None,
        "lambda_fit": coeffs.Lambda_fit,
        "mixed_spacetime_norm": mixed_key,
        "orders": orders_payload,
        "remainder": [{"eps": r.eps, "N": r.N, "R": r.R, "ratio": r.ratio}
                      for r in rows],
    }
    lines = [f"hierarchy: solved orders 0..{o['order']}, geometric rate "
             f"{coeffs.Lambda_fit:.4g}"]
    for r in rows:
        if r.N == o["order"]:
            lines.append(
                f"remainder at eps={r.eps:g}: R_{r.N}={r.R:.3e} "
                f"(step ratio {r.ratio:.3e})")
    if o["checkpoint"]:
        for k, (traj, plus) in enumerate(zip(coeffs.w, coeffs.w_plus)):
            write_trajectory(out / f"w{k}.htrj", traj)
            write_field(out / f"w{k}_plus.hfld", plus, gamma=K.gamma)
        lines.append(f"wrote {o['order'] + 1} coefficient checkpoints")
    return summary, lines


def _run_scaling(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    grid, K = _grid_kernel(o)
    v = build_profile(grid, o["profile"], o["width"], o["amplitude"],
                      o["seed"])
    dual_kernel = make_kernel(dual_grid(grid), o["gamma"],
                              zero_mode_policy=K.zero_mode_policy)
    if o["mode"] == "eps":
        schedule = [(float(eps), 1.0) for eps in o["epsilons"]]
        model, predicted = "eps-power", 4.0
    else:
        schedule = [(float(o["eps"]), float(s)) for s in o["sigmas"]]
        model, predicted = "sigma-power", 2.0 - o["gamma"]

    def run_point(point: tuple[float, float]):
        eps, sigma = point
        scaled = make_scaled(v, eps, sigma)
        horizon = sigma_law_horizon(o["gamma"], sigma, o["width"],
                                    tail_share=o["tail_share"])
        report = free_energy_report(scaled, K, horizon,
                                    n_direct=o["quad_direct"],
                                    n_lens=o["quad_lens"],
                                    dual_kernel=dual_kernel)
        return (eps, sigma, report.value, report.partial,
                report.tail_estimate, horizon, int(report.reliable))

    if o["threads"] > 1:
        with ThreadPoolExecutor(max_workers=o["threads"]) as pool:
            rows = list(pool.map(run_point, schedule))
    else:
        rows = [run_point(point) for point in schedule]

    write_csv(out / "schedule.csv",
              ["eps", "sigma", "value", "partial", "tail", "horizon",
               "reliable"], rows)
    fit = fit_exponents([(r[0], r[1], r[2]) for r in rows], model)
    write_csv(out / "fit.csv",
              ["model", "slope", "intercept", "residual", "confidence",
               "n_points", "predicted_slope"],
              [(fit.model, fit.slope, fit.intercept, fit.residual,
                fit.confidence, fit.n_points, predicted)])
    unreliable = sum(1 for r in rows if not r[6])
    summary = {
        "alarm": None,
        "mode": o["mode"],
        "fit": fit.as_dict(),
        "predicted_slope": predicted,
        "unreliable_rows": unreliable,
        "rows": [{"eps": r[0], "sigma": r[1], "value": r[2],
                  "partial": r[3], "tail": r[4], "horizon": r[5],
                  "reliable": bool(r[6])} for r in rows],
    }
    lines = [f"scaling[{o['mode']}]: fitted exponent {fit.slope:.4f} "
             f"(predicted {predicted:.4f}, rms residual "
             f"{fit.residual:.2e})"]
    if unreliable:
        lines.append(f"warning: {unreliable} of {len(rows)} schedule "
                     f"points exceeded the tail-share budget")
    return summary, lines


def _run_breakdown(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    grid, K = _grid_kernel(o)
    v = build_profile(grid, o["profile"], o["width"], o["amplitude"],
                      o["seed"])
    cfg = _solver_config(o)
    if o["variant"] == "origin":
        experiment = breakdown_origin(
            v, o["gamma"], o["j"], o["sigmas"], o["s"], K, cfg,
            rule=o["rule"], tol=o["picard_tol"])
    else:
        u0 = build_profile(grid, "gaussian", o["background_width"],
                           o["background_amplitude"], o["seed"])
        experiment = breakdown_off_origin(
            u0, v, o["gamma"], o["j"], o["sigmas"], o["s"], K, cfg,
            eps=o["eps"], radius=o["radius"],
            horizon_scale=o["horizon_scale"], rule=o["rule"],
            tol=o["picard_tol"])
    csv_path = experiment.write_csv(out)
    json_path = experiment.write_json(out)
    summary = {
        "alarm": None,
        "variant": o["variant"],
        "stem": experiment.stem(),
        "files": [csv_path.name, json_path.name],
        "fits": {name: fit.as_dict()
                 for name, fit in experiment.fits.items()},
        "rows": len(experiment.rows),
    }
    lines = [f"breakdown[{o['variant']}]: {len(experiment.rows)} schedule "
             f"points -> {csv_path.name}"]
    for name, fit in experiment.fits.items():
        lines.append(f"fit {name}: slope {fit.slope:.4f} "
                     f"(rms residual {fit.residual:.2e})")
    return summary, lines


def _run_gronwall(o: Mapping, out: Path) -> tuple[dict, list[str]]:
    sequence = gronwall_sequence(o["C"], o["a1"], o["N"], a0=o["a0"],
                                 index_base=o["index_base"])
    orders = sequence.orders()
    weighted = (1.0 + orders.astype(float) ** 2) * sequence.a
    majorant = sequence.majorant()
    write_csv(out / "sequence.csv",
              ["order", "a", "weighted_a", "majorant", "margin"],
              list(zip(orders, sequence.a, weighted, majorant,
                       majorant - weighted)))
    summary = {
        "alarm": None,
        "C0": sequence.C0,
        "C1": sequence.C1,
        "C2": sequence.C2,
        "C0_empirical": sequence.C0_empirical,
        "plain_bound_holds": sequence.plain_bound_holds,
        "strengthened_bound_holds": sequence.strengthened_bound_holds,
        "orders": int(o["N"]),
    }
    if sequence.strengthened_bound_holds:
        verdict = (f"gronwall: weighted majorant holds through order "
                   f"{o['N']} (C0={sequence.C0:.4g}, smallest working "
                   f"C0={sequence.C0_empirical:.4g})")
    else:
        verdict = (f"gronwall: weighted majorant VIOLATED below order "
                   f"{o['N']}")
        summary["alarm"] = verdict
    return summary, [verdict]


_EXECUTORS: dict[str, Callable[[Mapping, Path], tuple[dict, list[str]]]] = {
    "evolve": _run_evolve,
    "scatter": _run_scatter,
    "wave": _run_wave,
    "hierarchy": _run_hierarchy,
    "scaling": _run_scaling,
    "breakdown": _run_breakdown,
    "gronwall": _run_gronwall,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _print_problems(problems: Sequence[str]) -> None:
    print("invalid configuration:", file=sys.stderr)
    for problem in problems:
        print(f"  - {problem}", file=sys.stderr)


def run(config: RunConfig, argv: Sequence[str] | None = None) -> int:
    """Echo, validate and execute one resolved run; returns exit status."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    echo = config.echo_payload()
    print("config " + json.dumps(echo, sort_keys=True))
    write_json(out / "config_echo.json", echo)

    problems = validate(config)
    if problems:
        _print_problems(problems)
        return 1

    started = time.monotonic()
    stamp = datetime.now(timezone.utc).isoformat()
    try:
        summary, lines = _EXECUTORS[config.subcommand](config.options, out)
    except (ConservationAlarm, WrapAroundAlarm, PicardDivergence) as exc:
        print(f"alarm: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        _print_problems(exc.problems)
        return 1
    except ValueError as exc:
        _print_problems(str(exc).split("; "))
        return 1

    write_json(out / "summary.json", summary)
    write_json(out / "run_meta.json", {
        "argv": list(argv) if argv is not None else None,
        "started_utc": stamp,
        "wall_seconds": time.monotonic() - started,
    })
    for line in lines:
        print(line)
    print(f"wrote {out / 'summary.json'}")
    if summary.get("alarm"):
        print(f"alarm: {summary['alarm']}", file=sys.stderr)
        return 2
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        namespace = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        config = resolve_config(namespace)
    except ConfigError as exc:
        _print_problems(exc.problems)
        return 1
    return run(config, argv=list(argv) if argv is not None
               else sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
