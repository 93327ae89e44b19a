"""Configuration parsing, initial-condition scenarios, and the run driver.

Config files are line-oriented: one ``section.key = value`` assignment per
line, ``#`` starts a comment, blank lines are ignored. Unknown keys are
rejected with their line number. Every key has a documented default, so the
empty file is a valid configuration. ``normalize_config`` renders a Config
back into canonical text; parsing that text reproduces the Config exactly.

Exit statuses of ``main``: 0 success, 1 configuration or validation error,
2 step failure during the run, 3 post-run ledger check failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time as _time
from dataclasses import dataclass, field, fields

import numpy as np

from . import diagnostics as diag
from .grid import FaceField, Grid, MagField, ScalarField, build_grid, div_face, grad_cc
from .linsolve import SolverFailure, SolverOptions, leray_project
from .materials import SATURATION_EPS, Params
from .materials import psi0_prime as _psi0_prime
from .materials import xi_prime as _xi_prime
from .state import State, total_energy
from .stepper import StepFailure, StepOptions, run


@dataclass
class GridConfig:
    nx: int = 32
    ny: int = 32
    lx: float = 1.0
    ly: float = 1.0


@dataclass
class SteppingConfig:
    h: float = 1e-3
    n_steps: int = 10
    picard_tol: float = 1e-8
    picard_max: int = 200
    newton_tol: float = 1e-9
    newton_max: int = 60
    splitting: str = "convex"
    strict_energy: bool = False
    tol_energy_rel: float = 1e-6
    tol_div: float = 1e-8


@dataclass
class InitialConfig:
    scenario: str = "uniform_equilibrium"
    phi_mean: float = 0.3
    phi_amp: float = 0.85
    interface_width: float = 0.08
    heavy_on_top: bool = False
    m_direction: str = "1,0,0"
    n_stripes: int = 1
    stripe_width: float = 0.16
    perturb_amp: float = 0.05
    seed: int = 1234


@dataclass
class OutputConfig:
    out_dir: str = "out"
    dump_every: int = 50
    timeseries: str = "timeseries.csv"


@dataclass
class Config:
    grid: GridConfig = field(default_factory=GridConfig)
    params: Params = field(default_factory=Params)
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "grid": GridConfig,
    "params": Params,
    "stepping": SteppingConfig,
    "initial": InitialConfig,
    "output": OutputConfig,
}

_SCENARIOS = ("uniform_equilibrium", "stratified", "magnetic_stripes",
              "random_perturbation")


def _coerce(raw: str, target_type, where: str):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
    if target_type is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    return raw


def parse_config(text: str) -> Config:
    """Parse and fully validate the line-oriented configuration format."""
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} is missing its section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        section_fields = {f.name: f for f in fields(_SECTIONS[section])}
        if name not in section_fields:
            raise ConfigError(f"line {lineno}: unknown key {section}.{name}")
        ftype = section_fields[name].type
        pytype = {"int": int, "float": float, "bool": bool, "str": str,
                  "float | None": float}.get(ftype, str)
        values[section][name] = _coerce(raw, pytype, f"line {lineno}: {section}.{name}")

    try:
        cfg = Config(
            grid=GridConfig(**values["grid"]),
            params=Params(**values["params"]),
            stepping=SteppingConfig(**values["stepping"]),
            initial=InitialConfig(**values["initial"]),
            output=OutputConfig(**values["output"]),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    g = cfg.grid
    if g.nx < 2 or g.ny < 2:
        raise ConfigError("grid.nx and grid.ny must be >= 2")
    if not (g.lx > 0 and g.ly > 0):
        raise ConfigError("grid.lx and grid.ly must be > 0")
    s = cfg.stepping
    if not s.h > 0:
        raise ConfigError("stepping.h must be > 0")
    if s.n_steps < 0:
        raise ConfigError("stepping.n_steps must be >= 0")
    if s.splitting not in ("convex", "naive"):
        raise ConfigError("stepping.splitting must be 'convex' or 'naive'")
    ic = cfg.initial
    if ic.scenario not in _SCENARIOS:
        raise ConfigError(f"initial.scenario must be one of {_SCENARIOS}, "
                          f"got {ic.scenario!r}")
    if not -1.0 < ic.phi_mean < 1.0:
        raise ConfigError("initial.phi_mean must lie strictly inside (-1, 1)")
    if not 0.0 < ic.phi_amp < 1.0:
        raise ConfigError("initial.phi_amp must lie in (0, 1)")
    if ic.interface_width <= 0 or ic.stripe_width <= 0:
        raise ConfigError("interface and stripe widths must be > 0")
    if ic.n_stripes < 1:
        raise ConfigError("initial.n_stripes must be >= 1")
    try:
        d = _direction(ic.m_direction)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg.output.dump_every < 1:
        raise ConfigError("output.dump_every must be >= 1")


def _direction(spec: str) -> np.ndarray:
    parts = [p for p in spec.replace(";", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"initial.m_direction must have 3 components, got {spec!r}")
    try:
        d = np.array([float(p) for p in parts])
    except ValueError:
        raise ValueError(f"initial.m_direction is not numeric: {spec!r}") from None
    n = float(np.linalg.norm(d))
    if n == 0:
        raise ValueError("initial.m_direction must be nonzero")
    return d / n


def normalize_config(cfg: Config) -> str:
    """Canonical text form: every key in section order, full precision."""
    lines = []
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            val = getattr(obj, f.name)
            if isinstance(val, bool):
                rendered = "true" if val else "false"
            elif isinstance(val, float):
                rendered = format(val, ".17g")
            else:
                rendered = str(val)
            lines.append(f"{section}.{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# initial conditions

def _smooth_bands(x: np.ndarray, n_stripes: int, lx: float, width: float) -> np.ndarray:
    """Smoothed alternating +-1 bands across x."""
    wave = np.sin(2.0 * np.pi * n_stripes * x / lx)
    sharp = 2.0 * np.pi * n_stripes * width / lx
    return np.tanh(wave / max(sharp, 1e-6))


def _initial_mu(phi: ScalarField, m: MagField, params: Params) -> ScalarField:
    """Chemical potential consistent with the continuous constitutive law."""
    from .grid import grad_sq_center, laplace_neumann
    g = phi.grid
    gradm2 = np.zeros((g.nx, g.ny))
    for c in range(3):
        gradm2 += grad_sq_center(m.component(c))
    w = 0.5 * gradm2 + (m.magnitude_sq() - 1.0) ** 2 / (4.0 * params.alpha ** 2)
    vals = -params.eta * laplace_neumann(phi).values \
        + _psi0_prime(phi.values, params) - params.kappa * phi.values \
        + _xi_prime(phi.values, params) * w
    return ScalarField(g, vals)


def build_initial_state(cfg: Config) -> State:
    """Construct the named scenario on the configured grid.

    Every scenario returns |phi| <= 1 - eps, finite magnetization, and a
    discretely divergence-free no-slip velocity (Leray-projected).
    """
    g = build_grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly)
    p = cfg.params
    ic = cfg.initial
    x, y = g.cell_centers()
    direction = _direction(ic.m_direction)
    limit = 1.0 - SATURATION_EPS

    name = ic.scenario
    if name == "uniform_equilibrium":
        phi = ScalarField.full(g, ic.phi_mean)
        m = MagField.uniform(g, direction)
        v = FaceField.zeros(g)
        mu_val = _psi0_prime(ic.phi_mean, p) - p.kappa * ic.phi_mean
        mu = ScalarField.full(g, mu_val)
    elif name in ("stratified", "magnetic_stripes"):
        sign = 1.0 if ic.heavy_on_top else -1.0
        prof = np.tanh(sign * (y - 0.5 * g.ly) / ic.interface_width)
        phi = ScalarField(g, ic.phi_amp * prof)
        if name == "stratified":
            m = MagField.uniform(g, direction)
        else:
            bands = _smooth_bands(x, ic.n_stripes, g.lx, ic.stripe_width)
            vals = np.zeros((3, g.nx, g.ny))
            vals[0] = bands
            m = MagField(g, vals)
        v = FaceField.zeros(g)
        mu = _initial_mu(phi, m, p)
    elif name == "random_perturbation":
        rng = np.random.default_rng(ic.seed)
        phi_v = np.full((g.nx, g.ny), ic.phi_mean)
        modes = [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2)]
        for kx, ky in modes:
            amp = ic.perturb_amp * rng.uniform(-1.0, 1.0)
            phi_v += amp * np.cos(np.pi * kx * x / g.lx) * np.cos(np.pi * ky * y / g.ly)
        phi = ScalarField(g, np.clip(phi_v, -limit, limit))
        mvals = np.zeros((3, g.nx, g.ny))
        for c in range(3):
            mvals[c] = direction[c]
            for kx, ky in modes:
                amp = ic.perturb_amp * rng.uniform(-1.0, 1.0)
                mvals[c] += amp * np.cos(np.pi * kx * x / g.lx) * np.cos(np.pi * ky * y / g.ly)
        m = MagField(g, mvals)
        # divergence-free velocity from a boundary-vanishing streamfunction
        xc, yc = g.corner_coords()
        psi_c = np.zeros((g.nx + 1, g.ny + 1))
        for kx, ky in [(1, 1), (2, 1), (1, 2)]:
            amp = ic.perturb_amp * rng.uniform(-1.0, 1.0)
            psi_c += amp * np.sin(np.pi * kx * xc / g.lx) * np.sin(np.pi * ky * yc / g.ly)
        u = (psi_c[:, 1:] - psi_c[:, :-1]) / g.dy
        vv = -(psi_c[1:, :] - psi_c[:-1, :]) / g.dx
        v = FaceField(g, u, vv)
        mu = _initial_mu(phi, m, p)
    else:
        raise ConfigError(f"unknown scenario {name!r}")

    phi = ScalarField(g, np.clip(phi.values, -limit, limit))
    v, _ = leray_project(v, SolverOptions(tol_rel=1e-12, max_iters=60000))
    v.u[0, :] = v.u[-1, :] = 0.0
    v.v[:, 0] = v.v[:, -1] = 0.0
    return State(v, ScalarField.zeros(g), m, phi, mu)


# ---------------------------------------------------------------------------
# run driver

class _RunSinks:
    """Collects rows, writes dumps on schedule, flushes on failure."""

    def __init__(self, out_dir, cfg: Config, initial_state: State):
        self.out_dir = out_dir
        self.cfg = cfg
        self.rows = [diag.initial_row(initial_state,
                                      total_energy(initial_state, cfg.params))]
        self.t_last = _time.perf_counter()
        self._dump(initial_state, 0)

    def _dump(self, state, step_index):
        path = os.path.join(self.out_dir, f"fields_{step_index:06d}.txt")
        diag.write_field_dump(state, step_index, path,
                              time=step_index * self.cfg.stepping.h,
                              params=self.cfg.params)

    def on_report(self, step_index, time, state, report):
        now = _time.perf_counter()
        self.rows.append(diag.build_row(step_index, time, state, report,
                                        wall_time=now - self.t_last))
        self.t_last = now
        if step_index % self.cfg.output.dump_every == 0 \
                or step_index == self.cfg.stepping.n_steps:
            self._dump(state, step_index)

    def on_failure(self, step_index, err):
        self.flush()

    def flush(self):
        diag.write_timeseries(self.rows,
                              os.path.join(self.out_dir, self.cfg.output.timeseries))


def main(argv=None) -> int:
    """Command-line entry point; returns the exit status."""
    parser = argparse.ArgumentParser(
        prog="ferrophase",
        description="Energy-stable two-phase magnetic fluid simulator")
    parser.add_argument("--config", help="path to the configuration file")
    parser.add_argument("--out-dir", help="override output.out_dir")
    parser.add_argument("--steps", type=int, help="override stepping.n_steps")
    parser.add_argument("--splitting", choices=("convex", "naive"),
                        help="override stepping.splitting")
    parser.add_argument("--strict-energy", action="store_true",
                        help="fail any step whose energy violation exceeds tolerance")
    parser.add_argument("--check-only", action="store_true",
                        help="parse and validate the configuration, then exit")
    parser.add_argument("--force", action="store_true",
                        help="allow writing into an existing, non-empty out-dir")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0

    if not args.config:
        print("error: --config <path> is required", file=sys.stderr)
        return 1
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return 1
    except ConfigError as err:
        print(f"error: invalid config: {err}", file=sys.stderr)
        return 1

    if args.out_dir:
        cfg.output.out_dir = args.out_dir
    if args.steps is not None:
        if args.steps < 1:
            print("error: --steps must be >= 1", file=sys.stderr)
            return 1
        cfg.stepping.n_steps = args.steps
    if args.splitting:
        cfg.stepping.splitting = args.splitting
    if args.strict_energy:
        cfg.stepping.strict_energy = True

    if args.check_only:
        sys.stdout.write(normalize_config(cfg))
        return 0

    out_dir = cfg.output.out_dir
    if os.path.exists(out_dir) and os.listdir(out_dir) and not args.force:
        print(f"error: output directory {out_dir!r} exists and is not empty "
              f"(use --force to overwrite)", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.echo.cfg"), "w") as fh:
        fh.write(normalize_config(cfg))

    try:
        initial = build_initial_state(cfg)
    except (ConfigError, SolverFailure) as err:
        print(f"error: building the initial state failed: {err}", file=sys.stderr)
        return 1

    opts = StepOptions(
        h=cfg.stepping.h, picard_tol=cfg.stepping.picard_tol,
        picard_max=cfg.stepping.picard_max, newton_tol=cfg.stepping.newton_tol,
        newton_max=cfg.stepping.newton_max, splitting=cfg.stepping.splitting,
        strict_energy=cfg.stepping.strict_energy,
        tol_energy_rel=cfg.stepping.tol_energy_rel, tol_div=cfg.stepping.tol_div)
    sinks = _RunSinks(out_dir, cfg, initial)
    try:
        run(initial, cfg.params, opts, cfg.stepping.n_steps, sinks)
    except (StepFailure, SolverFailure) as err:
        print(f"error: step failed: {err}", file=sys.stderr)
        return 2
    sinks.flush()

    e0 = sinks.rows[0].total
    tol = cfg.stepping.tol_energy_rel * max(e0, 1e-12)
    verdict = diag.check_energy_ledger(sinks.rows, tol)
    if not verdict.passed:
        print(f"error: {verdict.message}", file=sys.stderr)
        return 3
    growth = diag.check_m_growth(sinks.rows, cfg.params, slack=0.5)
    if not growth.passed:
        print(f"error: {growth.message}", file=sys.stderr)
        return 3
    print(f"completed {cfg.stepping.n_steps} steps; outputs in {out_dir}")
    return 0


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
