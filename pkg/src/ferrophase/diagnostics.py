"""Invariant monitors, the time-integrated energy ledger, and output writers.

One LedgerRow is recorded per accepted step. The checks are pure functions
of the rows, so verdicts survive a round trip through the CSV writer and
reader unchanged. Numbers are written with 17 significant digits to keep
the files bit-reproducible for identical runs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .grid import div_face
from .materials import Params
from .state import State, StepReport, mass


@dataclass
class LedgerRow:
    """Flattened per-step record for the time series."""

    step: int
    time: float
    kinetic: float
    exchange: float
    penalty: float
    interface: float
    mixing: float
    total: float
    visc_diss: float
    chem_diss: float
    mag_diss: float
    energy_violation: float
    mass: float
    max_abs_phi: float
    max_div: float
    m_l2: float
    m_l8: float
    m_linf: float
    picard_iters: int
    wall_time: float


CSV_COLUMNS = [f.name for f in fields(LedgerRow)]


def m_norms(state: State):
    """(L2, L8, Linf) of |M| with cell quadrature for the integral norms."""
    g = state.grid
    mag = np.sqrt(state.m.magnitude_sq())
    l2 = float(np.sqrt(np.sum(mag ** 2) * g.cell_volume))
    l8 = float(np.sum(mag ** 8) * g.cell_volume) ** 0.125
    linf = float(np.max(mag))
    return l2, l8, linf


def build_row(step_index: int, time: float, state: State, report: StepReport,
              wall_time: float = 0.0) -> LedgerRow:
    e = report.energy_after
    l2, l8, linf = m_norms(state)
    return LedgerRow(
        step=step_index, time=time,
        kinetic=e.kinetic, exchange=e.exchange, penalty=e.penalty,
        interface=e.interface, mixing=e.mixing, total=e.total,
        visc_diss=report.dissipation[0], chem_diss=report.dissipation[1],
        mag_diss=report.dissipation[2],
        energy_violation=report.energy_violation,
        mass=mass(state.phi),
        max_abs_phi=float(np.max(np.abs(state.phi.values))),
        max_div=report.max_div,
        m_l2=l2, m_l8=l8, m_linf=linf,
        picard_iters=report.picard_iters,
        wall_time=wall_time,
    )


def initial_row(state: State, energy, time: float = 0.0) -> LedgerRow:
    """Row for the initial condition (step 0, no dissipation yet)."""
    l2, l8, linf = m_norms(state)
    return LedgerRow(
        step=0, time=time,
        kinetic=energy.kinetic, exchange=energy.exchange, penalty=energy.penalty,
        interface=energy.interface, mixing=energy.mixing, total=energy.total,
        visc_diss=0.0, chem_diss=0.0, mag_diss=0.0, energy_violation=0.0,
        mass=mass(state.phi),
        max_abs_phi=float(np.max(np.abs(state.phi.values))),
        max_div=float(np.max(np.abs(div_face(state.v).values))),
        m_l2=l2, m_l8=l8, m_linf=linf, picard_iters=0, wall_time=0.0,
    )


@dataclass
class LedgerVerdict:
    passed: bool
    first_violation: int | None = None
    message: str = ""


def check_energy_ledger(rows, tol: float) -> LedgerVerdict:
    """Verify E(t_n) + sum_k dt_k * dissipation_k <= E(0) + n * tol for all n.

    Rows must be ordered by step; the first row anchors E(0). Returns the
    first violating step index, or a pass verdict.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("energy ledger check needs at least one row")
    e0 = rows[0].total
    cum = 0.0
    t_prev = rows[0].time
    for n, row in enumerate(rows[1:], start=1):
        dt = row.time - t_prev
        t_prev = row.time
        cum += dt * (row.visc_diss + row.chem_diss + row.mag_diss)
        if row.total + cum > e0 + n * tol:
            return LedgerVerdict(False, row.step,
                                 f"energy ledger violated at step {row.step}: "
                                 f"E + cumulative dissipation = {row.total + cum:.12e} "
                                 f"> E(0) + n tol = {e0 + n * tol:.12e}")
    return LedgerVerdict(True)


def check_m_growth(rows, params: Params, slack: float) -> LedgerVerdict:
    """Check the magnetization norms against the exponential growth envelope.

    Envelope: norm(t) <= norm(0) * exp(delta t) * (1 + slack) with
    delta = c2 / alpha^2, applied to the recorded L2, L8 and Linf norms.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("growth check needs at least one row")
    delta = params.c2 / params.alpha ** 2
    t0 = rows[0].time
    base = {"m_l2": rows[0].m_l2, "m_l8": rows[0].m_l8, "m_linf": rows[0].m_linf}
    for row in rows[1:]:
        envelope = math.exp(delta * (row.time - t0)) * (1.0 + slack)
        for name, b in base.items():
            if getattr(row, name) > b * envelope:
                return LedgerVerdict(False, row.step,
                                     f"{name} = {getattr(row, name):.12e} exceeds the "
                                     f"growth envelope {b * envelope:.12e} at step {row.step}")
    return LedgerVerdict(True)


# ---------------------------------------------------------------------------
# writers

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_timeseries(rows, destination) -> None:
    """Write the ledger rows as CSV (header + one row per step, LF endings)."""
    try:
        with open(destination, "w", newline="\n") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(getattr(row, c)) for c in CSV_COLUMNS) + "\n")
            fh.flush()
    except OSError as err:
        raise OSError(f"cannot write time series to {destination}: {err}") from err


def read_timeseries(path):
    """Parse a time-series CSV back into LedgerRow objects."""
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected time-series header in {path}")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            kwargs = {}
            for name, raw in zip(CSV_COLUMNS, parts):
                if name in ("step", "picard_iters"):
                    kwargs[name] = int(raw)
                else:
                    kwargs[name] = float(raw)
            rows.append(LedgerRow(**kwargs))
    return rows


def params_hash(params: Params) -> str:
    """Stable hash of the physical parameters, recorded in field dumps."""
    items = [f"{k}={format(float(v), '.17g')}" for k, v in sorted(vars(params).items())]
    return hashlib.sha256(";".join(items).encode()).hexdigest()[:16]


def _write_table(fh, name, arr):
    fh.write(f"[{name}]\n")
    for i in range(arr.shape[0]):
        fh.write(",".join(_fmt(v) for v in arr[i]) + "\n")


def write_field_dump(state: State, step: int, destination,
                     time: float | None = None, params: Params | None = None) -> None:
    """Write one plain-text snapshot of all fields.

    Layout: a short header, then row-major CSV tables (one line per x-index,
    y across) for phi, mu, p, m1, m2, m3 at centers and u, v at faces,
    separated by [name] section markers.
    """
    g = state.grid
    try:
        with open(destination, "w", newline="\n") as fh:
            fh.write("# ferrophase field dump\n")
            fh.write(f"# step = {step}\n")
            fh.write(f"# time = {_fmt(time if time is not None else 0.0)}\n")
            fh.write(f"# nx = {g.nx} ny = {g.ny} lx = {_fmt(g.lx)} ly = {_fmt(g.ly)}\n")
            fh.write(f"# params_hash = {params_hash(params) if params else 'none'}\n")
            _write_table(fh, "phi", state.phi.values)
            _write_table(fh, "mu", state.mu.values)
            _write_table(fh, "p", state.p.values)
            _write_table(fh, "m1", state.m.values[0])
            _write_table(fh, "m2", state.m.values[1])
            _write_table(fh, "m3", state.m.values[2])
            _write_table(fh, "u", state.v.u)
            _write_table(fh, "v", state.v.v)
            fh.flush()
    except OSError as err:
        raise OSError(f"cannot write field dump to {destination}: {err}") from err
