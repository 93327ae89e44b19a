import math
import os

import numpy as np
import pytest

from ferrophase.diagnostics import (CSV_COLUMNS, LedgerRow, build_row,
                                    check_energy_ledger, check_m_growth,
                                    initial_row, read_timeseries, write_field_dump,
                                    write_timeseries)
from ferrophase.grid import FaceField, MagField, ScalarField, build_grid
from ferrophase.materials import Params
from ferrophase.state import State, total_energy


def make_row(step, time, total, diss=0.0, m_linf=1.0):
    return LedgerRow(step=step, time=time, kinetic=0.0, exchange=0.0, penalty=0.0,
                     interface=0.0, mixing=total, total=total, visc_diss=diss,
                     chem_diss=0.0, mag_diss=0.0, energy_violation=0.0, mass=0.5,
                     max_abs_phi=0.3, max_div=0.0, m_l2=m_linf, m_l8=m_linf,
                     m_linf=m_linf, picard_iters=1, wall_time=0.01)


def test_energy_ledger_single_row_passes():
    assert check_energy_ledger([make_row(0, 0.0, 1.0)], tol=1e-6).passed


def test_energy_ledger_decreasing_passes():
    rows = [make_row(k, 0.01 * k, 1.0 - 0.05 * k) for k in range(10)]
    assert check_energy_ledger(rows, tol=1e-12).passed


def test_energy_ledger_detects_jump():
    rows = [make_row(0, 0.0, 1.0), make_row(1, 0.01, 0.9),
            make_row(2, 0.02, 1.9), make_row(3, 0.03, 0.8)]
    verdict = check_energy_ledger(rows, tol=1e-6)
    assert not verdict.passed
    assert verdict.first_violation == 2


def test_energy_ledger_counts_dissipation():
    # flat energy with positive dissipation violates the ledger
    rows = [make_row(0, 0.0, 1.0), make_row(1, 0.5, 1.0, diss=1.0)]
    verdict = check_energy_ledger(rows, tol=1e-8)
    assert not verdict.passed


def test_m_growth_constant_passes():
    p = Params()
    rows = [make_row(k, 0.1 * k, 1.0, m_linf=1.0) for k in range(20)]
    assert check_m_growth(rows, p, slack=0.0).passed


def test_m_growth_exact_rate_passes_with_small_slack():
    p = Params()
    delta = p.c2 / p.alpha ** 2
    rows = [make_row(k, 0.05 * k, 1.0, m_linf=math.exp(delta * 0.05 * k))
            for k in range(30)]
    assert check_m_growth(rows, p, slack=0.01).passed


def test_m_growth_double_rate_fails_past_crossing():
    p = Params()
    delta = p.c2 / p.alpha ** 2
    dt = 0.02
    rows = [make_row(k, dt * k, 1.0, m_linf=math.exp(2.0 * delta * dt * k))
            for k in range(200)]
    verdict = check_m_growth(rows, p, slack=0.1)
    assert not verdict.passed
    # envelope crossing at t = ln(1.1)/delta
    t_cross = math.log(1.1) / delta
    t_fail = rows[verdict.first_violation].time if verdict.first_violation \
        else None
    # first violating step is the first recorded time past the crossing
    expected = dt * math.ceil(t_cross / dt + 1e-12)
    assert abs(t_fail - expected) < dt / 2


def test_timeseries_roundtrip(tmp_path):
    rows = [make_row(k, 1e-3 * k, 1.0 / (1.0 + k), diss=0.1 * k) for k in range(5)]
    path = tmp_path / "series.csv"
    write_timeseries(rows, path)
    back = read_timeseries(path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        for c in CSV_COLUMNS:
            assert getattr(a, c) == getattr(b, c)
    # verdicts identical after the round trip
    assert check_energy_ledger(rows, 1e-6).passed == \
        check_energy_ledger(back, 1e-6).passed


def test_timeseries_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_timeseries([], path)
    text = path.read_text()
    assert text == ",".join(CSV_COLUMNS) + "\n"
    assert read_timeseries(path) == []


def test_timeseries_deterministic_bytes(tmp_path):
    rows = [make_row(k, 1e-3 * k, 1.0 + k) for k in range(3)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_timeseries(rows, p1)
    write_timeseries(rows, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_field_dump_golden_2x2(tmp_path):
    g = build_grid(2, 2, 1.0, 1.0)
    # dyadic values render exactly under the 17-significant-digit format
    state = State(
        FaceField(g, np.array([[0.0, 0.0], [0.5, -0.5], [0.0, 0.0]]),
                  np.array([[0.0, 0.25, 0.0], [0.0, -0.25, 0.0]])),
        ScalarField(g, np.array([[1.0, -1.0], [2.0, -2.0]])),
        MagField(g, np.arange(12, dtype=float).reshape(3, 2, 2)),
        ScalarField(g, np.array([[0.125, 0.25], [0.375, 0.5]])),
        ScalarField(g, np.array([[-0.5, 0.5], [1.5, -1.5]])),
    )
    path = tmp_path / "dump.txt"
    write_field_dump(state, 3, path, time=0.25)
    expected = (
        "# ferrophase field dump\n"
        "# step = 3\n"
        "# time = 0.25\n"
        "# nx = 2 ny = 2 lx = 1 ly = 1\n"
        "# params_hash = none\n"
        "[phi]\n0.125,0.25\n0.375,0.5\n"
        "[mu]\n-0.5,0.5\n1.5,-1.5\n"
        "[p]\n1,-1\n2,-2\n"
        "[m1]\n0,1\n2,3\n"
        "[m2]\n4,5\n6,7\n"
        "[m3]\n8,9\n10,11\n"
        "[u]\n0,0\n0.5,-0.5\n0,0\n"
        "[v]\n0,0.25,0\n0,-0.25,0\n"
    )
    assert path.read_bytes().decode() == expected


def test_field_dump_reports_io_error():
    g = build_grid(2, 2, 1.0, 1.0)
    state = State.zeros(g)
    with pytest.raises(OSError) as err:
        write_field_dump(state, 0, "/nonexistent-dir/f.txt")
    assert "/nonexistent-dir/f.txt" in str(err.value)


def test_build_row_and_initial_row():
    g = build_grid(4, 4, 1.0, 1.0)
    s = State(FaceField.zeros(g), ScalarField.zeros(g),
              MagField.uniform(g, (1.0, 0.0, 0.0)),
              ScalarField.full(g, 0.25), ScalarField.zeros(g))
    p = Params()
    row = initial_row(s, total_energy(s, p))
    assert row.step == 0 and row.mass == pytest.approx(0.25)
    assert row.m_linf == pytest.approx(1.0)
    assert row.m_l8 == pytest.approx(1.0)
