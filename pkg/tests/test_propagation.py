import io
import math

import numpy as np
import pytest

from ringabo.bands import BlochLabel, band_energies, bloch_state_on_ring
from ringabo.errors import InvalidParameterError
from ringabo.model import DriveSchedule, Program, chirp_phase, make_params
from ringabo.propagation import (WaveFunction, evolve, evolve_band_basis, gauge_map, read_snapshots,
                                 two_level_evolve, write_snapshots)


def test_plane_wave_is_stationary():
    p = make_params(None, 0.0, 2)
    psi = WaveFunction.plane_wave(32, 3)
    tr = evolve(psi, p, DriveSchedule.static(0.0), (0, 5.0), dt=0.005)
    np.testing.assert_allclose(tr.Lz, 3.0, atol=1e-12)
    # picks up exp(-i E t / hbar) with E = 9 / (2 I)
    ov = psi.inner(tr.final)
    assert ov == pytest.approx(np.exp(-1j * 9 / 4 * 5.0), abs=1e-10)


def test_bloch_state_is_stationary():
    p = make_params(None, 2.0, 2)
    psi = bloch_state_on_ring(p, BlochLabel(0, 1), 64)
    tr = evolve(psi, p, DriveSchedule.static(2.0), (0, 3.0), dt=0.001)
    assert abs(psi.inner(tr.final)) == pytest.approx(1.0, abs=1e-6)
    assert np.ptp(tr.Lz) < 1e-6


def test_norm_conserved():
    p = make_params(None, 1.0, 2)
    tr = evolve(bloch_state_on_ring(p, BlochLabel(0, 0), 64), p, DriveSchedule.linear_chirp(1.0, 0.05),
                (0, 20.0), dt=0.005)
    assert np.max(np.abs(tr.norm - 1)) < 1e-12


def test_gauge_map_round_trip():
    rng = np.random.default_rng(1)
    psi = WaveFunction.normalized(rng.normal(size=64) + 1j * rng.normal(size=64))
    back = gauge_map(gauge_map(psi, 0.37, 2), 0.37, 2, "to_lab")
    np.testing.assert_allclose(back.amplitudes, psi.amplitudes, atol=1e-13)
    with pytest.raises(InvalidParameterError):
        gauge_map(psi, 0.1, 2, "sideways")


def test_gauge_map_is_rotation():
    # Theta(phi) = Phi(phi + a/l); with a/l equal to one grid spacing this is a roll
    N, l = 64, 2
    psi = bloch_state_on_ring(make_params(None, 1.0, 2), BlochLabel(1, 1), N)
    a = l * 2 * np.pi / N
    np.testing.assert_allclose(gauge_map(psi, a, l).amplitudes, np.roll(psi.amplitudes, -1), atol=1e-12)


def test_frames_agree():
    p = make_params(None, 1.0, 2)
    sch = DriveSchedule.linear_chirp(1.0, 0.02)
    psi0 = bloch_state_on_ring(p, BlochLabel(0, 0), 64)
    a = evolve(psi0, p, sch, (0, 10), dt=0.002, frame="corotating", adapt=False)
    b = evolve(psi0, p, sch, (0, 10), dt=0.002, frame="lab", adapt=False)
    assert np.max(np.abs(a.Lz - b.Lz)) < 1e-8
    fin = gauge_map(b.final, chirp_phase(sch, 10.0), 2)
    assert abs(fin.inner(a.final)) == pytest.approx(1.0, abs=1e-10)


def test_time_reversal():
    p = make_params(None, 1.5, 2)
    sch = DriveSchedule.linear_chirp(1.5, 0.03)
    psi0 = bloch_state_on_ring(p, BlochLabel(0, 0), 64)
    fwd = evolve(psi0, p, sch, (0, 15.0), dt=0.005)
    back = evolve(fwd.final, p, sch, (15.0, 0.0), dt=0.005)
    np.testing.assert_allclose(back.final.amplitudes, psi0.amplitudes, atol=1e-10)


def test_strang_second_order():
    p = make_params(None, 1.0, 2)
    sch = DriveSchedule(Program.linear(1.0, 0.05), chirp=Program.linear(-0.05))
    psi0 = bloch_state_on_ring(p, BlochLabel(0, 0), 64)
    ref = evolve(psi0, p, sch, (0, 4.0), dt=0.000625, adapt=False).final
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        fin = evolve(psi0, p, sch, (0, 4.0), dt=dt, adapt=False).final
        errs.append(np.sqrt((fin.amplitudes - ref.amplitudes) @ (fin.amplitudes - ref.amplitudes).conj()).real)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.2)


def test_guards():
    p = make_params(None, 1.0, 2)
    sch = DriveSchedule.static(1.0)
    with pytest.raises(InvalidParameterError):
        evolve(WaveFunction.uniform(30), p, sch, (0, 1), dt=0.005)
    with pytest.raises(InvalidParameterError):
        evolve(WaveFunction.uniform(32), p, sch, (0, 1), dt=0.05)
    with pytest.raises(InvalidParameterError):
        evolve(WaveFunction(np.ones(32)), p, sch, (0, 1), dt=0.005)
    with pytest.raises(InvalidParameterError):
        evolve(WaveFunction.uniform(32), p, sch, (0, 1), frame="rotating")


def test_band_basis_matches_split_step():
    # deep enough that the three lowest bands stay separated; s = 0.01
    p = make_params(None, 3.0, 2)
    sch = DriveSchedule.linear_chirp(3.0, 0.04)
    t = np.linspace(0, 200, 21)
    ss = evolve(bloch_state_on_ring(p, BlochLabel(0, 0), 128), p, sch, (0, 200), dt=0.005, sample_every=2000)
    bb = evolve_band_basis({(0, 0): 1.0}, p, sch, (0, 200), t_eval=t)
    # three bands only: leakage into higher bands is second order in s
    assert np.max(np.abs(bb.Lz - ss.Lz)) < 5e-4
    assert np.max(np.abs(bb.population - 1)) < 1e-8


def test_fixed_basis_matches_split_step():
    p = make_params(None, 3.0, 2)
    sch = DriveSchedule.linear_chirp(3.0, 0.2)
    psi = bloch_state_on_ring(p, BlochLabel(0, 0), 128)
    t = np.linspace(0, 40, 11)
    ss = evolve(psi, p, sch, (0, 40), dt=0.002, sample_every=2000)
    fx = evolve_band_basis(psi, p, sch, (0, 40), t_eval=t, basis="fixed", t_ref=0.0, n_bands=14, k_max=16,
                           max_step=0.5)
    assert np.max(np.abs(fx.Lz - ss.Lz)) < 2e-5


def test_band_basis_fixed_static():
    p = make_params(None, 1.0, 2)
    bb = evolve_band_basis({(1, 1): 1.0}, p, DriveSchedule.static(1.0), (0, 5), basis="fixed", t_ref=0.0)
    np.testing.assert_allclose(bb.populations(1, 1), 1.0, atol=1e-9)


def test_band_basis_rejects_bad_input():
    p = make_params(None, 1.0, 2)
    with pytest.raises(InvalidParameterError):
        evolve_band_basis({(0, 3): 1.0}, p, DriveSchedule.static(1.0), (0, 1))
    with pytest.raises(InvalidParameterError):
        evolve_band_basis({(5, 0): 1.0}, p, DriveSchedule.static(1.0), (0, 1), n_bands=3)


def test_two_level_critical_ramp():
    p = make_params(None, 0.5, 2)
    s_c = math.pi * p.l * p.V**2 / (32 * p.Er)
    w = p.V * p.l / (8 * p.Er)
    res = two_level_evolve(p, s_c, (p.l - 10 * w, p.l + 10 * w))
    assert res.excited_fraction == pytest.approx(math.exp(-1), rel=0.02)


def test_two_level_adiabatic_limit():
    p = make_params(None, 0.5, 2)
    s = (p.V / 4) ** 2 * p.l / (4 * 3.906)
    w = p.V * p.l / (8 * p.Er)
    assert two_level_evolve(p, s, (p.l - 10 * w, p.l + 10 * w)).excited_fraction < 1e-8


def test_two_level_fast_sweep():
    p = make_params(None, 0.5, 2)
    assert two_level_evolve(p, 50.0, (1.0, 3.0)).excited_fraction > 0.98
    with pytest.raises(InvalidParameterError):
        two_level_evolve(p, -1.0, (1.0, 3.0))


def test_snapshot_round_trip():
    p = make_params(None, 1.0, 2)
    tr = evolve(bloch_state_on_ring(p, BlochLabel(0, 0), 16), p, DriveSchedule.linear_chirp(1.0, 0.1),
                (0, 0.1), dt=0.005, sample_every=10, store_states=True)
    buf = io.StringIO()
    write_snapshots(tr, buf)
    buf.seek(0)
    snaps = read_snapshots(buf)
    assert len(snaps) == len(tr.states) == 3
    for (t, st), t0, s0 in zip(snaps, tr.times, tr.states):
        assert t == t0
        np.testing.assert_array_equal(st.amplitudes, s0.amplitudes)


def test_angular_coefficients():
    psi = WaveFunction.normalized(np.exp(2j * WaveFunction.uniform(16).phi) + 0.5 * np.exp(-3j * WaveFunction.uniform(16).phi))
    c = psi.angular_coefficients()
    m = psi.m
    assert abs(c[m == 2][0]) ** 2 == pytest.approx(0.8)
    assert abs(c[m == -3][0]) ** 2 == pytest.approx(0.2)
    assert np.sum(np.abs(c) ** 2) == pytest.approx(1.0)


def test_gauge_map_examples():
    p = make_params(None, 1.0, 2)
    psi = bloch_state_on_ring(p, BlochLabel(1, 1), 64)
    np.testing.assert_allclose(gauge_map(psi, 0.0, 2).amplitudes, psi.amplitudes, atol=1e-14)
    np.testing.assert_allclose(gauge_map(psi, 2 * np.pi * 2, 2).amplitudes, psi.amplitudes, atol=1e-12)
    pw = WaveFunction.plane_wave(64, 3)
    np.testing.assert_allclose(gauge_map(pw, 0.7, 2).amplitudes, np.exp(1j * 3 * 0.7 / 2) * pw.amplitudes,
                               atol=1e-13)
    assert gauge_map(psi, 0.31, 2).norm() == pytest.approx(1.0, abs=1e-14)


def test_bloch_period_recurrence():
    p = make_params(None, 3.0, 2)
    sch = DriveSchedule.constant_ramp(p, 0.01, 3.0)
    psi = bloch_state_on_ring(p, BlochLabel(0, 0), 64)
    tr = evolve(psi, p, sch, (0, 500.0), dt=0.005, sample_every=20000, store_states=True)
    t_B = 400.0
    i0, i1 = 1, 5  # t = 100 and t = 500
    assert tr.times[i1] - tr.times[i0] == pytest.approx(t_B)
    a, b = tr.states[i0], tr.states[i1]
    shifted = WaveFunction(np.exp(-2j * p.l * a.phi) * a.amplitudes)
    assert abs(b.inner(shifted)) == pytest.approx(1.0, abs=1e-3)


def test_band_basis_frozen_hamiltonian():
    p = make_params(None, 1.0, 2)
    eta0 = 0.3
    sch = DriveSchedule.linear_chirp(1.0, 0.0)
    sch = DriveSchedule(sch.depth, chirp=lambda t: -2 * p.l * eta0 / p.I)  # constant eta = eta0
    t = np.linspace(0, 5, 6)
    bb = evolve_band_basis({(0, 1): 0.6, (1, 1): 0.8}, p, sch, (0, 5), t_eval=t)
    c = bb.coefficients[1]
    np.testing.assert_allclose(np.abs(c[:, 0]), 0.6, atol=1e-8)
    np.testing.assert_allclose(np.abs(c[:, 1]), 0.8, atol=1e-8)
    E = band_energies(p, 1 + eta0, n_max=1) - eta0**2 / (2 * p.I)
    np.testing.assert_allclose(c[-1, :2], np.array([0.6, 0.8]) * np.exp(-1j * E * 5), atol=1e-7)


def test_two_level_uncoupled():
    p = make_params(None, 0.0, 2)
    res = two_level_evolve(p, 0.01, (1.5, 2.5), n_eval=11)
    np.testing.assert_allclose(np.abs(res.d0) ** 2, 1.0, atol=1e-9)
    np.testing.assert_allclose(np.abs(res.d1) ** 2, 0.0, atol=1e-12)
