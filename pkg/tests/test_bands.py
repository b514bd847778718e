import io
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringabo.bands import (BlochLabel, band_energies, band_energy_theta, band_table, bloch_state_on_ring,
                           dense_band_energies, group_velocity, read_band_table, ring_grid, shallow_bands,
                           solve_bands, write_band_table)
from ringabo.errors import AccuracyError, InvalidParameterError
from ringabo.model import make_params


def _load(path):
    with open(path) as fh:
        return read_band_table(fh)


def test_regression_table(data_dir):
    rows = _load(os.path.join(data_dir, "bands_V1.csv"))
    p = make_params(None, 1.0, 2)
    qs = sorted({q for q, _, _ in rows})
    ref = {(q, n): e for q, n, e in rows}
    got = band_energies(p, np.array(qs), n_max=4)
    err = max(abs(got[i, n] - ref[(q, n)]) for i, q in enumerate(qs) for n in range(5))
    assert err < 1e-9


def test_ground_density_regression(data_dir):
    ref = np.loadtxt(os.path.join(data_dir, "ground_density_V1.csv"), delimiter=",", skiprows=1)
    p = make_params(None, 1.0, 2)
    st_ = bloch_state_on_ring(p, BlochLabel(0, 0), 256)
    np.testing.assert_allclose(st_.phi, ref[:, 0], atol=1e-14)
    np.testing.assert_allclose(np.abs(st_.amplitudes) ** 2, ref[:, 1], atol=1e-10)


def test_density_peaks_at_potential_minima():
    p = make_params(None, 3.0, 2)
    st_ = bloch_state_on_ring(p, BlochLabel(0, 0), 256)
    d = np.abs(st_.amplitudes) ** 2
    # V cos^2(2 phi) is smallest at phi = +-pi/4, +-3pi/4
    peak_phi = st_.phi[np.argmax(d)]
    assert np.min(np.abs(np.abs(peak_phi) - np.array([np.pi / 4, 3 * np.pi / 4]))) < 0.03


def test_free_parabolas():
    p = make_params(None, 0.0, 2)
    for q in (-1.7, 0.0, 0.6, 1.9):
        e = band_energies(p, q, n_max=4)
        free = np.sort([(q - 4 * k) ** 2 / 4 for k in range(-5, 6)])[:5]
        np.testing.assert_allclose(e, free, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.0, 5.0))
def test_periodic_and_symmetric(q, V):
    p = make_params(None, V, 2)
    e = band_energies(p, q, n_max=3)
    np.testing.assert_allclose(band_energies(p, q + 4.0, n_max=3), e, atol=1e-10)
    np.testing.assert_allclose(band_energies(p, -q, n_max=3), e, atol=1e-10)
    assert np.all(np.diff(e) >= -1e-12)


def test_against_dense():
    p = make_params(None, 4.0, 3)
    for q in np.linspace(-3, 3, 7):
        np.testing.assert_allclose(solve_bands(p, q).energies, dense_band_energies(p, q, 4, 32), atol=1e-11)


def test_accuracy_guard():
    p = make_params(None, 1.0, 2)
    with pytest.raises(InvalidParameterError):
        solve_bands(p, 0.0, n_max=4, k_max=6)
    with pytest.raises(AccuracyError):
        solve_bands(make_params(None, 400.0, 2), 0.0, n_max=4, k_max=8)


def test_shallow_closed_form_near_edge():
    p = make_params(None, 0.05, 2)
    q = np.linspace(1.8, 2.0, 11)
    lo, hi = shallow_bands(p, q)
    e = band_energies(p, q, n_max=1)
    assert np.max(np.abs(e[:, 0] - lo)) < 2e-3
    assert np.max(np.abs(e[:, 1] - hi)) < 2e-3
    # zone-edge gap V/2
    assert hi[-1] - lo[-1] == pytest.approx(0.025)


def test_degenerate_ordering_at_edge():
    p = make_params(None, 0.0, 2)
    sol = solve_bands(p, 2.0, n_max=1, check=False)
    assert sol.energies[0] == pytest.approx(sol.energies[1], abs=1e-14)
    mom = sol.momentum(p.l)
    # ties broken by the momentum of u, smaller magnitude first
    assert mom[0] == pytest.approx(0.0, abs=1e-12) and mom[1] == pytest.approx(-4.0)


def test_group_velocity():
    p = make_params(None, 1.0, 2)
    assert group_velocity(p, 0, 0.0) == pytest.approx(0.0, abs=1e-10)
    assert group_velocity(p, 0, 2.0) == pytest.approx(0.0, abs=1e-10)
    h = 1e-5
    fd = (band_energies(p, 0.7 + h, n_max=0)[0] - band_energies(p, 0.7 - h, n_max=0)[0]) / (2 * h)
    assert group_velocity(p, 0, 0.7) == pytest.approx(fd, abs=1e-7)
    assert group_velocity(make_params(None, 0.0, 2), 0, 1.0) == pytest.approx(0.5)


def test_band_energy_theta():
    p = make_params(None, 1.0, 2)
    e = band_energy_theta(p, BlochLabel(0, 1, 0.25))
    assert e == pytest.approx(band_energies(p, 1.25, n_max=0)[0] - 0.25**2 / 4)
    with pytest.raises(InvalidParameterError):
        band_energy_theta(p, BlochLabel(0, 3))
    with pytest.raises(InvalidParameterError):
        band_energy_theta(p, BlochLabel(-1, 0))


def test_bloch_state_free_is_plane_wave():
    p = make_params(None, 0.0, 2)
    st_ = bloch_state_on_ring(p, BlochLabel(0, 1), 64)
    c = st_.angular_coefficients()
    assert abs(c[st_.m == 1][0]) == pytest.approx(1.0, abs=1e-12)


def test_bloch_state_is_eigenstate():
    # H psi = E psi on the grid, applying the kinetic part spectrally
    p = make_params(None, 2.0, 2)
    lab = BlochLabel(1, 1)
    st_ = bloch_state_on_ring(p, lab, 128)
    psi = st_.amplitudes
    m = st_.m
    kin = np.fft.ifft(m**2 / (2 * p.I) * np.fft.fft(psi))
    hpsi = kin + p.V * np.cos(2 * st_.phi) ** 2 * psi
    e = band_energies(p, 1.0, n_max=1)[1]
    np.testing.assert_allclose(hpsi, e * psi, atol=1e-9)


def test_grid_rejects_bad_N():
    with pytest.raises(InvalidParameterError):
        bloch_state_on_ring(make_params(None, 1.0, 3), BlochLabel(0, 0), 64)
    g = ring_grid(8)
    assert g[-1] == pytest.approx(np.pi) and g[0] == pytest.approx(-np.pi + np.pi / 4)


def test_table_round_trip():
    p = make_params(None, 1.0, 2)
    buf = io.StringIO()
    write_band_table(band_table(p, [-1.0, 0.5], 2), buf)
    rows = read_band_table(buf.getvalue())
    assert len(rows) == 6
    assert rows[4][1] == 1 and rows[4][0] == 0.5
    assert rows[4][2] == band_energies(p, 0.5, n_max=2)[1]


def test_spec_band_examples():
    e = band_energies(make_params(None, 0.0, 2), 0.0, n_max=2)
    np.testing.assert_allclose(e, [0.0, 4.0, 4.0], atol=1e-13)
    e = band_energies(make_params(None, 0.1, 2), 2.0, n_max=1)
    assert e[1] - e[0] == pytest.approx(0.05, abs=5e-4)
    assert band_energy_theta(make_params(None, 0.0, 2), BlochLabel(0, 0, 2.0)) == pytest.approx(0.0, abs=1e-13)
    p = make_params(None, 1.0, 2)
    assert band_energy_theta(p, BlochLabel(2, 1)) == pytest.approx(band_energies(p, 1.0, n_max=2)[2])
    lo, hi = shallow_bands(p, 2.0)
    assert lo == pytest.approx(1 + 0.25) and hi == pytest.approx(1 + 0.75)
    lo0, _ = shallow_bands(make_params(None, 0.0, 2), np.array([0.5, 1.0, 1.5]))
    np.testing.assert_allclose(lo0, np.array([0.5, 1.0, 1.5]) ** 2 / 4, atol=1e-14)


def test_uniform_ground_state_free():
    st_ = bloch_state_on_ring(make_params(None, 0.0, 2), BlochLabel(0, 0), 32)
    np.testing.assert_allclose(st_.amplitudes, 1 / np.sqrt(2 * np.pi), atol=1e-14)
