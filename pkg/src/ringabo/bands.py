"""Bloch bands of the ring lattice from the plane-wave (central) equation.

The periodic part of a Bloch state is expanded as
``u_{n,q}(phi) = sum_k c_k exp(-2i l k phi)`` for ``k = -k_max..k_max``; the
Hamiltonian in that basis is real symmetric tridiagonal with diagonal
``E_r (q - 2 l k)^2 / l^2 + V/2`` and off-diagonal ``V/4``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal

from .errors import AccuracyError, InvalidParameterError, NumericalError
from .model import RingLatticeParams

DEFAULT_KMAX = 32


@dataclass(frozen=True)
class BandSolution:
    q: float
    energies: np.ndarray
    coefficients: np.ndarray  # shape (n_bands, 2 k_max + 1), real
    k_max: int

    @property
    def k(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    def momentum(self, l: int) -> np.ndarray:
        """<-i d/dphi> of each u_{n,q} (hbar units)."""
        return (self.coefficients**2) @ (-2.0 * l * self.k)


@dataclass(frozen=True)
class BlochLabel:
    n: int
    m: int
    eta0: float = 0.0

    def validate(self, l: int) -> None:
        if self.n < 0:
            raise InvalidParameterError("band index must be >= 0")
        if not (-l < self.m <= l):
            raise InvalidParameterError(f"m = {self.m} outside the first Brillouin zone (-{l}, {l}]")


def central_matrix(params: RingLatticeParams, q: float, k_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the plane-wave Hamiltonian."""
    k = np.arange(-k_max, k_max + 1)
    diag = params.Er * (q - 2 * params.l * k) ** 2 / params.l**2 + params.V / 2.0
    off = np.full(2 * k_max, params.V / 4.0)
    return diag, off


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude component positive, one row per band
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def _order_degenerate(w, v, l, k):
    """Within exact-degenerate groups order by |<-i d/dphi>| ascending."""
    p = (v**2).T @ (-2.0 * l * k)
    order = np.arange(len(w))
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[j] - w[i]) <= 1e-12 * (1.0 + abs(w[i])):
            j += 1
        if j - i > 1:
            grp = order[i:j]
            order[i:j] = grp[np.lexsort((p[grp], np.abs(p[grp])))]
        i = j
    return w[order], v[:, order]


def solve_bands(params: RingLatticeParams, q: float, n_max: int = 4, k_max: int = DEFAULT_KMAX,
                check: bool = True) -> BandSolution:
    """Bands ``0..n_max`` at quasi angular momentum ``q``.

    With ``check`` the requested energies are recomputed at ``2 k_max`` and
    an :class:`AccuracyError` is raised if they move by more than 1e-6 E_r.
    """
    if n_max < 0:
        raise InvalidParameterError("n_max must be >= 0")
    if k_max < n_max + 4:
        raise InvalidParameterError(f"k_max = {k_max} must be >= n_max + 4 = {n_max + 4}")
    diag, off = central_matrix(params, q, k_max)
    try:
        w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, n_max))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"tridiagonal eigensolver failed at q={q}: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalError(f"non-finite band energies at q={q}")
    if check:
        d2, o2 = central_matrix(params, q, 2 * k_max)
        w2 = eigvalsh_tridiagonal(d2, o2, select="i", select_range=(0, n_max))
        if np.max(np.abs(w2 - w)) > 1e-6 * params.Er:
            raise AccuracyError(f"k_max = {k_max} too small at q = {q}: bands move by {np.max(np.abs(w2 - w)):.3g}")
    w, v = _order_degenerate(w, v, params.l, np.arange(-k_max, k_max + 1))
    return BandSolution(float(q), w, _fix_sign(v.T), k_max)


def band_energies(params: RingLatticeParams, q, n_max: int = 4, k_max: int = DEFAULT_KMAX) -> np.ndarray:
    """Energies only, for scalar or array ``q``; shape ``q.shape + (n_max + 1,)``."""
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    out = np.empty((qs.size, n_max + 1))
    for i, qq in enumerate(qs.ravel()):
        d, o = central_matrix(params, qq, k_max)
        out[i] = eigvalsh_tridiagonal(d, o, select="i", select_range=(0, n_max))
    return out.reshape(np.shape(q) + (n_max + 1,))


def dense_band_energies(params: RingLatticeParams, q: float, n_max: int, k_max: int) -> np.ndarray:
    """Reference energies from full dense diagonalisation (independent of LAPACK tridiagonal routines)."""
    d, o = central_matrix(params, q, k_max)
    H = np.diag(d) + np.diag(o, 1) + np.diag(o, -1)
    return np.linalg.eigvalsh(H)[: n_max + 1]


BandLookup = Callable[[int, float], float]


def band_energy_theta(params: RingLatticeParams, label: BlochLabel, bands: Optional[BandLookup] = None) -> float:
    """Co-rotating frame energy E_n(m + eta0) - hbar^2 eta0^2 / (2 I)."""
    label.validate(params.l)
    q = label.m + label.eta0
    if bands is None:
        e = solve_bands(params, q, n_max=label.n, k_max=max(DEFAULT_KMAX, label.n + 4), check=False).energies[label.n]
    else:
        e = bands(label.n, q)
    return float(e) - params.hbar**2 * label.eta0**2 / (2.0 * params.I)


def _hellmann_feynman(params, n, q, k_max):
    sol = solve_bands(params, q, n_max=n, k_max=k_max, check=False)
    c2 = sol.coefficients[n] ** 2
    return float(np.sum(c2 * 2.0 * params.Er * (q - 2 * params.l * sol.k) / params.l**2))


def _finite_difference(params, n, q, k_max, h=1e-4):
    e = [band_energies(params, q + j * h, n_max=n, k_max=k_max)[n] for j in (-2, -1, 1, 2)]
    return (e[0] - 8 * e[1] + 8 * e[2] - e[3]) / (12 * h)


def group_velocity(params: RingLatticeParams, n: int, q: float, k_max: int = DEFAULT_KMAX,
                   tol: float = 1e-6) -> float:
    """dE_n/dq by Hellmann-Feynman, cross-checked with a 5-point difference."""
    hf = _hellmann_feynman(params, n, q, max(k_max, n + 4))
    fd = _finite_difference(params, n, q, max(k_max, n + 4))
    if abs(hf - fd) > tol * params.Er:
        raise NumericalError(
            f"group velocity routes disagree at n={n}, q={q}: HF={hf:.12g}, FD={fd:.12g} (near-degenerate bands?)"
        )
    return hf


def shallow_bands(params: RingLatticeParams, q):
    """Two-band closed forms for a shallow lattice near the zone edge q = l."""
    x = 1.0 - np.asarray(q, dtype=float) / params.l
    base = params.V / 2.0 + params.Er * (1.0 + x**2)
    root = np.sqrt(params.V**2 / 16.0 + 4.0 * params.Er**2 * x**2)
    return base - root, base + root


def ring_grid(N: int) -> np.ndarray:
    """phi_j = -pi + 2 pi (j + 1) / N, j = 0..N-1."""
    return -np.pi + 2.0 * np.pi * (np.arange(N) + 1) / N


def bloch_state_on_ring(params: RingLatticeParams, label: BlochLabel, grid_N: int, k_max: int = DEFAULT_KMAX):
    """Theta_{n,m}(phi) = exp(i m phi) u_{n, m + eta0}(phi) sampled on the ring grid."""
    from .propagation import WaveFunction

    label.validate(params.l)
    if grid_N % (2 * params.l) != 0:
        raise InvalidParameterError(f"grid_N = {grid_N} must be a multiple of 2 l = {2 * params.l}")
    sol = solve_bands(params, label.m + label.eta0, n_max=label.n, k_max=max(k_max, label.n + 4), check=False)
    phi = ring_grid(grid_N)
    c = sol.coefficients[label.n]
    psi = np.exp(1j * np.outer(phi, label.m - 2 * params.l * sol.k)) @ c / np.sqrt(2.0 * np.pi)
    return WaveFunction.normalized(psi)


def write_band_table(rows, fh) -> None:
    """CSV with columns q, n, E_n from an iterable of (q, n, E) tuples."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["q", "n", "E_n"])
    for q, n, e in rows:
        w.writerow([f"{q:.16e}", int(n), f"{e:.16e}"])


def band_table(params: RingLatticeParams, qs, n_max: int, k_max: int = DEFAULT_KMAX):
    for q in qs:
        sol = solve_bands(params, q, n_max=n_max, k_max=k_max)
        for n, e in enumerate(sol.energies):
            yield float(q), n, float(e)


def read_band_table(fh) -> list[tuple[float, int, float]]:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    r = csv.DictReader(fh)
    return [(float(row["q"]), int(row["n"]), float(row["E_n"])) for row in r]
