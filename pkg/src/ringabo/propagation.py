"""Time evolution on the ring.

``evolve`` is a Strang split-step integrator on a uniform periodic grid;
``evolve_band_basis`` and ``two_level_evolve`` are independent reference
propagators (Bloch-basis ODEs and the two-mode zone-edge model).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.fft import fft, ifft
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal

from .bands import central_matrix, ring_grid
from .errors import IntegratorError, InvalidParameterError, NumericalError
from .model import (DriveSchedule, RingLatticeParams, chirp_phase, depth_rate, eta_of_t, omega_eff,
                    ramp_rate)

log = logging.getLogger(__name__)

NORM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Samples on phi_j = -pi + 2 pi (j+1)/N with sum |psi_j|^2 * 2 pi / N = 1."""

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex, copy=True)
        if a.ndim != 1 or a.size < 2:
            raise InvalidParameterError("wave function must be a 1D array")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def normalized(cls, psi) -> "WaveFunction":
        psi = np.asarray(psi, dtype=complex)
        n = np.sqrt(np.sum(np.abs(psi) ** 2) * 2 * np.pi / psi.size)
        if not n > 0:
            raise InvalidParameterError("cannot normalise a zero wave function")
        return cls(psi / n)

    @classmethod
    def uniform(cls, N: int) -> "WaveFunction":
        return cls(np.full(N, 1.0 / np.sqrt(2 * np.pi), dtype=complex))

    @classmethod
    def plane_wave(cls, N: int, m: int) -> "WaveFunction":
        return cls(np.exp(1j * m * ring_grid(N)) / np.sqrt(2 * np.pi))

    @property
    def N(self) -> int:
        return self.amplitudes.size

    @property
    def phi(self) -> np.ndarray:
        return ring_grid(self.N)

    @property
    def m(self) -> np.ndarray:
        return np.rint(np.fft.fftfreq(self.N, 1.0 / self.N)).astype(int)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * 2 * np.pi / self.N)

    def angular_coefficients(self) -> np.ndarray:
        """c_m with psi(phi) = sum_m c_m exp(i m phi) / sqrt(2 pi), ordered like :attr:`m`."""
        phase = np.exp(-1j * self.m * self.phi[0])
        return fft(self.amplitudes) * phase * np.sqrt(2 * np.pi) / self.N

    def inner(self, other: "WaveFunction") -> complex:
        """<self|other> under the grid inner product."""
        return complex(np.vdot(self.amplitudes, other.amplitudes) * 2 * np.pi / self.N)


def gauge_map(state: WaveFunction, a: float, l: int, direction: str = "to_corotating") -> WaveFunction:
    """Rigid rotation by a/l relating lab (Phi) and co-rotating (Theta) wave functions.

    ``to_corotating`` gives Theta(phi) = Phi(phi + a/l); ``to_lab`` inverts it.
    """
    if direction == "to_corotating":
        sign = 1.0
    elif direction == "to_lab":
        sign = -1.0
    else:
        raise InvalidParameterError(f"unknown direction {direction!r}")
    c = fft(state.amplitudes)
    return WaveFunction(ifft(c * np.exp(1j * sign * state.m * a / l)))


@dataclass
class Trajectory:
    times: np.ndarray
    Lz: np.ndarray
    norm: np.ndarray
    frame: str
    final: WaveFunction
    dt: float
    n_steps: int
    states: Optional[list] = None

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def _check_grid(N: int, l: int) -> None:
    if N % (2 * l) != 0:
        raise InvalidParameterError(f"grid size N = {N} must be a multiple of 2 l = {2 * l}")


def _step_plan(schedule, params, t0, T, dt, frame, adapt):
    """Midpoint samples of V, rotation and lattice offset; halve dt while they jump by >1 %."""
    n = max(1, int(np.ceil(abs(T) / abs(dt) - 1e-9)))
    for _ in range(12):
        h = T / n
        tm = t0 + (np.arange(n) + 0.5) * h
        V = np.asarray(schedule.V(tm), dtype=float)
        if frame == "corotating":
            W = np.asarray(omega_eff(schedule, params, tm), dtype=float)
            a = None
        else:
            W = np.asarray(schedule.omega(tm), dtype=float)
            a = np.asarray(chirp_phase(schedule, tm), dtype=float)
        if not adapt or n < 2:
            break
        eta = W * params.I / params.hbar
        v_scale = np.max(np.abs(V)) + params.Er
        e_scale = np.max(np.abs(eta)) + 1.0
        jump_v = np.max(np.abs(np.diff(V))) / v_scale
        jump_w = np.max(np.abs(np.diff(eta))) / e_scale
        if jump_v <= 0.01 and jump_w <= 0.01:
            break
        n *= 2
    return n, T / n, V, W, a


def evolve(initial: WaveFunction, params: RingLatticeParams, schedule: DriveSchedule,
           t_span: Sequence[float], dt: float = 0.005, sample_every: int = 1,
           frame: str = "corotating", store_states: bool = False, max_dt: float = 0.01,
           adapt: bool = True) -> Trajectory:
    """Strang split-step propagation (half kinetic, full potential, half kinetic).

    In the co-rotating frame the potential is V(t) cos^2(l phi) and the
    rotation term uses Omega_eff; in the lab frame the potential is
    V(t) cos^2(l phi - a(t)) with the bare Omega(t).  Time-dependent inputs
    are evaluated at step midpoints.  ``t_span`` may run backwards.
    """
    if frame not in ("corotating", "lab"):
        raise InvalidParameterError(f"unknown frame {frame!r}")
    t0, t1 = map(float, t_span)
    N = initial.N
    _check_grid(N, params.l)
    if abs(dt) > max_dt / params.wr:
        raise InvalidParameterError(f"dt = {dt} exceeds the guard {max_dt}/omega_r")
    if sample_every < 1:
        raise InvalidParameterError("sample_every must be >= 1")
    if abs(initial.norm() - 1.0) > 1e-8:
        raise InvalidParameterError("initial state is not normalised")
    schedule.validate(t0, t1)
    T = t1 - t0
    if T == 0:
        raise InvalidParameterError("empty time span")
    n, h, Vm, Wm, am = _step_plan(schedule, params, t0, T, abs(dt), frame, adapt)

    hbar, I, l = params.hbar, params.I, params.l
    m = initial.m.astype(float)
    phi = initial.phi
    cos2 = np.cos(l * phi) ** 2
    kin = 0.5 * h * hbar * m**2 / (2.0 * I)  # half-step kinetic phase
    rot = 0.5 * h * m  # multiplied by -W gives the half-step rotation phase
    c = fft(initial.amplitudes)
    norm_factor = 2 * np.pi / N**2

    n_samples = n // sample_every + 1
    times = t0 + np.arange(n_samples) * sample_every * h
    Lz = np.empty(n_samples)
    norms = np.empty(n_samples)
    states = [] if store_states else None

    def record(k):
        p = c.real**2 + c.imag**2
        tot = p.sum()
        norms[k] = tot * norm_factor
        Lz[k] = hbar * np.dot(m, p) / tot
        if not np.isfinite(tot):
            raise NumericalError(f"non-finite state at t = {times[k]}")
        if abs(norms[k] - 1.0) > NORM_TOL:
            raise IntegratorError(f"norm drift {norms[k] - 1.0:.3g} at t = {times[k]}")
        if states is not None:
            states.append(WaveFunction(ifft(c)))

    record(0)
    half = np.empty(N, dtype=complex)
    pot = np.empty(N, dtype=complex)
    last_V = None
    for j in range(n):
        ang = kin - rot * Wm[j]
        half.real = np.cos(ang)
        half.imag = -np.sin(ang)
        if am is not None:
            ang_v = h * Vm[j] / hbar * np.cos(l * phi - am[j]) ** 2
            pot.real = np.cos(ang_v)
            pot.imag = -np.sin(ang_v)
        elif Vm[j] != last_V:
            ang_v = h * Vm[j] / hbar * cos2
            pot.real = np.cos(ang_v)
            pot.imag = -np.sin(ang_v)
            last_V = Vm[j]
        c *= half
        psi = ifft(c)
        psi *= pot
        c = fft(psi)
        c *= half
        if (j + 1) % sample_every == 0:
            record((j + 1) // sample_every)
    final = WaveFunction(ifft(c))
    fn = final.norm()
    if not np.isfinite(fn) or abs(fn - 1.0) > NORM_TOL:
        raise IntegratorError(f"final norm drift {fn - 1.0:.3g}")
    return Trajectory(times, Lz, norms, frame, final, h, n, states)


# ---------------------------------------------------------------------------
# Bloch-basis reference propagator


@dataclass
class BandTrajectory:
    times: np.ndarray
    coefficients: dict  # m -> array (n_times, n_bands)
    Lz: np.ndarray
    population: np.ndarray
    basis: str

    def populations(self, n: int, m: int = 0) -> np.ndarray:
        return np.abs(self.coefficients[m][:, n]) ** 2


class _SectorBasis:
    """Real eigenvectors of one m-sector, kept sign-continuous between calls."""

    def __init__(self, params, m, n_bands, k_max):
        self.params, self.m, self.nb, self.k_max = params, m, n_bands, k_max
        self.k = np.arange(-k_max, k_max + 1)
        self.p = m - 2 * params.l * self.k
        self.ref = None

    def solve(self, eta, V, align=True):
        P = self.params.with_depth(V)
        d, o = central_matrix(P, self.m + eta, self.k_max)
        w, v = eigh_tridiagonal(d, o, select="i", select_range=(0, self.nb - 1))
        if self.ref is None:
            idx = np.argmax(np.abs(v), axis=0)
            v = v * np.sign(v[idx, np.arange(self.nb)])
        elif align:
            ov = np.einsum("kn,kn->n", self.ref, v)
            if np.min(np.abs(ov)) < 0.5:
                raise IntegratorError("instantaneous basis changed too fast between evaluations")
            v = v * np.sign(ov)
        self.ref = v
        return w, v


def _project_sector(state: WaveFunction, l: int, m: int, k_max: int, eigvecs: np.ndarray) -> np.ndarray:
    c = state.angular_coefficients()
    lookup = dict(zip(state.m.tolist(), c))
    pw = np.array([lookup.get(m - 2 * l * k, 0.0) for k in range(-k_max, k_max + 1)])
    return eigvecs.T @ pw


def evolve_band_basis(initial: Mapping | WaveFunction, params: RingLatticeParams, schedule: DriveSchedule,
                      t_span: Sequence[float], t_eval: Optional[np.ndarray] = None, n_bands: int = 3,
                      k_max: int = 16, basis: str = "instantaneous", t_ref: Optional[float] = None,
                      rtol: float = 1e-9, atol: float = 1e-11, max_step: float = 0.1) -> BandTrajectory:
    """Integrate the Bloch-state expansion coefficients with adaptive RK45.

    ``basis="instantaneous"`` expands in eigenstates of H(t) and couples
    bands through <n|dH/dt|n'> / (E_n - E_n'); ``basis="fixed"`` expands in
    eigenstates of H(t_ref) and integrates i hbar dC/dt = H(t) C.  The
    initial state is a map (n, m) -> amplitude in the t0 (or t_ref) basis,
    or a :class:`WaveFunction` that is projected onto it.
    """
    if basis not in ("instantaneous", "fixed"):
        raise InvalidParameterError(f"unknown basis {basis!r}")
    if k_max < n_bands + 2:
        raise InvalidParameterError("k_max too small for the requested number of bands")
    t0, t1 = map(float, t_span)
    hbar, I, l = params.hbar, params.I, params.l
    if t_ref is None:
        t_ref = t0 if basis == "instantaneous" else t1
    eta_fn = lambda t: float(eta_of_t(schedule, params, t))
    if isinstance(initial, WaveFunction):
        sectors = sorted({int(((mm + l - 1) % (2 * l)) - l + 1) for mm in initial.m[np.abs(initial.angular_coefficients()) > 1e-12]})
    else:
        sectors = sorted({m for (_, m) in initial})
    for m in sectors:
        if not (-l < m <= l):
            raise InvalidParameterError(f"m = {m} outside the first Brillouin zone")
    bases = {m: _SectorBasis(params, m, n_bands, k_max) for m in sectors}

    c0 = []
    for m in sectors:
        w, v = bases[m].solve(eta_fn(t_ref if basis == "fixed" else t0), float(schedule.V(t_ref if basis == "fixed" else t0)))
        if isinstance(initial, WaveFunction):
            c0.append(_project_sector(initial, l, m, k_max, v))
        else:
            vec = np.zeros(n_bands, dtype=complex)
            for (n, mm), amp in initial.items():
                if mm == m:
                    if n >= n_bands:
                        raise InvalidParameterError(f"band {n} beyond truncation n_bands={n_bands}")
                    vec[n] = amp
            c0.append(vec)
    y0 = np.concatenate(c0)
    nb = n_bands

    if basis == "fixed":
        ops = []
        for m in sectors:
            v = bases[m].ref
            p = bases[m].p.astype(float)
            A = v.T @ (p[:, None] ** 2 * v)
            B = v.T @ (p[:, None] * v)
            off = np.full(2 * k_max, 0.25)
            C = v.T @ (0.5 * v) + v.T @ (np.diag(off, 1) + np.diag(off, -1)) @ v
            ops.append((A, B, C))

        def rhs(t, y):
            eta = eta_fn(t)
            V = float(schedule.V(t))
            out = np.empty_like(y)
            for i, (A, B, C) in enumerate(ops):
                H = hbar**2 / (2 * I) * A + hbar**2 * eta / I * B + V * C
                out[i * nb:(i + 1) * nb] = -1j / hbar * (H @ y[i * nb:(i + 1) * nb])
            return out
    else:
        # interaction picture: c_n = b_n exp(-i theta_n), d(theta_n)/dt = E_n / hbar
        def rhs(t, y):
            eta = eta_fn(t)
            V = float(schedule.V(t))
            deta = ramp_rate(schedule, params, t)
            dV = depth_rate(schedule, t)
            out = np.empty_like(y)
            for i, m in enumerate(sectors):
                b = bases[m]
                w, v = b.solve(eta, V)
                E = w - hbar**2 * eta**2 / (2 * I)
                gaps = E[:, None] - E[None, :]
                np.fill_diagonal(gaps, np.inf)
                if np.min(np.abs(gaps)) < 1e-8 * params.Er:
                    raise IntegratorError("near-degenerate bands: use the two-level model instead")
                dH = deta * hbar**2 / I * (m + eta - 2 * l * b.k) + dV * 0.5
                M = v.T @ (dH[:, None] * v)
                if dV != 0.0:
                    M += dV * 0.25 * (v[:-1].T @ v[1:] + v[1:].T @ v[:-1])
                lo = 2 * i * nb
                amp = y[lo:lo + nb]
                rot = np.exp(1j * y[lo + nb:lo + 2 * nb].real)
                out[lo:lo + nb] = ((M / gaps) * np.outer(rot, rot.conj())) @ amp
                out[lo + nb:lo + 2 * nb] = E / hbar
            return out

        y0 = np.concatenate([np.concatenate([y0[i * nb:(i + 1) * nb], np.zeros(nb)]) for i in range(len(sectors))])

    if t_eval is None:
        t_eval = np.linspace(t0, t1, 201)
    sol = solve_ivp(rhs, (t0, t1), y0, method="RK45", t_eval=t_eval, rtol=rtol, atol=atol,
                    max_step=max_step)
    if not sol.success:
        raise NumericalError(f"band-basis integration failed: {sol.message}")
    Y = sol.y.T
    if basis == "instantaneous":
        parts = []
        for i in range(len(sectors)):
            lo = 2 * i * nb
            parts.append(Y[:, lo:lo + nb] * np.exp(-1j * Y[:, lo + nb:lo + 2 * nb].real))
        Y = np.concatenate(parts, axis=1)
    pop = np.sum(np.abs(Y) ** 2, axis=1)
    if np.max(np.abs(pop - pop[0])) > 1e-8:
        raise IntegratorError(f"band-basis population drift {np.max(np.abs(pop - pop[0])):.3g}")

    coeffs = {m: Y[:, i * nb:(i + 1) * nb] for i, m in enumerate(sectors)}
    Lz = np.zeros(len(sol.t))
    fresh = {m: _SectorBasis(params, m, n_bands, k_max) for m in sectors}
    for m in sectors:
        fb = fresh[m]
        if basis == "fixed":
            fb.ref = bases[m].ref
        t_prev = t0
        if basis != "fixed":
            fb.solve(eta_fn(t0), float(schedule.V(t0)))
        for j, t in enumerate(sol.t):
            if basis == "fixed":
                v = fb.ref
            else:
                # walk the gauge forward in small steps so signs stay continuous
                nsub = max(1, int(np.ceil(abs(t - t_prev) / max_step)))
                for tt in np.linspace(t_prev, t, nsub + 1)[1:]:
                    _, v = fb.solve(eta_fn(tt), float(schedule.V(tt)))
                v = fb.ref
                t_prev = t
            amp = v @ coeffs[m][j]
            Lz[j] += hbar * np.sum(np.abs(amp) ** 2 * fb.p)
    Lz /= pop
    return BandTrajectory(sol.t, coeffs, Lz, pop, basis)


# ---------------------------------------------------------------------------
# two-mode zone-edge model


@dataclass
class TwoLevelResult:
    eta: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    excited_fraction: float


def _two_level_h(params, eta):
    er, V, l = params.Er, params.V, params.l
    return np.array([[V / 2, V / 4], [V / 4, 4 * er * (1 - eta / l) + V / 2]])


def two_level_evolve(params: RingLatticeParams, s: float, eta_span: Sequence[float],
                     n_eval: int = 401) -> TwoLevelResult:
    """Coupled k = 0 / k = 1 plane waves swept through the zone edge with eta = s t.

    Starts in the lower adiabatic state at ``eta_span[0]`` and reports the
    population of the upper adiabatic state at ``eta_span[1]``.
    """
    if s <= 0:
        raise InvalidParameterError("ramp rate s must be > 0")
    e0, e1 = map(float, eta_span)
    hbar = params.hbar
    _, v = np.linalg.eigh(_two_level_h(params, e0))
    y0 = v[:, 0].astype(complex)

    def rhs(eta, y):
        return -1j / (hbar * s) * (_two_level_h(params, eta) @ y)

    etas = np.linspace(e0, e1, n_eval)
    sol = solve_ivp(rhs, (e0, e1), y0, method="DOP853", t_eval=etas, rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise NumericalError(f"two-level integration failed: {sol.message}")
    _, v1 = np.linalg.eigh(_two_level_h(params, e1))
    yf = sol.y[:, -1]
    excited = float(np.abs(np.vdot(v1[:, 1], yf)) ** 2)
    return TwoLevelResult(sol.t, sol.y[0], sol.y[1], excited)


# ---------------------------------------------------------------------------
# snapshots


def write_snapshots(traj: Trajectory, fh) -> None:
    """Plain-text dump: a ``# t = ...`` header then ``phi Re Im`` lines per stored state."""
    if not traj.states:
        raise InvalidParameterError("trajectory has no stored states")
    for t, st in zip(traj.times, traj.states):
        fh.write(f"# t = {t:.16e}\n")
        for p, a in zip(st.phi, st.amplitudes):
            fh.write(f"{p:.16e} {a.real:.16e} {a.imag:.16e}\n")


def read_snapshots(fh) -> list[tuple[float, WaveFunction]]:
    out, t, rows = [], None, []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if t is not None:
                out.append((t, WaveFunction(np.array(rows))))
            t = float(line.split("=")[1])
            rows = []
        else:
            _, re, im = line.split()
            rows.append(float(re) + 1j * float(im))
    if t is not None:
        out.append((t, WaveFunction(np.array(rows))))
    return out
