"""Prepare-load-rotate-measure experiment, loading study, adiabaticity guards and Landau-Zener analytics."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import loggamma

from .analysis import ObservableTrace
from .bands import BlochLabel, bloch_state_on_ring, solve_bands
from .errors import InvalidParameterError
from .model import DriveSchedule, Program, RingLatticeParams, chirp_for_ramp, ramp_for_chirp
from .propagation import WaveFunction, _project_sector, evolve

log = logging.getLogger(__name__)

LOADING_BOUND = 32.0 * math.sqrt(2.0)
DEFAULT_MIN_MARGIN = 10.0


@dataclass(frozen=True)
class ExperimentConfig:
    """One run of the four-step procedure.

    ``ramp_rate_s`` is d(eta)/dt during rotation and ``chirp_B`` the chirp
    constant (dw = -B t); without an external acceleration exactly one of
    them is given.  With ``external_acceleration`` the chirp (or ramp) is
    added on top of the rotation Omega(t) = omega_dot * t.

    ``preparation`` is ``"ramp"`` (uniform state, linear loading over
    ``load_time_tL``) or ``"ground"`` (start directly in the ground Bloch
    state at full depth, skipping the loading stage).
    """

    params: RingLatticeParams
    rotation_time_tf: float
    ramp_rate_s: Optional[float] = None
    chirp_B: Optional[float] = None
    load_time_tL: float = 0.0
    external_acceleration: Optional[float] = None
    grid_N: int = 256
    dt: float = 0.005
    sample_dt: Optional[float] = None
    measure_only_final: bool = False
    preparation: str = "ramp"
    min_margin: float = DEFAULT_MIN_MARGIN

    def __post_init__(self):
        if not (self.load_time_tL >= 0):
            raise InvalidParameterError("load_time_tL must be >= 0")
        if not (self.rotation_time_tf >= 0):
            raise InvalidParameterError("rotation_time_tf must be >= 0")
        given = (self.ramp_rate_s is not None) + (self.chirp_B is not None)
        if self.external_acceleration is None and given != 1:
            raise InvalidParameterError("give exactly one of ramp_rate_s and chirp_B")
        if self.external_acceleration is not None and given > 1:
            raise InvalidParameterError("ramp_rate_s and chirp_B are mutually exclusive")
        if self.preparation not in ("ramp", "ground"):
            raise InvalidParameterError(f"unknown preparation {self.preparation!r}")
        if self.grid_N % (2 * self.params.l) != 0:
            raise InvalidParameterError(f"grid_N must be a multiple of 2 l = {2 * self.params.l}")
        if self.dt <= 0:
            raise InvalidParameterError("dt must be > 0")

    @property
    def omega_dot(self) -> float:
        return 0.0 if self.external_acceleration is None else float(self.external_acceleration)

    @property
    def chirp(self) -> float:
        """Chirp constant B actually applied."""
        if self.chirp_B is not None:
            return float(self.chirp_B)
        if self.ramp_rate_s is None:
            return 0.0  # rotation only
        return chirp_for_ramp(self.params, self.ramp_rate_s) + 2.0 * self.params.l * self.omega_dot

    @property
    def s(self) -> float:
        """Total ramp rate d(eta)/dt during rotation."""
        return ramp_for_chirp(self.params, self.chirp, self.omega_dot)

    @property
    def bloch_time(self) -> float:
        return math.inf if self.s == 0 else 2.0 * self.params.l / abs(self.s)

    def schedule(self) -> DriveSchedule:
        return DriveSchedule.linear_chirp(self.params.V, self.chirp, self.omega_dot)

    def fingerprint(self) -> str:
        d = asdict(self)
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=float).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AdiabaticityCheck:
    stage: str
    ok: bool
    margin: float
    actual: float
    bound: float


def critical_ramp(params: RingLatticeParams) -> float:
    """s_c = pi l V^2 / (32 hbar E_r)."""
    return math.pi * params.l * params.V**2 / (32.0 * params.hbar * params.Er)


def check_adiabaticity(params: RingLatticeParams, stage: str, value: float,
                       min_margin: float = DEFAULT_MIN_MARGIN) -> AdiabaticityCheck:
    """Margin bound/actual for ``stage="loading"`` (value = t_L) or ``"rotation"`` (value = s)."""
    if stage == "loading":
        if value <= 0:
            raise InvalidParameterError("t_L must be > 0")
        actual = (params.V / params.Er) * params.hbar / (params.Er * value)
        bound = LOADING_BOUND
    elif stage == "rotation":
        actual = abs(value)
        bound = critical_ramp(params)
    else:
        raise InvalidParameterError(f"unknown stage {stage!r}")
    margin = math.inf if actual == 0 else bound / actual
    return AdiabaticityCheck(stage, bool(margin >= min_margin), margin, actual, bound)


@dataclass(frozen=True)
class LZReport:
    gamma: float
    T_LZ: float
    phi_LZ: float
    s_c: float
    adiabatic_margin: float

    def to_dict(self) -> dict:
        return asdict(self)


def lz_phase(gamma: float) -> float:
    """pi/4 + arg Gamma(1 - i gamma) + gamma (ln gamma - 1), continuous in gamma."""
    return float(math.pi / 4 + loggamma(1 - 1j * gamma).imag + gamma * (math.log(gamma) - 1.0))


def lz_analytics(params: RingLatticeParams, s: float) -> LZReport:
    if not s > 0:
        raise InvalidParameterError("s must be > 0")
    if not params.V > 0:
        raise InvalidParameterError("V must be > 0")
    gamma = (params.V / 4.0) ** 2 / (params.hbar * 4.0 * params.Er * s / params.l)
    sc = critical_ramp(params)
    return LZReport(gamma, math.exp(-2 * math.pi * gamma), lz_phase(gamma), sc, sc / s)


def staircase_prediction(T_LZ: float, N_B: int, l: int) -> float:
    """<L_z>(N_B t_B) in units of hbar when each zone-edge passage leaks a fraction T_LZ."""
    if not 0.0 <= T_LZ <= 1.0:
        raise InvalidParameterError("T_LZ must lie in [0, 1]")
    if N_B < 0 or int(N_B) != N_B:
        raise InvalidParameterError("N_B must be a non-negative integer")
    r = 1.0 - T_LZ
    tail = sum(j * r**j for j in range(int(N_B)))
    return -2.0 * l * (N_B * r**N_B + T_LZ * tail)


def loading_schedule(V: float, t_L: float) -> DriveSchedule:
    """Linear ramp 0 -> V over [0, t_L], no rotation or chirp."""
    return DriveSchedule(Program.from_segments([(0.0, 0.0, V / t_L), (t_L, V, 0.0)]))


def load_state(params: RingLatticeParams, t_L: float, grid_N: int = 256, dt: float = 0.001) -> WaveFunction:
    """Uniform ring state after the linear loading ramp (lab frame)."""
    psi0 = WaveFunction.uniform(grid_N)
    if params.V == 0 or t_L == 0:
        return psi0
    traj = evolve(psi0, params, loading_schedule(params.V, t_L), (0.0, t_L), dt=min(dt, t_L / 4),
                  sample_every=10**9, frame="lab")
    return traj.final


def loading_fidelity(params: RingLatticeParams, t_L: float, grid_N: int = 256, dt: float = 0.001) -> float:
    """|<ground Bloch state at full depth | state after the ramp>|^2."""
    if not t_L > 0:
        raise InvalidParameterError("t_L must be > 0")
    if params.V == 0:
        return 1.0
    target = bloch_state_on_ring(params, BlochLabel(0, 0, 0.0), grid_N)
    return float(abs(target.inner(load_state(params, t_L, grid_N, dt))) ** 2)


def loading_populations(params: RingLatticeParams, t_L: float, n_bands: int = 5, grid_N: int = 256,
                        dt: float = 0.001, k_max: int = 16) -> np.ndarray:
    """Populations of the full-depth bands n = 0..n_bands-1 (m = 0) after loading."""
    state = load_state(params, t_L, grid_N, dt)
    sol = solve_bands(params, 0.0, n_max=n_bands - 1, k_max=max(k_max, n_bands + 4), check=False)
    b = _project_sector(state, params.l, 0, sol.k_max, sol.coefficients.T)
    return np.abs(b) ** 2


def _warn(trace_warnings: list, msg: str) -> None:
    log.warning(msg)
    trace_warnings.append(msg)


def run_experiment(config: ExperimentConfig) -> ObservableTrace:
    """Prepare, load, rotate and record <L_z>(t) over the rotation stage.

    The measurement is the value of <L_z> at t_f; it is conserved once the
    lattice is switched off, so the free expansion is not simulated.  The
    rotation stage runs in the co-rotating frame, where <L_z> takes the same
    value as in the lab frame.
    """
    P = config.params
    warnings: list[str] = []
    if config.preparation == "ramp" and config.load_time_tL > 0 and P.V > 0:
        chk = check_adiabaticity(P, "loading", config.load_time_tL, config.min_margin)
        if not chk.ok:
            _warn(warnings, f"loading not adiabatic: margin {chk.margin:.3g} < {config.min_margin}")
    elif config.preparation == "ramp" and P.V > 0:
        _warn(warnings, "zero loading time: the lattice is switched on suddenly")
    s = config.s
    if s != 0 and P.V > 0:
        chk = check_adiabaticity(P, "rotation", s, config.min_margin)
        if not chk.ok:
            _warn(warnings, f"rotation not adiabatic: s_c/s = {chk.margin:.3g} < {config.min_margin}")

    if config.preparation == "ground":
        state = bloch_state_on_ring(P, BlochLabel(0, 0, 0.0), config.grid_N)
    else:
        state = load_state(P, config.load_time_tL, config.grid_N, min(config.dt, 0.001))

    tf = config.rotation_time_tf
    sample_dt = config.sample_dt if config.sample_dt is not None else max(config.dt, min(1.0, tf / 2000.0))
    every = max(1, int(round(sample_dt / config.dt)))
    meta = {
        "config": config.fingerprint(),
        "s": s,
        "B": config.chirp,
        "omega_dot": config.omega_dot,
        "t_B": config.bloch_time,
        "I": P.I,
        "V": P.V,
        "l": P.l,
        "hbar": P.hbar,
    }
    if tf == 0:
        lz = float(np.dot(state.m, np.abs(state.angular_coefficients()) ** 2)) * P.hbar
        return ObservableTrace(np.array([0.0]), np.array([lz]), frame="lab", metadata=meta, warnings=warnings)
    n_steps = max(1, int(math.ceil(tf / config.dt - 1e-9)))
    if config.measure_only_final:
        every = n_steps
    traj = evolve(state, P, config.schedule(), (0.0, tf), dt=tf / n_steps,
                  sample_every=min(every, n_steps), frame="corotating", adapt=False)
    times, Lz = traj.times, traj.Lz
    if config.measure_only_final:
        times, Lz = times[-1:], Lz[-1:]
    return ObservableTrace(times, Lz, frame="lab", metadata=meta, warnings=warnings)
