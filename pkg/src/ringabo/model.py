"""Effective 1D ring-lattice model: units, parameters and drive schedules.

All simulation code works in units where hbar = 1, energies are measured in
the recoil energy E_r = hbar^2 l^2 / (2 I) and times in 1/omega_r.  Physical
inputs are converted with :meth:`RingLatticeParams.to_dimensionless`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate

from .errors import InvalidParameterError, NumericalError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class UnitSystem:
    mode: str = "dimensionless"
    hbar: float = 1.0
    energy_scale: float = 1.0
    time_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("dimensionless", "physical"):
            raise InvalidParameterError(f"unknown unit mode {self.mode!r}")
        if self.mode == "dimensionless" and self.hbar != 1.0:
            raise InvalidParameterError("dimensionless mode requires hbar = 1")
        if not self.hbar > 0:
            raise InvalidParameterError("hbar must be positive")

    @classmethod
    def dimensionless(cls) -> "UnitSystem":
        return cls("dimensionless", 1.0, 1.0, 1.0)

    @classmethod
    def physical(cls, hbar: float) -> "UnitSystem":
        return cls("physical", float(hbar), 1.0, 1.0)


@dataclass(frozen=True)
class RingLatticeParams:
    """Moment of inertia ``I``, lattice depth ``V`` and azimuthal index ``l``.

    ``Er`` and ``wr`` are derived on construction and never passed in.
    """

    I: float
    V: float
    l: int
    hbar: float = 1.0
    Er: float = field(init=False)
    wr: float = field(init=False)

    def __post_init__(self):
        if isinstance(self.l, bool) or int(self.l) != self.l or self.l < 1:
            raise InvalidParameterError("azimuthal_l must be >= 1")
        if not (np.isfinite(self.I) and self.I > 0):
            raise InvalidParameterError("inertia_I must be > 0")
        if not (np.isfinite(self.V) and self.V >= 0):
            raise InvalidParameterError("depth_V must be >= 0")
        if not self.hbar > 0:
            raise InvalidParameterError("hbar must be > 0")
        object.__setattr__(self, "l", int(self.l))
        er = self.hbar**2 * self.l**2 / (2.0 * self.I)
        object.__setattr__(self, "Er", er)
        object.__setattr__(self, "wr", er / self.hbar)

    def with_depth(self, V: float) -> "RingLatticeParams":
        return RingLatticeParams(self.I, V, self.l, self.hbar)

    def to_dimensionless(self) -> "RingLatticeParams":
        """Same physics with hbar = 1, I = l^2/2 (so E_r = omega_r = 1)."""
        return RingLatticeParams(self.l**2 / 2.0, self.V / self.Er, self.l, 1.0)

    @property
    def time_unit(self) -> float:
        return 1.0 / self.wr


def make_params(I: float | None, V: float, l: int, units: UnitSystem | None = None) -> RingLatticeParams:
    """Build validated model parameters.

    In dimensionless mode ``I`` may be omitted and defaults to l^2/2; any
    other value is rejected because it would make E_r != 1.
    """
    units = units or UnitSystem.dimensionless()
    if isinstance(l, bool) or int(l) != l or l < 1:
        raise InvalidParameterError("azimuthal_l must be >= 1")
    if units.mode == "dimensionless":
        natural = l**2 / 2.0
        if I is None:
            I = natural
        elif not np.isclose(I, natural, rtol=1e-12, atol=0.0):
            raise InvalidParameterError(
                f"inertia_I = {I} is inconsistent with dimensionless units (expected l^2/2 = {natural})"
            )
        else:
            I = natural
    elif I is None:
        raise InvalidParameterError("inertia_I is required in physical mode")
    return RingLatticeParams(float(I), float(V), int(l), units.hbar)


# ---------------------------------------------------------------------------
# Piecewise time programs


@dataclass(frozen=True)
class Segment:
    start: float
    value: float
    slope: float = 0.0


@dataclass(frozen=True)
class Program:
    """Piecewise constant/linear function of time.

    Segment ``i`` holds for ``segments[i].start <= t < segments[i+1].start``
    and is evaluated as ``value + slope * (t - start)``.  Times before the
    first start use the first segment.
    """

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise InvalidParameterError("program needs at least one segment")
        starts = [s.start for s in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidParameterError("segment starts must be strictly increasing")
        for s in self.segments:
            if not (np.isfinite(s.value) and np.isfinite(s.slope)):
                raise InvalidParameterError("program segments must be finite")

    @classmethod
    def constant(cls, value: float) -> "Program":
        return cls((Segment(0.0, float(value), 0.0),))

    @classmethod
    def linear(cls, slope: float, value0: float = 0.0, t0: float = 0.0) -> "Program":
        return cls((Segment(float(t0), float(value0), float(slope)),))

    @classmethod
    def from_segments(cls, segs: Sequence[tuple]) -> "Program":
        return cls(tuple(Segment(*map(float, s)) for s in segs))

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([s.start for s in self.segments])

    def _index(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def _segment_at(self, t: float) -> Segment:
        seg = self.segments[0]
        for s in self.segments[1:]:
            if t < s.start:
                break
            seg = s
        return seg

    def __call__(self, t: ArrayLike) -> ArrayLike:
        if isinstance(t, (float, int)):
            s = self._segment_at(t)
            return s.value + s.slope * (t - s.start)
        t_arr = np.asarray(t, dtype=float)
        idx = self._index(t_arr)
        start = np.array([s.start for s in self.segments])[idx]
        value = np.array([s.value for s in self.segments])[idx]
        slope = np.array([s.slope for s in self.segments])[idx]
        out = value + slope * (t_arr - start)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t: ArrayLike) -> ArrayLike:
        if isinstance(t, (float, int)):
            return self._segment_at(t).slope
        t_arr = np.asarray(t, dtype=float)
        slope = np.array([s.slope for s in self.segments])[self._index(t_arr)]
        return float(slope) if slope.ndim == 0 else slope

    def antiderivative(self, t: ArrayLike) -> ArrayLike:
        """Exact F(t) with F(0) = 0 (so the integral over [a, b] is F(b) - F(a))."""
        t_arr = np.asarray(t, dtype=float)
        out = self._prim(t_arr) - self._prim(np.asarray(0.0))
        return float(out) if out.ndim == 0 else out

    def _prim(self, t):
        # cumulative integral measured from the first breakpoint
        segs = self.segments
        starts = self.breakpoints
        acc = np.zeros(len(segs))
        for i in range(1, len(segs)):
            s = segs[i - 1]
            w = starts[i] - s.start
            acc[i] = acc[i - 1] + s.value * w + 0.5 * s.slope * w * w
        idx = self._index(t)
        s0 = starts[idx]
        v = np.array([s.value for s in segs])[idx]
        k = np.array([s.slope for s in segs])[idx]
        w = t - s0
        return acc[idx] + v * w + 0.5 * k * w * w


TimeFunction = Union[Program, Callable[[float], float]]


def _eval(fn: TimeFunction, t: ArrayLike) -> ArrayLike:
    if isinstance(fn, Program):
        return fn(t)
    if np.ndim(t) == 0:
        return float(fn(float(t)))
    return np.array([fn(float(x)) for x in np.ravel(t)]).reshape(np.shape(t))


def _derivative(fn: TimeFunction, t: float, h: float = 1e-4) -> float:
    if isinstance(fn, Program):
        return fn.derivative(t)
    return (-fn(t + 2 * h) + 8 * fn(t + h) - 8 * fn(t - h) + fn(t - 2 * h)) / (12 * h)


def _integral(fn: TimeFunction, a: float, b: float) -> float:
    if isinstance(fn, Program):
        return fn.antiderivative(b) - fn.antiderivative(a)
    val, err = integrate.quad(fn, a, b, epsabs=1e-12, epsrel=1e-12, limit=500)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericalError(f"quadrature did not converge on [{a}, {b}]: value={val}, error estimate={err}")
    return val


@dataclass(frozen=True)
class DriveSchedule:
    """Lattice depth V(t), external rotation Omega(t) and beam chirp dw(t)."""

    depth: TimeFunction
    rotation: TimeFunction = field(default_factory=lambda: Program.constant(0.0))
    chirp: TimeFunction = field(default_factory=lambda: Program.constant(0.0))
    chirp_origin: float = 0.0

    @classmethod
    def static(cls, V: float) -> "DriveSchedule":
        return cls(Program.constant(V))

    @classmethod
    def linear_chirp(cls, V: float, B: float, omega_dot: float = 0.0) -> "DriveSchedule":
        """Chirp dw(t) = -B t with optional rotation Omega(t) = omega_dot t."""
        return cls(Program.constant(V), Program.linear(omega_dot), Program.linear(-B))

    @classmethod
    def constant_ramp(cls, params: RingLatticeParams, s: float, V: float | None = None) -> "DriveSchedule":
        """eta(t) = s t produced by a pure chirp (no external rotation)."""
        V = params.V if V is None else V
        return cls.linear_chirp(V, chirp_for_ramp(params, s))

    def validate(self, t0: float, t1: float, n: int = 257) -> None:
        ts = np.linspace(min(t0, t1), max(t0, t1), n)
        if isinstance(self.depth, Program):
            ts = np.union1d(ts, self.depth.breakpoints[(self.depth.breakpoints >= ts[0]) & (self.depth.breakpoints <= ts[-1])])
        for name, fn in (("depth", self.depth), ("rotation", self.rotation), ("chirp", self.chirp)):
            vals = np.asarray(_eval(fn, ts))
            if not np.all(np.isfinite(vals)):
                raise InvalidParameterError(f"{name} program is not finite on the run window")
        if np.any(np.asarray(_eval(self.depth, ts)) < 0):
            raise InvalidParameterError("depth program must be >= 0 on the run window")

    def V(self, t: ArrayLike) -> ArrayLike:
        return _eval(self.depth, t)

    def omega(self, t: ArrayLike) -> ArrayLike:
        return _eval(self.rotation, t)

    def delta_omega(self, t: ArrayLike) -> ArrayLike:
        return _eval(self.chirp, t)


def chirp_for_ramp(params: RingLatticeParams, s: float) -> float:
    """Chirp constant B giving d(eta)/dt = s without rotation: B = 2 l hbar s / I."""
    return 2.0 * params.l * params.hbar * s / params.I


def ramp_for_chirp(params: RingLatticeParams, B: float, omega_dot: float = 0.0) -> float:
    """d(eta)/dt for chirp -B t and rotation omega_dot t."""
    return params.I / params.hbar * (B / (2.0 * params.l) - omega_dot)


def chirp_phase(schedule: DriveSchedule, t: ArrayLike) -> ArrayLike:
    """Lattice offset a(t) = (1/2) * integral of dw from the chirp origin to t."""
    fn = schedule.chirp
    t0 = schedule.chirp_origin
    if isinstance(fn, Program):
        out = 0.5 * (fn.antiderivative(t) - fn.antiderivative(t0))
        return out
    if np.ndim(t) == 0:
        return 0.5 * _integral(fn, t0, float(t))
    return np.array([0.5 * _integral(fn, t0, float(x)) for x in np.ravel(t)]).reshape(np.shape(t))


def omega_eff(schedule: DriveSchedule, params: RingLatticeParams, t: ArrayLike) -> ArrayLike:
    return schedule.omega(t) + schedule.delta_omega(t) / (2.0 * params.l)


def eta_of_t(schedule: DriveSchedule, params: RingLatticeParams, t: ArrayLike) -> ArrayLike:
    """eta(t) = -(I/hbar) * Omega_eff(t)."""
    return -(params.I / params.hbar) * omega_eff(schedule, params, t)


def ramp_rate(schedule: DriveSchedule, params: RingLatticeParams, t: float) -> float:
    """s = d(eta)/dt; exact for piecewise-linear programs."""
    d = _derivative(schedule.rotation, t) + _derivative(schedule.chirp, t) / (2.0 * params.l)
    return -(params.I / params.hbar) * d


def depth_rate(schedule: DriveSchedule, t: float) -> float:
    """dV/dt; exact for piecewise-linear programs."""
    return _derivative(schedule.depth, t)
