"""Observables extracted from states and <L_z>(t) traces."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.fft import fft

from .bands import BlochLabel, band_energies, group_velocity, solve_bands
from .errors import DetectionError, InvalidParameterError
from .model import DriveSchedule, RingLatticeParams, eta_of_t


@dataclass
class ObservableTrace:
    """Uniformly sampled <L_z>(t) in units of hbar, optionally with its derivative."""

    times: np.ndarray
    Lz: np.ndarray
    dLz_dt: Optional[np.ndarray] = None
    frame: str = "lab"
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.Lz = np.asarray(self.Lz, dtype=float)
        if self.times.shape != self.Lz.shape or self.times.ndim != 1:
            raise InvalidParameterError("times and Lz must be 1D arrays of equal length")
        if self.dLz_dt is not None:
            self.dLz_dt = np.asarray(self.dLz_dt, dtype=float)
            if self.dLz_dt.shape != self.times.shape:
                raise InvalidParameterError("dLz_dt must match times")
        if self.times.size > 1:
            d = np.diff(self.times)
            if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * max(abs(d[0]), 1.0) * self.times.size:
                raise InvalidParameterError("trace times must be strictly increasing and uniform")

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["t", "Lz_hbar"] + (["dLz_dt"] if self.dLz_dt is not None else [])
        w.writerow(cols)
        for i, t in enumerate(self.times):
            row = [f"{t:.16e}", f"{self.Lz[i]:.16e}"]
            if self.dLz_dt is not None:
                row.append(f"{self.dLz_dt[i]:.16e}")
            w.writerow(row)

    @classmethod
    def from_csv(cls, fh) -> "ObservableTrace":
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        rows = list(csv.DictReader(fh))
        t = [float(r["t"]) for r in rows]
        lz = [float(r["Lz_hbar"]) for r in rows]
        d = [float(r["dLz_dt"]) for r in rows] if rows and "dLz_dt" in rows[0] else None
        return cls(np.array(t), np.array(lz), None if d is None else np.array(d))


@dataclass(frozen=True)
class BlochSignature:
    t_B: float
    peak_amplitude_A: float
    fwhm: float
    peak_times: tuple
    peak_values: tuple = ()

    def to_dict(self) -> dict:
        return {
            "t_B": self.t_B,
            "A": self.peak_amplitude_A,
            "fwhm": self.fwhm,
            "fwhm_over_tB": self.fwhm / self.t_B,
            "peak_times": list(self.peak_times),
            "peak_values": list(self.peak_values),
        }


def mean_angular_momentum(state, hbar: float = 1.0) -> float:
    """sum_m m hbar |c_m|^2 for a grid wave function."""
    p = np.abs(fft(state.amplitudes)) ** 2
    return float(hbar * np.dot(state.m, p) / np.sum(p))


def adiabatic_prediction(params: RingLatticeParams, eta, mode: str = "numeric_band"):
    """<L_z> of the adiabatically followed ground band at quasi momentum eta.

    ``numeric_band`` uses -hbar eta + (I/hbar) dE_0/dq from the eigensolver;
    ``shallow_closed_form`` uses the two-band result around the zone edge.
    """
    hbar, l = params.hbar, params.l
    if mode == "numeric_band":
        etas = np.atleast_1d(np.asarray(eta, dtype=float))
        out = np.array([-hbar * e + params.I / hbar * group_velocity(params, 0, e) for e in etas])
    elif mode == "shallow_closed_form":
        etas = np.asarray(eta, dtype=float)
        w = params.V * l / (8.0 * params.Er)
        x = etas - l
        out = -hbar * l * (1.0 + x / np.sqrt(x**2 + w**2)) if w > 0 else -hbar * l * (1.0 + np.sign(x))
    else:
        raise InvalidParameterError(f"unknown mode {mode!r}")
    out = np.asarray(out, dtype=float)
    return float(out.ravel()[0]) if np.ndim(eta) == 0 else out.reshape(np.shape(eta))


def shallow_derivative(params: RingLatticeParams, eta, s: float):
    """Closed-form d<L_z>/dt for eta = s t in a shallow lattice."""
    w = params.V * params.l / (8.0 * params.Er)
    x = np.asarray(eta, dtype=float) - params.l
    return -params.hbar * params.l * s * w**2 / (x**2 + w**2) ** 1.5


def _five_point(y: np.ndarray, h: float) -> np.ndarray:
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    d[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    d[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    d[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    d[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    return d


def trace_derivative(trace: ObservableTrace) -> ObservableTrace:
    """d<L_z>/dt by fourth-order finite differences (one-sided at the ends)."""
    if trace.times.size < 5:
        raise InvalidParameterError("derivative needs at least 5 samples")
    d = _five_point(trace.Lz, trace.spacing)
    return ObservableTrace(trace.times.copy(), trace.Lz.copy(), d, trace.frame, dict(trace.metadata),
                           list(trace.warnings))


def _crossing(t, y, i, j, level):
    # linear interpolation of y = level between samples i and j
    return t[i] + (level - y[i]) * (t[j] - t[i]) / (y[j] - y[i])


def detect_bloch_signature(deriv: ObservableTrace, threshold_factor: float = 5.0,
                           rel_height: float = 0.5) -> BlochSignature:
    """Bloch period, peak height and width from the negative spikes of d<L_z>/dt.

    A sample belongs to a peak region when the derivative is negative and its
    magnitude exceeds ``threshold_factor`` times the median absolute value;
    each contiguous region contributes its deepest sample, refined by a
    three-point parabola.  Minima shallower than ``rel_height`` times the
    deepest one are dropped; they come from wiggles on the peak tails.
    """
    if deriv.dLz_dt is None:
        raise InvalidParameterError("trace has no derivative; call trace_derivative first")
    t, y = deriv.times, deriv.dLz_dt
    level = threshold_factor * np.median(np.abs(y))
    mask = (y < 0) & (np.abs(y) > level)
    peaks = []
    i = 0
    while i < y.size:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < y.size and mask[j + 1]:
            j += 1
        k = i + int(np.argmin(y[i:j + 1]))
        if 0 < k < y.size - 1 and y[k] <= y[k - 1] and y[k] <= y[k + 1]:
            peaks.append(k)
        i = j + 1
    if peaks:
        deepest = min(y[k] for k in peaks)
        peaks = [k for k in peaks if y[k] <= rel_height * deepest]
    if len(peaks) < 2:
        raise DetectionError(f"found {len(peaks)} peak(s); need at least 2 (run for a longer time)")

    h = deriv.spacing
    times, values, widths = [], [], []
    for k in peaks:
        ym, y0, yp = y[k - 1], y[k], y[k + 1]
        den = ym - 2 * y0 + yp
        off = 0.5 * (ym - yp) / den if den != 0 else 0.0
        times.append(t[k] + off * h)
        val = y0 - 0.25 * (ym - yp) * off
        values.append(val)
        half = 0.5 * val
        a = k
        while a > 0 and y[a] < half:
            a -= 1
        b = k
        while b < y.size - 1 and y[b] < half:
            b += 1
        if y[a] < half or y[b] < half:
            continue  # peak truncated by the trace ends
        widths.append(_crossing(t, y, b - 1, b, half) - _crossing(t, y, a, a + 1, half))
    if not widths:
        raise DetectionError("no peak is fully contained in the trace")
    return BlochSignature(
        t_B=float(np.mean(np.diff(times))),
        peak_amplitude_A=float(np.mean(np.abs(values))),
        fwhm=float(np.mean(widths)),
        peak_times=tuple(float(x) for x in times),
        peak_values=tuple(float(x) for x in values),
    )


@dataclass(frozen=True)
class PhaseResult:
    dynamical: float
    geometric: float

    @property
    def total(self) -> float:
        return self.dynamical + self.geometric


def ground_energy_theta(params: RingLatticeParams, eta: float, V: Optional[float] = None) -> float:
    P = params if V is None else params.with_depth(V)
    return float(band_energies(P, eta, n_max=0)[0]) - params.hbar**2 * eta**2 / (2 * params.I)


def phases(params: RingLatticeParams, schedule: DriveSchedule, t_span: Sequence[float],
           n_steps: int = 2000) -> PhaseResult:
    """Dynamical and geometric phase of the adiabatically followed ground state.

    The geometric part is -sum arg<u_k|u_{k+1}> along a discretised path whose
    end points use the same sign convention as :func:`~ringabo.bands.solve_bands`,
    so for a full Brillouin-zone loop it is gauge invariant.
    """
    t0, t1 = map(float, t_span)
    hbar = params.hbar

    def energy(t):
        return ground_energy_theta(params, float(eta_of_t(schedule, params, t)), float(schedule.V(t)))

    dyn, err = integrate.quad(energy, t0, t1, epsabs=1e-11, epsrel=1e-12, limit=400)
    ts = np.linspace(t0, t1, n_steps + 1)
    prev = None
    geo = 0.0
    for t in ts:
        P = params.with_depth(float(schedule.V(t)))
        u = solve_bands(P, float(eta_of_t(schedule, params, t)), n_max=0, check=False).coefficients[0]
        if prev is not None:
            geo -= np.angle(np.vdot(prev, u))
        prev = u
    return PhaseResult(-dyn / hbar, float(geo))


def ground_label(eta0: float) -> BlochLabel:
    return BlochLabel(0, 0, eta0)
