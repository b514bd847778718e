"""Calibration of (I, V) from one chirped run and angular-acceleration sensing from two."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import BlochSignature, ObservableTrace, detect_bloch_signature, trace_derivative
from .errors import DegenerateInputError, InvalidParameterError
from .model import RingLatticeParams, ramp_for_chirp
from .protocols import ExperimentConfig, run_experiment


@dataclass(frozen=True)
class CalibrationResult:
    I_est: float
    V_est: float
    inputs: dict
    validity_note: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SensingResult:
    omega_dot_est: float
    inputs: dict

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_IV(t_B: float, A: float, B: float, l: int, hbar: float = 1.0) -> CalibrationResult:
    """I = 4 l^2 hbar / (B t_B) and V = 2 l hbar^2 B / A.

    The peak-height relation holds for shallow lattices only; a note is
    attached when the inferred V exceeds half the recoil energy of I_est.
    """
    for name, val in (("t_B", t_B), ("A", A), ("B", B), ("hbar", hbar)):
        if not (np.isfinite(val) and val > 0):
            raise InvalidParameterError(f"{name} must be positive")
    if l < 1:
        raise InvalidParameterError("l must be >= 1")
    I = 4.0 * l**2 * hbar / (B * t_B)
    V = 2.0 * l * hbar**2 * B / A
    Er = hbar**2 * l**2 / (2.0 * I)
    note = None
    if V > 0.5 * Er:
        note = f"V_est = {V / Er:.3g} E_r exceeds E_r/2; the peak-height relation assumes a shallow lattice"
    return CalibrationResult(I, V, {"t_B": t_B, "A": A, "B": B, "l": l, "hbar": hbar}, note)


def predicted_inverse_bloch(params: RingLatticeParams, B: float, omega_dot: float = 0.0) -> float:
    """1/t_B = I (B - 2 l omega_dot) / (4 l^2 hbar); equals hbar (B - 2 l omega_dot) / (8 E_r)."""
    return params.I * (B - 2.0 * params.l * omega_dot) / (4.0 * params.l**2 * params.hbar)


def infer_angular_acceleration(B1: float, tB1: float, B2: float, tB2: float, l: int) -> SensingResult:
    """omega_dot = (B2 tB2 - B1 tB1) / (2 l (tB2 - tB1))."""
    if tB1 == tB2:
        raise DegenerateInputError("the two Bloch periods are equal; the estimator is undefined")
    if B1 == B2:
        raise DegenerateInputError("the two chirp constants are equal")
    est = (B2 * tB2 - B1 * tB1) / (2.0 * l * (tB2 - tB1))
    return SensingResult(float(est), {"B1": B1, "tB1": tB1, "B2": B2, "tB2": tB2, "l": l})


@dataclass(frozen=True)
class AffineFit:
    slope: float
    intercept: float
    omega_dot_est: float
    I_est: Optional[float]
    residual_rms: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_inverse_bloch(Bs: Sequence[float], tBs: Sequence[float], l: int, hbar: float = 1.0,
                      I: Optional[float] = None) -> AffineFit:
    """Least-squares fit of 1/t_B = slope (B - 2 l omega_dot) over three or more chirps.

    With ``I`` given the slope is fixed to I / (4 l^2 hbar) and only the
    intercept is fitted; otherwise both are free and I is inferred from the slope.
    """
    B = np.asarray(Bs, dtype=float)
    y = 1.0 / np.asarray(tBs, dtype=float)
    if B.size < 3 or B.size != y.size:
        raise InvalidParameterError("need at least three (B, t_B) pairs")
    if np.ptp(B) == 0:
        raise DegenerateInputError("all chirp constants are equal")
    if I is None:
        slope, intercept = np.polyfit(B, y, 1)
        I_est = 4.0 * l**2 * hbar * slope
    else:
        slope = I / (4.0 * l**2 * hbar)
        intercept = float(np.mean(y - slope * B))
        I_est = None
    res = y - (slope * B + intercept)
    return AffineFit(float(slope), float(intercept), float(-intercept / (2.0 * l * slope)),
                     None if I_est is None else float(I_est), float(np.sqrt(np.mean(res**2))))


def _signature_run(params: RingLatticeParams, B: float, omega_dot: float, n_periods: float,
                   preparation: str, load_time: float, dt: float, sample_dt: float):
    s = ramp_for_chirp(params, B, omega_dot)
    if s <= 0:
        raise InvalidParameterError("the chirp must exceed 2 l omega_dot to produce Bloch oscillations")
    t_B = 2.0 * params.l / s
    cfg = ExperimentConfig(params, n_periods * t_B, chirp_B=B,
                           external_acceleration=omega_dot if omega_dot else None,
                           load_time_tL=load_time, preparation=preparation, dt=dt, sample_dt=sample_dt)
    trace = run_experiment(cfg)
    deriv = trace_derivative(trace)
    return detect_bloch_signature(deriv), deriv


@dataclass
class PipelineOutput:
    result: object
    signatures: list
    traces: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"result": self.result.to_dict(), "signatures": [s.to_dict() for s in self.signatures]}


def simulate_calibration(params: RingLatticeParams, B: float, n_periods: float = 3.0,
                         preparation: str = "ground", load_time: float = 0.0, dt: float = 0.01,
                         sample_dt: float = 1.0) -> PipelineOutput:
    """Simulate one chirped run, detect its signature and invert it for (I, V).

    Only the detected t_B and peak height enter the estimator.
    """
    sig, deriv = _signature_run(params, B, 0.0, n_periods, preparation, load_time, dt, sample_dt)
    res = calibrate_IV(sig.t_B, sig.peak_amplitude_A, B, params.l, params.hbar)
    return PipelineOutput(res, [sig], [deriv])


def simulate_sensing(params: RingLatticeParams, omega_dot: float, B1: float, B2: float,
                     n_periods: float = 2.2, preparation: str = "ground", load_time: float = 0.0,
                     dt: float = 0.01, sample_dt: float = 1.0) -> PipelineOutput:
    """Two chirped runs under a rotation Omega = omega_dot t, then the two-chirp estimator."""
    sigs, traces = [], []
    for B in (B1, B2):
        sig, deriv = _signature_run(params, B, omega_dot, n_periods, preparation, load_time, dt, sample_dt)
        sigs.append(sig)
        traces.append(deriv)
    res = infer_angular_acceleration(B1, sigs[0].t_B, B2, sigs[1].t_B, params.l)
    return PipelineOutput(res, sigs, traces)


def relative_error(est: float, truth: float) -> float:
    return abs(est - truth) / abs(truth) if truth else abs(est)


def inverse_bloch_curve(params: RingLatticeParams, Bs: Sequence[float], omega_dot: float) -> np.ndarray:
    """Predicted 1/t_B for each chirp (the affine sensing curve)."""
    return np.array([predicted_inverse_bloch(params, b, omega_dot) for b in Bs])


def bloch_time_from(params: RingLatticeParams, B: float, omega_dot: float = 0.0) -> float:
    inv = predicted_inverse_bloch(params, B, omega_dot)
    return math.inf if inv == 0 else 1.0 / inv
