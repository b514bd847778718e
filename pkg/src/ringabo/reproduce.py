"""Reference-scenario suite with a pass/fail report for the 13 acceptance checks.

Every check uses an independent reference: a dense eigensolver, closed
forms, the Bloch-basis ODE integrator, a self-convergence study, or the
analytic inverse of the forward model.  Long simulations are cached on the
:class:`Suite` so that checks sharing a scenario run it only once.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .analysis import ObservableTrace, detect_bloch_signature, phases, trace_derivative
from .bands import (BlochLabel, band_energies, bloch_state_on_ring, dense_band_energies, ring_grid,
                    shallow_bands, solve_bands)
from .calibration import (bloch_time_from, infer_angular_acceleration, simulate_calibration,
                          simulate_sensing)
from .model import DriveSchedule, make_params
from .propagation import WaveFunction, evolve, evolve_band_basis
from .protocols import (ExperimentConfig, critical_ramp, loading_fidelity, loading_populations,
                        run_experiment, staircase_prediction)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict
    tolerance: str
    runtime: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {vals} ({self.tolerance})"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "runtime": self.runtime}


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _timed(fn: Callable):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@dataclass
class Suite:
    """Scenario cache plus the individual checks."""

    grid_N: int = 256
    cache: dict = field(default_factory=dict)

    def _get(self, key, fn):
        if key not in self.cache:
            self.cache[key] = _timed(fn)
        return self.cache[key]

    # -- shared scenarios -------------------------------------------------

    def deep(self):
        """Deep lattice V = 3 E_r, s = 0.01 omega_r, three Bloch periods from the ground state."""

        def run():
            P = make_params(None, 3.0, 2)
            sch = DriveSchedule.constant_ramp(P, 0.01)
            psi0 = bloch_state_on_ring(P, BlochLabel(0, 0, 0.0), self.grid_N)
            return P, evolve(psi0, P, sch, (0.0, 1200.0), dt=0.005, sample_every=100, adapt=False)

        return self._get("deep", run)

    def shallow(self):
        """Shallow lattice V = 0.5 E_r, chirp B = 0.004 (s = 0.002), ramp-loaded, three periods."""

        def run():
            P = make_params(None, 0.5, 2)
            cfg = ExperimentConfig(P, 6000.0, chirp_B=0.004, load_time_tL=20.0, preparation="ramp",
                                   dt=0.01, sample_dt=1.0, grid_N=self.grid_N)
            return P, run_experiment(cfg)

        return self._get("shallow", run)

    def critical(self):
        def run():
            P = make_params(None, 0.5, 2)
            sc = critical_ramp(P)
            cfg = ExperimentConfig(P, 4.3 * 4.0 / sc, ramp_rate_s=sc, preparation="ground", dt=0.005,
                                   sample_dt=0.05, grid_N=self.grid_N)
            return P, sc, run_experiment(cfg)

        return self._get("critical", run)

    # -- checks -----------------------------------------------------------

    def c1(self) -> CriterionResult:
        P = make_params(None, 1.0, 2)
        qs = np.linspace(-P.l, P.l, 162)[1:]
        rows, rt = _timed(lambda: [solve_bands(P, q, n_max=4, k_max=32).energies for q in qs])
        E = np.array(rows)
        ref = np.array([dense_band_energies(P, q, 4, 64) for q in qs])
        err = float(np.max(np.abs(E - ref)))
        self.cache["bands"] = (qs, E)
        return CriterionResult(1, "band structure vs dense oracle", err <= 1e-10 and rt < 1.0,
                               {"max_abs_dE": err, "runtime_s": rt}, "<= 1e-10 E_r, < 1 s")

    def c2(self) -> CriterionResult:
        P = make_params(None, 0.1, 2)
        e_l = band_energies(P, float(P.l), n_max=2)
        e_2l = band_energies(P, 2.0 * P.l, n_max=2)
        g1 = float(e_l[1] - e_l[0])
        g2 = float(e_2l[2] - e_2l[1])
        r1 = abs(g1 / (P.V / 2) - 1)
        r2 = abs(g2 / (P.V**2 / (32 * P.Er)) - 1)
        return CriterionResult(2, "band gaps", r1 <= 0.01 and r2 <= 0.20,
                               {"gap1": g1, "rel1": r1, "gap2": g2, "rel2": r2}, "1% and 20%")

    def c3(self) -> CriterionResult:
        P = make_params(None, 1.0, 2)
        qs = np.linspace(0, 2 * P.l, 402)[1:-1]
        num = band_energies(P, qs, n_max=1)
        e0, e1 = shallow_bands(P, qs)
        dev = float(max(np.max(np.abs(num[:, 0] - e0)), np.max(np.abs(num[:, 1] - e1))))
        self.cache["shallow_bands"] = (qs, num, e0, e1)
        return CriterionResult(3, "shallow closed forms", dev <= 0.05, {"max_dev": dev}, "<= 0.05 E_r")

    def c4(self) -> CriterionResult:
        (P, traj), rt = self.deep()
        tB = 400.0
        idx = [int(np.argmin(np.abs(traj.times - n * tB))) for n in range(4)]
        steps = np.diff(traj.Lz[idx])
        step_err = float(np.max(np.abs(steps / -4.0 - 1)))
        y = traj.Lz + 0.01 * traj.times
        per = int(round(tB / traj.spacing))
        amp = float(np.ptp(y[: per + 1]))
        dev = float(np.max(np.abs(y[per:] - y[:-per])))
        ok = step_err <= 0.005 and dev <= 0.005 * amp and rt < 120
        return CriterionResult(4, "ABO staircase V=3, s=0.01", ok,
                               {"steps": steps.tolist(), "max_step_rel_err": step_err,
                                "periodic_dev": dev, "amplitude": amp, "runtime_s": rt},
                               "0.5% per step, 0.5% of amplitude, < 120 s")

    def c5(self) -> CriterionResult:
        (P, trace), rt = self.shallow()
        levels = [float(trace.Lz[int(np.argmin(np.abs(trace.times - n * 2000.0)))]) for n in range(4)]
        dev = max(abs(v + 4.0 * n) for n, v in enumerate(levels))
        return CriterionResult(5, "shallow staircase V=0.5, s=0.002", dev <= 0.05,
                               {"plateaus": levels, "max_dev": dev, "runtime_s": rt}, "<= 0.05 hbar")

    def c6(self) -> CriterionResult:
        (P, trace), _ = self.shallow()
        sig = detect_bloch_signature(trace_derivative(trace))
        B, l = 0.004, P.l
        s = P.I * B / (2 * l * P.hbar)
        e_t = abs(sig.t_B / (2 * l / s) - 1)
        e_a = abs(sig.peak_amplitude_A / (2 * l * P.hbar**2 * B / P.V) - 1)
        w_ref = P.V / (8 * P.Er) * math.sqrt(4 ** (1 / 3) - 1)
        e_w = abs(sig.fwhm / sig.t_B / w_ref - 1)
        self.cache["signature"] = sig
        return CriterionResult(6, "derivative peaks", e_t <= 0.01 and e_a <= 0.05 and e_w <= 0.10,
                               {"t_B": sig.t_B, "rel_tB": e_t, "A": sig.peak_amplitude_A, "rel_A": e_a,
                                "fwhm_over_tB": sig.fwhm / sig.t_B, "rel_fwhm": e_w},
                               "1%, 5%, 10%")

    def c7(self) -> CriterionResult:
        (P, sc, trace), _ = self.critical()
        tB = 2 * P.l / sc
        T = math.exp(-1.0)
        sim, pred, rel = [], [], []
        for n in range(1, 5):
            v = float(trace.Lz[int(np.argmin(np.abs(trace.times - n * tB)))])
            p = staircase_prediction(T, n, P.l)
            sim.append(v)
            pred.append(p)
            rel.append(abs(v / p - 1))
        return CriterionResult(7, "critical ramp staircase", max(rel) <= 0.02,
                               {"s_c": sc, "sim": sim, "pred": pred, "max_rel": max(rel)}, "2% for N_B <= 4")

    def c8(self) -> CriterionResult:
        P = make_params(None, 5.0, 2)
        grid = np.linspace(0.12, 1.2, 10)
        Fs, rt = _timed(lambda: [loading_fidelity(P, t, self.grid_N) for t in grid])
        mono = bool(np.all(np.diff(Fs) >= 0))
        self.cache["loading"] = (grid, Fs)
        return CriterionResult(8, "loading fidelity", Fs[-1] >= 0.99 and mono and rt < 60,
                               {"F(1.2)": Fs[-1], "monotone": mono, "runtime_s": rt},
                               "F >= 0.99, monotone, < 60 s")

    def c9(self) -> CriterionResult:
        (P, traj), _ = self.deep()
        sch = DriveSchedule.constant_ramp(P, 0.01)
        bt = evolve_band_basis({(0, 0): 1.0}, P, sch, (0.0, 1200.0), t_eval=np.array([0.0, 1200.0]))
        diff = abs(float(bt.Lz[-1]) - float(traj.Lz[-1]))
        ndev = float(np.max(np.abs(traj.norm - 1.0)))
        return CriterionResult(9, "split-step vs band-basis", diff <= 1e-3 and ndev <= 1e-10,
                               {"Lz_split": float(traj.Lz[-1]), "Lz_band": float(bt.Lz[-1]), "diff": diff,
                                "norm_dev": ndev}, "1e-3 hbar, norm 1e-10")

    def c10(self) -> CriterionResult:
        P = make_params(None, 0.5, 2)
        po = simulate_calibration(P, 0.004, n_periods=3.0, preparation="ground", dt=0.01)
        r = po.result
        eI, eV = abs(r.I_est / P.I - 1), abs(r.V_est / P.V - 1)
        return CriterionResult(10, "calibration round trip", eI <= 0.01 and eV <= 0.05,
                               {"I_est": r.I_est, "rel_I": eI, "V_est": r.V_est, "rel_V": eV}, "1% and 5%")

    def c11(self) -> CriterionResult:
        P = make_params(None, 0.5, 2)
        wd, B1, B2 = 5e-4, 0.006, 0.010
        po = simulate_sensing(P, wd, B1, B2, dt=0.01)
        e_sim = abs(po.result.omega_dot_est / wd - 1)
        exact = infer_angular_acceleration(B1, bloch_time_from(P, B1, wd), B2, bloch_time_from(P, B2, wd), P.l)
        e_ex = abs(exact.omega_dot_est / wd - 1)
        return CriterionResult(11, "sensing round trip", e_sim <= 0.02 and e_ex <= 1e-12,
                               {"omega_dot_sim": po.result.omega_dot_est, "rel_sim": e_sim, "rel_exact": e_ex},
                               "2%, exact to round-off")

    def c12(self) -> CriterionResult:
        P = make_params(None, 3.0, 2)
        sch = DriveSchedule.constant_ramp(P, 0.01)
        tB = 400.0
        ph = phases(P, sch, (0.0, tB))
        psi0 = bloch_state_on_ring(P, BlochLabel(0, 0, 0.0), self.grid_N)
        fin = evolve(psi0, P, sch, (0.0, tB), dt=0.005, sample_every=10**9, adapt=False).final
        target = bloch_state_on_ring(P, BlochLabel(0, 0, 2.0 * P.l), self.grid_N)
        prop = np.angle(target.inner(fin))
        diff = float(abs(np.angle(np.exp(1j * (prop - ph.total)))))
        return CriterionResult(12, "phase consistency", diff <= 1e-2,
                               {"dynamical": ph.dynamical, "geometric": ph.geometric, "propagated": float(prop),
                                "diff": diff}, "1e-2 rad")

    def c13(self) -> CriterionResult:
        P = make_params(None, 3.0, 2)
        sch = DriveSchedule.constant_ramp(P, 0.01)
        base = bloch_state_on_ring(P, BlochLabel(0, 0, 0.0), self.grid_N)
        psi0 = WaveFunction.normalized(base.amplitudes * (1 + 0.3 * np.cos(base.phi)))
        T = 20.0

        def final(dt):
            return evolve(psi0, P, sch, (0.0, T), dt=dt, sample_every=10**9, adapt=False).final.amplitudes

        ref = final(0.01 / 64)
        dts = [0.01, 0.005, 0.0025, 0.00125]
        errs = [math.sqrt(np.sum(np.abs(final(dt) - ref) ** 2) * 2 * math.pi / self.grid_N) for dt in dts]
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
        return CriterionResult(13, "Strang convergence order", min(orders) >= 1.9,
                               {"errors": errs, "orders": orders}, "order >= 1.9")

    def all(self) -> list[CriterionResult]:
        out = []
        for i in range(1, 14):
            res, rt = _timed(getattr(self, f"c{i}"))
            res.runtime = rt
            out.append(res)
        return out


def write_plot_data(suite: Suite, out) -> None:
    """Plot-ready CSVs for every scenario; uses results cached by the checks."""
    if "bands" in suite.cache:
        qs, E = suite.cache["bands"]
        out.csv("bands_V1.csv", ["q"] + [f"E{n}" for n in range(E.shape[1])],
                [[q] + list(row) for q, row in zip(qs, E)])
    P = make_params(None, 1.0, 2)
    psi = bloch_state_on_ring(P, BlochLabel(0, 0, 0.0), suite.grid_N)
    out.csv("ground_density_V1.csv", ["phi", "density"],
            zip(ring_grid(suite.grid_N), np.abs(psi.amplitudes) ** 2))
    if "deep" in suite.cache:
        (P5, traj), _ = suite.cache["deep"]
        out.trace("deep_staircase_trace.csv", ObservableTrace(traj.times, traj.Lz))
    if "shallow" in suite.cache:
        (P7, trace), _ = suite.cache["shallow"]
        out.trace("shallow_staircase_trace.csv", trace)
        out.trace("shallow_derivative.csv", trace_derivative(trace))
    if "critical" in suite.cache:
        (Pc, sc, trace), _ = suite.cache["critical"]
        out.trace("critical_trace.csv", trace)
        out.csv("critical_staircase.csv", ["N_B", "Lz_hbar"],
                [(n, staircase_prediction(math.exp(-1.0), n, Pc.l)) for n in range(5)])
    if "loading" in suite.cache:
        grid, Fs = suite.cache["loading"]
        out.csv("loading_fidelity.csv", ["t_L", "F"], zip(grid, Fs))
        P5 = make_params(None, 5.0, 2)
        out.csv("loading_populations.csv", ["t_L", "P0", "P2", "P4"],
                [[t] + list(loading_populations(P5, t, 5, suite.grid_N)[[0, 2, 4]]) for t in grid])
    if "shallow_bands" in suite.cache:
        qs, num, e0, e1 = suite.cache["shallow_bands"]
        out.csv("shallow_bands.csv", ["q", "E0", "E1", "E0_closed", "E1_closed"],
                zip(qs, num[:, 0], num[:, 1], e0, e1))


def run_suite(out=None, verbose: bool = True) -> list[dict]:
    suite = Suite()
    results = suite.all()
    if verbose:
        for r in results:
            print(r.line())
    report = [r.to_dict() for r in results]
    if out is not None:
        write_plot_data(suite, out)
        out.json("acceptance_report.json", report)
        text = "\n".join(r.line() for r in results) + "\n"
        from .cli import atomic_write

        out.add(atomic_write(out.dir / "acceptance_report.txt", text))
    return report
