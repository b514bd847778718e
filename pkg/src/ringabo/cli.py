"""Command-line entry point: ``ringabo <command> --config run.json --out DIR``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 detection failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (ObservableTrace, adiabatic_prediction, detect_bloch_signature, trace_derivative)
from .bands import (BlochLabel, band_table, bloch_state_on_ring, ring_grid, shallow_bands, solve_bands,
                    write_band_table)
from .calibration import (calibrate_IV, infer_angular_acceleration, simulate_calibration, simulate_sensing,
                          fit_inverse_bloch, predicted_inverse_bloch)
from .config import ConfigError, echo, params_from, parse_config, run_id, sweep_points
from .errors import DetectionError, InvalidParameterError, NumericalError, RingABOError
from .model import chirp_for_ramp
from .protocols import (ExperimentConfig, check_adiabaticity, loading_fidelity, loading_populations,
                        lz_analytics, run_experiment, staircase_prediction)
from .propagation import two_level_evolve

log = logging.getLogger("ringabo")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_DETECTION = 0, 1, 2, 3


def fmt(x) -> str:
    return f"{x:.16e}"


# ---------------------------------------------------------------------------
# output plumbing


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def _clean(o):
    # JSON has no inf/nan; store them as strings
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return str(float(o))
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write(path, buf.getvalue())


def write_trace(path: Path, trace: ObservableTrace) -> Path:
    buf = io.StringIO()
    trace.to_csv(buf)
    return atomic_write(path, buf.getvalue())


@dataclass
class RunManifest:
    run_id: str
    command: str
    config_echo: dict
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    status: str = "ok"
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class Outputs:
    """Collects written files and stage timings for the manifest."""

    def __init__(self, out_dir: Path):
        self.dir = Path(out_dir)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}

    def add(self, path: Path) -> Path:
        self.files.append(str(Path(path).relative_to(self.dir)))
        return path

    def json(self, name: str, obj) -> Path:
        return self.add(atomic_write(self.dir / name, dumps(obj)))

    def csv(self, name: str, header, rows) -> Path:
        return self.add(write_csv(self.dir / name, header, rows))

    def trace(self, name: str, trace: ObservableTrace) -> Path:
        return self.add(write_trace(self.dir / name, trace))

    def timed(self, stage: str):
        outer = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                outer.timings[stage] = outer.timings.get(stage, 0.0) + time.perf_counter() - self.t0

        return _T()


# ---------------------------------------------------------------------------
# experiment helpers shared by several commands


def experiment_config(cfg: dict, preparation=None) -> ExperimentConfig:
    P = params_from(cfg)
    sch, num = cfg["schedule"], cfg["numerics"]
    if sch["t_f"] is None:
        raise ConfigError("schedule.t_f is required when no ramp rate or chirp is set")
    s, B = sch["s"], sch["B"]
    if s is None and B is None and sch["omega_dot"] is None:
        s = 0.0
    return ExperimentConfig(
        P, sch["t_f"], ramp_rate_s=s, chirp_B=B, load_time_tL=sch["t_L"],
        external_acceleration=sch["omega_dot"], grid_N=num["grid_N"], dt=num["dt"],
        sample_dt=num["sample_dt"], preparation=preparation or sch["preparation"],
        min_margin=cfg["analysis"]["min_margin"],
    )


def _signature(trace: ObservableTrace, cfg: dict):
    ana = cfg["analysis"]
    deriv = trace_derivative(trace)
    return deriv, detect_bloch_signature(deriv, ana["threshold_factor"], ana["rel_height"])


# ---------------------------------------------------------------------------
# commands; each returns a flat summary dict (used for sweeps)


def cmd_bands(cfg, out: Outputs):
    P = params_from(cfg)
    num = cfg["numerics"]
    qs = np.linspace(num["q_min"], num["q_max"], num["n_q"])
    with out.timed("bands"):
        rows = list(band_table(P, qs, num["n_max"], num["k_max"]))
    buf = io.StringIO()
    write_band_table(rows, buf)
    out.add(atomic_write(out.dir / "bands.csv", buf.getvalue()))
    # discrete levels E_n(m) for eta0 = 0
    levels = []
    for m in range(-P.l + 1, P.l + 1):
        sol = solve_bands(P, float(m), n_max=num["n_max"], k_max=num["k_max"])
        levels += [(n, m, float(e)) for n, e in enumerate(sol.energies)]
    out.csv("levels.csv", ["n", "m", "E_n"], levels)
    if P.V > 0:
        e0, e1 = shallow_bands(P, qs)
        out.csv("shallow_bands.csv", ["q", "E0_closed", "E1_closed"], zip(qs, e0, e1))
    return {"n_rows": len(rows), "E0_min": min(r[2] for r in rows if r[1] == 0)}


def cmd_gs(cfg, out: Outputs):
    P = params_from(cfg)
    N = cfg["numerics"]["grid_N"]
    psi = bloch_state_on_ring(P, BlochLabel(0, 0, 0.0), N, cfg["numerics"]["k_max"])
    dens = np.abs(psi.amplitudes) ** 2
    out.csv("gs.csv", ["phi", "density"], zip(ring_grid(N), dens))
    return {"density_max": float(dens.max()), "density_min": float(dens.min())}


def cmd_evolve(cfg, out: Outputs):
    """Split-step run from the exact ground state, with adiabatic and staircase predictions."""
    ec = experiment_config(cfg, preparation="ground")
    with out.timed("propagate"):
        trace = run_experiment(ec)
    out.trace("trace.csv", trace)
    P = ec.params
    summary = {"Lz_final": float(trace.Lz[-1]), "s": ec.s, "t_B": ec.bloch_time, "warnings": len(trace.warnings)}
    if P.V > 0 and ec.s != 0:
        with out.timed("predict"):
            t_pred = trace.times[:: max(1, trace.times.size // 400)]
            try:
                pred = adiabatic_prediction(P, ec.s * t_pred)
                out.csv("adiabatic.csv", ["t", "Lz_hbar"], zip(t_pred, pred))
            except NumericalError as exc:
                log.warning("adiabatic prediction skipped: %s", exc)
            rep = lz_analytics(P, abs(ec.s))
            rows = []
            n_max = int(trace.times[-1] // ec.bloch_time)
            for n in range(n_max + 1):
                i = int(np.argmin(np.abs(trace.times - n * ec.bloch_time)))
                rows.append((n, float(trace.Lz[i]), staircase_prediction(rep.T_LZ, n, P.l)))
            out.csv("staircase.csv", ["N_B", "Lz_sim", "Lz_staircase"], rows)
    return summary


def cmd_experiment(cfg, out: Outputs):
    ec = experiment_config(cfg)
    with out.timed("propagate"):
        trace = run_experiment(ec)
    out.trace("trace.csv", trace)
    summary = {"Lz_final": float(trace.Lz[-1]), "s": ec.s, "t_B": ec.bloch_time, "warnings": len(trace.warnings)}
    out.json("experiment.json", {"summary": summary, "warnings": trace.warnings, "metadata": trace.metadata})
    if trace.times.size >= 5:
        with out.timed("detect"):
            deriv, sig = _signature(trace, cfg)
        out.json("signature.json", sig.to_dict())
        summary.update({"t_B_detected": sig.t_B, "A": sig.peak_amplitude_A, "fwhm": sig.fwhm})
    return summary


def cmd_deriv(cfg, out: Outputs, trace_path=None):
    if trace_path is not None:
        with open(trace_path, encoding="utf-8") as fh:
            trace = ObservableTrace.from_csv(fh)
    else:
        ec = experiment_config(cfg)
        with out.timed("propagate"):
            trace = run_experiment(ec)
        out.trace("trace.csv", trace)
    deriv = trace_derivative(trace)
    out.trace("deriv.csv", deriv)
    with out.timed("detect"):
        ana = cfg["analysis"]
        sig = detect_bloch_signature(deriv, ana["threshold_factor"], ana["rel_height"])
    out.json("signature.json", sig.to_dict())
    return {"t_B_detected": sig.t_B, "A": sig.peak_amplitude_A, "fwhm": sig.fwhm}


def cmd_load_check(cfg, out: Outputs):
    P = params_from(cfg)
    sch, num, ana = cfg["schedule"], cfg["numerics"], cfg["analysis"]
    grid = ana["t_L_grid"] or [sch["t_L"]]
    rows = []
    with out.timed("loading"):
        for tl in grid:
            F = loading_fidelity(P, tl, num["grid_N"], num["load_dt"])
            pops = loading_populations(P, tl, num["n_bands"], num["grid_N"], num["load_dt"]) if P.V > 0 \
                else np.r_[1.0, np.zeros(num["n_bands"] - 1)]
            chk = check_adiabaticity(P, "loading", tl, ana["min_margin"]) if P.V > 0 else None
            rows.append([tl, F, chk.margin if chk else math.inf] + list(pops))
    out.csv("loading.csv", ["t_L", "F", "margin"] + [f"P{n}" for n in range(num["n_bands"])], rows)
    last = rows[-1]
    return {"t_L": last[0], "F": last[1], "margin": last[2], "ok": bool(last[2] >= ana["min_margin"])}


def cmd_lz(cfg, out: Outputs):
    P = params_from(cfg)
    s = cfg["derived"]["s_total"]
    rep = lz_analytics(P, abs(s))
    N_B = cfg["analysis"]["N_B"]
    out.csv("staircase_prediction.csv", ["N_B", "Lz_hbar"],
            [(n, staircase_prediction(rep.T_LZ, n, P.l)) for n in range(N_B + 1)])
    report = rep.to_dict()
    # the two-level cross-check is only informative when T is not vanishingly small
    if rep.gamma < 3.0:
        with out.timed("two_level"):
            tl = two_level_evolve(P, abs(s), (P.l - 5.0, P.l + 5.0))
        report["T_two_level"] = tl.excited_fraction
    else:
        report["T_two_level"] = None
    out.json("lz.json", report)
    return report


def cmd_calibrate(cfg, out: Outputs):
    P = params_from(cfg)
    sch, ana = cfg["schedule"], cfg["analysis"]
    B = sch["B"] if sch["B"] is not None else chirp_for_ramp(P, sch["s"] or 0.0)
    if not B > 0:
        raise ConfigError("calibrate needs a positive chirp B (or ramp rate s)")
    if ana["t_B_measured"] is not None and ana["A_measured"] is not None:
        res = calibrate_IV(ana["t_B_measured"], ana["A_measured"], B, P.l, P.hbar)
        rec = {"result": res.to_dict(), "source": "measured"}
    else:
        n_per = ana["n_periods"] or 3.0
        with out.timed("simulate"):
            po = simulate_calibration(P, B, n_per, sch["preparation"], sch["t_L"], cfg["numerics"]["dt"],
                                      cfg["numerics"]["sample_dt"] or 1.0)
        out.trace("deriv.csv", po.traces[0])
        res = po.result
        rec = po.to_dict()
        rec["source"] = "simulated"
        rec["truth"] = {"I": P.I, "V": P.V}
        rec["relative_error"] = {"I": abs(res.I_est - P.I) / P.I, "V": abs(res.V_est - P.V) / P.V if P.V else None}
        rec["tolerance"] = {"I": 0.01, "V": 0.05}
    out.json("calibration.json", rec)
    return {"I_est": res.I_est, "V_est": res.V_est}


def cmd_sense(cfg, out: Outputs):
    P = params_from(cfg)
    sch, ana = cfg["schedule"], cfg["analysis"]
    wd = sch["omega_dot"] or 0.0
    if sch["chirps"] and len(sch["chirps"]) >= 3:
        tbs = [1.0 / predicted_inverse_bloch(P, b, wd) for b in sch["chirps"]]
        fit = fit_inverse_bloch(sch["chirps"], tbs, P.l, P.hbar)
        out.csv("inverse_bloch.csv", ["B", "inv_tB"], [(b, 1.0 / t) for b, t in zip(sch["chirps"], tbs)])
        out.json("sensing_fit.json", fit.to_dict())
    B1, B2 = sch["B1"], sch["B2"]
    if B1 is None or B2 is None:
        raise ConfigError("sense needs schedule.B1 and schedule.B2")
    if ana["tB1"] is not None and ana["tB2"] is not None:
        res = infer_angular_acceleration(B1, ana["tB1"], B2, ana["tB2"], P.l)
        rec = {"result": res.to_dict(), "source": "measured"}
    else:
        with out.timed("simulate"):
            po = simulate_sensing(P, wd, B1, B2, ana["n_periods"] or 2.2, sch["preparation"], sch["t_L"],
                                  cfg["numerics"]["dt"], cfg["numerics"]["sample_dt"] or 1.0)
        res = po.result
        rec = po.to_dict()
        rec["source"] = "simulated"
        rec["truth"] = {"omega_dot": wd}
        rec["relative_error"] = abs(res.omega_dot_est - wd) / abs(wd) if wd else None
        rec["tolerance"] = 0.02
    out.json("sensing.json", rec)
    return {"omega_dot_est": res.omega_dot_est}


def cmd_reproduce(cfg, out: Outputs):
    from .reproduce import run_suite

    report = run_suite(out)
    return {"passed": sum(r["passed"] for r in report), "total": len(report)}


COMMANDS = {
    "bands": cmd_bands,
    "gs": cmd_gs,
    "evolve": cmd_evolve,
    "experiment": cmd_experiment,
    "deriv": cmd_deriv,
    "load-check": cmd_load_check,
    "lz": cmd_lz,
    "calibrate": cmd_calibrate,
    "sense": cmd_sense,
    "reproduce": cmd_reproduce,
}


# ---------------------------------------------------------------------------
# sweeps


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, DetectionError):
        return EXIT_DETECTION
    if isinstance(exc, (InvalidParameterError, ValueError)):
        return EXIT_INVALID
    return EXIT_NUMERICAL


def _sweep_worker(args):
    command, idx, point_cfg, out_dir = args
    # quiet per-point warnings; restore the level since workers=1 runs in-process
    logger = logging.getLogger("ringabo")
    level = logger.level
    logger.setLevel(logging.ERROR)
    sub = Outputs(Path(out_dir) / f"point_{idx:04d}")
    try:
        summary = COMMANDS[command](point_cfg, sub)
        return idx, "ok", summary, "", sub.files
    except (RingABOError, ValueError, ArithmeticError) as exc:
        return idx, "error", {}, f"{type(exc).__name__}: {exc}", sub.files
    finally:
        logger.setLevel(level)


def run_sweep(command: str, cfg: dict, out: Outputs, workers: int) -> tuple[int, list]:
    points = sweep_points(cfg)
    jobs = [(command, idx, pc, str(out.dir)) for idx, _, pc in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    names = list(cfg["sweep"])
    keys = sorted({k for r in results for k in r[2]} - set(names))
    rows, failed = [], []
    for (idx, over, _), (_, status, summary, msg, files) in zip(points, results):
        rows.append([idx] + [over[n] for n in names] + [summary.get(k, "") for k in keys] + [status, msg])
        out.files += [str(Path(f"point_{idx:04d}") / f) for f in files]
        if status != "ok":
            failed.append({"index": idx, "point": over, "error": msg})
    out.csv("sweep.csv", ["index"] + names + keys + ["status", "message"], rows)
    return (EXIT_NUMERICAL if failed else EXIT_OK), failed


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringabo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ringabo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("--strict", action="store_true", help="reject unknown configuration keys")
        sp.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "deriv":
            sp.add_argument("--trace", help="existing trace CSV to differentiate")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = parse_config(args.config, strict=args.strict)
    except (InvalidParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = Outputs(Path(args.out))
    out.dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(run_id(cfg, args.command), args.command, echo(cfg),
                           versions={"artifact": __version__, "numpy": np.__version__,
                                     "scipy": __import__("scipy").__version__})
    if args.seed is not None:
        manifest.messages.append(f"seed {args.seed} recorded but unused")
    code = EXIT_OK
    t0 = time.perf_counter()
    try:
        if cfg["sweep"]:
            code, failed = run_sweep(args.command, cfg, out, args.workers)
            for f in failed:
                manifest.messages.append(f"point {f['index']} {f['point']}: {f['error']}")
                print(f"sweep point {f['index']} failed: {f['error']}", file=sys.stderr)
        elif args.command == "deriv":
            summary = cmd_deriv(cfg, out, args.trace)
            out.json("summary.json", summary)
        else:
            summary = COMMANDS[args.command](cfg, out)
            out.json("summary.json", summary)
    except (RingABOError, ValueError, ArithmeticError) as exc:
        code = _exit_code(exc)
        manifest.messages.append(f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
    out.timings["total"] = time.perf_counter() - t0
    manifest.outputs = out.files
    manifest.timings = out.timings
    manifest.status = "ok" if code == EXIT_OK else "failed"
    atomic_write(out.dir / "manifest.json", dumps(manifest.to_dict()))
    return code


if __name__ == "__main__":
    sys.exit(main())
