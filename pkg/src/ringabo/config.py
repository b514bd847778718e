"""JSON run configuration: sections, flat aliases, defaults and Bloch-time expressions."""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import math
import re
from typing import Any, Optional

from .errors import InvalidParameterError
from .model import RingLatticeParams, ramp_for_chirp

log = logging.getLogger(__name__)


class ConfigError(InvalidParameterError):
    """Malformed or invalid configuration."""


DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {"l": 2, "V": 1.0, "I": None, "hbar": 1.0},
    "schedule": {
        "s": None, "B": None, "omega_dot": None, "t_f": None, "t_L": 10.0, "preparation": "ramp",
        "B1": None, "B2": None, "chirps": None,
    },
    "numerics": {
        "grid_N": 256, "dt": 0.005, "sample_dt": None, "k_max": 32, "n_max": 4, "n_q": 161,
        "q_min": None, "q_max": None, "n_bands": 5, "load_dt": 0.001,
    },
    "analysis": {
        "threshold_factor": 5.0, "rel_height": 0.5, "min_margin": 10.0, "N_B": 4, "t_L_grid": None,
        "n_periods": None, "t_B_measured": None, "A_measured": None, "tB1": None, "tB2": None,
    },
}
SECTIONS = ("model", "schedule", "numerics", "analysis", "sweep")
ALIASES = {key: sec for sec, keys in DEFAULTS.items() for key in keys}
ALIASES.update({"azimuthal_l": "model", "rotation_time_tf": "schedule", "load_time_tL": "schedule",
                "ramp_rate_s": "schedule", "external_acceleration": "schedule"})
RENAMES = {"azimuthal_l": "l", "rotation_time_tf": "t_f", "load_time_tL": "t_L", "ramp_rate_s": "s",
           "external_acceleration": "omega_dot"}

_TIME_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(t_B|tB)?\s*$")


def load_json(path) -> dict:
    """Read a JSON document, reporting syntax errors with line and column."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return loads_json(text, str(path))


def loads_json(text: str, name: str = "<config>") -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: top level must be a JSON object")
    return doc


def normalize(doc: dict, strict: bool = False) -> dict:
    """Fold flat aliases into sections; unknown keys are errors in strict mode and dropped otherwise."""
    out: dict[str, dict] = {sec: {} for sec in SECTIONS}
    unknown = []

    def put(sec, key, val):
        key = RENAMES.get(key, key)
        if sec != "sweep" and key not in DEFAULTS[sec]:
            unknown.append(f"{sec}.{key}")
            return
        out[sec][key] = val

    for key, val in doc.items():
        if key in SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"section {key!r} must be an object")
            for k, v in val.items():
                if key == "sweep":
                    k2 = RENAMES.get(k, k)
                    if k2 not in ALIASES and k not in ALIASES:
                        unknown.append(f"sweep.{k}")
                        continue
                    if not isinstance(v, list) or not v:
                        raise ConfigError(f"sweep.{k} must be a non-empty list")
                    out["sweep"][k2] = v
                else:
                    put(key, k, v)
        elif key in ALIASES:
            put(ALIASES[key], key, val)
        else:
            unknown.append(key)
    if unknown:
        msg = "unknown configuration keys: " + ", ".join(unknown)
        if strict:
            raise ConfigError(msg)
        log.warning(msg + " (ignored)")
    return out


def _number(sec, key, val, positive=False, nonneg=False, integer=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{sec}.{key} must be a number, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{sec}.{key} must be finite")
    if integer and int(val) != val:
        raise ConfigError(f"{sec}.{key} must be an integer")
    if positive and not val > 0:
        raise ConfigError(f"{sec}.{key} must be > 0")
    if nonneg and not val >= 0:
        raise ConfigError(f"{sec}.{key} must be >= 0")
    return int(val) if integer else float(val)


def resolve_time(expr, t_B: Optional[float], field: str) -> float:
    """Number, numeric string, or multiple of the Bloch time such as "3 t_B"."""
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        return float(expr)
    if not isinstance(expr, str):
        raise ConfigError(f"{field} must be a number or a time expression")
    m = _TIME_RE.match(expr)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ConfigError(f"{field}: cannot parse time expression {expr!r}")
    factor = float(m.group(1)) if m.group(1) is not None else 1.0
    if m.group(2) is None:
        return factor
    if t_B is None or not math.isfinite(t_B):
        raise ConfigError(f"{field} uses t_B but no ramp rate or chirp is set")
    return factor * t_B


def resolve(sections: dict) -> dict:
    """Fill defaults, validate and evaluate time expressions; returns a plain JSON-able dict."""
    cfg = {sec: dict(DEFAULTS[sec]) for sec in DEFAULTS}
    for sec in DEFAULTS:
        cfg[sec].update(sections.get(sec, {}))
    cfg["sweep"] = dict(sections.get("sweep", {}))
    m, sch, num, ana = cfg["model"], cfg["schedule"], cfg["numerics"], cfg["analysis"]

    l = m["l"]
    if isinstance(l, bool) or not isinstance(l, (int, float)) or int(l) != l or l < 1:
        raise ConfigError("azimuthal_l must be >= 1 (model.l)")
    m["l"] = int(l)
    m["V"] = _number("model", "V", m["V"], nonneg=True)
    m["hbar"] = _number("model", "hbar", m["hbar"], positive=True)
    if m["I"] is not None:
        m["I"] = _number("model", "I", m["I"], positive=True)
    params = params_from(cfg)
    m["I"] = params.I

    for key in ("s", "B", "omega_dot", "B1", "B2"):
        if sch[key] is not None:
            sch[key] = _number("schedule", key, sch[key])
    if sch["s"] is not None and sch["B"] is not None:
        raise ConfigError("schedule.s and schedule.B are mutually exclusive")
    if sch["chirps"] is not None:
        if not isinstance(sch["chirps"], list):
            raise ConfigError("schedule.chirps must be a list")
        sch["chirps"] = [_number("schedule", "chirps", b) for b in sch["chirps"]]
    if sch["preparation"] not in ("ramp", "ground"):
        raise ConfigError("schedule.preparation must be 'ramp' or 'ground'")
    sch["t_L"] = _number("schedule", "t_L", sch["t_L"], nonneg=True)

    s = total_ramp(cfg, params)
    t_B = 2.0 * params.l / abs(s) if s else None
    if sch["t_f"] is None:
        sch["t_f"] = 3.0 * t_B if t_B is not None else None
    else:
        sch["t_f"] = resolve_time(sch["t_f"], t_B, "schedule.t_f")
        if sch["t_f"] < 0:
            raise ConfigError("schedule.t_f must be >= 0")

    num["grid_N"] = _number("numerics", "grid_N", num["grid_N"], positive=True, integer=True)
    if num["grid_N"] % (2 * params.l):
        raise ConfigError(f"numerics.grid_N must be a multiple of 2 l = {2 * params.l}")
    num["dt"] = _number("numerics", "dt", num["dt"], positive=True)
    if num["dt"] > 0.01 / params.wr:
        raise ConfigError("numerics.dt exceeds the 0.01/omega_r guard")
    if num["sample_dt"] is not None:
        num["sample_dt"] = resolve_time(num["sample_dt"], t_B, "numerics.sample_dt")
    for key in ("k_max", "n_max", "n_q", "n_bands"):
        num[key] = _number("numerics", key, num[key], positive=key != "n_max", nonneg=True, integer=True)
    num["q_min"] = -params.l if num["q_min"] is None else _number("numerics", "q_min", num["q_min"])
    num["q_max"] = params.l if num["q_max"] is None else _number("numerics", "q_max", num["q_max"])
    num["load_dt"] = _number("numerics", "load_dt", num["load_dt"], positive=True)

    ana["threshold_factor"] = _number("analysis", "threshold_factor", ana["threshold_factor"], positive=True)
    ana["rel_height"] = _number("analysis", "rel_height", ana["rel_height"], nonneg=True)
    ana["min_margin"] = _number("analysis", "min_margin", ana["min_margin"], positive=True)
    ana["N_B"] = _number("analysis", "N_B", ana["N_B"], nonneg=True, integer=True)
    if ana["t_L_grid"] is not None:
        ana["t_L_grid"] = [_number("analysis", "t_L_grid", x, positive=True) for x in ana["t_L_grid"]]
    cfg["derived"] = {"s_total": s, "t_B": t_B, "E_r": params.Er}
    return cfg


def params_from(cfg: dict) -> RingLatticeParams:
    m = cfg["model"]
    try:
        I = m["I"] if m["I"] is not None else m["l"] ** 2 * m["hbar"] ** 2 / 2.0
        return RingLatticeParams(I, m["V"], m["l"], m["hbar"])
    except InvalidParameterError as exc:
        raise ConfigError(f"model: {exc}") from exc


def total_ramp(cfg: dict, params: RingLatticeParams) -> float:
    sch = cfg["schedule"]
    wd = sch["omega_dot"] or 0.0
    if sch["B"] is not None:
        return ramp_for_chirp(params, sch["B"], wd)
    if sch["s"] is not None:
        return float(sch["s"])
    if sch["omega_dot"] is not None:
        return ramp_for_chirp(params, 0.0, wd)
    return 0.0


def parse_config(source=None, strict: bool = False) -> dict:
    """Path, JSON text or dict -> resolved configuration."""
    if source is None:
        doc = {}
    elif isinstance(source, dict):
        doc = copy.deepcopy(source)
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        doc = loads_json(source)
    else:
        doc = load_json(source)
    sections = normalize(doc, strict)
    cfg = resolve(sections)
    cfg["_raw"] = sections
    return cfg


def echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def run_id(cfg: dict, command: str = "") -> str:
    blob = json.dumps({"command": command, "config": echo(cfg)}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sweep_points(cfg: dict) -> list[tuple[int, dict, dict]]:
    """Cartesian grid over the sweep section in declaration order; each point is re-resolved."""
    sweep = cfg["sweep"]
    if not sweep:
        return []
    names = list(sweep)
    raw = cfg["_raw"]
    points = []
    for idx, combo in enumerate(itertools.product(*(sweep[n] for n in names))):
        sections = copy.deepcopy(raw)
        sections["sweep"] = {}
        for name, val in zip(names, combo):
            sections[ALIASES[name]][name] = val
        pc = resolve(sections)
        pc["_raw"] = sections
        points.append((idx, dict(zip(names, combo)), pc))
    return points
