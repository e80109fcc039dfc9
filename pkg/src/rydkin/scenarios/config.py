"""Scenario documents: strict schema, unit conversion and canonical emission.

A scenario document is a nested mapping with the sections ``scenario``,
``physics``, ``geometry``, ``protocol``, ``scan`` and ``output``. Every
physical quantity carries its unit, either inline (``"19 MHz"``) or as a
mapping (``{value: 19, unit: MHz}``). Ordinary frequencies are multiplied by
2*pi when ``physics.times_two_pi`` is true (the default); angular units such
as ``rad/us`` are taken literally.

:func:`parse_config` returns the canonical form: defaults filled in, grids
expanded and every quantity expressed in internal units (um, us, rad/us,
1/us). Parsing a canonical document returns it unchanged.
"""
from __future__ import annotations

import copy
import math
import re
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import yaml

from ..errors import ConfigError
from ..model import PhysicalParams, derive_scales

KINDS = ("blockade_growth", "facilitation", "seeded_facilitation", "phase_diagram",
         "criticality_1d", "deexcitation_spectrum", "qjmc_histogram", "meanfield_scan",
         "collapse_demo")
DRIVES = ("off", "excitation", "deexcitation")
ROLES = ("seed", "build", "drive", "dark", "probe")

INTERNAL = {"frequency": "rad/us", "rate": "1/us", "length": "um", "time": "us",
            "speed": "um/us", "c6": "rad/us um^6"}

_ORDINARY = {"Hz": 1e-6, "kHz": 1e-3, "MHz": 1.0, "GHz": 1e3}
_ANGULAR = {"rad/s": 1e-6, "rad/ms": 1e-3, "rad/us": 1.0}
_RATE = {"1/s": 1e-6, "1/ms": 1e-3, "1/us": 1.0}
_LENGTH = {"nm": 1e-3, "um": 1.0, "mm": 1e3}
_TIME = {"ns": 1e-3, "us": 1.0, "ms": 1e3, "s": 1e6}
_SPEED = {"um/us": 1.0, "m/s": 1.0, "mm/s": 1e-3}
# lengths measured in model scales, resolved against the physics section
RELATIVE_LENGTHS = ("r_fac", "blockade_radius", "spacing")

_QTY_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def _join(path, key):
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else key


def _number(x, path) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(path, f"expected a number, got {x!r}")
    x = float(x)
    if not math.isfinite(x):
        raise ConfigError(path, "value must be finite")
    return x


def _integer(x, path, minimum=None) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(path, f"expected an integer, got {x!r}")
    if minimum is not None and x < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return int(x)


def _boolean(x, path) -> bool:
    if not isinstance(x, bool):
        raise ConfigError(path, f"expected true or false, got {x!r}")
    return x


def _string(x, path, choices=None) -> str:
    if not isinstance(x, str):
        raise ConfigError(path, f"expected a string, got {x!r}")
    if choices is not None and x not in choices:
        raise ConfigError(path, f"must be one of {', '.join(choices)}; got {x!r}")
    return x


def _mapping(x, path, allowed, required=()) -> dict:
    if x is None:
        x = {}
    if not isinstance(x, dict):
        raise ConfigError(path, "expected a mapping")
    for k in x:
        if k not in allowed:
            raise ConfigError(_join(path, k), "unknown key")
    for k in required:
        if k not in x:
            raise ConfigError(_join(path, k), "required key missing")
    return x


class UnitContext:
    """Conversion state shared by all quantities of one document."""

    def __init__(self, times_two_pi: bool = True, scales: Optional[dict] = None):
        self.times_two_pi = times_two_pi
        self.scales = scales or {}

    def factor(self, kind: str, unit: str, path: str) -> float:
        unit = " ".join(unit.split())
        if kind == "frequency":
            if unit in _ANGULAR:
                return _ANGULAR[unit]
            if unit in _ORDINARY:
                return _ORDINARY[unit] * (2.0 * math.pi if self.times_two_pi else 1.0)
        elif kind == "c6":
            head, _, tail = unit.rpartition(" ")
            if tail == "um^6" and head:
                return self.factor("frequency", head, path)
        elif kind == "rate" and unit in _RATE:
            return _RATE[unit]
        elif kind == "time" and unit in _TIME:
            return _TIME[unit]
        elif kind == "speed" and unit in _SPEED:
            return _SPEED[unit]
        elif kind == "length":
            if unit in _LENGTH:
                return _LENGTH[unit]
            if unit in RELATIVE_LENGTHS:
                scale = self.scales.get(unit)
                if scale is None:
                    raise ConfigError(path, f"length unit {unit!r} is undefined for these parameters")
                return scale
        raise ConfigError(path, f"unit {unit!r} is not a valid {kind} unit")


def _split_quantity(x, path):
    """Return ``(payload, unit)`` for the inline and mapping notations."""
    if isinstance(x, str):
        m = _QTY_RE.match(x)
        if not m or not m.group(2):
            raise ConfigError(path, f"cannot read {x!r} as '<number> <unit>'")
        return float(m.group(1)), m.group(2)
    if isinstance(x, dict):
        if "unit" not in x:
            raise ConfigError(_join(path, "unit"), "physical quantities need an explicit unit")
        return x, _string(x["unit"], _join(path, "unit"))
    raise ConfigError(path, f"physical quantity needs a unit, got {x!r}")


def quantity(x, kind: str, ctx: UnitContext, path: str) -> float:
    payload, unit = _split_quantity(x, path)
    if isinstance(payload, dict):
        _mapping(payload, path, ("value", "unit"), ("value",))
        payload = _number(payload["value"], _join(path, "value"))
    return payload * ctx.factor(kind, unit, _join(path, "unit"))


def quantity_list(x, kind: str, ctx: UnitContext, path: str) -> list:
    """Lists of quantities: explicit values or a linear/log grid."""
    if isinstance(x, list):
        if not x:
            raise ConfigError(path, "list must not be empty")
        return [quantity(v, kind, ctx, _join(path, i)) for i, v in enumerate(x)]
    payload, unit = _split_quantity(x, path)
    if not isinstance(payload, dict):
        return [payload * ctx.factor(kind, unit, _join(path, "unit"))]
    f = ctx.factor(kind, unit, _join(path, "unit"))
    if "values" in payload:
        _mapping(payload, path, ("values", "unit"))
        vals = payload["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(_join(path, "values"), "expected a non-empty list of numbers")
        return [_number(v, _join(_join(path, "values"), i)) * f for i, v in enumerate(vals)]
    _mapping(payload, path, ("start", "stop", "num", "spacing", "unit"), ("start", "stop", "num"))
    lo = _number(payload["start"], _join(path, "start"))
    hi = _number(payload["stop"], _join(path, "stop"))
    num = _integer(payload["num"], _join(path, "num"), minimum=1)
    spacing = _string(payload.get("spacing", "linear"), _join(path, "spacing"), ("linear", "log"))
    if spacing == "log":
        if lo <= 0 or hi <= 0:
            raise ConfigError(path, "log grids need positive bounds")
        grid = np.geomspace(lo, hi, num)
    else:
        grid = np.linspace(lo, hi, num)
    return [float(v) * f for v in grid]


def _canon(value: float, kind: str) -> dict:
    return {"value": float(value), "unit": INTERNAL[kind]}


def _canon_list(values, kind: str) -> dict:
    return {"values": [float(v) for v in values], "unit": INTERNAL[kind]}


def _number_list(x, path, minimum=None, integer=False) -> list:
    if not isinstance(x, list) or not x:
        raise ConfigError(path, "expected a non-empty list")
    conv = (lambda v, p: _integer(v, p, minimum)) if integer else _number
    out = [conv(v, _join(path, i)) for i, v in enumerate(x)]
    if minimum is not None and not integer and any(v < minimum for v in out):
        raise ConfigError(path, f"values must be >= {minimum}")
    return out


# --------------------------------------------------------------------------- sections

def _scenario(doc, path="scenario"):
    d = _mapping(doc, path, ("kind", "name", "seed", "trajectories", "description"), ("kind",))
    kind = _string(d["kind"], _join(path, "kind"), KINDS)
    name = _string(d.get("name", kind), _join(path, "name"))
    if not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise ConfigError(_join(path, "name"), "use letters, digits, '_', '-' or '.' only")
    seed = _integer(d.get("seed", 0), _join(path, "seed"), minimum=0)
    if seed > 2**64 - 1:
        raise ConfigError(_join(path, "seed"), "seed must fit in 64 bits")
    out = {"kind": kind, "name": name, "seed": seed,
           "trajectories": _integer(d.get("trajectories", 100), _join(path, "trajectories"), 1)}
    if "description" in d:
        out["description"] = _string(d["description"], _join(path, "description"))
    return out


PHYSICS_QTY = {"rabi": "frequency", "detuning": "frequency", "dephasing": "frequency",
               "decay": "rate", "c6": "c6"}


def _physics(doc, path="physics"):
    d = _mapping(doc, path, (*PHYSICS_QTY, "detection_eff", "times_two_pi", "spontaneous"),
                 ("dephasing",))
    two_pi = _boolean(d.get("times_two_pi", True), _join(path, "times_two_pi"))
    ctx = UnitContext(two_pi)
    out = {"times_two_pi": two_pi}
    for key, kind in PHYSICS_QTY.items():
        val = quantity(d[key], kind, ctx, _join(path, key)) if key in d else 0.0
        out[key] = _canon(val, kind)
    out["detection_eff"] = _number(d.get("detection_eff", 1.0), _join(path, "detection_eff"))
    out["spontaneous"] = _boolean(d.get("spontaneous", True), _join(path, "spontaneous"))
    try:
        params = physical_params(out)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    return out, ctx, params


def _geometry(doc, ctx: UnitContext, params: PhysicalParams, path="geometry"):
    d = _mapping(doc, path, ("mode", "dimension", "atom_count", "lattice_spacing", "lattice_shape",
                             "boundary", "cloud", "cutoff", "motion", "initial"), ("atom_count",))
    out = {"mode": _string(d.get("mode", "lattice"), _join(path, "mode"), ("lattice", "continuum")),
           "dimension": _integer(d.get("dimension", 1), _join(path, "dimension"), 1),
           "atom_count": _integer(d["atom_count"], _join(path, "atom_count"), 1),
           "boundary": _string(d.get("boundary", "open"), _join(path, "boundary"), ("open", "periodic"))}
    if out["dimension"] > 3:
        raise ConfigError(_join(path, "dimension"), "must be 1, 2 or 3")
    scales = derive_scales(params)
    ctx.scales = {"blockade_radius": scales.blockade_radius}
    if scales.facilitation_radius is not None:
        ctx.scales["r_fac"] = scales.facilitation_radius
    spacing = quantity(d.get("lattice_spacing", "1 um"), "length", ctx, _join(path, "lattice_spacing"))
    if spacing <= 0:
        raise ConfigError(_join(path, "lattice_spacing"), "must be > 0")
    out["lattice_spacing"] = _canon(spacing, "length")
    ctx.scales["spacing"] = spacing
    if "lattice_shape" in d:
        out["lattice_shape"] = _number_list(d["lattice_shape"], _join(path, "lattice_shape"), 1, True)
    if "cloud" in d:
        cp = _join(path, "cloud")
        c = _mapping(d["cloud"], cp, ("shape", "sigma", "radius", "length"))
        cloud = {"shape": _string(c.get("shape", "gaussian"), _join(cp, "shape"), ("gaussian", "cylinder"))}
        if cloud["shape"] == "gaussian":
            if "sigma" not in c:
                raise ConfigError(_join(cp, "sigma"), "required key missing")
            cloud["sigma"] = _canon_list(quantity_list(c["sigma"], "length", ctx, _join(cp, "sigma")), "length")
        else:
            for key in ("radius", "length"):
                if key not in c:
                    raise ConfigError(_join(cp, key), "required key missing")
                cloud[key] = _canon(quantity(c[key], "length", ctx, _join(cp, key)), "length")
        out["cloud"] = cloud
    if "cutoff" in d:
        cut = quantity(d["cutoff"], "length", ctx, _join(path, "cutoff"))
        if cut <= 0:
            raise ConfigError(_join(path, "cutoff"), "must be > 0")
        out["cutoff"] = _canon(cut, "length")
    mp = _join(path, "motion")
    m = _mapping(d.get("motion", {}), mp, ("enabled", "mean_speed", "update_interval"))
    out["motion"] = {
        "enabled": _boolean(m.get("enabled", False), _join(mp, "enabled")),
        "mean_speed": _canon(quantity(m.get("mean_speed", "0 um/us"), "speed", ctx,
                                      _join(mp, "mean_speed")), "speed"),
        "update_interval": _canon(quantity(m.get("update_interval", "0.5 us"), "time", ctx,
                                           _join(mp, "update_interval")), "time"),
    }
    if "initial" in d:
        out["initial"] = _number_list(d["initial"], _join(path, "initial"), 0, True)
    return out


def _protocol(doc, ctx: UnitContext, path="protocol"):
    if doc is None:
        return []
    if not isinstance(doc, list):
        raise ConfigError(path, "expected a list of segments")
    out = []
    for i, seg in enumerate(doc):
        sp = _join(path, i)
        s = _mapping(seg, sp, ("duration", "drive", "rabi", "detuning", "seeds", "role"), ("duration",))
        dur = quantity(s["duration"], "time", ctx, _join(sp, "duration"))
        if dur <= 0:
            raise ConfigError(_join(sp, "duration"), "must be > 0")
        item = {"duration": _canon(dur, "time"),
                "drive": _string(s.get("drive", "excitation"), _join(sp, "drive"), DRIVES)}
        for key in ("rabi", "detuning"):
            if key in s:
                item[key] = _canon(quantity(s[key], "frequency", ctx, _join(sp, key)), "frequency")
        if "seeds" in s:
            kp = _join(sp, "seeds")
            k = _mapping(s["seeds"], kp, ("mean", "mode"), ("mean",))
            mean = _number(k["mean"], _join(kp, "mean"))
            if mean < 0:
                raise ConfigError(_join(kp, "mean"), "must be >= 0")
            item["seeds"] = {"mean": mean,
                             "mode": _string(k.get("mode", "inject"), _join(kp, "mode"), ("inject", "pulse"))}
            if item["drive"] == "deexcitation":
                raise ConfigError(kp, "seeds cannot be injected during de-excitation")
        if "role" in s:
            item["role"] = _string(s["role"], _join(sp, "role"), ROLES)
        out.append(item)
    return out


SCAN_QTY = {"rabi": "frequency", "detuning": "frequency", "rate_fac": "rate", "rate_spon": "rate",
            "dark_time": "time"}


def _scan(doc, ctx: UnitContext, path="scan"):
    d = _mapping(doc, path, (*SCAN_QTY, "mean_seeds", "variants"))
    out = {}
    for key, kind in SCAN_QTY.items():
        if key in d:
            out[key] = _canon_list(quantity_list(d[key], kind, ctx, _join(path, key)), kind)
    if "mean_seeds" in d:
        out["mean_seeds"] = _number_list(d["mean_seeds"], _join(path, "mean_seeds"), 0.0)
    if "variants" in d:
        vp = _join(path, "variants")
        if not isinstance(d["variants"], list) or not d["variants"]:
            raise ConfigError(vp, "expected a non-empty list")
        vs = []
        for i, v in enumerate(d["variants"]):
            ip = _join(vp, i)
            v = _mapping(v, ip, ("name", "dark_time", "motion"), ("name",))
            item = {"name": _string(v["name"], _join(ip, "name")),
                    "motion": _boolean(v.get("motion", False), _join(ip, "motion"))}
            if "dark_time" in v:
                item["dark_time"] = _canon(quantity(v["dark_time"], "time", ctx, _join(ip, "dark_time")), "time")
            vs.append(item)
        if len({v["name"] for v in vs}) != len(vs):
            raise ConfigError(vp, "variant names must be unique")
        out["variants"] = vs
    return out


def _output(doc, ctx: UnitContext, path="output"):
    d = _mapping(doc, path, ("record_times", "observables", "fit_window", "exponent_window",
                             "average_from", "bins", "samples", "threshold"))
    out = {}
    if "record_times" in d:
        rt = quantity_list(d["record_times"], "time", ctx, _join(path, "record_times"))
        if any(t < 0 for t in rt) or any(b <= a for a, b in zip(rt, rt[1:])):
            raise ConfigError(_join(path, "record_times"), "must be non-negative and strictly increasing")
        out["record_times"] = _canon_list(rt, "time")
    if "observables" in d:
        obs = d["observables"]
        if not isinstance(obs, list):
            raise ConfigError(_join(path, "observables"), "expected a list of names")
        out["observables"] = [_string(o, _join(_join(path, "observables"), i)) for i, o in enumerate(obs)]
    if "fit_window" in d:
        w = _number_list(d["fit_window"], _join(path, "fit_window"), 0.0)
        if len(w) != 2 or not w[0] < w[1] <= 1.0:
            raise ConfigError(_join(path, "fit_window"), "expected [lo, hi] with 0 <= lo < hi <= 1")
        out["fit_window"] = w
    if "exponent_window" in d:
        w = quantity_list(d["exponent_window"], "time", ctx, _join(path, "exponent_window"))
        if len(w) != 2 or not 0 < w[0] < w[1]:
            raise ConfigError(_join(path, "exponent_window"), "expected two increasing positive times")
        out["exponent_window"] = _canon_list(w, "time")
    if "average_from" in d:
        a = _number(d["average_from"], _join(path, "average_from"))
        if not 0 <= a < 1:
            raise ConfigError(_join(path, "average_from"), "must lie in [0, 1)")
        out["average_from"] = a
    for key in ("bins", "samples"):
        if key in d:
            out[key] = _integer(d[key], _join(path, key), 1)
    if "threshold" in d:
        out["threshold"] = _number(d["threshold"], _join(path, "threshold"))
    return out


def parse_config(doc: Any) -> dict:
    """Validate a scenario document and return its canonical form."""
    if isinstance(doc, (str, Path)):
        doc = load_document(doc)
    top = _mapping(doc, "", ("scenario", "physics", "geometry", "protocol", "scan", "output"),
                   ("scenario", "physics"))
    doc = copy.deepcopy(top)
    scenario = _scenario(doc["scenario"])
    physics, ctx, params = _physics(doc["physics"])
    out = {"scenario": scenario, "physics": physics}
    if "geometry" in doc:
        out["geometry"] = _geometry(doc["geometry"], ctx, params)
    else:
        ctx.scales = {}
    out["protocol"] = _protocol(doc.get("protocol"), ctx)
    out["scan"] = _scan(doc.get("scan"), ctx)
    out["output"] = _output(doc.get("output"), ctx)
    _REQUIREMENTS[scenario["kind"]](out)
    return out


def emit_config(cfg: dict) -> str:
    """Serialise a canonical config as YAML."""
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def load_document(path) -> Any:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {p}: {exc.strerror}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{p} is not valid YAML: {exc}") from None


def physical_params(physics: dict) -> PhysicalParams:
    return PhysicalParams(
        rabi=physics["rabi"]["value"], detuning=physics["detuning"]["value"],
        dephasing=physics["dephasing"]["value"], decay=physics["decay"]["value"],
        c6=physics["c6"]["value"], detection_eff=physics["detection_eff"])


# --------------------------------------------------------------------------- per-kind checks

def _need(cfg, section, key, message=None):
    if key not in cfg[section]:
        raise ConfigError(_join(section, key), message or "required for this scenario kind")


def _need_protocol(cfg):
    if not cfg["protocol"]:
        raise ConfigError("protocol", "at least one segment is required")


def _need_geometry(cfg):
    if "geometry" not in cfg:
        raise ConfigError("geometry", "required for this scenario kind")


def _need_role(cfg, role):
    if not any(s.get("role") == role for s in cfg["protocol"]):
        raise ConfigError("protocol", f"needs a segment with role {role!r}")


def _kmc_common(cfg):
    _need_geometry(cfg)
    _need_protocol(cfg)


def _check_blockade(cfg):
    _kmc_common(cfg)
    _need(cfg, "output", "record_times")


def _check_seeded(cfg):
    _kmc_common(cfg)
    _need(cfg, "scan", "mean_seeds")
    _need_role(cfg, "seed")


def _check_phase(cfg):
    _kmc_common(cfg)
    _need(cfg, "scan", "rabi")
    _need(cfg, "scan", "detuning")
    _need_role(cfg, "drive")


def _check_criticality(cfg):
    _kmc_common(cfg)
    _need(cfg, "scan", "rabi")
    _need(cfg, "output", "record_times")
    _need_role(cfg, "drive")
    if cfg["geometry"]["dimension"] != 1 or cfg["geometry"]["mode"] != "lattice":
        raise ConfigError("geometry", "criticality scans use a one-dimensional lattice")


def _check_deex(cfg):
    _kmc_common(cfg)
    _need(cfg, "scan", "detuning")
    _need_role(cfg, "probe")
    if any(s.get("role") == "probe" and s["drive"] != "deexcitation" for s in cfg["protocol"]):
        raise ConfigError("protocol", "probe segments must use drive 'deexcitation'")
    if any("dark_time" in v for v in cfg["scan"].get("variants", [])):
        _need_role(cfg, "dark")


def _check_qjmc(cfg):
    _need_geometry(cfg)
    _need_protocol(cfg)
    _need(cfg, "scan", "rabi")
    if cfg["physics"]["decay"]["value"] <= 0:
        raise ConfigError("physics.decay", "the quantum chain needs a positive decay rate")


def _check_meanfield(cfg):
    if "rate_fac" not in cfg["scan"] and "rabi" not in cfg["scan"]:
        raise ConfigError("scan", "needs rate_fac (classical) and/or rabi (quantum)")


def _check_collapse(cfg):
    _kmc_common(cfg)
    _need(cfg, "scan", "rabi")
    _need(cfg, "output", "record_times")


_REQUIREMENTS: dict[str, Callable[[dict], None]] = {
    "blockade_growth": _check_blockade,
    "facilitation": _check_blockade,
    "seeded_facilitation": _check_seeded,
    "phase_diagram": _check_phase,
    "criticality_1d": _check_criticality,
    "deexcitation_spectrum": _check_deex,
    "qjmc_histogram": _check_qjmc,
    "meanfield_scan": _check_meanfield,
    "collapse_demo": _check_collapse,
}
