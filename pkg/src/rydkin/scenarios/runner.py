"""Scenario dispatch, per-kind analysis and result serialisation."""
from __future__ import annotations

import csv
import hashlib
import io
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .. import __version__
from ..errors import ConfigError, FitError, OutputError, UndefinedStatisticError
from ..kmc import KmcConfig, ProtocolSegment, SeedInjection, run_ensemble
from ..meanfield import MeanFieldParams, mf_stationary, qmf_critical_rabi, qmf_stationary
from ..model import CloudSpec, GasGeometry, PhysicalParams, SpinConfiguration
from ..kmc.geometry import lattice_positions
from ..qjmc import ChainModel, qjmc_histogram
from ..rng import substream
from ..stats import (BimodalParams, CountRecord, Curve, bimodal_predict, collapse_check,
                     fit_powerlaw_beta, growth_rate_curve, mandel_q, scaling_exponent, thin_counts)
from .config import parse_config, physical_params

# stream key reserved for detection thinning, far above any trajectory index
THINNING_STREAM = 2**40

OBSERVABLES = {
    "blockade_growth": ("counts", "growth_rate", "exponent"),
    "facilitation": ("counts", "histogram"),
    "seeded_facilitation": ("statistics", "bimodal"),
    "phase_diagram": ("counts",),
    "criticality_1d": ("timeseries", "density", "fit"),
    "deexcitation_spectrum": ("spectrum", "dips"),
    "qjmc_histogram": ("histogram", "maxima"),
    "meanfield_scan": ("classical", "quantum"),
    "collapse_demo": ("curves", "collapse"),
}


@dataclass
class Table:
    observable: str
    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table {self.observable} has {len(self.columns)}")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


@dataclass
class ResultBundle:
    config: dict
    tables: list
    notes: list = field(default_factory=list)
    wall_clock: float = 0.0
    threads: int = 1

    @property
    def name(self) -> str:
        return self.config["scenario"]["name"]

    def table(self, observable: str) -> Table:
        for t in self.tables:
            if t.observable == observable:
                return t
        raise KeyError(observable)


# --------------------------------------------------------------------------- builders

def _geometry(cfg) -> GasGeometry:
    g = cfg["geometry"]
    cloud = None
    if "cloud" in g:
        c = g["cloud"]
        if c["shape"] == "gaussian":
            cloud = CloudSpec("gaussian", sigma=tuple(c["sigma"]["values"]))
        else:
            cloud = CloudSpec("cylinder", radius=c["radius"]["value"], length=c["length"]["value"])
    shape = tuple(g["lattice_shape"]) if "lattice_shape" in g else None
    return GasGeometry(g["mode"], g["dimension"], g["atom_count"], g["lattice_spacing"]["value"],
                       cloud=cloud, boundary=g["boundary"], lattice_shape=shape)


def _kmc_geometry(cfg):
    """The geometry handed to the engine, with initial excitations if requested."""
    geo = _geometry(cfg)
    init = cfg["geometry"].get("initial")
    if not init:
        return geo
    if geo.mode != "lattice":
        raise ConfigError("geometry.initial", "initial excitations need lattice mode")
    exc = np.zeros(geo.atom_count, dtype=np.uint8)
    for i, k in enumerate(init):
        if k >= geo.atom_count:
            raise ConfigError(f"geometry.initial[{i}]", "site index outside the lattice")
        exc[k] = 1
    return SpinConfiguration(exc, lattice_positions(geo), box=geo.box)


def _segments(cfg, p: PhysicalParams, rabi=None, detuning=None, mean_seeds=None,
              dark_time=None, time_scale=1.0):
    """Protocol segments with scan values applied to the segments of matching role."""
    segs = []
    for s in cfg["protocol"]:
        role = s.get("role")
        r = s["rabi"]["value"] if "rabi" in s else p.rabi
        d = s["detuning"]["value"] if "detuning" in s else p.detuning
        dur = s["duration"]["value"]
        if role in ("drive", "probe"):
            r = r if rabi is None else rabi
            d = d if detuning is None else detuning
        if role == "dark" and dark_time is not None:
            dur = dark_time
        seeds = None
        if "seeds" in s:
            mean = s["seeds"]["mean"]
            if role == "seed" and mean_seeds is not None:
                mean = mean_seeds
            seeds = SeedInjection(mean, s["seeds"]["mode"])
        segs.append(ProtocolSegment(dur * time_scale, s["drive"], r, d, seeds))
    return segs


def _record_times(cfg, segs, scale=1.0):
    out = cfg["output"]
    if "record_times" in out:
        return np.asarray(out["record_times"]["values"]) * scale
    return np.array([sum(s.duration for s in segs)])


def _kmc_config(cfg, record_times, motion=None, stream_seed=None) -> KmcConfig:
    g = cfg["geometry"]
    m = g["motion"]
    enabled = m["enabled"] if motion is None else motion
    return KmcConfig(record_times, rng_seed=cfg["scenario"]["seed"] if stream_seed is None else stream_seed,
                     trajectories=cfg["scenario"]["trajectories"], motion_enabled=enabled,
                     motion_update_interval=m["update_interval"]["value"],
                     mean_speed=m["mean_speed"]["value"],
                     cutoff=g["cutoff"]["value"] if "cutoff" in g else None,
                     spontaneous=cfg["physics"]["spontaneous"])


def _safe_q(record: CountRecord) -> float:
    try:
        return mandel_q(record)
    except UndefinedStatisticError:
        return math.nan


# --------------------------------------------------------------------------- kinds

def _run_blockade(cfg, p, threads, notes):
    segs = _segments(cfg, p)
    rt = _record_times(cfg, segs)
    ens = run_ensemble(_kmc_geometry(cfg), p, segs, _kmc_config(cfg, rt), threads)
    mean, se = ens.mean(), ens.stderr()
    counts = Table("counts", ("time", "mean", "stderr", "density"))
    for i, t in enumerate(rt):
        counts.add(t, mean[i], se[i], mean[i] / ens.atom_count)
    tables = [counts]
    geo = cfg["geometry"]
    growth = Table("growth_rate", ("time", "rate", "spacing"))
    if rt.size >= 5:
        volume = None
        if geo["mode"] == "lattice":
            volume = ens.atom_count * geo["lattice_spacing"]["value"] ** geo["dimension"]
        g = growth_rate_curve(rt, mean, ens.atom_count, volume=volume, dimension=geo["dimension"])
        spacing = g.spacing if g.spacing is not None else np.full(rt.size, math.nan)
        for i, t in enumerate(rt):
            growth.add(t, g.rate[i], spacing[i])
    else:
        notes.append("growth_rate needs at least 5 record times")
    tables.append(growth)
    expo = Table("exponent", ("t_lo", "t_hi", "exponent", "expected"))
    win = cfg["output"].get("exponent_window")
    win = tuple(win["values"]) if win else (float(rt[rt > 0][0]) if np.any(rt > 0) else 0.0, float(rt[-1]))
    try:
        expo.add(win[0], win[1], scaling_exponent(rt, mean, win), geo["dimension"] / (12.0 + geo["dimension"]))
    except FitError as exc:
        notes.append(f"exponent: {exc}")
    tables.append(expo)
    return tables


def _run_facilitation(cfg, p, threads, notes):
    segs = _segments(cfg, p)
    rt = _record_times(cfg, segs)
    seed = cfg["scenario"]["seed"]
    ens = run_ensemble(_kmc_geometry(cfg), p, segs, _kmc_config(cfg, rt), threads)
    mean, se = ens.mean(), ens.stderr()
    thin_rng = substream(seed, THINNING_STREAM)
    counts = Table("counts", ("time", "mean", "stderr", "q", "q_observed"))
    for i, t in enumerate(rt):
        rec = ens.count_record(i)
        counts.add(t, mean[i], se[i], _safe_q(rec), _safe_q(thin_counts(rec, p.detection_eff, thin_rng)))
    hist = Table("histogram", ("count", "probability"))
    final = ens.counts[:, -1]
    values, freq = np.unique(final, return_counts=True)
    for v, f in zip(values, freq):
        hist.add(int(v), f / final.size)
    return [counts, hist]


def _run_seeded(cfg, p, threads, notes):
    seeds = cfg["scan"]["mean_seeds"]
    seed = cfg["scenario"]["seed"]
    stats = Table("statistics", ("mean_seeds", "mean", "stderr", "q", "q_observed"))
    means = []
    for i, ms in enumerate(seeds):
        segs = _segments(cfg, p, mean_seeds=ms)
        rt = _record_times(cfg, segs)[-1:]
        ens = run_ensemble(_kmc_geometry(cfg), p, segs, _kmc_config(cfg, rt), threads, stream_prefix=(i,))
        rec = ens.count_record(-1)
        thin = thin_counts(rec, p.detection_eff, substream(seed, THINNING_STREAM, i))
        stats.add(ms, ens.mean()[-1], ens.stderr()[-1], _safe_q(rec), _safe_q(thin))
        means.append(ens.mean()[-1])
    # two-level model: n1 without seeds, n2 at the largest seed number
    order = np.argsort(seeds)
    n1 = means[order[0]] if seeds[order[0]] == 0 else 0.0
    n2 = means[order[-1]]
    bim = Table("bimodal", ("mean_seeds", "n1", "n2", "mean", "q", "q_observed"))
    if n2 > n1:
        for ms in seeds:
            try:
                m, q = bimodal_predict(BimodalParams(n1, n2, ms))
            except UndefinedStatisticError:
                m, q = 0.0, math.nan
            # detection thinning scales Q by the efficiency
            bim.add(ms, n1, n2, m, q, p.detection_eff * q)
    else:
        notes.append("bimodal: largest seed number does not raise the mean count")
    return [stats, bim]


def _run_phase(cfg, p, threads, notes):
    table = Table("counts", ("rabi", "detuning", "time", "mean", "stderr"))
    idx = 0
    for rabi in cfg["scan"]["rabi"]["values"]:
        for det in cfg["scan"]["detuning"]["values"]:
            segs = _segments(cfg, p, rabi=rabi, detuning=det)
            rt = _record_times(cfg, segs)
            ens = run_ensemble(_kmc_geometry(cfg), p, segs, _kmc_config(cfg, rt), threads,
                               stream_prefix=(idx,))
            mean, se = ens.mean(), ens.stderr()
            for i, t in enumerate(rt):
                table.add(rabi, det, t, mean[i], se[i])
            idx += 1
    return [table]


def stationary_density(counts: np.ndarray, times: np.ndarray, atoms: int, average_from: float):
    """Time and ensemble average of the density over the late part of a run.

    Returns ``(density, stderr, surviving_fraction)``; the error uses the
    scatter of the per-trajectory time averages.
    """
    late = times >= average_from * times[-1]
    per_traj = counts[:, late].mean(axis=1) / atoms
    se = per_traj.std(ddof=1) / math.sqrt(per_traj.size) if per_traj.size > 1 else 0.0
    return float(per_traj.mean()), float(se), float(np.mean(counts[:, -1] > 0))


def _run_criticality(cfg, p, threads, notes):
    rabis = cfg["scan"]["rabi"]["values"]
    avg_from = cfg["output"].get("average_from", 0.5)
    ts = Table("timeseries", ("rabi", "time", "density"))
    dens = Table("density", ("rabi", "density", "stderr", "surviving"))
    values = []
    for i, rabi in enumerate(rabis):
        segs = _segments(cfg, p, rabi=rabi)
        rt = _record_times(cfg, segs)
        ens = run_ensemble(_kmc_geometry(cfg), p, segs, _kmc_config(cfg, rt), threads, stream_prefix=(i,))
        for j, t in enumerate(rt):
            ts.add(rabi, t, ens.density()[j])
        d, se, surv = stationary_density(ens.counts, rt, ens.atom_count, avg_from)
        dens.add(rabi, d, se, surv)
        values.append(d)
    fit = Table("fit", ("beta", "omega_c", "goodness", "window_lo", "window_hi", "n_points"))
    window = tuple(cfg["output"].get("fit_window", (0.02, 0.5)))
    try:
        f = fit_powerlaw_beta(np.asarray(rabis), np.asarray(values), fit_window=window)
        fit.add(f.beta, f.omega_c, f.goodness, f.fit_window[0], f.fit_window[1], f.n_points)
    except (FitError, ValueError) as exc:
        notes.append(f"fit: {exc}")
    return [ts, dens, fit]


def _run_deexcitation(cfg, p, threads, notes):
    variants = cfg["scan"].get("variants") or [{"name": "default", "motion": cfg["geometry"]["motion"]["enabled"]}]
    dets = cfg["scan"]["detuning"]["values"]
    spec = Table("spectrum", ("variant", "detuning", "remaining_fraction", "stderr", "before"))
    dips = Table("dips", ("variant", "detuning", "depth"))
    probe_idx = [k for k, s in enumerate(cfg["protocol"]) if s.get("role") == "probe"][0]
    for j, v in enumerate(variants):
        dark = v["dark_time"]["value"] if "dark_time" in v else None
        frac = []
        for i, det in enumerate(dets):
            segs = _segments(cfg, p, detuning=det, dark_time=dark)
            t_probe = sum(s.duration for s in segs[:probe_idx])
            t_end = t_probe + segs[probe_idx].duration
            rt = np.array([t_probe, t_end])
            ens = run_ensemble(_kmc_geometry(cfg), p, segs[:probe_idx + 1],
                               _kmc_config(cfg, rt, motion=v["motion"]), threads, stream_prefix=(j, i))
            before, after = ens.counts[:, 0].astype(float), ens.counts[:, 1].astype(float)
            if before.mean() == 0:
                raise UndefinedStatisticError("no excitations before the probe; the remaining fraction is undefined")
            r = after.mean() / before.mean()
            n = before.size
            se = (after - r * before).std(ddof=1) / math.sqrt(n) / before.mean() if n > 1 else 0.0
            spec.add(v["name"], det, r, se, before.mean())
            frac.append(r)
        for i in range(1, len(dets) - 1):
            if frac[i] < frac[i - 1] and frac[i] < frac[i + 1]:
                dips.add(v["name"], dets[i], 0.5 * (frac[i - 1] + frac[i + 1]) - frac[i])
    return [spec, dips]


def _run_qjmc(cfg, p, threads, notes):
    g = cfg["geometry"]
    t_end = sum(s["duration"]["value"] for s in cfg["protocol"])
    out = cfg["output"]
    bins = out.get("bins", g["atom_count"])
    init = g.get("initial")
    hist = Table("histogram", ("rabi", "bin_lo", "bin_hi", "probability"))
    maxima = Table("maxima", ("rabi", "n_maxima", "lowest_bin_is_maximum"))
    for i, rabi in enumerate(cfg["scan"]["rabi"]["values"]):
        m = ChainModel(g["atom_count"], rabi, p.decay, g["boundary"])
        h = qjmc_histogram(m, t_end, cfg["scenario"]["trajectories"], cfg["scenario"]["seed"], bins=bins,
                           samples=out.get("samples", 200), initial=init, threads=threads,
                           stream_prefix=(i,))
        for k, prob in enumerate(h.probabilities):
            hist.add(rabi, h.edges[k], h.edges[k + 1], prob)
        mx = h.local_maxima()
        maxima.add(rabi, len(mx), int(0 in mx))
    return [hist, maxima]


def _run_meanfield(cfg, p, threads, notes):
    scan = cfg["scan"]
    tables = []
    classical = Table("classical", ("rate_fac", "rate_spon", "decay", "density", "stable"))
    if "rate_fac" in scan:
        spons = scan["rate_spon"]["values"] if "rate_spon" in scan else [0.0]
        for gs in spons:
            for gf in scan["rate_fac"]["values"]:
                for s in mf_stationary(MeanFieldParams(gf, gs, p.decay)):
                    classical.add(gf, gs, p.decay, s.density, int(s.stable))
    tables.append(classical)
    quantum = Table("quantum", ("rabi", "decay", "density", "stable", "critical_rabi"))
    if "rabi" in scan:
        oc = qmf_critical_rabi(p.decay)
        for rabi in scan["rabi"]["values"]:
            for s in qmf_stationary(rabi, p.decay):
                quantum.add(rabi, p.decay, s.density, int(s.stable), oc)
    tables.append(quantum)
    return tables


def _run_collapse(cfg, p, threads, notes):
    rabis = cfg["scan"]["rabi"]["values"]
    ref = rabis[0]
    curves_t = Table("curves", ("rabi", "time", "scaled_time", "mean", "stderr"))
    curves = []
    for i, rabi in enumerate(rabis):
        # equal grids in t*rabi^2/dephasing for every curve
        scale = (ref / rabi) ** 2
        segs = _segments(cfg, p, rabi=rabi, time_scale=scale)
        rt = _record_times(cfg, segs, scale)
        ens = run_ensemble(_kmc_geometry(cfg), p, segs, _kmc_config(cfg, rt), threads, stream_prefix=(i,))
        mean, se = ens.mean(), ens.stderr()
        for j, t in enumerate(rt):
            curves_t.add(rabi, t, t * rabi**2 / p.dephasing, mean[j], se[j])
        curves.append(Curve(rt, mean, se, rabi))
    res = collapse_check(curves, mode="incoherent", dephasing=p.dephasing)
    collapse = Table("collapse", ("max_deviation", "max_z"))
    collapse.add(res.max_deviation, res.max_z)
    return [curves_t, collapse]


_RUNNERS = {
    "blockade_growth": _run_blockade,
    "facilitation": _run_facilitation,
    "seeded_facilitation": _run_seeded,
    "phase_diagram": _run_phase,
    "criticality_1d": _run_criticality,
    "deexcitation_spectrum": _run_deexcitation,
    "qjmc_histogram": _run_qjmc,
    "meanfield_scan": _run_meanfield,
    "collapse_demo": _run_collapse,
}


def apply_overrides(cfg: dict, seed: Optional[int] = None, trajectories: Optional[int] = None) -> dict:
    """Canonical config with command-line overrides, re-validated."""
    doc = {k: v for k, v in cfg.items()}
    doc["scenario"] = dict(cfg["scenario"])
    if seed is not None:
        doc["scenario"]["seed"] = seed
    if trajectories is not None:
        doc["scenario"]["trajectories"] = trajectories
    return parse_config(doc)


def run_scenario(scenario: Any, *, seed: Optional[int] = None, trajectories: Optional[int] = None,
                 threads: Optional[int] = None) -> ResultBundle:
    """Run a scenario document (mapping, path or canonical config)."""
    from ..kmc.engine import resolve_threads
    cfg = apply_overrides(parse_config(scenario), seed, trajectories)
    kind = cfg["scenario"]["kind"]
    wanted = cfg["output"].get("observables")
    if wanted is not None:
        for i, name in enumerate(wanted):
            if name not in OBSERVABLES[kind]:
                raise ConfigError(f"output.observables[{i}]",
                                  f"{kind} provides {', '.join(OBSERVABLES[kind])}; got {name!r}")
    p = physical_params(cfg["physics"])
    nthreads = resolve_threads(threads)
    notes: list = []
    t0 = time.perf_counter()
    tables = _RUNNERS[kind](cfg, p, nthreads, notes)
    wall = time.perf_counter() - t0
    if wanted is not None:
        tables = [t for t in tables if t.observable in wanted]
    return ResultBundle(cfg, tables, notes, wall, nthreads)


# --------------------------------------------------------------------------- output

def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def _write(path: Path, text: str):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None


def serialize_results(bundle: ResultBundle, out_dir) -> list:
    """Write one CSV per table plus ``manifest.yaml``; return the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror}") from None
    written, checksums = [], {}
    for t in bundle.tables:
        path = out / f"{bundle.name}__{t.observable}.csv"
        text = table_csv(t)
        _write(path, text)
        checksums[path.name] = "sha256:" + hashlib.sha256(text.encode()).hexdigest()
        written.append(path)
    cfg = bundle.config
    manifest = {
        "scenario": bundle.name,
        "kind": cfg["scenario"]["kind"],
        "seed": cfg["scenario"]["seed"],
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": bundle.threads,
        "wall_clock_seconds": round(bundle.wall_clock, 6),
        "outputs": checksums,
        "notes": list(bundle.notes),
        "resolved": cfg,
    }
    path = out / "manifest.yaml"
    _write(path, yaml.safe_dump(manifest, sort_keys=False, default_flow_style=None))
    written.append(path)
    return written
