"""Kinetic Monte Carlo for the classical rate equation of a dephased Rydberg gas.

Each atom carries one flip channel driven at the Lorentzian rate of
:func:`rydkin.model.flip_rate` (evaluated with its current interaction
shift) and excited atoms additionally decay at ``params.decay``. Protocols
are lists of :class:`ProtocolSegment` executed back to back.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from ..errors import InvalidParameterError, ValidationError
from ..model import (GasGeometry, PhysicalParams, SpinConfiguration, default_cutoff,
                     flip_rate, interaction_shift, pair_distances)
from ..rng import check_seed, substream
from . import core
from .geometry import neighbor_table, sample_geometry, sample_velocities

DRIVES = {"off": core.MODE_OFF, "excitation": core.MODE_EXCITE,
          "deexcitation": core.MODE_DEEXCITE}
RANDOM_BUFFER = 4096


@dataclass(frozen=True)
class SeedInjection:
    """Seeds created at the start of a segment.

    ``mode="inject"`` excites Poisson(mean_seeds) random ground atoms at once.
    ``mode="pulse"`` instead runs the segment as a resonant pulse whose Rabi
    frequency is calibrated so that independent atoms would yield
    ``mean_seeds`` excitations on average.
    """

    mean_seeds: float
    mode: str = "inject"

    def __post_init__(self):
        if self.mean_seeds < 0:
            raise InvalidParameterError("mean_seeds must be >= 0")
        if self.mode not in ("inject", "pulse"):
            raise InvalidParameterError(f"unknown seed mode {self.mode!r}")


@dataclass(frozen=True)
class ProtocolSegment:
    duration: float
    drive: str = "excitation"
    rabi: float = 0.0
    detuning: float = 0.0
    seed_injection: Optional[SeedInjection] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidParameterError("segment duration must be > 0")
        if self.drive not in DRIVES:
            raise InvalidParameterError(f"unknown drive {self.drive!r}")
        if self.rabi < 0:
            raise InvalidParameterError("segment rabi must be >= 0")
        if self.seed_injection is not None and self.drive == "deexcitation":
            raise ValidationError("seed injection is only allowed with drive 'off' or 'excitation'")


@dataclass(frozen=True)
class KmcConfig:
    record_times: Sequence[float]
    rng_seed: int = 0
    trajectories: int = 1
    motion_enabled: bool = False
    motion_update_interval: float = 0.5
    mean_speed: float = 0.0
    cutoff: Optional[float] = None
    spontaneous: bool = True

    def __post_init__(self):
        rt = np.asarray(self.record_times, dtype=float).reshape(-1)
        if rt.size == 0:
            raise ValidationError("record_times must not be empty")
        if np.any(rt < 0) or np.any(np.diff(rt) <= 0):
            raise ValidationError("record_times must be non-negative and strictly increasing")
        object.__setattr__(self, "record_times", tuple(float(x) for x in rt))
        object.__setattr__(self, "rng_seed", check_seed(self.rng_seed))
        if self.trajectories < 1:
            raise ValidationError("trajectories must be >= 1")
        if self.motion_enabled and not self.motion_update_interval > 0:
            raise ValidationError("motion_update_interval must be > 0 when motion is enabled")
        if self.cutoff is not None and not self.cutoff > 0:
            raise ValidationError("cutoff must be > 0")


class Channel(NamedTuple):
    atom: int
    kind: str
    rate: float


@dataclass(frozen=True)
class RateTable:
    channels: tuple

    @property
    def total(self) -> float:
        return float(sum(c.rate for c in self.channels))

    def rates(self) -> np.ndarray:
        return np.array([c.rate for c in self.channels])


class StepResult(NamedTuple):
    event: Optional[Channel]
    waiting_time: float

    @property
    def frozen(self) -> bool:
        return self.event is None


def segment_params(p: PhysicalParams, seg: ProtocolSegment) -> PhysicalParams:
    return p.replace(rabi=seg.rabi, detuning=seg.detuning)


def build_channels(cfg: SpinConfiguration, p: PhysicalParams, segment: ProtocolSegment,
                   cutoff: Optional[float] = None, spontaneous: bool = True) -> RateTable:
    """Enumerate every non-zero channel of ``cfg`` under ``segment``.

    Reference implementation, one interaction sum per atom; the compiled
    engine must agree with it channel by channel.
    """
    cutoff = default_cutoff(p) if cutoff is None else cutoff
    sp = segment_params(p, segment)
    out = []
    for k in range(cfg.atom_count):
        if cutoff > 0 and p.c6 > 0:
            shift = interaction_shift(cfg, p.c6, k, cutoff, vmax=p.vmax)
            others = cfg.excited.astype(bool).copy()
            others[k] = False
            has_nbr = bool(np.any(others & (pair_distances(cfg.positions, k, cfg.box) <= cutoff)))
        else:
            shift, has_nbr = 0.0, False
        excited = bool(cfg.excited[k])
        drive_on = segment.drive == "excitation" and (spontaneous or has_nbr)
        if segment.drive == "deexcitation" and excited:
            drive_on = True
        if drive_on:
            r = flip_rate(sp, shift)
            if r > 0:
                out.append(Channel(k, "down" if excited else "up", r))
        if excited and p.decay > 0:
            out.append(Channel(k, "decay", p.decay))
    return RateTable(tuple(out))


def kmc_step(table: RateTable, rng: np.random.Generator) -> StepResult:
    """Draw the next event and its waiting time from a rate table."""
    rates = table.rates()
    total = rates.sum() if rates.size else 0.0
    if total <= 0:
        return StepResult(None, math.inf)
    dt = rng.exponential(1.0 / total)
    cum = np.cumsum(rates)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return StepResult(table.channels[min(i, len(rates) - 1)], dt)


def apply_event(cfg: SpinConfiguration, event: Channel) -> SpinConfiguration:
    exc = cfg.excited.copy()
    exc[event.atom] ^= 1
    return cfg.with_excited(exc)


class KmcState:
    """Mutable simulation state around the compiled kernels."""

    def __init__(self, positions, excited, params: PhysicalParams, cutoff: float,
                 box=None, velocities=None, spontaneous: bool = True):
        cfg = SpinConfiguration(excited, positions, velocities)
        self.positions = cfg.positions.copy()
        self.excited = cfg.excited.copy()
        self.velocities = None if velocities is None else cfg.velocities.copy()
        self.params = params
        self.cutoff = float(cutoff)
        self.box = None if box is None else np.asarray(box, dtype=float)
        self.spontaneous = bool(spontaneous)
        n = self.excited.shape[0]
        self.shift = np.zeros(n)
        self.nexc = np.zeros(n, dtype=np.int64)
        self.tree, self.leaves = core.empty_tree(n)
        self.mode, self.rabi, self.detuning = core.MODE_OFF, 0.0, 0.0
        self.uniforms = np.zeros(0)
        self.upos = 0
        self.n_events = 0
        self._build_table()
        self.refresh()

    def _build_table(self):
        self.ptr, self.idx, self.vals = neighbor_table(
            self.positions, self.cutoff, self.params.c6, self.params.vmax, self.box)

    def _kernel_args(self):
        p = self.params
        return (self.excited, self.shift, self.nexc, self.ptr, self.idx, self.vals,
                self.tree, self.leaves, self.mode, self.rabi, self.detuning, p.dephasing,
                p.decay, p.vmax, self.spontaneous)

    def set_drive(self, drive: str, rabi: float = 0.0, detuning: float = 0.0):
        self.mode, self.rabi, self.detuning = DRIVES[drive], float(rabi), float(detuning)
        self.refresh()

    def refresh(self):
        core.rebuild(*self._kernel_args())

    def flip(self, k: int):
        core.flip(int(k), *self._kernel_args())

    def rates(self) -> np.ndarray:
        return self.tree[self.leaves:self.leaves + self.excited.shape[0]].copy()

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    @property
    def count(self) -> int:
        return int(self.excited.sum())

    def advance(self, t: float, t_stop: float, rng: np.random.Generator) -> float:
        while True:
            t, self.upos, status, n = core.advance(t, t_stop, self.uniforms, self.upos,
                                                   *self._kernel_args())
            self.n_events += n
            if status != core.NEED_RANDOM:
                return t_stop
            self.uniforms = rng.random(RANDOM_BUFFER)
            self.upos = 0

    def move(self, dt: float):
        """Advance positions ballistically and rebuild all rates."""
        if self.velocities is None:
            return
        self.positions += self.velocities * dt
        self._build_table()
        self.refresh()

    def configuration(self) -> SpinConfiguration:
        return SpinConfiguration(self.excited.copy(), self.positions.copy(),
                                 None if self.velocities is None else self.velocities.copy(),
                                 self.box)


@dataclass(frozen=True)
class TrajectoryResult:
    counts: np.ndarray
    final: SpinConfiguration
    n_events: int
    stream: tuple


@dataclass(frozen=True)
class EnsembleResult:
    """Excitation counts of many trajectories at common record times."""

    record_times: np.ndarray
    counts: np.ndarray
    finals: tuple
    seed: int
    streams: tuple
    atom_count: int
    n_events: int = 0

    @property
    def trajectories(self) -> int:
        return self.counts.shape[0]

    def mean(self) -> np.ndarray:
        return self.counts.mean(axis=0)

    def stderr(self) -> np.ndarray:
        if self.trajectories < 2:
            return np.zeros(self.counts.shape[1])
        return self.counts.std(axis=0, ddof=1) / math.sqrt(self.trajectories)

    def density(self) -> np.ndarray:
        return self.mean() / self.atom_count

    def count_record(self, time_index: int = -1, label: Optional[str] = None):
        from ..stats import CountRecord
        return CountRecord(tuple(int(c) for c in self.counts[:, time_index]), label)


def _pulse_rabi(seg: ProtocolSegment, p: PhysicalParams, ground: int) -> float:
    """Resonant Rabi frequency giving ``mean_seeds`` excitations of free atoms."""
    frac = seg.seed_injection.mean_seeds / max(ground, 1)
    if frac >= 0.5:
        raise ValidationError("pulse seeding cannot excite half or more of the atoms")
    rate = -math.log(1.0 - 2.0 * frac) / (2.0 * seg.duration)
    return math.sqrt(2.0 * p.dephasing * rate)


def _initial_state(geometry, params, kcfg, rng):
    motion = kcfg.motion_enabled
    if isinstance(geometry, SpinConfiguration):
        pos, exc, vel, box = geometry.positions, geometry.excited, geometry.velocities, geometry.box
        if motion and vel is None:
            vel = sample_velocities(geometry.atom_count, kcfg.mean_speed, rng)
    elif isinstance(geometry, GasGeometry):
        pos, vel = sample_geometry(geometry, rng, motion=motion, mean_speed=kcfg.mean_speed)
        exc = np.zeros(geometry.atom_count, dtype=np.uint8)
        box = geometry.box
    else:
        raise TypeError("geometry must be a GasGeometry or a SpinConfiguration")
    if motion and box is not None:
        raise ValidationError("thermal motion is not supported with periodic boundaries")
    cutoff = kcfg.cutoff if kcfg.cutoff is not None else default_cutoff(params)
    return KmcState(pos, exc, params, cutoff, box=box, velocities=vel if motion else None,
                    spontaneous=kcfg.spontaneous)


def run_protocol(geometry: Union[GasGeometry, SpinConfiguration], params: PhysicalParams,
                 segments: Sequence[ProtocolSegment], kcfg: KmcConfig, trajectory: int = 0,
                 stream_prefix: tuple = ()) -> TrajectoryResult:
    """Simulate one trajectory and record the excitation count at ``kcfg.record_times``.

    A record time equal to a segment start is taken before that segment's
    seed injection.
    """
    if not segments:
        raise ValidationError("protocol needs at least one segment")
    ends = np.cumsum([s.duration for s in segments])
    records = np.asarray(kcfg.record_times)
    if records[-1] > ends[-1] * (1 + 1e-12):
        raise ValidationError(
            f"record time {records[-1]} exceeds protocol duration {ends[-1]}")
    stream = (*stream_prefix, trajectory)
    rng = substream(kcfg.rng_seed, *stream)
    state = _initial_state(geometry, params, kcfg, rng)

    counts = np.zeros(records.size, dtype=np.int64)
    ri = 0
    t = 0.0
    interval = kcfg.motion_update_interval
    moving = state.velocities is not None
    next_tick = interval if moving else math.inf
    last_move = 0.0

    for seg, t_end in zip(segments, ends):
        while ri < records.size and records[ri] <= t:
            counts[ri] = state.count
            ri += 1
        drive, rabi, det = seg.drive, seg.rabi, seg.detuning
        seed = seg.seed_injection
        if seed is not None and seed.mode == "pulse":
            drive, det = "excitation", 0.0
            rabi = _pulse_rabi(seg, params, state.excited.size - state.count)
        state.set_drive(drive, rabi, det)
        if seed is not None and seed.mode == "inject":
            ground = np.flatnonzero(state.excited == 0)
            n_seed = min(int(rng.poisson(seed.mean_seeds)), ground.size)
            for k in np.sort(rng.choice(ground, size=n_seed, replace=False)):
                state.flip(k)
        while t < t_end:
            stop = min(t_end, next_tick, records[ri] if ri < records.size else math.inf)
            t = state.advance(t, stop, rng)
            if moving and t >= next_tick:
                state.move(t - last_move)
                last_move = t
                next_tick = t + interval
            while ri < records.size and records[ri] <= t:
                counts[ri] = state.count
                ri += 1
    while ri < records.size:
        counts[ri] = state.count
        ri += 1
    return TrajectoryResult(counts, state.configuration(), state.n_events, stream)


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("RYDKIN_THREADS", "1") or 1)
    return max(1, int(threads))


def run_ensemble(geometry, params: PhysicalParams, segments: Sequence[ProtocolSegment],
                 kcfg: KmcConfig, threads: Optional[int] = None,
                 stream_prefix: tuple = ()) -> EnsembleResult:
    """Run ``kcfg.trajectories`` independent trajectories.

    Trajectory ``i`` always uses stream ``(*stream_prefix, i)``, so results do
    not depend on ``threads``.
    """
    def one(i):
        return run_protocol(geometry, params, segments, kcfg, i, stream_prefix)

    n = kcfg.trajectories
    threads = resolve_threads(threads)
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(i) for i in range(n)]
    counts = np.vstack([r.counts for r in results])
    return EnsembleResult(
        record_times=np.asarray(kcfg.record_times),
        counts=counts,
        finals=tuple(r.final for r in results),
        seed=kcfg.rng_seed,
        streams=tuple(r.stream for r in results),
        atom_count=results[0].final.atom_count,
        n_events=sum(r.n_events for r in results),
    )
