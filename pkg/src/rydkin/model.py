"""Physical parameters, derived scales and the single-atom rate kernel.

Unit conventions used throughout the package:

* lengths in micrometres, times in microseconds;
* coherent couplings (Rabi frequency, detuning, dephasing, C6) are angular
  frequencies in rad/us, so a laser detuning of "19 MHz" is ``2*pi*19``;
* incoherent rates (decay, flip rates) are plain rates in 1/us.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError, ValidationError

TWO_PI = 2.0 * math.pi

# Shift clamp in units of the dephasing rate and the relative strength at
# which the default interaction cutoff truncates the 1/r^6 tail.
VMAX_OVER_DEPHASING = 1e6
CUTOFF_TAIL_FRACTION = 1e-2


def angular(freq_mhz: float) -> float:
    """Convert an ordinary frequency in MHz to rad/us."""
    return TWO_PI * freq_mhz


@dataclass(frozen=True)
class PhysicalParams:
    """All model couplings of the driven, dephased, decaying spin gas."""

    rabi: float
    detuning: float
    dephasing: float
    decay: float = 0.0
    c6: float = 0.0
    detection_eff: float = 1.0

    def __post_init__(self):
        for name in ("rabi", "detuning", "dephasing", "decay", "c6", "detection_eff"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if self.dephasing <= 0:
            raise InvalidParameterError("dephasing must be > 0")
        if self.rabi < 0:
            raise InvalidParameterError("rabi must be >= 0")
        if self.decay < 0:
            raise InvalidParameterError("decay must be >= 0")
        if self.c6 < 0:
            raise InvalidParameterError("c6 must be >= 0 (repulsive interactions)")
        if not 0 < self.detection_eff <= 1:
            raise InvalidParameterError("detection_eff must lie in (0, 1]")

    def replace(self, **changes) -> "PhysicalParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return PhysicalParams(**values)

    @property
    def vmax(self) -> float:
        """Upper clamp applied to interaction shifts."""
        return VMAX_OVER_DEPHASING * self.dephasing

    @property
    def resonant_rate(self) -> float:
        return self.rabi**2 / (2.0 * self.dephasing)


# Parameter values quoted for the 70S experiments.
REFERENCE_PARAMS = PhysicalParams(
    rabi=angular(0.25),
    detuning=0.0,
    dephasing=angular(0.7),
    decay=1.0 / 80.0,
    c6=angular(869.7e3),
    detection_eff=0.4,
)


@dataclass(frozen=True)
class TwoPhotonParams:
    rabi_420: float
    rabi_1013: float
    detuning_6p: float


def two_photon_rabi(tp: TwoPhotonParams) -> float:
    """Effective Rabi frequency of the adiabatically eliminated 6P ladder."""
    if tp.detuning_6p == 0:
        raise InvalidParameterError("intermediate-state detuning must be non-zero")
    return abs(tp.rabi_420 * tp.rabi_1013) / (2.0 * abs(tp.detuning_6p))


@dataclass(frozen=True)
class DerivedScales:
    """Length and rate scales implied by a :class:`PhysicalParams`.

    The facilitation fields are ``None`` when the detuning is not positive.
    """

    blockade_radius: float
    facilitation_radius: Optional[float]
    facilitation_shell_width: Optional[float]
    rate_fac: float
    rate_spon: Optional[float]


def derive_scales(p: PhysicalParams) -> DerivedScales:
    blockade = (p.c6 / p.dephasing) ** (1.0 / 6.0)
    rate_fac = p.resonant_rate
    if p.detuning > 0 and p.c6 > 0:
        r_fac = (p.c6 / p.detuning) ** (1.0 / 6.0)
        width = p.dephasing * r_fac / (6.0 * p.detuning)
        rate_spon = p.rabi**2 * p.dephasing / (2.0 * p.detuning**2)
    else:
        r_fac = width = rate_spon = None
    return DerivedScales(blockade, r_fac, width, rate_fac, rate_spon)


def default_cutoff(p: PhysicalParams) -> float:
    """Distance at which a single pair shift drops to 1% of the dephasing."""
    if p.c6 <= 0:
        return 0.0
    return (p.c6 / (CUTOFF_TAIL_FRACTION * p.dephasing)) ** (1.0 / 6.0)


def flip_rate(p: PhysicalParams, shift):
    """Incoherent flip rate of one atom given its interaction shift.

    Facilitation happens when ``shift == detuning``. Accepts scalars or arrays.
    """
    eff = (p.detuning - np.minimum(shift, p.vmax)) / p.dephasing
    rate = p.resonant_rate / (1.0 + eff * eff)
    return float(rate) if np.ndim(rate) == 0 else rate


@dataclass(frozen=True)
class CloudSpec:
    """Continuum density profile.

    ``shape`` is ``"gaussian"`` (``sigma`` per axis) or ``"cylinder"``
    (uniform, axis along x, given ``radius`` and ``length``).
    """

    shape: str = "gaussian"
    sigma: tuple = (1.0, 1.0, 1.0)
    radius: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        if self.shape not in ("gaussian", "cylinder"):
            raise InvalidParameterError(f"unknown cloud shape {self.shape!r}")
        if self.shape == "gaussian":
            sig = tuple(float(s) for s in self.sigma)
            if not sig or any(s <= 0 for s in sig):
                raise InvalidParameterError("cloud sigma must be positive")
            object.__setattr__(self, "sigma", sig)
        elif self.radius <= 0 or self.length <= 0:
            raise InvalidParameterError("cylinder radius and length must be positive")


@dataclass(frozen=True)
class GasGeometry:
    mode: str
    dimension: int
    atom_count: int
    lattice_spacing: float = 1.0
    cloud: Optional[CloudSpec] = None
    boundary: str = "open"
    lattice_shape: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in ("lattice", "continuum"):
            raise InvalidParameterError(f"unknown geometry mode {self.mode!r}")
        if self.dimension not in (1, 2, 3):
            raise InvalidParameterError("dimension must be 1, 2 or 3")
        if self.atom_count < 1:
            raise InvalidParameterError("atom_count must be >= 1")
        if self.boundary not in ("open", "periodic"):
            raise InvalidParameterError(f"unknown boundary {self.boundary!r}")
        if self.mode == "lattice":
            if self.lattice_spacing <= 0:
                raise InvalidParameterError("lattice_spacing must be > 0")
            shape = self.lattice_shape
            if shape is None:
                side = round(self.atom_count ** (1.0 / self.dimension))
                shape = (side,) * self.dimension
            shape = tuple(int(s) for s in shape)
            if len(shape) != self.dimension or int(np.prod(shape)) != self.atom_count:
                raise ValidationError(
                    f"lattice shape {shape} does not hold {self.atom_count} sites in d={self.dimension}"
                )
            object.__setattr__(self, "lattice_shape", shape)
        else:
            if self.boundary == "periodic":
                raise ValidationError("periodic boundaries require lattice mode")
            if self.cloud is None:
                raise ValidationError("continuum mode needs a cloud specification")

    @property
    def box(self) -> Optional[np.ndarray]:
        """Periodic box lengths per lattice axis, or None for open systems."""
        if self.boundary != "periodic":
            return None
        return np.asarray(self.lattice_shape, dtype=float) * self.lattice_spacing


@dataclass(frozen=True)
class SpinConfiguration:
    """Occupation bits of all atoms plus their (frozen) positions.

    Positions are stored as an ``(N, 3)`` array regardless of dimension.
    """

    excited: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    box: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        exc = np.array(self.excited, dtype=np.uint8).reshape(-1)
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[1] < 3:
            pos = np.hstack([pos, np.zeros((pos.shape[0], 3 - pos.shape[1]))])
        if exc.shape[0] != pos.shape[0]:
            raise ValidationError("excited and positions must have the same length")
        if np.any(exc > 1):
            raise ValidationError("occupations must be 0 or 1")
        exc.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "excited", exc)
        object.__setattr__(self, "positions", pos)
        if self.velocities is not None:
            vel = np.array(self.velocities, dtype=float).reshape(pos.shape[0], -1)
            if vel.shape[1] < 3:
                vel = np.hstack([vel, np.zeros((vel.shape[0], 3 - vel.shape[1]))])
            vel.setflags(write=False)
            object.__setattr__(self, "velocities", vel)

    @property
    def atom_count(self) -> int:
        return self.excited.shape[0]

    @property
    def density(self) -> float:
        return float(self.excited.sum()) / self.atom_count

    def with_excited(self, excited: Sequence[int]) -> "SpinConfiguration":
        return SpinConfiguration(excited, self.positions, self.velocities, self.box)


def pair_distances(positions: np.ndarray, k: int, box: Optional[np.ndarray] = None) -> np.ndarray:
    """Distances from atom ``k`` to every atom, minimum image if ``box`` given."""
    d = positions - positions[k]
    if box is not None:
        nb = len(box)
        d[:, :nb] -= box * np.round(d[:, :nb] / box)
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def interaction_shift(cfg: SpinConfiguration, c6: float, k: int, cutoff: float,
                      vmax: float = math.inf) -> float:
    """Van der Waals shift felt by atom ``k`` from excited atoms within ``cutoff``."""
    if not 0 <= k < cfg.atom_count:
        raise InvalidParameterError(f"atom index {k} out of range")
    if cutoff <= 0:
        raise InvalidParameterError("cutoff must be > 0")
    r = pair_distances(cfg.positions, k, cfg.box)
    mask = cfg.excited.astype(bool) & (r <= cutoff)
    mask[k] = False
    if not mask.any():
        return 0.0
    with np.errstate(divide="ignore"):
        v = c6 / r[mask] ** 6
    return float(min(np.minimum(v, vmax).sum(), vmax))
