"""Counting statistics, growth rates, critical fits and scaling collapse."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError, InvalidParameterError, UndefinedStatisticError, ValidationError


@dataclass(frozen=True)
class CountRecord:
    """Per-shot detected counts of one experimental setting."""

    shots: tuple
    label: Optional[str] = None

    def __post_init__(self):
        arr = np.asarray(self.shots)
        if arr.size == 0:
            raise ValidationError("a count record needs at least one shot")
        if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer) or np.any(arr < 0):
            raise ValidationError("shots must be non-negative integers")
        object.__setattr__(self, "shots", tuple(int(x) for x in arr))

    def array(self) -> np.ndarray:
        return np.asarray(self.shots, dtype=np.int64)


def mandel_q(r: CountRecord, ddof: int = 0) -> float:
    """Mandel parameter ``Var(N)/<N> - 1``.

    ``ddof=0`` (default) uses the population variance of the shots.
    """
    x = r.array().astype(float)
    mean = x.mean()
    if mean <= 0:
        raise UndefinedStatisticError("Mandel Q is undefined for zero mean")
    if ddof and x.size <= ddof:
        raise UndefinedStatisticError("not enough shots for the requested ddof")
    return float(x.var(ddof=ddof) / mean - 1.0)


def thin_counts(r: CountRecord, eta: float, rng: np.random.Generator) -> CountRecord:
    """Binomial detection: every count survives with probability ``eta``."""
    if not 0 < eta <= 1:
        raise InvalidParameterError("eta must lie in (0, 1]")
    if eta == 1:
        return r
    return CountRecord(tuple(rng.binomial(r.array(), eta)), r.label)


@dataclass(frozen=True)
class BimodalParams:
    n1: float
    n2: float
    mean_seeds: float
    eta: float = 1.0

    def __post_init__(self):
        if self.n1 < 0 or not self.n2 > self.n1:
            raise InvalidParameterError("need 0 <= n1 < n2")
        if self.mean_seeds < 0:
            raise InvalidParameterError("mean_seeds must be >= 0")
        if not 0 < self.eta <= 1:
            raise InvalidParameterError("eta must lie in (0, 1]")


def seedless_probability(mean_seeds: float, eta: float = 1.0) -> float:
    """Probability that no seed is created for a detected mean of ``mean_seeds``."""
    return math.exp(-mean_seeds / eta)


def bimodal_predict(b: BimodalParams):
    """Mean and Mandel Q of the two-outcome seed model.

    With probability ``alpha`` no seed is present and the shot ends with
    ``n1`` excitations, otherwise the avalanche ends with ``n2``.
    """
    alpha = seedless_probability(b.mean_seeds, b.eta)
    mean = alpha * b.n1 + (1.0 - alpha) * b.n2
    if mean <= 0:
        raise UndefinedStatisticError("bimodal Q is undefined for zero mean")
    var = alpha * (mean - b.n1) ** 2 + (1.0 - alpha) * (mean - b.n2) ** 2
    return mean, var / mean - 1.0


class GrowthRate(NamedTuple):
    times: np.ndarray
    rate: np.ndarray
    spacing: Optional[np.ndarray]


def moving_average(y: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; windows shrink symmetrically at the edges."""
    y = np.asarray(y, dtype=float)
    n = y.size
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(y)])
    i = np.arange(n)
    h = np.minimum(half, np.minimum(i, n - 1 - i))
    return (c[i + h + 1] - c[i - h]) / (2 * h + 1)


def growth_rate_curve(times, series, n_g: int, window: int = 5,
                      volume: Optional[float] = None, dimension: int = 3) -> GrowthRate:
    """Normalised growth rate ``(dN/dt)/N_g`` of a mean excitation curve.

    The curve is smoothed with a centred moving average and differentiated
    with second-order finite differences. When ``volume`` is given, the mean
    spacing between excited atoms ``(volume/N)**(1/dimension)`` is returned
    alongside.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if window < 3 or window % 2 == 0:
        raise ValidationError("window must be odd and >= 3")
    if t.shape != y.shape or t.ndim != 1:
        raise ValidationError("times and series must be 1-D arrays of equal length")
    if y.size < window:
        raise ValidationError(f"need at least {window} points, got {y.size}")
    if n_g < 1:
        raise ValidationError("n_g must be >= 1")
    smooth = moving_average(y, window)
    rate = np.gradient(smooth, t, edge_order=2) / n_g
    spacing = None
    if volume is not None:
        with np.errstate(divide="ignore"):
            spacing = np.where(smooth > 0, (volume / np.maximum(smooth, 1e-300)) ** (1.0 / dimension),
                               np.inf)
    return GrowthRate(t, rate, spacing)


@dataclass(frozen=True)
class PowerLawFit:
    beta: float
    omega_c: float
    goodness: float
    fit_window: tuple
    amplitude: float = float("nan")
    n_points: int = 0

    def predict(self, omega):
        x = np.asarray(omega, dtype=float) - self.omega_c
        return np.where(x > 0, self.amplitude * np.abs(x) ** self.beta, 0.0)


def _loglog_fit(omega, n, omega_c, lo, hi):
    """Least-squares line through ``log n`` vs ``log(omega - omega_c)`` inside the window."""
    m = (omega > omega_c) & (omega >= lo) & (omega <= hi) & (n > 0)
    if m.sum() < 4:
        return None
    x = np.log(omega[m] - omega_c)
    y = np.log(n[m])
    slope, icpt = np.polyfit(x, y, 1)
    ss_tot = np.sum((y - y.mean()) ** 2)
    ss_res = np.sum((y - (slope * x + icpt)) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return slope, icpt, r2, m


def _golden_max(f, a, b, tol):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_powerlaw_beta(omega, n, fit_window=(0.02, 0.5), grid: int = 400) -> PowerLawFit:
    """Fit ``n ~ A |omega - omega_c|**beta`` choosing ``omega_c`` by best log-log fit.

    ``fit_window`` gives the window ``(omega_c + lo*range, omega_c + hi*range)``
    as fractions of the scanned range. Candidate critical points are scanned
    on a grid, refined by golden-section search around the best grid point
    and finally polished by nonlinear least squares on the selected points.
    """
    omega = np.asarray(omega, dtype=float)
    n = np.asarray(n, dtype=float)
    if omega.shape != n.shape or omega.ndim != 1:
        raise ValidationError("omega and n must be 1-D arrays of equal length")
    if omega.size < 8:
        raise ValidationError("need at least 8 points spanning the transition")
    order = np.argsort(omega)
    omega, n = omega[order], n[order]
    span = omega[-1] - omega[0]
    lo_f, hi_f = fit_window

    def window(oc):
        return oc + lo_f * span, oc + hi_f * span

    def score(oc):
        res = _loglog_fit(omega, n, oc, *window(oc))
        return -np.inf if res is None else res[2]

    # the whole window has to fit inside the scanned range
    top = omega[-1] - hi_f * span
    if top <= omega[0]:
        raise FitError("fit window is wider than the scanned range")
    cands = np.linspace(omega[0], top, grid)
    scores = np.array([score(c) for c in cands])
    if not np.isfinite(scores).any():
        raise FitError("no candidate critical point leaves 4 usable points in the window")
    i = int(np.argmax(scores))
    step = cands[1] - cands[0]
    a, b = max(omega[0], cands[i] - step), min(top, cands[i] + step)
    oc = _golden_max(score, a, b, tol=1e-10 * max(span, 1e-300))
    if score(oc) < scores[i]:
        oc = cands[i]
    slope, icpt, r2, m = _loglog_fit(omega, n, oc, *window(oc))

    # polish on the selected points, keeping omega_c below all of them
    x, y = omega[m], np.log(n[m])

    def resid(theta):
        return theta[0] + theta[1] * np.log(x - theta[2]) - y

    upper = x.min() - 1e-12 * max(span, 1.0)
    if oc < min(upper, top):
        try:
            sol = least_squares(resid, [icpt, slope, oc], xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                bounds=([-np.inf, -np.inf, omega[0]], [np.inf, np.inf, min(upper, top)]))
            cand = _loglog_fit(omega, n, sol.x[2], *window(sol.x[2]))
            if cand is not None and np.array_equal(cand[3], m) and cand[2] >= r2:
                oc = float(sol.x[2])
                slope, icpt, r2, m = cand
        except ValueError:
            pass
    return PowerLawFit(beta=float(slope), omega_c=float(oc), goodness=float(max(r2, 0.0)),
                       fit_window=window(oc), amplitude=float(math.exp(icpt)),
                       n_points=int(m.sum()))


class Curve(NamedTuple):
    times: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray] = None
    rabi: Optional[float] = None


@dataclass(frozen=True)
class CollapseResult:
    max_deviation: float
    max_z: float
    grid: np.ndarray


@dataclass(frozen=True)
class ScalingResult:
    exponents: tuple
    expected: float


def rescaled_times(curve: Curve, dephasing: float) -> np.ndarray:
    return np.asarray(curve.times, dtype=float) * curve.rabi**2 / dephasing


def collapse_deviation(curves: Sequence[Curve], dephasing: float) -> CollapseResult:
    """Maximum pairwise mismatch after rescaling time by ``rabi**2/dephasing``.

    Curves are compared on the rescaled grid of the first curve restricted to
    the common range, interpolating linearly. ``max_z`` is the deviation in
    units of the combined standard error (``nan`` without errors).
    """
    if len(curves) < 2:
        raise ValidationError("need at least two curves")
    taus = [rescaled_times(c, dephasing) for c in curves]
    lo = max(t.min() for t in taus)
    hi = min(t.max() for t in taus)
    grid = taus[0][(taus[0] >= lo - 1e-12 * abs(lo)) & (taus[0] <= hi + 1e-12 * abs(hi))]
    vals = [np.interp(grid, t, c.values) for t, c in zip(taus, curves)]
    errs = None
    if all(c.stderr is not None for c in curves):
        errs = [np.interp(grid, t, c.stderr) for t, c in zip(taus, curves)]
    dev, z = 0.0, 0.0
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            d = np.abs(vals[i] - vals[j])
            dev = max(dev, float(d.max()))
            if errs is not None:
                se = np.sqrt(errs[i] ** 2 + errs[j] ** 2)
                with np.errstate(divide="ignore", invalid="ignore"):
                    zz = np.where(se > 0, d / se, np.where(d > 0, np.inf, 0.0))
                z = max(z, float(zz.max()))
    return CollapseResult(dev, z if errs is not None else float("nan"), grid)


def scaling_exponent(times, values, t_window=None) -> float:
    """Slope of ``log N`` against ``log t`` over ``t_window``."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    m = (t > 0) & (y > 0)
    if t_window is not None:
        m &= (t >= t_window[0]) & (t <= t_window[1])
    if m.sum() < 2:
        raise FitError("need two positive points inside the window")
    return float(np.polyfit(np.log(t[m]), np.log(y[m]), 1)[0])


def collapse_check(curves: Sequence[Curve], mode: str = "incoherent", dephasing: float = None,
                   t_window=None, dimension: int = 1):
    """Collapse metric for a curve family.

    ``mode="incoherent"`` returns a :class:`CollapseResult` for the
    ``rabi**2/dephasing`` time rescaling. ``mode="blockade"`` fits the
    growth exponent of each curve and returns a :class:`ScalingResult`
    carrying the expected ``d/(12+d)``.
    """
    if mode == "incoherent":
        if dephasing is None:
            raise ValidationError("incoherent collapse needs the dephasing rate")
        return collapse_deviation(curves, dephasing)
    if mode == "blockade":
        exps = tuple(scaling_exponent(c.times, c.values, t_window) for c in curves)
        return ScalingResult(exps, dimension / (12.0 + dimension))
    raise ValidationError(f"unknown collapse mode {mode!r}")
