"""Homogeneous mean-field solvers.

The classical rate equation for the excitation density ``n`` reads

    dn/dt = G_fac n (1 - 2n) + G_spon (1 - n)(1 - 2n) - kappa n

and its stationary states are the roots of a quadratic in ``n``. The
quantum variant treats a single site driven by the coherent field of its
two neighbours, which yields the stationary condition
``2 n**2 - n + kappa**2 / (16 rabi**2) = 0`` next to the absorbing state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from .errors import IntegrationError, InvalidParameterError

RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class MeanFieldParams:
    rate_fac: float
    rate_spon: float = 0.0
    decay: float = 0.0

    def __post_init__(self):
        for name in ("rate_fac", "rate_spon", "decay"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParameterError(f"{name} must be finite and >= 0")
        if self.rate_fac + self.rate_spon <= 0:
            raise InvalidParameterError("rate_fac + rate_spon must be positive")


@dataclass(frozen=True)
class StationarySolution:
    density: float
    stable: bool


def mf_rhs(n, p: MeanFieldParams):
    """Right-hand side of the classical mean-field equation."""
    return p.rate_fac * n * (1 - 2 * n) + p.rate_spon * (1 - n) * (1 - 2 * n) - p.decay * n


def mf_slope(n, p: MeanFieldParams):
    """Analytic derivative of :func:`mf_rhs` with respect to ``n``."""
    return p.rate_fac * (1 - 4 * n) + p.rate_spon * (4 * n - 3) - p.decay


def _coefficients(p: MeanFieldParams):
    # a n^2 + b n + c
    a = 2.0 * (p.rate_spon - p.rate_fac)
    b = p.rate_fac - 3.0 * p.rate_spon - p.decay
    c = p.rate_spon
    return a, b, c


def _quadratic_roots(a, b, c):
    """Real roots of ``a x^2 + b x + c`` without cancellation; double roots appear once."""
    if a == 0.0:
        if b == 0.0:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    scale = max(b * b, abs(4.0 * a * c), 1e-300)
    if disc < 0.0:
        if disc > -1e-14 * scale:
            disc = 0.0
        else:
            return []
    if disc == 0.0:
        return [-b / (2.0 * a)]
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [q / a]
    roots.append(c / q if q != 0.0 else -b / a - q / a)
    return sorted(roots)


def _polish(f, df, x, tol=RESIDUAL_TOL, maxiter=50):
    for _ in range(maxiter):
        fx = f(x)
        if abs(fx) < tol:
            break
        d = df(x)
        if d == 0.0:
            break
        step = fx / d
        x -= step
        if abs(step) < 1e-17:
            break
    return x


def mf_stationary(p: MeanFieldParams) -> List[StationarySolution]:
    """All stationary densities in ``[0, 1]`` with their linear stability.

    With ``rate_spon == 0`` the absorbing root ``n = 0`` is returned exactly,
    together with ``(1 - kappa/rate_fac)/2`` when that lies above zero.
    """
    if p.rate_spon == 0.0:
        sols = [StationarySolution(0.0, p.rate_fac < p.decay)]
        if p.rate_fac > p.decay:
            n = 0.5 * (1.0 - p.decay / p.rate_fac)
            sols.append(StationarySolution(n, True))
        return sols
    a, b, c = _coefficients(p)
    out = []
    for r in _quadratic_roots(a, b, c):
        r = _polish(lambda x: mf_rhs(x, p), lambda x: mf_slope(x, p), r)
        if -1e-14 <= r <= 1.0 + 1e-14:
            r = min(max(r, 0.0), 1.0)
            out.append(StationarySolution(float(r), bool(mf_slope(r, p) < 0.0)))
    return out


def mf_trajectory(n0: float, p: MeanFieldParams, t_grid, rtol: float = 1e-9,
                  atol: float = 1e-12) -> np.ndarray:
    """Integrate the mean-field equation with an embedded Runge-Kutta pair.

    The solution is not clamped; leaving ``[0, 1]`` beyond rounding raises
    :class:`IntegrationError`.
    """
    if not 0.0 <= n0 <= 1.0:
        raise InvalidParameterError("n0 must lie in [0, 1]")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) < 0):
        raise InvalidParameterError("t_grid must be a non-decreasing 1-D array")
    if t.size == 1 or t[-1] == t[0]:
        return np.full(t.shape, float(n0))
    sol = solve_ivp(lambda _t, y: mf_rhs(y, p), (t[0], t[-1]), [n0], method="RK45",
                    t_eval=t, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"mean-field integration failed: {sol.message} "
                               f"(nfev={sol.nfev}, t_reached={sol.t[-1] if sol.t.size else t[0]})")
    y = sol.y[0]
    if np.any(y < -1e-9) or np.any(y > 1 + 1e-9):
        raise IntegrationError("mean-field density left [0, 1]")
    return y


def qmf_stationary(rabi: float, decay: float) -> List[StationarySolution]:
    """Stationary densities of the quantum facilitation mean field.

    The absorbing state is always present. Above ``rabi = decay/sqrt(2)``
    two more branches ``(1 +- sqrt(1 - decay**2/(2 rabi**2)))/4`` appear, the
    upper one stable. At threshold they merge at 1/4, which is returned once
    and flagged marginal (not stable).
    """
    if not decay > 0:
        raise InvalidParameterError("decay must be positive")
    if not rabi >= 0:
        raise InvalidParameterError("rabi must be >= 0")
    sols = [StationarySolution(0.0, True)]
    if rabi == 0.0:
        return sols
    c = decay**2 / (16.0 * rabi**2)
    roots = _quadratic_roots(2.0, -1.0, c)
    if len(roots) == 1:
        sols.append(StationarySolution(roots[0], False))
    elif len(roots) == 2:
        lo, hi = (_polish(lambda x: 2 * x * x - x + c, lambda x: 4 * x - 1, r) for r in roots)
        sols.append(StationarySolution(lo, False))
        sols.append(StationarySolution(hi, True))
    return sols


def qmf_critical_rabi(decay: float) -> float:
    return decay / math.sqrt(2.0)


def bloch_mf_rhs(s, rabi: float, decay: float):
    """Single-site Bloch equations under the self-consistent neighbour field.

    ``s = (sx, sy, sz)`` with ``n = (1 + sz)/2``. Each of the two neighbours
    contributes ``rabi * n`` to the effective drive ``H = (W/2) sigma_x`` with
    ``W = 4 rabi n``.
    """
    sx, sy, sz = s
    n = 0.5 * (1.0 + sz)
    w = 4.0 * rabi * n
    return np.array([
        -0.5 * decay * sx,
        -w * sz - 0.5 * decay * sy,
        w * sy - decay * (1.0 + sz),
    ])


def bloch_fixed_point(rabi: float, decay: float, n_guess: float):
    """Numerical fixed point of :func:`bloch_mf_rhs` near density ``n_guess``.

    Returns ``(density, max_real_eigenvalue)`` from the finite-difference
    Jacobian. This is an independent check of :func:`qmf_stationary`.
    """
    sz0 = 2.0 * n_guess - 1.0
    w = 4.0 * rabi * n_guess
    sy0 = decay * (1.0 + sz0) / w if w > 0 else 0.0
    x = fsolve(bloch_mf_rhs, [0.0, sy0, sz0], args=(rabi, decay), xtol=1e-14, full_output=True)[0]
    h = 1e-7
    jac = np.empty((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        jac[:, i] = (bloch_mf_rhs(x + e, rabi, decay) - bloch_mf_rhs(x - e, rabi, decay)) / (2 * h)
    return 0.5 * (1.0 + x[2]), float(np.max(np.linalg.eigvals(jac).real))
