"""Dense master-equation integration for a handful of two-level atoms.

Basis states are integers ``b`` whose bit ``k`` is the occupation of atom
``k``. The full model uses

    H = (rabi/2) sum_k sx_k - detuning sum_k n_k + sum_{k<m} V_km n_k n_m

so that an interaction shift equal to the detuning is resonant, matching the
rate convention of the classical engine. Decay acts through
``sqrt(kappa) s-_k`` and dephasing through ``sqrt(2 gamma) n_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CapacityError, IntegrationError, InvalidParameterError
from .model import PhysicalParams, pair_distances

MAX_DENSE_SITES = 6


def _bits(n: int) -> np.ndarray:
    b = np.arange(2**n)
    return ((b[:, None] >> np.arange(n)[None, :]) & 1).astype(float)


def sigma_x(n: int, k: int) -> np.ndarray:
    d = 2**n
    m = np.zeros((d, d))
    b = np.arange(d)
    m[b ^ (1 << k), b] = 1.0
    return m


def sigma_minus(n: int, k: int) -> np.ndarray:
    d = 2**n
    m = np.zeros((d, d))
    b = np.arange(d)
    up = (b >> k) & 1 == 1
    m[b[up] ^ (1 << k), b[up]] = 1.0
    return m


def number_op(n: int, k: int) -> np.ndarray:
    return np.diag(_bits(n)[:, k])


def basis_state(n: int, bitmask: int) -> np.ndarray:
    rho = np.zeros((2**n, 2**n), dtype=complex)
    rho[bitmask, bitmask] = 1.0
    return rho


def check_dense_capacity(n: int):
    if n > MAX_DENSE_SITES:
        raise CapacityError(f"dense evolution supports at most {MAX_DENSE_SITES} atoms, got {n}")
    if n < 1:
        raise InvalidParameterError("need at least one atom")


@dataclass(frozen=True)
class LindbladResult:
    times: np.ndarray
    rhos: np.ndarray
    site_density: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return self.site_density.mean(axis=1)


def evolve_lindblad(h: np.ndarray, c_ops: Sequence[np.ndarray], rho0: np.ndarray, t_grid,
                    rtol: float = 1e-10, atol: float = 1e-12, method: str = "DOP853"):
    """Integrate ``d rho/dt = -i[H, rho] + sum_L (L rho L^+ - {L^+L, rho}/2)``.

    Returns the density matrices at ``t_grid`` with shape ``(T, d, d)``.
    """
    h = np.asarray(h, dtype=complex)
    d = h.shape[0]
    c_ops = [np.asarray(c, dtype=complex) for c in c_ops]
    heff = h - 0.5j * sum((c.conj().T @ c for c in c_ops), np.zeros((d, d), dtype=complex))
    heff_dag = heff.conj().T
    t = np.asarray(t_grid, dtype=float)

    def rhs(_t, y):
        rho = y.reshape(d, d)
        out = -1j * (heff @ rho - rho @ heff_dag)
        for c in c_ops:
            out += c @ rho @ c.conj().T
        return out.reshape(-1)

    y0 = np.asarray(rho0, dtype=complex).reshape(-1)
    if t.size == 1 or t[-1] == t[0]:
        return np.repeat(y0.reshape(1, d, d), t.size, axis=0)
    sol = solve_ivp(rhs, (t[0], t[-1]), y0, method=method, t_eval=t, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"master equation integration failed: {sol.message} (nfev={sol.nfev})")
    rhos = sol.y.T.reshape(t.size, d, d)
    tr = np.einsum("tii->t", rhos).real
    if np.max(np.abs(tr - np.trace(np.asarray(rho0)).real)) > 1e-8:
        raise IntegrationError("trace drifted beyond 1e-8")
    return rhos


def site_populations(rhos: np.ndarray, n: int) -> np.ndarray:
    pops = np.einsum("tii->ti", rhos).real
    return pops @ _bits(n)


def full_hamiltonian(params: PhysicalParams, positions, cutoff: Optional[float] = None) -> np.ndarray:
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    n = pos.shape[0]
    check_dense_capacity(n)
    bits = _bits(n)
    diag = -params.detuning * bits.sum(axis=1)
    for k in range(n):
        r = pair_distances(pos, k, None)
        for m in range(k + 1, n):
            if cutoff is not None and r[m] > cutoff:
                continue
            v = min(params.c6 / r[m] ** 6, params.vmax) if params.c6 > 0 else 0.0
            diag = diag + v * bits[:, k] * bits[:, m]
    h = np.diag(diag).astype(complex)
    for k in range(n):
        h += 0.5 * params.rabi * sigma_x(n, k)
    return h


def full_collapse_ops(params: PhysicalParams, n: int):
    ops = []
    for k in range(n):
        if params.decay > 0:
            ops.append(np.sqrt(params.decay) * sigma_minus(n, k))
        if params.dephasing > 0:
            ops.append(np.sqrt(2.0 * params.dephasing) * number_op(n, k))
    return ops


def dense_lindblad_evolve(params: PhysicalParams, positions, t_grid, initial=0,
                          cutoff: Optional[float] = None, **kw) -> LindbladResult:
    """Exact master-equation dynamics of the interacting gas (at most six atoms).

    ``initial`` is a basis bitmask or a density matrix; the default is the
    all-ground state.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    n = pos.shape[0]
    check_dense_capacity(n)
    rho0 = basis_state(n, int(initial)) if np.ndim(initial) == 0 else np.asarray(initial, dtype=complex)
    rhos = evolve_lindblad(full_hamiltonian(params, pos, cutoff), full_collapse_ops(params, n),
                           rho0, t_grid, **kw)
    return LindbladResult(np.asarray(t_grid, dtype=float), rhos, site_populations(rhos, n))
