"""Quantum-jump sampling of the coherently constrained chain.

The chain Hamiltonian ``H = rabi * sum_k (n_{k-1} + n_{k+1}) sx_k`` is
applied matrix-free. Site ``k`` is bit ``k`` of the basis index. Between
jumps the state follows ``H_eff = H - (i kappa/2) sum_k n_k`` with a fixed
step RK4 integrator; a jump fires when the squared norm falls below a
pre-drawn uniform threshold, the crossing time being located by bisection.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import CapacityError, InvalidParameterError
from .kmc.engine import resolve_threads
from .lindblad import LindbladResult, check_dense_capacity, evolve_lindblad, sigma_minus, site_populations
from .rng import substream

MAX_SITES = 14
STEP_FACTOR = 0.01
BISECT_TOL = 1e-6
RANDOM_BUFFER = 1024

NEED_RANDOM = 1
DONE = 0


@dataclass(frozen=True)
class ChainModel:
    sites: int
    rabi: float
    decay: float
    boundary: str = "open"

    def __post_init__(self):
        if self.sites > MAX_SITES:
            raise CapacityError(f"chain trajectories support at most {MAX_SITES} sites")
        if self.sites < 2:
            raise InvalidParameterError("a chain needs at least 2 sites")
        if self.boundary not in ("open", "periodic"):
            raise InvalidParameterError("boundary must be 'open' or 'periodic'")
        if self.boundary == "periodic" and self.sites < 3:
            raise InvalidParameterError("periodic chains need at least 3 sites")
        if not (self.rabi >= 0 and self.decay >= 0):
            raise InvalidParameterError("rabi and decay must be >= 0")

    @property
    def dim(self) -> int:
        return 1 << self.sites

    def neighbors(self, k: int):
        n = self.sites
        if self.boundary == "periodic":
            return [(k - 1) % n, (k + 1) % n]
        return [q for q in (k - 1, k + 1) if 0 <= q < n]


@dataclass
class PureState:
    amplitudes: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        self.norm = float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def normalized(self) -> "PureState":
        return PureState(self.amplitudes / self.norm)

    @classmethod
    def basis(cls, sites: int, excited: Sequence[int] = ()) -> "PureState":
        psi = np.zeros(1 << sites, dtype=complex)
        psi[sum(1 << int(k) for k in excited)] = 1.0
        return cls(psi)


def constraint_table(m: ChainModel) -> np.ndarray:
    """``coef[b, k]``: rabi times the number of excited neighbours of ``k`` in state ``b``."""
    b = np.arange(m.dim)
    coef = np.zeros((m.dim, m.sites))
    for k in range(m.sites):
        for q in m.neighbors(k):
            coef[:, k] += (b >> q) & 1
    return m.rabi * coef


def decay_diagonal(m: ChainModel) -> np.ndarray:
    b = np.arange(m.dim)
    pop = np.zeros(m.dim)
    for k in range(m.sites):
        pop += (b >> k) & 1
    return -0.5 * m.decay * pop


def transition_table(m: ChainModel):
    """CSR form ``(ptr, cols, vals)`` of the off-diagonal couplings."""
    coef = constraint_table(m)
    b, k = np.nonzero(coef)
    ptr = np.zeros(m.dim + 1, dtype=np.int64)
    np.cumsum(np.bincount(b, minlength=m.dim), out=ptr[1:])
    return ptr, (b ^ (1 << k)).astype(np.int64), coef[b, k].astype(float)


@njit(cache=True, nogil=True)
def apply_heff(psi, ptr, cols, vals, diag, out):
    for b in range(psi.shape[0]):
        acc = 1j * diag[b] * psi[b]
        for j in range(ptr[b], ptr[b + 1]):
            acc += vals[j] * psi[cols[j]]
        out[b] = acc


@njit(cache=True, nogil=True)
def rk4_step(psi, h, ptr, cols, vals, diag, k1, k2, k3, k4, tmp, out):
    # d psi/dt = -i H_eff psi, where apply_heff returns H_eff psi
    apply_heff(psi, ptr, cols, vals, diag, k1)
    for i in range(psi.shape[0]):
        tmp[i] = psi[i] - 0.5j * h * k1[i]
    apply_heff(tmp, ptr, cols, vals, diag, k2)
    for i in range(psi.shape[0]):
        tmp[i] = psi[i] - 0.5j * h * k2[i]
    apply_heff(tmp, ptr, cols, vals, diag, k3)
    for i in range(psi.shape[0]):
        tmp[i] = psi[i] - 1j * h * k3[i]
    apply_heff(tmp, ptr, cols, vals, diag, k4)
    for i in range(psi.shape[0]):
        out[i] = psi[i] - 1j * h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True, nogil=True)
def norm2(psi):
    s = 0.0
    for i in range(psi.shape[0]):
        s += psi[i].real ** 2 + psi[i].imag ** 2
    return s


@njit(cache=True, nogil=True)
def _is_vacuum(psi):
    for i in range(1, psi.shape[0]):
        if psi[i] != 0.0:
            return False
    return True


@njit(cache=True, nogil=True)
def evolve_until(psi, t, t_stop, hmax, threshold, uniforms, upos, ptr, cols, vals, diag,
                 sites, jump_t, jump_k, njump):
    """Advance the unnormalised state from ``t`` to ``t_stop`` applying jumps.

    Returns ``(t, threshold, upos, njump, status)``; status ``NEED_RANDOM``
    means the uniform buffer ran low and the call must be repeated.
    """
    dim = psi.shape[0]
    n = sites
    k1 = np.empty(dim, np.complex128)
    k2 = np.empty(dim, np.complex128)
    k3 = np.empty(dim, np.complex128)
    k4 = np.empty(dim, np.complex128)
    tmp = np.empty(dim, np.complex128)
    nxt = np.empty(dim, np.complex128)
    nu = uniforms.shape[0]
    nsteps = max(1, int(math.ceil((t_stop - t) / hmax - 1e-9)))
    h0 = (t_stop - t) / nsteps
    while t_stop - t > 1e-12 * max(1.0, abs(t_stop)):
        if upos + 2 > nu or njump >= jump_t.shape[0]:
            return t, threshold, upos, njump, NEED_RANDOM
        if _is_vacuum(psi):
            break
        h = min(h0, t_stop - t)
        rk4_step(psi, h, ptr, cols, vals, diag, k1, k2, k3, k4, tmp, nxt)
        if norm2(nxt) > threshold:
            psi[:] = nxt
            t += h
            continue
        lo = 0.0
        hi = h
        while hi - lo > BISECT_TOL:
            mid = 0.5 * (lo + hi)
            rk4_step(psi, mid, ptr, cols, vals, diag, k1, k2, k3, k4, tmp, nxt)
            if norm2(nxt) > threshold:
                lo = mid
            else:
                hi = mid
        rk4_step(psi, hi, ptr, cols, vals, diag, k1, k2, k3, k4, tmp, nxt)
        t += hi
        # site weights proportional to <n_k>
        tot = 0.0
        w = np.zeros(n)
        for b in range(dim):
            p = nxt[b].real ** 2 + nxt[b].imag ** 2
            for k in range(n):
                if (b >> k) & 1:
                    w[k] += p
                    tot += p
        u = uniforms[upos] * tot
        site = n - 1
        acc = 0.0
        for k in range(n):
            acc += w[k]
            if u < acc:
                site = k
                break
        psi[:] = 0.0
        for b in range(dim):
            if (b >> site) & 1:
                psi[b ^ (1 << site)] = nxt[b]
        s = math.sqrt(norm2(psi))
        for b in range(dim):
            psi[b] /= s
        threshold = uniforms[upos + 1]
        upos += 2
        jump_t[njump] = t
        jump_k[njump] = site
        njump += 1
    return t_stop, threshold, upos, njump, DONE


def build_constraint_hamiltonian(m: ChainModel):
    """Matrix-free action ``psi -> H psi`` of the constrained chain."""
    ptr, cols, vals = transition_table(m)
    zero = np.zeros(m.dim)

    def apply(psi):
        psi = np.ascontiguousarray(psi, dtype=complex)
        out = np.empty_like(psi)
        apply_heff(psi, ptr, cols, vals, zero, out)
        return out

    return apply


def chain_hamiltonian_matrix(m: ChainModel) -> np.ndarray:
    """Dense ``H`` assembled column by column from the matrix-free action."""
    h = build_constraint_hamiltonian(m)
    eye = np.eye(m.dim, dtype=complex)
    return np.stack([h(eye[:, j]) for j in range(m.dim)], axis=1)


@dataclass(frozen=True)
class QjmcTrajectory:
    times: np.ndarray
    site_density: np.ndarray
    jump_times: np.ndarray
    jump_sites: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return self.site_density.mean(axis=1)


def _site_density(psi: np.ndarray, sites: int) -> np.ndarray:
    p = np.abs(psi) ** 2
    p = p / p.sum()
    b = np.arange(psi.size)
    return np.array([p[((b >> k) & 1) == 1].sum() for k in range(sites)])


def _initial(m: ChainModel, initial) -> np.ndarray:
    if initial is None:
        return PureState.basis(m.sites, [m.sites // 2]).normalized().amplitudes
    if isinstance(initial, PureState):
        return initial.normalized().amplitudes
    return PureState.basis(m.sites, initial).amplitudes


def qjmc_trajectory(m: ChainModel, t_grid, rng: np.random.Generator, initial=None) -> QjmcTrajectory:
    """One quantum-jump trajectory sampled at ``t_grid``.

    ``initial`` is a :class:`PureState` or a list of excited sites; the
    default is one excitation on the central site.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(np.diff(t_grid) < 0):
        raise InvalidParameterError("t_grid must be a non-decreasing 1-D array")
    ptr, cols, vals = transition_table(m)
    diag = decay_diagonal(m)
    psi = np.array(_initial(m, initial), dtype=complex)
    scale = max(m.rabi, m.decay, 1e-300)
    hmax = STEP_FACTOR / scale
    uniforms = rng.random(RANDOM_BUFFER)
    threshold = float(1.0 - uniforms[0])
    upos = 1
    jump_t = np.empty(RANDOM_BUFFER // 2 + 1)
    jump_k = np.empty(RANDOM_BUFFER // 2 + 1, dtype=np.int64)
    jt, jk = [], []
    out = np.empty((t_grid.size, m.sites))
    t = float(t_grid[0])
    for i, ts in enumerate(t_grid):
        while t < ts:
            njump = 0
            t, threshold, upos, njump, status = evolve_until(
                psi, t, float(ts), hmax, threshold, uniforms, upos, ptr, cols, vals, diag,
                m.sites, jump_t, jump_k, njump)
            jt.extend(jump_t[:njump])
            jk.extend(jump_k[:njump])
            if status == NEED_RANDOM:
                uniforms = rng.random(RANDOM_BUFFER)
                upos = 0
        out[i] = _site_density(psi, m.sites)
    return QjmcTrajectory(t_grid, out, np.asarray(jt, dtype=float), np.asarray(jk, dtype=np.int64))


@dataclass(frozen=True)
class QjmcEnsemble:
    times: np.ndarray
    site_density: np.ndarray  # (trajectories, T, N)
    jump_counts: np.ndarray

    @property
    def mean_site_density(self) -> np.ndarray:
        return self.site_density.mean(axis=0)

    @property
    def stderr_site_density(self) -> np.ndarray:
        n = self.site_density.shape[0]
        return self.site_density.std(axis=0, ddof=1) / math.sqrt(n)

    @property
    def mean_density(self) -> np.ndarray:
        return self.site_density.mean(axis=(0, 2))

    @property
    def stderr_density(self) -> np.ndarray:
        d = self.site_density.mean(axis=2)
        return d.std(axis=0, ddof=1) / math.sqrt(d.shape[0])


def qjmc_ensemble(m: ChainModel, t_grid, trajectories: int, seed: int = 0, initial=None,
                  threads: Optional[int] = None, stream_prefix=()) -> QjmcEnsemble:
    """Independent trajectories; trajectory ``i`` uses substream ``(*prefix, i)``."""
    t_grid = np.asarray(t_grid, dtype=float)

    def one(i):
        return qjmc_trajectory(m, t_grid, substream(seed, *stream_prefix, i), initial)

    nthreads = resolve_threads(threads)
    if nthreads > 1 and trajectories > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            res = list(ex.map(one, range(trajectories)))
    else:
        res = [one(i) for i in range(trajectories)]
    return QjmcEnsemble(t_grid, np.stack([r.site_density for r in res]),
                        np.array([r.jump_times.size for r in res]))


@dataclass(frozen=True)
class DensityHistogram:
    edges: np.ndarray
    probabilities: np.ndarray
    samples: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def local_maxima(self):
        """Indices of bins strictly above their neighbours (edges compare to one side)."""
        p = self.probabilities
        idx = []
        for i in range(p.size):
            left = p[i - 1] if i > 0 else -np.inf
            right = p[i + 1] if i + 1 < p.size else -np.inf
            if p[i] > left and p[i] > right:
                idx.append(i)
        return idx


def qjmc_histogram(m: ChainModel, t_end: float, trajectories: int, seed: int = 0,
                   bins: Optional[int] = None, samples: int = 200, initial=None,
                   threads: Optional[int] = None, density_range=(0.0, 1.0),
                   stream_prefix=()) -> DensityHistogram:
    """Normalised histogram of the time-averaged density over ``[t_end/2, t_end]``."""
    if t_end <= 0:
        raise InvalidParameterError("t_end must be positive")
    t_grid = np.linspace(0.5 * t_end, t_end, samples)
    ens = qjmc_ensemble(m, np.concatenate([[0.0], t_grid]), trajectories, seed, initial, threads,
                        stream_prefix)
    avg = ens.site_density[:, 1:, :].mean(axis=(1, 2))
    nb = bins if bins is not None else m.sites
    counts, edges = np.histogram(avg, bins=nb, range=density_range)
    return DensityHistogram(edges, counts / counts.sum(), avg)


def chain_lindblad_evolve(m: ChainModel, t_grid, initial=None, **kw) -> LindbladResult:
    """Dense master-equation reference for a short chain (at most six sites)."""
    check_dense_capacity(m.sites)
    psi0 = _initial(m, initial)
    rho0 = np.outer(psi0, psi0.conj())
    ops = [math.sqrt(m.decay) * sigma_minus(m.sites, k) for k in range(m.sites)] if m.decay > 0 else []
    rhos = evolve_lindblad(chain_hamiltonian_matrix(m), ops, rho0, t_grid, **kw)
    return LindbladResult(np.asarray(t_grid, dtype=float), rhos, site_populations(rhos, m.sites))
