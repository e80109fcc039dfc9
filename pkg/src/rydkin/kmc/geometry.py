"""Atom placement and interaction neighbour tables."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..model import GasGeometry


def sample_velocities(n: int, mean_speed: float, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Maxwell-Boltzmann velocities with the given mean speed."""
    sigma = mean_speed * math.sqrt(math.pi / 8.0)
    return rng.normal(0.0, sigma, size=(n, 3))


def lattice_positions(g: GasGeometry) -> np.ndarray:
    axes = [np.arange(s, dtype=float) * g.lattice_spacing for s in g.lattice_shape]
    grid = np.meshgrid(*axes, indexing="ij")
    pos = np.zeros((g.atom_count, 3))
    for a, coords in enumerate(grid):
        pos[:, a] = coords.reshape(-1)
    return pos


def sample_geometry(g: GasGeometry, rng: np.random.Generator, *, motion: bool = False,
                    mean_speed: float = 0.0):
    """Draw atom positions (and velocities when ``motion``) for one shot.

    Lattice geometries are deterministic; continuum clouds are resampled per
    call. Returns ``(positions, velocities_or_None)``.
    """
    if g.mode == "lattice":
        pos = lattice_positions(g)
    else:
        c = g.cloud
        n = g.atom_count
        pos = np.zeros((n, 3))
        if c.shape == "gaussian":
            sig = np.asarray(c.sigma)
            d = min(len(sig), 3)
            pos[:, :d] = rng.normal(0.0, 1.0, size=(n, d)) * sig[:d]
        else:
            pos[:, 0] = rng.uniform(-0.5 * c.length, 0.5 * c.length, size=n)
            rho = c.radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
            phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
            pos[:, 1] = rho * np.cos(phi)
            pos[:, 2] = rho * np.sin(phi)
    vel = sample_velocities(g.atom_count, mean_speed, rng) if motion else None
    return pos, vel


def neighbor_table(positions: np.ndarray, cutoff: float, c6: float, vmax: float,
                   box: Optional[np.ndarray] = None):
    """Symmetric CSR table of pair shifts ``min(c6/r^6, vmax)`` for ``r <= cutoff``.

    Neighbours of each atom are sorted by index so the table, and hence every
    trajectory built on it, is deterministic.
    """
    n = positions.shape[0]
    if n < 2 or cutoff <= 0 or c6 <= 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    if box is not None:
        nb = len(box)
        pts = np.mod(positions[:, :nb], box)
        if np.any(positions[:, nb:] != 0):
            raise ValueError("periodic tables require atoms on the lattice axes")
        tree = cKDTree(pts, boxsize=box)
    else:
        pts = positions
        tree = cKDTree(pts)
    pairs = tree.query_pairs(cutoff, output_type="ndarray")
    if pairs.shape[0] == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    d = pts[pairs[:, 0]] - pts[pairs[:, 1]]
    if box is not None:
        d -= box * np.round(d / box)
    r2 = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore"):
        v = np.minimum(c6 / r2**3, vmax)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    vv = np.concatenate([v, v])
    order = np.lexsort((dst, src))
    src, dst, vv = src[order], dst[order], vv[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
    return ptr, dst.astype(np.int64), vv.astype(float)
