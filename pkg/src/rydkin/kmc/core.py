"""Compiled kernels for the continuous-time Monte Carlo loop.

Per-atom total rates live in the leaves of a complete binary sum tree, so
event selection and the local update after a flip both cost O(log N).
Internal nodes are recomputed from their children on every update, hence
the tree total never drifts from the sum of its leaves.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

MODE_OFF = 0
MODE_EXCITE = 1
MODE_DEEXCITE = 2

REACHED = 0
NEED_RANDOM = 1
FROZEN = 2


@njit(cache=True, nogil=True)
def lorentz_rate(rabi, detuning, dephasing, shift, vmax):
    s = shift if shift < vmax else vmax
    e = (detuning - s) / dephasing
    return rabi * rabi / (2.0 * dephasing) / (1.0 + e * e)


@njit(cache=True, nogil=True)
def atom_rate(k, excited, shift, nexc, mode, rabi, detuning, dephasing, decay, vmax, spontaneous):
    r = 0.0
    if excited[k]:
        r = decay
    if mode == MODE_EXCITE:
        if spontaneous or nexc[k] > 0:
            r += lorentz_rate(rabi, detuning, dephasing, shift[k], vmax)
    elif mode == MODE_DEEXCITE:
        if excited[k]:
            r += lorentz_rate(rabi, detuning, dephasing, shift[k], vmax)
    return r


@njit(cache=True, nogil=True)
def tree_set(tree, leaves, k, value):
    i = leaves + k
    tree[i] = value
    i //= 2
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i //= 2


@njit(cache=True, nogil=True)
def tree_find(tree, leaves, u):
    """Leaf index whose cumulative rate interval contains ``u``."""
    i = 1
    while i < leaves:
        left = tree[2 * i]
        if u < left:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    k = i - leaves
    if tree[i] > 0.0:
        return k
    # u landed on a rounding boundary next to an empty leaf
    for j in range(k, -1, -1):
        if tree[leaves + j] > 0.0:
            return j
    for j in range(k + 1, leaves):
        if tree[leaves + j] > 0.0:
            return j
    return -1


@njit(cache=True, nogil=True)
def rebuild(excited, shift, nexc, ptr, idx, vals, tree, leaves,
            mode, rabi, detuning, dephasing, decay, vmax, spontaneous):
    """Recompute shifts, neighbour counts and the full rate tree from scratch."""
    n = excited.shape[0]
    for k in range(n):
        s = 0.0
        c = 0
        for j in range(ptr[k], ptr[k + 1]):
            q = idx[j]
            if excited[q]:
                s += vals[j]
                c += 1
        shift[k] = s
        nexc[k] = c
    tree[:] = 0.0
    for k in range(n):
        tree[leaves + k] = atom_rate(k, excited, shift, nexc, mode, rabi, detuning,
                                     dephasing, decay, vmax, spontaneous)
    for i in range(leaves - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True, nogil=True)
def flip(k, excited, shift, nexc, ptr, idx, vals, tree, leaves,
         mode, rabi, detuning, dephasing, decay, vmax, spontaneous):
    """Toggle atom ``k`` and refresh the rates of its neighbours only."""
    if excited[k]:
        excited[k] = 0
        sign = -1.0
        dc = -1
    else:
        excited[k] = 1
        sign = 1.0
        dc = 1
    for j in range(ptr[k], ptr[k + 1]):
        q = idx[j]
        shift[q] += sign * vals[j]
        nexc[q] += dc
        if nexc[q] == 0:
            shift[q] = 0.0
        tree_set(tree, leaves, q, atom_rate(q, excited, shift, nexc, mode, rabi, detuning,
                                            dephasing, decay, vmax, spontaneous))
    tree_set(tree, leaves, k, atom_rate(k, excited, shift, nexc, mode, rabi, detuning,
                                        dephasing, decay, vmax, spontaneous))


@njit(cache=True, nogil=True)
def advance(t, t_stop, uniforms, upos, excited, shift, nexc, ptr, idx, vals, tree, leaves,
            mode, rabi, detuning, dephasing, decay, vmax, spontaneous):
    """Run events until the next one would fall after ``t_stop``.

    Returns ``(t, upos, status, n_events)``. A pending waiting time that
    overshoots ``t_stop`` is discarded, which is exact for exponential clocks.
    """
    n_events = 0
    nu = uniforms.shape[0]
    while True:
        total = tree[1]
        if total <= 0.0:
            return t_stop, upos, FROZEN, n_events
        if upos + 2 > nu:
            return t, upos, NEED_RANDOM, n_events
        dt = -math.log(1.0 - uniforms[upos]) / total
        if t + dt > t_stop:
            return t_stop, upos + 1, REACHED, n_events
        k = tree_find(tree, leaves, uniforms[upos + 1] * total)
        upos += 2
        if k < 0:
            return t, upos, FROZEN, n_events
        t += dt
        flip(k, excited, shift, nexc, ptr, idx, vals, tree, leaves,
             mode, rabi, detuning, dephasing, decay, vmax, spontaneous)
        n_events += 1


def tree_size(n: int) -> int:
    leaves = 1
    while leaves < max(n, 1):
        leaves *= 2
    return leaves


def empty_tree(n: int):
    leaves = tree_size(n)
    return np.zeros(2 * leaves), leaves
