import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydkin.errors import InvalidParameterError, ValidationError
from rydkin.model import (REFERENCE_PARAMS, TWO_PI, GasGeometry, PhysicalParams, SpinConfiguration,
                          TwoPhotonParams, angular, default_cutoff, derive_scales, flip_rate,
                          interaction_shift, two_photon_rabi)

C6 = angular(869.7e3)


def test_two_photon_rabi_examples():
    tp = TwoPhotonParams(angular(40.0), angular(4.0), angular(320.0))
    assert two_photon_rabi(tp) == pytest.approx(angular(0.25), rel=1e-12)
    assert two_photon_rabi(TwoPhotonParams(0.0, 3.0, angular(1000.0))) == 0.0
    assert two_photon_rabi(TwoPhotonParams(2.0, 2.0, 1.0)) == pytest.approx(2.0)


def test_two_photon_rabi_rejects_zero_detuning():
    with pytest.raises(InvalidParameterError):
        two_photon_rabi(TwoPhotonParams(1.0, 1.0, 0.0))


def test_interaction_shift_examples():
    pos = np.array([[0.0, 0, 0], [2.0, 0, 0], [5.0, 0, 0]])
    cfg = SpinConfiguration([0, 0, 0], pos)
    assert interaction_shift(cfg, 64.0, 0, 10.0) == 0.0
    cfg = SpinConfiguration([0, 1, 0], pos)
    assert interaction_shift(cfg, 64.0, 0, 10.0) == pytest.approx(1.0)


def test_two_neighbours_at_rfac_give_twice_detuning():
    det = angular(19.0)
    r = (C6 / det) ** (1 / 6)
    cfg = SpinConfiguration([1, 0, 1], np.array([0.0, r, 2 * r]))
    assert interaction_shift(cfg, C6, 1, 3 * r) == pytest.approx(2 * det, rel=1e-12)


def test_interaction_shift_cutoff_and_clamp():
    cfg = SpinConfiguration([1, 0], np.array([0.0, 2.0]))
    assert interaction_shift(cfg, 64.0, 1, 1.5) == 0.0
    assert interaction_shift(cfg, 64.0, 1, 3.0, vmax=0.5) == 0.5


def test_flip_rate_reference_numbers():
    assert flip_rate(REFERENCE_PARAMS, 0.0) == pytest.approx(0.280, rel=1e-2)
    p = REFERENCE_PARAMS.replace(detuning=angular(19.0))
    assert flip_rate(p, 0.0) / p.resonant_rate == pytest.approx(1.356e-3, rel=1e-3)
    assert flip_rate(p, p.detuning) == pytest.approx(p.resonant_rate, rel=1e-15)


def test_derive_scales_reference_numbers():
    s24 = derive_scales(REFERENCE_PARAMS.replace(detuning=angular(24.0)))
    assert s24.facilitation_radius == pytest.approx(5.7, rel=0.05)
    s19 = derive_scales(REFERENCE_PARAMS.replace(detuning=angular(19.0)))
    assert s19.facilitation_shell_width * 1e3 == pytest.approx(39.0, rel=0.10)
    assert s19.blockade_radius == pytest.approx(11.1, rel=0.10)


def test_derive_scales_unitless():
    assert derive_scales(PhysicalParams(1.0, 0.0, 1.0, c6=64.0)).blockade_radius == pytest.approx(2.0)
    assert derive_scales(PhysicalParams(1.0, 0.0, 3.0, c6=3.0)).blockade_radius == pytest.approx(1.0)
    s = derive_scales(PhysicalParams(1.0, 0.0, 1.0, c6=64.0))
    assert s.facilitation_radius is None and s.rate_spon is None


def test_rate_spon_matches_flip_rate_far_detuned():
    p = PhysicalParams(0.3, 30.0, 1.0, c6=10.0)
    s = derive_scales(p)
    rel = abs(s.rate_spon - flip_rate(p, 0.0)) / flip_rate(p, 0.0)
    assert rel <= (1 / 30) ** 2


def test_default_cutoff_tail():
    p = REFERENCE_PARAMS
    rc = default_cutoff(p)
    assert p.c6 / rc**6 == pytest.approx(p.dephasing / 100, rel=1e-12)


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        PhysicalParams(1.0, 0.0, 0.0)
    with pytest.raises(InvalidParameterError):
        PhysicalParams(1.0, 0.0, 1.0, detection_eff=0.0)
    with pytest.raises(InvalidParameterError):
        PhysicalParams(-1.0, 0.0, 1.0)


def test_geometry_validation():
    with pytest.raises(ValidationError):
        GasGeometry("lattice", 2, 10)
    with pytest.raises(ValidationError):
        GasGeometry("continuum", 3, 10)
    g = GasGeometry("lattice", 1, 8, lattice_spacing=2.0, boundary="periodic")
    assert g.box.tolist() == [16.0]


def test_minimum_image_shift():
    g = GasGeometry("lattice", 1, 8, lattice_spacing=1.0, boundary="periodic")
    pos = np.arange(8.0)
    cfg = SpinConfiguration([0] * 7 + [1], pos, box=g.box)
    assert interaction_shift(cfg, 64.0, 0, 1.5) == pytest.approx(64.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(-50, 50), st.floats(0, 100))
def test_flip_rate_symmetric_and_bounded(rabi, gamma, det, shift):
    p = PhysicalParams(rabi, det, gamma)
    r = flip_rate(p, shift)
    mirror = PhysicalParams(rabi, 2 * shift - det, gamma)
    assert 0 < r <= p.resonant_rate * (1 + 1e-15)
    assert r == pytest.approx(flip_rate(mirror, shift), rel=1e-12)
    assert flip_rate(p, det) >= r


def test_flip_rate_peaks_at_rfac():
    p = REFERENCE_PARAMS.replace(detuning=angular(19.0))
    rf = derive_scales(p).facilitation_radius
    r = np.linspace(0.8 * rf, 1.2 * rf, 40001)
    rates = flip_rate(p, p.c6 / r**6)
    assert abs(r[np.argmax(rates)] - rf) <= r[1] - r[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0.1, 100))
def test_radii_invariant_under_two_pi(c6, gamma, det):
    a = derive_scales(PhysicalParams(1.0, det, gamma, c6=c6))
    b = derive_scales(PhysicalParams(1.0, TWO_PI * det, TWO_PI * gamma, c6=TWO_PI * c6))
    assert a.blockade_radius == pytest.approx(b.blockade_radius, rel=1e-12)
    assert a.facilitation_radius == pytest.approx(b.facilitation_radius, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=6, max_size=6), st.integers(0, 5), st.integers(0, 5))
def test_shift_monotone_in_excitations(bits, k, extra):
    rng = np.random.default_rng(sum(bits) + 10 * k)
    pos = rng.uniform(0, 5, size=(6, 3))
    cfg = SpinConfiguration(bits, pos)
    more = list(bits)
    more[extra] = 1
    assert interaction_shift(cfg.with_excited(more), 10.0, k, 100.0) >= interaction_shift(cfg, 10.0, k, 100.0)
