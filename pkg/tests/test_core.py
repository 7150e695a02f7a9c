import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from maskdiff.core import (
    FactorizedPredictor,
    NoiseSchedule,
    TimeInterpolatedPredictor,
    UniformPredictor,
    Vocabulary,
    apply_temperature,
    cosine_schedule,
    linear_schedule,
    mask_count,
    power_schedule,
    schedule_alpha,
    schedule_alpha_inv,
)


@pytest.mark.parametrize("t,expected", [(0.3, 0.7), (0.0, 1.0), (1.0, 0.0)])
def test_linear_alpha(t, expected):
    assert schedule_alpha(linear_schedule(), t) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("a,expected", [(0.25, 0.75), (1.0, 0.0)])
def test_linear_alpha_inv(a, expected):
    assert schedule_alpha_inv(linear_schedule(), a) == pytest.approx(expected, abs=1e-15)


def test_power_inverse_matches_root_finder():
    sched = power_schedule(2)
    root = brentq(lambda t: (1 - t) ** 2 - 0.25, 0.0, 1.0, xtol=1e-15)
    assert schedule_alpha_inv(sched, 0.25) == pytest.approx(root, abs=1e-12)
    assert schedule_alpha_inv(sched, 0.25) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("sched", [linear_schedule(), cosine_schedule(), power_schedule(2),
                                   power_schedule(0.5)], ids=lambda s: s.kind)
def test_schedule_roundtrip_and_monotone(sched):
    grid = np.linspace(0, 1, 10_001)
    assert np.all(np.diff(sched.alpha(grid)) < 0)
    a = np.linspace(0, 1, 2001)
    assert np.max(np.abs(sched.alpha(sched.alpha_inv(a)) - a)) <= 1e-12


def test_schedule_domain_errors():
    s = linear_schedule()
    with pytest.raises(ValueError):
        schedule_alpha(s, 1.5)
    with pytest.raises(ValueError):
        schedule_alpha(s, -0.1)
    with pytest.raises(ValueError):
        schedule_alpha_inv(s, 1.2)


def test_non_monotone_schedule_rejected():
    with pytest.raises(ValueError):
        NoiseSchedule(lambda t: 1 - t + 0.3 * np.sin(6 * np.pi * t))
    with pytest.raises(ValueError):
        NoiseSchedule(lambda t: 0.9 * (1 - t))


def test_total_noise_and_rate_consistent():
    s = cosine_schedule()
    t = np.linspace(0.05, 0.95, 19)
    assert np.allclose(np.exp(-s.total_noise(t)), s.alpha(t))
    h = 1e-6
    numeric = (s.total_noise(t + h) - s.total_noise(t - h)) / (2 * h)
    assert np.allclose(s.rate(t), numeric, rtol=1e-6)


def test_vocabulary():
    v = Vocabulary(5)
    assert v.mask_id == 5
    with pytest.raises(ValueError):
        Vocabulary(0)


@pytest.mark.parametrize("seq,expected", [([3, 3, 3], 3), ([0, 1, 2], 0), ([0, 3, 1, 3], 2)])
def test_mask_count(seq, expected):
    assert mask_count(seq, 3) == expected


def test_temperature_examples():
    assert np.allclose(apply_temperature([0.5, 0.5], 0.8), [0.5, 0.5])
    assert np.array_equal(apply_temperature([0.2, 0.8], 1.0), [0.2, 0.8])
    # direct evaluation: 0.2**2 and 0.8**2 renormalised
    expected = np.array([0.04, 0.64]) / 0.68
    assert np.allclose(apply_temperature([0.2, 0.8], 0.5), expected, atol=1e-15)
    assert apply_temperature([0.0, 0.3, 0.7], 0.5)[0] == 0.0
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            apply_temperature([0.2, 0.8], bad)


def test_temperature_preserves_argmax():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(rng.integers(2, 12)))
        T = rng.uniform(0.05, 5.0)
        assert np.argmax(apply_temperature(p, T)) == np.argmax(p)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_predictor_pins_unmasked_positions(L, m, seed):
    rng = np.random.default_rng(seed)
    pred = FactorizedPredictor(rng.dirichlet(np.ones(m), size=L))
    X = rng.integers(0, m + 1, size=(4, L))
    out = pred.predict(X, rng.random())
    assert out.shape == (4, L, m)
    assert np.allclose(out.sum(-1), 1.0)
    for b, l in zip(*np.nonzero(X != m)):
        assert np.array_equal(out[b, l], np.eye(m)[X[b, l]])


def test_predictor_single_sequence_and_time():
    start = np.full((2, 3), 1 / 3)
    end = np.array([[1.0, 0, 0], [0, 0, 1.0]])
    pred = TimeInterpolatedPredictor(start, end)
    assert pred.time_dependent
    out = pred.predict(np.array([3, 3]), 0.25)
    assert out.shape == (2, 3)
    assert np.allclose(out, 0.75 * start + 0.25 * end)
    with pytest.raises(ValueError):
        UniformPredictor(3, 2).predict(np.array([3, 3, 3]))
