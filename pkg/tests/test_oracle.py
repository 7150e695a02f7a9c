import json

import numpy as np
import pytest

from maskdiff.core import FactorizedPredictor
from maskdiff.oracle import (
    ExactDistribution,
    ToyDistribution,
    bundled_toys,
    empirical_distribution,
    make_toy,
    optimal_predictor,
    order_enum_distribution,
    sampler_distribution,
    total_variation,
)
from maskdiff.samplers import SamplerConfig


def brute_posterior(toy, x):
    """Posterior marginals by looping over every table entry."""
    m = toy.m
    out = np.zeros((toy.L, m))
    total = 0.0
    for seq, p in zip(toy.sequences, toy.probs):
        if all(xi == m or xi == si for xi, si in zip(x, seq)):
            total += p
            out[np.arange(toy.L), seq] += p
    return out / total


def test_toy_validation():
    with pytest.raises(ValueError):
        ToyDistribution(7, 2, np.full(128, 1 / 128))
    with pytest.raises(ValueError):
        ToyDistribution(2, 2, [0.5, 0.5, 0.1, -0.1])
    with pytest.raises(ValueError):
        ToyDistribution(2, 2, [0.5, 0.5, 0.1, 0.1])
    for toy in bundled_toys():
        assert abs(toy.probs.sum() - 1) <= 1e-12


def test_toy_json_roundtrip(tmp_path):
    toy = make_toy("markov", L=3, m=2, seed=4)
    path = tmp_path / "toy.json"
    path.write_text(toy.to_json())
    back = ToyDistribution.load(path)
    assert np.array_equal(back.probs, toy.probs)
    assert json.loads(path.read_text()).keys() == {"L", "m", "probs"}


def test_lexicographic_order():
    toy = make_toy("two-point", L=2, m=3)
    assert toy.sequences[:4].tolist() == [[0, 0], [0, 1], [0, 2], [1, 0]]
    assert toy.prob(np.array([[1, 1]]))[0] == 0.5


def test_from_samples():
    X = np.array([[0, 1], [0, 1], [1, 1], [0, 0]])
    toy = ToyDistribution.from_samples(X, 2)
    assert np.allclose(toy.probs, [0.25, 0.5, 0, 0.25])


def test_optimal_predictor_examples():
    toy = make_toy("two-point", L=2, m=2)
    pred = optimal_predictor(toy)
    assert np.allclose(pred.predict(np.array([0, 2]))[1], [1, 0])
    for t in (toy, make_toy("markov", L=3, m=3)):
        p = optimal_predictor(t)
        full = t.sequences[-1]
        assert np.array_equal(p.predict(full), np.eye(t.m)[full])
        assert np.allclose(p.predict(np.full(t.L, t.m)), t.marginals())


def test_optimal_predictor_matches_brute_force():
    rng = np.random.default_rng(0)
    for toy in bundled_toys(L=3, m=3, seed=2):
        pred = optimal_predictor(toy)
        for _ in range(30):
            seq = toy.sample(1, rng)[0]
            x = np.where(rng.random(3) < 0.5, 3, seq)
            out = pred.predict(x, rng.random())
            assert np.allclose(out, brute_posterior(toy, x), atol=1e-12)
            assert np.allclose(out.sum(-1), 1)
            assert np.array_equal(out, pred.predict(x, rng.random()))
        assert pred.zero_posterior == 0


def test_zero_posterior_fallback():
    pred = optimal_predictor(make_toy("two-point", L=2, m=3))
    out = pred.predict(np.array([2, 3]))
    assert np.allclose(out[1], 1 / 3)
    assert pred.zero_posterior == 1


def test_order_enum_examples():
    table = np.random.default_rng(1).dirichlet(np.ones(3), size=3)
    pred = FactorizedPredictor(table)
    exact = order_enum_distribution(pred)
    prod = np.einsum("a,b,c->abc", *table).ravel()
    assert np.allclose(exact.mass, prod)
    single = order_enum_distribution(FactorizedPredictor(table[:1]))
    assert np.allclose(single.mass, table[0])
    toy = make_toy("two-point", L=2, m=2)
    assert np.allclose(order_enum_distribution(optimal_predictor(toy)).mass, [0.5, 0, 0, 0.5])


def test_order_enum_reproduces_toy():
    for toy in bundled_toys(L=3, m=3) + [make_toy("dirichlet", L=4, m=2, seed=1)]:
        exact = order_enum_distribution(optimal_predictor(toy))
        assert np.allclose(exact.marginals(), toy.marginals(), atol=1e-12)
        # with the exact posterior the random-order decoder reproduces the data law
        assert total_variation(exact, ExactDistribution.from_toy(toy)) < 1e-12


def test_order_enum_size_limit():
    with pytest.raises(ValueError):
        order_enum_distribution(FactorizedPredictor(np.full((5, 8), 1 / 8)))


def test_empirical_distribution():
    with pytest.raises(ValueError):
        empirical_distribution(np.empty((0, 2), dtype=np.int64), 2)
    one_hot = FactorizedPredictor(np.eye(3)[[2, 0, 1]])
    for method in ("fhs", "ancestral", "fhs-parallel"):
        d = sampler_distribution(SamplerConfig(method, steps=2), one_hot, 500, seed=3)
        assert d.prob([2, 0, 1]) == 1.0
        assert d.seed == 3 and d.n_samples == 500


def test_empirical_two_point_mass():
    pred = optimal_predictor(make_toy("two-point", L=2, m=2))
    d = sampler_distribution(SamplerConfig("fhs"), pred, 200_000, seed=5)
    assert abs(d.prob([0, 0]) - 0.5) <= 0.004


def test_total_variation():
    a = ExactDistribution(1, 2, [0.5, 0.5])
    assert total_variation(a, a) == 0.0
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.5, 0.5], [0.6, 0.4]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        total_variation([1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        ExactDistribution(1, 2, [0.5, 0.6])
