import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from maskdiff.gumbel import (
    BINARY32,
    BINARY64,
    F32_GRID,
    M_BINARY32,
    M_BINARY64,
    PrecisionMode,
    gumbel_max_categorical,
    max_gumbel_for_precision,
    sample_truncated_gumbel,
    transform_uniforms,
    truncated_argmax_counts,
    truncated_argmax_probs,
)


def argmax_law_by_quadrature(p, M):
    """Independent oracle: P(argmax = n) = int f_n(x) prod_{i != n} F_i(x) dx for
    scores x_i = log p_i + g_i with g_i standard Gumbel truncated at M."""
    logp = np.log(p)
    Z = np.exp(-np.exp(-M))

    def cdf(x, lp):
        g = np.minimum(x - lp, M)
        return np.exp(-np.exp(-g)) / Z

    def pdf(x, lp):
        g = x - lp
        if g > M:
            return 0.0
        return np.exp(-g - np.exp(-g)) / Z

    out = []
    for n in range(len(p)):
        f = lambda x: pdf(x, logp[n]) * np.prod([cdf(x, logp[i]) for i in range(len(p)) if i != n])
        val, _ = integrate.quad(f, logp[n] - 6, logp[n] + M, limit=400, epsabs=1e-12)
        out.append(val)
    return np.array(out)


def test_table1_constants():
    assert max_gumbel_for_precision(BINARY32) == pytest.approx(16.6355, abs=5e-5)
    assert max_gumbel_for_precision(BINARY64) == pytest.approx(36.7368, abs=5e-5)
    assert max_gumbel_for_precision(PrecisionMode("exact-truncated", 10.0)) == 10.0


def test_precision_parse():
    assert PrecisionMode.parse("f32emu") == BINARY32
    assert PrecisionMode.parse("f64") == BINARY64
    assert PrecisionMode.parse("truncM=3.5").M == 3.5
    assert PrecisionMode.parse("truncM=3.5").label == "truncM=3.5"
    with pytest.raises(ValueError):
        PrecisionMode.parse("f16")
    with pytest.raises(ValueError):
        PrecisionMode("exact-truncated")


def test_truncated_gumbel_plugins():
    assert sample_truncated_gumbel(np.inf, u=np.exp(-1)) == pytest.approx(0.0, abs=1e-15)
    g = sample_truncated_gumbel(0.0, rng=1, size=100_000)
    assert g.max() <= 0.0


def test_truncated_gumbel_ks():
    g = sample_truncated_gumbel(1.0, rng=2, size=1_000_000)
    F1 = np.exp(-np.exp(-1.0))
    cdf = lambda x: np.where(x >= 1.0, 1.0, np.exp(-np.exp(-x)) / F1)
    assert stats.kstest(g, cdf).statistic < 0.002


def test_f32_uniforms_on_grid():
    u = transform_uniforms(np.random.default_rng(0).random(10_000), BINARY32)
    k = u / F32_GRID
    assert np.array_equal(k, np.floor(k))
    assert u.max() < 1.0


@pytest.mark.parametrize("mode", [BINARY64, BINARY32, PrecisionMode("exact-truncated", 0.0)])
def test_one_hot_always_returned(mode):
    p = np.zeros((1000, 5))
    p[:, 3] = 1.0
    assert np.all(gumbel_max_categorical(p, mode, rng=0) == 3)


def test_zero_probability_never_drawn_on_coarse_grid():
    # u == 0 happens on the f32 grid; a zero class must still never win
    p = np.array([0.0, 1e-30, 1.0 - 1e-30])
    u = np.zeros((3, 3))
    u[:, 2] = 0.5
    draws = gumbel_max_categorical(np.tile(p, (3, 1)), BINARY32, u=u)
    assert np.all(draws != 0)


def test_uniform_goodness_of_fit():
    draws = gumbel_max_categorical(np.full((1_000_000, 8), 1 / 8), BINARY64, rng=3)
    counts = np.bincount(draws, minlength=8)
    assert stats.chisquare(counts).pvalue > 0.001


def test_two_class_truncated_frequencies():
    rep = truncated_argmax_probs([0.2, 0.8], 0.0)
    n = 1_000_000
    draws = gumbel_max_categorical(np.tile([0.2, 0.8], (n, 1)),
                                   PrecisionMode("exact-truncated", 0.0), rng=4)
    freq = np.bincount(draws, minlength=2) / n
    sigma = np.sqrt(rep.shifted * (1 - rep.shifted) / n)
    assert np.all(np.abs(freq - rep.shifted) <= 3 * sigma)


def test_closed_form_examples():
    assert np.allclose(truncated_argmax_probs([0.5, 0.5], 0.0).shifted, [0.5, 0.5])
    assert np.allclose(truncated_argmax_probs([0.5, 0.5], 7.0).shifted, [0.5, 0.5])
    rep = truncated_argmax_probs([0.2, 0.8], 0.0)
    # hand evaluation: beta_1 = e^-3, beta_2 = (1 - e^-3) / 0.8
    assert rep.beta == pytest.approx([np.exp(-3), (1 - np.exp(-3)) / 0.8], abs=1e-15)
    assert rep.shifted == pytest.approx([0.2 * np.exp(-3), 1 - 0.2 * np.exp(-3)], abs=1e-15)
    assert rep.shifted == pytest.approx([0.009957, 0.990043], abs=1e-6)
    assert np.allclose(truncated_argmax_probs([0.2, 0.8], M_BINARY64).shifted, [0.2, 0.8],
                       atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("M", [0.0, 1.0, 3.0])
def test_closed_form_matches_quadrature(seed, M):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(rng.integers(2, 6)))
    assert np.allclose(truncated_argmax_probs(p, M).shifted, argmax_law_by_quadrature(p, M),
                       atol=1e-8)


def test_zero_classes_excluded():
    rep = truncated_argmax_probs([0.0, 0.3, 0.0, 0.7], 1.0)
    assert rep.shifted[0] == 0.0 and rep.shifted[2] == 0.0
    assert np.allclose(rep.shifted[[1, 3]], truncated_argmax_probs([0.3, 0.7], 1.0).shifted)


def test_shifted_sum_and_beta_nonnegative():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        p = rng.dirichlet(np.full(rng.integers(2, 17), rng.uniform(0.1, 3)))
        for M in (0.0, 1.0, 5.0, M_BINARY32):
            rep = truncated_argmax_probs(p, M)
            assert abs(rep.shifted.sum() - 1) <= 1e-9
            assert np.all(rep.beta >= 0)


def test_ratio_amplification():
    rng = np.random.default_rng(6)
    for _ in range(200):
        p = rng.dirichlet(np.ones(rng.integers(2, 9)))
        for M in (0.0, 1.0, 5.0):
            ls = truncated_argmax_probs(p, M).log_shifted
            for a in range(p.size):
                for b in range(p.size):
                    if p[a] > p[b] > 0:
                        assert ls[a] - ls[b] > np.log(p[a]) - np.log(p[b])


def test_log_shifted_consistent():
    rng = np.random.default_rng(7)
    for _ in range(200):
        p = rng.dirichlet(np.ones(rng.integers(2, 17)))
        for M in (0.0, 1.0, 5.0, M_BINARY32):
            rep = truncated_argmax_probs(p, M)
            ok = rep.shifted > 1e-300
            assert np.allclose(np.exp(rep.log_shifted[ok]), rep.shifted[ok], rtol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_log_and_ratio_forms_agree(K, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(K), size=64)
    u = rng.random(p.shape)
    for mode in (BINARY64, BINARY32):
        assert np.array_equal(gumbel_max_categorical(p, mode, u=u, form="log"),
                              gumbel_max_categorical(p, mode, u=u, form="ratio"))


def test_compiled_counts_match_closed_form():
    p = np.array([0.05, 0.15, 0.3, 0.5])
    n = 1_000_000
    for M in (0.0, 2.0):
        freq = truncated_argmax_counts(p, M, n, seed=9) / n
        shifted = truncated_argmax_probs(p, M).shifted
        assert np.all(np.abs(freq - shifted) <= 4 * np.sqrt(shifted * (1 - shifted) / n))
