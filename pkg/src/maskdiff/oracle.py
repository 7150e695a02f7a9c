"""Exact ground truth for tiny instances.

Toy data distributions are full probability tables over all ``m**L``
sequences in lexicographic order (position 0 most significant). From a table
we get the posterior-mean predictor and, by dynamic programming over partially
masked states, the exact output law of several samplers.
"""

import itertools
import json
from functools import cached_property

import numpy as np

from ._validation import check_random_state, check_sequences
from .core import FactorizedPredictor, Predictor, apply_temperature, get_schedule
from .samplers import DecodingSchedule, SamplerConfig, ancestral_mixture, sample, uniform_grid

MAX_LENGTH = 6
MAX_VOCAB = 8
MAX_ENUM_STATES = 4096
TOY_KINDS = ("two-point", "dirichlet", "markov")


def _lex_sequences(L, m):
    return np.array(list(itertools.product(range(m), repeat=L)), dtype=np.int64).reshape(-1, L)


def _encode(X, base):
    X = np.asarray(X, dtype=np.int64)
    weights = base ** np.arange(X.shape[-1] - 1, -1, -1, dtype=np.int64)
    return X @ weights


class ToyDistribution:
    """Probability table over every length-``L`` sequence of ``m`` tokens."""

    def __init__(self, L, m, probs, name="custom"):
        L, m = int(L), int(m)
        if not 1 <= L <= MAX_LENGTH or not 1 <= m <= MAX_VOCAB:
            raise ValueError(f"toy needs 1 <= L <= {MAX_LENGTH} and 1 <= m <= {MAX_VOCAB}")
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (m**L,):
            raise ValueError(f"expected {m**L} probabilities, got shape {probs.shape}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("toy table must be non-negative and sum to 1")
        self.L, self.m, self.probs, self.name = L, m, probs, name

    @cached_property
    def sequences(self):
        return _lex_sequences(self.L, self.m)

    def index(self, X):
        return _encode(X, self.m)

    def prob(self, X):
        return self.probs[self.index(X)]

    def marginals(self):
        out = np.zeros((self.L, self.m))
        for l in range(self.L):
            out[l] = np.bincount(self.sequences[:, l], weights=self.probs, minlength=self.m)
        return out

    def entropy(self):
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def sample(self, n, rng=None):
        rng = check_random_state(rng)
        return self.sequences[rng.choice(self.probs.size, size=n, p=self.probs)]

    def to_dict(self):
        return {"L": self.L, "m": self.m, "probs": self.probs.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d, name="custom"):
        return cls(d["L"], d["m"], d["probs"], name=name)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), name=str(path))

    @classmethod
    def from_samples(cls, X, m):
        """Empirical table of observed fully unmasked sequences."""
        X = check_sequences(X, m, allow_mask=False)
        counts = np.bincount(_encode(X, m), minlength=m ** X.shape[1]).astype(np.float64)
        return cls(X.shape[1], m, counts / counts.sum(), name="empirical")

    def __repr__(self):
        return f"ToyDistribution(name={self.name!r}, L={self.L}, m={self.m})"


def make_toy(kind, L=3, m=3, seed=0):
    """Bundled toys: a two-sequence support, a seeded Dirichlet table, a Markov chain."""
    if kind == "two-point":
        if m < 2:
            raise ValueError("two-point toy needs m >= 2")
        probs = np.zeros(m**L)
        probs[0] = probs[_encode(np.ones(L, dtype=np.int64), m)] = 0.5
    elif kind == "dirichlet":
        probs = np.random.default_rng(seed).dirichlet(np.full(m**L, 0.5))
    elif kind == "markov":
        rng = np.random.default_rng(seed)
        init = rng.dirichlet(np.ones(m))
        trans = rng.dirichlet(np.full(m, 0.3), size=m)
        seqs = _lex_sequences(L, m)
        probs = init[seqs[:, 0]]
        for l in range(1, L):
            probs = probs * trans[seqs[:, l - 1], seqs[:, l]]
    else:
        raise ValueError(f"unknown toy {kind!r}; choose from {', '.join(TOY_KINDS)}")
    return ToyDistribution(L, m, probs / probs.sum(), name=kind)


def bundled_toys(L=3, m=3, seed=0):
    return [make_toy(kind, L, m, seed) for kind in TOY_KINDS]


def skewed_product_predictor(L, m, head=0.4):
    """Optimal predictor of i.i.d. tokens with one heavy class and a flat tail.

    For a product distribution the posterior at a masked position is just its
    marginal, so the factorized table is exact at any vocabulary size.
    """
    p = np.full(m, (1.0 - head) / (m - 1))
    p[0] = head
    return FactorizedPredictor(np.tile(p, (L, 1)))


class OptimalPredictor(Predictor):
    """Posterior mean of the clean token given the unmasked tokens.

    Enumerates all table entries consistent with the observed pattern. Patterns
    with no consistent mass fall back to uniform and bump ``zero_posterior``.
    """

    def __init__(self, toy):
        super().__init__(toy.m, toy.L)
        self.toy = toy
        self.zero_posterior = 0
        self._onehot = np.eye(toy.m)[toy.sequences]
        self._cache = {}

    def _row(self, x):
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            seen = x != self.mask_id
            consistent = np.all(self.toy.sequences[:, seen] == x[seen], axis=1)
            w = self.toy.probs * consistent
            total = w.sum()
            if total > 0:
                hit = np.tensordot(w / total, self._onehot, axes=1)
            else:
                self.zero_posterior += 1
                hit = np.full((self.length, self.vocab_size), 1.0 / self.vocab_size)
            self._cache[key] = hit
        return hit

    def _predict(self, X, t):
        return np.stack([self._row(x) for x in X])


def optimal_predictor(toy):
    return OptimalPredictor(toy)


class ExactDistribution:
    """Probability mass over all ``m**L`` fully unmasked sequences, lexicographic."""

    def __init__(self, L, m, mass, seed=None, n_samples=None):
        mass = np.asarray(mass, dtype=np.float64)
        if mass.shape != (m**L,):
            raise ValueError(f"expected {m**L} masses, got {mass.shape}")
        if abs(mass.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {mass.sum()!r}, not 1")
        self.L, self.m, self.mass = int(L), int(m), mass
        self.seed, self.n_samples = seed, n_samples

    @cached_property
    def support(self):
        return _lex_sequences(self.L, self.m)

    def prob(self, seq):
        return float(self.mass[_encode(seq, self.m)])

    def marginals(self):
        return np.stack([
            np.bincount(self.support[:, l], weights=self.mass, minlength=self.m)
            for l in range(self.L)
        ])

    def as_dict(self):
        return {"".join(map(str, s)): float(p) for s, p in zip(self.support, self.mass) if p > 0}

    @classmethod
    def from_toy(cls, toy):
        return cls(toy.L, toy.m, toy.probs)


def total_variation(a, b):
    """Half the L1 distance between two distributions on the same universe."""
    pa = a.mass if isinstance(a, ExactDistribution) else np.asarray(a, dtype=np.float64)
    pb = b.mass if isinstance(b, ExactDistribution) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError("distributions live on different universes")
    return float(min(1.0, 0.5 * np.abs(pa - pb).sum()))


def empirical_distribution(X, vocab_size, seed=None):
    X = check_sequences(X, vocab_size, allow_mask=False)
    if X.shape[0] == 0:
        raise ValueError("cannot build a distribution from zero samples")
    counts = np.bincount(_encode(X, vocab_size), minlength=vocab_size ** X.shape[1])
    return ExactDistribution(X.shape[1], vocab_size, counts / counts.sum(),
                             seed=seed, n_samples=X.shape[0])


def sampler_distribution(config, predictor, n_samples, seed=0, schedule=None, decoding=None,
                         chunk=20_000):
    """Empirical output law of a sampler, run in batches of at most ``chunk`` chains.

    Each batch gets its own child of ``seed``, so the result depends only on
    ``(config, n_samples, seed, chunk)``.
    """
    if n_samples < 1:
        raise ValueError("cannot build a distribution from zero samples")
    children = np.random.SeedSequence(seed).spawn(-(-n_samples // chunk))
    parts = []
    left = n_samples
    for child in children:
        b = min(chunk, left)
        cfg = SamplerConfig(config.method, config.steps, config.precision,
                            config.temperature, b, seed, config.grid)
        X, _ = sample(cfg, predictor, schedule, np.random.default_rng(child), decoding)
        parts.append(X)
        left -= b
    return empirical_distribution(np.concatenate(parts), predictor.vocab_size, seed=seed)


# --- exact sampler laws by dynamic programming over partially masked states ---

def _check_enumerable(predictor):
    L, m = predictor.length, predictor.vocab_size
    if m**L > MAX_ENUM_STATES:
        raise ValueError(f"state space m**L = {m**L} exceeds {MAX_ENUM_STATES}")
    return L, m


def _final(states, L, m):
    """Collapse a {masked-state bytes: prob} map of complete sequences to an ExactDistribution."""
    mass = np.zeros(m**L)
    for key, p in states.items():
        x = np.frombuffer(key, dtype=np.int64)
        if np.any(x == m):
            raise RuntimeError("sampler law left masked tokens")
        mass[_encode(x, m)] += p
    return ExactDistribution(L, m, mass / mass.sum())


def _subset_fill(x, mu, k, m):
    """Law after unmasking a uniform random ``k``-subset of masked positions of ``x``,
    each token drawn independently from ``mu[position]``."""
    masked = np.flatnonzero(x == m)
    k = min(k, masked.size)
    subsets = list(itertools.combinations(masked, k))
    out = {}
    for sub in subsets:
        for tokens in itertools.product(range(m), repeat=k):
            p = 1.0 / len(subsets)
            for pos, v in zip(sub, tokens):
                p *= mu[pos, v]
            if p == 0.0:
                continue
            y = x.copy()
            y[list(sub)] = tokens
            key = y.tobytes()
            out[key] = out.get(key, 0.0) + p
    return out


def _predict_states(predictor, keys, t, temperature):
    X = np.stack([np.frombuffer(k, dtype=np.int64) for k in keys])
    mu = predictor.predict(X, t)
    return apply_temperature(mu, temperature) if temperature != 1.0 else mu


def parallel_exact_distribution(predictor, decoding, temperature=1.0):
    """Exact law of first-hitting parallel decoding for a time-independent predictor."""
    L, m = _check_enumerable(predictor)
    if predictor.time_dependent:
        raise ValueError("exact parallel law needs a time-independent predictor")
    if not isinstance(decoding, DecodingSchedule):
        decoding = DecodingSchedule(decoding)
    decoding.check(L)
    states = {np.full(L, m, dtype=np.int64).tobytes(): 1.0}
    for k in decoding.counts:
        keys = list(states)
        mus = _predict_states(predictor, keys, 1.0, temperature)
        nxt = {}
        for key, mu in zip(keys, mus):
            p = states[key]
            for y, q in _subset_fill(np.frombuffer(key, dtype=np.int64).copy(), mu, k, m).items():
                nxt[y] = nxt.get(y, 0.0) + p * q
        states = nxt
    return _final(states, L, m)


def order_enum_distribution(predictor, temperature=1.0):
    """Exact law of random-order token-by-token decoding (the first-hitting sampler)."""
    return parallel_exact_distribution(predictor, (1,) * predictor.length, temperature)


def corrector_exact_distribution(predictor, decoding, temperature=1.0):
    """Exact law of the predictor-corrector first-hitting sampler.

    The DP tracks pairs (snapshot before the previous step, current state).
    """
    L, m = _check_enumerable(predictor)
    if predictor.time_dependent:
        raise ValueError("exact corrector law needs a time-independent predictor")
    if not isinstance(decoding, DecodingSchedule):
        decoding = DecodingSchedule(decoding)
    decoding.check(L)
    start = np.full(L, m, dtype=np.int64).tobytes()
    pairs = {(start, start): 1.0}
    counts = decoding.counts
    for step, k in enumerate(counts):
        keys = sorted({cur for _, cur in pairs})
        mus = dict(zip(keys, _predict_states(predictor, keys, 1.0, temperature)))
        nxt = {}
        for (snap, cur), p in pairs.items():
            mu = mus[cur]
            if step == 0:
                corrected = {cur: 1.0}
            else:
                snap_x = np.frombuffer(snap, dtype=np.int64).copy()
                corrected = _subset_fill(snap_x, mu, counts[step - 1], m)
            for mid, q in corrected.items():
                mid_x = np.frombuffer(mid, dtype=np.int64).copy()
                for y, r in _subset_fill(mid_x, mu, k, m).items():
                    nxt[(mid, y)] = nxt.get((mid, y), 0.0) + p * q * r
        pairs = nxt
    final = {}
    for (_, cur), p in pairs.items():
        final[cur] = final.get(cur, 0.0) + p
    return _final(final, L, m)


def ancestral_exact_distribution(predictor, steps, schedule=None, grid=None, temperature=1.0):
    """Exact law of ancestral sampling on a time grid (default uniform, ``steps`` steps).

    Positions transition independently given the state, so each step is a
    product of per-position mixtures; the DP runs over all ``(m+1)**L`` states.
    """
    L, m = _check_enumerable(predictor)
    schedule = get_schedule(schedule)
    grid = uniform_grid(steps) if grid is None else np.asarray(grid, dtype=np.float64)
    states = {np.full(L, m, dtype=np.int64).tobytes(): 1.0}
    for i in range(len(grid) - 1, 0, -1):
        t, s = grid[i], grid[i - 1]
        keys = list(states)
        mus = _predict_states(predictor, keys, t, temperature)
        nxt = {}
        for key, mu in zip(keys, mus):
            x = np.frombuffer(key, dtype=np.int64)
            masked = np.flatnonzero(x == m)
            if masked.size == 0:
                nxt[key] = nxt.get(key, 0.0) + states[key]
                continue
            laws = ancestral_mixture(mu[masked], s, t, schedule)
            for tokens in itertools.product(range(m + 1), repeat=masked.size):
                p = states[key] * np.prod(laws[np.arange(masked.size), tokens])
                if p == 0.0:
                    continue
                y = x.copy()
                y[masked] = tokens
                k = y.tobytes()
                nxt[k] = nxt.get(k, 0.0) + p
        states = nxt
    return _final(states, L, m)
