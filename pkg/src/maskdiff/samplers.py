"""Reverse-process samplers for masked diffusion models.

Every sampler runs a batch of ``config.batch`` chains in lock-step and returns
``(X, trace)`` with ``X`` of shape ``(B, L)``. One predictor call on the batch
counts as one function evaluation (NFE), matching how a network would be
called. Categorical draws all go through the Gumbel-max trick so the chosen
precision regime applies everywhere, and ``trace.ncs`` counts one unit per
(position, class) pair fed to it, mask class included.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_random_state
from .core import SampleTrace, all_mask, apply_temperature, get_schedule
from .gumbel import BINARY64, PrecisionMode, gumbel_max_categorical

logger = logging.getLogger(__name__)

METHODS = (
    "ancestral",
    "ancestral-cached",
    "fhs",
    "fhs-parallel",
    "fhs-extrapolation",
    "fhs-predictor-corrector",
)


@dataclass(frozen=True)
class DecodingSchedule:
    """Tokens unmasked per outer step, first step first."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts or min(counts) < 1:
            raise ValueError("decoding schedule needs positive per-step counts")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, L, N):
        """Split ``L`` tokens over ``N`` steps as evenly as possible, larger steps first."""
        if not 1 <= N <= L:
            raise ValueError(f"need 1 <= N <= L, got N={N}, L={L}")
        q, r = divmod(L, N)
        return cls(tuple(q + 1 if i < r else q for i in range(N)))

    @property
    def total(self):
        return sum(self.counts)

    def __len__(self):
        return len(self.counts)

    def check(self, L):
        if self.total != L:
            raise ValueError(f"decoding schedule unmasks {self.total} tokens, sequence has {L}")


@dataclass
class SamplerConfig:
    method: str = "fhs"
    steps: int = 64
    precision: PrecisionMode = field(default_factory=lambda: BINARY64)
    temperature: float = 1.0
    batch: int = 1
    seed: int = None
    grid: np.ndarray = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if int(self.steps) < 1 or int(self.batch) < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        self.precision = PrecisionMode.parse(self.precision)


class ChainStreams:
    """Random source for a batch: one shared generator or one generator per chain.

    Per-chain streams keep every chain's draws independent of what the other
    chains do, so two runs differing only in precision stay paired chain by chain.
    """

    def __init__(self, rng, batch):
        self.batch = batch
        if isinstance(rng, ChainStreams):
            rng = rng.per_chain if rng.per_chain is not None else rng.shared
        if isinstance(rng, (list, tuple)):
            if len(rng) != batch:
                raise ValueError(f"got {len(rng)} chain generators for a batch of {batch}")
            self.per_chain = [check_random_state(g) for g in rng]
            self.shared = None
        else:
            self.per_chain = None
            self.shared = check_random_state(rng)

    def random(self, chains, width):
        """Uniforms of shape ``(len(chains), width)``; row i drawn from chain ``chains[i]``.

        ``chains`` must be sorted, as produced by ``np.nonzero`` on a batch.
        """
        if self.per_chain is None:
            return self.shared.random((len(chains), width))
        counts = np.bincount(chains, minlength=self.batch)
        return np.concatenate(
            [g.random((c, width)) for g, c in zip(self.per_chain, counts)] or [np.empty((0, width))]
        )

    def random_rows(self, chains, positions, length, width):
        """Uniforms for the ``(chain, position)`` pairs given, consuming a full
        ``(length, width)`` block per chain whatever the pairs are.

        Fixed consumption keeps each stream aligned across runs that diverge in
        which positions are still masked (common random numbers).
        """
        if self.per_chain is None:
            block = self.shared.random((self.batch, length, width))
        else:
            block = np.stack([g.random((length, width)) for g in self.per_chain])
        return block[chains, positions]

    def uniform_each(self):
        if self.per_chain is None:
            return self.shared.random(self.batch)
        return np.array([g.random() for g in self.per_chain])

    def integers_each(self, high):
        if self.per_chain is None:
            return self.shared.integers(high, size=self.batch)
        return np.array([g.integers(high) for g in self.per_chain])


def uniform_grid(N):
    return np.arange(N + 1) / N


def _probs(predictor, X, t, temperature, trace):
    trace.nfe += 1
    mu = predictor.predict(X, t)
    return apply_temperature(mu, temperature) if temperature != 1.0 else mu


def ancestral_mixture(mu, s, t, schedule):
    """Per-position reverse law from ``t`` to ``s`` for a masked token.

    Returns ``(..., m + 1)`` probabilities, mask last.
    """
    a_s, a_t = schedule.alpha(s), schedule.alpha(t)
    if a_s < a_t:
        raise RuntimeError(f"schedule not monotone: alpha({s})={a_s} < alpha({t})={a_t}")
    mu = np.asarray(mu, dtype=np.float64)
    stay = np.full(mu.shape[:-1] + (1,), (1.0 - a_s) / (1.0 - a_t))
    return np.concatenate([(a_s - a_t) * mu / (1.0 - a_t), stay], axis=-1)


def tweedie_step_probs(x_t, s, t, pred, schedule, vocab_size=None):
    """Absorbing-state Tweedie tau-leaping law of one token, via the score form.

    Works through the cumulative noise ``sigma_bar = -log alpha`` and the score
    ``alpha_t / (1 - alpha_t) * mu``, an algebraically different route to the
    same law as :func:`ancestral_mixture`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    m = pred.shape[-1] if vocab_size is None else int(vocab_size)
    if not s < t:
        raise ValueError("need s < t")
    out = np.zeros(m + 1)
    if x_t != m:
        out[x_t] = 1.0
        return out
    sb_s, sb_t = schedule.total_noise(s), schedule.total_noise(t)
    a_t = np.exp(-sb_t)
    score = a_t / -np.expm1(-sb_t) * pred
    out[:m] = np.expm1(sb_t - sb_s) * score
    out[m] = -np.expm1(-sb_s) / -np.expm1(-sb_t)
    return out


def _draw(probs, chains, precision, streams, trace, u=None):
    trace.ncs += probs.shape[0] * probs.shape[-1]
    if u is None:
        u = streams.random(chains, probs.shape[-1])
    return gumbel_max_categorical(probs, precision, u=u)


def ancestral_step(X, t, s, predictor, schedule, precision=BINARY64, rng=None, trace=None,
                   probs=None, temperature=1.0):
    """One reverse step ``t -> s`` on a batch ``X`` of shape ``(B, L)``.

    ``probs`` lets callers pass cached predictor output; otherwise the predictor
    is evaluated at ``(X, t)``. Returns a new array.
    """
    trace = SampleTrace() if trace is None else trace
    X = np.asarray(X, dtype=np.int64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    streams = ChainStreams(rng, X.shape[0])
    if len(trace.unmask_order) != X.shape[0]:
        trace.start(X.shape[0])
    m = predictor.vocab_size
    masked = X == m
    if not masked.any():
        return X[0].copy() if single else X.copy()
    if probs is None:
        probs = _probs(predictor, X, t, temperature, trace)
    b, l = np.nonzero(masked)
    law = ancestral_mixture(probs[b, l], s, t, schedule)
    u = streams.random_rows(b, l, X.shape[1], m + 1)
    draw = _draw(law, b, precision, streams, trace, u=u)
    out = X.copy()
    out[b, l] = draw
    for chain, pos in zip(b[draw != m], l[draw != m]):
        trace.record(chain, pos, s)
    return out[0] if single else out


def _start(config, predictor, rng):
    trace = SampleTrace()
    trace.start(config.batch)
    streams = ChainStreams(rng, config.batch)
    return trace, streams, all_mask(predictor.length, predictor.vocab_size, config.batch)


def ancestral_sample(config, predictor, schedule=None, rng=None, cache=False):
    """Run ``config.steps`` reverse steps on the uniform grid (or ``config.grid``).

    With ``cache=True`` the predictor is re-evaluated only after a step in which
    some chain of the batch changed, and never once every chain is complete, so
    ``nfe`` equals the number of steps that changed the batch. Outputs are
    identical to the uncached run for a time-independent predictor.
    """
    schedule = get_schedule(schedule)
    trace, rng, X = _start(config, predictor, rng)
    grid = uniform_grid(config.steps) if config.grid is None else np.asarray(config.grid, float)
    t0 = time.perf_counter_ns()
    probs = None
    for i in range(len(grid) - 1, 0, -1):
        t, s = grid[i], grid[i - 1]
        if not cache:
            probs = _probs(predictor, X, t, config.temperature, trace)
        elif probs is None:
            if not (X == predictor.mask_id).any():
                break
            probs = _probs(predictor, X, t, config.temperature, trace)
        X_new = ancestral_step(X, t, s, predictor, schedule, config.precision, rng, trace,
                               probs=probs, temperature=config.temperature)
        if cache and not np.array_equal(X_new, X):
            probs = None
        X = X_new
    trace.wall_nanos = time.perf_counter_ns() - t0
    return X, trace


def cached_sample(config, predictor, schedule=None, rng=None):
    return ancestral_sample(config, predictor, schedule, rng, cache=True)


def first_hitting_time(n, tau_n, u, schedule):
    """Next unmasking time when ``n`` masks remain and the last event was at ``tau_n``."""
    n = np.asarray(n)
    if np.any(n < 1):
        raise ValueError("need at least one masked token")
    u = np.asarray(u, dtype=np.float64)
    a = 1.0 - u ** (1.0 / n) * (1.0 - schedule.alpha(tau_n))
    out = schedule.alpha_inv(np.clip(a, 0.0, 1.0))
    return out


def _pick_masked(X, m, n_masked, streams):
    """Uniformly choose one masked position per row; every row has ``n_masked`` masks."""
    B = X.shape[0]
    k = streams.integers_each(n_masked)
    rows, cols = np.nonzero(X == m)
    cols = cols.reshape(B, n_masked)
    return cols[np.arange(B), k]


def _unmask(X, pos, probs, precision, streams, trace, times):
    """Draw a token at ``pos`` (one per chain) from ``probs[chain, pos]``."""
    B = X.shape[0]
    rows = np.arange(B)
    p = probs[rows, pos]
    law = np.concatenate([p, np.zeros((B, 1))], axis=-1)
    X[rows, pos] = _draw(law, rows, precision, streams, trace)
    for chain in range(B):
        trace.record(chain, pos[chain], times[chain])


def fhs_sample(config, predictor, schedule=None, rng=None):
    """Token-by-token first-hitting sampler: exactly ``L`` predictor calls."""
    return fhs_parallel(config, predictor, schedule, DecodingSchedule((1,) * predictor.length), rng)


def fhs_parallel(config, predictor, schedule=None, decoding=None, rng=None):
    """First-hitting sampler unmasking ``decoding.counts[i]`` tokens per predictor call."""
    return _fhs_generic(config, predictor, schedule, decoding, rng, variant="parallel")


def fhs_extrapolation(config, predictor, schedule=None, decoding=None, rng=None):
    return _fhs_generic(config, predictor, schedule, decoding, rng, variant="extrapolation")


def fhs_predictor_corrector(config, predictor, schedule=None, decoding=None, rng=None):
    return _fhs_generic(config, predictor, schedule, decoding, rng, variant="corrector")


def lagrange_extrapolate(mu, tau, mu_prev, tau_prev, t_new):
    """Two-point Lagrange value at ``t_new`` through ``(tau, mu)`` and ``(tau_prev, mu_prev)``.

    Time arrays are per chain, broadcast over the trailing axes of ``mu``.
    Repeated nodes fall back to ``mu``. Negative entries are clipped and the
    affected rows renormalised.
    """
    tau = np.asarray(tau, float)
    tau_prev = np.asarray(tau_prev, float)
    t_new = np.asarray(t_new, float)
    denom = tau_prev - tau
    safe = denom != 0
    w = np.where(safe, (t_new - tau) / np.where(safe, denom, 1.0), 0.0)
    w = w.reshape(w.shape + (1,) * (mu.ndim - w.ndim))
    out = mu + w * (mu_prev - mu)
    neg = (out < 0).any(axis=-1, keepdims=True)
    if neg.any():
        clipped = np.maximum(out, 0.0)
        out = np.where(neg, clipped / clipped.sum(axis=-1, keepdims=True), out)
    return out


def _fhs_generic(config, predictor, schedule, decoding, rng, variant):
    schedule = get_schedule(schedule)
    L, m = predictor.length, predictor.vocab_size
    decoding = DecodingSchedule.uniform(L, min(config.steps, L)) if decoding is None else decoding
    decoding.check(L)
    trace, rng, X = _start(config, predictor, rng)
    B = config.batch
    tau_l = np.ones(B)
    l = L
    mu = mu_prev = tau_prev = tau_eval = snapshot = None
    counts = decoding.counts
    t0 = time.perf_counter_ns()
    for step, n_tokens in enumerate(counts):
        for i in range(n_tokens):
            u = rng.uniform_each()
            tau_next = first_hitting_time(l, tau_l, u, schedule)
            if i == 0:
                mu = _probs(predictor, X, tau_next, config.temperature, trace)
                tau_eval = tau_next
                if variant == "corrector":
                    if step > 0:
                        X = _correct(X, snapshot, counts[step - 1], mu, config, rng, trace)
                    snapshot = X.copy()
            use = mu
            if variant == "extrapolation" and step > 0:
                use = lagrange_extrapolate(mu, tau_eval, mu_prev, tau_prev, tau_next)
            pos = _pick_masked(X, m, l, rng)
            _unmask(X, pos, use, config.precision, rng, trace, tau_next)
            tau_l = tau_next
            l -= 1
        mu_prev, tau_prev = mu, tau_eval
    trace.wall_nanos = time.perf_counter_ns() - t0
    return X, trace


def _correct(X, snapshot, n_redraw, mu, config, rng, trace):
    """Restore the pre-step snapshot and re-draw its ``n_redraw`` tokens from ``mu``."""
    m = mu.shape[-1]
    X = snapshot.copy()
    available = int(np.sum(X[0] == m))
    if n_redraw > available:
        logger.warning("corrector asked to redraw %d tokens with %d masked; clamping",
                       n_redraw, available)
        n_redraw = available
    for _ in range(n_redraw):
        pos = _pick_masked(X, m, available, rng)
        B = X.shape[0]
        rows = np.arange(B)
        law = np.concatenate([mu[rows, pos], np.zeros((B, 1))], axis=-1)
        X[rows, pos] = _draw(law, rows, config.precision, rng, trace)
        available -= 1
    return X


def sample(config, predictor, schedule=None, rng=None, decoding=None):
    """Dispatch on ``config.method``."""
    method = config.method
    if method == "ancestral":
        return ancestral_sample(config, predictor, schedule, rng)
    if method == "ancestral-cached":
        return cached_sample(config, predictor, schedule, rng)
    if method == "fhs":
        return fhs_sample(config, predictor, schedule, rng)
    if decoding is None:
        decoding = DecodingSchedule.uniform(predictor.length, min(config.steps, predictor.length))
    if method == "fhs-parallel":
        return fhs_parallel(config, predictor, schedule, decoding, rng)
    if method == "fhs-extrapolation":
        return fhs_extrapolation(config, predictor, schedule, decoding, rng)
    return fhs_predictor_corrector(config, predictor, schedule, decoding, rng)
