"""Domain types shared by every other module.

Tokens are integers ``0..m-1``; the mask token is ``m``. Sequences are plain
int64 numpy arrays (one row per chain when batched). Predictors return class
probabilities over the ``m`` data tokens only, the mask slot being implicitly 0.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_prob_vector, check_sequences, check_time

_BISECT_ITERS = 64


@dataclass(frozen=True)
class Vocabulary:
    size: int

    def __post_init__(self):
        if int(self.size) < 1:
            raise ValueError("vocabulary needs at least one data token")

    @property
    def mask_id(self):
        return self.size


def all_mask(length, vocab_size, batch=None):
    shape = (length,) if batch is None else (batch, length)
    return np.full(shape, vocab_size, dtype=np.int64)


def mask_count(seq, vocab_size):
    """Number of masked positions (token id ``vocab_size``) along the last axis."""
    return np.sum(np.asarray(seq) == vocab_size, axis=-1)


class NoiseSchedule:
    """Monotone schedule ``alpha(t)`` with ``alpha(0) = 1`` and ``alpha(1) = 0``.

    ``alpha`` must accept numpy arrays. ``alpha_inv`` falls back to vectorised
    bisection and ``alpha_prime`` to a central difference when not supplied.
    """

    def __init__(self, alpha, alpha_inv=None, alpha_prime=None, kind="custom", check=True):
        self.kind = kind
        self._alpha = alpha
        self._alpha_inv = alpha_inv
        self._alpha_prime = alpha_prime
        if check:
            self._check()

    def _check(self):
        grid = np.linspace(0.0, 1.0, 10_001)
        a = np.asarray(self._alpha(grid), dtype=np.float64)
        if abs(a[0] - 1.0) > 1e-12 or abs(a[-1]) > 1e-12:
            raise ValueError("schedule must satisfy alpha(0)=1 and alpha(1)=0")
        if np.any(np.diff(a) >= 0):
            raise ValueError("schedule must be strictly decreasing")

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any((t < 0) | (t > 1)):
            raise ValueError("time outside [0, 1]")
        out = np.asarray(self._alpha(t), dtype=np.float64)
        return float(out) if out.ndim == 0 else out

    def alpha_inv(self, a):
        a = np.asarray(a, dtype=np.float64)
        if np.any((a < 0) | (a > 1)):
            raise ValueError("alpha value outside [0, 1]")
        if self._alpha_inv is not None:
            out = np.asarray(self._alpha_inv(a), dtype=np.float64)
        else:
            out = self._bisect(a)
        return float(out) if out.ndim == 0 else out

    def _bisect(self, a):
        lo = np.zeros_like(a)
        hi = np.ones_like(a)
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            above = np.asarray(self._alpha(mid)) > a
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)

    def alpha_prime(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self._alpha_prime is not None:
            out = np.asarray(self._alpha_prime(t), dtype=np.float64)
        else:
            h = 1e-6
            lo = np.clip(t - h, 0.0, 1.0)
            hi = np.clip(t + h, 0.0, 1.0)
            out = (np.asarray(self._alpha(hi)) - np.asarray(self._alpha(lo))) / (hi - lo)
        return float(out) if out.ndim == 0 else out

    def total_noise(self, t):
        """Cumulative noise ``sigma_bar(t) = -log alpha(t)``."""
        with np.errstate(divide="ignore"):
            return -np.log(self.alpha(t))

    def rate(self, t):
        """Noise rate ``sigma(t) = -alpha'(t) / alpha(t)``."""
        with np.errstate(divide="ignore"):
            return -self.alpha_prime(t) / self.alpha(t)

    def __repr__(self):
        return f"NoiseSchedule(kind={self.kind!r})"


def linear_schedule():
    return NoiseSchedule(
        alpha=lambda t: 1.0 - t,
        alpha_inv=lambda a: 1.0 - a,
        alpha_prime=lambda t: -np.ones_like(t),
        kind="linear",
        check=False,
    )


def power_schedule(power):
    """``alpha(t) = (1 - t) ** power``; inverse left to bisection on purpose."""
    return NoiseSchedule(
        alpha=lambda t: (1.0 - t) ** power,
        alpha_prime=lambda t: -power * (1.0 - t) ** (power - 1),
        kind=f"power{power:g}",
    )


def cosine_schedule():
    return NoiseSchedule(
        alpha=lambda t: np.cos(0.5 * np.pi * t),
        alpha_inv=lambda a: 2.0 / np.pi * np.arccos(a),
        alpha_prime=lambda t: -0.5 * np.pi * np.sin(0.5 * np.pi * t),
        kind="cosine",
    )


def get_schedule(schedule):
    if isinstance(schedule, NoiseSchedule):
        return schedule
    if schedule in (None, "linear"):
        return linear_schedule()
    if schedule == "cosine":
        return cosine_schedule()
    if isinstance(schedule, str) and schedule.startswith("power"):
        return power_schedule(float(schedule[5:]))
    raise ValueError(f"unknown schedule {schedule!r}")


def schedule_alpha(schedule, t):
    return schedule.alpha(check_time(t))


def schedule_alpha_inv(schedule, a):
    a = float(a)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"alpha value {a} outside [0, 1]")
    return schedule.alpha_inv(a)


def apply_temperature(p, T):
    """Sharpen (T < 1) or flatten (T > 1) probabilities along the last axis.

    Computes ``p ** (1/T)`` renormalised, in log space so tiny entries survive
    small temperatures. Zero entries stay zero.
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    p = np.asarray(p, dtype=np.float64)
    if T == 1.0:
        return p
    with np.errstate(divide="ignore"):
        logp = np.log(p) / T
    logp -= np.max(logp, axis=-1, keepdims=True)
    q = np.exp(logp)
    return q / q.sum(axis=-1, keepdims=True)


class Predictor:
    """Maps a (batch of) partially masked sequences and time to class probabilities.

    Subclasses implement ``_predict(X, t)`` for a 2-d int array ``X`` and a time
    vector ``t`` of matching length, returning ``(B, L, m)`` probabilities. The
    public :meth:`predict` pins unmasked positions to the one-hot of their token.
    """

    time_dependent = False

    def __init__(self, vocab_size, length):
        self.vocab_size = int(vocab_size)
        self.length = int(length)

    @property
    def mask_id(self):
        return self.vocab_size

    def _predict(self, X, t):
        raise NotImplementedError

    def predict(self, X, t=1.0):
        X = np.asarray(X, dtype=np.int64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.length:
            raise ValueError(f"expected sequences of length {self.length}, got {X.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
        out = np.array(self._predict(X, t), dtype=np.float64)
        unmasked = X != self.mask_id
        if unmasked.any():
            out[unmasked] = 0.0
            b, l = np.nonzero(unmasked)
            out[b, l, X[b, l]] = 1.0
        return out[0] if single else out

    __call__ = predict

    def evaluate(self, seq, t=1.0):
        """Single-sequence form of :meth:`predict`; returns ``(L, m)``."""
        seq = check_sequences(seq, self.vocab_size, ensure_2d=False)
        return self.predict(seq, t)


class FactorizedPredictor(Predictor):
    """State- and time-independent: masked position ``l`` always gets ``table[l]``."""

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        for row in table:
            check_prob_vector(row, name="predictor row")
        super().__init__(table.shape[1], table.shape[0])
        self.table = table

    def _predict(self, X, t):
        return np.broadcast_to(self.table, (X.shape[0],) + self.table.shape)


class UniformPredictor(FactorizedPredictor):
    """Dummy constant predictor used for cost and NFE accounting."""

    def __init__(self, vocab_size, length):
        super().__init__(np.full((length, vocab_size), 1.0 / vocab_size))


class TimeInterpolatedPredictor(Predictor):
    """Probabilities moving linearly in time: ``(1 - t) * start + t * end``.

    ``start`` and ``end`` are ``(L, m)`` tables; any convex combination is a valid
    probability vector, so the output needs no clipping.
    """

    time_dependent = True

    def __init__(self, start, end):
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        if start.shape != end.shape:
            raise ValueError("start and end tables must share a shape")
        super().__init__(start.shape[1], start.shape[0])
        self.start = start
        self.end = end

    def _predict(self, X, t):
        w = t[:, None, None]
        return (1.0 - w) * self.start + w * self.end


class FunctionPredictor(Predictor):
    """Wraps ``fn(X, t) -> (B, L, m)``."""

    def __init__(self, fn, vocab_size, length, time_dependent=False):
        super().__init__(vocab_size, length)
        self.fn = fn
        self.time_dependent = time_dependent

    def _predict(self, X, t):
        return self.fn(X, t)


class TemperedPredictor(Predictor):
    def __init__(self, base, temperature):
        super().__init__(base.vocab_size, base.length)
        self.base = base
        self.temperature = float(temperature)
        self.time_dependent = base.time_dependent

    def _predict(self, X, t):
        return apply_temperature(self.base._predict(X, t), self.temperature)


@dataclass
class SampleTrace:
    """Cost accounting for one sampler run (a batch of chains).

    ``unmask_order`` and ``transition_times`` hold one list per chain.
    """

    nfe: int = 0
    ncs: int = 0
    unmask_order: list = field(default_factory=list)
    transition_times: list = field(default_factory=list)
    wall_nanos: int = 0

    def start(self, batch):
        self.unmask_order = [[] for _ in range(batch)]
        self.transition_times = [[] for _ in range(batch)]

    def record(self, chain, position, time):
        self.unmask_order[chain].append(int(position))
        self.transition_times[chain].append(float(time))
