"""Gumbel-max categorical sampling under finite-precision uniforms.

A uniform drawn on a float grid can never reach 1, so ``-log(-log u)`` is
bounded above by some ``M``: the noise is a right-truncated Gumbel. That
truncation shifts the argmax probabilities in a way that has a closed form,
implemented in :func:`truncated_argmax_probs`.
"""

from dataclasses import dataclass

import numba
import numpy as np

from ._validation import check_prob_vector, check_random_state

F32_GRID = 2.0**-24
F64_GRID = 2.0**-53


def _max_gumbel_from_grid(eps):
    return float(-np.log(-np.log1p(-eps)))


M_BINARY32 = _max_gumbel_from_grid(F32_GRID)
M_BINARY64 = _max_gumbel_from_grid(F64_GRID)


@dataclass(frozen=True)
class PrecisionMode:
    """How uniforms feeding the Gumbel transform are produced.

    ``binary64``: native doubles on the 2**-53 grid. ``binary32-emulated``:
    doubles floored onto the 2**-24 grid, reproducing float32 truncation.
    ``exact-truncated``: exact inverse-CDF draws from a Gumbel truncated at ``M``.
    """

    kind: str = "binary64"
    M: float = None

    def __post_init__(self):
        if self.kind not in ("binary64", "binary32-emulated", "exact-truncated"):
            raise ValueError(f"unknown precision kind {self.kind!r}")
        if self.kind == "exact-truncated" and self.M is None:
            raise ValueError("exact-truncated mode needs M")

    @classmethod
    def parse(cls, text):
        """Parse the CLI spelling: ``f64``, ``f32emu`` or ``truncM=<x>``."""
        if isinstance(text, cls):
            return text
        text = str(text).strip()
        if text in ("f64", "binary64"):
            return cls("binary64")
        if text in ("f32emu", "f32", "binary32-emulated"):
            return cls("binary32-emulated")
        if text.startswith("truncM="):
            return cls("exact-truncated", float(text[len("truncM="):]))
        raise ValueError(f"unknown precision {text!r}; use f64, f32emu or truncM=<x>")

    @property
    def label(self):
        return {
            "binary64": "f64",
            "binary32-emulated": "f32emu",
        }.get(self.kind, f"truncM={self.M!r}")


BINARY64 = PrecisionMode("binary64")
BINARY32 = PrecisionMode("binary32-emulated")


def max_gumbel_for_precision(mode):
    mode = PrecisionMode.parse(mode)
    if mode.kind == "binary64":
        return M_BINARY64
    if mode.kind == "binary32-emulated":
        return M_BINARY32
    return float(mode.M)


def _gumbel_cdf(x):
    return np.exp(-np.exp(-x))


def sample_truncated_gumbel(M, rng=None, size=None, u=None):
    """Standard Gumbel conditioned on ``g <= M`` by inverse CDF.

    ``u`` may be supplied directly (plug-in evaluation); otherwise it is drawn
    from ``rng``. ``M = inf`` gives the untruncated Gumbel.
    """
    if u is None:
        u = check_random_state(rng).random(size)
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore"):
        g = -np.log(-np.log(u * _gumbel_cdf(M)))
    return float(g) if g.ndim == 0 else g


_LOWEST = -np.finfo(np.float64).max


def transform_uniforms(u, mode):
    """Map raw float64 uniforms to what the given precision regime would produce."""
    if mode.kind == "binary32-emulated":
        return np.floor(u * 2.0**24) * F32_GRID
    if mode.kind == "exact-truncated":
        return u * _gumbel_cdf(mode.M)
    return u


def uniforms(shape, mode, rng):
    return transform_uniforms(rng.random(shape), mode)


def gumbel_noise(shape, mode, rng, u=None):
    u = uniforms(shape, mode, rng) if u is None else transform_uniforms(u, mode)
    with np.errstate(divide="ignore"):
        g = -np.log(-np.log(u))
    # u == 0 only happens on a coarse grid; map it to the lowest finite value so a
    # positive-probability class still beats every zero-probability one.
    return np.maximum(g, _LOWEST)


def gumbel_max_categorical(p, mode=BINARY64, rng=None, form="log", u=None):
    """Draw class indices by the Gumbel-max trick along the last axis of ``p``.

    ``form="log"`` uses ``argmax(log p + g)``; ``form="ratio"`` uses the cheaper
    ``argmax(p / -log u)``, equal for identical uniforms. Raw uniforms may be
    passed as ``u`` (same shape as ``p``) instead of an ``rng``. Zero-probability
    classes are never returned; ties go to the lowest index.
    """
    mode = PrecisionMode.parse(mode)
    p = np.asarray(p, dtype=np.float64)
    if u is None:
        u = check_random_state(rng).random(p.shape)
    u = transform_uniforms(np.asarray(u, dtype=np.float64), mode)
    with np.errstate(divide="ignore"):
        if form == "log":
            g = np.maximum(-np.log(-np.log(u)), _LOWEST)
            scores = np.where(p > 0, np.log(p) + g, -np.inf)
        elif form == "ratio":
            scores = np.where(p > 0, p / -np.log(u), -np.inf)
        else:
            raise ValueError("form must be 'log' or 'ratio'")
    out = np.argmax(scores, axis=-1)
    return int(out) if out.ndim == 0 else out


@dataclass
class TruncationReport:
    original: np.ndarray
    shifted: np.ndarray
    M: float
    beta: np.ndarray
    order: np.ndarray
    log_shifted: np.ndarray = None

    def to_dict(self):
        return {
            "M": self.M,
            "original": self.original.tolist(),
            "shifted": self.shifted.tolist(),
            "beta": self.beta.tolist(),
            "order": self.order.tolist(),
        }


def truncated_argmax_probs(p, M):
    """Exact argmax law of ``log p_i + g_i`` with ``g_i`` Gumbel truncated at ``M``.

    Positive classes are sorted ascending; ``beta[j]`` is the j-th weight in that
    order (zero classes excluded) and ``shifted[n] = p[n] * cumsum(beta)[rank n]``.
    """
    p = check_prob_vector(p)
    M = float(M)
    pos = np.flatnonzero(p > 0)
    order = pos[np.argsort(p[pos], kind="stable")]
    pi = p[order]
    K = pi.size
    c = np.exp(-M)
    tail = np.cumsum(pi[::-1])[::-1]
    idx = np.arange(1, K + 1)
    hi = (K + 1 - idx - tail / pi) * c
    prev = np.concatenate(([0.0], pi[:-1]))
    with np.errstate(divide="ignore"):
        lo = np.where(prev > 0, (K + 1 - idx - tail / np.where(prev > 0, prev, 1.0)) * c, -np.inf)
    # exp(lo) * expm1(hi - lo) avoids cancellation when the exponents are close
    gap = hi - lo
    with np.errstate(invalid="ignore", over="ignore"):
        diff = np.where(
            gap < 1.0, np.exp(lo) * np.expm1(np.minimum(gap, 1.0)), np.exp(hi) - np.exp(lo)
        )
    beta = np.maximum(diff, 0.0) / tail
    shifted_sorted = pi * np.cumsum(beta)
    shifted = np.zeros_like(p)
    shifted[order] = shifted_sorted
    # same quantities in log space, for classes whose shifted mass underflows
    with np.errstate(divide="ignore"):
        log_beta = hi + np.log(-np.expm1(np.minimum(lo - hi, 0.0))) - np.log(tail)
        log_shifted = np.full_like(p, -np.inf)
        log_shifted[order] = np.log(pi) + np.logaddexp.accumulate(log_beta)
    return TruncationReport(original=p, shifted=shifted, M=M, beta=beta, order=order,
                            log_shifted=log_shifted)


@numba.njit(cache=True, fastmath=True)
def _truncated_argmax_counts(p, c, n_draws, seed):
    np.random.seed(seed)
    K = p.shape[0]
    counts = np.zeros(K, dtype=np.int64)
    for _ in range(n_draws):
        best = -1.0
        arg = 0
        for i in range(K):
            if p[i] <= 0.0:
                continue
            # -log(u * F(M)) = -log u + exp(-M): truncated Gumbel in ratio form
            r = p[i] / (-np.log(1.0 - np.random.random()) + c)
            if r > best:
                best = r
                arg = i
        counts[arg] += 1
    return counts


def truncated_argmax_counts(p, M, n_draws, seed=0):
    """Monte-Carlo class counts of truncated-Gumbel argmax sampling (compiled loop)."""
    p = np.ascontiguousarray(check_prob_vector(p))
    c = float(np.exp(-M))
    return _truncated_argmax_counts(p, c, int(n_draws), int(seed) % (2**32))
