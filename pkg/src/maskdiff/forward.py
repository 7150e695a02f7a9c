"""Forward masking processes and the count distributions behind the discrete ELBO."""

import numpy as np
from scipy import stats

from ._validation import check_random_state, check_sequences, check_time


def forward_mask_continuous(x0, t, schedule, rng=None, vocab_size=None):
    """Mask every token of ``x0`` independently with probability ``1 - alpha(t)``.

    ``x0`` may be one sequence or a batch. The mask id is ``vocab_size``
    (defaults to ``x0.max() + 1``, correct whenever ``x0`` is fully unmasked and
    uses the top data token; pass it explicitly otherwise).
    """
    rng = check_random_state(rng)
    x0 = np.asarray(x0, dtype=np.int64)
    m = int(x0.max()) + 1 if vocab_size is None else int(vocab_size)
    check_sequences(x0, m, allow_mask=False)
    keep = schedule.alpha(check_time(t))
    masked = rng.random(x0.shape) >= keep
    return np.where(masked, m, x0)


def forward_mask_discrete(x0, n, rng=None, vocab_size=None):
    """Mask exactly ``n`` positions chosen uniformly without replacement."""
    rng = check_random_state(rng)
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.ndim != 1:
        raise ValueError("forward_mask_discrete takes a single sequence")
    L = x0.size
    if not 0 <= n <= L:
        raise ValueError(f"cannot mask {n} of {L} positions")
    m = int(x0.max()) + 1 if vocab_size is None else int(vocab_size)
    # partial Fisher-Yates: the first n slots of the permutation are the masked set
    perm = np.arange(L)
    for i in range(n):
        j = i + int(rng.integers(L - i))
        perm[i], perm[j] = perm[j], perm[i]
    out = x0.copy()
    out[perm[:n]] = m
    return out


def masked_count_pmf(L, t, schedule):
    """Binomial(L, 1 - alpha(t)) law of the number of masked tokens."""
    q = 1.0 - schedule.alpha(check_time(t))
    return stats.binom.pmf(np.arange(L + 1), L, q)


def sample_beta_alpha(L, n, rng=None, size=None):
    """Draw ``alpha_n ~ Beta(L - n + 1, n)`` via two Gamma variates."""
    if not 1 <= n <= L:
        raise ValueError(f"need 1 <= n <= L, got n={n}, L={L}")
    rng = check_random_state(rng)
    a = rng.standard_gamma(L - n + 1, size)
    b = rng.standard_gamma(n, size)
    return a / (a + b)


def beta_alpha_mode(L, n):
    if L == 1:
        return 0.5
    return (L - n) / (L - 1)
