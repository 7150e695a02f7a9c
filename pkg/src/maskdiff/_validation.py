"""Input validation helpers shared across the package."""

import numbers

import numpy as np

PROB_ATOL = 1e-9


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Accepts None, an int, a SeedSequence or an existing Generator (returned as is).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def spawn_generators(seed, n):
    """Independent child generators split from one master seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def check_prob_vector(p, atol=PROB_ATOL, name="p"):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d probability vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def check_time(t, name="t"):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"{name}={t} outside [0, 1]")
    return t


def check_sequences(X, vocab_size, allow_mask=True, ensure_2d=True):
    """Validate an integer token array against a vocabulary of ``vocab_size`` data tokens.

    Mask is token ``vocab_size``. Returns an int64 array; 1-d input is promoted to
    a single-row batch when ``ensure_2d`` is set.
    """
    X = np.asarray(X)
    if X.dtype.kind not in "iu":
        if X.dtype.kind == "f" and np.all(np.mod(X, 1) == 0):
            X = X.astype(np.int64)
        else:
            raise ValueError("token arrays must hold integers")
    X = X.astype(np.int64, copy=False)
    if ensure_2d and X.ndim == 1:
        X = X[None, :]
    if X.ndim not in (1, 2) or X.shape[-1] == 0:
        raise ValueError(f"expected a non-empty 1-d or 2-d token array, got shape {X.shape}")
    hi = vocab_size if allow_mask else vocab_size - 1
    if X.size and (X.min() < 0 or X.max() > hi):
        raise ValueError(f"tokens must lie in 0..{hi}")
    return X
