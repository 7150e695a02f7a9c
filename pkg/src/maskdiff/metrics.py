"""Likelihood bounds, sample-quality metrics, NFE accounting and cost modelling."""

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from ._validation import check_random_state, check_sequences
from .core import get_schedule, mask_count
from .forward import sample_beta_alpha

CLIP_FLOOR = 1e-12
METRIC_COLUMNS = ("run_id", "metric", "value", "samples", "seed")


def _masked_inputs(x0, m, subsets):
    """One row per subset: ``x0`` with the subset's positions masked."""
    X = np.repeat(x0[None, :], len(subsets), axis=0)
    for r, sub in enumerate(subsets):
        X[r, list(sub)] = m
    return X


def _all_subsets(L):
    return [sub for k in range(1, L + 1) for sub in itertools.combinations(range(L), k)]


def _log_true(mu, x0, subsets):
    """Sum over masked positions of log mu[position, x0[position]], per subset row."""
    out = np.empty(len(subsets))
    with np.errstate(divide="ignore"):
        for r, sub in enumerate(subsets):
            idx = list(sub)
            out[r] = np.log(mu[r, idx, x0[idx]]).sum()
    return out


def nelbo_continuous(x0, predictor, schedule=None, n_points=2048, inner="exact", rng=None):
    """Continuous-time negative ELBO of one clean sequence, by midpoint quadrature.

    The inner expectation over masking patterns is exact (all ``2**L`` subsets)
    when ``inner="exact"`` or Monte Carlo with ``inner`` draws per node. The
    ``alpha' / (1 - alpha)`` factor is folded into the subset probabilities so
    no node divides by zero.
    """
    schedule = get_schedule(schedule)
    m = predictor.vocab_size
    x0 = check_sequences(x0, m, allow_mask=False, ensure_2d=False)
    L = x0.size
    t = (np.arange(n_points) + 0.5) / n_points
    a = schedule.alpha(t)
    da = schedule.alpha_prime(t)
    if inner == "exact":
        if L > 12:
            raise ValueError("exact inner enumeration limited to L <= 12")
        subsets = _all_subsets(L)
        sizes = np.array([len(s) for s in subsets])
        X = _masked_inputs(x0, m, subsets)
        # alpha' (1-a)^(k-1) a^(L-k): the subset probability divided by (1 - alpha)
        w = da[:, None] * (1.0 - a[:, None]) ** (sizes - 1) * a[:, None] ** (L - sizes)
        if predictor.time_dependent:
            ll = np.array([_log_true(predictor.predict(X, ti), x0, subsets) for ti in t])
        else:
            ll = np.broadcast_to(_log_true(predictor.predict(X, 1.0), x0, subsets), w.shape)
        with np.errstate(invalid="ignore"):
            integrand = np.where(w == 0, 0.0, w * ll).sum(axis=1)
        return float(integrand.mean())
    reps = int(inner)
    rng = check_random_state(rng)
    total = 0.0
    for ti, ai, dai in zip(t, a, da):
        masked = rng.random((reps, L)) >= ai
        X = np.where(masked, m, x0)
        mu = predictor.predict(X, ti)
        with np.errstate(divide="ignore"):
            logp = np.log(mu[:, np.arange(L), x0])
        ll = np.where(masked, logp, 0.0).sum(axis=1)
        total += dai / (1.0 - ai) * ll.mean()
    return float(total / n_points)


def _check_weights(weights, L):
    if weights is None:
        return 1.0 / np.arange(1, L + 1)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (L,):
        raise ValueError(f"need one weight per masked count 1..{L}")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    return w


def nelbo_discrete(x0, predictor, weights=None, mc=None, rng=None, schedule=None, mc_draws=256):
    """Masked-count form of the negative ELBO (default weights ``1/n``).

    Exact over all masked subsets unless ``mc`` gives a number of sampled
    subsets per count. Time-dependent predictors enter through their Beta
    mixture of log-predictions (:func:`mixture_expert_logits`).
    """
    m = predictor.vocab_size
    x0 = check_sequences(x0, m, allow_mask=False, ensure_2d=False)
    L = x0.size
    w = _check_weights(weights, L)
    rng = check_random_state(rng)

    def logp(X):
        if predictor.time_dependent:
            return np.stack([
                mixture_expert_logits(predictor, x, mc_draws, rng, schedule) for x in X
            ])
        with np.errstate(divide="ignore"):
            return np.log(predictor.predict(X, 1.0))

    total = 0.0
    for n in range(1, L + 1):
        if mc is None:
            subsets = list(itertools.combinations(range(L), n))
        else:
            subsets = [tuple(rng.choice(L, size=n, replace=False)) for _ in range(int(mc))]
        X = _masked_inputs(x0, m, subsets)
        lp = logp(X)
        ce = np.array([-lp[r, list(s), x0[list(s)]].sum() for r, s in enumerate(subsets)])
        total += w[n - 1] * ce.mean()
    return float(total)


def mixture_expert_logits(predictor, x_n, mc_draws=256, rng=None, schedule=None):
    """Log of the geometric Beta mixture of predictions for a partially masked sequence.

    Averages ``log mu(x_n, t)`` over ``alpha_t ~ Beta(L - n + 1, n)`` where ``n``
    counts the masks. Returned unnormalised, shape ``(L, m)``.
    """
    m = predictor.vocab_size
    x_n = check_sequences(x_n, m, ensure_2d=False)
    n = int(mask_count(x_n, m))
    L = x_n.size
    if n == 0 or not predictor.time_dependent:
        with np.errstate(divide="ignore"):
            return np.log(predictor.predict(x_n, 1.0))
    schedule = get_schedule(schedule)
    alphas = sample_beta_alpha(L, n, rng, size=int(mc_draws))
    t = schedule.alpha_inv(alphas)
    mu = predictor.predict(np.repeat(x_n[None, :], t.size, axis=0), t)
    with np.errstate(divide="ignore"):
        return np.log(mu).mean(axis=0)


def sequence_entropy(seq, vocab_size):
    """Entropy of the token histogram of one sequence (nats); rows for a batch."""
    X = check_sequences(seq, vocab_size, ensure_2d=True)
    if np.any(X == vocab_size):
        raise ValueError("entropy is undefined for sequences with masked tokens")
    L = X.shape[1]
    counts = np.stack([np.bincount(row, minlength=vocab_size) for row in X]) / L
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(counts > 0, counts * np.log(counts), 0.0).sum(axis=1)
    return float(h[0]) if np.ndim(seq) == 1 else h


def perplexity(nll_total, D):
    if D < 1:
        raise ValueError("need D >= 1")
    return float(np.exp(nll_total / D))


@dataclass
class GenPerplexity:
    value: float
    clipped: int
    tokens: int

    def __float__(self):
        return self.value


def generative_perplexity(samples, evaluator, floor=CLIP_FLOOR):
    """Perplexity of samples under an exact evaluator, via left-to-right conditionals.

    ``evaluator`` is a toy table (conditionals from prefix masses) or a
    predictor (conditionals from masking every later position). Per-token
    probabilities below ``floor`` are raised to it and counted in ``clipped``.
    """
    if hasattr(evaluator, "probs") and hasattr(evaluator, "sequences"):
        m, L = evaluator.m, evaluator.L
        X = check_sequences(samples, m, allow_mask=False)
        cond = np.empty(X.shape)
        for l in range(L):
            num = _prefix_mass(evaluator, X[:, : l + 1])
            den = _prefix_mass(evaluator, X[:, :l]) if l else np.ones(len(X))
            with np.errstate(divide="ignore", invalid="ignore"):
                cond[:, l] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    else:
        m, L = evaluator.vocab_size, evaluator.length
        X = check_sequences(samples, m, allow_mask=False)
        cond = np.empty(X.shape)
        for l in range(L):
            Y = X.copy()
            Y[:, l:] = m
            cond[:, l] = evaluator.predict(Y, 1.0)[:, l][np.arange(len(X)), X[:, l]]
    clipped = int(np.sum(cond < floor))
    nll = -np.log(np.maximum(cond, floor)).sum()
    return GenPerplexity(perplexity(nll, X.size), clipped, int(X.size))


def _prefix_mass(toy, prefix):
    k = prefix.shape[1]
    if k == 0:
        return np.ones(len(prefix))
    # lexicographic order: sequences sharing a prefix form one contiguous block
    block = toy.m ** (toy.L - k)
    sums = toy.probs.reshape(-1, block).sum(axis=1)
    idx = prefix @ (toy.m ** np.arange(k - 1, -1, -1))
    return sums[idx]


def expected_nfe(N, B, L, schedule=None, grid=None):
    """Expected number of predictor calls of cached ancestral sampling.

    A step costs a call iff some of the ``B * L`` tokens unmasks in it; each
    token does so in step ``i`` with probability ``alpha(t_{i-1}) - alpha(t_i)``.
    """
    if min(N, B, L) < 1:
        raise ValueError("N, B and L must be >= 1")
    schedule = get_schedule(schedule)
    grid = np.arange(N + 1) / N if grid is None else np.asarray(grid, dtype=np.float64)
    a = schedule.alpha(grid)
    p = a[:-1] - a[1:]
    with np.errstate(divide="ignore"):
        return float(-np.expm1(B * L * np.log1p(-p)).sum())


def expected_nfe_uniform(N, B, L):
    """Closed form ``N (1 - (1 - 1/N)**(B L))`` for the linear schedule on a uniform grid."""
    if min(N, B, L) < 1:
        raise ValueError("N, B and L must be >= 1")
    with np.errstate(divide="ignore"):
        return float(-N * np.expm1(B * L * np.log1p(-1.0 / N)))


def low_discrepancy_times(B, rng=None):
    """One uniform time in each of ``B`` equal bins: ``(u_i + i) / B``."""
    if B < 1:
        raise ValueError("need B >= 1")
    rng = check_random_state(rng)
    return (rng.random(B) + np.arange(B)) / B


def low_discrepancy_counts(B, L, rng=None):
    """Stratified masked counts ``ceil(L t)`` in ``1..L``."""
    if L < 1:
        raise ValueError("need L >= 1")
    n = np.ceil(L * low_discrepancy_times(B, rng)).astype(np.int64)
    return np.clip(n, 1, L)


def estimator_variance(fn, strategy="iid", B=8, reps=1000, rng=None, L=None):
    """Variance across ``reps`` batches of the batch mean of ``fn``.

    ``fn`` maps an array of times in [0, 1] (or of counts in ``1..L`` when ``L``
    is given) to per-sample losses. ``strategy`` is ``"iid"`` or
    ``"low-discrepancy"``.
    """
    rng = check_random_state(rng)
    if strategy not in ("iid", "low-discrepancy"):
        raise ValueError("strategy must be 'iid' or 'low-discrepancy'")
    means = np.empty(reps)
    for r in range(reps):
        if strategy == "iid":
            t = rng.random(B)
            x = t if L is None else np.clip(np.ceil(L * t).astype(np.int64), 1, L)
        else:
            x = low_discrepancy_times(B, rng) if L is None else low_discrepancy_counts(B, L, rng)
        means[r] = np.mean(fn(x))
    return float(means.var(ddof=1))


def discrete_nelbo_loss(x0, predictor, rng=None):
    """Single-draw unbiased estimator of the discrete NELBO as a function of counts.

    For count ``n``, masks a uniform ``n``-subset and returns ``L / n`` times the
    cross-entropy on it, so the mean over ``n ~ U{1..L}`` is the NELBO.
    """
    m = predictor.vocab_size
    x0 = check_sequences(x0, m, allow_mask=False, ensure_2d=False)
    L = x0.size
    rng = check_random_state(rng)

    def loss(counts):
        counts = np.asarray(counts)
        X = np.repeat(x0[None, :], counts.size, axis=0)
        masks = np.zeros(X.shape, dtype=bool)
        for r, n in enumerate(counts):
            masks[r, rng.choice(L, size=int(n), replace=False)] = True
        X[masks] = m
        with np.errstate(divide="ignore"):
            logp = np.log(predictor.predict(X, 1.0)[:, np.arange(L), x0])
        return -L / counts * np.where(masks, logp, 0.0).sum(axis=1)

    return loss


def cost_model(nfe, ncs, t1, t2):
    """Inference time ``nfe * t1 + ncs * t2``."""
    if min(np.min(nfe), np.min(ncs), t1, t2) < 0:
        raise ValueError("cost model inputs must be non-negative")
    return nfe * t1 + ncs * t2


def speedup_ratio(N, L, t1, lv_t2, nfe=None):
    """Time ratio of cached ancestral sampling to first-hitting sampling at equal NFE.

    ``lv_t2`` is the cost of one full sweep of categorical sampling over the
    sequence (``L * |V| * t2``). ``nfe`` defaults to the cached expectation.
    """
    nfe = expected_nfe_uniform(N, 1, L) if nfe is None else nfe
    return (nfe * t1 + N * lv_t2) / (nfe * t1 + lv_t2)


def fit_cost_model(nfe, ncs, seconds):
    """Least-squares ``(t1, t2, r2)`` for ``seconds ~ nfe * t1 + ncs * t2``."""
    A = np.column_stack([np.asarray(nfe, float), np.asarray(ncs, float)])
    y = np.asarray(seconds, dtype=np.float64)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


def metric_rows(run_id, metrics, samples, seed):
    return [
        {"run_id": run_id, "metric": k, "value": repr(float(v)), "samples": samples, "seed": seed}
        for k, v in metrics.items()
    ]


def write_metric_csv(fh, rows):
    writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
