"""scikit-learn style wrapper: fit a toy table to data, then sample and score."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_sequences, spawn_generators
from .metrics import nelbo_discrete, sequence_entropy
from .oracle import ToyDistribution, optimal_predictor
from .samplers import SamplerConfig, sample


class MaskedDiffusionSampler(BaseEstimator):
    """Masked diffusion model with the exact optimal predictor of the training data.

    ``fit`` builds the empirical distribution of fully unmasked sequences, whose
    posterior-mean predictor is the best any network could learn from it.
    ``sample`` draws new sequences with the chosen sampler, ``score`` returns the
    mean discrete ELBO (negated NELBO, higher is better) and ``predict_proba``
    exposes the predictor on partially masked input.
    """

    def __init__(self, vocab_size=None, method="fhs", steps=64, precision="f64",
                 temperature=1.0, batch=256, random_state=None):
        self.vocab_size = vocab_size
        self.method = method
        self.steps = steps
        self.precision = precision
        self.temperature = temperature
        self.batch = batch
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X)
        m = int(X.max()) + 1 if self.vocab_size is None else int(self.vocab_size)
        X = check_sequences(X, m, allow_mask=False)
        self.toy_ = ToyDistribution.from_samples(X, m)
        self.predictor_ = optimal_predictor(self.toy_)
        self.vocab_size_ = m
        self.n_features_in_ = X.shape[1]
        return self

    def _config(self, batch):
        return SamplerConfig(self.method, self.steps, self.precision, self.temperature, batch,
                             self.random_state)

    def sample(self, n_samples=1):
        check_is_fitted(self, "predictor_")
        sizes = [self.batch] * (n_samples // self.batch)
        if n_samples % self.batch:
            sizes.append(n_samples % self.batch)
        ss = np.random.SeedSequence(self.random_state)
        out = []
        for size, child in zip(sizes, ss.spawn(len(sizes))):
            X, _ = sample(self._config(size), self.predictor_, rng=spawn_generators(child, size))
            out.append(X)
        return np.concatenate(out) if out else np.empty((0, self.n_features_in_), dtype=np.int64)

    def predict_proba(self, X):
        check_is_fitted(self, "predictor_")
        X = check_sequences(X, self.vocab_size_)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} positions, got {X.shape[1]}")
        return self.predictor_.predict(X)

    def score(self, X, y=None):
        check_is_fitted(self, "predictor_")
        X = check_sequences(X, self.vocab_size_, allow_mask=False)
        return -float(np.mean([nelbo_discrete(x, self.predictor_) for x in X]))

    def entropy(self, X):
        """Mean per-sequence token entropy of ``X``."""
        return float(np.mean(sequence_entropy(check_sequences(X, self.vocab_size_),
                                              self.vocab_size_)))
