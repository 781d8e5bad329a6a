"""Density and conditional-probability estimators.

Everything is evaluated in log space. Fitted models are frozen dataclasses
and safe to share between threads.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

DEFAULT_RIDGE = 1e-6
LOG_2PI = math.log(2 * math.pi)


class DegenerateDataError(ValueError):
    """Raised when the data cannot support the requested estimator."""


def _as_2d(samples) -> np.ndarray:
    try:
        arr = np.asarray(samples, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("samples must all have the same dimension") from exc
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("samples must be a list of vectors")
    return arr


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    cholesky_factor: np.ndarray
    log_norm_const: float
    ridge: float = 0.0

    kind = "gaussian"

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def from_moments(cls, mean, covariance, ridge: float = 0.0) -> "GaussianModel":
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(covariance, dtype=np.float64).reshape(len(mean), len(mean))
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDataError(
                "covariance is not positive definite; increase the ridge"
            ) from exc
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        log_norm = -0.5 * (len(mean) * LOG_2PI + log_det)
        return cls(mean, cov, chol, log_norm, ridge)

    def logpdf(self, x) -> np.ndarray | float:
        """Log-density at one point (returns float) or at rows of a 2-D array."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim <= 1
        xs = x.reshape(1, -1) if single else x
        if xs.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {xs.shape[1]}")
        out = self.log_norm_const - 0.5 * self._mahalanobis_sq(xs - self.mean)
        return float(out[0]) if single else out

    def _mahalanobis_sq(self, diffs: np.ndarray) -> np.ndarray:
        # Forward substitution vectorized over rows: each row sees the same
        # arithmetic whatever the batch size, so batched and one-at-a-time
        # evaluation agree bit for bit.
        chol = self.cholesky_factor
        z = np.empty_like(diffs)
        total = np.zeros(len(diffs))
        for i in range(self.dim):
            acc = diffs[:, i].copy()
            for j in range(i):
                acc -= chol[i, j] * z[:, j]
            z[:, i] = acc / chol[i, i]
            total += z[:, i] * z[:, i]
        return total

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ self.cholesky_factor.T

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "ridge": self.ridge,
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
        }


def fit_gaussian(samples, ridge: float = DEFAULT_RIDGE) -> GaussianModel:
    """Maximum-likelihood Gaussian (covariance divided by n) plus ``ridge * I``."""
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    xs = _as_2d(samples)
    if len(xs) < 2:
        raise DegenerateDataError("need at least 2 samples to fit a Gaussian")
    mean = xs.mean(axis=0)
    centered = xs - mean
    cov = centered.T @ centered / len(xs)
    cov = 0.5 * (cov + cov.T) + ridge * np.eye(xs.shape[1])
    return GaussianModel.from_moments(mean, cov, ridge)


def gaussian_logpdf(m: GaussianModel, x) -> float:
    return m.logpdf(x)


@dataclass(frozen=True)
class KDEModel:
    """Gaussian-kernel density estimate with Scott's bandwidth.

    The kernel covariance is ``h^2 * Sigma`` where ``Sigma`` is the sample
    covariance and ``h = n ** (-1 / (d + 4))``.
    """

    points: np.ndarray
    kernel: GaussianModel
    bandwidth: float

    kind = "kde"

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def logpdf(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim <= 1
        xs = x.reshape(1, -1) if single else x
        if xs.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {xs.shape[1]}")
        diffs = (xs[:, None, :] - self.points[None, :, :]).reshape(-1, self.dim)
        logk = self.kernel.logpdf(diffs).reshape(len(xs), len(self.points))
        out = logsumexp(logk, axis=1) - math.log(len(self.points))
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "ridge": self.kernel.ridge,
            "bandwidth": self.bandwidth,
            "points": self.points.tolist(),
            "kernel_covariance": self.kernel.covariance.tolist(),
        }


def fit_kde(samples, ridge: float = DEFAULT_RIDGE) -> KDEModel:
    xs = _as_2d(samples)
    if len(xs) < 2:
        raise DegenerateDataError("need at least 2 samples to fit a KDE")
    n, d = xs.shape
    h = n ** (-1.0 / (d + 4))
    centered = xs - xs.mean(axis=0)
    cov = h**2 * (centered.T @ centered / (n - 1)) + ridge * np.eye(d)
    kernel = GaussianModel.from_moments(np.zeros(d), cov, ridge)
    return KDEModel(xs.copy(), kernel, h)


def fit_density(samples, ridge: float = DEFAULT_RIDGE, use_kde: bool = False):
    return fit_kde(samples, ridge) if use_kde else fit_gaussian(samples, ridge)


@dataclass(frozen=True)
class ConditionalActionModel:
    """Class-conditional Gaussian classifier giving ``p(a | s)`` by Bayes rule."""

    labels: tuple
    class_models: tuple
    log_priors: np.ndarray

    kind = "conditional"

    @property
    def priors(self) -> np.ndarray:
        return np.exp(self.log_priors)

    def _index(self, a) -> int:
        try:
            return self.labels.index(int(a) if isinstance(a, (np.integer, int)) else a)
        except ValueError:
            raise KeyError(f"unknown action label {a!r}") from None

    def log_joint(self, states) -> np.ndarray:
        """``log p(s | a) + log p(a)`` with shape ``(n, n_labels)``."""
        xs = np.atleast_2d(np.asarray(states, dtype=np.float64))
        cols = [m.logpdf(xs) for m in self.class_models]
        return np.stack(cols, axis=1) + self.log_priors

    def log_posterior(self, states) -> np.ndarray:
        lj = self.log_joint(states)
        return lj - logsumexp(lj, axis=1, keepdims=True)

    def posterior(self, s) -> np.ndarray:
        return np.exp(self.log_posterior(s)[0])

    def log_prob(self, states, actions) -> np.ndarray:
        lp = self.log_posterior(states)
        idx = np.array([self._index(a) for a in np.atleast_1d(actions)])
        return lp[np.arange(len(lp)), idx]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "labels": list(self.labels),
            "priors": self.priors.tolist(),
            "classes": [m.to_dict() for m in self.class_models],
        }


def fit_conditional(states, actions, ridge: float = DEFAULT_RIDGE) -> ConditionalActionModel:
    xs = _as_2d(states)
    acts = list(np.asarray(actions).tolist())
    if len(acts) != len(xs):
        raise ValueError("states and actions must have equal length")
    counts = Counter(acts)
    labels = tuple(sorted(counts))
    for label in labels:
        if counts[label] < 2:
            raise DegenerateDataError(
                f"action {label!r} occurs {counts[label]} time(s); need at least 2"
            )
    acts_arr = np.asarray(acts)
    models = tuple(fit_gaussian(xs[acts_arr == label], ridge) for label in labels)
    log_priors = np.log(np.array([counts[label] for label in labels], dtype=np.float64) / len(acts))
    return ConditionalActionModel(labels, models, log_priors)


def conditional_prob(m: ConditionalActionModel, s, a) -> float:
    return float(np.exp(m.log_prob(np.asarray(s)[None, :], [a])[0]))


@dataclass(frozen=True)
class FrequencyTable:
    counts: dict
    smoothing: float = 0.0
    support: tuple = field(default=())

    def prob(self, x: Hashable) -> float:
        n = sum(self.counts.values())
        if x not in self.support:
            return 0.0
        return (self.counts.get(x, 0) + self.smoothing) / (n + self.smoothing * len(self.support))

    def probabilities(self) -> dict:
        return {x: self.prob(x) for x in self.support}


def fit_frequency(
    samples: Sequence[Hashable], smoothing: float = 0.0, support: Optional[Iterable] = None
) -> FrequencyTable:
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    counts = dict(Counter(samples))
    full = set(counts)
    if support is not None:
        full |= set(support)
    return FrequencyTable(counts, float(smoothing), tuple(sorted(full, key=repr)))


def model_to_json(model) -> str:
    return json.dumps(model.to_dict())


def model_from_json(text: str):
    d = json.loads(text)
    kind = d["kind"]
    if kind == "gaussian":
        return GaussianModel.from_moments(d["mean"], d["covariance"], d["ridge"])
    if kind == "kde":
        pts = np.asarray(d["points"], dtype=np.float64)
        kernel = GaussianModel.from_moments(np.zeros(pts.shape[1]), d["kernel_covariance"], d["ridge"])
        return KDEModel(pts, kernel, d["bandwidth"])
    if kind == "conditional":
        models = tuple(
            GaussianModel.from_moments(c["mean"], c["covariance"], c["ridge"]) for c in d["classes"]
        )
        return ConditionalActionModel(tuple(d["labels"]), models, np.log(np.asarray(d["priors"])))
    raise ValueError(f"unknown estimator kind {kind!r}")
