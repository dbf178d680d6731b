"""Normal predictive distribution in the (mu, log sigma) parametrisation.

Scores (NLL, CRPS), CDF/quantile helpers and the natural gradient used by
:mod:`tputboost.dist_booster`.

For the NLL the gradient w.r.t. (mu, log sigma) is::

    ((mu - y) / sigma^2,  1 - z^2),      z = (y - mu) / sigma

and the Fisher information is diag(1 / sigma^2, 2), giving the natural
gradient ``(mu - y, (1 - z^2) / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import DataError

LOG_SIGMA_BOUND = 15.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DataError("non-finite input")


@dataclass(frozen=True)
class NormalParams:
    """Per-row Normal distributions; scalars or equal-length arrays."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        ls = np.asarray(self.log_sigma, dtype=float)
        if mu.shape != ls.shape:
            mu, ls = np.broadcast_arrays(mu, ls)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", ls)

    @classmethod
    def from_sigma(cls, mu, sigma) -> "NormalParams":
        return cls(mu, np.log(sigma))

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def __len__(self):
        return self.mu.size

    def __getitem__(self, idx) -> "NormalParams":
        return NormalParams(self.mu[idx], self.log_sigma[idx])

    def clamped(self) -> "NormalParams":
        return NormalParams(self.mu, np.clip(self.log_sigma, -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND))

    def nll(self, y):
        return nll(self, y)

    def crps(self, y):
        return crps_normal(self, y)

    def ppf(self, q):
        return self.mu + self.sigma * normal_quantile(q)

    def interval(self, coverage: float):
        """Central interval holding ``coverage`` of the mass."""
        if coverage <= 0:
            return self.mu.copy(), self.mu.copy()
        if coverage >= 1:
            return np.full_like(self.mu, -np.inf), np.full_like(self.mu, np.inf)
        half = normal_quantile(0.5 + coverage / 2.0)
        return self.mu - self.sigma * half, self.mu + self.sigma * half


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def nll(p: NormalParams, y):
    y = np.asarray(y, dtype=float)
    _finite(y)
    z = (y - p.mu) * np.exp(-p.log_sigma)
    return _scalar_or_array(HALF_LOG_2PI + p.log_sigma + 0.5 * z * z)


def normal_cdf(z):
    """Standard normal CDF (erfc-based, accurate in both tails)."""
    return _scalar_or_array(special.ndtr(np.asarray(z, dtype=float)))


def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return _scalar_or_array(np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))


def normal_quantile(prob):
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0) & (prob < 1))):
        raise DataError("quantile level must lie strictly inside (0, 1)")
    return _scalar_or_array(special.ndtri(prob))


def crps_normal(p: NormalParams, y):
    """Closed-form CRPS of N(mu, sigma^2) against observation(s) ``y``."""
    y = np.asarray(y, dtype=float)
    _finite(y, p.mu, p.log_sigma)
    sigma = p.sigma
    z = (y - p.mu) / sigma
    out = sigma * (z * (2.0 * special.ndtr(z) - 1.0) + 2.0 * normal_pdf(z) - _INV_SQRT_PI)
    return _scalar_or_array(out)


def crps_point(pred, y):
    """CRPS of a point forecast, which reduces to the absolute error."""
    return _scalar_or_array(np.abs(np.asarray(y, dtype=float) - np.asarray(pred, dtype=float)))


def natural_gradient(p: NormalParams, y):
    """Fisher^-1 times the NLL gradient, as ``(d_mu, d_log_sigma)``."""
    y = np.asarray(y, dtype=float)
    _finite(y, p.mu, p.log_sigma)
    z = (y - p.mu) * np.exp(-p.log_sigma)
    return _scalar_or_array(p.mu - y), _scalar_or_array(0.5 * (1.0 - z * z))


def nll_gradient(p: NormalParams, y):
    """Ordinary NLL gradient w.r.t. (mu, log sigma)."""
    y = np.asarray(y, dtype=float)
    inv_var = np.exp(-2.0 * p.log_sigma)
    z2 = (y - p.mu) ** 2 * inv_var
    return _scalar_or_array((p.mu - y) * inv_var), _scalar_or_array(1.0 - z2)
