"""Gaussian and Gaussian-mixture algebra.

Density evaluation runs in the log domain throughout (mixture weights
underflow in double precision once components separate by a few tens of
sigmas); covariances are symmetrized on construction since solver output
carries asymmetry at solver tolerance.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import ConfigurationError, NumericalDomainError
from .linalg import cholesky_pd, psd_sqrt, sym

SYMMETRY_TOL = 1e-10
PSD_EIG_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-10

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError(
                f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * scale:
            raise ConfigurationError("covariance is not symmetric")
        cov = sym(cov)
        w = np.linalg.eigvalsh(cov)
        if w[0] < -PSD_EIG_TOL * scale:
            raise ConfigurationError(
                f"covariance is not PSD (min eigenvalue {w[0]:.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def _chol(self) -> np.ndarray:
        return cholesky_pd(self.cov, "covariance")

    @cached_property
    def _sqrt_factor(self) -> np.ndarray:
        # PSD-safe factor for sampling; degenerate covariances allowed
        return psd_sqrt(self.cov)

    def log_pdf(self, x: np.ndarray) -> float:
        return float(self.log_pdf_many(np.asarray(x, float).reshape(1, -1))[0])

    def log_pdf_many(self, x: np.ndarray) -> np.ndarray:
        """Log density at each row of x, shape (N, n) -> (N,)."""
        x = np.asarray(x, dtype=float)
        L = self._chol
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        z = solve_triangular(L, (x - self.mean).T, lower=True)
        quad = np.sum(z * z, axis=0)
        return -0.5 * (self.dim * _LOG_2PI + logdet + quad)

    def shifted(self, offset: np.ndarray) -> "Gaussian":
        return Gaussian(self.mean + np.asarray(offset, float), self.cov)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if not comps:
            raise ConfigurationError("mixture needs at least one component")
        if w.size != len(comps):
            raise ConfigurationError("weights and components disagree in length")
        if np.any(w <= 0):
            raise ConfigurationError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigurationError(
                f"mixture weights sum to {w.sum()!r}, expected 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ConfigurationError("mixture components disagree in dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def size(self) -> int:
        return len(self.components)

    def mean(self) -> np.ndarray:
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    def log_pdf(self, x) -> float:
        return float(self.log_pdf_many(np.asarray(x, float).reshape(1, -1))[0])

    def log_pdf_many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        stacked = np.empty((self.size, x.shape[0]))
        for i, (w, comp) in enumerate(zip(self.weights, self.components)):
            try:
                stacked[i] = np.log(w) + comp.log_pdf_many(x)
            except NumericalDomainError as exc:
                raise NumericalDomainError(
                    f"component {i}: {exc}") from exc
        return logsumexp(stacked, axis=0)

    def shifted(self, offset: np.ndarray) -> "GaussianMixture":
        return GaussianMixture(self.weights,
                               tuple(c.shifted(offset) for c in self.components))

    def scaled_means(self, factor: float) -> "GaussianMixture":
        return GaussianMixture(
            self.weights,
            tuple(Gaussian(factor * c.mean, c.cov) for c in self.components))


def sample(mix: GaussianMixture, count: int, seed) -> np.ndarray:
    """Draw `count` samples; deterministic for a fixed seed.

    `seed` may be an int or a numpy Generator (so parallel callers can
    partition seed space themselves).
    """
    if count < 1:
        raise ConfigurationError("sample count must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    choice = rng.choice(mix.size, size=count, p=mix.weights)
    z = rng.standard_normal((count, mix.dim))
    out = np.empty((count, mix.dim))
    for i, comp in enumerate(mix.components):
        mask = choice == i
        if np.any(mask):
            out[mask] = comp.mean + z[mask] @ comp._sqrt_factor.T
    return out


def _pd_solve(covsum: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    L = cholesky_pd(covsum, what)
    y = solve_triangular(L, rhs, lower=True)
    return solve_triangular(L.T, y, lower=False)


def gaussian_product(g1: Gaussian, g2: Gaussian):
    """Product of two Gaussian densities: rho1*rho2 = c_p * N(mu_p, Sigma_p).

    Sigma_p = (S1^-1 + S2^-1)^-1, mu_p = Sigma_p (S1^-1 mu1 + S2^-1 mu2),
    c_p = N(mu1; mu2, S1 + S2); computed via solves with S1+S2 for stability.
    """
    S = g1.cov + g2.cov
    sigma_p = sym(g1.cov @ _pd_solve(S, g2.cov, "covariance sum"))
    mu_p = (g2.cov @ _pd_solve(S, g1.mean, "covariance sum")
            + g1.cov @ _pd_solve(S, g2.mean, "covariance sum"))
    scale = float(np.exp(Gaussian(g2.mean, S).log_pdf(g1.mean)))
    return scale, Gaussian(mu_p, sigma_p)


def gaussian_quotient(g1: Gaussian, g2: Gaussian):
    """Quotient rho1/rho2 = c_q * N(mu_q, Sigma_q); needs Sigma2 - Sigma1 PD."""
    diff = g2.cov - g1.cov
    w = np.linalg.eigvalsh(sym(diff))
    if w[0] <= 0:
        raise NumericalDomainError(
            "quotient is not normalizable: Sigma2 - Sigma1 is not positive "
            f"definite (min eigenvalue {w[0]:.3e})")
    inv1 = _pd_solve(g1.cov, np.eye(g1.dim), "Sigma1")
    inv2 = _pd_solve(g2.cov, np.eye(g2.dim), "Sigma2")
    sigma_q = sym(np.linalg.inv(inv1 - inv2))
    mu_q = sigma_q @ (inv1 @ g1.mean - inv2 @ g2.mean)
    _, logdet2 = np.linalg.slogdet(g2.cov)
    _, logdetd = np.linalg.slogdet(sym(diff))
    log_cq = logdet2 - logdetd - Gaussian(g2.mean, sym(diff)).log_pdf(g1.mean)
    return float(np.exp(log_cq)), Gaussian(mu_q, sigma_q)
