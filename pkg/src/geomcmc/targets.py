"""Target log densities with derivative oracles.

All log densities drop additive constants. Funnel coordinates are ordered
``(mu, lambda, theta_1, ..., theta_N)`` with ``lambda = log tau``; the
non-centered variant replaces each ``theta_n`` by the standardized residual
``(theta_n - mu) * exp(-lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from geomcmc.errors import SingularMetricError
from geomcmc.geometry import DEFAULT_FD_STEP, ScalarField

CENTERED = "centered"
NON_CENTERED = "non_centered"


class TargetDensity(ScalarField):
    """Unnormalized log density of a target distribution on a ``dim``-dim chart."""

    def __init__(
        self,
        log_density: Callable[[np.ndarray], float],
        dim: int,
        *,
        gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        name: str = "target",
        fd_step: float = DEFAULT_FD_STEP,
    ):
        super().__init__(log_density, gradient, hessian, fd_step)
        self.dim = int(dim)
        self.name = name

    def __repr__(self) -> str:
        return f"TargetDensity(name={self.name!r}, dim={self.dim})"

    def log_density(self, q) -> float:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValueError(f"expected point of shape ({self.dim},), got {q.shape}")
        return self(q)


@dataclass(frozen=True)
class FunnelSpec:
    """Latent Gaussian model with no observations.

    Attributes:
        n_individuals: Number of exchangeable individual parameters ``N``.
        mu_prior_scale: Scale of the Gaussian prior on the population location.
        lambda_prior_scale: Scale of the Gaussian prior on the log population scale.
        parameterization: ``"centered"`` or ``"non_centered"``.
    """

    n_individuals: int = 1
    mu_prior_scale: float = 1.0
    lambda_prior_scale: float = 1.0
    parameterization: str = CENTERED

    def __post_init__(self):
        if self.n_individuals < 1:
            raise ValueError("n_individuals must be at least 1")
        if self.mu_prior_scale <= 0 or self.lambda_prior_scale <= 0:
            raise ValueError("prior scales must be positive")
        if self.parameterization not in (CENTERED, NON_CENTERED):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")

    @property
    def dim(self) -> int:
        return self.n_individuals + 2

    def prior_precision(self) -> np.ndarray:
        """Diagonal of the non-centered log-density's negative Hessian."""
        return np.concatenate(
            [
                [self.mu_prior_scale**-2, self.lambda_prior_scale**-2],
                np.ones(self.n_individuals),
            ]
        )


def _split(spec: FunnelSpec, q) -> tuple:
    q = np.asarray(q, dtype=float)
    if q.shape != (spec.dim,):
        raise ValueError(f"funnel with N={spec.n_individuals} expects {spec.dim} coordinates, got shape {q.shape}")
    return q[0], q[1], q[2:]


def centered_funnel_logpdf(spec: FunnelSpec, q) -> float:
    mu, lam, theta = _split(spec, q)
    z = (theta - mu) * np.exp(-lam)
    return float(
        -0.5 * np.sum(z**2)
        - spec.n_individuals * lam
        - 0.5 * (mu / spec.mu_prior_scale) ** 2
        - 0.5 * (lam / spec.lambda_prior_scale) ** 2
    )


def centered_funnel_gradient(spec: FunnelSpec, q) -> np.ndarray:
    mu, lam, theta = _split(spec, q)
    a2 = np.exp(-2.0 * lam)
    d = theta - mu
    grad = np.empty(spec.dim)
    grad[0] = a2 * np.sum(d) - mu / spec.mu_prior_scale**2
    grad[1] = a2 * np.sum(d**2) - spec.n_individuals - lam / spec.lambda_prior_scale**2
    grad[2:] = -a2 * d
    return grad


def centered_funnel_hessian(spec: FunnelSpec, q) -> np.ndarray:
    mu, lam, theta = _split(spec, q)
    n = spec.n_individuals
    a2 = np.exp(-2.0 * lam)
    d = theta - mu
    hess = np.zeros((spec.dim, spec.dim))
    hess[0, 0] = -n * a2 - spec.mu_prior_scale**-2
    hess[0, 1] = hess[1, 0] = -2.0 * a2 * np.sum(d)
    hess[0, 2:] = hess[2:, 0] = a2
    hess[1, 1] = -2.0 * a2 * np.sum(d**2) - spec.lambda_prior_scale**-2
    hess[1, 2:] = hess[2:, 1] = 2.0 * a2 * d
    hess[2:, 2:] = -a2 * np.eye(n)
    return hess


def noncentered_funnel_logpdf(spec: FunnelSpec, q) -> float:
    mu, lam, theta_tilde = _split(spec, q)
    return float(
        -0.5 * np.sum(theta_tilde**2)
        - 0.5 * (mu / spec.mu_prior_scale) ** 2
        - 0.5 * (lam / spec.lambda_prior_scale) ** 2
    )


def noncentered_funnel_gradient(spec: FunnelSpec, q) -> np.ndarray:
    return -spec.prior_precision() * np.asarray(q, dtype=float)


def noncentered_funnel_hessian(spec: FunnelSpec, q) -> np.ndarray:
    _split(spec, q)
    return -np.diag(spec.prior_precision())


def funnel_target(spec: FunnelSpec) -> TargetDensity:
    """Funnel log density in the parameterization named by ``spec``."""
    if spec.parameterization == CENTERED:
        return TargetDensity(
            lambda q: centered_funnel_logpdf(spec, q),
            spec.dim,
            gradient=lambda q: centered_funnel_gradient(spec, q),
            hessian=lambda q: centered_funnel_hessian(spec, q),
            name="funnel-centered",
        )
    return TargetDensity(
        lambda q: noncentered_funnel_logpdf(spec, q),
        spec.dim,
        gradient=lambda q: noncentered_funnel_gradient(spec, q),
        hessian=lambda q: noncentered_funnel_hessian(spec, q),
        name="funnel-noncentered",
    )


def gaussian_target(mean, covariance) -> TargetDensity:
    """Multivariate Gaussian log density with analytic derivatives.

    Raises:
        SingularMetricError: if ``covariance`` is not symmetric positive definite.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    dim = mean.shape[0]
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance shape {cov.shape} does not match mean of length {dim}")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
        raise SingularMetricError("covariance is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularMetricError("covariance is not positive definite") from exc
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + prec.T)

    def log_density(q):
        r = q - mean
        return -0.5 * float(r @ prec @ r)

    return TargetDensity(
        log_density,
        dim,
        gradient=lambda q: -prec @ (q - mean),
        hessian=lambda q: -prec,
        name="gaussian",
    )


def standard_gaussian(dim: int) -> TargetDensity:
    return gaussian_target(np.zeros(dim), np.eye(dim))


def _funnel_from_params(parameterization):
    def build(n_individuals=1, mu_prior_scale=1.0, lambda_prior_scale=1.0):
        return funnel_target(
            FunnelSpec(n_individuals, mu_prior_scale, lambda_prior_scale, parameterization)
        )

    return build


def _gaussian_from_params(dim=None, mean=None, covariance=None):
    if mean is None:
        if dim is None:
            raise ValueError("gaussian model needs either 'dim' or 'mean'")
        mean = np.zeros(dim)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if covariance is None:
        covariance = np.eye(mean.shape[0])
    return gaussian_target(mean, covariance)


MODELS = {
    "funnel-centered": _funnel_from_params(CENTERED),
    "funnel-noncentered": _funnel_from_params(NON_CENTERED),
    "gaussian": _gaussian_from_params,
}


def get_target(name: str, **params) -> TargetDensity:
    """Look up a bundled model by registry name and build it."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known models: {sorted(MODELS)}") from None
    return factory(**params)
