"""Flow-based Markov transitions on metric-equipped charts.

Conventions:
    * tangent vectors are drawn with covariance ``g^{-1}(q)`` and cotangent
      vectors (momenta) with covariance ``g(q)``;
    * the Hamiltonian is ``H(q, p) = p^T g^{-1}(q) p / 2 + log|g(q)| / 2 - log pi(q)``;
    * every transition consumes random numbers in a fixed order: first the
      ``dim`` standard normals of the auxiliary vector, then (for adjusted
      transitions only) one uniform for the accept test. The uniform is drawn
      even when the proposal diverged, so streams stay aligned across setups.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as sla

from geomcmc.errors import ConfigError, DivergenceError, SingularMetricError
from geomcmc.geometry import MetricField, geodesic_flow
from geomcmc.targets import TargetDensity

logger = logging.getLogger(__name__)

SAMPLERS = ("rwm", "mala", "ula", "hmc")


@dataclass(frozen=True)
class SamplerConfig:
    """Tuning and bookkeeping parameters shared by all transitions.

    Attributes:
        step_size: Integrator step size.
        n_steps: Number of integrator steps per HMC trajectory.
        integration_time: Geodesic flow time for random-walk Metropolis.
        geodesic_steps: RK4 steps used for each geodesic proposal.
        n_samples: Number of transitions in a chain.
        seed: Seed of the chain's random generator.
        fixed_point_tol: Convergence tolerance of the implicit integrator.
        fixed_point_max_iter: Iteration cap of the implicit integrator.
        divergence_threshold: Energy error above which a transition is divergent.
    """

    step_size: float = 0.1
    n_steps: int = 1
    integration_time: float = 1.0
    geodesic_steps: int = 20
    n_samples: int = 1000
    seed: int = 0
    fixed_point_tol: float = 1e-10
    fixed_point_max_iter: int = 100
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        for name in ("step_size", "integration_time", "fixed_point_tol", "divergence_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("n_steps", "geodesic_steps", "fixed_point_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


class Transition(NamedTuple):
    position: np.ndarray
    accepted: bool
    energy_error: float
    divergent: bool


@dataclass
class ChainOutput:
    draws: np.ndarray
    accepted: np.ndarray
    energy_errors: np.ndarray
    divergent: np.ndarray
    seed: int
    sampler: str = ""

    @property
    def n_divergent(self) -> int:
        return int(np.sum(self.divergent))

    @property
    def accept_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self.accepted) else float("nan")

    def __eq__(self, other):
        if not isinstance(other, ChainOutput):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.sampler == other.sampler
            and all(
                np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True)
                for k in ("draws", "accepted", "energy_errors", "divergent")
            )
        )


# -- auxiliary vector distributions -------------------------------------------------


def sample_tangent_gaussian(g: MetricField, q, rng: np.random.Generator) -> np.ndarray:
    """Tangent vector with density proportional to ``exp(-g_q(v, v) / 2)``."""
    chol = g.cholesky_at(q)
    return sla.solve_triangular(chol, rng.standard_normal(g.dim), lower=True, trans="T")


def sample_cotangent_gaussian(g: MetricField, q, rng: np.random.Generator) -> np.ndarray:
    """Momentum with density proportional to ``exp(-g_q^{-1}(p, p) / 2)``."""
    return g.cholesky_at(q) @ rng.standard_normal(g.dim)


def tangent_log_density(g: MetricField, q, v) -> float:
    """Log density of a Gaussian tangent vector, constant dropped."""
    return -0.5 * float(v @ g.components_at(q) @ v) + 0.5 * g.log_det_at(q)


# -- Hamiltonian -------------------------------------------------------------------


class _LocalGeometry(NamedTuple):
    inverse: np.ndarray
    # force terms of dH/dq that do not depend on the momentum
    static_force: np.ndarray
    # dG[k] = g^{-1} (d_k g) g^{-1}, so d_k (p^T g^{-1} p) = -p^T dG[k] p
    inverse_derivative: np.ndarray

    def dh_dq(self, p: np.ndarray) -> np.ndarray:
        return self.static_force - 0.5 * ((self.inverse_derivative @ p) @ p)


class Hamiltonian:
    """Hamiltonian of a target density with Gaussian momenta under a metric."""

    def __init__(self, target: TargetDensity, metric: MetricField):
        if target.dim != metric.dim:
            raise ValueError(f"target dimension {target.dim} differs from metric dimension {metric.dim}")
        self.target = target
        self.metric = metric

    @property
    def dim(self) -> int:
        return self.target.dim

    def value(self, q, p) -> float:
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        kinetic = 0.5 * float(p @ self.metric.inverse_at(q) @ p)
        return kinetic + 0.5 * self.metric.log_det_at(q) - self.target(q)

    def local(self, q) -> _LocalGeometry:
        inv = self.metric.inverse_at(q)
        dg = self.metric.derivatives_at(q)
        half_trace = 0.5 * np.einsum("ij,kji->k", inv, dg)
        inverse_derivative = inv @ dg @ inv
        return _LocalGeometry(inv, half_trace - self.target.gradient(q), inverse_derivative)


def leapfrog_step(H: Hamiltonian, q, p, step_size: float):
    """One kick-drift-kick step for a constant metric.

    Returns:
        Tuple ``(q, p)`` after the step.

    Raises:
        DivergenceError: if the new state is not finite.
    """
    with np.errstate(over="raise", invalid="raise"):
        try:
            q, p, _ = _leapfrog(H, np.asarray(q, float), np.asarray(p, float), step_size, None)
        except FloatingPointError as exc:
            raise DivergenceError(f"overflow during integration: {exc}", state=(q, p)) from exc
    return q, p


def _leapfrog(H, q, p, eps, grad):
    if grad is None:
        grad = H.target.gradient(q)
    p_half = p + 0.5 * eps * grad
    q_new = q + eps * (H.metric.inverse_at(q) @ p_half)
    grad_new = H.target.gradient(q_new)
    p_new = p_half + 0.5 * eps * grad_new
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(p_new))):
        raise DivergenceError("leapfrog produced non-finite state", state=(q, p))
    return q_new, p_new, grad_new


def implicit_leapfrog_step(
    H: Hamiltonian, q, p, step_size: float, tol: float = 1e-10, max_iter: int = 100
):
    """Generalized leapfrog step for a position-dependent metric.

    Implicit half step in momentum, implicit (midpoint-averaged velocity) full
    step in position, explicit half step in momentum; both implicit updates are
    solved by fixed-point iteration until successive iterates differ by less
    than ``tol`` in Euclidean norm.

    Returns:
        Tuple ``(q, p)`` after the step.

    Raises:
        DivergenceError: if a fixed-point solve fails to converge within
            ``max_iter`` iterations or the state becomes non-finite.
    """
    with np.errstate(over="raise", invalid="raise"):
        q, p, _ = _implicit_leapfrog(H, np.asarray(q, float), np.asarray(p, float), step_size, tol, max_iter, None)
    return q, p


def _implicit_leapfrog(H, q, p, eps, tol, max_iter, local):
    half = 0.5 * eps
    tol2 = tol * tol
    try:
        if local is None:
            local = H.local(q)
        # loop-invariant parts of both fixed-point maps
        p_base = p - half * local.static_force
        curvature = 0.5 * half * local.inverse_derivative
        p_half = p
        for _ in range(max_iter):
            p_next = p_base + (curvature @ p_half) @ p_half
            diff = p_next - p_half
            p_half = p_next
            if diff @ diff < tol2:
                break
        else:
            raise DivergenceError("momentum fixed point did not converge", state=(q, p))

        v0 = local.inverse @ p_half
        q_base = q + half * v0
        q_new = q + eps * v0
        inverse_at = H.metric._inverse or H.metric.inverse_at
        for _ in range(max_iter):
            q_next = q_base + half * (inverse_at(q_new) @ p_half)
            diff = q_next - q_new
            q_new = q_next
            if diff @ diff < tol2:
                break
        else:
            raise DivergenceError("position fixed point did not converge", state=(q, p))

        local_new = H.local(q_new)
        p_new = p_half - half * local_new.dh_dq(p_half)
    except (SingularMetricError, FloatingPointError) as exc:
        raise DivergenceError(f"implicit step failed: {exc}", state=(q, p)) from exc
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(p_new))):
        raise DivergenceError("implicit leapfrog produced non-finite state", state=(q, p))
    return q_new, p_new, local_new


def integrate(H: Hamiltonian, q, p, cfg: SamplerConfig, n_steps: Optional[int] = None, record: bool = False):
    """Run ``n_steps`` integrator steps (explicit for constant metrics).

    Returns:
        ``(q, p)``, or with ``record=True`` arrays of all ``n_steps + 1``
        positions and momenta.

    Raises:
        DivergenceError: propagated from the step functions.
    """
    n_steps = cfg.n_steps if n_steps is None else n_steps
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    qs, ps = [q], [p]
    cache = None
    with np.errstate(over="raise", invalid="raise"):
        for _ in range(n_steps):
            try:
                if H.metric.constant:
                    q, p, cache = _leapfrog(H, q, p, cfg.step_size, cache)
                else:
                    q, p, cache = _implicit_leapfrog(
                        H, q, p, cfg.step_size, cfg.fixed_point_tol, cfg.fixed_point_max_iter, cache
                    )
            except FloatingPointError as exc:
                raise DivergenceError(f"overflow during integration: {exc}", state=(q, p)) from exc
            if record:
                qs.append(q)
                ps.append(p)
    if record:
        return np.array(qs), np.array(ps)
    return q, p


# -- transitions -------------------------------------------------------------------


def geodesic_rwm_step(
    target: TargetDensity, g: MetricField, q, cfg: SamplerConfig, rng: np.random.Generator
) -> Transition:
    """Geodesic random-walk Metropolis transition.

    Draws ``v`` with covariance ``g^{-1}(q)``, follows the geodesic for
    ``cfg.integration_time``, flips the final velocity and accepts with
    probability ``min(1, pi(q') p(-v'|q') / (pi(q) p(v|q)))``. For constant
    metrics the proposal is Gaussian with covariance ``t^2 g^{-1}``.
    """
    q = np.asarray(q, float)
    v = sample_tangent_gaussian(g, q, rng)
    u = rng.random()
    log_start = target(q) + tangent_log_density(g, q, v)
    try:
        q_new, v_new = geodesic_flow(g, q, v, cfg.integration_time, cfg.geodesic_steps)
        log_end = target(q_new) + tangent_log_density(g, q_new, -v_new)
    except (DivergenceError, SingularMetricError):
        return Transition(q, False, float("inf"), True)
    energy_error = log_start - log_end
    if not np.isfinite(energy_error) or energy_error > cfg.divergence_threshold:
        return Transition(q, False, float(energy_error), True)
    if np.log(u) < -energy_error:
        return Transition(q_new, True, float(energy_error), False)
    return Transition(q, False, float(energy_error), False)


def hmc_transition(
    target: TargetDensity,
    g: MetricField,
    q,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    adjusted: bool = True,
    n_steps: Optional[int] = None,
) -> Transition:
    """Hamiltonian Monte Carlo transition with a final-state Metropolis correction.

    Uses the explicit leapfrog for constant metrics and the generalized
    leapfrog otherwise. Divergent trajectories (failed integration or energy
    error beyond ``cfg.divergence_threshold``) are rejected and flagged.
    """
    n_steps = cfg.n_steps if n_steps is None else n_steps
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    H = Hamiltonian(target, g)
    q = np.asarray(q, float)
    p = sample_cotangent_gaussian(g, q, rng)
    u = rng.random() if adjusted else None
    h0 = H.value(q, p)
    try:
        q_new, p_new = integrate(H, q, p, cfg, n_steps)
        # momentum flip leaves the quadratic kinetic energy unchanged
        energy_error = H.value(q_new, -p_new) - h0
    except (DivergenceError, SingularMetricError):
        return Transition(q, False, float("inf"), True)
    if not np.isfinite(energy_error) or abs(energy_error) > cfg.divergence_threshold:
        return Transition(q, False, float(energy_error), True)
    if not adjusted or np.log(u) < -energy_error:
        return Transition(q_new, True, float(energy_error), False)
    return Transition(q, False, float(energy_error), False)


def mala_transition(
    target: TargetDensity,
    g: MetricField,
    q,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    adjusted: bool = True,
) -> Transition:
    """Langevin transition: a single integrator step, optionally Metropolis adjusted.

    With ``adjusted=False`` every non-divergent proposal is taken (unadjusted
    Langevin).
    """
    return hmc_transition(target, g, q, cfg, rng, adjusted=adjusted, n_steps=1)


def run_chain(
    sampler: str,
    target: TargetDensity,
    metric: MetricField,
    q0,
    cfg: SamplerConfig,
) -> ChainOutput:
    """Run ``cfg.n_samples`` transitions of the named sampler from ``q0``.

    ``sampler`` is one of ``"rwm"``, ``"mala"``, ``"ula"`` or ``"hmc"``.
    Divergences are flagged per transition and never abort the chain.
    """
    if sampler not in SAMPLERS:
        raise ConfigError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    q = np.array(q0, dtype=float)
    if q.shape != (target.dim,) or not np.all(np.isfinite(q)):
        raise ValueError("initial position must be a finite point of the target's dimension")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    draws = np.empty((n, target.dim))
    accepted = np.zeros(n, dtype=bool)
    energy_errors = np.empty(n)
    divergent = np.zeros(n, dtype=bool)
    for i in range(n):
        if sampler == "rwm":
            tr = geodesic_rwm_step(target, metric, q, cfg, rng)
        elif sampler == "hmc":
            tr = hmc_transition(target, metric, q, cfg, rng)
        else:
            tr = mala_transition(target, metric, q, cfg, rng, adjusted=sampler == "mala")
        q = tr.position
        draws[i] = q
        accepted[i] = tr.accepted
        energy_errors[i] = tr.energy_error
        divergent[i] = tr.divergent
    if n:
        logger.debug(
            "%s chain: %d draws, accept rate %.3f, %d divergent",
            sampler, n, accepted.mean(), divergent.sum(),
        )
    return ChainOutput(draws, accepted, energy_errors, divergent, cfg.seed, sampler)
