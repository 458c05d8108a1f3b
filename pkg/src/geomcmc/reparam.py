"""Reparameterizations, equivalent metrics and the optimality deviation.

A reparameterization ``psi`` maps original coordinates ``q`` to new
coordinates ``q' = psi(q)`` with Jacobian ``J[i, j] = d psi^i / d q^j``.
Running a fixed-metric algorithm on the pushed-forward density in the new
chart is equivalent to running it in the original chart with the metric
``J^T g(psi(q)) J``.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from geomcmc.errors import SingularMetricError
from geomcmc.geometry import (
    DEFAULT_FD_STEP,
    MetricField,
    ScalarField,
    covariant_hessian,
    fd_derivative,
)
from geomcmc.targets import FunnelSpec, TargetDensity


class Reparameterization:
    """Smooth bijection of the chart with Jacobian oracles.

    Args:
        forward: ``q -> psi(q)``.
        inverse: ``q' -> psi^{-1}(q')``.
        dim: Chart dimension.
        jacobian: Optional analytic ``J(q)``; central differences of
            ``forward`` otherwise.
        log_abs_det_jacobian: Optional analytic ``log|det J(q)|``.
        jacobian_derivative: Optional ``dJ[k, i, j] = d J[i, j] / d q^k``,
            needed for analytic Christoffel symbols of equivalent metrics.
        inverse_jacobian: Optional analytic ``J(q)^{-1}``.
        name: Identifier used in registries and reports.
    """

    def __init__(
        self,
        forward: Callable[[np.ndarray], np.ndarray],
        inverse: Callable[[np.ndarray], np.ndarray],
        dim: int,
        *,
        jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        log_abs_det_jacobian: Optional[Callable[[np.ndarray], float]] = None,
        jacobian_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        inverse_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        name: str = "reparam",
        fd_step: float = DEFAULT_FD_STEP,
    ):
        self._forward = forward
        self._inverse = inverse
        self._jacobian = jacobian
        self._log_abs_det = log_abs_det_jacobian
        self._jacobian_derivative = jacobian_derivative
        self._inverse_jacobian = inverse_jacobian
        self.dim = int(dim)
        self.name = name
        self.fd_step = fd_step

    def forward(self, q) -> np.ndarray:
        return np.asarray(self._forward(np.asarray(q, dtype=float)), dtype=float)

    def inverse(self, q) -> np.ndarray:
        return np.asarray(self._inverse(np.asarray(q, dtype=float)), dtype=float)

    def jacobian_at(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._jacobian is not None:
            return np.asarray(self._jacobian(q), dtype=float)
        # fd_derivative puts the differentiation index first
        return fd_derivative(self._forward, q, self.fd_step).T

    def jacobian_derivative_at(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._jacobian_derivative is not None:
            return np.asarray(self._jacobian_derivative(q), dtype=float)
        return fd_derivative(self.jacobian_at, q, self.fd_step)

    def inverse_jacobian_at(self, q) -> np.ndarray:
        """``J(q)^{-1}``, the Jacobian of ``psi^{-1}`` at ``psi(q)``."""
        q = np.asarray(q, dtype=float)
        if self._inverse_jacobian is not None:
            return np.asarray(self._inverse_jacobian(q), dtype=float)
        try:
            return np.linalg.inv(self.jacobian_at(q))
        except np.linalg.LinAlgError as exc:
            raise SingularMetricError("Jacobian is singular") from exc

    def log_abs_det_jacobian_at(self, q) -> float:
        if self._log_abs_det is not None:
            return float(self._log_abs_det(np.asarray(q, dtype=float)))
        sign, logdet = np.linalg.slogdet(self.jacobian_at(q))
        if sign == 0:
            raise SingularMetricError("Jacobian is singular")
        return float(logdet)


def identity_reparam(dim: int) -> Reparameterization:
    eye = np.eye(dim)
    return Reparameterization(
        lambda q: q.copy(),
        lambda q: q.copy(),
        dim,
        jacobian=lambda q: eye,
        log_abs_det_jacobian=lambda q: 0.0,
        jacobian_derivative=lambda q: np.zeros((dim, dim, dim)),
        inverse_jacobian=lambda q: eye,
        name="identity",
    )


def linear_reparam(matrix, offset=None) -> Reparameterization:
    """Affine map ``q -> A q + b``."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    dim = mat.shape[0]
    b = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float)
    sign, logdet = np.linalg.slogdet(mat)
    if sign == 0:
        raise SingularMetricError("linear reparameterization is singular")
    inv = np.linalg.inv(mat)
    return Reparameterization(
        lambda q: mat @ q + b,
        lambda q: inv @ (q - b),
        dim,
        jacobian=lambda q: mat,
        log_abs_det_jacobian=lambda q: logdet,
        jacobian_derivative=lambda q: np.zeros((dim, dim, dim)),
        inverse_jacobian=lambda q: inv,
        name="linear",
    )


def noncentering_reparam(spec: FunnelSpec) -> Reparameterization:
    """Map centered funnel coordinates to non-centered ones.

    ``(mu, lambda, theta) -> (mu, lambda, (theta - mu) exp(-lambda))`` applied
    to every individual; ``log|det J| = -N lambda``.
    """
    n = spec.n_individuals
    dim = spec.dim

    def forward(q):
        out = q.copy()
        out[2:] = (q[2:] - q[0]) * np.exp(-q[1])
        return out

    def inverse(q):
        out = q.copy()
        out[2:] = q[0] + q[2:] * np.exp(q[1])
        return out

    rows = np.arange(2, dim)
    eye = np.eye(dim)
    # flat view of the theta block diagonal; much cheaper than fancy indexing
    theta_diag = slice(2 * dim + 2, None, dim + 1)

    def jacobian(q):
        a = np.exp(-q[1])
        jac = eye.copy()
        jac[2:, 0] = -a
        jac[2:, 1] = -(q[2:] - q[0]) * a
        jac.reshape(-1)[theta_diag] = a
        return jac

    def inverse_jacobian(q):
        # d theta / d(mu, lambda, theta_tilde) = (1, theta - mu, e^lambda)
        jac = eye.copy()
        jac[2:, 0] = 1.0
        jac[2:, 1] = q[2:] - q[0]
        jac.reshape(-1)[theta_diag] = np.exp(q[1])
        return jac

    def jacobian_derivative(q):
        a = np.exp(-q[1])
        d = q[2:] - q[0]
        djac = np.zeros((dim, dim, dim))
        # d/dmu
        djac[0, rows, 1] = a
        # d/dlambda
        djac[1, rows, 0] = a
        djac[1, rows, 1] = d * a
        djac[1, rows, rows] = -a
        # d/dtheta_n only touches row n
        djac[rows, rows, 1] = -a
        return djac

    return Reparameterization(
        forward,
        inverse,
        dim,
        jacobian=jacobian,
        log_abs_det_jacobian=lambda q: -n * q[1],
        jacobian_derivative=jacobian_derivative,
        inverse_jacobian=inverse_jacobian,
        name="noncentering",
    )


def pushforward_density(target: TargetDensity, psi: Reparameterization) -> TargetDensity:
    """Density of ``psi(q)`` when ``q`` follows ``target``.

    ``log pi'(q') = log pi(psi^{-1}(q')) - log|det J(psi^{-1}(q'))|``.
    Derivatives are finite differences of that composition.
    """

    def log_density(qp):
        q = psi.inverse(qp)
        return target(q) - psi.log_abs_det_jacobian_at(q)

    return TargetDensity(log_density, target.dim, name=f"{target.name}|{psi.name}")


def pushforward_tangent(psi: Reparameterization, q, v):
    """Push a tangent vector at ``q`` to ``psi(q)``: ``v' = J v``.

    Returns:
        Tuple ``(psi(q), v')``.
    """
    q, v = np.asarray(q, dtype=float), np.asarray(v, dtype=float)
    if v.shape != q.shape:
        raise ValueError("tangent vector and base point dimensions differ")
    return psi.forward(q), psi.jacobian_at(q) @ v


def pullback_cotangent(psi: Reparameterization, q, p):
    """Carry a covector at ``q`` to ``psi(q)`` by pulling back along ``psi^{-1}``.

    ``p' = J^{-T} p``, so the pairing ``p'(v') = p(v)`` is preserved for
    tangent vectors pushed forward with :func:`pushforward_tangent`.

    Returns:
        Tuple ``(psi(q), p')``.

    Raises:
        SingularMetricError: if the Jacobian at ``q`` is singular.
    """
    q, p = np.asarray(q, dtype=float), np.asarray(p, dtype=float)
    if p.shape != q.shape:
        raise ValueError("covector and base point dimensions differ")
    try:
        p_new = np.linalg.solve(psi.jacobian_at(q).T, p)
    except np.linalg.LinAlgError as exc:
        raise SingularMetricError("Jacobian is singular") from exc
    return psi.forward(q), p_new


def tangent_lift(psi: Reparameterization):
    """Phase-space map ``(q, v) -> (psi(q), J(q) v)`` on stacked arrays."""
    d = psi.dim

    def lifted(z):
        q_new, v_new = pushforward_tangent(psi, z[:d], z[d:])
        return np.concatenate([q_new, v_new])

    return lifted


def cotangent_lift(psi: Reparameterization):
    """Phase-space map ``(q, p) -> (psi(q), J(q)^{-T} p)`` on stacked arrays."""
    d = psi.dim

    def lifted(z):
        q_new, p_new = pullback_cotangent(psi, z[:d], z[d:])
        return np.concatenate([q_new, p_new])

    return lifted


def equivalent_metric(g: MetricField, psi: Reparameterization) -> MetricField:
    """Metric in the original chart equivalent to ``g`` in the ``psi`` chart.

    ``gbar(q) = J(q)^T g(psi(q)) J(q)``. Derivatives are analytic whenever
    ``g`` and ``psi`` supply theirs.
    """
    if g.dim != psi.dim:
        raise ValueError("metric and reparameterization dimensions differ")

    def components(q):
        jac = psi.jacobian_at(q)
        mat = jac.T @ g.components_at(psi.forward(q)) @ jac
        return 0.5 * (mat + mat.T)

    def derivatives(q):
        jac = psi.jacobian_at(q)
        djac = psi.jacobian_derivative_at(q)
        qp = psi.forward(q)
        gq = g.components_at(qp)
        left = np.einsum("kli,lm,mj->kij", djac, gq, jac)
        out = left + np.transpose(left, (0, 2, 1))
        if not g.constant:
            # chain rule through g(psi(q))
            dg = np.einsum("mab,mk->kab", g.derivatives_at(qp), jac)
            out += np.einsum("ai,kab,bj->kij", jac, dg, jac)
        return out

    inverse_jacobian = psi._inverse_jacobian or psi.inverse_jacobian_at
    unit_base = g.constant and np.array_equal(g._const, np.eye(g.dim))

    def inverse(q):
        kinv = inverse_jacobian(q)
        if unit_base:
            return kinv @ kinv.T
        if g.constant:
            return kinv @ g._const_inv @ kinv.T
        return kinv @ g.inverse_at(psi.forward(q)) @ kinv.T

    def log_det(q):
        return 2.0 * psi.log_abs_det_jacobian_at(q) + g.log_det_at(psi.forward(q))

    analytic = psi._jacobian_derivative is not None and g.has_analytic_derivatives
    return MetricField(
        components,
        g.dim,
        derivatives=derivatives if analytic else None,
        inverse=inverse,
        log_det=log_det,
        fd_step=g.fd_step,
    )


def pushforward_metric(g: MetricField, psi: Reparameterization) -> MetricField:
    """Components of the same metric in the ``psi`` chart (a complete change of chart).

    ``g'(q') = K^T g(q) K`` with ``q = psi^{-1}(q')`` and ``K = J(q)^{-1}``, so
    that ``g'(J v, J v) = g(v, v)``. Derivatives use finite differences.
    """

    def components(qp):
        q = psi.inverse(qp)
        kinv = psi.inverse_jacobian_at(q)
        mat = kinv.T @ g.components_at(q) @ kinv
        return 0.5 * (mat + mat.T)

    return MetricField(components, g.dim, fd_step=g.fd_step)


class DeviationTensor:
    """Local deviation of a metric from the curvature of a log density.

    ``Delta(q) = g(q) + cov_hess(log pi)(q)`` with the covariant Hessian taken
    under ``g``'s own Levi-Civita connection. It vanishes identically exactly
    when ``g`` equals the covariant precision ``-cov_hess(log pi)``, e.g. a
    Gaussian target with its precision matrix as metric.
    """

    def __init__(self, metric: MetricField, log_density: ScalarField):
        self.metric = metric
        self.log_density = log_density

    def at(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        delta = self.metric.components_at(q) + covariant_hessian(self.metric, self.log_density, q)
        return 0.5 * (delta + delta.T)

    def scalar_at(self, q) -> float:
        """``|det Delta(q)|``."""
        return float(abs(np.linalg.det(self.at(q))))

    def max_abs_at(self, q) -> float:
        """Largest absolute entry of ``Delta(q)``."""
        return float(np.max(np.abs(self.at(q))))


def deviation(g_eff: MetricField, target: ScalarField) -> DeviationTensor:
    return DeviationTensor(g_eff, target)


def evaluation_points(
    dim: int,
    *,
    points=None,
    box=None,
    resolution: Optional[int] = None,
    n_points: int = 200,
    center=None,
    scale=1.0,
    seed: int = 0,
) -> np.ndarray:
    """Points at which to summarize a deviation field.

    Exactly one policy applies, in order of precedence: explicit ``points``;
    a regular grid over ``box = (low, high)`` with ``resolution`` nodes per
    axis; or ``n_points`` draws from a Gaussian envelope ``N(center, scale^2 I)``.
    """
    if points is not None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != dim:
            raise ValueError(f"points must have {dim} columns")
        return pts
    if box is not None:
        if resolution is None or resolution < 1:
            raise ValueError("grid evaluation needs a positive resolution")
        low = np.broadcast_to(np.asarray(box[0], dtype=float), (dim,))
        high = np.broadcast_to(np.asarray(box[1], dtype=float), (dim,))
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(low, high)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    rng = np.random.default_rng(seed)
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return center + scale * rng.standard_normal((n_points, dim))


REPARAMS = {
    "noncentering": noncentering_reparam,
}


def get_reparam(name: str, spec: FunnelSpec) -> Reparameterization:
    try:
        return REPARAMS[name](spec)
    except KeyError:
        raise KeyError(f"unknown reparameterization {name!r}; known: {sorted(REPARAMS)}") from None
