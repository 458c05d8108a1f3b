"""Dense Riemannian geometry on a single global coordinate chart.

Points, tangent vectors and cotangent vectors are plain 1D numpy arrays of
length ``dim``; tangent vectors carry components ``v^i`` in the coordinate
basis and cotangent vectors components ``p_i`` in the dual basis. Metric
derivative arrays are indexed ``dg[k, i, j] = d g_ij / d q^k`` and Christoffel
arrays ``gamma[k, i, j] = Gamma^k_ij``.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from geomcmc.errors import DivergenceError, NonFiniteError, SingularMetricError

DEFAULT_FD_STEP = 1e-5
# Second derivatives taken from values alone need a larger step to keep
# rounding error (which scales as 1/h^2) in check.
NESTED_FD_STEP = 1e-3


def _as_point(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError(f"expected a 1D coordinate array, got shape {q.shape}")
    return q


def fd_steps(q: np.ndarray, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Per-coordinate central-difference steps, ``step * max(1, |q_i|)``."""
    return step * np.maximum(1.0, np.abs(q))


def fd_derivative(
    func: Callable[[np.ndarray], np.ndarray], q, step: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central finite-difference derivative of an array-valued function.

    Uses the fourth-order five-point stencil
    ``(-f(q+2h) + 8 f(q+h) - 8 f(q-h) + f(q-2h)) / 12h``.

    Args:
        func: Function mapping a point to a scalar or array of any shape.
        q: Point to differentiate at.
        step: Base step, scaled per coordinate by ``max(1, |q_i|)``.

    Returns:
        Array of shape ``(dim,) + func(q).shape`` whose leading index is the
        differentiation coordinate.
    """
    q = _as_point(q)
    hs = fd_steps(q, step)
    out = []
    for k, h in enumerate(hs):
        dq = np.zeros_like(q)
        dq[k] = h
        near = np.asarray(func(q + dq)) - np.asarray(func(q - dq))
        far = np.asarray(func(q + 2 * dq)) - np.asarray(func(q - 2 * dq))
        out.append((8 * near - far) / (12 * h))
    out = np.array(out)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("finite-difference derivative is not finite")
    return out


class ScalarField:
    """Scalar function on the chart with optional analytic derivatives.

    Missing derivatives fall back to central finite differences: the gradient
    differences the value, the Hessian differences the gradient. When neither
    derivative is supplied the Hessian differences the value twice with the
    larger ``NESTED_FD_STEP``.
    """

    def __init__(
        self,
        value: Callable[[np.ndarray], float],
        gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        fd_step: float = DEFAULT_FD_STEP,
    ):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.fd_step = fd_step

    @property
    def has_analytic_derivatives(self) -> bool:
        return self._gradient is not None and self._hessian is not None

    def __call__(self, q) -> float:
        return float(self._value(_as_point(q)))

    def gradient(self, q) -> np.ndarray:
        q = _as_point(q)
        if self._gradient is not None:
            return np.asarray(self._gradient(q), dtype=float)
        return fd_derivative(self._value, q, self.fd_step)

    def hessian(self, q) -> np.ndarray:
        q = _as_point(q)
        if self._hessian is not None:
            return np.asarray(self._hessian(q), dtype=float)
        if self._gradient is not None:
            hess = fd_derivative(self._gradient, q, self.fd_step)
        else:
            step = max(self.fd_step, NESTED_FD_STEP)
            hess = fd_derivative(lambda x: fd_derivative(self._value, x, step), q, step)
        return 0.5 * (hess + hess.T)


class MetricField:
    """Position-dependent symmetric positive-definite metric components.

    Args:
        components: Function returning the ``(dim, dim)`` matrix ``g_ij(q)``.
        dim: Chart dimension.
        derivatives: Optional function returning ``dg[k, i, j]``. If omitted,
            central differences of ``components`` are used.
        inverse: Optional function returning ``g^{-1}(q)``; a Cholesky solve
            is used otherwise.
        log_det: Optional function returning ``log|g(q)|``.
        constant: Whether the components are position independent. Constant
            metrics cache their factorization and report zero derivatives.
        fd_step: Base step for the finite-difference fallback.
    """

    def __init__(
        self,
        components: Callable[[np.ndarray], np.ndarray],
        dim: int,
        *,
        derivatives: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        log_det: Optional[Callable[[np.ndarray], float]] = None,
        constant: bool = False,
        fd_step: float = DEFAULT_FD_STEP,
    ):
        if dim < 1:
            raise ValueError("metric dimension must be at least 1")
        self._components = components
        self._derivatives = derivatives
        self._inverse = inverse
        self._log_det = log_det
        self.dim = int(dim)
        self.constant = bool(constant)
        self.fd_step = fd_step
        if self.constant:
            mat = np.array(components(np.zeros(self.dim)), dtype=float)
            self._const = mat
            self._const_chol = _cholesky(mat)
            self._const_inv = _chol_inverse(self._const_chol)
            self._const_logdet = 2.0 * np.sum(np.log(np.diag(self._const_chol)))

    @classmethod
    def from_matrix(cls, matrix) -> "MetricField":
        """Constant metric with the given components."""
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("metric matrix must be square")
        if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=0.0):
            raise SingularMetricError("metric matrix is not symmetric")
        return cls(lambda q: matrix, matrix.shape[0], constant=True)

    @classmethod
    def identity(cls, dim: int) -> "MetricField":
        return cls.from_matrix(np.eye(dim))

    @classmethod
    def diagonal(cls, diag) -> "MetricField":
        return cls.from_matrix(np.diag(np.asarray(diag, dtype=float)))

    @property
    def has_analytic_derivatives(self) -> bool:
        return self.constant or self._derivatives is not None

    def components_at(self, q) -> np.ndarray:
        if self.constant:
            return self._const
        q = _as_point(q)
        self._check_dim(q)
        return np.asarray(self._components(q), dtype=float)

    def derivatives_at(self, q, fd_step: Optional[float] = None) -> np.ndarray:
        """Metric partial derivatives ``dg[k, i, j] = d g_ij / d q^k``."""
        q = _as_point(q)
        self._check_dim(q)
        if self.constant:
            return np.zeros((self.dim,) * 3)
        if self._derivatives is not None and fd_step is None:
            return np.asarray(self._derivatives(q), dtype=float)
        return fd_derivative(self._components, q, fd_step or self.fd_step)

    def cholesky_at(self, q) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``g = L L^T``."""
        if self.constant:
            return self._const_chol
        return _cholesky(self.components_at(q))

    def inverse_at(self, q) -> np.ndarray:
        if self.constant:
            return self._const_inv
        if self._inverse is not None:
            return np.asarray(self._inverse(_as_point(q)), dtype=float)
        return _chol_inverse(self.cholesky_at(q))

    def log_det_at(self, q) -> float:
        if self.constant:
            return self._const_logdet
        if self._log_det is not None:
            return float(self._log_det(_as_point(q)))
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky_at(q)))))

    def _check_dim(self, q: np.ndarray) -> None:
        if q.shape[0] != self.dim:
            raise ValueError(f"point has dimension {q.shape[0]}, metric has {self.dim}")


def _cholesky(mat: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(mat)):
        raise SingularMetricError("metric components are not finite")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise SingularMetricError("metric is not positive definite") from exc


def _chol_inverse(chol: np.ndarray) -> np.ndarray:
    inv = sla.cho_solve((chol, True), np.eye(chol.shape[0]))
    return 0.5 * (inv + inv.T)


def metric_inverse(g: MetricField, q) -> np.ndarray:
    """Inverse metric components ``g^ij(q)``.

    Raises:
        SingularMetricError: if the components are not positive definite.
    """
    return g.inverse_at(q)


def quadratic_form(g: MetricField, q, v) -> float:
    """Squared length ``g_ij(q) v^i v^j`` of a tangent vector."""
    v = _as_point(v)
    if v.shape[0] != g.dim:
        raise ValueError(f"vector has dimension {v.shape[0]}, metric has {g.dim}")
    return float(v @ g.components_at(q) @ v)


def _lowered_christoffel(dg: np.ndarray) -> np.ndarray:
    # [l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    return np.transpose(dg, (2, 0, 1)) + np.transpose(dg, (2, 1, 0)) - dg


def christoffel(g: MetricField, q, fd_step: Optional[float] = None) -> np.ndarray:
    """Levi-Civita connection coefficients ``gamma[k, i, j] = Gamma^k_ij``.

    Uses the metric's analytic derivatives when available; passing
    ``fd_step`` forces central differences with that base step.
    """
    q = _as_point(q)
    if g.constant:
        return np.zeros((g.dim,) * 3)
    dg = g.derivatives_at(q, fd_step)
    if not np.all(np.isfinite(dg)):
        raise NonFiniteError("metric derivatives are not finite")
    return 0.5 * np.einsum("kl,lij->kij", g.inverse_at(q), _lowered_christoffel(dg))


def geodesic_acceleration(g: MetricField, q, v) -> np.ndarray:
    """``-Gamma^k_ij v^i v^j`` without materializing the full connection."""
    dg = g.derivatives_at(q)
    # c_l = 2 d_i g_jl v^i v^j - d_l g_ij v^i v^j
    dgv = np.einsum("kij,j->ki", dg, v)
    c = 2.0 * (v @ dgv) - dgv @ v
    return -0.5 * g.inverse_at(q) @ c


def _rk4(rhs, y: np.ndarray, h: float, n_steps: int, record: bool):
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_loop(rhs, y, h, n_steps, record)


def _rk4_loop(rhs, y, h, n_steps, record):
    path = [y] if record else None
    for _ in range(n_steps):
        try:
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
        except (SingularMetricError, NonFiniteError) as exc:
            raise DivergenceError(f"geodesic left the region where the metric is valid: {exc}", state=y) from exc
        y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError("geodesic left the chart", state=y)
        y = y_next
        if record:
            path.append(y)
    return np.array(path) if record else y


def geodesic_path(g: MetricField, q, v, t: float, n_steps: int = 100):
    """Positions and velocities along a geodesic at ``n_steps + 1`` times.

    Integrates ``q'' + Gamma(q', q') = 0`` with fixed-step RK4.

    Returns:
        Tuple ``(positions, velocities)`` of arrays shaped ``(n_steps + 1, dim)``.

    Raises:
        DivergenceError: if the trajectory produces non-finite coordinates;
            ``state`` holds the last valid concatenated ``(q, v)``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    q, v = _as_point(q), _as_point(v)
    d = q.shape[0]
    if g.constant:
        times = np.linspace(0.0, t, n_steps + 1)[:, None]
        return q + times * v, np.tile(v, (n_steps + 1, 1))

    def rhs(y):
        return np.concatenate([y[d:], geodesic_acceleration(g, y[:d], y[d:])])

    path = _rk4(rhs, np.concatenate([q, v]), t / n_steps, n_steps, record=True)
    return path[:, :d], path[:, d:]


def geodesic_flow(g: MetricField, q, v, t: float, n_steps: int = 100):
    """Exponential map: follow the geodesic through ``(q, v)`` for time ``t``.

    For constant metrics the straight line ``(q + t v, v)`` is returned directly.

    Returns:
        Tuple ``(q_t, v_t)``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    q, v = _as_point(q), _as_point(v)
    if g.constant or t == 0.0:
        return q + t * v, v.copy()
    d = q.shape[0]

    def rhs(y):
        return np.concatenate([y[d:], geodesic_acceleration(g, y[:d], y[d:])])

    y = _rk4(rhs, np.concatenate([q, v]), t / n_steps, n_steps, record=False)
    return y[:d], y[d:]


def parallel_transport(g: MetricField, q, v, u, t: float, n_steps: int = 100) -> np.ndarray:
    """Parallel transport ``u`` along the geodesic through ``(q, v)`` for time ``t``.

    Solves ``u'^k + Gamma^k_ij q'^i u^j = 0`` jointly with the geodesic.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    q, v, u = _as_point(q), _as_point(v), _as_point(u)
    if g.constant or t == 0.0:
        return u.copy()
    d = q.shape[0]

    def rhs(y):
        gamma = christoffel(g, y[:d])
        vel, vec = y[d : 2 * d], y[2 * d :]
        return np.concatenate(
            [
                vel,
                -np.einsum("kij,i,j->k", gamma, vel, vel),
                -np.einsum("kij,i,j->k", gamma, vel, vec),
            ]
        )

    y = _rk4(rhs, np.concatenate([q, v, u]), t / n_steps, n_steps, record=False)
    return y[2 * d :]


def covariant_hessian(g: MetricField, f: ScalarField, q) -> np.ndarray:
    """Covariant Hessian ``d_i d_j f - Gamma^k_ij d_k f`` of a scalar field.

    The result is a symmetric ``(0, 2)`` tensor; under a change of chart it
    transforms as ``J^T H J``, unlike the plain coordinate Hessian.
    """
    q = _as_point(q)
    hess = f.hessian(q)
    grad = f.gradient(q)
    if not (np.all(np.isfinite(hess)) and np.all(np.isfinite(grad))):
        raise NonFiniteError("derivatives of the scalar field are not finite")
    if g.constant:
        return hess
    return hess - np.einsum("kij,k->ij", christoffel(g, q), grad)
