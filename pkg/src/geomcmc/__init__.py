"""Riemannian Markov chain Monte Carlo and reparameterization geometry."""

from geomcmc.errors import ConfigError, DivergenceError, NonFiniteError, SingularMetricError
from geomcmc.geometry import (
    MetricField,
    ScalarField,
    christoffel,
    covariant_hessian,
    geodesic_flow,
    geodesic_path,
    metric_inverse,
    parallel_transport,
    quadratic_form,
)
from geomcmc.targets import (
    FunnelSpec,
    TargetDensity,
    centered_funnel_logpdf,
    funnel_target,
    gaussian_target,
    get_target,
    noncentered_funnel_logpdf,
    standard_gaussian,
)
from geomcmc.reparam import (
    DeviationTensor,
    Reparameterization,
    deviation,
    equivalent_metric,
    noncentering_reparam,
    pullback_cotangent,
    pushforward_density,
    pushforward_metric,
    pushforward_tangent,
)
from geomcmc.samplers import (
    ChainOutput,
    Hamiltonian,
    SamplerConfig,
    geodesic_rwm_step,
    hmc_transition,
    implicit_leapfrog_step,
    leapfrog_step,
    mala_transition,
    run_chain,
    sample_cotangent_gaussian,
    sample_tangent_gaussian,
)
from geomcmc.diagnostics import ChainSummary, effective_sample_size, summarize

__version__ = "0.1.0"
