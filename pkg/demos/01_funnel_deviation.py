"""How far is each metric from optimal on the funnel?

Evaluates |det Delta| for the centered funnel under the identity metric and
under the metric induced by non-centering, along a slice that walks down
into the neck (lambda -> -3).
"""

# %%
import numpy as np

from geomcmc import FunnelSpec, MetricField, deviation, equivalent_metric, funnel_target, noncentering_reparam

spec = FunnelSpec(n_individuals=1)
target = funnel_target(spec)
psi = noncentering_reparam(spec)
gbar = equivalent_metric(MetricField.identity(3), psi)

# %% The identity metric gets worse as the funnel narrows.
plain = deviation(MetricField.identity(3), target)
induced = deviation(gbar, target)

print(f"{'lambda':>7} {'|det D| identity':>18} {'max|D| induced':>16}")
for lam in np.linspace(1.0, -3.0, 9):
    q = np.array([0.0, lam, 1.0])
    print(f"{lam:7.2f} {plain.scalar_at(q):18.4g} {induced.max_abs_at(q):16.2e}")

# %% With unit offset the identity metric gives |det D| = 2 exp(-4 lambda) exactly.
q = np.array([0.0, -2.0, 1.0])
print("closed form check:", plain.scalar_at(q), 2 * np.exp(8.0))

# %% Non-unit prior scales: match the base metric to the prior precision.
scaled = FunnelSpec(2, mu_prior_scale=3.0, lambda_prior_scale=0.4)
base = MetricField.diagonal(scaled.prior_precision())
matched = deviation(equivalent_metric(base, noncentering_reparam(scaled)), funnel_target(scaled))
q = np.random.default_rng(0).standard_normal(scaled.dim)
print("scaled priors, matched base metric, max|D| =", matched.max_abs_at(q))
