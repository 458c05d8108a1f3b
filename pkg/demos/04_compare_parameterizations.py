"""Matched-budget chains under the three funnel setups.

A shortened version of the comparison the CLI runs with
``geomcmc compare``; increase ``n_samples`` for sharper estimates.
"""

# %%
from geomcmc.cli import compare_parameterizations, validate_config

cfg = validate_config(
    {
        "model": {"name": "funnel", "n_individuals": 1},
        "sampler": {"name": "hmc", "step_size": 0.1, "n_steps": 16, "n_samples": 1000, "seed": 0, "n_chains": 2},
    }
)
report = compare_parameterizations(cfg)

# %%
print(f"{'setup':22} {'ESS(mu)':>9} {'ESS(lambda)':>12} {'ESS(theta)':>11} {'divergent':>10} {'mean |det D|':>13}")
for label, entry in report["setups"].items():
    for ess, n_div, delta in zip(entry["ess"], entry["n_divergent"], entry["delta_mean"]):
        print(f"{label:22} {ess[0]:9.0f} {ess[1]:12.0f} {ess[2]:11.0f} {n_div:10d} {delta:13.3g}")
