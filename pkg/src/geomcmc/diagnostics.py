"""Chain quality summaries: effective sample size, moments, acceptance, divergences."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from geomcmc.reparam import DeviationTensor
from geomcmc.samplers import ChainOutput

MIN_DRAWS = 8


class EssEstimate(NamedTuple):
    ess: float
    degenerate: bool


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at all lags, computed by FFT (biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    centered = x - x.mean()
    size = 1 << int(2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(draws) -> EssEstimate:
    """Effective sample size of one scalar draw sequence.

    Autocorrelations are summed in adjacent pairs, truncated at the first
    non-positive pair and forced to be monotone non-increasing (Geyer's
    initial monotone sequence). The estimate is capped at the number of draws.

    Raises:
        ValueError: for fewer than 8 draws.
    """
    x = np.asarray(draws, dtype=float)
    n = x.shape[0]
    if n < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} draws, got {n}")
    if np.var(x) == 0.0 or not np.all(np.isfinite(x)):
        return EssEstimate(float(n), True)
    rho = autocorrelation(x)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    positive = pairs > 0
    cut = n_pairs if positive.all() else int(np.argmin(positive))
    pairs = np.minimum.accumulate(pairs[:cut])
    tau = -1.0 + 2.0 * float(np.sum(pairs))
    if tau <= 0:
        return EssEstimate(float(n), False)
    return EssEstimate(min(float(n), n / tau), False)


@dataclass
class ChainSummary:
    mean: list = field(default_factory=list)
    var: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)
    accept_rate: Optional[float] = None
    n_divergent: int = 0
    n_draws: int = 0
    delta_mean: Optional[float] = None
    delta_max: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "var": self.var,
            "ess": self.ess,
            "accept_rate": self.accept_rate,
            "n_divergent": self.n_divergent,
            "delta_mean": self.delta_mean,
            "delta_max": self.delta_max,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def summarize(
    chain: ChainOutput, deviation: Optional[DeviationTensor] = None, stride: int = 10
) -> ChainSummary:
    """Per-coordinate moments and ESS plus acceptance and divergence counts.

    When ``deviation`` is given, ``|det Delta|`` is averaged and maximized over
    every ``stride``-th visited point.
    """
    draws = np.asarray(chain.draws, dtype=float)
    n = draws.shape[0]
    if n == 0:
        return ChainSummary()
    summary = ChainSummary(
        mean=[float(m) for m in draws.mean(axis=0)],
        var=[float(v) for v in draws.var(axis=0, ddof=1)] if n > 1 else [0.0] * draws.shape[1],
        accept_rate=float(np.mean(chain.accepted)),
        n_divergent=int(np.sum(chain.divergent)),
        n_draws=n,
    )
    if n >= MIN_DRAWS:
        estimates = [effective_sample_size(col) for col in draws.T]
        summary.ess = [e.ess for e in estimates]
        summary.degenerate = [e.degenerate for e in estimates]
    if deviation is not None:
        values = np.array([deviation.scalar_at(q) for q in draws[::stride]])
        summary.delta_mean = float(values.mean())
        summary.delta_max = float(values.max())
    return summary


def mcmc_standard_errors(draws) -> tuple:
    """Monte Carlo standard errors of the per-coordinate mean and variance.

    Returns:
        Tuple ``(se_mean, se_var)`` of arrays, using each functional's own ESS.
    """
    draws = np.asarray(draws, dtype=float)
    centered = draws - draws.mean(axis=0)
    se_mean, se_var = [], []
    for col, sq in zip(draws.T, (centered**2).T):
        se_mean.append(np.sqrt(col.var(ddof=1) / effective_sample_size(col).ess))
        se_var.append(np.sqrt(sq.var(ddof=1) / effective_sample_size(sq).ess))
    return np.array(se_mean), np.array(se_var)
