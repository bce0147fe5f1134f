"""Posterior summaries and convergence checks for multi-chain draws."""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError

__all__ = ["PosteriorDraws", "summarize", "rhat", "rhat_table"]


@dataclass
class PosteriorDraws:
    """Retained draws from one or more chains over a common parameter set.

    ``chains`` holds one ``(n_retained, n_params)`` array per chain, all
    with identical shapes and column order given by ``names``.  ``burn_in``
    records how many leading sweeps were discarded before retention.
    """

    chains: list
    names: tuple
    burn_in: int = 0
    stats: list = field(default_factory=list)
    invariant_violations: list = field(default_factory=list)

    def __post_init__(self):
        if not self.chains:
            raise ConfigError("PosteriorDraws needs at least one chain")
        self.chains = [np.asarray(c, dtype=float) for c in self.chains]
        shape = self.chains[0].shape
        if len(shape) != 2:
            raise ConfigError(f"chain arrays must be 2-d, got shape {shape}")
        for c in self.chains[1:]:
            if c.shape != shape:
                raise ConfigError(
                    f"all chains must share one shape, got {c.shape} vs {shape}"
                )
        self.names = tuple(self.names)
        if len(self.names) != shape[1]:
            raise ConfigError(
                f"{len(self.names)} names for {shape[1]} parameter columns"
            )

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def n_retained(self):
        return self.chains[0].shape[0]

    def pooled(self):
        """All chains stacked into one ``(n_chains * n_retained, n_params)`` array."""
        return np.concatenate(self.chains, axis=0)

    def column(self, name):
        """Pooled draws of one named parameter."""
        try:
            idx = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None
        return self.pooled()[:, idx]


def summarize(draws, quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)):
    """Per-parameter posterior summary, pooled across chains.

    Returns a DataFrame indexed by parameter name with the mean, the
    sample standard deviation, the median, and the requested quantiles
    (linear interpolation on the pooled draws).
    """
    pooled = draws.pooled()
    qs = np.asarray(quantiles, dtype=float)
    if qs.size and (qs.min() < 0 or qs.max() > 1):
        raise ConfigError("quantiles must lie in [0, 1]")
    cols = {
        "mean": pooled.mean(axis=0),
        "sd": pooled.std(axis=0, ddof=1) if pooled.shape[0] > 1 else np.zeros(pooled.shape[1]),
        "median": np.median(pooled, axis=0),
    }
    qvals = np.quantile(pooled, qs, axis=0)
    for q, row in zip(qs, qvals):
        cols[f"q{q:g}"] = row
    return pd.DataFrame(cols, index=list(draws.names))


def _split_chains(chains):
    halves = []
    for c in chains:
        half = c.shape[0] // 2
        if half < 1:
            raise ConfigError("chains are too short to split")
        halves.append(c[:half])
        halves.append(c[half : 2 * half])
    return halves


def rhat(draws, split=False):
    """Potential scale reduction factor per parameter.

    With ``m`` chains of length ``n`` and chain means ``mu_c``:
    ``B = n * Var(mu_c)``, ``W = mean of within-chain variances`` and
    ``Rhat = sqrt(((n-1)/n + B/(n*W)) / 1)`` via the pooled-variance
    estimate ``((n-1)/n) W + B/n`` over ``W``.  ``split=True`` first cuts
    each chain in half, which also flags within-chain drift.  Parameters
    with zero within-chain variance in identical chains return the
    degenerate limit ``sqrt((n-1)/n)``.
    """
    chains = _split_chains(draws.chains) if split else list(draws.chains)
    if len(chains) < 2:
        raise ConfigError("rhat needs at least two chains (or split=True)")
    stacked = np.stack(chains)  # (m, n, params)
    m, n, _ = stacked.shape
    if n < 2:
        raise ConfigError("rhat needs at least two draws per chain")
    chain_means = stacked.mean(axis=1)
    b = n * chain_means.var(axis=0, ddof=1)
    w = stacked.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    degenerate = w == 0
    r[degenerate] = np.sqrt((n - 1) / n)
    return r


def rhat_table(draws, split=False):
    """R-hat values as a one-column DataFrame indexed by parameter name."""
    return pd.DataFrame({"rhat": rhat(draws, split=split)}, index=list(draws.names))
