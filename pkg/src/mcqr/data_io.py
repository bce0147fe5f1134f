"""Dataset generation, long-format CSV round trips, draw stores, config files."""

import csv
import json
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import pandas as pd
from numpy.random import SeedSequence, default_rng

from .errors import ConfigError, IngestionError
from .gibbs import GibbsConfig, simulate_latents
from .linalg import robust_cholesky
from .model import (
    ChoiceDataset,
    DesignConfig,
    PriorSpec,
    QuantileSpec,
    build_design_matrix,
    choices_from_utility_matrix,
)

__all__ = [
    "SyntheticSpec",
    "synthetic_design",
    "generate_synthetic",
    "dataset_to_long",
    "write_long_csv",
    "read_long_csv",
    "write_draws",
    "read_draws",
    "ParsedConfig",
    "parse_config",
    "parse_config_dict",
    "resolved_config_dict",
]

FLOAT_FMT = "%.17g"

DEFAULT_BETA = (1.0, 2.0, 3.0, 1.0, 3.0, 2.0, 1.0)
DEFAULT_SHARED_COV = (
    (1.0, 0.5, 0.5),
    (0.5, 1.0, 0.5),
    (0.5, 0.5, 1.0),
)


def synthetic_design():
    """Design layout of the built-in generator.

    Three alternatives against a baseline; each 3x7 design matrix stacks
    per-alternative intercept dummies, one shared-coefficient covariate
    (its three values in a single column), and one alternative-specific
    covariate (a diagonal 3x3 block).
    """
    return DesignConfig(
        alternatives=("alt1", "alt2", "alt3"),
        baseline="alt0",
        shared=("x_shared",),
        alternative_specific=("x_own",),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Settings of the synthetic choice-data generator.

    ``beta_true`` fills the 7 design columns of :func:`synthetic_design`.
    The shared covariate triple is N3(0, ``shared_cov``); the
    alternative-specific triple is N3(0, I).  By default the latent
    utilities receive a median-quantile asymmetric Laplace error with unit
    scales (drawn through its exponential scale mixture); ``noiseless``
    switches to the deterministic rule ``Y* = X beta``.
    """

    n: int
    beta_true: tuple = DEFAULT_BETA
    shared_cov: tuple = DEFAULT_SHARED_COV
    seed: int = 0
    noiseless: bool = False
    tau: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        beta = np.asarray(self.beta_true, dtype=float)
        if beta.shape != (7,):
            raise ConfigError(f"beta_true must have 7 entries, got shape {beta.shape}")
        s = np.asarray(self.shared_cov, dtype=float)
        if s.shape != (3, 3) or not np.allclose(s, s.T):
            raise ConfigError("shared_cov must be a symmetric 3x3 matrix")
        if not np.allclose(np.diag(s), 1.0):
            raise ConfigError("shared_cov must have a unit diagonal")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise ConfigError("shared_cov must be positive definite") from None
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        object.__setattr__(self, "beta_true", tuple(map(float, beta)))
        object.__setattr__(self, "shared_cov", tuple(map(tuple, s.tolist())))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def generate_synthetic(spec):
    """Simulate a :class:`ChoiceDataset` under the built-in design.

    Deterministic given ``spec.seed``.  Covariates are drawn first, then
    (unless ``noiseless``) the error's mixing weights and Gaussian factors,
    so the two modes share covariates at equal seeds.
    """
    design = synthetic_design()
    rng = default_rng(SeedSequence(spec.seed))
    n, p, k = spec.n, design.p, design.k
    beta = np.asarray(spec.beta_true)

    s_chol = np.linalg.cholesky(np.asarray(spec.shared_cov))
    x_shared = rng.standard_normal((n, p)) @ s_chol.T
    x_own = rng.standard_normal((n, p))

    X = np.zeros((n, p, k))
    rows = np.arange(p)
    X[:, rows, rows] = 1.0
    X[:, :, p] = x_shared
    X[:, rows, p + 1 + rows] = x_own

    if spec.noiseless:
        ystar = X @ beta
        y = choices_from_utility_matrix(ystar)
    else:
        q = QuantileSpec(tau=spec.tau, p=p)
        _, ystar, y = simulate_latents(beta, np.eye(p), np.ones(p), X, q, rng)
    return ChoiceDataset(y=y, X=X, column_names=design.column_names())


def dataset_to_long(dataset, design):
    """Long-format frame of a dataset built under ``design``.

    Emits one row per (observation, non-baseline alternative) with the
    covariate values read back out of the design matrices; baseline choices
    appear as observations whose rows all carry ``choice_flag = 0``.
    """
    n, p = dataset.n, dataset.p
    if p != design.p or dataset.k != design.k:
        raise ConfigError(
            f"dataset shape (p={dataset.p}, k={dataset.k}) does not match the design "
            f"(p={design.p}, k={design.k})"
        )
    shared_base = p + int(design.common_intercept)
    specific_base = shared_base + len(design.shared)
    records = []
    for i in range(n):
        for j, alt in enumerate(design.alternatives):
            rec = {
                "obs_id": i + 1,
                "alt": alt,
                "choice_flag": int(dataset.y[i] == j + 1),
            }
            for c, name in enumerate(design.shared):
                rec[name] = dataset.X[i, j, shared_base + c]
            for c, name in enumerate(design.alternative_specific):
                rec[name] = dataset.X[i, j, specific_base + c * p + j]
            records.append(rec)
    cols = ["obs_id", "alt", "choice_flag", *design.covariates()]
    return pd.DataFrame.from_records(records, columns=cols)


def write_long_csv(frame, path):
    """Write a long-format frame with round-trip-safe float formatting."""
    frame.to_csv(path, index=False, float_format=FLOAT_FMT)


def read_long_csv(path, design):
    """Read a long-format CSV and assemble its :class:`ChoiceDataset`."""
    try:
        # round_trip: pandas' default float parser can be off by a few ulp
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise IngestionError(f"no such file: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"could not parse {path}: {exc}") from None
    return build_design_matrix(frame, design)


# ---------------------------------------------------------------------------
# Draw stores
# ---------------------------------------------------------------------------


def write_draws(path, draws, names, first_iter=1):
    """Persist one chain's draws as ``iter,param,value`` rows.

    Values are written with 17 significant digits, so reading the file back
    reproduces every double bit for bit.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != len(names):
        raise ConfigError(
            f"draws shape {draws.shape} does not match {len(names)} parameter names"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        # csv.writer quotes names that contain the delimiter, e.g. phi[1,2]
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "param", "value"])
        for r in range(draws.shape[0]):
            it = first_iter + r
            row = draws[r]
            writer.writerows(
                (it, name, f"{row[c]:.17g}") for c, name in enumerate(names)
            )


def read_draws(path):
    """Read a draw store back into ``(names, matrix, iterations)``.

    Inverse of :func:`write_draws`; parameter order follows first
    appearance in the file and every iteration must cover the same set.
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise IngestionError(f"no such file: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"could not parse {path}: {exc}") from None
    expected = ["iter", "param", "value"]
    if list(frame.columns) != expected:
        raise IngestionError(
            f"draw store {path} has columns {list(frame.columns)}, expected {expected}"
        )
    names = tuple(pd.unique(frame["param"]))
    iters = pd.unique(frame["iter"])
    wide = frame.pivot(index="iter", columns="param", values="value")
    if wide.isna().any().any():
        raise IngestionError(f"draw store {path} is missing parameter values")
    wide = wide.loc[iters, list(names)]
    return names, wide.to_numpy(dtype=float), np.asarray(iters, dtype=np.int64)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


class ParsedConfig(NamedTuple):
    prior: PriorSpec
    quantiles: list
    sampler: GibbsConfig
    design: DesignConfig


def _require_keys(section, given, allowed):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown field(s) {unknown} in {section}; allowed: {sorted(allowed)}"
        )


def _spd_or_raise(name, a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T):
        raise ConfigError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} must be positive definite") from None
    return a


def _parse_design(section):
    _require_keys(
        "design", section,
        ("alternatives", "baseline", "shared", "alternative_specific", "common_intercept"),
    )
    if not section:
        return synthetic_design()
    try:
        return DesignConfig(
            alternatives=tuple(section.get("alternatives", ())),
            baseline=section.get("baseline", "alt0"),
            shared=tuple(section.get("shared", ())),
            alternative_specific=tuple(section.get("alternative_specific", ())),
            common_intercept=bool(section.get("common_intercept", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"design: {exc}") from None


def _parse_prior(section, design):
    _require_keys("prior", section, ("b0", "B0", "eta", "phi0", "k_shape", "alpha"))
    k, p = design.k, design.p
    b0 = np.asarray(section.get("b0", np.zeros(k)), dtype=float)
    if b0.shape != (k,):
        raise ConfigError(f"prior.b0 must have length {k}, got shape {b0.shape}")
    B0 = _spd_or_raise("prior.B0", section.get("B0", np.eye(k)))
    if B0.shape != (k, k):
        raise ConfigError(f"prior.B0 must be {k}x{k}, got {B0.shape}")
    eta = float(section.get("eta", 20.0))
    if eta <= p - 1:
        raise ConfigError(f"prior.eta must exceed p - 1 = {p - 1}, got {eta}")
    phi0 = section.get("phi0")
    if phi0 is not None:
        phi0 = _spd_or_raise("prior.phi0", phi0)
        if phi0.shape != (p, p):
            raise ConfigError(f"prior.phi0 must be {p}x{p}, got {phi0.shape}")
    k_shape = float(section.get("k_shape", 10.0))
    alpha = float(section.get("alpha", 0.5))
    if k_shape <= 0 or alpha <= 0:
        raise ConfigError("prior.k_shape and prior.alpha must be positive")
    return PriorSpec(b0=b0, B0=B0, eta=eta, phi0=phi0, k_shape=k_shape, alpha=alpha)


def _parse_taus(raw, p):
    if raw is None:
        raw = [0.5]
    if np.isscalar(raw):
        raw = [raw]
    taus = []
    for t in raw:
        t = float(t)
        if not 0.0 < t < 1.0:
            raise ConfigError(f"tau must lie strictly in (0, 1), got {t}")
        taus.append(t)
    if not taus:
        raise ConfigError("tau list must not be empty")
    if len(set(taus)) != len(taus):
        raise ConfigError(f"tau list has duplicates: {taus}")
    return [QuantileSpec(tau=t, p=p) for t in taus]


def _parse_sampler(section):
    fields = (
        "n_draws", "burn_in", "n_chains", "seed", "rejection_max_attempts",
        "phi_df_mode", "phi_update", "d_proposal", "rescale_trace",
        "record_ystar", "check_invariants", "log_every",
    )
    _require_keys("sampler", section, fields)
    return GibbsConfig(**{k: section[k] for k in fields if k in section})


def parse_config_dict(raw):
    """Build the run settings from an in-memory config mapping."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a JSON object, got {type(raw).__name__}")
    _require_keys("config", raw, ("design", "prior", "tau", "sampler"))
    design = _parse_design(raw.get("design", {}))
    prior = _parse_prior(raw.get("prior", {}), design)
    quantiles = _parse_taus(raw.get("tau"), design.p)
    sampler = _parse_sampler(raw.get("sampler", {}))
    return ParsedConfig(prior=prior, quantiles=quantiles, sampler=sampler, design=design)


def parse_config(path):
    """Parse a JSON config file; absent fields take the standard defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config_dict(raw)


def resolved_config_dict(parsed):
    """Canonical mapping capturing every setting of a parsed config.

    Feeding the result back through :func:`parse_config_dict` reproduces the
    same settings, which is what makes run manifests replayable.
    """
    prior, quantiles, sampler, design = parsed
    phi0 = prior.phi0_for(design.p)
    return {
        "design": {
            "alternatives": list(design.alternatives),
            "baseline": design.baseline,
            "shared": list(design.shared),
            "alternative_specific": list(design.alternative_specific),
            "common_intercept": design.common_intercept,
        },
        "prior": {
            "b0": prior.b0.tolist(),
            "B0": prior.B0.tolist(),
            "eta": prior.eta,
            "phi0": np.asarray(phi0).tolist(),
            "k_shape": prior.k_shape,
            "alpha": prior.alpha,
        },
        "tau": [q.tau for q in quantiles],
        "sampler": {
            "n_draws": sampler.n_draws,
            "burn_in": sampler.burn_in,
            "n_chains": sampler.n_chains,
            "seed": sampler.seed,
            "rejection_max_attempts": sampler.rejection_max_attempts,
            "phi_df_mode": sampler.phi_df_mode,
            "phi_update": sampler.phi_update,
            "d_proposal": sampler.d_proposal,
            "rescale_trace": sampler.rescale_trace,
            "record_ystar": sampler.record_ystar,
            "check_invariants": sampler.check_invariants,
            "log_every": sampler.log_every,
        },
    }
