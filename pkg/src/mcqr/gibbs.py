"""Gibbs sampler for the latent-utility quantile choice model.

One sweep updates, in order: the regression coefficients ``beta`` (normal),
the exponential mixing weights ``W`` (generalized inverse Gaussian), every
latent utility ``y*_ij`` (truncated normal respecting the choice rule), the
correlation matrix ``Phi`` (inverse Wishart normalized to unit diagonal),
and the diagonal scales ``delta_jj`` (coordinate-wise rejection on the
inverse scales).  After the scale step the trace of ``D`` is pinned to
``p`` and the recorded draw's ``beta`` and ``Y*`` absorb the removed
factor, which keeps the coefficient path on an identified scale.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.random import SeedSequence, default_rng
from scipy.linalg import solve_triangular

from .errors import ConfigError, NumericalError
from .linalg import robust_cholesky
from .model import ChainState, choices_from_utility_matrix
from .samplers import (
    GigParams,
    SamplerStats,
    TruncInterval,
    sample_gig_many,
    sample_inverse_wishart,
    sample_truncnorm_many,
)

__all__ = [
    "GibbsConfig",
    "RecordedDraw",
    "ChainDraws",
    "init_state",
    "beta_full_conditional",
    "sample_beta_fc",
    "w_gig_params",
    "sample_w_fc",
    "ystar_conditional",
    "sample_ystar_fc",
    "phi_data_matrix",
    "phi_scale_matrix",
    "phi_degrees_of_freedom",
    "phi_prior_shape",
    "phi_log_conditional",
    "normalize_correlation",
    "sample_phi_fc",
    "d_site_moments",
    "d_acceptance_probability",
    "sample_d_fc",
    "apply_scale_constraints",
    "gibbs_sweep",
    "run_chain",
    "run_chains",
    "simulate_latents",
    "param_names",
]

log = logging.getLogger(__name__)

# Floor on the GIG rate chi, guarding against exactly-zero residuals.
CHI_FLOOR = 1e-12
# Residuals below this magnitude contribute no information to a delta
# coordinate and are excluded from its site summary.
RESID_FLOOR = 1e-300

PHI_DF_MODES = ("eta+n+p+1", "eta+n")
PHI_UPDATES = ("exact", "conjugate-normalize")
D_PROPOSALS = ("matched", "fixed-nk", "fixed-2nk")

# Contraction paths for the recurring einsum calls, keyed by subscripts and
# operand shapes.  Path search costs more than the small contractions here.
_EINSUM_PATHS = {}


def _einsum(subscripts, *operands):
    key = (subscripts, tuple(op.shape for op in operands))
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *operands, optimize="greedy")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(subscripts, *operands, optimize=path)


@dataclass(frozen=True)
class GibbsConfig:
    """Run-length, seeding, and numerical-policy knobs for the sampler.

    ``n_draws`` counts total sweeps per chain including ``burn_in``.
    ``phi_df_mode`` selects the posterior degrees of freedom of the
    correlation step: ``"eta+n+p+1"`` (default) or the plain conjugate
    count ``"eta+n"``; the implied prior shape is the posterior value minus
    ``n``.  ``phi_update`` chooses how that conditional is drawn:
    ``"exact"`` (default) slice-samples each off-diagonal entry of the
    exact full conditional under the normalized-inverse-Wishart prior,
    while ``"conjugate-normalize"`` draws an unrestricted inverse-Wishart
    matrix from the conjugate update and rescales it to unit diagonal (a
    common shortcut whose stationary law spreads the correlations far
    beyond the prior; kept selectable for comparison runs).
    ``d_proposal`` picks the gamma proposal of the
    diagonal-scale rejection step: ``"matched"`` (default) keeps the shape
    ``n + k_shape`` while matching the rate to the curvature of the full
    conditional, so acceptance stays bounded at any sample size;
    ``"fixed-nk"`` uses the prior rate ``alpha`` with the same shape;
    ``"fixed-2nk"`` uses shape ``2(n-1) + k_shape`` with rate ``alpha``
    and, through its envelope, targets a conditional carrying an extra
    power of the inverse scale (kept selectable for comparison runs).
    """

    n_draws: int = 25000
    burn_in: int = 5000
    n_chains: int = 3
    seed: int = 0
    rejection_max_attempts: int = 1000
    phi_df_mode: str = "eta+n+p+1"
    phi_update: str = "exact"
    d_proposal: str = "matched"
    rescale_trace: bool = True
    record_ystar: bool = False
    check_invariants: bool = False
    log_every: int = 1000

    def __post_init__(self):
        if self.n_draws <= 0:
            raise ConfigError(f"n_draws must be positive, got {self.n_draws}")
        if not 0 <= self.burn_in < self.n_draws:
            raise ConfigError(
                f"burn_in must lie in [0, n_draws), got {self.burn_in} with n_draws={self.n_draws}"
            )
        if self.n_chains < 1:
            raise ConfigError(f"n_chains must be at least 1, got {self.n_chains}")
        if self.rejection_max_attempts < 1:
            raise ConfigError("rejection_max_attempts must be at least 1")
        if self.phi_df_mode not in PHI_DF_MODES:
            raise ConfigError(
                f"phi_df_mode must be one of {PHI_DF_MODES}, got {self.phi_df_mode!r}"
            )
        if self.phi_update not in PHI_UPDATES:
            raise ConfigError(
                f"phi_update must be one of {PHI_UPDATES}, got {self.phi_update!r}"
            )
        if self.d_proposal not in D_PROPOSALS:
            raise ConfigError(
                f"d_proposal must be one of {D_PROPOSALS}, got {self.d_proposal!r}"
            )

    @property
    def n_retained(self):
        return self.n_draws - self.burn_in


@dataclass(frozen=True)
class RecordedDraw:
    """One retained draw after the identification rescaling."""

    beta: np.ndarray
    ystar: np.ndarray
    phi: np.ndarray
    d_scale: np.ndarray


@dataclass
class ChainDraws:
    """Retained draws of one chain plus its sampler counters."""

    chain_id: int
    names: tuple
    draws: np.ndarray
    stats: SamplerStats
    invariant_violations: list = field(default_factory=list)
    ystar: np.ndarray = None


def param_names(k, p):
    """Recorded-parameter names: beta[1..k], strict-upper phi[r,c], delta[1..p]."""
    names = [f"beta[{i + 1}]" for i in range(k)]
    names.extend(f"phi[{r + 1},{c + 1}]" for r in range(p) for c in range(r + 1, p))
    names.extend(f"delta[{j + 1}]" for j in range(p))
    return tuple(names)


def init_state(data, prior, q):
    """Deterministic starting point.

    ``beta`` starts at the prior mean; latent utilities start at +1 for the
    chosen alternative and -1 elsewhere (all -1 for baseline choosers);
    weights, correlations and scales start at their unit values.
    """
    n, p = data.n, data.p
    ystar = -np.ones((n, p))
    chosen = data.y > 0
    ystar[np.nonzero(chosen)[0], data.y[chosen] - 1] = 1.0
    return ChainState(
        beta=np.array(prior.b0, dtype=float, copy=True),
        ystar=ystar,
        w=np.ones(n),
        phi=np.eye(p),
        d_scale=np.ones(p),
    )


# ---------------------------------------------------------------------------
# Shared per-sweep quantities
# ---------------------------------------------------------------------------


def _phi_inverse(phi):
    return np.linalg.inv(phi)


def _whitened_precision(state, q, phi_inv=None):
    """M = D^{-1} Sigma^{-1} D^{-1} for the current state."""
    if phi_inv is None:
        phi_inv = _phi_inverse(state.phi)
    d_inv = 1.0 / state.d_scale
    return (phi_inv / q.l_scale**2) * np.outer(d_inv, d_inv)


def _schur_pieces(phi, l_scale):
    """Per-coordinate conditional variance and regression weights of Sigma.

    Returns ``s2`` with ``s2[j] = Var(coord j | rest)`` under ``Sigma`` and
    the weight matrix ``g`` with rows ``g[j] = Sigma_{j,-j} Sigma_{-j,-j}^{-1}``
    scattered into full-width vectors (``g[j, j] = 0``).
    """
    phi_inv = _phi_inverse(phi)
    diag = np.diag(phi_inv)
    s2 = l_scale**2 / diag
    g = -phi_inv / diag[:, None]
    np.fill_diagonal(g, 0.0)
    return s2, g


# ---------------------------------------------------------------------------
# beta
# ---------------------------------------------------------------------------


def beta_full_conditional(state, data, prior, q):
    """Posterior mean and covariance of ``beta`` given everything else.

    The Gaussian likelihood of the latent utilities, whitened by the
    mixture weights and ``D Sigma D``, combines with the ``N(b0, B0)``
    prior into ``N(b1, B1)`` with

        B1 = (B0^{-1} + sum_i X_i' M X_i / W_i)^{-1},
        b1 = B1 (sum_i X_i' M (y*_i - W_i D xi) / W_i + B0^{-1} b0),

    where ``M = D^{-1} Sigma^{-1} D^{-1}``.
    """
    m = _whitened_precision(state, q)
    w_inv = 1.0 / state.w
    b0_prec = np.linalg.inv(prior.B0)
    info = b0_prec + _einsum("i,ipk,pq,iql->kl", w_inv, data.X, m, data.X)
    shift = state.ystar - np.outer(state.w, state.d_scale * q.xi)
    lin = b0_prec @ prior.b0 + _einsum("i,ipk,pq,iq->k", w_inv, data.X, m, shift)
    chol = robust_cholesky(info)
    b1 = np.linalg.solve(info, lin)
    tmp = solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
    cov = tmp.T @ tmp
    return b1, cov


def sample_beta_fc(state, data, prior, q, rng):
    """Draw ``beta`` from its full conditional."""
    m = _whitened_precision(state, q)
    w_inv = 1.0 / state.w
    b0_prec = np.linalg.inv(prior.B0)
    info = b0_prec + _einsum("i,ipk,pq,iql->kl", w_inv, data.X, m, data.X)
    shift = state.ystar - np.outer(state.w, state.d_scale * q.xi)
    lin = b0_prec @ prior.b0 + _einsum("i,ipk,pq,iq->k", w_inv, data.X, m, shift)
    chol = robust_cholesky(info)
    b1 = np.linalg.solve(info, lin)
    z = rng.standard_normal(b1.size)
    return b1 + solve_triangular(chol.T, z, lower=False)


# ---------------------------------------------------------------------------
# W
# ---------------------------------------------------------------------------


def w_gig_params(state, data, q, i):
    """GIG parameters of the mixing-weight conditional for observation ``i``.

    lam = 1 - p/2, rate ``nu = xi' Sigma^{-1} xi + 2`` and
    ``chi = r' D^{-1} Sigma^{-1} D^{-1} r`` for the residual
    ``r = y*_i - X_i beta`` (floored at ``CHI_FLOOR``).
    """
    phi_inv = _phi_inverse(state.phi)
    m = _whitened_precision(state, q, phi_inv)
    resid = state.ystar[i] - data.X[i] @ state.beta
    chi = max(float(resid @ m @ resid), CHI_FLOOR)
    nu = float(q.xi @ phi_inv @ q.xi) / q.l_scale**2 + 2.0
    return GigParams(lam=1.0 - data.p / 2.0, nu=nu, chi=chi)


def _sample_w_all(state, data, q, rng, stats):
    phi_inv = _phi_inverse(state.phi)
    m = _whitened_precision(state, q, phi_inv)
    resid = state.ystar - data.X @ state.beta
    chi = _einsum("ip,pq,iq->i", resid, m, resid)
    chi = np.maximum(chi, CHI_FLOOR)
    nu = float(q.xi @ phi_inv @ q.xi) / q.l_scale**2 + 2.0
    return sample_gig_many(1.0 - data.p / 2.0, nu, chi, rng, stats)


def sample_w_fc(state, data, q, i, rng, stats=None):
    """Draw the mixing weight of observation ``i``."""
    params = w_gig_params(state, data, q, i)
    return float(
        sample_gig_many(params.lam, params.nu, np.array([params.chi]), rng, stats)[0]
    )


# ---------------------------------------------------------------------------
# y*
# ---------------------------------------------------------------------------


def _truncation_bound(state, data, i, j):
    others = np.delete(state.ystar[i], j)
    other_max = others.max() if others.size else -np.inf
    return max(other_max, 0.0)


def ystar_conditional(state, data, q, i, j):
    """Mean, variance and truncation interval of ``y*_ij`` given the rest.

    The Gaussian part is the usual conditional of one coordinate of
    ``N(X_i beta + W_i D xi, W_i D Sigma D)`` given the others; the
    interval enforces the choice rule: above ``max(max_others, 0)`` when
    alternative ``j + 1`` was chosen, below it otherwise (which pins the
    utility below zero for baseline choosers).
    """
    s2, g = _schur_pieces(state.phi, q.l_scale)
    center = data.X[i] @ state.beta + state.w[i] * state.d_scale * q.xi
    dev = state.ystar[i] - center
    scaled = g[j] * (state.d_scale[j] / state.d_scale) @ dev
    mean = center[j] + float(scaled)
    var = state.w[i] * state.d_scale[j] ** 2 * s2[j]
    bound = _truncation_bound(state, data, i, j)
    if data.y[i] == j + 1:
        interval = TruncInterval(lower=bound, upper=np.inf)
    else:
        interval = TruncInterval(lower=-np.inf, upper=bound)
    return mean, var, interval


def sample_ystar_fc(state, data, q, i, j, rng, stats=None):
    """Draw ``y*_ij`` from its truncated-normal full conditional."""
    mean, var, interval = ystar_conditional(state, data, q, i, j)
    return float(
        sample_truncnorm_many(
            np.array([mean]), np.array([var]),
            np.array([interval.lower]), np.array([interval.upper]),
            rng, stats,
        )[0]
    )


def _sweep_ystar(state, data, q, rng, stats):
    """Update every latent utility, column by column.

    Rows are conditionally independent, so for each alternative ``j`` all
    observations draw at once; within a row the coordinates still see the
    freshest values of their neighbours, matching the element-wise sweep.
    """
    n, p = data.n, data.p
    s2, g = _schur_pieces(state.phi, q.l_scale)
    center = data.X @ state.beta + np.outer(state.w, state.d_scale * q.xi)
    chosen = data.y - 1  # -1 marks baseline
    col_idx = np.arange(p)
    for j in range(p):
        others = col_idx != j
        dev = state.ystar[:, others] - center[:, others]
        coeff = g[j, others] * (state.d_scale[j] / state.d_scale[others])
        mean = center[:, j] + dev @ coeff
        var = state.w * (state.d_scale[j] ** 2 * s2[j])
        if p > 1:
            other_max = state.ystar[:, others].max(axis=1)
        else:
            other_max = np.full(n, -np.inf)
        bound = np.maximum(other_max, 0.0)
        is_chosen = chosen == j
        lower = np.where(is_chosen, bound, -np.inf)
        upper = np.where(is_chosen, np.inf, bound)
        state.ystar[:, j] = sample_truncnorm_many(mean, var, lower, upper, rng, stats)


# ---------------------------------------------------------------------------
# Phi
# ---------------------------------------------------------------------------


def phi_data_matrix(state, data, q):
    """Residual cross-product ``sum_i z_i z_i' / W_i`` with
    ``z_i = L^{-1} D^{-1} (y*_i - X_i beta - W_i D xi)``."""
    resid = (
        state.ystar
        - data.X @ state.beta
        - np.outer(state.w, state.d_scale * q.xi)
    )
    z = resid / (q.l_scale * state.d_scale)
    return _einsum("i,ip,iq->pq", 1.0 / state.w, z, z)


def phi_scale_matrix(state, data, prior, q):
    """Conjugate-update scale ``Phi_0 +`` :func:`phi_data_matrix`."""
    return prior.phi0_for(data.p) + phi_data_matrix(state, data, q)


def phi_degrees_of_freedom(prior, n, p, mode):
    if mode == "eta+n+p+1":
        return prior.eta + n + p + 1
    if mode == "eta+n":
        return prior.eta + n
    raise ConfigError(f"unknown phi_df_mode {mode!r}")


def phi_prior_shape(prior, p, mode):
    """Shape of the normalized-inverse-Wishart correlation prior.

    Equals the posterior degrees of freedom of :func:`phi_degrees_of_freedom`
    with the data contribution removed, so both update modes agree on which
    prior they target.
    """
    return phi_degrees_of_freedom(prior, 0, p, mode)


def normalize_correlation(a):
    """Scale a positive-definite matrix to unit diagonal."""
    a = np.asarray(a, dtype=float)
    d = np.sqrt(np.diag(a))
    if np.any(d <= 0):
        raise NumericalError("matrix has a non-positive diagonal", matrix=a)
    corr = a / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return corr


def phi_log_conditional(phi, nu, n_obs, m_data):
    """Log density (up to a constant) of the correlation full conditional.

    The prior is the law of a unit-diagonal-rescaled inverse Wishart with
    shape ``nu`` and diagonal scale; integrating the scales out gives the
    closed form ``|Phi|^{-(nu+p+1)/2} prod_j (Phi^{-1})_jj^{-nu/2}`` on the
    correlation matrices (a diagonal scale matrix drops out entirely).
    Multiplying the ``N(0, W_i Phi)`` likelihood of the whitened residuals
    adds ``-n/2 log|Phi| - tr(Phi^{-1} M)/2`` with ``M`` from
    :func:`phi_data_matrix`.  Returns ``-inf`` when ``phi`` is not positive
    definite, which lets slice proposals reject naturally.
    """
    phi = np.asarray(phi, dtype=float)
    p = phi.shape[0]
    pieces = _phi_quad_forms(phi, m_data)
    if pieces is None:
        return -np.inf
    log_det, log_inv_diag, tr_term = pieces
    return (
        -0.5 * (nu + n_obs + p + 1.0) * log_det
        - 0.5 * nu * log_inv_diag
        - 0.5 * tr_term
    )


def _phi_quad_forms(phi, m_data):
    """(log|Phi|, sum_j log (Phi^{-1})_jj, tr(Phi^{-1} m_data)) or None if not SPD.

    Closed-form cofactor expressions for p <= 3 avoid per-call LAPACK
    overhead in the slice sampler's inner loop; larger p falls back to a
    Cholesky factorization.
    """
    p = phi.shape[0]
    if p == 2:
        a, b, d = phi[0, 0], phi[0, 1], phi[1, 1]
        det = a * d - b * b
        if a <= 0.0 or det <= 0.0:
            return None
        tr_term = (d * m_data[0, 0] - 2.0 * b * m_data[0, 1] + a * m_data[1, 1]) / det
        log_det = np.log(det)
        return log_det, np.log(a * d) - 2.0 * log_det, tr_term
    if p == 3:
        a, b, c = phi[0, 0], phi[0, 1], phi[0, 2]
        d, e, f = phi[1, 1], phi[1, 2], phi[2, 2]
        c00 = d * f - e * e
        c11 = a * f - c * c
        c22 = a * d - b * b
        det = a * c00 - b * (b * f - c * e) + c * (b * e - c * d)
        if a <= 0.0 or c22 <= 0.0 or det <= 0.0:
            return None
        c01 = c * e - b * f
        c02 = b * e - c * d
        c12 = b * c - a * e
        tr_term = (
            c00 * m_data[0, 0] + c11 * m_data[1, 1] + c22 * m_data[2, 2]
            + 2.0 * (c01 * m_data[0, 1] + c02 * m_data[0, 2] + c12 * m_data[1, 2])
        ) / det
        log_det = np.log(det)
        return log_det, np.log(c00 * c11 * c22) - 3.0 * log_det, tr_term
    try:
        chol = np.linalg.cholesky(phi)
    except np.linalg.LinAlgError:
        return None
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    inv = np.linalg.inv(phi)
    return log_det, float(np.sum(np.log(np.diag(inv)))), float(np.sum(inv * m_data))


_SLICE_MAX_SHRINK = 200


def _slice_phi_coord(phi, r, c, nu, n_obs, m_data, rng):
    """Slice-sample one off-diagonal entry of the correlation matrix.

    Uses shrinkage from the full feasible bracket (-1, 1); proposals that
    leave the positive-definite cone score ``-inf`` and shrink the bracket
    like any other rejection, so the move is exact without computing the
    feasibility interval.
    """
    x0 = phi[r, c]
    log_f0 = phi_log_conditional(phi, nu, n_obs, m_data)
    if not np.isfinite(log_f0):
        raise NumericalError("correlation state left the positive-definite cone", matrix=phi)
    level = log_f0 - rng.exponential(1.0)
    lo, hi = -1.0, 1.0
    for _ in range(_SLICE_MAX_SHRINK):
        x1 = rng.uniform(lo, hi)
        phi[r, c] = phi[c, r] = x1
        if phi_log_conditional(phi, nu, n_obs, m_data) >= level:
            return
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    phi[r, c] = phi[c, r] = x0  # bracket collapsed onto the current point


def sample_phi_fc(state, data, prior, q, rng, mode="eta+n+p+1", update="exact"):
    """Draw the correlation matrix from its full conditional.

    ``update="exact"`` runs one slice-sampling pass over the off-diagonal
    entries of the exact conditional (requires a diagonal prior scale);
    ``update="conjugate-normalize"`` draws an unrestricted inverse Wishart
    from the conjugate update and rescales it to unit diagonal.
    """
    p = data.p
    if update == "conjugate-normalize":
        scale = phi_scale_matrix(state, data, prior, q)
        df = phi_degrees_of_freedom(prior, data.n, p, mode)
        draw = sample_inverse_wishart(df, scale, rng)
        phi = normalize_correlation(draw)
        robust_cholesky(phi)  # fail fast if the draw degenerated
        return phi
    if update != "exact":
        raise ConfigError(f"phi_update must be one of {PHI_UPDATES}, got {update!r}")
    phi0 = prior.phi0_for(p)
    if np.any(phi0 != np.diag(np.diag(phi0))):
        raise ConfigError(
            "the exact correlation update requires a diagonal phi0 scale "
            "(a diagonal scale does not shape the correlation prior); "
            "use phi_update='conjugate-normalize' for a non-diagonal phi0"
        )
    if p == 1:
        return np.eye(1)
    nu = phi_prior_shape(prior, p, mode)
    m_data = phi_data_matrix(state, data, q)
    phi = state.phi.copy()
    for r in range(p):
        for c in range(r + 1, p):
            _slice_phi_coord(phi, r, c, nu, data.n, m_data, rng)
    return phi


# ---------------------------------------------------------------------------
# D
# ---------------------------------------------------------------------------


def d_site_moments(state, data, q, j):
    """Per-observation conditional moments for the inverse scale ``d_j``.

    Each observation contributes a Gaussian factor in ``d_j = 1/delta_jj``
    once the other inverse scales are held at their current values; this
    returns the factor means ``mu_tilde_ij`` and variances ``sigma_ij^2``.
    Observations whose residual on coordinate ``j`` vanishes carry no
    information; their variance is reported as ``inf``.
    """
    s2, g = _schur_pieces(state.phi, q.l_scale)
    e = state.ystar - data.X @ state.beta
    d = 1.0 / state.d_scale
    others = np.arange(data.p) != j
    # num / e_j is the conditional mean; written this way the precision-
    # weighted summary below never divides by a vanishing residual.
    num = state.w * q.xi[j] + (e[:, others] * d[others] - np.outer(state.w, q.xi[others])) @ g[j, others]
    ej = e[:, j]
    informative = np.abs(ej) > RESID_FLOOR
    mu = np.where(informative, num / np.where(informative, ej, 1.0), np.nan)
    var = np.where(informative, state.w * s2[j] / np.where(informative, ej, 1.0) ** 2, np.inf)
    return mu, var


def _d_site_summary(state, data, q, j):
    """Precision-weighted site summary (total precision, weighted mean)."""
    s2, g = _schur_pieces(state.phi, q.l_scale)
    e = state.ystar - data.X @ state.beta
    d = 1.0 / state.d_scale
    others = np.arange(data.p) != j
    num = state.w * q.xi[j] + (e[:, others] * d[others] - np.outer(state.w, q.xi[others])) @ g[j, others]
    ej = e[:, j]
    prec = ej**2 / (state.w * s2[j])
    total_prec = float(prec.sum())
    if total_prec <= 0.0:
        return 0.0, 0.0
    weighted = float((num * ej / (state.w * s2[j])).sum())
    return total_prec, weighted / total_prec


def d_acceptance_probability(d, total_prec, mu_star, rate_shift=0.0):
    """Acceptance probability of a proposed inverse scale ``d``.

    Equals ``exp(-0.5 * sum_i (d - mu_i)^2 / s_i^2) / R`` with the envelope
    ``R = exp(-0.5 * sum_i (mu_star - mu_i)^2 / s_i^2)``, which collapses to
    a Gaussian bump around the precision-weighted mean.  A nonzero
    ``rate_shift`` recenters the bump at ``mu_star + rate_shift/P`` to keep
    the envelope valid when the proposal rate differs from the prior rate.
    """
    if total_prec <= 0.0:
        return 1.0
    center = mu_star + rate_shift / total_prec
    return float(np.exp(-0.5 * total_prec * (d - center) ** 2))


def _d_proposal_params(config, prior, n, total_prec, mu_star):
    alpha = prior.alpha
    if config.d_proposal == "fixed-2nk":
        shape = 2.0 * (n - 1) + prior.k_shape
        return shape, alpha
    shape = n + prior.k_shape
    if config.d_proposal == "fixed-nk" or total_prec <= 0.0:
        return shape, alpha
    # Matched rate: put the proposal mode at the mode of the full
    # conditional, found from its stationarity condition.
    disc = (total_prec * mu_star - alpha) ** 2 + 4.0 * total_prec * (shape - 1.0)
    mode = ((total_prec * mu_star - alpha) + np.sqrt(disc)) / (2.0 * total_prec)
    return shape, (shape - 1.0) / mode


def sample_d_fc(state, data, prior, q, config, rng, stats=None):
    """Draw the diagonal scales, one coordinate at a time.

    Works on the inverse scales ``d_j = 1/delta_jj``: a gamma proposal is
    thinned by the Gaussian-bump acceptance ratio; if no proposal is
    accepted within ``rejection_max_attempts`` the previous value is kept
    (counted as a stall, matching a rejected Metropolis move).
    """
    if prior.k_shape >= data.n > 0:
        raise ConfigError(
            f"the inverse-gamma shape ({prior.k_shape}) must be below the number "
            f"of observations ({data.n})"
        )
    d = 1.0 / state.d_scale
    for j in range(data.p):
        total_prec, mu_star = _d_site_summary(state, data, q, j)
        shape, rate = _d_proposal_params(config, prior, data.n, total_prec, mu_star)
        rate_shift = rate - prior.alpha
        accepted = False
        for _ in range(config.rejection_max_attempts):
            cand = rng.gamma(shape, 1.0 / rate)
            if stats is not None:
                stats.d_proposals += 1
            if cand <= 0.0:
                continue
            if rng.random() <= d_acceptance_probability(cand, total_prec, mu_star, rate_shift):
                d[j] = cand
                accepted = True
                if stats is not None:
                    stats.d_accepts += 1
                break
        if not accepted and stats is not None:
            stats.d_stalls += 1
    return 1.0 / d


# ---------------------------------------------------------------------------
# Scale constraint, sweep, chains
# ---------------------------------------------------------------------------


def apply_scale_constraints(state, q):
    """Pin ``tr(D) = p`` and emit the rescaled recorded draw.

    The state's ``d_scale`` is divided by ``r = tr(D)/p``; the recorded
    draw carries that normalized ``D`` together with the pre-division
    ``beta`` and ``Y*`` multiplied by ``r``.  ``Sigma`` needs no bookkeeping
    because it is always recomputed as ``l_scale**2 * Phi``.
    """
    p = state.d_scale.size
    ratio = float(state.d_scale.sum() / p)
    state.d_scale /= ratio
    recorded = RecordedDraw(
        beta=state.beta * ratio,
        ystar=state.ystar * ratio,
        phi=state.phi.copy(),
        d_scale=state.d_scale.copy(),
    )
    return state, recorded


def gibbs_sweep(state, data, prior, q, config, rng, stats=None):
    """One full update cycle over all blocks, mutating ``state``."""
    state.beta = sample_beta_fc(state, data, prior, q, rng)
    state.w = _sample_w_all(state, data, q, rng, stats)
    _sweep_ystar(state, data, q, rng, stats)
    state.phi = sample_phi_fc(
        state, data, prior, q, rng, config.phi_df_mode, config.phi_update
    )
    state.d_scale = sample_d_fc(state, data, prior, q, config, rng, stats)
    return state


def simulate_latents(beta, phi, d_scale, X, q, rng):
    """Forward-simulate ``(W, Y*, y)`` given the parameters.

    Uses the scale-mixture construction of the MAL error:
    ``y* = X beta + W D xi + sqrt(W) D Sigma^{1/2} Z`` with ``W``
    standard exponential and ``Z`` standard normal.
    """
    n, p, _ = X.shape
    w = rng.exponential(1.0, n)
    z = rng.standard_normal((n, p))
    chol = robust_cholesky(q.sigma(phi))
    noise = z @ chol.T
    ystar = X @ beta + np.outer(w, d_scale * q.xi) + np.sqrt(w)[:, None] * (noise * d_scale)
    return w, ystar, choices_from_utility_matrix(ystar)


def _check_invariants(state, data, iteration):
    problems = []
    p = data.p
    if abs(state.d_scale.sum() - p) > 1e-12:
        problems.append(f"iter {iteration}: tr(D) = {state.d_scale.sum()!r} != {p}")
    if not np.all(np.diag(state.phi) == 1.0):
        problems.append(f"iter {iteration}: diag(Phi) != 1")
    try:
        robust_cholesky(state.phi, jitter=0.0)
    except NumericalError:
        problems.append(f"iter {iteration}: Phi not positive definite")
    implied = choices_from_utility_matrix(state.ystar)
    if not np.array_equal(implied, data.y):
        bad = int(np.nonzero(implied != data.y)[0][0])
        problems.append(f"iter {iteration}: choice rule violated at row {bad}")
    return problems


def _record_vector(recorded, p):
    upper = recorded.phi[np.triu_indices(p, 1)]
    return np.concatenate([recorded.beta, upper, recorded.d_scale])


def run_chain(data, prior, q, config, chain_id=0, seed_seq=None):
    """Run one chain and return its retained draws.

    Per iteration the blocks update in their fixed order, the trace
    constraint is applied (unless disabled), and iterations at or beyond
    ``burn_in`` are recorded.  Seeding derives from ``config.seed`` and the
    chain id, so a manifest pins the draw path bit for bit.
    """
    if prior.k != data.k:
        raise ConfigError(f"prior is sized for k={prior.k} but data has k={data.k}")
    if seed_seq is None:
        seed_seq = SeedSequence(config.seed).spawn(chain_id + 1)[chain_id]
    rng = default_rng(seed_seq)
    stats = SamplerStats()
    state = init_state(data, prior, q)

    names = param_names(data.k, data.p)
    out = np.empty((config.n_retained, len(names)))
    ystar_out = (
        np.empty((config.n_retained, data.n, data.p)) if config.record_ystar else None
    )
    violations = []

    for it in range(config.n_draws):
        try:
            gibbs_sweep(state, data, prior, q, config, rng, stats)
        except NumericalError as exc:
            err = NumericalError(
                f"chain {chain_id}, iteration {it + 1}: {exc}",
                matrix=getattr(exc, "matrix", None),
            )
            raise err from exc
        if config.rescale_trace:
            state, recorded = apply_scale_constraints(state, q)
        else:
            recorded = RecordedDraw(
                beta=state.beta.copy(),
                ystar=state.ystar.copy(),
                phi=state.phi.copy(),
                d_scale=state.d_scale.copy(),
            )
        if config.check_invariants:
            violations.extend(_check_invariants(state, data, it))
        if it >= config.burn_in:
            row = it - config.burn_in
            out[row] = _record_vector(recorded, data.p)
            if ystar_out is not None:
                ystar_out[row] = recorded.ystar
        if config.log_every and (it + 1) % config.log_every == 0:
            log.info("chain %d: iteration %d/%d", chain_id, it + 1, config.n_draws)

    return ChainDraws(
        chain_id=chain_id,
        names=names,
        draws=out,
        stats=stats,
        invariant_violations=violations,
        ystar=ystar_out,
    )


def _run_chain_task(args):
    data, prior, q, config, chain_id, seed_seq = args
    return run_chain(data, prior, q, config, chain_id=chain_id, seed_seq=seed_seq)


def _worker_cap():
    raw = os.environ.get("MCQR_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"MCQR_THREADS must be an integer, got {raw!r}") from None


def run_chains(data, prior, q, config):
    """Run ``config.n_chains`` independent chains.

    Chains receive independent child seed streams of ``config.seed``.  When
    the environment variable ``MCQR_THREADS`` is above 1, chains run in a
    process pool capped at that size; results are ordered by chain id
    either way.
    """
    from .diagnostics import PosteriorDraws

    children = SeedSequence(config.seed).spawn(config.n_chains)
    tasks = [
        (data, prior, q, config, c, children[c]) for c in range(config.n_chains)
    ]
    workers = min(_worker_cap(), config.n_chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain_task, tasks))
    else:
        results = [_run_chain_task(t) for t in tasks]
    results.sort(key=lambda r: r.chain_id)
    return PosteriorDraws(
        chains=[r.draws for r in results],
        names=results[0].names,
        burn_in=config.burn_in,
        stats=[r.stats for r in results],
        invariant_violations=[r.invariant_violations for r in results],
    )
