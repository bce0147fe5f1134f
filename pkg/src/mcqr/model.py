"""Core model objects for multinomial-choice quantile regression.

An observation chooses among ``p`` alternatives plus a baseline (label 0).
A latent vector of relative utilities

    y*_i = X_i beta + eps_i,        eps_i ~ MAL(0, D xi, D Sigma D)

drives the observed label through a maximum rule: alternative ``j`` is
chosen when ``y*_ij`` is the largest utility and positive, and the baseline
is chosen when no utility is positive.  The error follows a multivariate
asymmetric Laplace (MAL) law whose skew vector ``xi`` and scale ``Sigma``
are deterministic functions of the quantile level ``tau``; ``D`` is a
diagonal matrix of per-alternative scales and ``Sigma = L Phi L`` couples a
correlation matrix ``Phi`` with the scalar quantile scale ``L``.

This module holds the value types shared across the package together with
the pure functions on them: the quantile parameterization, the choice rule,
the MAL log-density, and the long-format design-matrix builder.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import kve

from .errors import IngestionError
from .linalg import robust_cholesky

__all__ = [
    "QuantileSpec",
    "MALParams",
    "PriorSpec",
    "ChoiceDataset",
    "ChainState",
    "DesignConfig",
    "xi_from_tau",
    "l_scale_from_tau",
    "choice_from_utilities",
    "choices_from_utility_matrix",
    "mal_log_density",
    "build_design_matrix",
]


def xi_from_tau(tau, p):
    """Skew vector of the quantile-level MAL error.

    Every coordinate equals ``(1 - 2*tau) / (tau * (1 - tau))``; the vector
    is zero at the median and changes sign around it.

    Parameters
    ----------
    tau : float
        Quantile level, strictly between 0 and 1.
    p : int
        Number of non-baseline alternatives.

    Returns
    -------
    ndarray of shape (p,)
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly in (0, 1), got {tau}")
    if p < 1:
        raise ValueError(f"p must be a positive integer, got {p}")
    return np.full(p, (1.0 - 2.0 * tau) / (tau * (1.0 - tau)))


def l_scale_from_tau(tau):
    """Scalar scale ``sqrt(2 / (tau * (1 - tau)))`` attached to the correlation matrix."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly in (0, 1), got {tau}")
    return float(np.sqrt(2.0 / (tau * (1.0 - tau))))


@dataclass(frozen=True)
class QuantileSpec:
    """Quantile level with its derived MAL skew and scale parameters.

    Attributes
    ----------
    tau : float
        Quantile level in (0, 1).
    p : int
        Number of non-baseline alternatives.
    xi : ndarray of shape (p,)
        Skew vector; derived, do not set.
    l_scale : float
        Scalar multiplier of the correlation matrix; derived, do not set.
    """

    tau: float
    p: int
    xi: np.ndarray = field(init=False, repr=False, compare=False)
    l_scale: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xi = xi_from_tau(self.tau, self.p)
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "l_scale", l_scale_from_tau(self.tau))

    def sigma(self, phi):
        """Scale matrix ``l_scale**2 * phi`` for a correlation matrix ``phi``."""
        return self.l_scale**2 * np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class MALParams:
    """Parameters of a multivariate asymmetric Laplace density.

    ``mu`` is the location, ``skew`` the skew vector (``D xi`` in model
    terms), and ``cov`` the positive-definite scale matrix (``D Sigma D``).
    """

    mu: np.ndarray
    skew: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        skew = np.atleast_1d(np.asarray(self.skew, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mu.shape != skew.shape or cov.shape != (mu.size, mu.size):
            raise ValueError(
                f"inconsistent MAL dimensions: mu {mu.shape}, skew {skew.shape}, cov {cov.shape}"
            )
        for name, arr in (("mu", mu), ("skew", skew), ("cov", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self):
        return self.mu.size


def mal_log_density(y, params):
    """Log-density of the multivariate asymmetric Laplace distribution.

    With location ``mu``, skew ``gamma`` and scale ``S`` the density is

        f(y) = 2 exp(r' S^{-1} gamma) / ((2 pi)^{p/2} |S|^{1/2})
               * (m / (2 + d))^{nu/2} * K_nu(sqrt((2 + d) m))

    where ``r = y - mu``, ``m = r' S^{-1} r``, ``d = gamma' S^{-1} gamma``,
    ``nu = (2 - p) / 2`` and ``K_nu`` is the modified Bessel function of the
    second kind.  Evaluation is carried out in log space with the
    exponentially scaled Bessel function, so the density is usable far into
    the tails.

    Parameters
    ----------
    y : array_like of shape (p,)
        Evaluation point.
    params : MALParams

    Returns
    -------
    float
        Log-density; finite whenever ``y != mu`` (at ``y == mu`` the
        quadratic form is floored at the smallest positive double, which
        keeps the returned value finite for p = 1 and very large for p >= 2
        where the density has an integrable singularity).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != params.mu.shape:
        raise ValueError(f"y has shape {y.shape}, expected {params.mu.shape}")
    p = params.p
    chol = robust_cholesky(params.cov)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))

    r = y - params.mu
    zr = np.linalg.solve(chol, r)
    zg = np.linalg.solve(chol, params.skew)
    m = max(float(zr @ zr), np.finfo(float).tiny)
    d = float(zg @ zg)
    cross = float(zr @ zg)

    nu = (2.0 - p) / 2.0
    arg = np.sqrt((2.0 + d) * m)
    # kve(nu, x) = K_nu(x) * exp(x); subtracting arg undoes the scaling.
    log_bessel = float(np.log(kve(nu, arg)) - arg)
    return (
        np.log(2.0)
        + cross
        - 0.5 * p * np.log(2.0 * np.pi)
        - 0.5 * log_det
        + 0.5 * nu * (np.log(m) - np.log(2.0 + d))
        + log_bessel
    )


def choice_from_utilities(utilities):
    """Observed label implied by one row of latent relative utilities.

    Returns ``j`` (1-based) when coordinate ``j-1`` holds the largest
    utility and that utility is positive; returns 0 (baseline) when no
    utility is positive.  Ties resolve to the lowest index.
    """
    u = np.atleast_1d(np.asarray(utilities, dtype=float))
    if u.ndim != 1 or u.size < 1:
        raise ValueError("utilities must be a non-empty vector")
    j = int(np.argmax(u))
    return j + 1 if u[j] > 0.0 else 0


def choices_from_utility_matrix(ystar):
    """Vectorized choice rule over an (n, p) utility matrix."""
    ystar = np.atleast_2d(np.asarray(ystar, dtype=float))
    best = np.argmax(ystar, axis=1)
    positive = ystar[np.arange(ystar.shape[0]), best] > 0.0
    return np.where(positive, best + 1, 0).astype(np.int64)


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters for the Gibbs sampler.

    ``beta ~ N(b0, B0)``; the correlation matrix is drawn by normalizing an
    inverse-Wishart variate with ``eta`` degrees of freedom and scale
    ``phi0``; each diagonal scale ``delta_jj`` has an inverse-gamma prior
    with shape ``k_shape`` and scale ``alpha``.
    """

    b0: np.ndarray
    B0: np.ndarray
    eta: float = 20.0
    phi0: np.ndarray = None
    k_shape: float = 10.0
    alpha: float = 0.5

    def __post_init__(self):
        b0 = np.atleast_1d(np.asarray(self.b0, dtype=float))
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        if B0.shape != (b0.size, b0.size):
            raise ValueError(f"B0 has shape {B0.shape}, expected {(b0.size, b0.size)}")
        phi0 = self.phi0
        if phi0 is not None:
            phi0 = np.atleast_2d(np.asarray(phi0, dtype=float))
        if self.k_shape <= 0 or self.alpha <= 0:
            raise ValueError("k_shape and alpha must be positive")
        for name, arr in (("b0", b0), ("B0", B0), ("phi0", phi0)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self):
        return self.b0.size

    def phi0_for(self, p):
        """Correlation-prior scale matrix, defaulting to the identity."""
        if self.phi0 is None:
            return np.eye(p)
        if self.phi0.shape != (p, p):
            raise ValueError(f"phi0 has shape {self.phi0.shape}, expected {(p, p)}")
        return np.asarray(self.phi0)

    @classmethod
    def default(cls, k, p=None, eta=20.0, k_shape=10.0, alpha=0.5):
        """Standard weakly informative prior: b0 = 0, B0 = I, phi0 = I."""
        phi0 = np.eye(p) if p is not None else None
        return cls(b0=np.zeros(k), B0=np.eye(k), eta=eta, phi0=phi0,
                   k_shape=k_shape, alpha=alpha)


@dataclass(frozen=True)
class ChoiceDataset:
    """Observed labels with per-observation design matrices.

    Attributes
    ----------
    y : ndarray of shape (n,)
        Labels in ``{0, ..., p}``; 0 is the baseline.
    X : ndarray of shape (n, p, k)
        Design matrix of each observation; row ``j`` carries the regressors
        of alternative ``j + 1``.
    column_names : tuple of str, optional
        Labels of the ``k`` design columns, when known.
    """

    y: np.ndarray
    X: np.ndarray
    column_names: tuple = None

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y)).astype(np.int64)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 3:
            raise ValueError(f"X must have shape (n, p, k), got {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{y.shape[0]} labels but {X.shape[0]} design matrices")
        if y.min(initial=0) < 0 or y.max(initial=0) > X.shape[1]:
            raise ValueError(f"labels must lie in 0..{X.shape[1]}")
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != X.shape[2]:
                raise ValueError(f"{len(names)} column names for {X.shape[2]} columns")
            object.__setattr__(self, "column_names", names)
        if not np.all(np.isfinite(X)):
            raise ValueError("design matrices contain non-finite values")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def k(self):
        return self.X.shape[2]


@dataclass
class ChainState:
    """Mutable state of one Gibbs chain.

    Holds the regression coefficients ``beta``, latent utilities ``ystar``,
    per-observation mixing weights ``w``, correlation matrix ``phi`` and the
    diagonal ``d_scale`` of ``D``.  ``Sigma`` is never stored; it is always
    recomputed as ``l_scale**2 * phi``.
    """

    beta: np.ndarray
    ystar: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    d_scale: np.ndarray

    def copy(self):
        return ChainState(
            beta=self.beta.copy(),
            ystar=self.ystar.copy(),
            w=self.w.copy(),
            phi=self.phi.copy(),
            d_scale=self.d_scale.copy(),
        )

    def validate(self, data):
        """Raise ``ValueError`` on any structural violation.

        Checks dimensions, positivity of ``w`` and ``d_scale``, unit
        diagonal and positive-definiteness of ``phi``, and consistency of
        ``ystar`` with the observed labels under the choice rule.
        """
        n, p, k = data.n, data.p, data.k
        if self.beta.shape != (k,):
            raise ValueError(f"beta has shape {self.beta.shape}, expected {(k,)}")
        if self.ystar.shape != (n, p):
            raise ValueError(f"ystar has shape {self.ystar.shape}, expected {(n, p)}")
        if self.w.shape != (n,) or np.any(self.w <= 0):
            raise ValueError("w must be positive with one entry per observation")
        if self.d_scale.shape != (p,) or np.any(self.d_scale <= 0):
            raise ValueError("d_scale must be positive with one entry per alternative")
        if self.phi.shape != (p, p):
            raise ValueError(f"phi has shape {self.phi.shape}, expected {(p, p)}")
        if not np.all(np.diag(self.phi) == 1.0):
            raise ValueError("phi must have a unit diagonal")
        robust_cholesky(self.phi)
        implied = choices_from_utility_matrix(self.ystar)
        bad = np.nonzero(implied != data.y)[0]
        if bad.size:
            raise ValueError(
                f"ystar inconsistent with labels at observations {bad[:5].tolist()}"
            )


@dataclass(frozen=True)
class DesignConfig:
    """Mapping from long-format columns to design-matrix columns.

    Column order of the built matrices: one intercept dummy per alternative
    (in ``alternatives`` order), an optional common-intercept column of
    ones, the shared-coefficient covariates, then one block of ``p`` columns
    per alternative-specific covariate.
    """

    alternatives: tuple
    baseline: str
    shared: tuple = ()
    alternative_specific: tuple = ()
    common_intercept: bool = False

    def __post_init__(self):
        alts = tuple(str(a) for a in self.alternatives)
        if len(alts) < 1 or len(set(alts)) != len(alts):
            raise ValueError("alternatives must be distinct and non-empty")
        base = str(self.baseline)
        if base in alts:
            raise ValueError(f"baseline {base!r} must not appear among alternatives")
        shared = tuple(self.shared)
        specific = tuple(self.alternative_specific)
        if set(shared) & set(specific):
            raise ValueError("a covariate cannot be both shared and alternative-specific")
        object.__setattr__(self, "alternatives", alts)
        object.__setattr__(self, "baseline", base)
        object.__setattr__(self, "shared", shared)
        object.__setattr__(self, "alternative_specific", specific)

    @property
    def p(self):
        return len(self.alternatives)

    @property
    def k(self):
        return (
            self.p
            + int(self.common_intercept)
            + len(self.shared)
            + self.p * len(self.alternative_specific)
        )

    def column_names(self):
        names = [f"intercept:{a}" for a in self.alternatives]
        if self.common_intercept:
            names.append("intercept")
        names.extend(self.shared)
        for cov in self.alternative_specific:
            names.extend(f"{cov}:{a}" for a in self.alternatives)
        return tuple(names)

    def covariates(self):
        return self.shared + self.alternative_specific


def build_design_matrix(frame, design):
    """Assemble a :class:`ChoiceDataset` from long-format rows.

    Parameters
    ----------
    frame : pandas.DataFrame
        One row per (observation, alternative) with columns ``obs_id``,
        ``alt``, ``choice_flag`` and every covariate named by ``design``.
        Rows for the baseline alternative may be present; they contribute
        only their choice flag.
    design : DesignConfig

    Returns
    -------
    ChoiceDataset
        Observations ordered by first appearance of their ``obs_id``.
    """
    required = {"obs_id", "alt", "choice_flag", *design.covariates()}
    missing = sorted(required - set(frame.columns))
    if missing:
        raise IngestionError(f"long-format input lacks columns {missing}")

    alts = frame["alt"].astype(str).to_numpy()
    flags = frame["choice_flag"].to_numpy()
    if not np.isin(flags, (0, 1)).all():
        bad = int(np.nonzero(~np.isin(flags, (0, 1)))[0][0])
        raise IngestionError(f"choice_flag must be 0 or 1 (row {bad})")

    known = set(design.alternatives) | {design.baseline}
    unknown = sorted(set(alts) - known)
    if unknown:
        raise IngestionError(
            f"unknown alternative labels {unknown}; expected {sorted(known)}"
        )

    p, k = design.p, design.k
    alt_index = {a: j for j, a in enumerate(design.alternatives)}
    obs_ids = frame["obs_id"].to_numpy()
    order = {}
    for oid in obs_ids:
        if oid not in order:
            order[oid] = len(order)
    n = len(order)

    X = np.zeros((n, p, k))
    y = np.zeros(n, dtype=np.int64)
    seen = np.zeros((n, p), dtype=bool)
    seen_baseline = np.zeros(n, dtype=bool)
    flagged = np.zeros(n, dtype=bool)

    cov_values = {c: frame[c].to_numpy(dtype=float) for c in design.covariates()}
    n_shared = len(design.shared)
    shared_base = p + int(design.common_intercept)
    specific_base = shared_base + n_shared

    for row in range(len(frame)):
        i = order[obs_ids[row]]
        a = alts[row]
        if flags[row] == 1:
            if flagged[i]:
                raise IngestionError(
                    f"observation {obs_ids[row]!r} has more than one "
                    f"choice_flag=1 (row {row})"
                )
            flagged[i] = True
            y[i] = 0 if a == design.baseline else alt_index[a] + 1
        if a == design.baseline:
            if seen_baseline[i]:
                raise IngestionError(
                    f"observation {obs_ids[row]!r} repeats alternative {a!r}"
                )
            seen_baseline[i] = True
            continue
        j = alt_index[a]
        if seen[i, j]:
            raise IngestionError(
                f"observation {obs_ids[row]!r} repeats alternative {a!r}"
            )
        seen[i, j] = True
        X[i, j, j] = 1.0
        if design.common_intercept:
            X[i, j, p] = 1.0
        for c, name in enumerate(design.shared):
            X[i, j, shared_base + c] = cov_values[name][row]
        for c, name in enumerate(design.alternative_specific):
            X[i, j, specific_base + c * p + j] = cov_values[name][row]

    incomplete = np.nonzero(~seen.all(axis=1))[0]
    if incomplete.size:
        ids = [oid for oid, i in order.items() if i in set(incomplete[:5].tolist())]
        raise IngestionError(
            f"observations {ids} lack a row for some non-baseline alternative"
        )
    return ChoiceDataset(y=y, X=X, column_names=design.column_names())
