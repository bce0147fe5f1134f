"""Random-variate generators used by the Gibbs full conditionals.

All samplers draw from an explicit :class:`numpy.random.Generator`, so a
seed fixes every path.  The generalized-inverse-Gaussian and truncated
normal samplers record proposal/acceptance and boundary-clamp counters in
an optional :class:`SamplerStats`, which chains surface in run manifests.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import NumericalError
from .linalg import robust_cholesky

__all__ = [
    "SamplerStats",
    "GigParams",
    "TruncInterval",
    "sample_gig",
    "sample_gig_many",
    "sample_truncnorm",
    "sample_truncnorm_many",
    "sample_mvnormal",
    "sample_inverse_wishart",
]

# Standardized interval beyond which the truncated-normal sampler switches
# from CDF inversion to exponential-proposal rejection.
TAIL_SWITCH = 6.0
# Interval probability mass below which a truncated-normal draw is clamped
# to the bound nearest the mean.
MIN_MASS = 1e-300
_MAX_ROUNDS = 1000


@dataclass
class SamplerStats:
    """Mutable counters shared by the low-level samplers.

    ``gig_proposals``/``gig_accepts`` measure the rejection efficiency of
    the generalized-inverse-Gaussian sampler; ``truncnorm_clamps`` counts
    zero-mass truncated-normal intervals resolved by clamping; ``d_*``
    counters belong to the diagonal-scale rejection step of the Gibbs
    engine.
    """

    gig_proposals: int = 0
    gig_accepts: int = 0
    truncnorm_clamps: int = 0
    d_proposals: int = 0
    d_accepts: int = 0
    d_stalls: int = 0

    def merge(self, other):
        self.gig_proposals += other.gig_proposals
        self.gig_accepts += other.gig_accepts
        self.truncnorm_clamps += other.truncnorm_clamps
        self.d_proposals += other.d_proposals
        self.d_accepts += other.d_accepts
        self.d_stalls += other.d_stalls

    @property
    def gig_acceptance_rate(self):
        if self.gig_proposals == 0:
            return float("nan")
        return self.gig_accepts / self.gig_proposals

    def as_dict(self):
        return {
            "gig_proposals": self.gig_proposals,
            "gig_accepts": self.gig_accepts,
            "truncnorm_clamps": self.truncnorm_clamps,
            "d_proposals": self.d_proposals,
            "d_accepts": self.d_accepts,
            "d_stalls": self.d_stalls,
        }


@dataclass(frozen=True)
class GigParams:
    """Parameters of the generalized inverse Gaussian distribution.

    Density proportional to ``x**(lam - 1) * exp(-(nu * x + chi / x) / 2)``
    on ``x > 0``; ``nu`` and ``chi`` must be positive.
    """

    lam: float
    nu: float
    chi: float

    def __post_init__(self):
        if not (self.nu > 0.0 and self.chi > 0.0):
            raise ValueError(
                f"nu and chi must be positive, got nu={self.nu}, chi={self.chi}"
            )
        if not np.isfinite([self.lam, self.nu, self.chi]).all():
            raise ValueError("GIG parameters must be finite")


@dataclass(frozen=True)
class TruncInterval:
    """Open-ended truncation interval; infinities mark unbounded sides."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(
                f"lower bound {self.lower} must be below upper bound {self.upper}"
            )


# ---------------------------------------------------------------------------
# Generalized inverse Gaussian
# ---------------------------------------------------------------------------
# The two-parameter standardized form has density proportional to
#   g(x) = x**(lam - 1) * exp(-omega * (x + 1/x) / 2),   omega = sqrt(nu*chi),
# and X = sqrt(chi/nu) * Z with Z ~ g.  Negative lam reduces to positive lam
# through Z -> 1/Z.  Three rejection schemes cover the parameter plane:
# ratio-of-uniforms around the mode for lam >= 1 or omega > 1, plain
# ratio-of-uniforms for moderate omega, and a three-piece hat (constant,
# power, exponential tail) for small omega where the density is nearly a
# power law near the origin.  Acceptance stays bounded well away from zero
# in each region.


def _log_g(lam, omega, x):
    return (lam - 1.0) * np.log(x) - 0.5 * omega * (x + 1.0 / x)


def _gig_mode(lam, omega):
    # Stable for lam < 1 via the rationalized form.
    if lam >= 1.0:
        return ((lam - 1.0) + np.hypot(lam - 1.0, omega)) / omega
    t = 1.0 - lam
    return omega / (np.sqrt(t * t + omega * omega) + t)


def _rejection_rounds(draw_fn, m, rng, stats):
    """Run vectorized rejection rounds until all m slots are filled."""
    out = np.empty(m)
    pending = np.arange(m)
    for _ in range(_MAX_ROUNDS):
        if pending.size == 0:
            return out
        values, accepted = draw_fn(pending, rng)
        if stats is not None:
            stats.gig_proposals += pending.size
            stats.gig_accepts += int(accepted.sum())
        out[pending[accepted]] = values[accepted]
        pending = pending[~accepted]
    raise NumericalError("GIG rejection sampler failed to accept; parameters degenerate")


def _gig_rou_noshift(lam, omega, rng, stats):
    xm = _gig_mode(lam, omega)
    nc = 0.5 * _log_g(lam, omega, xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega * omega)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - 0.25 * omega * (ym + 1.0 / ym) - nc)

    def propose(pending, rng):
        u = um[pending] * rng.random(pending.size)
        v = rng.random(pending.size)
        ok = (u > 0.0) & (v > 0.0)
        x = np.where(ok, u / np.where(ok, v, 1.0), 1.0)
        accept = ok & (np.log(np.where(ok, v, 1.0)) <= 0.5 * _log_g(lam, omega[pending], x) - nc[pending])
        return x, accept

    return _rejection_rounds(propose, omega.size, rng, stats)


def _gig_rou_shift(lam, omega, rng, stats):
    xm = _gig_mode(lam, omega)
    nc = 0.5 * _log_g(lam, omega, xm)
    # Stationary points of (x - xm)^2 g(x) solve a depressed cubic.
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    pc = b - a * a / 3.0
    qc = 2.0 * a**3 / 27.0 - a * b / 3.0 + xm
    fak = 2.0 * np.sqrt(np.maximum(-pc / 3.0, 0.0))
    arg = np.clip(-qc / (2.0 * np.sqrt(np.maximum(-(pc**3) / 27.0, np.finfo(float).tiny))), -1.0, 1.0)
    fi = np.arccos(arg)
    y1 = fak * np.cos(fi / 3.0 + 4.0 * np.pi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0) - a / 3.0
    y1 = np.maximum(y1, np.finfo(float).tiny)
    u_minus = (y1 - xm) * np.exp(0.5 * _log_g(lam, omega, y1) - nc)
    u_plus = (y2 - xm) * np.exp(0.5 * _log_g(lam, omega, y2) - nc)

    def propose(pending, rng):
        u = u_minus[pending] + rng.random(pending.size) * (u_plus[pending] - u_minus[pending])
        v = rng.random(pending.size)
        ok = v > 0.0
        x = np.where(ok, u / np.where(ok, v, 1.0) + xm[pending], 1.0)
        ok &= x > 0.0
        accept = ok & (
            np.log(np.where(v > 0.0, v, 1.0))
            <= 0.5 * _log_g(lam, omega[pending], np.where(ok, x, 1.0)) - nc[pending]
        )
        return x, accept

    return _rejection_rounds(propose, omega.size, rng, stats)


def _gig_three_part(lam, omega, rng, stats):
    # Valid for 0 <= lam < 1; tuned for small omega.
    t1 = 1.0 - lam
    xm = _gig_mode(lam, omega)
    x0 = omega / t1
    k0 = np.exp(_log_g(lam, omega, xm))
    area0 = k0 * x0

    wide = x0 >= 2.0 / omega
    k1 = np.where(wide, 0.0, np.exp(-omega))
    if abs(lam) < 1e-12:
        area1 = np.where(wide, 0.0, k1 * np.log(2.0 / (omega * omega)))
    else:
        area1 = np.where(
            wide, 0.0, k1 / lam * ((2.0 / omega) ** lam - np.minimum(x0, 2.0 / omega) ** lam)
        )
    x_tail = np.where(wide, x0, 2.0 / omega)
    k2 = np.where(wide, np.exp((lam - 1.0) * np.log(np.maximum(x0, np.finfo(float).tiny))),
                  (2.0 / omega) ** (lam - 1.0))
    area2 = k2 * 2.0 * np.exp(-0.5 * omega * x_tail) / omega
    total = area0 + area1 + area2

    def propose(pending, rng):
        om = omega[pending]
        a0, a1 = area0[pending], area1[pending]
        v = total[pending] * rng.random(pending.size)
        x = np.empty(pending.size)
        hat = np.empty(pending.size)

        in0 = v <= a0
        x[in0] = x0[pending][in0] * v[in0] / a0[in0]
        hat[in0] = k0[pending][in0]

        v1 = v - a0
        in1 = (~in0) & (v1 <= a1)
        if in1.any():
            kk1 = k1[pending][in1]
            if abs(lam) < 1e-12:
                x[in1] = om[in1] * np.exp(v1[in1] / kk1)
                hat[in1] = kk1 / x[in1]
            else:
                base = x0[pending][in1] ** lam + lam * v1[in1] / kk1
                x[in1] = np.maximum(base, np.finfo(float).tiny) ** (1.0 / lam)
                hat[in1] = kk1 * x[in1] ** (lam - 1.0)

        in2 = (~in0) & (~in1)
        if in2.any():
            v2 = v1[in2] - a1[in2]
            kk2 = k2[pending][in2]
            xs = x_tail[pending][in2]
            inner = np.maximum(
                np.exp(-0.5 * om[in2] * xs) - v2 * om[in2] / (2.0 * kk2),
                np.finfo(float).tiny,
            )
            x[in2] = -2.0 / om[in2] * np.log(inner)
            hat[in2] = kk2 * np.exp(-0.5 * om[in2] * x[in2])

        x = np.maximum(x, np.finfo(float).tiny)
        u = rng.random(pending.size) * hat
        accept = np.log(np.maximum(u, np.finfo(float).tiny)) <= _log_g(lam, om, x)
        return x, accept

    return _rejection_rounds(propose, omega.size, rng, stats)


def _gig_standardized(lam, omega, rng, stats):
    """Draws from the two-parameter form, lam >= 0, vectorized over omega."""
    out = np.empty(omega.shape)
    if lam >= 1.0:
        shift = np.ones(omega.shape, dtype=bool)
    else:
        shift = omega > 1.0
    rest = ~shift
    noshift = rest & (omega >= min(0.5, (2.0 / 3.0) * math.sqrt(max(1.0 - lam, 0.0))))
    three = rest & ~noshift
    if shift.any():
        out[shift] = _gig_rou_shift(lam, omega[shift], rng, stats)
    if noshift.any():
        out[noshift] = _gig_rou_noshift(lam, omega[noshift], rng, stats)
    if three.any():
        out[three] = _gig_three_part(lam, omega[three], rng, stats)
    return out


def sample_gig_many(lam, nu, chi, rng, stats=None):
    """Vector of GIG(lam, nu, chi_i) draws for a shared lam and nu.

    Parameters
    ----------
    lam : float
    nu : float
        Positive rate on ``x``.
    chi : array_like
        Positive rates on ``1/x``, one per draw.
    rng : numpy.random.Generator
    stats : SamplerStats, optional

    Returns
    -------
    ndarray with the shape of ``chi``.
    """
    chi = np.atleast_1d(np.asarray(chi, dtype=float))
    if nu <= 0.0 or np.any(chi <= 0.0):
        raise ValueError("nu and every chi must be positive")
    alpha = np.sqrt(chi / nu)
    omega = np.sqrt(nu * chi)
    if lam >= 0.0:
        return alpha * _gig_standardized(lam, omega, rng, stats)
    return alpha / _gig_standardized(-lam, omega, rng, stats)


def sample_gig(params, rng, stats=None):
    """One draw from GIG(lam, nu, chi)."""
    return float(sample_gig_many(params.lam, params.nu, np.array([params.chi]), rng, stats)[0])


# ---------------------------------------------------------------------------
# Truncated normal
# ---------------------------------------------------------------------------


def _tail_rejection(a, b, rng):
    """One-sided standardized draws on (a_i, b_i) with a_i deep in the right tail.

    Exponential proposals at the optimal rate, vectorized over the batch.
    Returns the draws and a mask of slots that never accepted (degenerate
    intervals), which callers clamp.
    """
    m = a.size
    out = np.empty(m)
    done = np.zeros(m, dtype=bool)
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    for _ in range(_MAX_ROUNDS):
        idx = np.nonzero(~done)[0]
        if idx.size == 0:
            break
        z = a[idx] + rng.exponential(1.0, idx.size) / rate[idx]
        accept = rng.random(idx.size) <= np.exp(-0.5 * (z - rate[idx]) ** 2)
        accept &= z < b[idx]
        out[idx[accept]] = z[accept]
        done[idx[accept]] = True
    return out, ~done


def sample_truncnorm_many(mean, var, lower, upper, rng, stats=None):
    """Vectorized truncated-normal draws.

    CDF inversion (double-precision error function) handles intervals that
    keep mass within ``TAIL_SWITCH`` standard deviations of the mean;
    beyond that an exponential-proposal rejection sampler takes over.
    Intervals whose probability mass underflows (below ``MIN_MASS``) yield
    the bound nearest the mean and increment ``stats.truncnorm_clamps``.

    Parameters
    ----------
    mean, var, lower, upper : array_like, broadcastable to a common shape
    rng : numpy.random.Generator
    stats : SamplerStats, optional

    Returns
    -------
    ndarray of draws, each strictly inside its interval except on the
    clamp path.
    """
    mean, var, lower, upper = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(x, dtype=float)) for x in (mean, var, lower, upper))
    )
    if np.any(var <= 0.0):
        raise ValueError("variance must be positive")
    if not np.all(lower < upper):
        raise ValueError("every interval needs lower < upper")
    sd = np.sqrt(var)
    a = (lower - mean) / sd
    b = (upper - mean) / sd

    z = np.empty(a.shape)
    clamp = np.zeros(a.shape, dtype=bool)

    right = a >= TAIL_SWITCH
    left = b <= -TAIL_SWITCH
    mid = ~(right | left)

    if mid.any():
        am, bm = a[mid], b[mid]
        zm = np.empty(am.shape)
        # Work in whichever tail keeps the CDF values well separated from 1.
        hi = am > 0.0
        lo = (~hi) & (bm < 0.0)
        ce = ~(hi | lo)
        u = rng.random(am.shape)
        if hi.any():
            qa = ndtr(-am[hi])
            qb = ndtr(-bm[hi])
            zm[hi] = -ndtri(qb + u[hi] * (qa - qb))
        if lo.any():
            pa = ndtr(am[lo])
            pb = ndtr(bm[lo])
            zm[lo] = ndtri(pa + u[lo] * (pb - pa))
        if ce.any():
            pa = ndtr(am[ce])
            pb = ndtr(bm[ce])
            zm[ce] = ndtri(pa + u[ce] * (pb - pa))
        bad = ~np.isfinite(zm)
        zm[bad] = np.where(am[bad] > 0.0, am[bad], bm[bad])
        clamp_mid = bad.copy()
        z[mid] = zm
        clamp[mid] = clamp_mid

    if right.any():
        zr, failed = _tail_rejection(a[right], b[right], rng)
        zr[failed] = a[right][failed]
        z[right] = zr
        clamp[right] |= failed
    if left.any():
        zl, failed = _tail_rejection(-b[left], -a[left], rng)
        zl = -zl
        zl[failed] = b[left][failed]
        z[left] = zl
        clamp[left] |= failed

    # Zero-mass intervals: resolve to the bound nearest the mean.
    degenerate = ~clamp & ~np.isfinite(z)
    if degenerate.any():
        z[degenerate] = np.where(a[degenerate] > 0.0, a[degenerate], b[degenerate])
        clamp |= degenerate

    if stats is not None:
        stats.truncnorm_clamps += int(clamp.sum())

    x = mean + sd * z
    # Guarantee draws never escape their interval even after the affine map.
    x = np.minimum(np.maximum(x, np.nextafter(lower, np.inf)), np.nextafter(upper, -np.inf))
    return x


def sample_truncnorm(mean, var, interval, rng, stats=None):
    """One truncated-normal draw on ``interval`` (a :class:`TruncInterval`)."""
    return float(
        sample_truncnorm_many(
            np.array([mean]), np.array([var]),
            np.array([interval.lower]), np.array([interval.upper]),
            rng, stats,
        )[0]
    )


# ---------------------------------------------------------------------------
# Multivariate normal and inverse Wishart
# ---------------------------------------------------------------------------


def sample_mvnormal(mean, cov, rng):
    """Multivariate normal draw via Cholesky, with one jitter retry."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = robust_cholesky(cov)
    return mean + chol @ rng.standard_normal(mean.size)


def sample_inverse_wishart(df, scale, rng, size=None):
    """Inverse-Wishart draws in the convention ``E[X] = scale / (df - p - 1)``.

    ``X ~ IW(df, scale)`` if and only if ``X^{-1}`` is Wishart with ``df``
    degrees of freedom and scale ``scale^{-1}``; sampling goes through the
    Bartlett decomposition of that Wishart variate.

    Parameters
    ----------
    df : float
        Degrees of freedom, strictly greater than ``p - 1``.
    scale : array_like of shape (p, p)
        Symmetric positive-definite scale matrix.
    rng : numpy.random.Generator
    size : int, optional
        When given, return ``(size, p, p)`` stacked draws.

    Returns
    -------
    ndarray of shape (p, p) or (size, p, p).
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if df <= p - 1:
        raise ValueError(f"df must exceed p - 1 = {p - 1}, got {df}")
    chol = robust_cholesky(scale)
    # C C' = scale^{-1} with C = inv(chol)'.
    c_factor = np.linalg.inv(chol).T

    m = 1 if size is None else int(size)
    a = np.zeros((m, p, p))
    rows, cols = np.tril_indices(p, -1)
    if rows.size:
        a[:, rows, cols] = rng.standard_normal((m, rows.size))
    dfs = df - np.arange(p)
    a[:, np.arange(p), np.arange(p)] = np.sqrt(rng.chisquare(dfs, (m, p)))
    factor = c_factor[None, :, :] @ a
    wish = factor @ np.swapaxes(factor, 1, 2)
    inv = np.linalg.inv(wish)
    inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
    return inv[0] if size is None else inv
