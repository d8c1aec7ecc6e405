"""Online phase: control-variate estimation for arbitrary parameters.

Offline, a greedy run has produced snapshot parameters, their
reference-batch means, and a small batch. Per query the estimator

    sum_i lam_i E_ref(f_{mu_i}) + E_small(f_mu) - sum_i lam_i E_small(f_{mu_i})

costs one small-batch evaluation plus an N x N solve, where lam solves
the normal equations of min_lam Var_small(f_mu - sum lam_i f_{mu_i}).

Diagnostics: the relative error against the reference-batch mean, and
the number of plain Monte-Carlo samples that would match the estimator's
statistical error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import stats
from .errors import DomainError, UndefinedQuantityError
from .families import FamilySpec, draw_family_batch, eval_family
from .greedy import STREAM_SMALL, ReducedBasis, _spectral_solve
from .stats import DistributionSpec, SampleBatch


@dataclass
class OnlineContext:
    """Read-only bundle for online queries: basis + reference means +
    one small batch with the snapshot evaluations cached on it."""

    basis: ReducedBasis
    family: FamilySpec
    dist: DistributionSpec
    small_batch: SampleBatch
    snap_small: np.ndarray            # (N, M_small) snapshot values
    small_means: np.ndarray           # (N,)
    ref_means: np.ndarray             # (N,)
    _eval_cache: dict = field(default_factory=dict)
    _ref_cache: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def m_small(self) -> int:
        return self.small_batch.m


def make_online_context(basis: ReducedBasis, m_small: int, seed: int | None = None,
                        stream_id: int = STREAM_SMALL) -> OnlineContext:
    """Draw the small batch (independent stream) and cache snapshot data."""
    if basis.n < 1:
        raise DomainError("online context needs a nonempty basis")
    if m_small < 1:
        raise DomainError("m_small must be >= 1")
    seed = basis.ref_batch.seed if seed is None else seed
    if seed == basis.ref_batch.seed and stream_id == basis.ref_batch.stream_id:
        raise DomainError("small batch must use a stream distinct from the reference")
    small, _ = draw_family_batch(basis.family, basis.dist, m_small, seed, stream_id)
    snap_small = np.vstack([eval_family(basis.family, mu, small)
                            for mu in basis.snapshot_params])
    return OnlineContext(
        basis=basis, family=basis.family, dist=basis.dist, small_batch=small,
        snap_small=snap_small, small_means=stats.row_means(snap_small),
        ref_means=np.asarray(basis.ref_means, dtype=np.float64))


def context_from_batch(basis: ReducedBasis, small: SampleBatch) -> OnlineContext:
    """Build a context on a caller-supplied batch (tests use this to set
    small batch = reference batch in degenerate configurations)."""
    snap_small = np.vstack([eval_family(basis.family, mu, small)
                            for mu in basis.snapshot_params])
    return OnlineContext(
        basis=basis, family=basis.family, dist=basis.dist, small_batch=small,
        snap_small=snap_small, small_means=stats.row_means(snap_small),
        ref_means=np.asarray(basis.ref_means, dtype=np.float64))


def _small_eval(ctx: OnlineContext, mu: float) -> np.ndarray:
    key = float(mu)
    hit = ctx._eval_cache.get(key)
    if hit is None:
        hit = eval_family(ctx.family, key, ctx.small_batch)
        ctx._eval_cache[key] = hit
    return hit


def _ref_stats(ctx: OnlineContext, mu: float) -> tuple[float, float]:
    """Reference-batch mean and variance of f_mu (regenerated batch)."""
    key = float(mu)
    hit = ctx._ref_cache.get(key)
    if hit is None:
        vals = eval_family(ctx.family, key, ctx.basis.ref_batch)
        hit = (stats.empirical_mean(vals), stats.empirical_var(vals))
        ctx._ref_cache[key] = hit
    return hit


def fit_lambda(ctx: OnlineContext, mu: float, n: int | None = None) -> np.ndarray:
    """Small-batch variance-minimising coefficients over the first n
    snapshot functions (minimum-norm through a spectral cutoff when the
    covariance matrix is singular).

    A query at a snapshot parameter returns the exact unit vector: the
    representation is known, no solve needed.
    """
    n = ctx.n if n is None else int(n)
    if not 0 <= n <= ctx.n:
        raise DomainError(f"n must lie in [0, {ctx.n}]")
    if n == 0:
        return np.zeros(0)
    mus = ctx.basis.snapshot_params[:n]
    if float(mu) in mus:
        lam = np.zeros(n)
        lam[mus.index(float(mu))] = 1.0
        return lam
    snaps = ctx.snap_small[:n]
    f = _small_eval(ctx, mu)
    a = stats.cross_covariance(snaps, snaps)
    a = np.triu(a) + np.triu(a, 1).T
    b = stats.cov_vector(f, snaps)
    lam, *_ = _spectral_solve(a, b, allow_singular=True)
    return lam


def estimate_expectation(ctx: OnlineContext, mu: float, lam: np.ndarray,
                         n: int | None = None) -> float:
    """The three-term control-variate estimator; lam = 0 collapses it to
    the plain small-batch mean."""
    n = ctx.n if n is None else int(n)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (n,):
        raise DomainError("lambda length must equal the basis size in use")
    small_mean = stats.empirical_mean(_small_eval(ctx, mu))
    if n == 0:
        return float(small_mean)
    return float(lam @ ctx.ref_means[:n] + small_mean - lam @ ctx.small_means[:n])


def residual_variance(ctx: OnlineContext, mu: float, lam: np.ndarray,
                      n: int | None = None) -> float:
    n = ctx.n if n is None else int(n)
    f = _small_eval(ctx, mu)
    r = f - lam @ ctx.snap_small[:n] if n else f
    return stats.empirical_var(r)


def relative_error(ctx: OnlineContext, mu: float, n: int | None = None) -> float:
    """|reference mean - estimator| / |reference mean| with lam fitted on
    the small batch. Undefined (raises) for near-zero reference means."""
    ref_mean, _ = _ref_stats(ctx, mu)
    if abs(ref_mean) <= 1e-14:
        raise UndefinedQuantityError(
            f"reference mean {ref_mean:.3e} too small for a relative error")
    lam = fit_lambda(ctx, mu, n)
    est = estimate_expectation(ctx, mu, lam, n)
    return abs(ref_mean - est) / abs(ref_mean)


def equivalent_mc_samples(ctx: OnlineContext, mu: float, n: int | None = None
                          ) -> float:
    """Var_ref(f_mu) * M_small / Var_small(fitted residual); +inf when
    the fitted residual variance is exactly zero."""
    _, ref_var = _ref_stats(ctx, mu)
    lam = fit_lambda(ctx, mu, n)
    res = residual_variance(ctx, mu, lam, n)
    if res == 0.0:
        return float("inf")
    return ref_var * ctx.m_small / res


def online_table(ctx: OnlineContext, mus, n: int | None = None) -> list[dict]:
    """Per-parameter rows (estimate, relative error, equivalent plain-MC
    samples, coefficients) for CSV emission; undefined relative errors
    are reported as NaN rather than aborting the sweep."""
    rows = []
    k = ctx.n if n is None else int(n)
    for mu in mus:
        mu = float(mu)
        lam = fit_lambda(ctx, mu, k)
        est = estimate_expectation(ctx, mu, lam, k)
        try:
            err = relative_error(ctx, mu, k)
        except UndefinedQuantityError:
            err = float("nan")
        rows.append({"mu": mu, "estimate": est, "e_rel": err,
                     "m_mc": equivalent_mc_samples(ctx, mu, k),
                     "lambda": lam.tolist()})
    return rows
