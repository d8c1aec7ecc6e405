"""Greedy snapshot selection under Monte-Carlo sampling.

Three drivers share one machinery:

* ``run_imc``  -- ideal variant: every statistic is computed on the one
  reference batch; terminates when the selected residual drops below
  epsilon (or the trial set is exhausted).
* ``run_hmc``  -- heuristic variants ("H" and "SH"): selection happens on
  a fresh iteration batch of size M_n; an acceptance ratio compares the
  iteration-batch residual against the reference-batch residual and the
  iteration is retried with more samples until the ratio passes.

The basis is kept as a lower-triangular coefficient matrix over the
snapshot functions; constants are never materialised because every
statistic used here is shift-invariant. Orthonormality always refers to
the empirical covariance inner product on the reference batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import ceil, isfinite

import numpy as np

from . import stats, theory
from .errors import (DegenerateBasisError, DegenerateSelectionError,
                     DegenerateSnapshotError, DomainError,
                     UndefinedQuantityError)
from .families import FamilySpec, TrialSet, draw_family_batch, eval_family
from .stats import DistributionSpec, EvalMatrix, SampleBatch

STREAM_REF = 1
STREAM_TRIAL = 2
STREAM_SMALL = 3
STREAM_ITER_BASE = 100

_COND_LIMIT = 1e12
_EIG_CUTOFF = 1e-10
_THETA_EXCLUDE = 1e-12   # drop theta^2 <= this * max from SH ratios
_SELECT_FLOOR = 1e-10    # "all residuals zero" threshold, relative


# ---------------------------------------------------------------------------
# reduced basis
# ---------------------------------------------------------------------------

@dataclass
class ReducedBasis:
    """Orthonormalised snapshot combinations on the reference batch.

    Row i of `coeffs` holds the expansion of the i-th basis function in
    the snapshot functions (lower triangular, positive diagonal); the
    implicit additive constants are never stored.
    """

    family: FamilySpec
    dist: DistributionSpec
    ref_batch: SampleBatch
    snapshot_params: list[float] = field(default_factory=list)
    snapshot_indices: list[int] = field(default_factory=list)  # into the trial set
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    thetas: list[float] = field(default_factory=list)
    ref_means: list[float] = field(default_factory=list)
    snap_ref_evals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ref_rows: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n(self) -> int:
        return len(self.snapshot_params)

    def rows_on(self, snapshot_evals: np.ndarray) -> np.ndarray:
        """Basis functions evaluated on another batch, given the raw
        snapshot evaluations there (constants dropped, harmless under
        covariances)."""
        if self.n == 0:
            return np.zeros((0, snapshot_evals.shape[-1] if snapshot_evals.ndim else 0))
        return self.coeffs @ snapshot_evals

    def ref_gram(self) -> np.ndarray:
        return stats.gram_matrix(stats.EvalMatrix(
            values=np.array(self.ref_rows), batch_tag=self.ref_batch.tag))


def empty_basis(family: FamilySpec, dist: DistributionSpec,
                ref_batch: SampleBatch) -> ReducedBasis:
    m = ref_batch.m
    return ReducedBasis(family=family, dist=dist, ref_batch=ref_batch,
                        snap_ref_evals=np.zeros((0, m)), ref_rows=np.zeros((0, m)))


def orthonormalize_next(basis: ReducedBasis, mu_new: float, theta_new: float,
                        lambda_ref: np.ndarray, f_ref: np.ndarray,
                        ref_mean: float, trial_index: int = -1) -> ReducedBasis:
    """Append the snapshot at mu_new, orthonormalised on the reference
    batch against the current basis.

    `theta_new`/`lambda_ref` are the caller's best-fit outputs on the
    reference batch; a second projection pass tightens them before the
    new row is normalised, so the stored family stays orthonormal to
    machine precision.
    """
    if basis.n and mu_new in basis.snapshot_params:
        raise DegenerateSnapshotError(f"mu={mu_new} is already a snapshot")
    lam = np.asarray(lambda_ref, dtype=np.float64).copy()
    if lam.shape != (basis.n,):
        raise DomainError("lambda_ref length must equal the basis size")
    f = np.asarray(f_ref, dtype=np.float64)
    var_f = stats.empirical_var(f)
    tol = 1e-12 * max(var_f, 1e-300)
    if not isfinite(theta_new) or theta_new**2 <= tol:
        raise DegenerateSnapshotError(
            f"snapshot at mu={mu_new} adds no new direction (theta={theta_new})")

    r = f - f.mean()
    if basis.n:
        r = r - lam @ basis.ref_rows
        # one re-orthogonalisation pass ("twice is enough")
        delta = stats.cov_vector(r, basis.ref_rows)
        lam = lam + delta
        r = r - delta @ basis.ref_rows
        r = r - r.mean()
    theta_sq = stats.empirical_var(r)
    if theta_sq <= tol:
        raise DegenerateSnapshotError(
            f"snapshot at mu={mu_new} adds no new direction")
    theta = float(np.sqrt(theta_sq))
    new_row = r / theta

    n = basis.n
    coeffs = np.zeros((n + 1, n + 1))
    coeffs[:n, :n] = basis.coeffs
    e_new = np.zeros(n + 1)
    e_new[n] = 1.0
    if n:
        coeffs[n, :n] = -(lam @ basis.coeffs) / theta
    coeffs[n, n] = 1.0 / theta

    return ReducedBasis(
        family=basis.family, dist=basis.dist, ref_batch=basis.ref_batch,
        snapshot_params=basis.snapshot_params + [float(mu_new)],
        snapshot_indices=basis.snapshot_indices + [int(trial_index)],
        coeffs=coeffs,
        thetas=basis.thetas + [theta],
        ref_means=basis.ref_means + [float(ref_mean)],
        snap_ref_evals=np.vstack([basis.snap_ref_evals, f[None, :]]),
        ref_rows=np.vstack([basis.ref_rows, new_row[None, :]]),
    )


# ---------------------------------------------------------------------------
# projections and residuals
# ---------------------------------------------------------------------------

def _spectral_solve(a: np.ndarray, b: np.ndarray, allow_singular: bool):
    """Solve the normal equations A x = b (A symmetric PSD). Singular A
    either raises or falls back to the minimum-norm solution through a
    spectral cutoff at 1e-10 * max eigenvalue."""
    w, v = np.linalg.eigh(a)
    wmax = float(w[-1])
    if wmax <= 0.0:
        raise DegenerateBasisError("basis rows are constant on this batch")
    cond = wmax / max(float(w[0]), 1e-300)
    if cond > _COND_LIMIT and not allow_singular:
        raise DegenerateBasisError(
            f"normal-equation condition estimate {cond:.2e} exceeds 1e12")
    keep = w > _EIG_CUTOFF * wmax
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    coef = v.T @ b
    x = v @ (inv_w * coef if b.ndim == 1 else inv_w[:, None] * coef)
    return x, w, v, inv_w


def best_fit_residual(target_row, basis_rows, allow_singular: bool = False
                      ) -> tuple[float, np.ndarray]:
    """Minimise the empirical variance of target - sum(lambda_i row_i).

    Returns (residual variance clamped at 0, argmin lambda). With an
    empty basis this is just the variance of the target.
    """
    t = np.asarray(target_row, dtype=np.float64)
    rows = np.asarray(basis_rows.values if isinstance(basis_rows, EvalMatrix)
                      else basis_rows, dtype=np.float64)
    if rows.size == 0:
        return stats.empirical_var(t), np.zeros(0)
    if rows.shape[1] != t.size:
        raise DomainError("basis rows and target evaluated on different batches")
    a = stats.cross_covariance(rows, rows)
    a = np.triu(a) + np.triu(a, 1).T
    b = stats.cov_vector(t, rows)
    lam, *_ = _spectral_solve(a, b, allow_singular)
    resid = stats.empirical_var(t) - 2.0 * lam @ b + lam @ a @ lam
    return max(float(resid), 0.0), lam


def residual_profile(trial_rows: np.ndarray, basis_rows: np.ndarray,
                     allow_singular: bool = True) -> np.ndarray:
    """Vectorised best-fit residual variance of every trial row against
    one basis; shares a single eigendecomposition of the Gram matrix."""
    variances = stats.row_variances(trial_rows)
    if basis_rows.shape[0] == 0:
        return variances
    a = stats.cross_covariance(basis_rows, basis_rows)
    a = np.triu(a) + np.triu(a, 1).T
    bmat = stats.cross_covariance(trial_rows, basis_rows)   # (P, n)
    w, v = np.linalg.eigh(a)
    wmax = float(w[-1])
    if wmax <= 0.0:
        raise DegenerateBasisError("basis rows are constant on this batch")
    cond = wmax / max(float(w[0]), 1e-300)
    if cond > _COND_LIMIT and not allow_singular:
        raise DegenerateBasisError(
            f"normal-equation condition estimate {cond:.2e} exceeds 1e12")
    keep = w > _EIG_CUTOFF * wmax
    proj = bmat @ v                                          # (P, n)
    reduction = (proj**2 * np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)).sum(axis=1)
    return np.maximum(variances - reduction, 0.0)


@dataclass(frozen=True)
class Selection:
    index: int
    mu: float
    residual_sq: float
    profile: np.ndarray


def select_parameter(trial: TrialSet, basis: ReducedBasis, batch: SampleBatch,
                     family: FamilySpec, trial_evals: np.ndarray | None = None
                     ) -> Selection:
    """Argmax of the best-fit residual variance over the trial set on the
    given batch; ties break to the first (smallest) parameter.

    Raises DegenerateSelectionError when every residual is numerically
    zero (trial set exhausted).
    """
    if trial.size < 1:
        raise DomainError("empty trial set")
    if trial_evals is None:
        trial_evals = np.vstack([eval_family(family, float(mu), batch)
                                 for mu in trial.parameters])
    rows = basis.rows_on(trial_evals[basis.snapshot_indices, :]) if basis.n \
        else np.zeros((0, trial_evals.shape[1]))
    profile = residual_profile(trial_evals, rows)
    scale = float(np.max(stats.row_variances(trial_evals), initial=0.0))
    if float(profile.max(initial=0.0)) <= _SELECT_FLOOR * max(scale, 1e-300):
        raise DegenerateSelectionError("all trial residuals are numerically zero")
    idx = int(np.argmax(profile))
    return Selection(index=idx, mu=float(trial.parameters[idx]),
                     residual_sq=float(profile[idx]), profile=profile)


# ---------------------------------------------------------------------------
# sample growth, acceptance, termination
# ---------------------------------------------------------------------------

def _guarded_ceil(x: float) -> int:
    # fl(1.1*10+1) = 12.000000000000002; shave relative slack so exact
    # integers in real arithmetic stay exact.
    return int(ceil(x - 1e-9 * max(1.0, abs(x))))


def grow_samples(m_n: int, theta_prev_sq, theta_curr_sq, phi, n: int) -> int:
    """Next iteration-batch size after a rejection.

    n = 1 uses the flat factor 1.1; later iterations use
    max(1.1, phi(theta_{n-1}^2)/phi(theta_n^2)), then M -> ceil(b M + 1).
    Strictly increasing in every case.
    """
    if m_n < 1:
        raise DomainError("m_n must be >= 1")
    if n == 1:
        b = 1.1
    else:
        if theta_prev_sq is None or theta_curr_sq is None:
            raise DomainError("theta values required for n >= 2")
        if theta_prev_sq <= 0 or theta_curr_sq <= 0:
            raise DomainError("phi requires positive theta^2")
        b = max(1.1, phi(theta_prev_sq) / phi(theta_curr_sq))
    grown = _guarded_ceil(b * m_n + 1.0)
    return max(grown, m_n + 1)


def accept_iteration(theta_sq, beta_sq, gamma: float, variant: str
                     ) -> tuple[bool, float]:
    """Acceptance ratio R = |theta^2 - beta^2| / theta^2.

    "H" compares at the selected parameter only; "SH" takes the sup over
    the trial profile, excluding parameters whose reference residual is
    numerically zero (the ratio is 0/0 there and carries no information).
    Accept iff R < 1 - gamma^2.
    """
    if variant not in ("H", "SH"):
        raise DomainError(f"unknown variant {variant!r}")
    t = np.atleast_1d(np.asarray(theta_sq, dtype=np.float64))
    b = np.atleast_1d(np.asarray(beta_sq, dtype=np.float64))
    if t.shape != b.shape:
        raise DomainError("theta and beta profiles must align")
    if variant == "H" and t.size != 1:
        raise DomainError("variant H compares scalars")
    tmax = float(t.max(initial=0.0))
    if tmax <= 0.0:
        raise UndefinedQuantityError("theta^2 is zero everywhere")
    keep = t > _THETA_EXCLUDE * tmax
    if not np.any(keep):
        raise UndefinedQuantityError("no parameter with positive theta^2")
    ratios = np.abs(t[keep] - b[keep]) / t[keep]
    r = float(ratios.max())
    return r < 1.0 - gamma**2, r


def termination_check(var_ref_of_cv: float, m_ref: int,
                      var_ref_of_residual: float, m_prev: int) -> bool:
    """True (stop) once the reference-batch statistical error of the
    control variate exceeds the iteration-batch error of the residual."""
    if m_ref < 1 or m_prev < 1:
        raise DomainError("sample counts must be >= 1")
    return var_ref_of_cv / m_ref > var_ref_of_residual / m_prev


# ---------------------------------------------------------------------------
# traces and config
# ---------------------------------------------------------------------------

@dataclass
class RetryRecord:
    attempt: int
    m: int
    stream_id: int
    mu: float
    beta_sq_at_mu: float
    theta_sq_at_mu: float
    r_value: float
    accepted: bool
    redraws: int = 0


@dataclass
class IterationRecord:
    n: int
    mu: float
    m: int
    theta_sq_at_mu: float
    beta_sq_at_mu: float | None
    theta_sq_sup: float | None
    beta_sq_sup: float | None
    r_value: float | None
    retries: list[RetryRecord] = field(default_factory=list)


@dataclass
class GreedyTrace:
    variant: str                       # "IMC" | "HMC" | "SHMC"
    records: list[IterationRecord] = field(default_factory=list)
    terminated_reason: str = ""
    truncated: bool = False
    total_redraws: int = 0

    @property
    def n_iterations(self) -> int:
        """Accepted iterations (a truncated retry-cap record is not one)."""
        return sum(1 for r in self.records if not math.isnan(r.mu))

    @property
    def total_retries(self) -> int:
        return sum(len(r.retries) for r in self.records)


@dataclass
class GreedyConfig:
    family: FamilySpec
    dist: DistributionSpec
    trial: TrialSet
    gamma: float = 0.9
    m1: int = 10
    m_ref: int = 100_000
    epsilon: float = 1e-6
    max_iters: int = 100
    retry_cap: int = 200
    seed: int = 0
    alpha: float = 2.0
    record_theta_profile: bool = True
    statistical_stop: bool = True     # off: run to max_iters (figure protocol)
    iter_stream_base: int = STREAM_ITER_BASE
    ref_stream: int = STREAM_REF

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise DomainError("gamma must lie in (0, 1)")
        if self.m1 < 1 or self.m_ref < 1 or self.max_iters < 1 or self.retry_cap < 1:
            raise DomainError("counts must be >= 1")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be > 0")

    def warnings(self) -> list[str]:
        out = []
        if self.m_ref < 10 * self.m1:
            out.append(f"m_ref={self.m_ref} is not much larger than m1={self.m1}")
        return out


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def _ref_setup(config: GreedyConfig):
    ref_batch, redraws = draw_family_batch(
        config.family, config.dist, config.m_ref, config.seed, config.ref_stream)
    trial_evals_ref = np.vstack([eval_family(config.family, float(mu), ref_batch)
                                 for mu in config.trial.parameters])
    return ref_batch, trial_evals_ref, redraws


def _theta_profile_ref(basis: ReducedBasis, trial_evals_ref: np.ndarray) -> np.ndarray:
    """Reference-batch residual variances over the trial set; the basis
    is orthonormal there so the projection shortcut applies."""
    variances = stats.row_variances(trial_evals_ref)
    if basis.n == 0:
        return variances
    proj = stats.cross_covariance(trial_evals_ref, basis.ref_rows)
    return np.maximum(variances - (proj**2).sum(axis=1), 0.0)


def _theta_at(basis: ReducedBasis, f_ref: np.ndarray) -> tuple[float, np.ndarray]:
    """Reference residual variance and projection coefficients for one
    function; residual computed directly for accuracy near zero."""
    if basis.n == 0:
        return stats.empirical_var(f_ref), np.zeros(0)
    lam = stats.cov_vector(f_ref, basis.ref_rows)
    r = f_ref - f_ref.mean() - lam @ basis.ref_rows
    return stats.empirical_var(r), lam


def run_imc(config: GreedyConfig) -> tuple[ReducedBasis, GreedyTrace]:
    """Ideal greedy: selection, projection and normalisation all on the
    reference batch; stops when theta at the latest snapshot < epsilon."""
    ref_batch, trial_evals_ref, redraws = _ref_setup(config)
    basis = empty_basis(config.family, config.dist, ref_batch)
    trace = GreedyTrace(variant="IMC", total_redraws=redraws)
    ref_means = stats.row_means(trial_evals_ref)

    theta_prev = None
    for n in range(1, config.max_iters + 1):
        if n >= 2 and theta_prev < config.epsilon:
            trace.terminated_reason = "epsilon"
            return basis, trace
        profile = _theta_profile_ref(basis, trial_evals_ref)
        scale = float(np.max(stats.row_variances(trial_evals_ref), initial=0.0))
        if float(profile.max(initial=0.0)) <= _SELECT_FLOOR * max(scale, 1e-300):
            trace.terminated_reason = "trial_exhausted"
            return basis, trace
        idx = int(np.argmax(profile))
        mu = float(config.trial.parameters[idx])
        f_ref = trial_evals_ref[idx]
        theta_sq, lam = _theta_at(basis, f_ref)
        basis = orthonormalize_next(basis, mu, float(np.sqrt(theta_sq)), lam,
                                    f_ref, float(ref_means[idx]), trial_index=idx)
        theta = basis.thetas[-1]
        trace.records.append(IterationRecord(
            n=n, mu=mu, m=config.m_ref, theta_sq_at_mu=theta**2,
            beta_sq_at_mu=None, theta_sq_sup=theta**2, beta_sq_sup=None,
            r_value=None))
        theta_prev = theta
    trace.terminated_reason = "max_iters"
    trace.truncated = True
    return basis, trace


def run_hmc(config: GreedyConfig, variant: str = "H"
            ) -> tuple[ReducedBasis, GreedyTrace]:
    """Heuristic greedy. variant "H" checks the acceptance ratio at the
    selected parameter; "SH" checks it over the whole trial set.

    Every attempt draws a fresh iteration batch on its own stream id; a
    rejection grows M_n strictly, so retries cannot livelock.
    """
    if variant not in ("H", "SH"):
        raise DomainError(f"unknown variant {variant!r}")
    d = config.family.input_dim
    phi1 = lambda t: theory.phi(t, d=d, alpha=config.alpha)

    ref_batch, trial_evals_ref, redraws = _ref_setup(config)
    ref_means = stats.row_means(trial_evals_ref)
    basis = empty_basis(config.family, config.dist, ref_batch)
    trace = GreedyTrace(variant="HMC" if variant == "H" else "SHMC",
                        total_redraws=redraws)

    m = config.m1
    attempt_counter = 0
    theta_prev_sq = None    # theta_{n-1}^2 at mu_{n-1} (reference batch)
    cv_var_prev = None      # Var_ref of the control variate for mu_{n-1}
    m_prev = None

    for n in range(1, config.max_iters + 1):
        if n >= 2 and config.statistical_stop and \
                termination_check(cv_var_prev, config.m_ref, theta_prev_sq, m_prev):
            trace.terminated_reason = "statistical"
            return basis, trace

        theta_profile = _theta_profile_ref(basis, trial_evals_ref)
        retries: list[RetryRecord] = []
        accepted = False
        while not accepted:
            if len(retries) >= config.retry_cap:
                trace.terminated_reason = "retry_cap"
                trace.truncated = True
                trace.records.append(IterationRecord(
                    n=n, mu=float("nan"), m=m, theta_sq_at_mu=float("nan"),
                    beta_sq_at_mu=float("nan"), theta_sq_sup=None,
                    beta_sq_sup=None, r_value=float("nan"), retries=retries))
                return basis, trace
            stream_id = config.iter_stream_base + attempt_counter
            attempt_counter += 1
            zbatch, zredraws = draw_family_batch(
                config.family, config.dist, m, config.seed, stream_id)
            trace.total_redraws += zredraws
            trial_evals_n = np.vstack([eval_family(config.family, float(mu), zbatch)
                                       for mu in config.trial.parameters])
            try:
                sel = select_parameter(config.trial, basis, zbatch, config.family,
                                       trial_evals=trial_evals_n)
            except DegenerateSelectionError:
                trace.terminated_reason = "trial_exhausted"
                if retries:
                    trace.records.append(IterationRecord(
                        n=n, mu=float("nan"), m=m, theta_sq_at_mu=float("nan"),
                        beta_sq_at_mu=float("nan"), theta_sq_sup=None,
                        beta_sq_sup=None, r_value=float("nan"), retries=retries))
                return basis, trace
            theta_sq_at = float(theta_profile[sel.index])
            if variant == "H":
                accepted, r_val = accept_iteration(theta_sq_at, sel.residual_sq,
                                                   config.gamma, "H")
            else:
                accepted, r_val = accept_iteration(theta_profile, sel.profile,
                                                   config.gamma, "SH")
            retries.append(RetryRecord(
                attempt=len(retries) + 1, m=m, stream_id=stream_id, mu=sel.mu,
                beta_sq_at_mu=sel.residual_sq, theta_sq_at_mu=theta_sq_at,
                r_value=r_val, accepted=accepted, redraws=zredraws))
            if not accepted:
                m = grow_samples(m, theta_prev_sq, theta_sq_at, phi1, n)

        # accepted attempt: extend the basis on the reference batch
        f_ref = trial_evals_ref[sel.index]
        theta_sq, lam = _theta_at(basis, f_ref)
        cv_row = lam @ basis.ref_rows if basis.n else np.zeros(ref_batch.m)
        basis = orthonormalize_next(basis, sel.mu, float(np.sqrt(theta_sq)), lam,
                                    f_ref, float(ref_means[sel.index]),
                                    trial_index=sel.index)
        theta_sq = basis.thetas[-1] ** 2
        theta_sup = float(theta_profile.max()) if config.record_theta_profile else None
        beta_sup = float(sel.profile.max()) if variant == "SH" else None
        trace.records.append(IterationRecord(
            n=n, mu=sel.mu, m=m, theta_sq_at_mu=theta_sq,
            beta_sq_at_mu=sel.residual_sq, theta_sq_sup=theta_sup,
            beta_sq_sup=beta_sup, r_value=retries[-1].r_value, retries=retries))

        cv_var_prev = stats.empirical_var(cv_row)
        theta_prev_sq = theta_sq
        m_prev = m

    trace.terminated_reason = "max_iters"
    trace.truncated = True
    return basis, trace
