"""Computable side of the sample-count analysis.

Contains the dimension-dependent rate function phi, the kappa curves and
per-iteration sample lower bounds of the weak-greedy guarantee, an exact
1-D Wasserstein-1 oracle against a known CDF, and empirical probes of
the concentration inequality  P[T1(batch) >= kappa] <= C exp(-c M phi(kappa)).

The constants C and c are existential; defaults of 1.0 are illustrative
placeholders and `fit_concentration_constants` produces fitted values
per distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log

import numpy as np
from scipy.special import ndtr, ndtri

from . import stats
from .errors import ConfigurationError, DomainError
from .stats import DistributionSpec, Normal, Uniform


# ---------------------------------------------------------------------------
# rate function and bound formulas
# ---------------------------------------------------------------------------

def phi(kappa, d: int, alpha: float):
    """Concentration rate: kappa^2 (d=1) / kappa/log(2+1/kappa)^2 (d=2)
    / kappa^d (d>=3) below 1, and kappa^alpha above 1.

    The d=2 branch is applied literally, including its jump at kappa=1.
    """
    if d < 1:
        raise DomainError("dimension must be >= 1")
    if alpha <= 1:
        raise DomainError("alpha must be > 1")
    k = np.asarray(kappa, dtype=np.float64)
    if np.any(k <= 0):
        raise DomainError("phi requires kappa > 0")
    if d == 1:
        low = k**2
    elif d == 2:
        low = k / np.log(2.0 + 1.0 / k) ** 2
    else:
        low = k**d
    out = np.where(k <= 1.0, low, k**alpha)
    return out if out.ndim else float(out)


def kappa_bound(n: int, gamma: float, sigma_hat_sq: float,
                k2: float, kinf_n: float, kl_n: float) -> float:
    """kappa_{n-1} feeding the n-th iteration's sample bound.

    n=1:  (1-gamma^2) sigma^2 / (8 Kinf KL)
    n>=2: min(1/(2(n-1)), (1-gamma^2) sigma^2 / (n (9 K2^2 + 4))) / (6 Kinf KL)
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    for name, v in (("sigma_hat_sq", sigma_hat_sq), ("k2", k2),
                    ("kinf_n", kinf_n), ("kl_n", kl_n)):
        if v <= 0:
            raise DomainError(f"{name} must be > 0")
    eps = (1.0 - gamma**2) * sigma_hat_sq
    if n == 1:
        return eps / (8.0 * kinf_n * kl_n)
    return min(0.5 / (n - 1), eps / (n * (9.0 * k2**2 + 4.0))) / (6.0 * kinf_n * kl_n)


@dataclass(frozen=True)
class SampleBound:
    count: int
    vacuous: bool


def sample_lower_bound(delta_n: float, c_const: float, c_rate: float,
                       kappa: float, d: int, alpha: float) -> SampleBound:
    """ceil(-ln(delta_n / C) / (c phi(kappa))); vacuous when delta_n >= C."""
    if not 0 < delta_n:
        raise DomainError("delta_n must be > 0")
    if c_const <= 0 or c_rate <= 0:
        raise DomainError("C and c must be > 0")
    if delta_n >= c_const:
        return SampleBound(count=1, vacuous=True)
    raw = -log(delta_n / c_const) / (c_rate * phi(kappa, d=d, alpha=alpha))
    return SampleBound(count=max(1, ceil(raw)), vacuous=False)


def delta_schedule(delta: float, n) -> np.ndarray:
    """delta_n = 1 - (1-delta)^(2^-n): the product of (1-delta_n) over
    n>=1 telescopes to exactly 1-delta in the limit, so every finite
    product stays >= 1-delta."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 1):
        raise DomainError("schedule index starts at 1")
    out = 1.0 - (1.0 - delta) ** (2.0 ** (-n))
    return out if out.ndim else float(out)


@dataclass
class TheoryParams:
    """Constants feeding the bound formulas.

    C and c default to 1.0 as illustrative placeholders (the guarantee
    only asserts their existence); use `fit_concentration_constants` for
    distribution-specific fitted values.
    """

    alpha: float = 2.0
    beta: float = 1.0
    c_const: float = 1.0
    c_rate: float = 1.0
    gamma: float = 0.9
    delta: float = 0.1
    k2: float = 1.0
    kinf: float = 1.0
    kl: float = 1.0
    d: int = 1
    fitted: bool = False

    def __post_init__(self):
        if self.alpha <= 1 or self.beta <= 0:
            raise ConfigurationError("need alpha > 1 and beta > 0")
        if not 0 < self.gamma < 1 or not 0 < self.delta < 1:
            raise ConfigurationError("gamma and delta must lie in (0, 1)")
        if min(self.c_const, self.c_rate, self.k2, self.kinf, self.kl) <= 0:
            raise ConfigurationError("constants must be positive")


@dataclass
class BoundReport:
    """Per-iteration table of (kappa, phi(kappa), sample lower bound)."""

    rows: list[dict] = field(default_factory=list)

    def append(self, n, kappa, phi_val, bound: SampleBound):
        self.rows.append({"n": int(n), "kappa": float(kappa),
                          "phi_kappa": float(phi_val),
                          "m_lower": int(bound.count),
                          "vacuous": bool(bound.vacuous)})


def bound_report(params: TheoryParams, sigma_hat_sq, kinf_seq=None,
                 kl_seq=None) -> BoundReport:
    """Evaluate the sample bound along a sequence of measured sup
    residual variances (index n-1 -> iteration n).

    kinf_seq/kl_seq give the running max constants including the
    orthonormalised basis functions; they default to the base constants.
    """
    sigma_hat_sq = np.asarray(sigma_hat_sq, dtype=np.float64)
    report = BoundReport()
    for i, s2 in enumerate(sigma_hat_sq):
        n = i + 1
        kinf_n = params.kinf if kinf_seq is None else float(kinf_seq[i])
        kl_n = params.kl if kl_seq is None else float(kl_seq[i])
        kap = kappa_bound(n, params.gamma, float(s2), params.k2, kinf_n, kl_n)
        b = sample_lower_bound(delta_schedule(params.delta, n), params.c_const,
                               params.c_rate, kap, params.d, params.alpha)
        report.append(n, kap, phi(kap, d=params.d, alpha=params.alpha), b)
    return report


# ---------------------------------------------------------------------------
# exact 1-D Wasserstein-1 distance to a known CDF
# ---------------------------------------------------------------------------

class Cdf1D:
    """CDF with the pieces needed for exact W1 integration: F itself,
    its antiderivative I(x) = integral of F from -inf to x, the quantile
    function, and the mean."""

    def cdf(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def antiderivative(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def quantile(self, p):  # pragma: no cover - interface
        raise NotImplementedError

    mean: float


class UniformCdf(Cdf1D):
    def __init__(self, a: float, b: float):
        if a >= b:
            raise ConfigurationError("uniform requires a < b")
        self.a, self.b = float(a), float(b)
        self.mean = 0.5 * (a + b)

    def cdf(self, x):
        return np.clip((np.asarray(x, float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        below = np.clip(x, self.a, self.b)
        ramp = (below - self.a) ** 2 / (2.0 * (self.b - self.a))
        return ramp + np.maximum(x - self.b, 0.0)

    def quantile(self, p):
        return self.a + (self.b - self.a) * np.asarray(p, float)


class NormalCdf(Cdf1D):
    def __init__(self, mean: float, stddev: float):
        if stddev <= 0:
            raise ConfigurationError("normal requires stddev > 0")
        self.mu, self.sigma = float(mean), float(stddev)
        self.mean = float(mean)

    def cdf(self, x):
        return ndtr((np.asarray(x, float) - self.mu) / self.sigma)

    def antiderivative(self, x):
        # integral of Phi((t-mu)/sigma) dt = sigma (u Phi(u) + pdf(u)),
        # which tends to 0 as x -> -inf.
        u = (np.asarray(x, float) - self.mu) / self.sigma
        pdf = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
        return self.sigma * (u * ndtr(u) + pdf)

    def quantile(self, p):
        return self.mu + self.sigma * ndtri(np.asarray(p, float))


def cdf_for(dist: DistributionSpec) -> Cdf1D:
    if dist.d != 1:
        raise ConfigurationError("exact W1 oracle is 1-D only")
    comp = dist.components[0]
    if isinstance(comp, Uniform):
        return UniformCdf(comp.a, comp.b)
    return NormalCdf(comp.mean, comp.stddev)


def wasserstein1_1d(samples, cdf: Cdf1D) -> float:
    """Exact integral of |F_M - F| over the support.

    Between consecutive order statistics the empirical CDF is the
    constant k/M, so each piece reduces to antiderivative evaluations
    split at the quantile of k/M; the two tails integrate F and 1-F in
    closed form.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("need a nonempty 1-D sample vector")
    if np.any(np.diff(x) < 0):
        raise DomainError("samples must be sorted ascending")
    m = x.size
    ia = cdf.antiderivative
    total = float(ia(x[0]))                       # (-inf, x_1): F itself
    total += float(cdf.mean - x[-1] + ia(x[-1]))  # (x_M, inf): 1 - F
    if m > 1:
        levels = np.arange(1, m) / m
        left, right = x[:-1], x[1:]
        cross = np.clip(cdf.quantile(levels), left, right)
        il, ic, ir = ia(left), ia(cross), ia(right)
        below = levels * (cross - left) - (ic - il)    # F <= level part
        above = (ir - ic) - levels * (right - cross)   # F >= level part
        total += float(np.sum(below + above))
    return total


def wasserstein1_riemann(samples, cdf: Cdf1D, grid: np.ndarray) -> float:
    """Brute-force midpoint Riemann sum of |F_M - F| (test oracle)."""
    x = np.asarray(samples, dtype=np.float64)
    mids = 0.5 * (grid[1:] + grid[:-1])
    emp = np.searchsorted(np.sort(x), mids, side="right") / x.size
    return float(np.sum(np.abs(emp - cdf.cdf(mids)) * np.diff(grid)))


# ---------------------------------------------------------------------------
# concentration probes
# ---------------------------------------------------------------------------

def concentration_probe(dist: DistributionSpec, m: int, kappa: float,
                        trials: int, seed: int, stream_base: int = 0) -> float:
    """Fraction of independent batches with W1 >= kappa.

    Each trial uses its own stream id, so the probe is reproducible and
    trials are independent; the frequency is reduced in trial order.
    """
    if dist.d != 1:
        raise ConfigurationError("probe requires a 1-D distribution")
    if trials < 100:
        raise ConfigurationError("use at least 100 trials")
    cdf = cdf_for(dist)
    hits = 0
    for t in range(trials):
        batch = stats.draw_batch(dist, m, seed, stream_id=stream_base + t)
        w = wasserstein1_1d(np.sort(batch.points[:, 0]), cdf)
        hits += int(w >= kappa)
    return hits / trials


@dataclass
class ConcentrationFit:
    c_const: float              # fitted C (exp(-intercept))
    c_rate: float               # fitted c (slope)
    r_squared: float
    table: list[dict]           # per-(m, kappa) frequencies
    n_points: int


def fit_concentration_constants(dist: DistributionSpec, ms, kappas,
                                trials: int, seed: int, alpha: float = 2.0
                                ) -> ConcentrationFit:
    """Least squares of -ln(frequency) against M*phi(kappa) over a grid;
    zero frequencies are excluded (they carry no log information)."""
    table = []
    xs, ys = [], []
    base = 0
    for m in ms:
        for kap in kappas:
            freq = concentration_probe(dist, int(m), float(kap), trials, seed,
                                       stream_base=base)
            base += trials
            xval = float(m) * phi(float(kap), d=1, alpha=alpha)
            table.append({"m": int(m), "kappa": float(kap), "frequency": freq,
                          "m_phi": xval})
            if freq > 0.0:
                xs.append(xval)
                ys.append(-log(freq))
    xs, ys = np.asarray(xs), np.asarray(ys)
    if xs.size >= 2 and np.ptp(xs) > 0:
        slope, intercept = np.polyfit(xs, ys, 1)
        pred = slope * xs + intercept
        ss_res = float(np.sum((ys - pred) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, intercept, r2 = float("nan"), float("nan"), float("nan")
    c_const = float(np.exp(-intercept)) if np.isfinite(intercept) else float("nan")
    return ConcentrationFit(c_const=c_const, c_rate=float(slope), r_squared=r2,
                            table=table, n_points=int(xs.size))
