"""The parameter-dependent function families behind one interface.

Three families:

* ``tc1``   -- translates f_mu(x) = f(x - mu) of a piecewise-linear hat,
               nu = U(0, 5), parameter domain [0, 3] (evaluation allowed
               on the wider test interval [0, 4]);
* ``tc2``   -- a C^1 square-root/affine kink family on [0, 1],
               nu = U(0, 1), parameter domain [0, 1];
* ``heat2d``-- QoI of a 2-D diffusion solve, z = (z1, z2) with
               z1 ~ U(0.5, 2), z2 ~ N(0, 1), parameter domain [0, 10]
               (test interval [0, 12]).

The greedy engine only searches parameters inside the trial set, which
lives in the parameter domain; online diagnostics may evaluate on the
wider test interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stats
from .errors import ConfigurationError, DomainError
from .fem import FemContext, eval_heat2d
from .stats import DistributionSpec, Normal, SampleBatch, Uniform


def testcase1_f(x):
    """Continuous hat: 2x on [0, 0.5], 1 on [0.5, 1.5], 4-2x on [1.5, 2],
    0 elsewhere. Range [0, 1], Lipschitz constant 2."""
    x = np.asarray(x, dtype=np.float64)
    val = np.maximum(0.0, np.minimum(np.minimum(1.0, 2.0 * x), 4.0 - 2.0 * x))
    return val if val.ndim else float(val)


def testcase2_f(mu: float, x):
    """sqrt(x + 0.1) on [0, mu], then its tangent line on [mu, 1].

    Value and first derivative match at the kink (slope
    0.5*(mu+0.1)^(-1/2)), so the family is C^1 on [0, 1].
    """
    if not 0.0 <= mu <= 1.0:
        raise DomainError(f"mu must lie in [0, 1], got {mu}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("x must lie in [0, 1]")
    root = np.sqrt(mu + 0.1)
    slope = 0.5 / root
    val = np.where(x <= mu, np.sqrt(np.minimum(x, mu) + 0.1), slope * (x - mu) + root)
    return val if val.ndim else float(val)


@dataclass(frozen=True)
class FamilySpec:
    kind: str                                # "tc1" | "tc2" | "heat2d"
    parameter_domain: tuple[float, float]    # greedy searches here
    eval_domain: tuple[float, float]         # evaluation allowed here
    input_dim: int
    fem: FemContext | None = None

    def __post_init__(self):
        if self.parameter_domain[0] >= self.parameter_domain[1]:
            raise ConfigurationError("parameter domain must have p_lo < p_hi")
        if self.kind == "heat2d" and self.fem is None:
            raise ConfigurationError("heat2d family needs a FemContext")

    @property
    def lipschitz_bound(self) -> float:
        """Lipschitz constant of x -> f_mu(x), uniform over mu (1-D only)."""
        if self.kind == "tc1":
            return 2.0
        if self.kind == "tc2":
            return 0.5 / np.sqrt(0.1)
        raise ConfigurationError("no analytic Lipschitz bound for heat2d")


_DEFAULT_DOMAINS = {
    "tc1": ((0.0, 3.0), (0.0, 4.0), 1),
    "tc2": ((0.0, 1.0), (0.0, 1.0), 1),
    "heat2d": ((0.0, 10.0), (0.0, 12.0), 2),
}


def make_family(kind: str, fem: FemContext | None = None) -> FamilySpec:
    if kind not in _DEFAULT_DOMAINS:
        raise ConfigurationError(f"unknown family {kind!r}")
    pdom, edom, dim = _DEFAULT_DOMAINS[kind]
    if kind == "heat2d" and fem is None:
        fem = FemContext()
    return FamilySpec(kind=kind, parameter_domain=pdom, eval_domain=edom,
                      input_dim=dim, fem=fem)


def default_dist(family: FamilySpec) -> DistributionSpec:
    if family.kind == "tc1":
        return stats.uniform(0.0, 5.0)
    if family.kind == "tc2":
        return stats.uniform(0.0, 1.0)
    return stats.product_measure(Uniform(0.5, 2.0), Normal(0.0, 1.0))


def eval_family(family: FamilySpec, mu: float, batch: SampleBatch) -> np.ndarray:
    """Values f_mu(Z_k) for every batch point, length M."""
    lo, hi = family.eval_domain
    if not lo <= mu <= hi:
        raise DomainError(f"mu={mu} outside evaluation interval [{lo}, {hi}]")
    if batch.d != family.input_dim:
        raise ConfigurationError(
            f"batch dimension {batch.d} != family input_dim {family.input_dim}")
    if family.kind == "tc1":
        return testcase1_f(batch.points[:, 0] - mu)
    if family.kind == "tc2":
        return testcase2_f(mu, batch.points[:, 0])
    return eval_heat2d(family.fem, mu, batch.points, cache_tag=batch.tag)


def eval_matrix(family: FamilySpec, mus, batch: SampleBatch) -> stats.EvalMatrix:
    """Stack eval_family rows for a list of parameters."""
    rows = np.vstack([eval_family(family, float(mu), batch) for mu in mus])
    return stats.EvalMatrix(values=rows, batch_tag=batch.tag)


# ---------------------------------------------------------------------------
# trial sets and family-aware batch drawing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialSet:
    """Sorted candidate parameters; order fixes argmax tie-breaking."""

    parameters: np.ndarray
    seed: int

    def __post_init__(self):
        self.parameters.setflags(write=False)

    @property
    def size(self) -> int:
        return self.parameters.size


def draw_trial_set(family: FamilySpec, size: int, seed: int,
                   stream_id: int = 2) -> TrialSet:
    """Uniform iid parameters over the parameter domain, sorted ascending."""
    if size < 1:
        raise ConfigurationError("trial set needs at least one parameter")
    lo, hi = family.parameter_domain
    gen = stats.stream(seed, stream_id)
    mus = np.sort(stats.sample_matrix(gen, stats.uniform(lo, hi), size)[:, 0])
    return TrialSet(parameters=mus, seed=int(seed))


def heat2d_z2_floor(family: FamilySpec) -> float:
    """Worst-case admissibility bound for z2: with sin = -1 and mu at the
    top of the parameter domain, D stays above the ellipticity floor iff
    z2 > 2*(floor - 13 + p_hi). Rejection probability ~1e-9 for p_hi=10."""
    return 2.0 * (family.fem.ellipticity_floor - 13.0 + family.parameter_domain[1])


def draw_family_batch(family: FamilySpec, dist: DistributionSpec, m: int,
                      seed: int, stream_id: int) -> tuple[SampleBatch, int]:
    """Draw a batch, rejecting z2 values that could degenerate the
    diffusion tensor anywhere in the parameter domain (heat2d only).

    Rejected entries are redrawn from the continuation of the same
    stream, so the result is reproducible from (seed, stream_id, dist, m);
    the redraw count is returned for the run manifest.
    """
    if m < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {m}")
    gen = stats.stream(seed, stream_id)
    pts = stats.sample_matrix(gen, dist, m)
    redraws = 0
    if family.kind == "heat2d":
        z2_min = heat2d_z2_floor(family)
        comp = dist.components[1]
        bad = np.flatnonzero(pts[:, 1] <= z2_min)
        while bad.size:
            redraws += int(bad.size)
            fresh = stats.sample_matrix(gen, DistributionSpec((comp,)), bad.size)[:, 0]
            pts[bad, 1] = fresh
            bad = bad[fresh <= z2_min]
    return SampleBatch(points=pts, seed=int(seed), stream_id=int(stream_id),
                       dist=dist), redraws
