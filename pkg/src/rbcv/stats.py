"""Random sampling and empirical moment machinery.

Every statistic downstream (greedy selection, control-variate fitting,
concentration probes) reduces to the empirical mean / covariance /
variance defined here, so the conventions are pinned once:

* covariances use the biased 1/M normalisation,
* reductions run in a fixed (numpy pairwise) order per row, so results
  do not depend on thread count or scheduling,
* a batch is reproducible bit-for-bit from ``(seed, stream_id, dist, m)``.

The generator is counter-based (Philox keyed by ``(seed, stream_id)``),
and normal variates come from the inverse CDF applied to grid-centred
uniforms, so no rejection loop can desynchronise the counter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, DomainError, NumericalError

_U64_MAX = 2**64
_GRID = 2.0**-53


# ---------------------------------------------------------------------------
# distribution specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
            raise ConfigurationError(f"uniform requires a < b, got [{self.a}, {self.b}]")


@dataclass(frozen=True)
class Normal:
    mean: float
    stddev: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.stddev) and self.stddev > 0):
            raise ConfigurationError(f"normal requires stddev > 0, got {self.stddev}")


Component = Union[Uniform, Normal]


@dataclass(frozen=True)
class DistributionSpec:
    """Product measure of 1-D uniform / normal components."""

    components: tuple[Component, ...]

    def __post_init__(self):
        if len(self.components) < 1:
            raise ConfigurationError("distribution needs at least one component")

    @property
    def d(self) -> int:
        return len(self.components)

    def to_dict(self) -> list[dict]:
        out = []
        for c in self.components:
            if isinstance(c, Uniform):
                out.append({"kind": "uniform", "a": c.a, "b": c.b})
            else:
                out.append({"kind": "normal", "mean": c.mean, "stddev": c.stddev})
        return out

    @staticmethod
    def from_dict(items: list[dict]) -> "DistributionSpec":
        comps = []
        for item in items:
            if item["kind"] == "uniform":
                comps.append(Uniform(float(item["a"]), float(item["b"])))
            elif item["kind"] == "normal":
                comps.append(Normal(float(item["mean"]), float(item["stddev"])))
            else:
                raise ConfigurationError(f"unknown component kind {item['kind']!r}")
        return DistributionSpec(tuple(comps))


def uniform(a: float, b: float) -> DistributionSpec:
    return DistributionSpec((Uniform(a, b),))


def normal(mean: float, stddev: float) -> DistributionSpec:
    return DistributionSpec((Normal(mean, stddev),))


def product_measure(*components: Component) -> DistributionSpec:
    return DistributionSpec(tuple(components))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _check_u64(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value < _U64_MAX:
        raise ConfigurationError(f"{name} must fit in an unsigned 64-bit integer")
    return value


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream_id).

    Distinct keys give statistically independent streams; the same key
    always replays the same stream.
    """
    key = np.array([_check_u64("seed", seed), _check_u64("stream_id", stream_id)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _grid_uniform(gen: np.random.Generator, shape) -> np.ndarray:
    # Half-integer grid on (0, 1): never hits 0 or 1, so the inverse
    # normal CDF below stays finite.
    raw = gen.integers(0, 1 << 53, size=shape)
    return (raw.astype(np.float64) + 0.5) * _GRID


def transform_component(u: np.ndarray, component: Component) -> np.ndarray:
    if isinstance(component, Uniform):
        return component.a + (component.b - component.a) * u
    return component.mean + component.stddev * ndtri(u)


def sample_matrix(gen: np.random.Generator, dist: DistributionSpec, m: int) -> np.ndarray:
    """Draw an m x d matrix from the product measure, consuming exactly
    one 53-bit word per entry in row-major order."""
    u = _grid_uniform(gen, (m, dist.d))
    cols = [transform_component(u[:, j], c) for j, c in enumerate(dist.components)]
    return np.column_stack(cols)


@dataclass(frozen=True)
class SampleBatch:
    """M x d matrix of iid draws with full seed provenance."""

    points: np.ndarray
    seed: int
    stream_id: int
    dist: DistributionSpec

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ConfigurationError("batch needs at least one row")
        self.points.setflags(write=False)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def tag(self) -> tuple:
        """Identifier used to key per-batch caches."""
        return (self.seed, self.stream_id, self.m)


def draw_batch(dist: DistributionSpec, m: int, seed: int, stream_id: int = 0) -> SampleBatch:
    if m < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {m}")
    gen = stream(seed, stream_id)
    pts = sample_matrix(gen, dist, m)
    return SampleBatch(points=pts, seed=int(seed), stream_id=int(stream_id), dist=dist)


# ---------------------------------------------------------------------------
# empirical moments (1/M convention throughout)
# ---------------------------------------------------------------------------

def _as_row(row) -> np.ndarray:
    arr = np.asarray(row, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError("expected a 1-D value vector")
    if arr.size == 0:
        raise DomainError("empty value vector")
    return arr


def empirical_mean(row) -> float:
    """Arithmetic mean, fixed summation order."""
    return float(np.mean(_as_row(row)))


def empirical_cov(row_a, row_b) -> float:
    """Biased (1/M) covariance, computed in centred two-pass form.

    Identical to E(fg) - E(f)E(g) in exact arithmetic but much better
    conditioned for large means; exactly symmetric in its arguments.
    """
    a = _as_row(row_a)
    b = _as_row(row_b)
    if a.size != b.size:
        raise DomainError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean((a - np.mean(a)) * (b - np.mean(b))))


def empirical_var(row) -> float:
    """Variance = cov(row, row), clamped to 0 inside the roundoff band.

    Values below -1e-12 * max(1, E(f^2)) indicate broken inputs and
    raise instead of clamping.
    """
    a = _as_row(row)
    v = empirical_cov(a, a)
    tol = 1e-12 * max(1.0, float(np.mean(a * a)))
    if not np.isfinite(v) or v < -tol:
        raise NumericalError(f"variance {v} outside clamp tolerance -{tol}")
    return max(v, 0.0)


@dataclass(frozen=True)
class EvalMatrix:
    """Cached function values on one batch: row p = function p at every
    batch point."""

    values: np.ndarray
    batch_tag: tuple

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DomainError("EvalMatrix expects a P x M matrix")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("EvalMatrix entries must be finite")
        self.values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def gram_matrix(evals: EvalMatrix) -> np.ndarray:
    """P x P matrix of pairwise 1/M covariances between rows.

    The upper triangle is computed and mirrored, so the result is
    exactly symmetric.
    """
    x = evals.values if isinstance(evals, EvalMatrix) else np.asarray(evals, float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DomainError("need at least one row")
    xc = x - x.mean(axis=1, keepdims=True)
    g = (xc @ xc.T) / x.shape[1]
    return np.triu(g) + np.triu(g, 1).T


# Vectorised forms used by the greedy/online engines. Same conventions
# as the scalar operations above.

def row_means(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=1)


def center_rows(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=1, keepdims=True)


def row_variances(x: np.ndarray) -> np.ndarray:
    xc = center_rows(x)
    return np.maximum(np.mean(xc * xc, axis=1), 0.0)


def cross_covariance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(P, M) x (Q, M) -> (P, Q) matrix of pairwise covariances."""
    if x.shape[-1] != y.shape[-1]:
        raise DomainError("batch size mismatch between row blocks")
    return (center_rows(x) @ center_rows(y).T) / x.shape[-1]


def cov_vector(row: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Covariance of one row against each row of a block: (n,) vector."""
    if block.size == 0:
        return np.zeros(0)
    rc = row - row.mean()
    bc = center_rows(block)
    return (bc @ rc) / row.size
