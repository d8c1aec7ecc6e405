"""P1 finite elements on a structured triangulation of (0, 2)^2.

Supplies the quantity of interest for the 2-D diffusion test case: for
a parameter ``mu`` and a sample ``z = (z1, z2)``, solve

    -div(D(mu, z) grad u) = r  in (0,2)^2,   u = 0 on the boundary,

with the diagonal tensor D11 = 13 + mu*sin(2*pi*x/z1) + 0.5*z2 (and the
same in y for D22) and source r(x, y) = exp(-(x-1)^2 - (y-1)^2), then
average u over one fixed triangle near (0.5, 0.5).

Quadrature is the one-point centroid rule for both D and r, which keeps
the stiffness matrix exactly symmetric and is exact for constant D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DegenerateCoefficientError, NumericalError

SIDE = 2.0


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray          # (V, 2)
    triangles: np.ndarray         # (T, 3) vertex indices, CCW
    boundary_vertices: np.ndarray  # indices on the boundary of (0,2)^2
    qoi_triangle: int             # triangle whose mean value is the QoI

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_vertices):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True)
class NodalField:
    """Vertex values of a P1 function, zero on every boundary vertex."""

    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)


@dataclass(frozen=True)
class SparseSystem:
    """Dirichlet-reduced stiffness system over interior vertices."""

    matrix: sp.csr_matrix
    rhs: np.ndarray


def build_mesh(n_per_side: int) -> TriMesh:
    """Uniform grid of (n+1)^2 vertices, each cell split along its
    SW-NE diagonal into a lower and an upper triangle.

    The QoI triangle is the lower triangle of the cell whose centroid is
    nearest to (0.5, 0.5).
    """
    if n_per_side < 2:
        raise ConfigurationError("n_per_side must be >= 2")
    n = int(n_per_side)
    h = SIDE / n
    xs = np.linspace(0.0, SIDE, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")  # vertex (i, j) -> index i*(n+1)+j
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    centroids = []
    for i in range(n):
        for j in range(n):
            sw, se = vid(i, j), vid(i + 1, j)
            ne, nw = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((sw, se, ne))   # lower
            tris.append((sw, ne, nw))   # upper
            centroids.append(((i + 0.5) * h, (j + 0.5) * h))
    triangles = np.array(tris, dtype=np.int64)

    centroids = np.array(centroids)
    cell = int(np.argmin(np.sum((centroids - np.array([0.5, 0.5])) ** 2, axis=1)))
    qoi_triangle = 2 * cell  # lower triangle of the chosen cell

    ii, jj = np.divmod(np.arange((n + 1) ** 2), n + 1)
    on_bnd = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    boundary = np.flatnonzero(on_bnd)

    return TriMesh(vertices=vertices, triangles=triangles,
                   boundary_vertices=boundary, qoi_triangle=qoi_triangle)


def source_term(x, y):
    return np.exp(-((x - 1.0) ** 2) - ((y - 1.0) ** 2))


def diffusion_tensor(mu: float, z: tuple[float, float], x: float, y: float,
                     ellipticity_floor: float = 1e-6) -> tuple[float, float]:
    """Diagonal entries (D11, D22) at one point; off-diagonals are zero."""
    z1, z2 = z
    if z1 == 0:
        raise ConfigurationError("z1 must be nonzero")
    d11 = 13.0 + mu * np.sin(2.0 * np.pi * x / z1) + 0.5 * z2
    d22 = 13.0 + mu * np.sin(2.0 * np.pi * y / z1) + 0.5 * z2
    lo = min(d11, d22)
    if lo <= ellipticity_floor:
        raise DegenerateCoefficientError(mu, z, (float(x), float(y)), float(lo))
    return float(d11), float(d22)


class FemContext:
    """Mesh plus per-triangle assembly workspace, reused across solves.

    The load vector does not depend on (mu, z) and is assembled once;
    the stiffness data is a weighted sum of two precomputed per-triangle
    blocks with weights D11, D22 at the centroids.
    """

    def __init__(self, n_per_side: int = 16, ellipticity_floor: float = 1e-6):
        if ellipticity_floor <= 0:
            raise ConfigurationError("ellipticity_floor must be > 0")
        self.mesh = build_mesh(n_per_side)
        self.n_per_side = int(n_per_side)
        self.ellipticity_floor = float(ellipticity_floor)

        v = self.mesh.vertices
        t = self.mesh.triangles
        p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        det = ((p2[:, 0] - p1[:, 0]) * (p3[:, 1] - p1[:, 1])
               - (p3[:, 0] - p1[:, 0]) * (p2[:, 1] - p1[:, 1]))
        self.area = 0.5 * det
        if np.any(self.area <= 0):
            raise NumericalError("mesh contains non-positively-oriented triangles")
        self.centroid = (p1 + p2 + p3) / 3.0

        # P1 gradient components: grad(phi_k) = (b_k, c_k) on each triangle.
        b = np.stack([p2[:, 1] - p3[:, 1], p3[:, 1] - p1[:, 1], p1[:, 1] - p2[:, 1]], axis=1)
        c = np.stack([p3[:, 0] - p2[:, 0], p1[:, 0] - p3[:, 0], p2[:, 0] - p1[:, 0]], axis=1)
        b /= det[:, None]
        c /= det[:, None]

        # area * b_i b_j and area * c_i c_j blocks, flattened per triangle.
        self._gx = (self.area[:, None, None] * b[:, :, None] * b[:, None, :]).reshape(-1, 9)
        self._gy = (self.area[:, None, None] * c[:, :, None] * c[:, None, :]).reshape(-1, 9)
        rows = np.repeat(t, 3, axis=1)            # i index per local pair
        cols = np.tile(t, (1, 3))                 # j index per local pair
        self._rows = rows.reshape(-1, 9)
        self._cols = cols.reshape(-1, 9)

        nv = self.mesh.n_vertices
        interior_mask = np.ones(nv, dtype=bool)
        interior_mask[self.mesh.boundary_vertices] = False
        self.interior = np.flatnonzero(interior_mask)

        # fast path: flattened interior-pair indices for dense assembly
        renum = np.full(nv, -1, dtype=np.int64)
        renum[self.interior] = np.arange(self.interior.size)
        ri = renum[self._rows.ravel()]
        ci = renum[self._cols.ravel()]
        self._pair_keep = (ri >= 0) & (ci >= 0)
        ni = self.interior.size
        self._pair_flat = (ri[self._pair_keep] * ni + ci[self._pair_keep])
        self._ni = ni

        # Load vector via centroid rule: each vertex of T gets |T| r(c_T)/3.
        load = np.zeros(nv)
        contrib = self.area * source_term(self.centroid[:, 0], self.centroid[:, 1]) / 3.0
        for k in range(3):
            np.add.at(load, t[:, k], contrib)
        self.load_full = load
        self._qoi_cache: dict[tuple, np.ndarray] = {}

    # -- assembly -----------------------------------------------------

    def diffusion_at_centroids(self, mu: float, z) -> tuple[np.ndarray, np.ndarray]:
        z1, z2 = float(z[0]), float(z[1])
        if z1 == 0:
            raise ConfigurationError("z1 must be nonzero")
        cx, cy = self.centroid[:, 0], self.centroid[:, 1]
        d11 = 13.0 + mu * np.sin(2.0 * np.pi * cx / z1) + 0.5 * z2
        d22 = 13.0 + mu * np.sin(2.0 * np.pi * cy / z1) + 0.5 * z2
        worst = min(d11.min(), d22.min())
        if worst <= self.ellipticity_floor:
            k = int(np.argmin(np.minimum(d11, d22)))
            raise DegenerateCoefficientError(mu, (z1, z2),
                                             tuple(self.centroid[k]), float(worst))
        return d11, d22

    def stiffness_full(self, mu: float, z) -> sp.csr_matrix:
        """Pre-elimination stiffness over all vertices."""
        d11, d22 = self.diffusion_at_centroids(mu, z)
        data = d11[:, None] * self._gx + d22[:, None] * self._gy
        k = sp.coo_matrix((data.ravel(), (self._rows.ravel(), self._cols.ravel())),
                          shape=(self.mesh.n_vertices, self.mesh.n_vertices))
        return k.tocsr()


def assemble(ctx: FemContext, mu: float, z) -> SparseSystem:
    """Stiffness and load reduced to interior vertices (homogeneous
    Dirichlet rows/columns eliminated)."""
    k_full = ctx.stiffness_full(mu, z)
    idx = ctx.interior
    return SparseSystem(matrix=k_full[idx][:, idx].tocsr(), rhs=ctx.load_full[idx])


def solve_dirichlet(ctx: FemContext, system: SparseSystem) -> NodalField:
    u_int = spla.spsolve(system.matrix, system.rhs)
    res = np.linalg.norm(system.matrix @ u_int - system.rhs)
    rhs_norm = np.linalg.norm(system.rhs)
    if not np.all(np.isfinite(u_int)) or res > 1e-10 * max(rhs_norm, 1e-300):
        raise NumericalError(f"direct solve residual {res:.3e} exceeds contract")
    full = np.zeros(ctx.mesh.n_vertices)
    full[ctx.interior] = u_int
    return NodalField(values=full)


def qoi_average(field: NodalField, mesh: TriMesh) -> float:
    """Mean of u over the QoI triangle; exact for P1 integrands (average
    of the three vertex values)."""
    tri = mesh.triangles[mesh.qoi_triangle]
    return float(np.mean(field.values[tri]))


def _solve_interior_dense(ctx: FemContext, mu: float, z) -> np.ndarray:
    """Dense assembly + Cholesky for small systems: same operator and
    contracts as assemble/solve_dirichlet, much lower per-call overhead."""
    import scipy.linalg as sla
    d11, d22 = ctx.diffusion_at_centroids(mu, z)
    data = (d11[:, None] * ctx._gx + d22[:, None] * ctx._gy).ravel()[ctx._pair_keep]
    ni = ctx._ni
    k = np.bincount(ctx._pair_flat, weights=data, minlength=ni * ni).reshape(ni, ni)
    rhs = ctx.load_full[ctx.interior]
    try:
        u = sla.cho_solve(sla.cho_factor(k, lower=True), rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by floor
        raise NumericalError(f"stiffness not SPD for mu={mu}, z={z}") from exc
    res = np.linalg.norm(k @ u - rhs)
    if not np.all(np.isfinite(u)) or res > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
        raise NumericalError(f"dense solve residual {res:.3e} exceeds contract")
    return u


def qoi_value(ctx: FemContext, mu: float, z) -> float:
    if ctx._ni <= 4000:
        full = np.zeros(ctx.mesh.n_vertices)
        full[ctx.interior] = _solve_interior_dense(ctx, mu, z)
        return qoi_average(NodalField(values=full), ctx.mesh)
    return qoi_average(solve_dirichlet(ctx, assemble(ctx, mu, z)), ctx.mesh)


def eval_heat2d(ctx: FemContext, mu: float, points: np.ndarray,
                cache_tag: tuple | None = None) -> np.ndarray:
    """QoI for one mu at every row z of `points`, cached per (mu, batch)."""
    key = None
    if cache_tag is not None:
        key = (float(mu), cache_tag)
        hit = ctx._qoi_cache.get(key)
        if hit is not None:
            return hit
    out = np.empty(points.shape[0])
    for k in range(points.shape[0]):
        out[k] = qoi_value(ctx, mu, points[k])
    out.setflags(write=False)
    if key is not None:
        if len(ctx._qoi_cache) >= 256:
            ctx._qoi_cache.pop(next(iter(ctx._qoi_cache)))
        ctx._qoi_cache[key] = out
    return out


def mesh_to_csv(mesh: TriMesh) -> tuple[str, str]:
    """CSV dumps (vertices, triangles) for inspection."""
    vlines = ["index,x,y"]
    for i, (x, y) in enumerate(mesh.vertices):
        vlines.append(f"{i},{x:.17g},{y:.17g}")
    tlines = ["index,v0,v1,v2,is_qoi"]
    for i, (a, b, c) in enumerate(mesh.triangles):
        tlines.append(f"{i},{a},{b},{c},{int(i == mesh.qoi_triangle)}")
    return "\n".join(vlines) + "\n", "\n".join(tlines) + "\n"
