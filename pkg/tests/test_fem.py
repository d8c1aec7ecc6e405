import numpy as np
import pytest

from rbcv import fem
from rbcv.errors import (ConfigurationError, DegenerateCoefficientError,
                         NumericalError)


@pytest.fixture(scope="module")
def ctx16():
    return fem.FemContext(16)


# -- mesh --------------------------------------------------------------------

def test_mesh_counts_n2():
    mesh = fem.build_mesh(2)
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert len(mesh.boundary_vertices) == 8


def test_mesh_partitions_square():
    ctx = fem.FemContext(2)
    assert ctx.area.sum() == pytest.approx(4.0)
    assert np.all(ctx.area > 0)


def test_mesh_conforming_edges():
    # every interior edge is shared by exactly two triangles
    mesh = fem.build_mesh(4)
    from collections import Counter
    edges = Counter()
    for tri in mesh.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edges[tuple(sorted((tri[a], tri[b])))] += 1
    assert set(edges.values()) <= {1, 2}


def test_qoi_triangle_near_target():
    mesh = fem.build_mesh(4)
    h = 0.5
    tri = mesh.triangles[mesh.qoi_triangle]
    centroid = mesh.vertices[tri].mean(axis=0)
    assert np.linalg.norm(centroid - [0.5, 0.5]) <= h * np.sqrt(2.0)


def test_mesh_min_size():
    with pytest.raises(ConfigurationError):
        fem.build_mesh(1)


# -- diffusion tensor ----------------------------------------------------

def test_tensor_values():
    assert fem.diffusion_tensor(0.0, (1.3, 0.0), 0.2, 0.9) == (13.0, 13.0)
    d11, _ = fem.diffusion_tensor(9.0, (1.0, 0.0), 0.25, 0.1)
    assert d11 == pytest.approx(22.0)


def test_tensor_degenerate():
    # sin(2 pi x) = -1 at x = 0.75: D11 = 13 - 10 - 3 = 0
    with pytest.raises(DegenerateCoefficientError):
        fem.diffusion_tensor(10.0, (1.0, -6.0), 0.75, 0.5)
    with pytest.raises(ConfigurationError):
        fem.diffusion_tensor(1.0, (0.0, 0.0), 0.5, 0.5)


def test_tensor_degenerate_in_assembly(ctx16):
    # centroid quadrature never hits sin = -1 exactly; push z2 past the
    # worst centroid value instead
    with pytest.raises(DegenerateCoefficientError) as err:
        ctx16.stiffness_full(10.0, (1.0, -7.0))
    assert err.value.mu == 10.0


# -- assembly ------------------------------------------------------------

def _sparse_absmax(m):
    return np.abs(m.data).max() if m.nnz else 0.0


def test_constant_diffusion_scales_laplace(ctx16):
    # z2 = -24 makes D = 1 (pure Laplace); D = 13 I must be exactly 13x
    k13 = ctx16.stiffness_full(0.0, (1.0, 0.0))
    k1 = ctx16.stiffness_full(0.0, (1.0, -24.0))
    scale = np.abs(k13.data).max()
    assert _sparse_absmax(k13 - 13.0 * k1) <= 1e-10 * scale


def test_stiffness_symmetric_and_zero_row_sums(ctx16):
    k = ctx16.stiffness_full(7.3, (1.7, 0.4))
    assert _sparse_absmax(k - k.T) == 0.0
    rowsums = np.asarray(k.sum(axis=1)).ravel()
    assert np.abs(rowsums).max() <= 1e-10 * np.abs(k.data).max()


def test_solve_zero_rhs(ctx16):
    sysm = fem.assemble(ctx16, 2.0, (1.0, 0.5))
    zero = fem.SparseSystem(matrix=sysm.matrix, rhs=np.zeros_like(sysm.rhs))
    u = fem.solve_dirichlet(ctx16, zero)
    assert np.array_equal(u.values, np.zeros(ctx16.mesh.n_vertices))


def test_solution_swap_symmetry(ctx16):
    # D11(x,y) and D22 swap roles under (x,y) -> (y,x); r is symmetric
    n = ctx16.n_per_side
    for mu, z in [(0.0, (1.0, 0.0)), (9.0, (1.0, 0.0)), (5.0, (1.7, -0.6)),
                  (10.0, (0.6, 1.2))]:
        u = fem.solve_dirichlet(ctx16, fem.assemble(ctx16, mu, z))
        grid = u.values.reshape(n + 1, n + 1)
        assert np.abs(grid - grid.T).max() <= 1e-8


def test_solution_positive(ctx16):
    for mu, z in [(0.0, (1.0, 0.0)), (10.0, (0.51, -1.5)), (4.0, (1.9, 2.0))]:
        u = fem.solve_dirichlet(ctx16, fem.assemble(ctx16, mu, z))
        assert u.values.min() >= -1e-8


def test_boundary_values_zero(ctx16):
    u = fem.solve_dirichlet(ctx16, fem.assemble(ctx16, 3.0, (1.0, 0.0)))
    assert np.all(u.values[ctx16.mesh.boundary_vertices] == 0.0)


def test_energy_matches_gradient_sum(ctx16):
    # independent energy: per-triangle P1 gradients of the solved field
    mu, z = 0.0, (1.0, 0.0)   # D = 13 I
    u = fem.solve_dirichlet(ctx16, fem.assemble(ctx16, mu, z))
    k = ctx16.stiffness_full(mu, z)
    quad_energy = float(u.values @ (k @ u.values))
    v = ctx16.mesh.vertices
    grad_energy = 0.0
    for tri, area in zip(ctx16.mesh.triangles, ctx16.area):
        p = v[tri]
        det = 2.0 * area
        b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]]) / det
        c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]]) / det
        gx = float(b @ u.values[tri])
        gy = float(c @ u.values[tri])
        grad_energy += 13.0 * area * (gx * gx + gy * gy)
    assert quad_energy == pytest.approx(grad_energy, rel=1e-10)


def test_qoi_average_examples():
    mesh = fem.build_mesh(2)
    const = fem.NodalField(values=np.full(mesh.n_vertices, 2.5))
    assert fem.qoi_average(const, mesh) == pytest.approx(2.5)
    vals = np.zeros(mesh.n_vertices)
    vals[mesh.triangles[mesh.qoi_triangle]] = [0.0, 0.0, 3.0]
    assert fem.qoi_average(fem.NodalField(values=vals), mesh) == pytest.approx(1.0)
    assert fem.qoi_average(fem.NodalField(values=np.zeros(mesh.n_vertices)),
                           mesh) == 0.0


def test_refinement_differences_shrink():
    qs = [fem.qoi_value(fem.FemContext(n), 9.0, (1.0, 0.0)) for n in (8, 16, 32)]
    assert abs(qs[0] - qs[1]) > abs(qs[1] - qs[2])


def test_fast_path_matches_sparse_path(ctx16):
    for mu, z in [(9.0, (1.0, 0.0)), (2.5, (0.8, -0.9))]:
        fast = fem.qoi_value(ctx16, mu, z)
        slow = fem.qoi_average(
            fem.solve_dirichlet(ctx16, fem.assemble(ctx16, mu, z)), ctx16.mesh)
        assert fast == pytest.approx(slow, rel=1e-12, abs=1e-15)


def test_mesh_csv_dump():
    vcsv, tcsv = fem.mesh_to_csv(fem.build_mesh(2))
    assert vcsv.splitlines()[0] == "index,x,y"
    assert len(vcsv.splitlines()) == 10
    assert tcsv.splitlines()[0] == "index,v0,v1,v2,is_qoi"
    assert sum(line.endswith(",1") for line in tcsv.splitlines()[1:]) == 1
