import numpy as np
import pytest
from scipy import linalg, sparse

from cornerheat import (SolverError, TriMesh, apply_dirichlet,
                        assemble_advection, assemble_load, assemble_mass,
                        assemble_stiffness, boundary_values, error_norm,
                        integrate, interpolate, lump_mass,
                        max_generalized_eigenvalue, solve_spd)
from cornerheat.fem import (TimeSeparableField, assemble_gradient_load,
                            export_coo, integrate_against_p1, quad_layout)

UNIT_SEGS = [((0, 0), (1, 0)), ((1, 0), (0, 1)), ((0, 1), (0, 0))]


@pytest.fixture(scope="module")
def unit_tri():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return TriMesh(v, [[0, 1, 2]], UNIT_SEGS)


def free_block(A, mesh):
    free = np.flatnonzero(~mesh.boundary_vertex)
    return A[free][:, free].tocsr()


def test_local_stiffness_matches_hand_integration(unit_tri):
    # grad phi = (-1,-1), (1,0), (0,1) on the unit right triangle, area 1/2
    S = assemble_stiffness(unit_tri).toarray()
    expect = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0],
                             [-1.0, 0.0, 1.0]])
    np.testing.assert_allclose(S, expect, atol=1e-15)


def test_local_mass_matches_hand_integration(unit_tri):
    # int phi_i phi_j = area/12 * (1 + delta_ij)
    M = assemble_mass(unit_tri).toarray()
    expect = (np.ones((3, 3)) + np.eye(3)) / 24.0
    np.testing.assert_allclose(M, expect, atol=1e-16)


def test_local_advection_matches_hand_integration(unit_tri):
    # row i of B is (b . grad phi_j) * area/3, independent of i
    b = np.array([2.0, -1.0])
    B = assemble_advection(unit_tri, b).toarray()
    bg = np.array([-1.0, 2.0, -1.0])    # b . grad phi_j
    expect = np.tile(bg / 6.0, (3, 1))
    np.testing.assert_allclose(B, expect, atol=1e-15)


def test_stiffness_kernel_and_symmetry(lshape2):
    S = assemble_stiffness(lshape2)
    ones = np.ones(lshape2.n_vertices)
    assert np.max(np.abs(S @ ones)) < 1e-13
    assert abs(S - S.T).max() < 1e-14


def test_mass_total_and_lumping(lshape2):
    M = assemble_mass(lshape2)
    ones = np.ones(lshape2.n_vertices)
    assert ones @ (M @ ones) == pytest.approx(3.0, rel=1e-13)
    diag = lump_mass(M)
    assert diag.sum() == pytest.approx(3.0, rel=1e-13)
    np.testing.assert_allclose(diag, np.asarray(M.sum(axis=1)).ravel())
    assert np.all(diag > 0.0)


def test_lump_mass_rejects_nonpositive_rows():
    bad = sparse.csr_matrix(np.array([[1.0, -2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        lump_mass(bad)


def test_advection_interior_block_is_skew(lshape2):
    # for constant b and functions vanishing on the boundary,
    # (b.grad u, v) + (b.grad v, u) = 0 exactly
    B = free_block(assemble_advection(lshape2, (0.7, 0.4)), lshape2)
    assert abs(B + B.T).max() < 1e-15


def test_interpolate_and_linear_exactness(lshape2):
    def u(p):
        return 2.0 * p[:, 0] - 3.0 * p[:, 1] + 1.0

    nodal = interpolate(lshape2, u)
    assert error_norm(lshape2, nodal, u, kind="l2") < 1e-13
    assert error_norm(lshape2, nodal, u, kind="linf_nodal") < 1e-14
    grad = lambda p: np.tile([2.0, -3.0], (len(p), 1))
    assert error_norm(lshape2, nodal, u, kind="h1_semi", u_grad=grad) < 1e-12


def test_error_norm_of_constant(lshape2):
    zero = np.zeros(lshape2.n_vertices)
    one = lambda p: np.ones(len(p))
    assert error_norm(lshape2, zero, one) == pytest.approx(np.sqrt(3.0), rel=1e-13)
    # nodal max without an exact field measures the field itself
    assert error_norm(lshape2, 2.5 * np.ones(lshape2.n_vertices),
                      kind="linf_nodal") == 2.5


def test_error_norm_region_restriction(lshape3):
    zero = np.zeros(lshape3.n_vertices)
    one = lambda p: np.ones(len(p))
    got = error_norm(lshape3, zero, one, region=lambda c: c[:, 0] > 0.0)
    # elements with centroid x > 0 tile exactly the upper-right unit square
    assert got == pytest.approx(1.0, rel=1e-13)


def test_error_norm_weighted_agrees_with_independent_quadrature(lshape2):
    def u(p):
        return np.cos(p[:, 0]) + p[:, 1] ** 2

    alpha = 1.0 / 3.0
    got = error_norm(lshape2, np.zeros(lshape2.n_vertices), u,
                     kind="weighted_l2", alpha=alpha)

    def wsq(p):
        r = np.linalg.norm(p, axis=1)
        return r ** (2.0 * alpha) * u(p) ** 2

    ref = integrate(lshape2, wsq, corner_levels=12)
    assert got**2 == pytest.approx(ref, rel=1e-6)


def test_error_norm_validation(lshape2):
    zero = np.zeros(lshape2.n_vertices)
    with pytest.raises(ValueError):
        error_norm(lshape2, zero, kind="weighted_l2")          # missing alpha
    with pytest.raises(ValueError):
        error_norm(lshape2, zero, kind="weighted_l2", alpha=1.2)
    with pytest.raises(ValueError):
        error_norm(lshape2, zero, kind="h1_semi")              # missing gradient
    with pytest.raises(ValueError):
        error_norm(lshape2, zero, kind="energy")


def test_load_vector_of_constant_equals_lumped_mass(lshape2):
    F = assemble_load(lshape2, lambda p: np.ones(len(p)))
    np.testing.assert_allclose(F, lump_mass(assemble_mass(lshape2)), atol=1e-14)


def test_load_vector_of_linear_equals_mass_action(lshape2):
    def f(p):
        return 0.3 * p[:, 0] - 1.1 * p[:, 1] + 0.5

    F = assemble_load(lshape2, f)
    M = assemble_mass(lshape2)
    np.testing.assert_allclose(F, M @ interpolate(lshape2, f), atol=1e-14)


def test_load_accepts_time_argument(lshape2):
    f = lambda t, p: t * np.ones(len(p))
    F = assemble_load(lshape2, f, t=2.0)
    np.testing.assert_allclose(F, 2.0 * lump_mass(assemble_mass(lshape2)),
                               atol=1e-13)


def test_gradient_load_matches_stiffness_action(lshape2):
    def u(p):
        return 0.4 * p[:, 0] + 0.9 * p[:, 1]

    q = lambda p: np.tile([0.4, 0.9], (len(p), 1))
    r = assemble_gradient_load(lshape2, q)
    S = assemble_stiffness(lshape2)
    np.testing.assert_allclose(r, S @ interpolate(lshape2, u), atol=1e-13)
    with pytest.raises(ValueError):
        assemble_gradient_load(lshape2, lambda p: np.ones(len(p)))


def test_integrate_polynomials(lshape2):
    assert integrate(lshape2, lambda p: np.ones(len(p))) == pytest.approx(3.0)
    # x over the square is 0; the removed quadrant carried int x = 1/2
    assert integrate(lshape2, lambda p: p[:, 0]) == pytest.approx(-0.5, abs=1e-13)
    u = np.ones(lshape2.n_vertices)
    got = integrate_against_p1(lshape2, lambda p: np.ones(len(p)), u)
    assert got == pytest.approx(3.0, rel=1e-13)


def test_nonfinite_field_is_reported(lshape2):
    with pytest.raises(ValueError, match="not finite"):
        integrate(lshape2, lambda p: np.full(len(p), np.nan))


def test_quad_layout_partitions_area(lshape2):
    for kwargs in ({}, {"corner_levels": 0},
                   {"refine_mask": np.ones(lshape2.n_triangles, dtype=bool)}):
        lay = quad_layout(lshape2, **kwargs)
        assert lay.weights.sum() == pytest.approx(3.0, rel=1e-13)
        assert len(lay.points) == len(lay.element) == len(lay.bary)


def test_boundary_values_forms(lshape2):
    fixed = lshape2.boundary_vertex
    out = boundary_values(lshape2, 2.0)
    assert np.all(out[fixed] == 2.0) and np.all(out[~fixed] == 0.0)
    assert np.all(boundary_values(lshape2, None) == 0.0)
    out = boundary_values(lshape2, lambda p: p[:, 0])
    np.testing.assert_allclose(out[fixed], lshape2.vertices[fixed, 0])
    out = boundary_values(lshape2, lambda t, p: t * p[:, 1], t=3.0)
    np.testing.assert_allclose(out[fixed], 3.0 * lshape2.vertices[fixed, 1])
    full = np.arange(lshape2.n_vertices, dtype=float)
    out = boundary_values(lshape2, full)
    np.testing.assert_array_equal(out[fixed], full[fixed])
    assert np.all(out[~fixed] == 0.0)


def test_dirichlet_solve_reproduces_linear_solution(lshape2):
    g = lambda p: 1.0 + 0.5 * p[:, 0] - 0.25 * p[:, 1]
    S = assemble_stiffness(lshape2)
    sys = apply_dirichlet(S, None, lshape2, g)
    assert len(sys.free) + len(sys.fixed) == lshape2.n_vertices
    assert len(np.intersect1d(sys.free, sys.fixed)) == 0
    u = sys.expand(solve_spd(sys.matrix, sys.rhs, tol=1e-13))
    np.testing.assert_allclose(u, interpolate(lshape2, g), atol=1e-11)


def test_cg_matches_dense_solve(lshape2, rng):
    S = free_block(assemble_stiffness(lshape2), lshape2)
    b = rng.standard_normal(S.shape[0])
    x_cg = solve_spd(S, b, tol=1e-13)
    x_dense = linalg.solve(S.toarray(), b, assume_a="pos")
    rel = np.linalg.norm(x_cg - x_dense) / np.linalg.norm(x_dense)
    assert rel < 1e-9


def test_cg_zero_rhs_and_info(lshape2):
    S = free_block(assemble_stiffness(lshape2), lshape2)
    x, info = solve_spd(S, np.zeros(S.shape[0]), return_info=True)
    assert np.all(x == 0.0) and info["iterations"] == 0
    b = np.ones(S.shape[0])
    x, info = solve_spd(S, b, tol=1e-12, return_info=True)
    assert info["residual"] <= 1e-12
    assert info["iterations"] > 0


def test_cg_budget_exhaustion_raises(lshape2):
    S = free_block(assemble_stiffness(lshape2), lshape2)
    with pytest.raises(SolverError) as err:
        solve_spd(S, np.ones(S.shape[0]), tol=1e-14, max_iter=2)
    assert err.value.residual is not None and err.value.residual > 0.0


def test_power_iteration_matches_dense_eigensolve(lshape2):
    S = free_block(assemble_stiffness(lshape2), lshape2)
    diag = lump_mass(assemble_mass(lshape2))[~lshape2.boundary_vertex]
    lam = max_generalized_eigenvalue(S, diag, tol=1e-8, max_iter=2000)
    ref = linalg.eigh(S.toarray(), np.diag(diag), eigvals_only=True)[-1]
    assert lam == pytest.approx(ref, rel=1e-6)
    lam2, v = max_generalized_eigenvalue(S, diag, tol=1e-8, max_iter=2000,
                                         return_vector=True)
    # the vector itself converges slowly (small spectral gap), but its
    # Rayleigh quotient locks onto the eigenvalue
    rayleigh = (v @ (S @ v)) / (v @ (diag * v))
    assert rayleigh == pytest.approx(ref, rel=1e-6)


def test_power_iteration_validation(lshape2):
    S = free_block(assemble_stiffness(lshape2), lshape2)
    with pytest.raises(SolverError):
        max_generalized_eigenvalue(S, -np.ones(S.shape[0]))
    with pytest.raises(SolverError):
        max_generalized_eigenvalue(S, np.ones(S.shape[0]), tol=1e-15, max_iter=2)


def test_time_separable_field(lshape2):
    pts = lshape2.vertices[:5]
    field = TimeSeparableField(terms=(
        (lambda t: t * t, lambda p: p[:, 0]),
        (np.cos, lambda p: np.ones(len(p))),
    ))
    got = field(0.3, pts)
    np.testing.assert_allclose(got, 0.09 * pts[:, 0] + np.cos(0.3), atol=1e-15)


def test_export_coo_round_trip(tmp_path, unit_tri):
    S = assemble_stiffness(unit_tri)
    path = tmp_path / "mat.txt"
    export_coo(S, path)
    lines = path.read_text().splitlines()
    n, m, nnz = (int(x) for x in lines[0].split())
    assert (n, m) == S.shape and nnz == S.nnz
    back = np.zeros((n, m))
    for line in lines[1:]:
        i, j, v = line.split()
        back[int(i), int(j)] += float(v)
    np.testing.assert_allclose(back, S.toarray(), atol=0)
