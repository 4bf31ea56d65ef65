import numpy as np
import pytest
import scipy.sparse as sp

from pfmatch.bench import grid_mesh, icosphere
from pfmatch.laplacian import (DENSE_FALLBACK_N, cotan_stiffness, eigensolve,
                               laplacian_pair, mass_matrix, mesh_basis)
from pfmatch.mesh import TriangleMesh


def test_stiffness_equilateral(equilateral):
    # All angles are 60 degrees, so each boundary-edge weight is cot(60)/2.
    W = cotan_stiffness(equilateral).toarray()
    off = 1.0 / (2.0 * np.sqrt(3.0))
    expected = np.full((3, 3), off) - np.diag([3 * off] * 3)
    assert np.allclose(W, expected)


def test_stiffness_right_isoceles_square():
    # Unit square split along the diagonal: the diagonal edge is flanked by
    # two right angles, cot(90) = 0, so its weight vanishes.
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    mesh = TriangleMesh(v, [[0, 1, 2], [0, 2, 3]])
    W = cotan_stiffness(mesh).toarray()
    assert np.isclose(W[0, 2], 0.0)
    assert np.isclose(W[0, 1], 0.5)
    assert np.isclose(W[1, 2], 0.5)


def test_stiffness_row_sums_zero(square_grid, sphere):
    for mesh in (square_grid, sphere):
        W = cotan_stiffness(mesh)
        assert np.allclose(np.asarray(W.sum(axis=1)).ravel(), 0.0, atol=1e-12)


def test_stiffness_symmetric(bumpy):
    W = cotan_stiffness(bumpy)
    assert abs(W - W.T).max() < 1e-12


def test_stiffness_negative_semidefinite(square_grid, rng):
    # Dirichlet energy -f'Wf must be nonnegative for arbitrary functions.
    W = cotan_stiffness(square_grid)
    for _ in range(20):
        f = rng.standard_normal(square_grid.n_vertices)
        assert -f @ (W @ f) >= -1e-10


def test_mass_matrix_trace(equilateral, square_grid, sphere):
    assert np.isclose(mass_matrix(equilateral).diagonal().sum(), np.sqrt(3) / 4)
    assert np.isclose(mass_matrix(square_grid).diagonal().sum(), 1.0)
    assert abs(mass_matrix(sphere).diagonal().sum() - 4 * np.pi) < 0.01 * 4 * np.pi


def test_first_eigenpair_constant(square_grid):
    basis = mesh_basis(square_grid, 5)
    assert basis.eigenvalues[0] < 1e-8
    # Constant eigenfunction, normalized to 1/sqrt(area) with area 1.
    assert np.allclose(basis.eigenvectors[:, 0], 1.0, atol=1e-6)


def test_eigenvalues_sorted_nonnegative(sphere):
    basis = mesh_basis(sphere, 20)
    assert np.all(np.diff(basis.eigenvalues) >= -1e-12)
    assert basis.eigenvalues[0] >= 0.0


def test_s_orthonormality(square_grid):
    basis = mesh_basis(square_grid, 12)
    gram = basis.eigenvectors.T @ (basis.mass[:, None] * basis.eigenvectors)
    assert np.allclose(gram, np.eye(12), atol=1e-9)


def test_eigen_residual(square_grid):
    pair = laplacian_pair(square_grid)
    basis = eigensolve(pair, 10)
    K = -pair.stiffness
    for i in range(10):
        r = K @ basis.eigenvectors[:, i] - \
            basis.eigenvalues[i] * basis.mass * basis.eigenvectors[:, i]
        assert np.linalg.norm(r) < 1e-8


def test_grid_neumann_spectrum(fine_grid):
    # Unit square with natural boundary conditions: pi^2 (p^2 + q^2).
    basis = mesh_basis(fine_grid, 8)
    analytic = np.pi ** 2 * np.array([0, 1, 1, 2, 4, 4, 5, 5])
    got = basis.eigenvalues
    assert got[0] < 1e-8
    assert np.all(np.abs(got[1:] - analytic[1:]) / analytic[1:] < 0.03)


def test_sphere_spectrum(sphere):
    # Unit sphere: l(l+1) with multiplicity 2l+1, here through l = 3.
    basis = mesh_basis(sphere, 16)
    analytic = np.repeat([0.0, 2.0, 6.0, 12.0], [1, 3, 5, 7])
    got = basis.eigenvalues
    assert got[0] < 1e-6
    assert np.all(np.abs(got[1:] - analytic[1:]) / analytic[1:] < 0.03)


def test_truncated_basis(sphere):
    basis = mesh_basis(sphere, 10)
    small = basis.truncated(4)
    assert small.k == 4
    assert np.array_equal(small.eigenvalues, basis.eigenvalues[:4])
    with pytest.raises(ValueError):
        small.truncated(6)


def test_sparse_dense_agreement(fine_grid, monkeypatch):
    pair = laplacian_pair(fine_grid)
    dense = eigensolve(pair, 10)
    monkeypatch.setattr("pfmatch.laplacian.DENSE_FALLBACK_N", 10)
    sparse = eigensolve(pair, 10)
    assert np.allclose(dense.eigenvalues, sparse.eigenvalues, atol=1e-8)
    for i in range(10):
        a, b = dense.eigenvectors[:, i], sparse.eigenvectors[:, i]
        if dense.eigenvalues[i] > 1e-8 and (
                i + 1 == 10 or dense.eigenvalues[i + 1] - dense.eigenvalues[i] > 1e-6):
            assert np.allclose(a, b, atol=1e-6)


def test_eigensolve_determinism(sphere):
    a = mesh_basis(sphere, 15)
    b = mesh_basis(sphere, 15)
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
    assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()


def test_subdivision_stability():
    coarse = icosphere(2)
    fine = coarse.subdivided()
    fine = TriangleMesh(fine.vertices /
                        np.linalg.norm(fine.vertices, axis=1, keepdims=True),
                        fine.triangles)
    lc = mesh_basis(coarse, 10).eigenvalues
    lf = mesh_basis(fine, 10).eigenvalues
    assert np.all(np.abs(lc[1:] - lf[1:]) / lf[1:] < 0.05)


def test_bad_k(square_grid):
    pair = laplacian_pair(square_grid)
    with pytest.raises(ValueError):
        eigensolve(pair, 0)
    with pytest.raises(ValueError):
        eigensolve(pair, square_grid.n_vertices)


def test_nonpositive_mass_rejected(square_grid):
    pair = laplacian_pair(square_grid)
    bad_mass = sp.diags(np.zeros(square_grid.n_vertices))
    from pfmatch.laplacian import LaplacianPair
    with pytest.raises(ValueError):
        eigensolve(LaplacianPair(pair.stiffness, bad_mass), 3)
