import numpy as np
import pytest

from pfmatch.bench import grid_mesh
from pfmatch.energy import (EnergyBreakdown, EnergyParams, MatchProblem,
                            area_term, data_term, eta, eta_prime, mumford_shah,
                            orthogonality_term, slant_term, total_energy,
                            triangle_metric, xi, xi_prime)
from pfmatch.laplacian import mesh_basis
from pfmatch.spectral import build_d_vector, build_weight_matrix


def fd_gradient(fun, x, h=1e-6):
    """Central-difference gradient of a scalar function of a flat array."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy(); xp.flat[i] += h
        xm = x.copy(); xm.flat[i] -= h
        g.flat[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-5):
    scale = max(np.abs(numeric).max(), 1.0)
    assert np.allclose(analytic, numeric, atol=rtol * scale)


@pytest.fixture
def tiny_problem(rng):
    mesh = grid_mesh(5)
    k, q = 6, 7
    basis = mesh_basis(mesh, k)
    G = rng.standard_normal((mesh.n_vertices, q))
    A = rng.standard_normal((k, q))
    return MatchProblem(A=A, Psi=basis.eigenvectors, mass=basis.mass, G=G,
                        mesh_full=mesh, area_part=0.4,
                        W=build_weight_matrix(k, 3),
                        d=build_d_vector(k, 3))


# -- saturation functions -----------------------------------------------------


def test_eta_values():
    assert np.isclose(eta(0.5), 0.5)
    assert eta(10.0) > 0.999
    assert eta(-10.0) < 0.001
    assert np.isclose(eta(1.0), 0.5 * (np.tanh(1.0) + 1.0))


def test_eta_monotone():
    v = np.linspace(-3, 4, 200)
    assert np.all(np.diff(eta(v)) > 0)
    assert np.all(eta_prime(v) > 0)


def test_eta_prime_fd(rng):
    v = rng.standard_normal(20)
    assert_grad_close(eta_prime(v) * 0.5 * 2.0,  # chain rule of tanh(2v-1)
                      fd_gradient(lambda x: float(np.sum(eta(x))), v))


def test_xi_peak_and_decay():
    assert np.isclose(xi(0.5), 1.0)  # peak where eta = 1/2
    assert xi(0.5) > xi(1.5) > xi(3.0)
    assert np.isclose(xi(0.5 + 1.0), xi(0.5 - 1.0))  # even around 0.5


def test_xi_prime_fd(rng):
    v = rng.standard_normal(20)
    for sigma in (0.3, 0.5, 1.0):
        num = fd_gradient(lambda x: float(np.sum(xi(x, sigma))), v)
        assert_grad_close(xi_prime(v, sigma), num)


# -- data term ----------------------------------------------------------------


def test_data_term_zero_residual(tiny_problem, rng):
    # With a square invertible A the residual can be driven to zero exactly;
    # the smoothed norm must stay finite there.
    p = tiny_problem
    k = p.A.shape[0]
    A_sq = rng.standard_normal((k, k)) + 3.0 * np.eye(k)
    G_sq = p.G[:, :k]
    v = rng.standard_normal(p.mesh_full.n_vertices)
    B = p.Psi.T @ ((p.mass * eta(v))[:, None] * G_sq)
    C = B @ np.linalg.inv(A_sq)
    value, grad_C, _ = data_term(C, A_sq, p.Psi, p.mass, G_sq, v)
    assert value < 1e-6
    assert np.all(np.isfinite(grad_C))


def test_data_term_grad_C(tiny_problem, rng):
    p = tiny_problem
    k = p.A.shape[0]
    C = rng.standard_normal((k, k))
    v = rng.standard_normal(p.mesh_full.n_vertices)
    _, grad_C, _ = data_term(C, p.A, p.Psi, p.mass, p.G, v)
    num = fd_gradient(
        lambda x: data_term(x.reshape(k, k), p.A, p.Psi, p.mass, p.G, v)[0],
        C.ravel()).reshape(k, k)
    assert_grad_close(grad_C, num)


def test_data_term_grad_v(tiny_problem, rng):
    p = tiny_problem
    k = p.A.shape[0]
    C = rng.standard_normal((k, k))
    v = rng.standard_normal(p.mesh_full.n_vertices)
    _, _, grad_v = data_term(C, p.A, p.Psi, p.mass, p.G, v)
    num = fd_gradient(lambda x: data_term(C, p.A, p.Psi, p.mass, p.G, x)[0], v)
    assert_grad_close(grad_v, num)


def test_data_term_column_sparsity_scaling(tiny_problem, rng):
    # The L2,1 norm is 1-homogeneous: doubling the residual doubles the value.
    p = tiny_problem
    k = p.A.shape[0]
    C = rng.standard_normal((k, k))
    v = np.full(p.mesh_full.n_vertices, -10.0)  # eta ~ 0, so B ~ 0
    val1 = data_term(C, p.A, p.Psi, p.mass, p.G, v)[0]
    val2 = data_term(2.0 * C, p.A, p.Psi, p.mass, p.G, v)[0]
    assert np.isclose(val2, 2.0 * val1, rtol=1e-6)


def test_data_term_single_column_norm(tiny_problem):
    # One residual column (3, 4, 0, ...): the L2,1 value is its plain
    # Euclidean norm 5.
    p = tiny_problem
    k = p.A.shape[0]
    v = np.full(p.mesh_full.n_vertices, -30.0)  # eta = 0, B = 0
    A1 = np.zeros((k, 1))
    A1[0, 0] = 1.0
    C = np.zeros((k, k))
    C[0, 0], C[1, 0] = 3.0, 4.0
    value, _, _ = data_term(C, A1, p.Psi, p.mass, p.G[:, :1] * 0.0, v)
    assert np.isclose(value, 5.0)


def test_data_term_column_permutation_invariant(tiny_problem, rng):
    p = tiny_problem
    k, q = p.A.shape
    C = rng.standard_normal((k, k))
    v = rng.standard_normal(p.mesh_full.n_vertices)
    perm = rng.permutation(q)
    v1 = data_term(C, p.A, p.Psi, p.mass, p.G, v)[0]
    v2 = data_term(C, p.A[:, perm], p.Psi, p.mass, p.G[:, perm], v)[0]
    assert np.isclose(v1, v2)


# -- area term ----------------------------------------------------------------


def test_area_term_exact(tiny_problem):
    p = tiny_problem
    n = p.mesh_full.n_vertices
    v_full = np.full(n, 10.0)  # eta = 1 everywhere: mask area = 1
    value, _ = area_term(v_full, 1.0, p.mass)
    assert value < 1e-12
    value_off, _ = area_term(v_full, 0.4, p.mass)
    assert np.isclose(value_off, 0.36, atol=1e-6)


def test_area_term_empty_part_limit(tiny_problem):
    p = tiny_problem
    v = np.full(p.mesh_full.n_vertices, -40.0)  # eta -> 0
    value, _ = area_term(v, 0.4, p.mass)
    assert np.isclose(value, 0.16)


def test_area_term_grad(tiny_problem, rng):
    p = tiny_problem
    v = rng.standard_normal(p.mesh_full.n_vertices)
    _, grad = area_term(v, 0.4, p.mass)
    num = fd_gradient(lambda x: area_term(x, 0.4, p.mass)[0], v)
    assert_grad_close(grad, num)


# -- Mumford-Shah term ----------------------------------------------------------


def test_triangle_metric_equilateral(equilateral):
    E, F, G = triangle_metric(equilateral)
    assert np.isclose(E[0], 1.0)
    assert np.isclose(F[0], 0.5)
    assert np.isclose(G[0], 1.0)


def test_mumford_shah_constant_mask(square_grid):
    for c in (-2.0, 0.5, 3.0):
        v = np.full(square_grid.n_vertices, c)
        value, grad = mumford_shah(v, square_grid)
        assert value == 0.0
        assert np.allclose(grad, 0.0)


def test_mumford_shah_step_approximates_cut_length():
    # Hard 0/1 step with a one-cell transition band around x = 0.5: the soft
    # boundary length should approximate the true cut length 1 within 25%,
    # and stay stable under refinement.
    for n in (10, 20, 40):
        mesh = grid_mesh(n)
        x = mesh.vertices[:, 0]
        h = 1.0 / n
        v = np.where(x < 0.5 - h / 2, 1.0, np.where(x > 0.5 + h / 2, 0.0, 0.5))
        value, _ = mumford_shah(v, mesh)
        assert abs(value - 1.0) < 0.25


def test_mumford_shah_grad(rng):
    mesh = grid_mesh(5)
    v = rng.standard_normal(mesh.n_vertices)
    _, grad = mumford_shah(v, mesh)
    num = fd_gradient(lambda x: mumford_shah(x, mesh)[0], v)
    assert_grad_close(grad, num, rtol=1e-4)


def test_mumford_shah_grad_other_sigma(rng):
    mesh = grid_mesh(4)
    v = rng.standard_normal(mesh.n_vertices) * 2.0
    _, grad = mumford_shah(v, mesh, sigma_xi=0.3)
    num = fd_gradient(lambda x: mumford_shah(x, mesh, sigma_xi=0.3)[0], v)
    assert_grad_close(grad, num, rtol=1e-4)


def test_mumford_shah_cache_matches(square_grid, rng):
    v = rng.standard_normal(square_grid.n_vertices)
    cached = mumford_shah(v, square_grid, _cache=triangle_metric(square_grid))
    plain = mumford_shah(v, square_grid)
    assert cached[0] == plain[0]
    assert np.array_equal(cached[1], plain[1])


# -- slant and orthogonality ----------------------------------------------------


def test_slant_term_diagonal_free():
    # With r = k the weight line is the main diagonal, so diagonal maps of
    # matching slope are not penalized.
    W = build_weight_matrix(6, 6, sigma=0.0)
    value, _ = slant_term(np.eye(6), W)
    assert value == 0.0
    value_off, _ = slant_term(np.ones((6, 6)), W)
    assert value_off > 0.0


def test_slant_term_grad(rng):
    k = 5
    C = rng.standard_normal((k, k))
    W = build_weight_matrix(k, 3)
    _, grad = slant_term(C, W)
    num = fd_gradient(lambda x: slant_term(x.reshape(k, k), W)[0],
                      C.ravel()).reshape(k, k)
    assert_grad_close(grad, num)


def test_orthogonality_value_identity():
    d_full = np.ones(4)
    value, _ = orthogonality_term(np.eye(4), d_full)
    assert value == 0.0
    # Rank-2 target: last two diagonal entries should be zero instead.
    d2 = build_d_vector(4, 2)
    value2, _ = orthogonality_term(np.eye(4), d2)
    assert np.isclose(value2, 2.0)


def test_orthogonality_semi_orthogonal_rectangular_structure(rng):
    # A map supported on the first r columns with orthonormal columns
    # achieves zero penalty for d = (1..1, 0..0).
    k, r = 6, 3
    M = rng.standard_normal((k, r))
    Q, _ = np.linalg.qr(M)
    C = np.zeros((k, k))
    C[:, :r] = Q[:, :r]
    value, _ = orthogonality_term(C, build_d_vector(k, r))
    assert value < 1e-20


def test_orthogonality_zero_map():
    d = build_d_vector(5, 3)
    value, _ = orthogonality_term(np.zeros((5, 5)), d)
    assert np.isclose(value, 3.0)


def test_orthogonality_left_rotation_invariant(rng):
    # The term depends on C only through C^T C.
    k = 5
    C = rng.standard_normal((k, k))
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    d = build_d_vector(k, 2)
    assert np.isclose(orthogonality_term(C, d)[0],
                      orthogonality_term(Q @ C, d)[0])


def test_orthogonality_grad(rng):
    k = 5
    C = rng.standard_normal((k, k))
    d = build_d_vector(k, 2)
    _, grad = orthogonality_term(C, d)
    num = fd_gradient(lambda x: orthogonality_term(x.reshape(k, k), d)[0],
                      C.ravel()).reshape(k, k)
    assert_grad_close(grad, num, rtol=1e-4)


# -- combined -------------------------------------------------------------------


def test_params_validation():
    with pytest.raises(ValueError):
        EnergyParams(mu1=-1.0)
    with pytest.raises(ValueError):
        EnergyParams(sigma_xi=0.0)


def test_breakdown_combination():
    params = EnergyParams(mu1=2.0, mu2=3.0, mu3=5.0, mu4_5=7.0)
    b = EnergyBreakdown.combine(1.0, 1.0, 1.0, 1.0, 1.0, params)
    assert b.total == 1.0 + 2.0 + 3.0 + 5.0 + 7.0
    assert b.as_row() == [1.0, 1.0, 1.0, 1.0, 1.0, 18.0]


def test_total_energy_grads(tiny_problem, rng):
    p = tiny_problem
    params = EnergyParams(mu1=1.0, mu2=10.0, mu3=1.0, mu4_5=5.0, k=p.A.shape[0])
    k = p.A.shape[0]
    C = rng.standard_normal((k, k)) * 0.5
    v = rng.standard_normal(p.mesh_full.n_vertices)

    breakdown, grad_C, grad_v = total_energy(C, v, p, params)
    assert breakdown.total > 0

    def f_C(x):
        return total_energy(x.reshape(k, k), v, p, params, with_grads=False).total

    def f_v(x):
        return total_energy(C, x, p, params, with_grads=False).total

    assert_grad_close(grad_C, fd_gradient(f_C, C.ravel()).reshape(k, k), rtol=1e-4)
    assert_grad_close(grad_v, fd_gradient(f_v, v), rtol=1e-4)


def test_total_energy_matches_terms(tiny_problem, rng):
    p = tiny_problem
    params = EnergyParams(k=p.A.shape[0])
    k = p.A.shape[0]
    C = rng.standard_normal((k, k))
    v = rng.standard_normal(p.mesh_full.n_vertices)
    b = total_energy(C, v, p, params, with_grads=False)
    assert np.isclose(b.data, data_term(C, p.A, p.Psi, p.mass, p.G, v)[0])
    assert np.isclose(b.area, area_term(v, p.area_part, p.mass)[0])
    assert np.isclose(b.mumford_shah, mumford_shah(v, p.mesh_full)[0])
    assert np.isclose(b.slant, slant_term(C, p.W)[0])
    assert np.isclose(b.orthogonality, orthogonality_term(C, p.d)[0])
