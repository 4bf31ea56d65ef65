"""Objective terms of the partial-correspondence energy and their gradients.

Every gradient here is verified against central finite differences in the
test suite; that suite is the authority on the sign and scaling conventions
below.  The L2,1 data norm is smoothed per column as sqrt(|col|^2 + eps^2) -
eps so the gradient exists at zero residual columns.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SIGMA_XI = 0.5


@dataclass(frozen=True)
class EnergyParams:
    """Weights and spreads of the objective."""
    mu1: float = 1.0       # area preservation
    mu2: float = 1e2       # Mumford-Shah boundary length
    mu3: float = 1.0       # slanted-diagonal penalty
    mu4_5: float = 1e3     # merged semi-orthogonality penalty
    sigma_w: float = 0.03  # spread of the slant weight matrix
    sigma_xi: float = DEFAULT_SIGMA_XI
    k: int = 100

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.mu3, self.mu4_5) < 0:
            raise ValueError("energy weights must be nonnegative")
        if self.sigma_xi <= 0:
            raise ValueError("sigma_xi must be positive")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Raw term values plus the weighted total."""
    data: float
    area: float
    mumford_shah: float
    slant: float
    orthogonality: float
    total: float

    @staticmethod
    def combine(data, area, ms, slant, orth, params):
        total = (data + params.mu1 * area + params.mu2 * ms
                 + params.mu3 * slant + params.mu4_5 * orth)
        return EnergyBreakdown(data, area, ms, slant, orth, total)

    def as_row(self):
        return [self.data, self.area, self.mumford_shah, self.slant,
                self.orthogonality, self.total]


@dataclass
class MatchProblem:
    """Fixed inputs of one matching job.

    A:    k x q Fourier coefficients of the partial-shape descriptors
    Psi:  n x k full-shape eigenvectors
    mass: n vertex areas of the full shape
    G:    n x q full-shape descriptors
    W, d: slant weights and rank indicator for the regularizers
    """
    A: np.ndarray
    Psi: np.ndarray
    mass: np.ndarray
    G: np.ndarray
    mesh_full: object
    area_part: float
    W: np.ndarray
    d: np.ndarray
    F: np.ndarray = None  # q-column descriptors of the partial shape
    _ms_cache: tuple = field(default=None, repr=False)


# -- saturation functions -----------------------------------------------------


def eta(v):
    """Soft part membership: (tanh(2v - 1) + 1) / 2, in [0, 1]."""
    return 0.5 * (np.tanh(2.0 * np.asarray(v) - 1.0) + 1.0)


def eta_prime(v):
    return 1.0 - np.tanh(2.0 * np.asarray(v) - 1.0) ** 2


def xi(v, sigma=DEFAULT_SIGMA_XI):
    """Bump concentrated where eta(v) = 1/2: exp(-tanh^2(2v-1) / (4 sigma^2))."""
    return np.exp(-np.tanh(2.0 * np.asarray(v) - 1.0) ** 2 / (4.0 * sigma ** 2))


def xi_prime(v, sigma=DEFAULT_SIGMA_XI):
    th = np.tanh(2.0 * np.asarray(v) - 1.0)
    return xi(v, sigma) * (-th * (1.0 - th ** 2) / sigma ** 2)


# -- individual terms ---------------------------------------------------------


def data_term(C, A, Psi, mass, G, v):
    """Column-sparse (L2,1) residual of C A - B(eta(v)) with B mass-weighted.

    Returns (value, grad_C, grad_v).
    """
    ev = eta(v)
    weighted = (mass * ev)[:, None] * G
    B = Psi.T @ weighted
    H = C @ A - B
    q = H.shape[1]
    eps = max(1e-9 * np.linalg.norm(B) / np.sqrt(q), 1e-300)
    colnorm = np.sqrt(np.einsum("ij,ij->j", H, H) + eps ** 2)
    value = float(np.sum(colnorm - eps))
    Hn = H / colnorm
    grad_C = Hn @ A.T
    U = Psi @ Hn
    grad_v = -eta_prime(v) * mass * np.einsum("ij,ij->i", U, G)
    return value, grad_C, grad_v


def area_term(v, area_part, mass):
    """Squared mismatch between the part area and the soft-mask area."""
    ev = eta(v)
    diff = area_part - float(mass @ ev)
    grad_v = -2.0 * diff * mass * eta_prime(v)
    return diff ** 2, grad_v


def triangle_metric(mesh):
    """Per-triangle first fundamental form coefficients (E, F, G)."""
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    E = np.einsum("ij,ij->i", e1, e1)
    F = np.einsum("ij,ij->i", e1, e2)
    G = np.einsum("ij,ij->i", e2, e2)
    return E, F, G


def mumford_shah(v, mesh, sigma_xi=DEFAULT_SIGMA_XI, _cache=None):
    """Soft boundary length: (1/6) sum_j D_j (xi(v1) + xi(v2) + xi(v3)).

    D_j is the integrated gradient magnitude sqrt(va^2 G - 2 va vb F + vb^2 E)
    over triangle j, taken as zero on triangles with constant v.
    Returns (value, grad_v).
    """
    E, F, G = _cache if _cache is not None else triangle_metric(mesh)
    tri = mesh.triangles
    v = np.asarray(v)
    v0, v1, v2 = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    va = v1 - v0
    vb = v2 - v0
    D2 = va ** 2 * G - 2.0 * va * vb * F + vb ** 2 * E
    D = np.sqrt(np.maximum(D2, 0.0))
    xs = xi(v0, sigma_xi) + xi(v1, sigma_xi) + xi(v2, sigma_xi)
    value = float(np.sum(D * xs)) / 6.0

    inv2D = np.where(D > 0.0, 1.0 / np.maximum(2.0 * D, 1e-300), 0.0)
    # d(D^2)/dv for each corner, halved by 1/(2D).
    dD0 = (-2.0 * va * G + 2.0 * F * (va + vb) - 2.0 * vb * E) * inv2D
    dD1 = (2.0 * va * G - 2.0 * vb * F) * inv2D
    dD2 = (2.0 * vb * E - 2.0 * va * F) * inv2D
    grad = np.zeros_like(v)
    for corner, dD, vc in ((0, dD0, v0), (1, dD1, v1), (2, dD2, v2)):
        contrib = xs * dD + D * xi_prime(vc, sigma_xi)
        np.add.at(grad, tri[:, corner], contrib)
    return value, grad / 6.0


def slant_term(C, W):
    """Hadamard-weighted Frobenius penalty |C o W|_F^2."""
    CW = C * W
    return float(np.sum(CW ** 2)), 2.0 * CW * W


def orthogonality_term(C, d):
    """Semi-orthogonality: off-diagonal energy of C^T C plus the deviation of
    its diagonal from the binary rank indicator d."""
    CtC = C.T @ C
    diag = np.diag(CtC)
    value = float(np.sum(CtC ** 2) - np.sum(diag ** 2) + np.sum((diag - d) ** 2))
    grad = 4.0 * (C @ CtC - C * d[None, :])
    return value, grad


def total_energy(C, v, prob, params, with_grads=True):
    """Weighted sum of all terms; optionally returns combined gradients.

    Returns EnergyBreakdown or (EnergyBreakdown, grad_C, grad_v).
    """
    if prob._ms_cache is None:
        prob._ms_cache = triangle_metric(prob.mesh_full)
    data, gC_data, gv_data = data_term(C, prob.A, prob.Psi, prob.mass, prob.G, v)
    area, gv_area = area_term(v, prob.area_part, prob.mass)
    ms, gv_ms = mumford_shah(v, prob.mesh_full, params.sigma_xi, prob._ms_cache)
    slant, gC_slant = slant_term(C, prob.W)
    orth, gC_orth = orthogonality_term(C, prob.d)
    breakdown = EnergyBreakdown.combine(data, area, ms, slant, orth, params)
    if not with_grads:
        return breakdown
    grad_C = gC_data + params.mu3 * gC_slant + params.mu4_5 * gC_orth
    grad_v = gv_data + params.mu1 * gv_area + params.mu2 * gv_ms
    return breakdown, grad_C, grad_v
