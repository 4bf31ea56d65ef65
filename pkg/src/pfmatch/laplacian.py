"""Cotangent Laplace-Beltrami discretization and truncated eigendecomposition.

The stiffness matrix W follows the cotangent formula with positive
off-diagonal weights and diagonal -sum(row), so W itself is negative
semi-definite and the generalized eigenproblem is solved for the positive
semi-definite pair (-W, S):  -W phi = lambda S phi,  lambda >= 0 ascending.
Boundary edges receive the single-cotangent branch, which realizes natural
(Neumann) boundary conditions.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_FALLBACK_N = 1500
SHIFT = -1e-8


class EigensolveError(RuntimeError):
    """Eigensolver failed to converge within its iteration cap."""


@dataclass(frozen=True)
class LaplacianPair:
    """Stiffness W (sparse symmetric, negative semi-definite) and lumped
    diagonal mass matrix S of a mesh."""
    stiffness: sp.csr_matrix
    mass: sp.dia_matrix

    @property
    def n(self):
        return self.stiffness.shape[0]


@dataclass(frozen=True)
class SpectralBasis:
    """First k eigenpairs of (-W, S): ascending eigenvalues and S-orthonormal
    eigenvectors with a deterministic sign convention."""
    eigenvalues: np.ndarray  # (k,)
    eigenvectors: np.ndarray  # (n, k)
    mass: np.ndarray  # (n,) diagonal of S
    k: int = field(default=0)

    def __post_init__(self):
        if self.k == 0:
            object.__setattr__(self, "k", len(self.eigenvalues))

    @property
    def n(self):
        return self.eigenvectors.shape[0]

    def truncated(self, k):
        if k > self.k:
            raise ValueError("cannot extend a truncated basis")
        return SpectralBasis(self.eigenvalues[:k], self.eigenvectors[:, :k],
                             self.mass)


def cotan_stiffness(mesh):
    """Sparse cotangent stiffness matrix per the classical formula.

    Interior edges get (cot a + cot b)/2, boundary edges (cot a)/2, and the
    diagonal is the negated off-diagonal row sum.
    """
    t = mesh.triangles
    p = mesh.vertices[t]
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    # Angle at corner c is opposite the edge (a, b).
    for c, a, b in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        u = p[:, a] - p[:, c]
        w = p[:, b] - p[:, c]
        cot = np.einsum("ij,ij->i", u, w) / np.linalg.norm(np.cross(u, w), axis=1)
        rows.append(t[:, a]); cols.append(t[:, b]); vals.append(cot / 2.0)
        rows.append(t[:, b]); cols.append(t[:, a]); vals.append(cot / 2.0)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    W = W - sp.diags(np.asarray(W.sum(axis=1)).ravel())
    return W.tocsr()


def mass_matrix(mesh):
    """Diagonal lumped mass matrix; trace equals the total surface area."""
    return sp.diags(mesh.vertex_areas())


def laplacian_pair(mesh):
    return LaplacianPair(cotan_stiffness(mesh), mass_matrix(mesh))


def _fix_signs(vecs):
    """Flip each column so its first significant entry is positive.

    Using the first entry above a relative threshold (rather than the entry
    of largest magnitude) keeps the convention stable for antisymmetric
    modes, where the maximum magnitude is attained at several entries with
    opposite signs and floating-point noise would pick among them.
    """
    out = vecs.copy()
    for c in range(out.shape[1]):
        v = out[:, c]
        sig = np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max())
        lead = v[sig[0]] if len(sig) else 1.0
        if lead < 0:
            out[:, c] = -v
    return out


def _order_ties(vals, vecs, rel_tol=1e-9):
    """Deterministic ordering inside near-degenerate eigenvalue groups.

    Groups of eigenvalues within relative ``rel_tol`` are reordered by the
    first significant entry of their sign-fixed eigenvectors.
    """
    order = np.arange(len(vals))
    scale = max(abs(vals[-1]), 1e-300)
    i = 0
    while i < len(vals):
        j = i + 1
        while j < len(vals) and abs(vals[j] - vals[i]) <= rel_tol * scale:
            j += 1
        if j - i > 1:
            keys = []
            for c in range(i, j):
                v = vecs[:, c]
                sig = np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max())
                first = int(sig[0]) if len(sig) else 0
                keys.append((first, -v[first]))
            sub = sorted(range(j - i), key=lambda q: keys[q])
            order[i:j] = order[i:j][np.asarray(sub)]
        i = j
    return vals[order], vecs[:, order]


def eigensolve(pair, k):
    """First k eigenpairs of the generalized problem -W phi = lambda S phi.

    Shift-invert Lanczos for large meshes, dense generalized decomposition
    for n <= 1500.
    """
    n = pair.n
    if k >= n:
        raise ValueError(f"k={k} must be smaller than n={n}")
    if k < 1:
        raise ValueError("k must be positive")
    K = (-pair.stiffness).tocsc()
    s = pair.mass.diagonal()
    if np.any(s <= 0):
        raise ValueError("mass diagonal must be strictly positive")

    if n <= DENSE_FALLBACK_N:
        vals, vecs = scipy.linalg.eigh(K.toarray(), np.diag(s),
                                       subset_by_index=[0, k - 1])
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))  # deterministic start vector
        try:
            vals, vecs = spla.eigsh(K, k=k, M=sp.diags(s), sigma=SHIFT,
                                    which="LM", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise EigensolveError(
                f"ARPACK failed to converge: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]

    vals = np.maximum(vals, 0.0) if vals[0] > -1e-8 * max(vals[-1], 1) else vals
    vecs = _fix_signs(vecs)
    vals, vecs = _order_ties(vals, vecs)
    # Re-normalize in the S-inner product (dense path already is, cheap anyway).
    nrm = np.sqrt(np.einsum("ij,i,ij->j", vecs, s, vecs))
    vecs = vecs / nrm
    return SpectralBasis(np.asarray(vals, dtype=np.float64), vecs, s)


def mesh_basis(mesh, k):
    """Convenience: cotangent pair plus eigensolve in one call."""
    return eigensolve(laplacian_pair(mesh), k)
