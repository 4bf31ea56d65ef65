"""Dense local SHOT-style surface descriptors.

Layout: 32 spatial sectors (8 azimuth x 2 elevation x 2 radial shells) times
an 11-bin histogram of the cosine between neighbor and center normals, for
352 values per vertex.  Each descriptor is unit-normalized; vertices with
fewer than 5 neighbors in the support radius get a zero descriptor and are
flagged.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

N_AZIMUTH = 8
N_ELEVATION = 2
N_RADIAL = 2
N_COS_BINS = 11
DESCRIPTOR_DIM = N_AZIMUTH * N_ELEVATION * N_RADIAL * N_COS_BINS  # 352
MIN_NEIGHBORS = 5
DEFAULT_RADIUS_FRACTION = 0.07


@dataclass(frozen=True)
class DescriptorField:
    """Per-vertex descriptors (n x 352) with the support radius used and a
    flag marking vertices whose support was too sparse."""
    values: np.ndarray
    radius: float
    flags: np.ndarray  # bool, True where the descriptor is a zero vector

    @property
    def dim(self):
        return self.values.shape[1]


def default_radius(mesh):
    """Default support radius: 7% of the square root of the surface area."""
    return DEFAULT_RADIUS_FRACTION * np.sqrt(mesh.total_area)


def local_reference_frame(center, neighbors, radius):
    """Disambiguated eigenvector frame of the radius-weighted covariance.

    Returns a 3x3 matrix with rows (x, y, z) of the local frame.
    """
    diff = neighbors - center
    dist = np.linalg.norm(diff, axis=1)
    w = radius - dist
    cov = (diff * w[:, None]).T @ diff / w.sum()
    evals, evecs = np.linalg.eigh(cov)  # ascending
    x_axis = evecs[:, 2]
    z_axis = evecs[:, 0]
    # Sign disambiguation: majority of neighbors on the positive side.
    if np.sum(diff @ x_axis >= 0) < len(diff) / 2.0:
        x_axis = -x_axis
    if np.sum(diff @ z_axis >= 0) < len(diff) / 2.0:
        z_axis = -z_axis
    y_axis = np.cross(z_axis, x_axis)
    return np.vstack([x_axis, y_axis, z_axis])


def shot_descriptors(mesh, radius=None):
    """Compute SHOT-style descriptors for every mesh vertex."""
    if radius is None:
        radius = default_radius(mesh)
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = mesh.vertices
    normals = mesh.vertex_normals()
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, radius)

    n = mesh.n_vertices
    desc = np.zeros((n, DESCRIPTOR_DIM))
    flags = np.zeros(n, dtype=bool)
    for v in range(n):
        nbr = [u for u in neighbor_lists[v] if u != v]
        if len(nbr) < MIN_NEIGHBORS:
            flags[v] = True
            continue
        nbr = np.asarray(nbr)
        frame = local_reference_frame(pts[v], pts[nbr], radius)
        local = (pts[nbr] - pts[v]) @ frame.T
        dist = np.linalg.norm(local, axis=1)
        ok = dist > 1e-12 * radius
        local, dist, nbr = local[ok], dist[ok], nbr[ok]

        azimuth = np.arctan2(local[:, 1], local[:, 0])  # (-pi, pi]
        az_bin = np.minimum((azimuth + np.pi) / (2 * np.pi) * N_AZIMUTH,
                            N_AZIMUTH - 1e-9).astype(np.int64)
        el_bin = (local[:, 2] >= 0).astype(np.int64)
        rad_bin = (dist >= radius / 2.0).astype(np.int64)
        sector = (az_bin * N_ELEVATION + el_bin) * N_RADIAL + rad_bin

        cosang = np.clip(normals[nbr] @ normals[v], -1.0, 1.0)
        # Soft assignment across the two adjacent cosine bins.
        pos = (cosang + 1.0) / 2.0 * N_COS_BINS - 0.5
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        hist = np.zeros((N_AZIMUTH * N_ELEVATION * N_RADIAL, N_COS_BINS))
        valid_lo = lo >= 0
        np.add.at(hist, (sector[valid_lo], lo[valid_lo]), 1.0 - frac[valid_lo])
        hi = lo + 1
        valid_hi = hi <= N_COS_BINS - 1
        np.add.at(hist, (sector[valid_hi], hi[valid_hi]), frac[valid_hi])
        # Clamp spill at the extreme bins back into them.
        np.add.at(hist, (sector[~valid_lo], 0), 1.0 - frac[~valid_lo])
        np.add.at(hist, (sector[~valid_hi], N_COS_BINS - 1), frac[~valid_hi])

        flat = hist.reshape(-1)
        norm = np.linalg.norm(flat)
        if norm > 0:
            desc[v] = flat / norm
        else:
            flags[v] = True
    return DescriptorField(desc, float(radius), flags)
