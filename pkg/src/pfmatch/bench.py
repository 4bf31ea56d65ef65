"""Synthetic partial-dataset generation and correspondence evaluation.

Cuts operate at the triangle level: a triangle survives only when all three
vertices lie on the kept side, so partial vertices keep their exact full-shape
positions and the ground-truth correspondence stays vertex-to-vertex.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh


@dataclass(frozen=True)
class GroundTruth:
    """Maps each partial-shape vertex to its originating full-shape vertex."""
    correspondence: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.correspondence)
        if len(np.unique(c)) != len(c):
            raise ValueError("ground-truth correspondence must be injective")


# -- synthetic shapes ---------------------------------------------------------


def grid_mesh(nx, ny=None, width=1.0, height=1.0):
    """Regular triangulated grid of a rectangle with nx x ny cells."""
    ny = ny or nx
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append([a, b, c])
            tris.append([a, c, d])
    return TriangleMesh(verts, np.asarray(tris))


def icosphere(subdivisions=3, radius=1.0):
    """Unit icosahedron subdivided and projected onto the sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    for _ in range(subdivisions):
        cache = {}
        new_tris = []
        verts_list = list(verts)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts_list[a] + verts_list[b]
                m /= np.linalg.norm(m)
                cache[key] = len(verts_list)
                verts_list.append(m)
            return cache[key]

        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c],
                             [ab, bc, ca]])
        verts = np.asarray(verts_list)
        tris = np.asarray(new_tris)
    return TriangleMesh(verts * radius, tris)


def bumpy_sphere(subdivisions=4, n_bumps=8, amplitude=0.25, width=0.45,
                 seed=7):
    """Icosphere with Gaussian radial bumps; asymmetric for generic spectra."""
    base = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amps = amplitude * rng.uniform(0.4, 1.0, size=n_bumps) * \
        rng.choice([-1.0, 1.0], size=n_bumps)
    r = np.ones(base.n_vertices)
    dirs = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    for c, a in zip(centers, amps):
        ang = np.arccos(np.clip(dirs @ c, -1.0, 1.0))
        r += a * np.exp(-(ang / width) ** 2)
    return TriangleMesh(dirs * r[:, None], base.triangles)


# -- partiality generators ----------------------------------------------------


def plane_cut(mesh, point, normal):
    """Keep triangles entirely on the positive side of the plane.

    Returns (partial mesh, GroundTruth).
    """
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    side = (mesh.vertices - np.asarray(point)) @ normal >= 0.0
    keep_ids = np.flatnonzero(side)
    if len(keep_ids) == 0:
        raise ValueError("plane cut removes the entire mesh")
    sub, vertex_map = mesh.submesh(keep_ids)
    return sub, GroundTruth(vertex_map)


def plane_offset_for_area(mesh, normal, keep_fraction, tol=0.01):
    """Bisect the plane offset along ``normal`` so the cut keeps roughly the
    requested fraction of the surface area."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    proj = mesh.vertices @ normal
    lo, hi = proj.min() - 1e-9, proj.max() + 1e-9
    total = mesh.total_area
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        try:
            sub, _ = plane_cut(mesh, mid * normal, normal)
            frac = sub.total_area / total
        except ValueError:
            frac = 0.0
        if abs(frac - keep_fraction) < tol:
            return mid * normal
        if frac > keep_fraction:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * normal


def erode_holes(mesh, seed_count, area_budget, seed_vertex=0):
    """Grow geodesic holes from farthest-point seeds until the kept area
    drops to the budgeted fraction of the total area.

    Returns (partial mesh, GroundTruth).
    """
    if not 0.0 < area_budget < 1.0:
        raise ValueError("area budget must be in (0, 1)")
    seeds = mesh.farthest_point_sample(seed_count, seed_vertex)
    dmin = mesh.geodesic_distances(np.asarray(seeds)).min(axis=0)
    total = mesh.total_area
    areas = mesh.triangle_areas
    tri_d = dmin[mesh.triangles]

    def kept_area(radius):
        removed = (tri_d < radius).all(axis=1)
        return float(areas[~removed].sum())

    lo, hi = 0.0, float(np.max(dmin)) * 1.001
    if kept_area(hi) > area_budget * total:
        raise ValueError("area budget unreachable: holes cannot grow enough")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if kept_area(mid) > area_budget * total:
            lo = mid
        else:
            hi = mid
    radius = hi  # smallest radius with kept area <= budget
    removed = (tri_d < radius).all(axis=1)
    # Build from the kept triangle list; selecting by vertex set instead
    # would resurrect removed triangles whose corners all survive through
    # neighboring triangles.
    sub = TriangleMesh(mesh.vertices, mesh.triangles[~removed])
    return sub, GroundTruth(sub.kept_vertices)


# -- evaluation ---------------------------------------------------------------


def princeton_error(assignment, gt, mesh_full):
    """Per-vertex normalized geodesic error of a partial-to-full assignment.

    ``assignment[x]`` is the predicted full-shape vertex for partial vertex x
    (negative = unassigned, reported as NaN).  Errors are geodesic distances
    on the full shape between prediction and ground truth, divided by the
    square root of the full shape's area.
    """
    assignment = np.asarray(assignment)
    targets = np.asarray(gt.correspondence)
    if len(assignment) != len(targets):
        raise ValueError("assignment and ground truth length mismatch")
    scale = np.sqrt(mesh_full.total_area)
    errors = np.full(len(assignment), np.nan)
    assigned = np.flatnonzero(assignment >= 0)
    if len(assigned) == 0:
        return errors
    sources = np.unique(targets[assigned])
    dmat = mesh_full.geodesic_distances(sources)
    row = {int(s): i for i, s in enumerate(sources)}
    for x in assigned:
        errors[x] = dmat[row[int(targets[x])], assignment[x]] / scale
    return errors


def cumulative_curve(errors, thresholds):
    """Fraction of (finite) errors at or below each threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    errors = errors[np.isfinite(errors)]
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if len(errors) == 0:
        return np.zeros_like(thresholds)
    return np.array([(errors <= t).mean() for t in thresholds])


# -- persistence --------------------------------------------------------------


def save_ground_truth(gt, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["part_vertex", "full_vertex"])
        for i, y in enumerate(gt.correspondence):
            w.writerow([i, int(y)])


def load_ground_truth(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    corr = np.empty(len(rows), dtype=np.int64)
    for part, full in rows:
        corr[int(part)] = int(full)
    return GroundTruth(corr)
