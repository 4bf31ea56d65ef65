"""Triangle mesh representation, OFF/PLY I/O and geometric primitives.

A :class:`TriangleMesh` is immutable after construction and caches derived
structure (edge partition, areas, geodesic graph) lazily.  Geodesic distances
use Dijkstra on the edge graph augmented with edge-midpoint Steiner points,
which keeps the graph-metric error small enough for evaluation purposes.
"""

import struct
import warnings

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

DEGENERATE_AREA_FACTOR = 1e-12


class MeshError(ValueError):
    """Raised for invalid mesh content (parse failures, non-manifoldness...)."""


class TriangleMesh:
    """Manifold triangle mesh with vertices (n, 3) and triangles (m, 3).

    Unreferenced vertices are dropped at construction time; the original
    indices of the kept vertices are recorded in ``kept_vertices``.
    Triangle orientation is made consistent per connected component whenever
    the component is orientable.
    """

    def __init__(self, vertices, triangles):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        t = np.ascontiguousarray(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if t.size == 0:
            raise MeshError("empty mesh: no triangles")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MeshError("degenerate triangle with repeated vertex index")

        # Drop unreferenced vertices, remember the remap.
        used = np.zeros(len(v), dtype=bool)
        used[t.reshape(-1)] = True
        self.kept_vertices = np.flatnonzero(used)
        if not used.all():
            remap = -np.ones(len(v), dtype=np.int64)
            remap[self.kept_vertices] = np.arange(len(self.kept_vertices))
            v = v[used]
            t = remap[t]

        self.vertices = v
        self.triangles = self._orient(v, t)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

        self._edges = None
        self._geo_graph = None
        self._validate_geometry()

    # -- basic quantities ---------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def bbox_diagonal(self):
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))

    @property
    def triangle_areas(self):
        return self._tri_areas

    @property
    def total_area(self):
        return float(self._tri_areas.sum())

    def vertex_areas(self):
        """Lumped per-vertex areas: one third of the incident triangle areas."""
        s = np.zeros(self.n_vertices)
        np.add.at(s, self.triangles.reshape(-1), np.repeat(self._tri_areas / 3.0, 3))
        if np.any(s <= 0):
            raise MeshError("vertex with zero area (not incident to any triangle)")
        return s

    def triangle_normals(self):
        p = self.vertices[self.triangles]
        nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    def vertex_normals(self):
        """Area-weighted average of incident triangle normals."""
        p = self.vertices[self.triangles]
        nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # 2*area*unit normal
        out = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(out, self.triangles[:, c], nrm)
        lens = np.linalg.norm(out, axis=1)
        lens[lens == 0] = 1.0
        return out / lens[:, None]

    # -- edge structure -----------------------------------------------------

    def _edge_data(self):
        if self._edges is None:
            t = self.triangles
            raw = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            raw.sort(axis=1)
            edges, counts = np.unique(raw, axis=0, return_counts=True)
            if counts.max() > 2:
                bad = edges[np.argmax(counts)]
                raise MeshError(f"non-manifold edge {tuple(bad)}: "
                                f"{counts.max()} incident triangles")
            self._edges = (edges, counts)
        return self._edges

    @property
    def edges(self):
        return self._edge_data()[0]

    @property
    def interior_edges(self):
        edges, counts = self._edge_data()
        return edges[counts == 2]

    @property
    def boundary_edges(self):
        edges, counts = self._edge_data()
        return edges[counts == 1]

    def boundary_vertices(self):
        return np.unique(self.boundary_edges)

    def is_closed(self):
        return len(self.boundary_edges) == 0

    # -- geodesics ----------------------------------------------------------

    def _geodesic_graph(self):
        """Edge graph plus midpoint Steiner nodes and intra-triangle shortcuts."""
        if self._geo_graph is not None:
            return self._geo_graph
        n = self.n_vertices
        edges = self.edges
        eidx = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
        mid = 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])
        pos = np.vstack([self.vertices, mid])

        rows, cols = [], []
        # Edge halves: vertex -- midpoint.
        m_ids = n + np.arange(len(edges))
        rows.extend(edges[:, 0]); cols.extend(m_ids)
        rows.extend(edges[:, 1]); cols.extend(m_ids)
        # Per-triangle shortcuts: midpoint--midpoint and vertex--opposite midpoint.
        for tri in self.triangles:
            a, b, c = (int(x) for x in tri)
            mab = n + eidx[(min(a, b), max(a, b))]
            mbc = n + eidx[(min(b, c), max(b, c))]
            mca = n + eidx[(min(c, a), max(c, a))]
            rows.extend([mab, mbc, mca, a, b, c])
            cols.extend([mbc, mca, mab, mbc, mca, mab])
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        w = np.linalg.norm(pos[rows] - pos[cols], axis=1)
        g = csr_matrix((w, (rows, cols)), shape=(len(pos), len(pos)))
        g = g.maximum(g.T)
        self._geo_graph = g
        return g

    def geodesic_distances(self, source):
        """Graph-geodesic distances from one source vertex (or several).

        Returns a length-n vector for a scalar source, or a (len(sources), n)
        matrix.  Unreachable vertices get +inf.
        """
        sources = np.atleast_1d(np.asarray(source, dtype=np.int64))
        if sources.min() < 0 or sources.max() >= self.n_vertices:
            raise IndexError("source vertex index out of range")
        g = self._geodesic_graph()
        d = dijkstra(g, directed=False, indices=sources)[:, : self.n_vertices]
        return d[0] if np.isscalar(source) or np.ndim(source) == 0 else d

    def farthest_point_sample(self, count, seed):
        """Greedy max-min geodesic sampling starting from ``seed``."""
        if count > self.n_vertices:
            raise ValueError("count exceeds number of vertices")
        if count < 1:
            raise ValueError("count must be positive")
        samples = [int(seed)]
        dmin = self.geodesic_distances(int(seed))
        for _ in range(count - 1):
            nxt = int(np.argmax(dmin))
            samples.append(nxt)
            dmin = np.minimum(dmin, self.geodesic_distances(nxt))
        return samples

    # -- derived meshes -----------------------------------------------------

    def submesh(self, vertex_ids):
        """Mesh induced by the given vertex set (triangles fully inside).

        Returns (mesh, vertex_map) where vertex_map[i] is the parent index of
        submesh vertex i.
        """
        keep = np.zeros(self.n_vertices, dtype=bool)
        keep[np.asarray(vertex_ids, dtype=np.int64)] = True
        tri_keep = keep[self.triangles].all(axis=1)
        if not tri_keep.any():
            raise MeshError("vertex set induces no triangles")
        old_ids = np.flatnonzero(keep)
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[old_ids] = np.arange(len(old_ids))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sub = TriangleMesh(self.vertices[old_ids], remap[self.triangles[tri_keep]])
        return sub, old_ids[sub.kept_vertices]

    def subdivided(self):
        """One step of 1-to-4 midpoint subdivision (no smoothing)."""
        edges = self.edges
        eidx = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
        n = self.n_vertices
        mids = 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])
        verts = np.vstack([self.vertices, mids])
        tris = []
        for tri in self.triangles:
            a, b, c = (int(x) for x in tri)
            mab = n + eidx[(min(a, b), max(a, b))]
            mbc = n + eidx[(min(b, c), max(b, c))]
            mca = n + eidx[(min(c, a), max(c, a))]
            tris.extend([[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]])
        return TriangleMesh(verts, np.asarray(tris))

    # -- internals ----------------------------------------------------------

    def _validate_geometry(self):
        p = self.vertices[self.triangles]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        areas = 0.5 * np.linalg.norm(cr, axis=1)
        thresh = DEGENERATE_AREA_FACTOR * self.bbox_diagonal ** 2
        if np.any(areas < thresh):
            bad = int(np.argmin(areas))
            raise MeshError(f"degenerate triangle {bad} (area {areas[bad]:.3e})")
        self._tri_areas = areas
        self._edge_data()  # manifoldness check
        ncomp = connected_components(self._vertex_adjacency(), directed=False)[0]
        if ncomp > 1:
            warnings.warn(f"mesh has {ncomp} connected components", stacklevel=3)

    def _vertex_adjacency(self):
        e = np.vstack([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                       self.triangles[:, [2, 0]]])
        data = np.ones(len(e))
        return csr_matrix((data, (e[:, 0], e[:, 1])),
                          shape=(self.n_vertices, self.n_vertices))

    @staticmethod
    def _orient(vertices, triangles):
        """Propagate a consistent orientation per component; flip closed
        components to positive signed volume."""
        t = triangles.copy()
        m = len(t)
        edge_tris = {}
        for j in range(m):
            a, b, c = (int(x) for x in t[j])
            for u, w in ((a, b), (b, c), (c, a)):
                edge_tris.setdefault((min(u, w), max(u, w)), []).append(j)

        def directed_edges(tri):
            a, b, c = (int(x) for x in tri)
            return [(a, b), (b, c), (c, a)]

        visited = np.zeros(m, dtype=bool)
        orientable = True
        for start in range(m):
            if visited[start]:
                continue
            comp = [start]
            stack = [start]
            visited[start] = True
            while stack:
                j = stack.pop()
                for u, w in directed_edges(t[j]):
                    for jn in edge_tris[(min(u, w), max(u, w))]:
                        if jn == j:
                            continue
                        same_dir = (u, w) in directed_edges(t[jn])
                        if not visited[jn]:
                            if same_dir:
                                t[jn] = t[jn][::-1]
                            visited[jn] = True
                            comp.append(jn)
                            stack.append(jn)
                        elif same_dir:
                            orientable = False
            comp = np.asarray(comp)
            # Closed components: pick outward orientation (positive volume).
            p = vertices[t[comp]]
            vol = np.einsum("ij,ij->", p[:, 0], np.cross(p[:, 1], p[:, 2])) / 6.0
            raw = np.vstack([t[comp][:, [0, 1]], t[comp][:, [1, 2]], t[comp][:, [2, 0]]])
            raw.sort(axis=1)
            _, counts = np.unique(raw, axis=0, return_counts=True)
            if counts.min() == 2 and vol < 0:
                t[comp] = t[comp][:, ::-1]
        if not orientable:
            warnings.warn("mesh is not consistently orientable", stacklevel=4)
        return t


# -- file I/O ----------------------------------------------------------------


def load_mesh(path):
    """Load an OFF or PLY mesh (ascii or binary-little-endian PLY)."""
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head.startswith(b"OFF") or head.startswith(b"ply"):
        if head.startswith(b"OFF"):
            v, t = _read_off(path)
        else:
            v, t = _read_ply(path)
    else:
        raise MeshError(f"{path}: unrecognized mesh format")
    return TriangleMesh(v, t)


def _read_off(path):
    with open(path, "r") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = np.asarray(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            if cnt != 3:
                raise MeshError(f"{path}: only triangular faces supported")
            tris.append([int(x) for x in tokens[pos + 1:pos + 4]])
            pos += 1 + cnt
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed OFF data: {exc}") from exc
    return verts, np.asarray(tris, dtype=np.int64)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise MeshError(f"{path}: missing ply header")
        fmt = None
        elements = []  # (name, count, [(prop_name, dtype)|('list', idx_t, val_t, name)])
        while True:
            line = fh.readline()
            if not line:
                raise MeshError(f"{path}: unterminated ply header")
            parts = line.decode("ascii", "replace").split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "format":
                fmt = parts[1]
                if fmt not in ("ascii", "binary_little_endian"):
                    raise MeshError(f"{path}: unsupported ply format {fmt}")
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
                else:
                    elements[-1][2].append((parts[2], parts[1]))
            elif parts[0] == "end_header":
                break
        verts = tris = None
        for name, count, props in elements:
            if fmt == "ascii":
                data = _ply_ascii_element(fh, count, props, path)
            else:
                data = _ply_binary_element(fh, count, props, path)
            if name == "vertex":
                try:
                    verts = np.column_stack([data["x"], data["y"], data["z"]])
                except KeyError as exc:
                    raise MeshError(f"{path}: vertex element lacks x/y/z") from exc
            elif name == "face":
                key = next((p[3] for p in props if p[0] == "list"), None)
                if key is None:
                    raise MeshError(f"{path}: face element has no list property")
                tris = data[key]
    if verts is None or tris is None:
        raise MeshError(f"{path}: missing vertex or face element")
    return np.asarray(verts, dtype=np.float64), np.asarray(tris, dtype=np.int64)


def _ply_ascii_element(fh, count, props, path):
    data = {p[0] if p[0] != "list" else p[3]: [] for p in props}
    for _ in range(count):
        parts = fh.readline().split()
        pos = 0
        for p in props:
            if p[0] == "list":
                cnt = int(parts[pos])
                if p[3] == "vertex_indices" or p[3] == "vertex_index":
                    if cnt != 3:
                        raise MeshError(f"{path}: only triangular faces supported")
                data[p[3]].append([int(x) for x in parts[pos + 1:pos + 1 + cnt]])
                pos += 1 + cnt
            else:
                data[p[0]].append(float(parts[pos]))
                pos += 1
    return {k: np.asarray(v) for k, v in data.items()}


def _ply_binary_element(fh, count, props, path):
    if all(p[0] != "list" for p in props):
        dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
        raw = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt)
        return {p[0]: raw[p[0]] for p in props}
    data = {p[0] if p[0] != "list" else p[3]: [] for p in props}
    for _ in range(count):
        for p in props:
            if p[0] == "list":
                idx_t = "<" + _PLY_TYPES[p[1]]
                val_t = "<" + _PLY_TYPES[p[2]]
                cnt = int(np.frombuffer(fh.read(np.dtype(idx_t).itemsize), idx_t)[0])
                if cnt != 3:
                    raise MeshError(f"{path}: only triangular faces supported")
                vals = np.frombuffer(fh.read(np.dtype(val_t).itemsize * cnt), val_t)
                data[p[3]].append(vals.astype(np.int64))
            else:
                val_t = "<" + _PLY_TYPES[p[1]]
                data[p[0]].append(np.frombuffer(
                    fh.read(np.dtype(val_t).itemsize), val_t)[0])
    return {k: np.asarray(v) for k, v in data.items()}


def save_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def save_ply(mesh, path, binary=True, colors=None):
    """Write PLY; ``colors`` is an optional (n, 3) uint8 per-vertex RGB array."""
    n, m = mesh.n_vertices, mesh.n_triangles
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8)
        if colors.shape != (n, 3):
            raise ValueError("colors must have shape (n, 3)")
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {m}", "property list uchar int vertex_indices",
               "end_header"]
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            if colors is None:
                fh.write(np.ascontiguousarray(mesh.vertices, "<f8").tobytes())
            else:
                for v, c in zip(mesh.vertices, colors):
                    fh.write(struct.pack("<3d3B", *v, *c))
            tri = mesh.triangles.astype("<i4")
            for t in tri:
                fh.write(struct.pack("<B3i", 3, *t))
    else:
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            for i, v in enumerate(mesh.vertices):
                line = f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}"
                if colors is not None:
                    line += f" {colors[i, 0]} {colors[i, 1]} {colors[i, 2]}"
                fh.write(line + "\n")
            for t in mesh.triangles:
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
