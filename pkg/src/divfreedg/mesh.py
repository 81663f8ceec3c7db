"""Conforming triangular meshes with oriented facets.

Structured meshes of the unit square (optionally perturbed) or meshes loaded
from a plain-text file.  A mesh is immutable after construction; the facet
normal n_F is fixed once (pointing from the plus cell toward the minus cell,
outward on the boundary) and never flipped.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Facet:
    """One mesh facet.  ``vertices`` is stored ascending; that fixes the
    tangential direction used to parametrize facet quadrature and DOFs."""

    vertices: tuple
    normal: np.ndarray
    length: float
    plus_cell: int
    minus_cell: int  # -1 on the boundary

    @property
    def is_boundary(self):
        return self.minus_cell < 0


class Mesh:
    """Triangulation with counterclockwise cells and oriented facets.

    Attributes
    ----------
    vertices : (nv, 2) array
    cells : (nc, 3) int array, counterclockwise
    facets : list of Facet
    cell_facets : (nc, 3) int array, facet id of the edge opposite vertex i
    cell_facet_signs : (nc, 3) int array, +1 where the cell is the plus side
    """

    def __init__(self, vertices, cells):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if self.cells.ndim != 2 or self.cells.shape[1] != 3:
            raise ValueError("cells must be an (nc, 3) array")
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= len(self.vertices)):
            raise ValueError("vertex index out of range")

        self._build_geometry()
        self._build_facets()

    # -- construction helpers -------------------------------------------------

    def _build_geometry(self):
        v = self.vertices
        c = self.cells
        e1 = v[c[:, 1]] - v[c[:, 0]]
        e2 = v[c[:, 2]] - v[c[:, 0]]
        self.cell_jac = np.stack([e1, e2], axis=-1)  # columns are edge vectors
        self.cell_detj = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(self.cell_detj <= 0):
            bad = int(np.argmax(self.cell_detj <= 0))
            raise ValueError(f"non-positive cell area (cell {bad})")
        self.cell_area = 0.5 * self.cell_detj
        inv = np.empty_like(self.cell_jac)
        inv[:, 0, 0] = self.cell_jac[:, 1, 1]
        inv[:, 1, 1] = self.cell_jac[:, 0, 0]
        inv[:, 0, 1] = -self.cell_jac[:, 0, 1]
        inv[:, 1, 0] = -self.cell_jac[:, 1, 0]
        self.cell_jac_inv = inv / self.cell_detj[:, None, None]

        # cell diameter h_K = longest edge
        d01 = np.linalg.norm(v[c[:, 1]] - v[c[:, 0]], axis=1)
        d12 = np.linalg.norm(v[c[:, 2]] - v[c[:, 1]], axis=1)
        d20 = np.linalg.norm(v[c[:, 0]] - v[c[:, 2]], axis=1)
        self.cell_h = np.max(np.stack([d01, d12, d20]), axis=0)
        self.h_max = float(self.cell_h.max())
        self.h_min = float(self.cell_h.min())

    def _build_facets(self):
        nc = len(self.cells)
        edge_to_facet = {}
        plus = []
        minus = []
        pairs = []
        plus_local = []
        self.cell_facets = np.empty((nc, 3), dtype=int)
        self.cell_facet_signs = np.empty((nc, 3), dtype=int)

        for c in range(nc):
            for i in range(3):
                a = int(self.cells[c, (i + 1) % 3])
                b = int(self.cells[c, (i + 2) % 3])
                key = (a, b) if a < b else (b, a)
                f = edge_to_facet.get(key)
                if f is None:
                    f = len(pairs)
                    edge_to_facet[key] = f
                    pairs.append(key)
                    plus.append(c)
                    plus_local.append(i)
                    minus.append(-1)
                    sign = 1
                else:
                    if minus[f] >= 0:
                        raise ValueError(f"facet {key} shared by more than two cells")
                    minus[f] = c
                    sign = -1
                self.cell_facets[c, i] = f
                self.cell_facet_signs[c, i] = sign

        nf = len(pairs)
        self.facet_vertices = np.array(pairs, dtype=int).reshape(nf, 2)
        self.facet_plus = np.array(plus, dtype=int)
        self.facet_minus = np.array(minus, dtype=int)

        # outward normal of the plus cell: local edge i runs CCW from vertex
        # (i+1)%3 to (i+2)%3, so rotating the tangent by -90 deg points outward
        pl = np.array(plus_local)
        va = self.vertices[self.cells[self.facet_plus, (pl + 1) % 3]]
        vb = self.vertices[self.cells[self.facet_plus, (pl + 2) % 3]]
        tang = vb - va
        length = np.linalg.norm(tang, axis=1)
        if np.any(length <= 0):
            raise ValueError("degenerate facet of zero length")
        normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / length[:, None]
        self.facet_normal = normal
        self.facet_length = length
        self.facet_is_boundary = self.facet_minus < 0
        self.boundary_facets = np.flatnonzero(self.facet_is_boundary)
        self.interior_facets = np.flatnonzero(~self.facet_is_boundary)

        self.facets = [
            Facet(tuple(self.facet_vertices[f]), self.facet_normal[f],
                  float(self.facet_length[f]), int(self.facet_plus[f]),
                  int(self.facet_minus[f]))
            for f in range(nf)
        ]

    # -- queries ---------------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_facets(self):
        return len(self.facets)

    def map_to_physical(self, cells, ref_points):
        """Map reference points (n, 2) into the given cells (broadcasts)."""
        ref_points = np.asarray(ref_points, dtype=float)
        origin = self.vertices[self.cells[cells, 0]]
        return origin + np.einsum("...ab,...b->...a", self.cell_jac[cells], ref_points)

    def map_to_reference(self, cells, points):
        """Inverse affine map of physical points into reference coordinates."""
        points = np.asarray(points, dtype=float)
        origin = self.vertices[self.cells[cells, 0]]
        return np.einsum("...ab,...b->...a", self.cell_jac_inv[cells], points - origin)


@dataclass(frozen=True)
class TracePoints:
    """Paired facet quadrature data: physical points seen from each side,
    their reference preimages, and physical weights summing to the length."""

    points_plus: np.ndarray
    points_minus: np.ndarray  # None on boundary facets
    ref_plus: np.ndarray
    ref_minus: np.ndarray
    weights: np.ndarray


def facet_trace_points(mesh, facet_id, rule):
    """Quadrature points on facet ``facet_id`` traced through both cells.

    ``rule`` lives on the reference segment [0, 1]; the facet is parametrized
    from its lower-index vertex to the higher one.
    """
    f = mesh.facets[facet_id]
    a = mesh.vertices[f.vertices[0]]
    b = mesh.vertices[f.vertices[1]]
    t = np.asarray(rule.points)
    pts = a + t[:, None] * (b - a)
    weights = np.asarray(rule.weights) * f.length

    cp = f.plus_cell
    ref_plus = mesh.map_to_reference(np.full(len(t), cp), pts)
    pts_plus = mesh.map_to_physical(np.full(len(t), cp), ref_plus)
    if f.is_boundary:
        return TracePoints(pts_plus, None, ref_plus, None, weights)
    cm = f.minus_cell
    ref_minus = mesh.map_to_reference(np.full(len(t), cm), pts)
    pts_minus = mesh.map_to_physical(np.full(len(t), cm), ref_minus)
    return TracePoints(pts_plus, pts_minus, ref_plus, ref_minus, weights)


def build_structured(n, perturb=0.0, seed=0):
    """Structured triangulation of the unit square with 2*n*n cells.

    Interior vertices are displaced by deterministic random offsets of
    magnitude at most perturb/n.  If the perturbation produces a degenerate
    cell the amplitude is halved and the mesh rebuilt, at most five times.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0.0 <= perturb <= 0.3:
        raise ValueError("perturb must lie in [0, 0.3]")

    amplitude = perturb
    for _ in range(6):
        try:
            return _structured_attempt(n, amplitude, seed)
        except ValueError:
            if amplitude == 0.0:
                raise
            amplitude *= 0.5
    raise ValueError(f"could not build a valid mesh at perturb={perturb}")


def _structured_attempt(n, perturb, seed):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    if perturb > 0.0:
        rng = np.random.default_rng(seed)
        interior = np.flatnonzero(
            (verts[:, 0] > 0) & (verts[:, 0] < 1) & (verts[:, 1] > 0) & (verts[:, 1] < 1)
        )
        radius = perturb / n * rng.uniform(0.0, 1.0, len(interior))
        angle = rng.uniform(0.0, 2.0 * np.pi, len(interior))
        verts[interior, 0] += radius * np.cos(angle)
        verts[interior, 1] += radius * np.sin(angle)

    def vid(i, j):
        return i * (n + 1) + j

    cells = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
            else:
                cells.append((v00, v10, v01))
                cells.append((v10, v11, v01))
    return Mesh(verts, np.array(cells, dtype=int))


def load_mesh(path):
    """Read a mesh from the plain-text format (see ``save_mesh``)."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValueError("mesh file is missing the 'nv nc' header")
    try:
        nv, nc = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise ValueError("malformed vertex/cell counts") from exc
    need = 2 + 2 * nv + 3 * nc
    if len(tokens) != need:
        raise ValueError(f"expected {need} tokens for nv={nv}, nc={nc}, found {len(tokens)}")
    try:
        values = np.array(tokens[2:2 + 2 * nv], dtype=float).reshape(nv, 2)
    except ValueError as exc:
        raise ValueError("malformed vertex coordinates") from exc
    try:
        cells = np.array(tokens[2 + 2 * nv:], dtype=int).reshape(nc, 3)
    except ValueError as exc:
        raise ValueError("malformed cell connectivity") from exc
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise ValueError("vertex index out of range")
    return Mesh(values, cells)


def save_mesh(mesh, path):
    """Write the plain-text format: 'nv nc', vertex lines, cell lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_cells}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.cells:
            fh.write(f"{a} {b} {c}\n")


__all__ = [
    "Mesh", "Facet", "TracePoints", "facet_trace_points",
    "build_structured", "load_mesh", "save_mesh",
]
