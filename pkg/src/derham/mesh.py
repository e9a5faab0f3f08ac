"""Conforming simplicial meshes in 2D/3D with tagged bisection refinement.

Cells carry two vertex orderings: the sorted order (ascending global
indices) fixes orientations of the simplicial complex, while the stored
refinement order plus a Maubach tag drives bisection.  Structured meshes
come from Kuhn/Freudenthal splits, which are strongly compatible with the
tagged bisection, so conforming closure always terminates.
"""

from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np

from derham.quadrature import simplex_measure

INTERIOR = "interior"
GAMMA_ESSENTIAL = "essential"
GAMMA_NATURAL = "natural"

_CLOSURE_CAP = 200


@dataclass
class FaceGeometry:
    """Geometry of one skeleton face."""

    face_id: int
    normal: np.ndarray
    measure: float
    diameter: float


class MeshError(Exception):
    pass


class SimplicialMesh:
    """Simplicial complex in dimension 2 or 3.

    Parameters
    ----------
    vertices : (N, n) array of coordinates.
    cells : (M, n+1) int array, vertex order is the refinement order.
    tags : per-cell Maubach tag in 1..n (default n, correct for Kuhn cells).
    generation : per-cell refinement generation (default 0).
    gamma : boundary selector, see :func:`mark_gamma`.
    """

    def __init__(self, vertices, cells, tags=None, generation=None, gamma=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells_ordered = np.asarray(cells, dtype=int)
        self.dim = self.vertices.shape[1]
        if self.dim not in (2, 3):
            raise MeshError(f"unsupported mesh dimension {self.dim}")
        if self.cells_ordered.shape[1] != self.dim + 1:
            raise MeshError("cell arity does not match dimension")
        m = len(self.cells_ordered)
        self.tags = np.full(m, self.dim, dtype=int) if tags is None else np.asarray(tags, dtype=int)
        self.generation = (
            np.zeros(m, dtype=int) if generation is None else np.asarray(generation, dtype=int)
        )
        self.gamma = gamma
        self._build_complex()
        self._build_geometry()
        self._apply_gamma()

    # -- complex enumeration -------------------------------------------------

    def _build_complex(self):
        n = self.dim
        cells_sorted = np.sort(self.cells_ordered, axis=1)
        self._simplices = {0: np.arange(len(self.vertices))[:, None], n: cells_sorted}
        for d in range(1, n):
            seen = set()
            for cell in cells_sorted:
                for comb in combinations(cell.tolist(), d + 1):
                    seen.add(comb)
            self._simplices[d] = np.array(sorted(seen), dtype=int)
        self._index = {}
        for d in range(n + 1):
            self._index[d] = {tuple(s): i for i, s in enumerate(self._simplices[d])}

        # face -> adjacent cells
        nf = len(self._simplices[n - 1])
        adj = [[] for _ in range(nf)]
        for c, cell in enumerate(cells_sorted):
            for j in range(n + 1):
                face = tuple(np.delete(cell, j))
                adj[self._index[n - 1][face]].append(c)
        self.cell_of_face = [tuple(a) for a in adj]
        for f, a in enumerate(self.cell_of_face):
            if len(a) not in (1, 2):
                raise MeshError(f"face {f} adjacent to {len(a)} cells; mesh not conforming")
        self.boundary_tag = np.array(
            [INTERIOR if len(a) == 2 else GAMMA_NATURAL for a in self.cell_of_face],
            dtype=object,
        )

        # vertex -> cells
        patches = [[] for _ in range(len(self.vertices))]
        for c, cell in enumerate(cells_sorted):
            for v in cell:
                patches[v].append(c)
        self._vertex_cells = [tuple(p) for p in patches]

    def _build_geometry(self):
        n = self.dim
        cells = self._simplices[n]
        verts = self.vertices
        self.cell_volumes = np.array([simplex_measure(verts[c]) for c in cells])
        self.cell_diameters = np.array(
            [max(np.linalg.norm(verts[a] - verts[b]) for a, b in combinations(c, 2)) for c in cells]
        )
        # orientation sign of the ascending-order simplex
        self.orientation = np.array(
            [np.sign(np.linalg.det(verts[c[1:]] - verts[c[0]])) for c in cells]
        )
        faces = self._simplices[n - 1]
        self.face_measures = np.array([simplex_measure(verts[f]) for f in faces])
        if n == 2:
            self.face_diameters = self.face_measures.copy()
        else:
            self.face_diameters = np.array(
                [
                    max(np.linalg.norm(verts[a] - verts[b]) for a, b in combinations(f, 2))
                    for f in faces
                ]
            )
        self.face_normals = np.array([self._face_normal(f) for f in range(len(faces))])

    def _face_normal(self, f):
        """Unit normal; outward on boundary, lower->higher cell id inside."""
        n = self.dim
        face = self._simplices[n - 1][f]
        cell = self._simplices[n][self.cell_of_face[f][0]]
        fverts = self.vertices[face]
        if n == 2:
            t = fverts[1] - fverts[0]
            nu = np.array([t[1], -t[0]])
        else:
            nu = np.cross(fverts[1] - fverts[0], fverts[2] - fverts[0])
        nu = nu / np.linalg.norm(nu)
        opp = [v for v in cell if v not in face][0]
        if nu @ (self.vertices[opp] - fverts[0]) > 0:
            nu = -nu  # point away from the first (lowest-id) adjacent cell
        return nu

    def _apply_gamma(self):
        if self.gamma is None:
            return
        sel = _resolve_selector(self.gamma)
        n = self.dim
        for f in range(len(self._simplices[n - 1])):
            if self.boundary_tag[f] == INTERIOR:
                continue
            fverts = self.vertices[self._simplices[n - 1][f]]
            self.boundary_tag[f] = GAMMA_ESSENTIAL if sel(fverts) else GAMMA_NATURAL

    # -- queries --------------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells_ordered)

    def simplices(self, d):
        """(count, d+1) array of d-simplices, ascending vertex order, lexsorted."""
        return self._simplices[d]

    def simplex_index(self, d):
        """Map from sorted vertex tuple to simplex id."""
        return self._index[d]

    def n_simplices(self, d):
        return len(self._simplices[d])

    def euler_characteristic(self):
        return sum((-1) ** d * self.n_simplices(d) for d in range(self.dim + 1))

    def shape_regularity(self):
        """max over cells of circumradius / inradius."""
        worst = 0.0
        for c in self._simplices[self.dim]:
            worst = max(worst, _radius_ratio(self.vertices[c]))
        return worst

    def vertex_patch(self, v):
        """Cell ids of the support of the hat function at vertex v."""
        if not 0 <= v < self.n_vertices:
            raise MeshError(f"invalid vertex id {v}")
        return self._vertex_cells[v]

    def skeleton(self):
        """FaceGeometry list for interior faces and non-essential boundary."""
        out = []
        for f in range(self.n_simplices(self.dim - 1)):
            if self.boundary_tag[f] == GAMMA_ESSENTIAL:
                continue
            out.append(
                FaceGeometry(f, self.face_normals[f], self.face_measures[f], self.face_diameters[f])
            )
        return out

    def gamma_simplices(self, d):
        """Ids of d-simplices contained in the closure of Gamma."""
        n = self.dim
        in_gamma = set()
        for f in range(self.n_simplices(n - 1)):
            if self.boundary_tag[f] != GAMMA_ESSENTIAL:
                continue
            face = self._simplices[n - 1][f]
            if d == n - 1:
                in_gamma.add(self._index[d][tuple(face)])
            else:
                for comb in combinations(face.tolist(), d + 1):
                    in_gamma.add(self._index[d][comb])
        return in_gamma

    def barycentric_gradients(self):
        """(M, n+1, n) array of hat-function gradients per cell (sorted order)."""
        if not hasattr(self, "_bary_grads"):
            n = self.dim
            grads = np.empty((self.n_cells, n + 1, n))
            for c, cell in enumerate(self._simplices[n]):
                pts = self.vertices[cell]
                mat = np.hstack([np.ones((n + 1, 1)), pts])
                inv = np.linalg.inv(mat)
                grads[c] = inv[1:, :].T
            self._bary_grads = grads
        return self._bary_grads

    # -- refinement -----------------------------------------------------------

    def bisect(self, marked):
        """Bisect marked cells plus conforming closure; returns a new mesh."""
        n = self.dim
        verts = [tuple(v) for v in self.vertices]
        cells = [tuple(c) for c in self.cells_ordered]
        tags = list(self.tags)
        gen = list(self.generation)
        midpoints = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                mid = tuple(
                    0.5 * (np.asarray(verts[a], dtype=float) + np.asarray(verts[b], dtype=float))
                )
                verts.append(mid)
                midpoints[key] = len(verts) - 1
            return midpoints[key]

        def bisect_cell(ci):
            cell, d = cells[ci], tags[ci]
            z = midpoint(cell[0], cell[d])
            newtag = d - 1 if d > 1 else n
            child1 = cell[:d] + (z,) + cell[d + 1 :]
            child2 = cell[1 : d + 1] + (z,) + cell[d + 1 :]
            cells[ci] = child1
            tags[ci] = newtag
            gen[ci] += 1
            cells.append(child2)
            tags.append(newtag)
            gen.append(gen[ci])

        for ci in sorted(set(marked)):
            if not 0 <= ci < self.n_cells:
                raise MeshError(f"invalid cell id {ci}")
        for ci in sorted(set(marked)):
            bisect_cell(ci)

        for _ in range(_CLOSURE_CAP):
            hanging = [
                ci
                for ci in range(len(cells))
                if any(
                    (min(a, b), max(a, b)) in midpoints for a, b in combinations(cells[ci], 2)
                )
            ]
            if not hanging:
                break
            for ci in hanging:
                bisect_cell(ci)
        else:
            raise MeshError("conforming closure did not terminate")

        return SimplicialMesh(
            np.asarray(verts, dtype=float),
            np.asarray(cells, dtype=int),
            tags=np.asarray(tags, dtype=int),
            generation=np.asarray(gen, dtype=int),
            gamma=self.gamma,
        )

    def uniform_refine(self):
        """One round of bisection of every cell (plus closure)."""
        return self.bisect(range(self.n_cells))

    # -- io ---------------------------------------------------------------

    def save(self, path):
        n = self.dim
        with open(path, "w") as fh:
            fh.write(f"dim {n}\n")
            fh.write(f"vertices {self.n_vertices}\n")
            for v in self.vertices:
                fh.write(" ".join(repr(float(x)) for x in v) + "\n")
            fh.write(f"cells {self.n_cells}\n")
            for c, t, g in zip(self.cells_ordered, self.tags, self.generation):
                fh.write(" ".join(str(int(i)) for i in c) + f" {int(t)} {int(g)}\n")
            bfaces = [
                (f, self.boundary_tag[f])
                for f in range(self.n_simplices(n - 1))
                if self.boundary_tag[f] != INTERIOR
            ]
            fh.write(f"boundary {len(bfaces)}\n")
            for f, tag in bfaces:
                face = self._simplices[n - 1][f]
                fh.write(" ".join(str(int(i)) for i in face) + f" {tag}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            tokens = fh.read().split("\n")
        it = iter(t for t in tokens if t.strip())
        line = next(it).split()
        if line[0] != "dim":
            raise MeshError("bad header")
        n = int(line[1])
        nv = int(next(it).split()[1])
        verts = [[float(x) for x in next(it).split()] for _ in range(nv)]
        nc = int(next(it).split()[1])
        cells, tags, gen = [], [], []
        for _ in range(nc):
            row = next(it).split()
            cells.append([int(x) for x in row[: n + 1]])
            tags.append(int(row[n + 1]))
            gen.append(int(row[n + 2]))
        mesh = cls(np.asarray(verts), np.asarray(cells), tags=tags, generation=gen)
        nb = int(next(it).split()[1])
        for _ in range(nb):
            row = next(it).split()
            face = tuple(sorted(int(x) for x in row[:n]))
            mesh.boundary_tag[mesh._index[n - 1][face]] = row[n]
        return mesh


def _radius_ratio(pts):
    """Circumradius over inradius of a simplex given by vertex rows."""
    pts = np.asarray(pts, dtype=float)
    m = len(pts) - 1
    # circumcenter from |x - p_i|^2 equal for all i
    a = 2.0 * (pts[1:] - pts[0])
    b = np.einsum("ij,ij->i", pts[1:], pts[1:]) - pts[0] @ pts[0]
    center = np.linalg.solve(a, b)
    rcirc = np.linalg.norm(pts[0] - center)
    vol = simplex_measure(pts)
    surf = sum(simplex_measure(np.delete(pts, j, axis=0)) for j in range(m + 1))
    rin = m * vol / surf
    return rcirc / rin


def _resolve_selector(selector):
    """Turn a Gamma selector into a predicate on face vertex coordinates.

    Selectors: 'whole-boundary', 'none', or a coordinate-plane string such
    as 'x=0', 'y=1', 'z=-1'.  A callable taking the (n, dim) face vertex
    array is passed through.
    """
    if callable(selector):
        return selector
    if selector in ("whole-boundary", "all"):
        return lambda fverts: True
    if selector in ("none", None):
        return lambda fverts: False
    axis_names = {"x": 0, "y": 1, "z": 2}
    try:
        name, value = selector.split("=")
        axis = axis_names[name.strip()]
        val = float(value)
    except (ValueError, KeyError) as exc:
        raise MeshError(f"unknown gamma selector {selector!r}") from exc
    return lambda fverts: bool(np.all(np.abs(fverts[:, axis] - val) < 1e-12))


def mark_gamma(mesh, selector):
    """Tag essential-boundary faces by a selector; returns the mesh."""
    mesh.gamma = selector
    # reset then re-apply
    for f in range(mesh.n_simplices(mesh.dim - 1)):
        if mesh.boundary_tag[f] != INTERIOR:
            mesh.boundary_tag[f] = GAMMA_NATURAL
    mesh._apply_gamma()
    return mesh


# -- structured generators -----------------------------------------------


def _grid_mesh(corner, shape, spacing, keep, gamma=None):
    """Kuhn-triangulated box grid.

    corner: lower corner; shape: cells per axis; keep(center) -> bool
    filters subcells (for L-shape / Fichera).
    """
    naxes = len(shape)
    vshape = tuple(s + 1 for s in shape)
    vid = -np.ones(vshape, dtype=int)
    verts = []
    cells = []

    def vertex(idx):
        if vid[idx] < 0:
            vid[idx] = len(verts)
            verts.append([corner[a] + spacing * idx[a] for a in range(naxes)])
        return vid[idx]

    for cell_idx in np.ndindex(*shape):
        center = np.array([corner[a] + spacing * (cell_idx[a] + 0.5) for a in range(naxes)])
        if not keep(center):
            continue
        for perm in permutations(range(naxes)):
            path = [tuple(cell_idx)]
            for a in perm:
                prev = path[-1]
                path.append(tuple(p + (1 if b == a else 0) for b, p in enumerate(prev)))
            cells.append([vertex(idx) for idx in path])
    return SimplicialMesh(np.asarray(verts, dtype=float), np.asarray(cells, dtype=int), gamma=gamma)


def generate_structured(domain, m, gamma=None):
    """Structured Kuhn mesh of a named domain with m subdivisions per edge."""
    if m < 1:
        raise MeshError("m must be >= 1")
    if domain == "unit-square":
        return _grid_mesh((0.0, 0.0), (m, m), 1.0 / m, lambda c: True, gamma)
    if domain == "unit-cube":
        return _grid_mesh((0.0, 0.0, 0.0), (m, m, m), 1.0 / m, lambda c: True, gamma)
    if domain == "l-shape":
        return _grid_mesh(
            (-1.0, -1.0),
            (2 * m, 2 * m),
            1.0 / m,
            lambda c: not (c[0] > 0 and c[1] < 0),
            gamma,
        )
    if domain == "fichera":
        return _grid_mesh(
            (-1.0, -1.0, -1.0),
            (2 * m, 2 * m, 2 * m),
            1.0 / m,
            lambda c: not (c[0] > 0 and c[1] > 0 and c[2] > 0),
            gamma,
        )
    raise MeshError(f"unknown domain {domain!r}")
