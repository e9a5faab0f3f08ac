"""Lowest-order discrete k-form spaces and their proxy fields.

Degrees of freedom of the trimmed family are integrals of traces over
k-simplices taken in ascending vertex order, so the exterior derivative
is the signed incidence matrix and d o d = 0 holds in integer arithmetic.
Proxy conventions (n = 3): 1-forms are vectors with tangential edge DOFs,
2-forms vectors with normal face DOFs, 3-forms scalars with signed cell
integrals.  In 2D the complex is grad -> rot.
"""

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from derham.mesh import SimplicialMesh
from derham.quadrature import simplex_rule, map_points

TRIMMED_P1 = "trimmed-p1"
LAGRANGE_P1 = "lagrange-p1"
PIECEWISE_P0 = "p0"
VECTOR_P1 = "vector-p1"


class SpaceError(Exception):
    pass


def proxy_ncomp(n, k):
    """Number of scalar proxy components of a k-form in dimension n."""
    if k in (0, n):
        return 1
    return n


@dataclass
class FormSpace:
    """A discrete space of k-forms on a mesh."""

    mesh: SimplicialMesh
    k: int
    family: str
    gamma: bool
    n_dofs: int
    constrained: np.ndarray  # sorted array of constrained dof ids

    @property
    def free(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    @property
    def ncomp(self):
        if self.family == VECTOR_P1:
            return comb(self.mesh.dim, self.k)
        return proxy_ncomp(self.mesh.dim, self.k)

    def dof_entity(self, dof):
        """Carrier simplex (vertex tuple) or (component, vertex) of a dof."""
        if self.family == VECTOR_P1:
            return divmod(dof, self.mesh.n_vertices)
        if self.family == PIECEWISE_P0:
            return tuple(self.mesh.simplices(self.mesh.dim)[dof])
        return tuple(self.mesh.simplices(self.k)[dof])


@dataclass
class DiscreteField:
    """Coefficient vector over a form space."""

    space: FormSpace
    coeffs: np.ndarray

    def save(self, path):
        with open(path, "w") as fh:
            for i, c in enumerate(self.coeffs):
                fh.write(f"{i} {repr(float(c))}\n")


def build_space(mesh, k, family=TRIMMED_P1, gamma=False):
    """Construct a discrete space; `gamma` constrains traces on Gamma."""
    n = mesh.dim
    if family in (TRIMMED_P1, LAGRANGE_P1):
        if family == LAGRANGE_P1 and k != 0:
            raise SpaceError("lagrange-p1 is a 0-form space")
        if not 0 <= k <= n:
            raise SpaceError(f"k={k} out of range for n={n}")
        ndofs = mesh.n_simplices(k)
        constrained = np.array(sorted(mesh.gamma_simplices(k)), dtype=int) if gamma and k < n else np.array([], dtype=int)
        return FormSpace(mesh, k, family, gamma, ndofs, constrained)
    if family == PIECEWISE_P0:
        if k != n:
            raise SpaceError("p0 is the n-form space")
        return FormSpace(mesh, k, family, gamma, mesh.n_cells, np.array([], dtype=int))
    if family == VECTOR_P1:
        ncomp = comb(n, k)
        nv = mesh.n_vertices
        if gamma:
            gv = sorted(mesh.gamma_simplices(0))
            constrained = np.array(
                [c * nv + v for c in range(ncomp) for v in gv], dtype=int
            )
        else:
            constrained = np.array([], dtype=int)
        return FormSpace(mesh, k, family, gamma, ncomp * nv, constrained)
    raise SpaceError(f"unknown family {family!r}")


def exterior_derivative(space):
    """Signed incidence matrix D_k from trimmed k-forms to (k+1)-forms."""
    if space.family not in (TRIMMED_P1, LAGRANGE_P1):
        raise SpaceError("exterior derivative defined on the trimmed family")
    mesh, k = space.mesh, space.k
    if k >= mesh.dim:
        raise SpaceError("no exterior derivative beyond top degree")
    lower = mesh.simplex_index(k)
    upper = mesh.simplices(k + 1)
    rows, cols, vals = [], [], []
    for i, simplex in enumerate(upper):
        for j in range(k + 2):
            face = tuple(np.delete(simplex, j))
            rows.append(i)
            cols.append(lower[face])
            vals.append((-1) ** j)
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(upper), mesh.n_simplices(k)), dtype=np.int64
    )


# -- Whitney basis -----------------------------------------------------------


def local_simplices(mesh, k, cell):
    """Global k-simplex ids and local vertex index tuples within a cell."""
    n = mesh.dim
    cellverts = mesh.simplices(n)[cell]
    index = mesh.simplex_index(k)
    combos = list(combinations(range(n + 1), k + 1))
    ids = [index[tuple(cellverts[list(c)])] for c in combos]
    return ids, combos


def whitney_values(mesh, k, cell, bary):
    """Local Whitney basis proxies at barycentric points.

    Returns array of shape (nloc, npts) for scalar proxies or
    (nloc, npts, n) for vector proxies.
    """
    n = mesh.dim
    g = mesh.barycentric_gradients()[cell]  # (n+1, n)
    lam = bary  # (npts, n+1)
    if k == 0:
        return lam.T.copy()
    if k == 1:
        combos = list(combinations(range(n + 1), 2))
        out = np.empty((len(combos), len(bary), n))
        for idx, (a, b) in enumerate(combos):
            out[idx] = np.outer(lam[:, a], g[b]) - np.outer(lam[:, b], g[a])
        return out
    if k == 2 and n == 3:
        combos = list(combinations(range(4), 3))
        out = np.empty((len(combos), len(bary), 3))
        for idx, (a, b, c) in enumerate(combos):
            out[idx] = 2.0 * (
                np.outer(lam[:, a], np.cross(g[b], g[c]))
                + np.outer(lam[:, b], np.cross(g[c], g[a]))
                + np.outer(lam[:, c], np.cross(g[a], g[b]))
            )
        return out
    if k == n:
        vol = mesh.cell_volumes[cell]
        sgn = mesh.orientation[cell]
        return np.full((1, len(bary)), sgn / vol)
    raise SpaceError(f"unsupported (k, n) = ({k}, {n})")


def whitney_derivative(mesh, k, cell):
    """Constant proxy of d(basis) per local Whitney k-form; shape (nloc, dcomp)."""
    n = mesh.dim
    g = mesh.barycentric_gradients()[cell]
    if k == 0:
        return g.copy()  # gradient
    if k == 1 and n == 2:
        combos = list(combinations(range(3), 2))
        # rot(w_ab) = 2 (da_x db_y - da_y db_x); 2-form proxy is the scalar
        return np.array([[2.0 * (g[a][0] * g[b][1] - g[a][1] * g[b][0])] for a, b in combos])
    if k == 1 and n == 3:
        combos = list(combinations(range(4), 2))
        return np.array([2.0 * np.cross(g[a], g[b]) for a, b in combos])
    if k == 2 and n == 3:
        combos = list(combinations(range(4), 3))
        return np.array([[6.0 * g[a] @ np.cross(g[b], g[c])] for a, b, c in combos])
    if k == n:
        nloc = 1
        return np.zeros((nloc, 0))
    raise SpaceError(f"unsupported (k, n) = ({k}, {n})")


def barycentric_coordinates(mesh, cell, x):
    """Barycentric coordinates of physical points x (npts, n) in a cell."""
    n = mesh.dim
    pts = mesh.vertices[mesh.simplices(n)[cell]]
    mat = np.hstack([np.ones((n + 1, 1)), pts])
    aug = np.hstack([np.ones((len(x), 1)), np.asarray(x, dtype=float)])
    return aug @ np.linalg.inv(mat)


def evaluate_proxy(field, cell, bary):
    """Proxy value(s) of a field on a cell at barycentric points."""
    space = field.space
    mesh = space.mesh
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    if space.family in (TRIMMED_P1, LAGRANGE_P1):
        if np.any(bary < -1e-12):
            raise SpaceError("point outside cell")
        ids, _ = local_simplices(mesh, space.k, cell)
        w = whitney_values(mesh, space.k, cell, bary)
        return np.tensordot(field.coeffs[ids], w, axes=(0, 0))
    if space.family == PIECEWISE_P0:
        return np.full(len(bary), field.coeffs[cell])
    if space.family == VECTOR_P1:
        nv = mesh.n_vertices
        cellverts = mesh.simplices(mesh.dim)[cell]
        ncomp = space.ncomp
        nodal = field.coeffs.reshape(ncomp, nv)[:, cellverts]  # (ncomp, n+1)
        vals = bary @ nodal.T  # (npts, ncomp)
        return vals[:, 0] if ncomp == 1 else vals
    raise SpaceError(f"unknown family {space.family!r}")


def evaluate_proxy_derivative(field, cell):
    """Constant proxy of the exterior derivative of a trimmed field on a cell."""
    space = field.space
    if space.family not in (TRIMMED_P1, LAGRANGE_P1):
        raise SpaceError("derivative evaluation needs the trimmed family")
    ids, _ = local_simplices(space.mesh, space.k, cell)
    dw = whitney_derivative(space.mesh, space.k, cell)
    out = field.coeffs[ids] @ dw
    return out[0] if dw.shape[1] == 1 else out


# -- interpolation ------------------------------------------------------------


def _cells_containing(mesh, verts):
    """Cell ids whose vertex set contains all of `verts` (sorted output)."""
    sets = [set(mesh.vertex_patch(v)) for v in verts]
    out = sets[0]
    for s in sets[1:]:
        out = out & s
    return sorted(out)


def _mean_over_simplex(mesh, verts, func, degree=4):
    """Componentwise mean of func over the simplex with given vertex ids."""
    pts, w = simplex_rule(len(verts) - 1, degree)
    x = map_points(mesh.vertices[list(verts)], pts)
    vals = np.atleast_2d(np.asarray(func(x), dtype=float).T).T
    return w @ vals


def _gamma_face_of(mesh, verts):
    """Smallest-id essential boundary face containing all of `verts`, or None."""
    n = mesh.dim
    faces = mesh.simplices(n - 1)
    hits = [
        f
        for f in range(len(faces))
        if mesh.boundary_tag[f] == "essential" and set(verts) <= set(faces[f])
    ]
    return min(hits) if hits else None


def canonical_interpolate(space, v, degree=4):
    """Canonical (integral-trace) interpolation of a callable proxy field."""
    mesh, k, n = space.mesh, space.k, space.mesh.dim
    coeffs = np.zeros(space.n_dofs)
    if space.family == VECTOR_P1:
        nv = mesh.n_vertices
        vals = np.atleast_2d(np.asarray(v(mesh.vertices), dtype=float).T).T
        for c in range(space.ncomp):
            coeffs[c * nv : (c + 1) * nv] = vals[:, c]
        return DiscreteField(space, coeffs)
    for i, simplex in enumerate(mesh.simplices(k)):
        coeffs[i] = _trace_integral(mesh, k, simplex, v, degree)
    return DiscreteField(space, coeffs)


def _trace_integral(mesh, k, simplex, v, degree=4):
    """Integral of the trace of proxy field v over a k-simplex."""
    n = mesh.dim
    verts = mesh.vertices[list(simplex)]
    if k == 0:
        return float(np.asarray(v(verts[None, 0])).reshape(-1)[0])
    pts, w = simplex_rule(k, degree)
    x = map_points(verts, pts)
    vals = np.asarray(v(x), dtype=float)
    from derham.quadrature import simplex_measure

    meas = simplex_measure(verts)
    if k == 1:
        tangent = verts[1] - verts[0]  # integral of v . t, |t| carries measure
        return float(w @ (vals @ tangent))
    if k == 2 and n == 3:
        nu = np.cross(verts[1] - verts[0], verts[2] - verts[0])
        return 0.5 * float(w @ (vals @ nu))
    if k == n:
        sgn = np.sign(np.linalg.det(verts[1:] - verts[0]))
        return float(sgn * meas * (w @ vals))
    raise SpaceError(f"unsupported trace integral (k, n) = ({k}, {n})")


def quasi_interpolate_pih(mesh, k, v, gamma=False, degree=4):
    """Quasi-interpolation into trimmed k-forms via cellwise constant projection.

    Each k-simplex dof integrates the trace of the mean of v over an
    assigned neighbor: the smallest-id adjacent cell, or for simplices on
    Gamma the smallest-id containing Gamma face (so vanishing traces on
    Gamma are preserved exactly).
    """
    n = mesh.dim
    if not 0 <= k <= n - 1:
        raise SpaceError("quasi-interpolation defined for 0 <= k <= n-1")
    space = build_space(mesh, k, TRIMMED_P1, gamma=gamma)
    coeffs = np.zeros(space.n_dofs)
    for i, simplex in enumerate(mesh.simplices(k)):
        sverts = tuple(simplex)
        gface = _gamma_face_of(mesh, sverts) if gamma else None
        if gface is not None:
            coeffs[i] = _gamma_face_dof(mesh, k, sverts, gface, v, degree)
        else:
            cell = _cells_containing(mesh, sverts)[0]
            cellverts = tuple(mesh.simplices(n)[cell])
            mean = _mean_over_simplex(mesh, cellverts, v, degree)
            coeffs[i] = _constant_trace_integral(mesh, k, sverts, mean)
    return DiscreteField(space, coeffs)


def _constant_trace_integral(mesh, k, simplex, const):
    """Integral over a k-simplex of the trace of a constant proxy field."""
    verts = mesh.vertices[list(simplex)]
    if k == 0:
        return float(const[0])
    if k == 1:
        return float(const @ (verts[1] - verts[0]))
    if k == 2 and mesh.dim == 3:
        nu = 0.5 * np.cross(verts[1] - verts[0], verts[2] - verts[0])
        return float(const @ nu)
    raise SpaceError("unsupported constant trace")


def _gamma_face_dof(mesh, k, simplex, gface, v, degree):
    """Dof value using the tangential constant projection on a Gamma face."""
    n = mesh.dim
    fverts = tuple(mesh.simplices(n - 1)[gface])
    mean = _mean_over_simplex(mesh, fverts, v, degree)
    if k == 0:
        return float(mean[0])
    # project the mean onto the face tangent plane before tracing
    coords = mesh.vertices[list(fverts)]
    if n == 3 and k == 1:
        nu = np.cross(coords[1] - coords[0], coords[2] - coords[0])
        nu = nu / np.linalg.norm(nu)
        mean = mean - (mean @ nu) * nu
        everts = mesh.vertices[list(simplex)]
        return float(mean @ (everts[1] - everts[0]))
    if n == 2 and k == 1:
        t = coords[1] - coords[0]
        t = t / np.linalg.norm(t)
        mean = (mean @ t) * t
        everts = mesh.vertices[list(simplex)]
        return float(mean @ (everts[1] - everts[0]))
    if n == 3 and k == 2:
        # trace of a 2-form on its own face: normal component
        nu = np.cross(coords[1] - coords[0], coords[2] - coords[0])
        area = 0.5 * np.linalg.norm(nu)
        nu = nu / np.linalg.norm(nu)

        def normal_comp(x):
            return np.asarray(v(x), dtype=float) @ nu

        m = _mean_over_simplex(mesh, fverts, normal_comp, degree)
        everts = mesh.vertices[list(simplex)]
        nu_e = np.cross(everts[1] - everts[0], everts[2] - everts[0])
        sign = np.sign(nu_e @ nu)
        return float(sign * m[0] * area)
    raise SpaceError("unsupported gamma face dof")


def clement_interpolate(mesh, k, v, gamma=False, degree=4):
    """Componentwise Clement interpolation into vector P1 k-forms.

    Vertex values are means of v over the same assigned neighbor simplex
    as in :func:`quasi_interpolate_pih`, so the two coincide at k = 0.
    """
    space = build_space(mesh, k, VECTOR_P1, gamma=gamma)
    nv = mesh.n_vertices
    ncomp = space.ncomp
    coeffs = np.zeros(space.n_dofs)
    for vert in range(nv):
        gface = _gamma_face_of(mesh, (vert,)) if gamma else None
        if gface is not None:
            sverts = tuple(mesh.simplices(mesh.dim - 1)[gface])
        else:
            cell = _cells_containing(mesh, (vert,))[0]
            sverts = tuple(mesh.simplices(mesh.dim)[cell])
        mean = _mean_over_simplex(mesh, sverts, v, degree)
        for c in range(ncomp):
            coeffs[c * nv + vert] = mean[c]
    return DiscreteField(space, coeffs)
