"""Weighted mass/stiffness assembly, H(d) systems, Hodge-Laplacian saddle systems.

Coefficients eps and kappa are piecewise constant per cell, so element
integrands are polynomial and the order-4 quadrature is exact.  Essential
boundary conditions on Gamma are imposed by symmetric elimination.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from derham.quadrature import simplex_rule
from derham.spaces import (
    TRIMMED_P1,
    PIECEWISE_P0,
    VECTOR_P1,
    build_space,
    exterior_derivative,
    local_simplices,
    whitney_values,
)

HD_POSITIVE = "hd"
HODGE_LAPLACIAN = "hodge"
REACTION_DIFFUSION = "reaction-diffusion"

# (domain contractible, gamma) pairs with trivial harmonic forms for the
# mixed problem; k = n additionally requires gamma = none (otherwise the
# constants are harmonic).
_HODGE_GAMMA_WHITELIST = (None, "none", "whole-boundary", "all")


class AssemblyError(Exception):
    pass


@dataclass
class ProblemSpec:
    """Problem data for H(d), Hodge-Laplacian, or reaction-diffusion runs."""

    kind: str
    k: int
    eps: object = 1.0  # scalar, per-cell array, or callable of barycenters
    kappa: object = 1.0
    f: object = None  # callable proxy load
    f_codiff: object = None  # analytic coderivative of f (optional)
    f_diff: object = None  # analytic exterior derivative of f (optional)
    gamma: object = None
    manufactured: dict = field(default_factory=dict)

    def validate(self, mesh):
        n = mesh.dim
        if self.kind == HODGE_LAPLACIAN:
            if not 1 <= self.k <= n:
                raise AssemblyError("hodge-laplacian needs 1 <= k <= n")
            if self.gamma not in _HODGE_GAMMA_WHITELIST:
                raise AssemblyError(
                    f"gamma {self.gamma!r} not whitelisted for trivial harmonics"
                )
            if self.k == n and self.gamma in ("whole-boundary", "all"):
                raise AssemblyError("k = n with full Gamma has constant harmonic forms")
        elif self.kind in (HD_POSITIVE, REACTION_DIFFUSION):
            if not 0 <= self.k <= n - 1:
                raise AssemblyError("H(d) problem needs 0 <= k <= n-1")
        else:
            raise AssemblyError(f"unknown problem kind {self.kind!r}")
        for w in (cell_coefficient(mesh, self.eps), cell_coefficient(mesh, self.kappa)):
            if np.any(w <= 0):
                raise AssemblyError("coefficients must be positive on every cell")


@dataclass
class LinearSystem:
    """Sparse symmetric system with a free/constrained dof partition."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    blocks: tuple = ()  # dof offsets of block boundaries for saddle systems

    def reduced(self):
        a = self.matrix[self.free][:, self.free]
        return a.tocsr(), self.rhs[self.free]

    def expand(self, xf):
        x = np.zeros(self.matrix.shape[0])
        x[self.free] = xf
        return x

    def residual_norm(self, x):
        r = self.rhs[self.free] - (self.matrix @ x)[self.free]
        return np.linalg.norm(r)


def cell_coefficient(mesh, value):
    """Per-cell coefficient array from scalar / array / callable."""
    if callable(value):
        n = mesh.dim
        bary = np.array(
            [mesh.vertices[c].mean(axis=0) for c in mesh.simplices(n)]
        )
        return np.asarray(value(bary), dtype=float)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_cells, float(arr))
    if arr.shape != (mesh.n_cells,):
        raise AssemblyError("coefficient array has wrong length")
    return arr


def _scalar_p1_matrices(mesh, weight):
    """Weighted scalar P1 mass and stiffness (shared by vector spaces)."""
    w = cell_coefficient(mesh, weight)
    n = mesh.dim
    pts, qw = simplex_rule(n, 4)
    nv = mesh.n_vertices
    rows, cols, mvals, kvals = [], [], [], []
    grads = mesh.barycentric_gradients()
    for c, cell in enumerate(mesh.simplices(n)):
        vol = mesh.cell_volumes[c]
        mloc = (pts.T * qw) @ pts * vol * w[c]
        kloc = grads[c] @ grads[c].T * vol * w[c]
        for a in range(n + 1):
            for b in range(n + 1):
                rows.append(cell[a])
                cols.append(cell[b])
                mvals.append(mloc[a, b])
                kvals.append(kloc[a, b])
    m = sp.csr_matrix((mvals, (rows, cols)), shape=(nv, nv))
    k = sp.csr_matrix((kvals, (rows, cols)), shape=(nv, nv))
    return m, k


def assemble_mass(space, weight=1.0, degree=4):
    """Weighted L2 mass matrix of a form space."""
    mesh = space.mesh
    w = cell_coefficient(mesh, weight)
    if space.family == PIECEWISE_P0:
        return sp.diags(mesh.cell_volumes * w).tocsr()
    if space.family == VECTOR_P1:
        m, _ = _scalar_p1_matrices(mesh, weight)
        return sp.kron(sp.eye(space.ncomp), m).tocsr()
    n, k = mesh.dim, space.k
    pts, qw = simplex_rule(n, degree)
    rows, cols, vals = [], [], []
    for c in range(mesh.n_cells):
        ids, _ = local_simplices(mesh, k, c)
        wv = whitney_values(mesh, k, c, pts)  # (nloc, npts[, n])
        vol = mesh.cell_volumes[c]
        if wv.ndim == 2:
            loc = (wv * qw) @ wv.T
        else:
            loc = np.einsum("apc,p,bpc->ab", wv, qw, wv)
        loc *= vol * w[c]
        for a, ga in enumerate(ids):
            for b, gb in enumerate(ids):
                rows.append(ga)
                cols.append(gb)
                vals.append(loc[a, b])
    return sp.csr_matrix((vals, (rows, cols)), shape=(space.n_dofs, space.n_dofs))


def assemble_stiffness(space_k, space_kp1=None, weight=1.0):
    """Semi-definite form (eps d u, d v) as D_k^T M_{k+1}(eps) D_k."""
    mesh = space_k.mesh
    if space_k.family == VECTOR_P1:
        _, kmat = _scalar_p1_matrices(mesh, weight)
        return sp.kron(sp.eye(space_k.ncomp), kmat).tocsr()
    if space_kp1 is None:
        space_kp1 = build_space(mesh, space_k.k + 1, TRIMMED_P1)
    if space_kp1.mesh is not mesh or space_kp1.k != space_k.k + 1:
        raise AssemblyError("spaces do not form a complex pair")
    d = exterior_derivative(space_k)
    m = assemble_mass(space_kp1, weight)
    return (d.T @ m @ d).tocsr()


def assemble_load(space, f, degree=4):
    """Load vector b_i = (f, phi_i) by quadrature."""
    mesh = space.mesh
    b = np.zeros(space.n_dofs)
    if f is None:
        return b
    n = mesh.dim
    pts, qw = simplex_rule(n, degree)
    if space.family == VECTOR_P1:
        nv = mesh.n_vertices
        ncomp = space.ncomp
        for c, cell in enumerate(mesh.simplices(n)):
            x = pts @ mesh.vertices[cell]
            fv = np.atleast_2d(np.asarray(f(x), dtype=float).T).T  # (npts, ncomp)
            vol = mesh.cell_volumes[c]
            loc = (pts.T * qw) @ fv * vol  # (n+1, ncomp)
            for comp in range(ncomp):
                b[comp * nv + cell] += loc[:, comp]
        return b
    k = space.k
    for c in range(mesh.n_cells):
        ids, _ = local_simplices(mesh, k, c)
        cell = mesh.simplices(n)[c]
        x = pts @ mesh.vertices[cell]
        fv = np.asarray(f(x), dtype=float)
        wv = whitney_values(mesh, k, c, pts)
        vol = mesh.cell_volumes[c]
        if wv.ndim == 2:
            loc = (wv * qw) @ fv
        else:
            loc = np.einsum("apc,p,pc->a", wv, qw, fv)
        b[ids] += vol * loc
    return b


def assemble_hd(problem, mesh, degree=4):
    """System for (eps d u, d v) + (kappa u, v) = (f, v) on trimmed k-forms."""
    problem.validate(mesh)
    if problem.kind not in (HD_POSITIVE, REACTION_DIFFUSION):
        raise AssemblyError("assemble_hd needs an H(d) problem")
    gamma = problem.gamma not in (None, "none")
    space = build_space(mesh, problem.k, TRIMMED_P1, gamma=gamma)
    a = assemble_stiffness(space, weight=problem.eps) + assemble_mass(
        space, problem.kappa
    )
    b = assemble_load(space, problem.f, degree=degree)
    system = LinearSystem(a.tocsr(), b, space.free)
    return system, space


def assemble_hodge_laplacian(problem, mesh, degree=4):
    """Symmetric indefinite block system of the mixed Hodge Laplacian.

    Rows: [-M_{k-1}, D^T M_k; M_k D, D_k^T M_{k+1} D_k]; the sigma row is
    negated relative to the variational form to make the matrix symmetric.
    """
    problem.validate(mesh)
    if problem.kind != HODGE_LAPLACIAN:
        raise AssemblyError("assemble_hodge_laplacian needs kind 'hodge'")
    n, k = mesh.dim, problem.k
    gamma = problem.gamma not in (None, "none")
    space_s = build_space(mesh, k - 1, TRIMMED_P1, gamma=gamma)
    space_u = build_space(mesh, k, TRIMMED_P1, gamma=gamma)
    m_s = assemble_mass(space_s)
    m_u = assemble_mass(space_u)
    d = exterior_derivative(space_s)
    coupling = (m_u @ d).tocsr()
    if k < n:
        stiff = assemble_stiffness(space_u)
    else:
        stiff = sp.csr_matrix((space_u.n_dofs, space_u.n_dofs))
    a = sp.bmat([[-m_s, coupling.T], [coupling, stiff]], format="csr")
    b = np.concatenate(
        [np.zeros(space_s.n_dofs), assemble_load(space_u, problem.f, degree=degree)]
    )
    free = np.concatenate([space_s.free, space_s.n_dofs + space_u.free])
    system = LinearSystem(a, b, free, blocks=(space_s.n_dofs,))
    return system, space_s, space_u


def split_hodge_solution(system, space_s, space_u, x):
    """Split a full Hodge solution vector into (sigma, u) coefficient arrays."""
    off = system.blocks[0]
    return x[:off], x[off:]


def dump_matrix_market(system, path):
    """Write the reduced system matrix in Matrix Market format."""
    from scipy.io import mmwrite

    a, _ = system.reduced()
    mmwrite(path, a)
