"""Linear solvers and the nodal auxiliary-space preconditioner.

H(d) systems are solved by sparse LU or by preconditioned CG; the mixed
Hodge-Laplacian saddle systems by MINRES with a block-diagonal Riesz-map
preconditioner.  The auxiliary-space preconditioner combines a Jacobi
smoother with coarse solves on nodal (vector P1) potential and proxy
spaces transferred by canonical interpolation.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from derham.assembly import assemble_mass, assemble_stiffness, cell_coefficient
from derham.spaces import (
    TRIMMED_P1,
    VECTOR_P1,
    build_space,
    exterior_derivative,
    proxy_ncomp,
)

_DIRECT_CAP = 50_000


class SolverError(Exception):
    pass


@dataclass
class SolveReport:
    method: str
    iterations: int
    relative_residual: float
    seconds: float
    converged: bool


def solve_direct(system):
    """Sparse LU on the reduced system; returns (full solution, report)."""
    a, b = system.reduced()
    if a.shape[0] > _DIRECT_CAP:
        raise SolverError(f"direct solve capped at {_DIRECT_CAP} unknowns")
    t0 = time.perf_counter()
    if a.shape[0] == 0:
        xf = np.zeros(0)
    else:
        xf = spla.splu(a.tocsc()).solve(b)
    dt = time.perf_counter() - t0
    bnorm = np.linalg.norm(b)
    rel = np.linalg.norm(b - a @ xf) / bnorm if bnorm > 0 else 0.0
    return system.expand(xf), SolveReport("direct", 1, rel, dt, rel <= 1e-10)


def solve_cg(system, preconditioner=None, tol=1e-10, max_iters=5000, tag="cg"):
    """Preconditioned conjugate gradients on the reduced SPD system."""
    a, b = system.reduced()
    t0 = time.perf_counter()
    apply_b = preconditioner if preconditioner is not None else (lambda r: r)
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return system.expand(x), SolveReport(tag, 0, 0.0, time.perf_counter() - t0, True)
    z = apply_b(r)
    p = z.copy()
    rz = r @ z
    it = 0
    converged = False
    for it in range(1, max_iters + 1):
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= tol * bnorm:
            converged = True
            break
        z = apply_b(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    rel = np.linalg.norm(b - a @ x) / bnorm
    return system.expand(x), SolveReport(tag, it, rel, time.perf_counter() - t0, converged)


def _p1_interpolation_matrix(mesh, k, space_aux):
    """Canonical interpolation of vector-P1 proxies into trimmed k-forms.

    Edge dofs use the trapezoidal tangential integral (exact for P1);
    face dofs the centroid normal flux.  Returns a sparse matrix of shape
    (#k-simplices, aux dofs).
    """
    nv = mesh.n_vertices
    simps = mesh.simplices(k)
    rows, cols, vals = [], [], []
    if k == 0:
        return sp.identity(nv, format="csr")
    if k == 1:
        for e, (i, j) in enumerate(simps):
            t = mesh.vertices[j] - mesh.vertices[i]
            for c in range(mesh.dim):
                for v in (i, j):
                    rows.append(e)
                    cols.append(c * nv + v)
                    vals.append(0.5 * t[c])
    elif k == 2 and mesh.dim == 3:
        # use the dof orientation of ascending-ordered faces: the cross
        # product of the edge vectors has length 2*area
        for fidx, f in enumerate(simps):
            v0, v1, v2 = mesh.vertices[f]
            cr = np.cross(v1 - v0, v2 - v0)
            for c in range(3):
                for v in f:
                    rows.append(fidx)
                    cols.append(c * nv + v)
                    vals.append(cr[c] / 6.0)
    else:
        raise SolverError(f"no nodal interpolation for k={k}, n={mesh.dim}")
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(simps), space_aux.n_dofs))


def build_hx_preconditioner(mesh, k, eps=1.0, kappa=1.0, gamma=None):
    """Auxiliary-space preconditioner for eps (du,dv) + kappa (u,v) on k-forms.

    B = diag(A)^-1 + T_pot G_pot^-1 T_pot^T + T_vec G_vec^-1 T_vec^T with
    T_pot = D_{k-1} E_{k-1} (potential/kernel correction, weight kappa) and
    T_vec = E_k (regular correction, weight eps + kappa); the coarse blocks
    are assembled H1 operators on nodal vector spaces and factorized once.
    Returns a function applying B to reduced residual vectors.
    """
    use_gamma = gamma not in (None, "none")
    space = build_space(mesh, k, TRIMMED_P1, gamma=use_gamma)
    a = assemble_stiffness(space, weight=eps) + assemble_mass(space, kappa)
    free = space.free
    a_red = a[free][:, free].tocsr()
    inv_diag = 1.0 / a_red.diagonal()

    eps_c = cell_coefficient(mesh, eps)
    kap_c = cell_coefficient(mesh, kappa)

    solves = []

    # regular (vector P1) correction on the same form degree
    aux = build_space(mesh, k, VECTOR_P1, gamma=use_gamma)
    t_vec = _p1_interpolation_matrix(mesh, k, aux)[free][:, aux.free]
    g_vec = assemble_stiffness(aux, weight=eps_c) + assemble_mass(aux, kap_c)
    g_vec = g_vec[aux.free][:, aux.free].tocsc()
    solves.append((t_vec.tocsr(), spla.splu(g_vec)))

    # potential correction through the exact sequence (k >= 1): the
    # operator acts as kappa M on the range of D_{k-1}, so transfer the
    # residual to the trimmed (k-1)-space and solve a kappa-weighted H(d)
    # problem there.
    if k >= 1:
        pot = build_space(mesh, k - 1, TRIMMED_P1, gamma=use_gamma)
        d = exterior_derivative(pot)
        t_pot = d[free][:, pot.free]
        g_pot = assemble_stiffness(pot, weight=kap_c) + assemble_mass(pot, kap_c)
        g_pot = g_pot[pot.free][:, pot.free].tocsc()
        solves.append((t_pot.tocsr(), spla.splu(g_pot)))

    def apply(r):
        x = inv_diag * r
        for t, lu in solves:
            if t.shape[1]:
                x = x + t @ lu.solve(t.T @ r)
        return x

    return apply


def spectral_interval(system, preconditioner, probes=200, seed=0):
    """Estimated (lambda_min, lambda_max) of the preconditioned operator.

    Power iteration on B A gives lambda_max; shifted power iteration on
    (lambda_max I - B A) gives lambda_min.  B A is symmetric in the
    A-inner product, so Rayleigh quotients use A-weighted pairings.
    """
    a, _ = system.reduced()
    n = a.shape[0]
    rng = np.random.default_rng(seed)

    def rayleigh(op):
        x = rng.standard_normal(n)
        lam = 0.0
        for _ in range(probes):
            y = op(x)
            ay = a @ y
            denom = x @ (a @ x)
            lam = (x @ ay) / denom
            x = y / np.linalg.norm(y)
        return lam

    lam_max = rayleigh(lambda v: preconditioner(a @ v))
    shift = 1.05 * lam_max
    lam_shift = rayleigh(lambda v: shift * v - preconditioner(a @ v))
    return shift - lam_shift, lam_max


def hodge_riesz_preconditioner(system, space_s, space_u):
    """Block-diagonal H(d)-norm preconditioner for the mixed saddle system."""
    off = system.blocks[0]
    blocks = []
    for space_ in (space_s, space_u):
        m = assemble_mass(space_)
        if space_.k < space_.mesh.dim:
            d = exterior_derivative(space_)
            mk = assemble_mass(build_space(space_.mesh, space_.k + 1, TRIMMED_P1))
            m = m + d.T @ mk @ d
        blocks.append(m.tocsr())
    full = sp.block_diag(blocks, format="csr")
    red = full[system.free][:, system.free].tocsc()
    lu = spla.splu(red)
    return lu.solve


def solve_minres(system, preconditioner=None, tol=1e-10, max_iters=5000, tag="minres"):
    """Preconditioned MINRES on the reduced symmetric indefinite system."""
    a, b = system.reduced()
    t0 = time.perf_counter()
    n = a.shape[0]
    count = {"it": 0}

    def cb(_):
        count["it"] += 1

    m = None
    if preconditioner is not None:
        m = spla.LinearOperator((n, n), matvec=preconditioner)
    xf, info = spla.minres(a, b, rtol=tol, maxiter=max_iters, M=m, callback=cb)
    bnorm = np.linalg.norm(b)
    rel = np.linalg.norm(b - a @ xf) / bnorm if bnorm > 0 else 0.0
    return system.expand(xf), SolveReport(
        tag, count["it"], rel, time.perf_counter() - t0, info == 0
    )


def solve(system, method="auto", preconditioner=None, tol=1e-10, max_iters=5000):
    """Dispatch: 'direct', 'cg', 'minres', or 'auto' (direct, else cg)."""
    if method == "auto":
        n = len(system.free)
        method = "direct" if n <= _DIRECT_CAP else "cg"
    if method == "direct":
        return solve_direct(system)
    if method == "cg":
        return solve_cg(system, preconditioner, tol=tol, max_iters=max_iters)
    if method == "minres":
        return solve_minres(system, preconditioner, tol=tol, max_iters=max_iters)
    raise SolverError(f"unknown method {method!r}")
