"""A posteriori error estimators: explicit residual estimators for H(d)
and mixed Hodge-Laplacian problems (standard and parameter-robust weights),
implicit local-patch estimators, and data oscillation.

Volume/jump residuals are split into groups coming from the potential part
(tested through d of lower-degree fields, group 1) and the regular part
(tested directly, group 2).  Interior-face jump terms are shared half/half
between the two adjacent cells; one-sided natural-boundary terms go fully
to their cell.
"""

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from derham.assembly import (
    HD_POSITIVE,
    HODGE_LAPLACIAN,
    REACTION_DIFFUSION,
    cell_coefficient,
)
from derham.mesh import GAMMA_NATURAL
from derham.quadrature import simplex_rule
from derham.spaces import (
    evaluate_proxy,
    evaluate_proxy_derivative,
    barycentric_coordinates,
    proxy_ncomp,
)


class EstimatorError(Exception):
    pass


@dataclass
class EstimatorReport:
    """Per-element indicators with group decomposition (all entries >= 0)."""

    mode: str
    vol1: np.ndarray
    jump1: np.ndarray
    vol2: np.ndarray
    jump2: np.ndarray
    osc: np.ndarray
    groups: dict = dc_field(default_factory=dict)  # extra per-group columns

    @property
    def eta_cell(self):
        return np.sqrt(self.vol1**2 + self.jump1**2 + self.vol2**2 + self.jump2**2)

    @property
    def eta_total(self):
        return float(np.sqrt(np.sum(self.eta_cell**2)))

    @property
    def osc_total(self):
        return float(np.sqrt(np.sum(self.osc**2)))

    def to_csv(self, path):
        extra = sorted(self.groups)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["cell_id", "eta_total", "vol1", "jump1", "vol2", "jump2", "osc"]
                + extra
            )
            eta = self.eta_cell
            for c in range(len(eta)):
                row = [c] + [
                    repr(float(a[c]))
                    for a in (eta, self.vol1, self.jump1, self.vol2, self.jump2, self.osc)
                ]
                row += [repr(float(self.groups[g][c])) for g in extra]
                w.writerow(row)


# -- proxy calculus helpers ----------------------------------------------------


def _trace_star(vals, nu, j, n):
    """Proxy of tr(star v) on a face with unit normal nu for a j-form v.

    1-form -> normal component; 2-form (n=3) -> tangential part (v x nu);
    n-form -> full scalar trace; 0-form -> zero (its star is a volume form).
    """
    vals = np.asarray(vals, dtype=float)
    if j <= 0:
        base = vals if vals.ndim == 1 else vals[..., 0]
        return np.zeros_like(base)
    if j == n:
        return vals
    if j == 1:
        return vals @ nu
    if j == 2 and n == 3:
        return np.cross(vals, nu)
    raise EstimatorError(f"no trace proxy for (j, n) = ({j}, {n})")


def _codiff_from_jacobian(jac, k, n):
    """Constant coderivative proxy of an affine k-form from its Jacobian.

    jac[c, d] = d(component c)/d(x_d).  Supported: k=1 (-div) and k=2, n=3
    (curl) -- the cases appearing in volume residual groups.
    """
    if k == 1:
        return np.array([-np.trace(jac)])
    if k == 2 and n == 3:
        return np.array(
            [jac[2, 1] - jac[1, 2], jac[0, 2] - jac[2, 0], jac[1, 0] - jac[0, 1]]
        )
    raise EstimatorError(f"no coderivative proxy for (k, n) = ({k}, {n})")


def _derivative_map(gradb, comp, j, n):
    """Proxy of d(b e_comp) for a scalar function b with gradient rows gradb.

    j is the form degree of b e_comp; gradb has shape (npts, n).
    """
    if j == 0:
        return gradb
    if j == 1 and n == 2:
        return gradb[:, 0] if comp == 1 else -gradb[:, 1]
    if j == 1 and n == 3:
        e = np.zeros(3)
        e[comp] = 1.0
        return np.cross(gradb, e)
    if j == 2 and n == 3:
        return gradb[:, comp]
    if j == n:
        return np.zeros(len(gradb))
    raise EstimatorError(f"no derivative map for (j, n) = ({j}, {n})")


def _project_p1(mesh, cell, pts, qw, fv):
    """Elementwise L2 projection onto P1: barycentric coefficients (n+1, c)."""
    fv2 = fv if fv.ndim == 2 else fv[:, None]
    gram = (pts.T * qw) @ pts
    rhs = (pts.T * qw) @ fv2
    return np.linalg.solve(gram, rhs)


def _cell_weights(mesh, eps, kappa, mode, group):
    """Per-cell volume-residual weight for the given group and mode."""
    h = mesh.cell_diameters
    if mode == "standard":
        return h.copy()
    e = cell_coefficient(mesh, eps)
    k_ = cell_coefficient(mesh, kappa)
    if group == 1:
        return h / np.sqrt(k_)
    return np.minimum(h / np.sqrt(e), 1.0 / np.sqrt(k_))


def _face_weight(h_s, eps_f, kap_f, mode, group):
    if mode == "standard":
        return np.sqrt(h_s)
    if group == 1:
        return h_s / np.sqrt(kap_f)
    hbar = min(h_s / np.sqrt(eps_f), 1.0 / np.sqrt(kap_f))
    return eps_f ** (-0.25) * np.sqrt(hbar)


def _check_mode(mode, eps, kappa):
    if mode not in ("standard", "robust"):
        raise EstimatorError(f"unknown mode {mode!r}")
    if mode == "robust":
        for w in (eps, kappa):
            if callable(w) or np.ndim(w) != 0:
                raise EstimatorError("robust mode requires constant eps and kappa")


def h1_residual_norm_estimate(
    mesh, R, J, mode="standard", eps=1.0, kappa=1.0, group=2, degree=4
):
    """Weighted dual-norm estimate of one residual group.

    R(cell, bary, x) -> values at quadrature points (npts[, c]) or None;
    J(face_geom, x) -> jump values at face quadrature points or None.
    Returns per-cell arrays (vol, jump, osc); the squared total of the
    group is sum(vol^2 + jump^2).
    """
    _check_mode(mode, eps, kappa)
    n = mesh.dim
    m = mesh.n_cells
    vol = np.zeros(m)
    osc = np.zeros(m)
    jump = np.zeros(m)
    w_cell = _cell_weights(mesh, eps, kappa, mode, group)
    eps_c = cell_coefficient(mesh, eps)
    kap_c = cell_coefficient(mesh, kappa)

    if R is not None:
        pts, qw = simplex_rule(n, degree)
        for c in range(m):
            x = pts @ mesh.vertices[mesh.simplices(n)[c]]
            rv = R(c, pts, x)
            if rv is None:
                continue
            rv = np.asarray(rv, dtype=float)
            rv2 = rv if rv.ndim == 2 else rv[:, None]
            volume = mesh.cell_volumes[c]
            # quadrature weights are signed, so clamp the squared norms
            nrm2 = max(volume * np.dot(qw, (rv2**2).sum(axis=1)), 0.0)
            vol[c] = w_cell[c] * np.sqrt(nrm2)
            coef = _project_p1(mesh, c, pts, qw, rv2)
            diff = rv2 - pts @ coef
            osc2 = volume * np.dot(qw, (diff**2).sum(axis=1))
            osc[c] = w_cell[c] * np.sqrt(max(osc2, 0.0))

    if J is not None:
        fpts, fqw = simplex_rule(n - 1, degree)
        for geom in mesh.skeleton():
            f = geom.face_id
            x = fpts @ mesh.vertices[mesh.simplices(n - 1)[f]]
            jv = J(geom, x)
            if jv is None:
                continue
            jv = np.asarray(jv, dtype=float)
            jv2 = jv if jv.ndim == 2 else jv[:, None]
            cells = mesh.cell_of_face[f]
            eps_f = float(np.mean(eps_c[list(cells)]))
            kap_f = float(np.mean(kap_c[list(cells)]))
            wf = _face_weight(geom.diameter, eps_f, kap_f, mode, group)
            nrm2 = max(geom.measure * np.dot(fqw, (jv2**2).sum(axis=1)), 0.0)
            term = wf**2 * nrm2
            if len(cells) == 2:
                jump[cells[0]] += 0.5 * term
                jump[cells[1]] += 0.5 * term
            else:
                jump[cells[0]] += term
    return vol, np.sqrt(jump), osc


def oscillation(mesh, R, J=None, mode="standard", eps=1.0, kappa=1.0, degree=4):
    """Per-cell data oscillation: ||w (R - Q_h R)|| plus, in standard mode,
    the facewise part with degree-1 projections Q_h^s."""
    _check_mode(mode, eps, kappa)
    n = mesh.dim
    osc_sq = np.zeros(mesh.n_cells)
    w_cell = _cell_weights(mesh, eps, kappa, mode, 2)
    if R is not None:
        pts, qw = simplex_rule(n, degree)
        for c in range(mesh.n_cells):
            x = pts @ mesh.vertices[mesh.simplices(n)[c]]
            rv = np.asarray(R(c, pts, x), dtype=float)
            rv2 = rv if rv.ndim == 2 else rv[:, None]
            coef = _project_p1(mesh, c, pts, qw, rv2)
            diff = rv2 - pts @ coef
            osc_sq[c] += w_cell[c] ** 2 * max(
                mesh.cell_volumes[c] * np.dot(qw, (diff**2).sum(axis=1)), 0.0
            )
    if J is not None and mode == "standard":
        fpts, fqw = simplex_rule(n - 1, degree)
        for geom in mesh.skeleton():
            f = geom.face_id
            x = fpts @ mesh.vertices[mesh.simplices(n - 1)[f]]
            jv = np.asarray(J(geom, x), dtype=float)
            jv2 = jv if jv.ndim == 2 else jv[:, None]
            gram = (fpts.T * fqw) @ fpts
            coef = np.linalg.solve(gram, (fpts.T * fqw) @ jv2)
            diff = jv2 - fpts @ coef
            term = geom.diameter * max(
                geom.measure * np.dot(fqw, (diff**2).sum(axis=1)), 0.0
            )
            cells = mesh.cell_of_face[f]
            if len(cells) == 2:
                osc_sq[cells[0]] += 0.5 * term
                osc_sq[cells[1]] += 0.5 * term
            else:
                osc_sq[cells[0]] += term
    return np.sqrt(osc_sq)


# -- field evaluation helpers --------------------------------------------------


def _field_at(field, cell, x):
    bary = barycentric_coordinates(field.space.mesh, cell, x)
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return evaluate_proxy(field, cell, bary)


def _codiff_f(problem, mesh, k, degree=4):
    """Callable (cell, bary, x) -> coderivative of f, analytic or projected."""
    if problem.f_codiff is not None:

        def analytic(cell, bary, x):
            return np.asarray(problem.f_codiff(x), dtype=float)

        return analytic, True

    pts, qw = simplex_rule(mesh.dim, degree)

    def projected(cell, bary, x):
        xq = pts @ mesh.vertices[mesh.simplices(mesh.dim)[cell]]
        fv = np.asarray(problem.f(xq), dtype=float)
        fv2 = fv if fv.ndim == 2 else fv[:, None]
        coef = _project_p1(mesh, cell, pts, qw, fv2)  # (n+1, ncomp)
        grads = mesh.barycentric_gradients()[cell]  # (n+1, n)
        jac = coef.T @ grads  # (ncomp, n)
        const = _codiff_from_jacobian(jac, k, mesh.dim)
        out = np.tile(const, (len(bary), 1))
        return out[:, 0] if out.shape[1] == 1 else out

    return projected, False


# -- explicit residual estimators ----------------------------------------------


def hd_residual_estimator(problem, u_h, mode="standard", degree=4):
    """Residual estimator for (eps d u, d v) + (kappa u, v) = (f, v).

    Group 1: volume coderivative of (f - kappa u_h) with jumps of its
    flux-type trace; group 2: volume residual f - kappa u_h with jumps of
    the trace of eps d u_h (elementwise coderivatives of the piecewise
    constant discrete derivatives vanish identically).
    """
    if problem.kind not in (HD_POSITIVE, REACTION_DIFFUSION):
        raise EstimatorError("hd_residual_estimator needs an H(d) problem")
    mesh = u_h.space.mesh
    n, k = mesh.dim, problem.k
    _check_mode(mode, problem.eps, problem.kappa)
    eps_c = cell_coefficient(mesh, problem.eps)
    kap_c = cell_coefficient(mesh, problem.kappa)
    duh = [np.atleast_1d(evaluate_proxy_derivative(u_h, c)) for c in range(mesh.n_cells)]

    def const_field(vals, npts):
        v = np.atleast_1d(np.asarray(vals, dtype=float))
        return np.full(npts, v[0]) if v.size == 1 else np.tile(v, (npts, 1))

    def R2(cell, bary, x):
        return np.asarray(problem.f(x), dtype=float) - kap_c[cell] * evaluate_proxy(
            u_h, cell, bary
        )

    def J2(geom, x):
        cells = mesh.cell_of_face[geom.face_id]
        tr = [
            _trace_star(const_field(eps_c[c] * duh[c], len(x)), geom.normal, k + 1, n)
            for c in cells
        ]
        return tr[0] - tr[1] if len(tr) == 2 else tr[0]

    vol2, jump2, osc2 = h1_residual_norm_estimate(
        mesh, R2, J2, mode, problem.eps, problem.kappa, group=2, degree=degree
    )

    if k >= 1:
        codiff, analytic = _codiff_f(problem, mesh, k, degree)

        def R1(cell, bary, x):
            # kappa u_h has vanishing elementwise coderivative
            return codiff(cell, bary, x)

        def J1(geom, x):
            cells = mesh.cell_of_face[geom.face_id]
            tr = [
                _trace_star(
                    np.asarray(problem.f(x), dtype=float)
                    - kap_c[c] * _field_at(u_h, c, x),
                    geom.normal,
                    k,
                    n,
                )
                for c in cells
            ]
            return tr[0] - tr[1] if len(tr) == 2 else tr[0]

        vol1, jump1, osc1 = h1_residual_norm_estimate(
            mesh, R1, J1, mode, problem.eps, problem.kappa, group=1, degree=degree
        )
        if not analytic:
            osc1 = np.zeros_like(osc1)  # projected residual is already P1
    else:
        vol1 = jump1 = osc1 = np.zeros(mesh.n_cells)

    osc = np.sqrt(osc1**2 + osc2**2)
    return EstimatorReport(mode, vol1, jump1, vol2, jump2, osc)


def hodge_residual_estimator(problem, sigma_h, u_h, degree=4):
    """Residual estimator for the mixed Hodge-Laplacian pair (sigma_h, u_h).

    Groups 1-2 come from the sigma equation (reported as vol1/jump1),
    groups 3-4 from the u equation (vol2/jump2); at k = n groups 3-4 are
    replaced by the unweighted L2 residual ||f - d sigma_h||.  Individual
    group totals are kept in `groups`.
    """
    if problem.kind != HODGE_LAPLACIAN:
        raise EstimatorError("hodge_residual_estimator needs kind 'hodge'")
    mesh = u_h.space.mesh
    n, k = mesh.dim, problem.k
    dsig = [evaluate_proxy_derivative(sigma_h, c) for c in range(mesh.n_cells)]
    if k < n:
        duh = [evaluate_proxy_derivative(u_h, c) for c in range(mesh.n_cells)]

    def const_field(vals, npts):
        v = np.atleast_1d(np.asarray(vals, dtype=float))
        return np.full(npts, v[0]) if v.size == 1 else np.tile(v, (npts, 1))

    # group 1: delta sigma_h vanishes elementwise; jumps of tr(star sigma_h)
    def J_g1(geom, x):
        cells = mesh.cell_of_face[geom.face_id]
        tr = [_trace_star(_field_at(sigma_h, c, x), geom.normal, k - 1, n) for c in cells]
        return tr[0] - tr[1] if len(tr) == 2 else tr[0]

    _, j1, _ = h1_residual_norm_estimate(mesh, None, J_g1, degree=degree)
    v1 = np.zeros(mesh.n_cells)

    # group 2: -sigma_h + delta u_h = -sigma_h elementwise; jumps of tr(star u_h)
    def R_g2(cell, bary, x):
        return -evaluate_proxy(sigma_h, cell, bary)

    def J_g2(geom, x):
        cells = mesh.cell_of_face[geom.face_id]
        tr = [_trace_star(_field_at(u_h, c, x), geom.normal, k, n) for c in cells]
        return tr[0] - tr[1] if len(tr) == 2 else tr[0]

    v2, j2, osc2 = h1_residual_norm_estimate(mesh, R_g2, J_g2, degree=degree)

    groups = {"g1": np.sqrt(v1**2 + j1**2), "g2": np.sqrt(v2**2 + j2**2)}
    vol1 = np.sqrt(v1**2 + v2**2)
    jump1 = np.sqrt(j1**2 + j2**2)

    if k < n:
        codiff, analytic = _codiff_f(problem, mesh, k, degree)

        def R_g3(cell, bary, x):
            # d sigma_h is constant per cell, so its coderivative vanishes
            return codiff(cell, bary, x)

        def J_g3(geom, x):
            cells = mesh.cell_of_face[geom.face_id]
            tr = [
                _trace_star(
                    np.asarray(problem.f(x), dtype=float)
                    - const_field(dsig[c], len(x)),
                    geom.normal,
                    k,
                    n,
                )
                for c in cells
            ]
            return tr[0] - tr[1] if len(tr) == 2 else tr[0]

        v3, j3, osc3 = h1_residual_norm_estimate(mesh, R_g3, J_g3, degree=degree)
        if not analytic:
            osc3 = np.zeros_like(osc3)

        def R_g4(cell, bary, x):
            return np.asarray(problem.f(x), dtype=float) - const_field(
                dsig[cell], len(x)
            )

        def J_g4(geom, x):
            cells = mesh.cell_of_face[geom.face_id]
            tr = [
                _trace_star(const_field(duh[c], len(x)), geom.normal, k + 1, n)
                for c in cells
            ]
            return tr[0] - tr[1] if len(tr) == 2 else tr[0]

        v4, j4, osc4 = h1_residual_norm_estimate(mesh, R_g4, J_g4, degree=degree)
        groups["g3"] = np.sqrt(v3**2 + j3**2)
        groups["g4"] = np.sqrt(v4**2 + j4**2)
        vol2 = np.sqrt(v3**2 + v4**2)
        jump2 = np.sqrt(j3**2 + j4**2)
        osc = np.sqrt(osc2**2 + osc3**2 + osc4**2)
    else:
        # k = n: unweighted L2 residual of the conservation equation
        pts, qw = simplex_rule(n, degree)
        l2 = np.zeros(mesh.n_cells)
        for c in range(mesh.n_cells):
            x = pts @ mesh.vertices[mesh.simplices(n)[c]]
            rv = np.asarray(problem.f(x), dtype=float) - const_field(dsig[c], len(pts))
            rv2 = rv if rv.ndim == 2 else rv[:, None]
            l2[c] = np.sqrt(
                max(mesh.cell_volumes[c] * np.dot(qw, (rv2**2).sum(axis=1)), 0.0)
            )
        groups["l2"] = l2
        vol2 = l2
        jump2 = np.zeros(mesh.n_cells)
        osc = osc2
    return EstimatorReport("standard", vol1, jump1, vol2, jump2, osc, groups)


# -- implicit local-patch estimator --------------------------------------------


def _p2_local(mesh, cell, bary):
    """P2 values and gradients on one cell: ((nloc, npts), (nloc, npts, n)).

    Dofs: n+1 vertex functions then edges in lexicographic local order.
    """
    n = mesh.dim
    g = mesh.barycentric_gradients()[cell]
    lam = bary
    npts = len(bary)
    from itertools import combinations

    edges = list(combinations(range(n + 1), 2))
    nloc = (n + 1) + len(edges)
    vals = np.empty((nloc, npts))
    grads = np.empty((nloc, npts, n))
    for i in range(n + 1):
        vals[i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[i] = np.outer(4.0 * lam[:, i] - 1.0, g[i])
    for idx, (a, b) in enumerate(edges):
        j = n + 1 + idx
        vals[j] = 4.0 * lam[:, a] * lam[:, b]
        grads[j] = 4.0 * (np.outer(lam[:, a], g[b]) + np.outer(lam[:, b], g[a]))
    return vals, grads


def _patch_dofs(mesh, vertex):
    """Patch dof bookkeeping for the quadratic local space on Omega_i.

    Returns (cells, dof index map, free mask, per-cell local->patch dof ids).
    Dofs are patch vertices and edges; constrained if they lie on a face of
    the patch boundary that is interior to the mesh, or on an essential
    boundary face.
    """
    from derham.spaces import local_simplices

    n = mesh.dim
    cells = mesh.vertex_patch(vertex)
    cellset = set(cells)
    dof_ids = {}  # (dim, simplex_id) -> local index
    cell_maps = []
    for c in cells:
        ids0, _ = local_simplices(mesh, 0, c)
        ids1, _ = local_simplices(mesh, 1, c)
        local = []
        for v in ids0:
            local.append(dof_ids.setdefault((0, v), len(dof_ids)))
        for e in ids1:
            local.append(dof_ids.setdefault((1, e), len(dof_ids)))
        cell_maps.append(np.array(local))
    free = np.ones(len(dof_ids), dtype=bool)
    gamma0 = set(mesh.gamma_simplices(0))
    gamma1 = set(mesh.gamma_simplices(1))
    for c in cells:
        fids, _ = local_simplices(mesh, n - 1, c)
        for f in fids:
            adj = mesh.cell_of_face[f]
            on_patch_bnd = (
                len(adj) == 2 and not (adj[0] in cellset and adj[1] in cellset)
            )
            essential = len(adj) == 1 and mesh.boundary_tag[f] != GAMMA_NATURAL
            if not (on_patch_bnd or essential):
                continue
            fverts = mesh.simplices(n - 1)[f]
            for v in fverts:
                key = (0, int(mesh.simplex_index(0)[(v,)]))
                free[dof_ids[key]] = False
            from itertools import combinations as _comb

            for a, b in _comb(sorted(fverts.tolist()), 2):
                e = mesh.simplex_index(1).get((a, b))
                if e is not None and (1, e) in dof_ids:
                    free[dof_ids[(1, e)]] = False
    for (d, s), idx in dof_ids.items():
        if d == 0 and s in gamma0:
            free[idx] = False
        if d == 1 and s in gamma1:
            free[idx] = False
    return cells, dof_ids, free, cell_maps


def _patch_solve(mesh, vertex, rhs_terms, degree=4):
    """Solve the componentwise H1 patch problems; returns sum of eta_i^2.

    rhs_terms: list of (ncomp, integrand) with integrand(cell, comp, bvals,
    bgrads, bary, x) -> per-basis rhs contributions (nloc,) already weighted
    by quadrature; each term is an independent local problem.
    """
    cells, dof_ids, free, cell_maps = _patch_dofs(mesh, vertex)
    ndof = len(dof_ids)
    pts, qw = simplex_rule(mesh.dim, degree)
    a = np.zeros((ndof, ndof))
    basis = []
    for ci, c in enumerate(cells):
        bvals, bgrads = _p2_local(mesh, c, pts)
        basis.append((bvals, bgrads))
        vol = mesh.cell_volumes[c]
        loc = vol * (
            (bvals * qw) @ bvals.T + np.einsum("apc,p,bpc->ab", bgrads, qw, bgrads)
        )
        idx = cell_maps[ci]
        a[np.ix_(idx, idx)] += loc
    nfree = int(free.sum())
    if nfree == 0:
        return [0.0 for _ in rhs_terms]
    aff = a[np.ix_(free, free)]
    totals = []
    for ncomp, integrand in rhs_terms:
        total = 0.0
        for comp in range(ncomp):
            b = np.zeros(ndof)
            for ci, c in enumerate(cells):
                bvals, bgrads = basis[ci]
                x = pts @ mesh.vertices[mesh.simplices(mesh.dim)[c]]
                b[cell_maps[ci]] += mesh.cell_volumes[c] * integrand(
                    c, comp, bvals, bgrads, pts, x
                )
            bf = b[free]
            sol = np.linalg.solve(aff, bf)
            total += float(bf @ sol)
        totals.append(total)
    return totals


def local_implicit_estimator(problem, u_h, sigma_h=None, degree=4):
    """Implicit estimator from local H1 patch problems at every vertex.

    Returns (EstimatorReport, per-vertex squared norms dict).  Patch values
    are redistributed to cells proportionally to cell volume.
    """
    mesh = u_h.space.mesh
    n, k = mesh.dim, problem.k
    kap_c = cell_coefficient(mesh, problem.kappa)
    eps_c = cell_coefficient(mesh, problem.eps)
    nc = mesh.n_cells

    if problem.kind in (HD_POSITIVE, REACTION_DIFFUSION):
        duh = [np.atleast_1d(evaluate_proxy_derivative(u_h, c)) for c in range(nc)]

        def resid(cell, bary, x):
            rv = np.asarray(problem.f(x), dtype=float) - kap_c[cell] * evaluate_proxy(
                u_h, cell, bary
            )
            return rv if rv.ndim == 2 else rv[:, None]

        def pot_integrand(cell, comp, bvals, bgrads, bary, x):
            rv = resid(cell, bary, x)
            out = np.empty(len(bvals))
            _, qw = simplex_rule(n, degree)
            for i in range(len(bvals)):
                dphi = _derivative_map(bgrads[i], comp, k - 1, n)
                dphi2 = dphi if dphi.ndim == 2 else dphi[:, None]
                out[i] = np.dot(qw, (rv * dphi2).sum(axis=1))
            return out

        def reg_integrand(cell, comp, bvals, bgrads, bary, x):
            rv = resid(cell, bary, x)
            dv = eps_c[cell] * duh[cell]
            out = np.empty(len(bvals))
            _, qw = simplex_rule(n, degree)
            for i in range(len(bvals)):
                term = rv[:, comp] * bvals[i]
                dphi = _derivative_map(bgrads[i], comp, k, n)
                dphi2 = dphi if dphi.ndim == 2 else dphi[:, None]
                term = term - (dv[None, :] * dphi2).sum(axis=1)
                out[i] = np.dot(qw, term)
            return out

        terms = []
        if k >= 1:
            terms.append((proxy_ncomp(n, k - 1), pot_integrand))
        terms.append((proxy_ncomp(n, k), reg_integrand))

        pot_sq = np.zeros(nc)
        reg_sq = np.zeros(nc)
        per_vertex = np.zeros((mesh.n_vertices, len(terms)))
        for v in range(mesh.n_vertices):
            totals = _patch_solve(mesh, v, terms, degree)
            per_vertex[v] = totals
            cells = mesh.vertex_patch(v)
            vols = mesh.cell_volumes[list(cells)]
            share = vols / vols.sum()
            for t, tot in enumerate(totals):
                target = pot_sq if (k >= 1 and t == 0) else reg_sq
                for ci, c in enumerate(cells):
                    target[c] += tot * share[ci]
        zeros = np.zeros(nc)
        report = EstimatorReport(
            "implicit", np.sqrt(pot_sq), zeros, np.sqrt(reg_sq), zeros, zeros.copy()
        )
        return report, {"per_vertex_sq": per_vertex}

    if problem.kind == HODGE_LAPLACIAN:
        if sigma_h is None:
            raise EstimatorError("hodge implicit estimator needs sigma_h")
        dsig = [
            np.atleast_1d(evaluate_proxy_derivative(sigma_h, c)) for c in range(nc)
        ]
        if k < n:
            duh = [np.atleast_1d(evaluate_proxy_derivative(u_h, c)) for c in range(nc)]
        _, qw = simplex_rule(n, degree)

        def as2d(a):
            a = np.asarray(a, dtype=float)
            return a if a.ndim == 2 else a[:, None]

        def sig_at(cell, bary):
            return as2d(evaluate_proxy(sigma_h, cell, bary))

        def u_at(cell, bary):
            return as2d(evaluate_proxy(u_h, cell, bary))

        def fres(cell, bary, x):
            fv = as2d(problem.f(x))
            return fv - dsig[cell][None, :]

        def t_sig_pot(cell, comp, bvals, bgrads, bary, x):
            sv = sig_at(cell, bary)
            out = np.empty(len(bvals))
            for i in range(len(bvals)):
                dphi = as2d(_derivative_map(bgrads[i], comp, k - 2, n))
                out[i] = -np.dot(qw, (sv * dphi).sum(axis=1))
            return out

        def t_sig_reg(cell, comp, bvals, bgrads, bary, x):
            sv = sig_at(cell, bary)
            uv = u_at(cell, bary)
            out = np.empty(len(bvals))
            for i in range(len(bvals)):
                dphi = as2d(_derivative_map(bgrads[i], comp, k - 1, n))
                out[i] = np.dot(qw, -sv[:, comp] * bvals[i] + (uv * dphi).sum(axis=1))
            return out

        def t_u_pot(cell, comp, bvals, bgrads, bary, x):
            rv = fres(cell, bary, x)
            out = np.empty(len(bvals))
            for i in range(len(bvals)):
                dphi = as2d(_derivative_map(bgrads[i], comp, k - 1, n))
                out[i] = np.dot(qw, (rv * dphi).sum(axis=1))
            return out

        def t_u_reg(cell, comp, bvals, bgrads, bary, x):
            rv = fres(cell, bary, x)
            dv = duh[cell]
            out = np.empty(len(bvals))
            for i in range(len(bvals)):
                dphi = as2d(_derivative_map(bgrads[i], comp, k, n))
                term = rv[:, comp] * bvals[i] - (dv[None, :] * dphi).sum(axis=1)
                out[i] = np.dot(qw, term)
            return out

        terms = []
        sig_slots = []
        if k >= 2:
            terms.append((proxy_ncomp(n, k - 2), t_sig_pot))
            sig_slots.append(len(terms) - 1)
        terms.append((proxy_ncomp(n, k - 1), t_sig_reg))
        sig_slots.append(len(terms) - 1)
        if k < n:
            terms.append((proxy_ncomp(n, k - 1), t_u_pot))
            terms.append((proxy_ncomp(n, k), t_u_reg))

        sig_sq = np.zeros(nc)
        u_sq = np.zeros(nc)
        per_vertex = np.zeros((mesh.n_vertices, len(terms)))
        for v in range(mesh.n_vertices):
            totals = _patch_solve(mesh, v, terms, degree)
            per_vertex[v] = totals
            cells = mesh.vertex_patch(v)
            vols = mesh.cell_volumes[list(cells)]
            share = vols / vols.sum()
            for t, tot in enumerate(totals):
                target = sig_sq if t in sig_slots else u_sq
                for ci, c in enumerate(cells):
                    target[c] += tot * share[ci]
        if k == n:
            # the conservation residual enters as a plain L2 term
            pts, _ = simplex_rule(n, degree)
            for c in range(nc):
                x = pts @ mesh.vertices[mesh.simplices(n)[c]]
                rv = fres(c, pts, x)
                u_sq[c] += mesh.cell_volumes[c] * np.dot(qw, (rv**2).sum(axis=1))
        zeros = np.zeros(nc)
        report = EstimatorReport(
            "implicit", np.sqrt(sig_sq), zeros, np.sqrt(u_sq), zeros, zeros.copy()
        )
        return report, {"per_vertex_sq": per_vertex}

    raise EstimatorError(f"unsupported problem kind {problem.kind!r}")


def estimate(problem, u_h, sigma_h=None, estimator="residual", mode="standard", degree=4):
    """Dispatch to the requested estimator; returns an EstimatorReport."""
    if estimator == "residual":
        if problem.kind == HODGE_LAPLACIAN:
            return hodge_residual_estimator(problem, sigma_h, u_h, degree=degree)
        return hd_residual_estimator(problem, u_h, mode=mode, degree=degree)
    if estimator == "implicit":
        report, _ = local_implicit_estimator(problem, u_h, sigma_h, degree=degree)
        return report
    raise EstimatorError(f"unknown estimator {estimator!r}")
