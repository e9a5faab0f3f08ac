"""Adaptive solve-estimate-mark-refine loop and true-error bookkeeping."""

import csv
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from derham.assembly import (
    HODGE_LAPLACIAN,
    assemble_hd,
    assemble_hodge_laplacian,
    cell_coefficient,
    split_hodge_solution,
)
from derham.estimators import estimate
from derham.quadrature import simplex_rule
from derham.solvers import (
    _DIRECT_CAP,
    build_hx_preconditioner,
    hodge_riesz_preconditioner,
    solve_cg,
    solve_direct,
    solve_minres,
)
from derham.spaces import (
    DiscreteField,
    local_simplices,
    whitney_derivative,
    whitney_values,
)


class AfemError(Exception):
    pass


@dataclass
class AfemHistory:
    """Per-iteration convergence record of an adaptive (or uniform) run."""

    rows: list = dc_field(default_factory=list)
    final_mesh: object = None
    final_report: object = None
    final_fields: tuple = ()

    _COLUMNS = [
        "iter",
        "ndofs",
        "eta",
        "osc",
        "err_total",
        "err_sigma",
        "err_u",
        "effectivity",
        "iters",
        "seconds",
    ]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self._COLUMNS)
            for row in self.rows:
                out = []
                for col in self._COLUMNS:
                    v = row.get(col, "")
                    if isinstance(v, float):
                        v = repr(v)
                    out.append(v)
                w.writerow(out)


def _weighted_l2_error(mesh, k, field, exact, dexact, eps, kappa, degree=6):
    """eps ||d(u - u_h)||^2 + kappa ||u - u_h||^2 by quadrature."""
    n = mesh.dim
    pts, qw = simplex_rule(n, degree)
    eps_c = cell_coefficient(mesh, eps)
    kap_c = cell_coefficient(mesh, kappa)
    total = 0.0
    for c in range(mesh.n_cells):
        x = pts @ mesh.vertices[mesh.simplices(n)[c]]
        ids, _ = local_simplices(mesh, k, c)
        wv = whitney_values(mesh, k, c, pts)
        uh = np.tensordot(field.coeffs[ids], wv, axes=(0, 0))
        diff = uh - np.asarray(exact(x), dtype=float)
        e2 = (diff**2).sum(axis=1) if diff.ndim == 2 else diff**2
        total += kap_c[c] * mesh.cell_volumes[c] * max(np.dot(qw, e2), 0.0)
        if k < n and dexact is not None:
            dw = whitney_derivative(mesh, k, c)
            dh = field.coeffs[ids] @ dw
            de = np.asarray(dexact(x), dtype=float)
            de2 = de if de.ndim == 2 else de[:, None]
            d2 = ((de2 - dh[None, :]) ** 2).sum(axis=1)
            total += eps_c[c] * mesh.cell_volumes[c] * max(np.dot(qw, d2), 0.0)
    return float(np.sqrt(total))


def true_error(problem, u_h, sigma_h=None, degree=6):
    """H(d)-norm error(s) against the manufactured solution.

    Returns a float for H(d) problems and (err_sigma, err_u) for the
    Hodge Laplacian.
    """
    man = problem.manufactured
    if not man or man.get("u") is None:
        raise AfemError("no manufactured solution available")
    mesh = u_h.space.mesh
    if problem.kind == HODGE_LAPLACIAN:
        if sigma_h is None:
            raise AfemError("hodge true error needs sigma_h")
        es = _weighted_l2_error(
            mesh, problem.k - 1, sigma_h, man["sigma"], man["dsigma"], 1.0, 1.0, degree
        )
        eu = _weighted_l2_error(
            mesh, problem.k, u_h, man["u"], man.get("du"), 1.0, 1.0, degree
        )
        return es, eu
    return _weighted_l2_error(
        mesh, problem.k, u_h, man["u"], man.get("du"), problem.eps, problem.kappa, degree
    )


def dorfler_mark(report, theta):
    """Minimal cell set M with sum_{T in M} eta_T^2 >= theta^2 eta^2.

    Indicators include oscillation added in quadrature; greedy descending
    with ties broken by cell id; returns ascending cell ids.
    """
    if not 0.0 < theta <= 1.0:
        raise AfemError("theta must be in (0, 1]")
    eta2 = report.eta_cell**2 + report.osc**2
    total = eta2.sum()
    if total <= 0.0:
        return np.array([], dtype=int)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    csum = np.cumsum(eta2[order])
    count = int(np.searchsorted(csum, theta**2 * total - 1e-15)) + 1
    marked = order[:count]
    return np.sort(marked[eta2[marked] > 0.0])


def _solve_problem(problem, mesh, solver="auto"):
    """Assemble and solve; returns (fields tuple, n free dofs, SolveReport)."""
    if problem.kind == HODGE_LAPLACIAN:
        system, space_s, space_u = assemble_hodge_laplacian(problem, mesh)
        if solver == "direct" or (solver == "auto" and len(system.free) <= _DIRECT_CAP):
            x, rep = solve_direct(system)
        else:
            pre = hodge_riesz_preconditioner(system, space_s, space_u)
            x, rep = solve_minres(system, pre)
        sig, u = split_hodge_solution(system, space_s, space_u, x)
        fields = (DiscreteField(space_s, sig), DiscreteField(space_u, u))
        return fields, len(system.free), rep
    system, space = assemble_hd(problem, mesh)
    if solver == "direct" or (solver == "auto" and len(system.free) <= _DIRECT_CAP):
        x, rep = solve_direct(system)
    elif solver == "cg":
        x, rep = solve_cg(system)
    else:
        pre = build_hx_preconditioner(
            mesh, problem.k, problem.eps, problem.kappa, problem.gamma
        )
        x, rep = solve_cg(system, pre, tag="hx-cg")
    return (DiscreteField(space, x),), len(system.free), rep


def afem_loop(
    problem,
    mesh,
    estimator="residual",
    mode="standard",
    theta=0.5,
    max_iters=10,
    max_dofs=None,
    tol=None,
    solver="auto",
    uniform=False,
):
    """Adaptive (or uniform if requested) refinement loop.

    Stops after max_iters iterations, when the free dof count exceeds
    max_dofs, or when eta <= tol.
    """
    history = AfemHistory()
    for it in range(max_iters):
        t0 = time.perf_counter()
        fields, ndofs, solve_rep = _solve_problem(problem, mesh, solver)
        if problem.kind == HODGE_LAPLACIAN:
            sigma_h, u_h = fields
        else:
            (u_h,), sigma_h = fields, None
        report = estimate(problem, u_h, sigma_h, estimator=estimator, mode=mode)
        row = {
            "iter": it,
            "ndofs": ndofs,
            "eta": report.eta_total,
            "osc": report.osc_total,
            "iters": solve_rep.iterations,
            "seconds": round(time.perf_counter() - t0, 6),
        }
        if problem.manufactured and problem.manufactured.get("u") is not None:
            if problem.kind == HODGE_LAPLACIAN:
                es, eu = true_error(problem, u_h, sigma_h)
                err = float(np.hypot(es, eu))
                row.update(err_sigma=es, err_u=eu, err_total=err)
            else:
                err = true_error(problem, u_h)
                row["err_total"] = err
            row["effectivity"] = report.eta_total / err if err > 0 else float("inf")
        history.rows.append(row)
        history.final_mesh = mesh
        history.final_report = report
        history.final_fields = fields
        if tol is not None and report.eta_total <= tol:
            break
        if max_dofs is not None and ndofs >= max_dofs:
            break
        if it == max_iters - 1:
            break
        if uniform:
            mesh = mesh.uniform_refine()
        else:
            marked = dorfler_mark(report, theta)
            if marked.size == 0:
                break
            mesh = mesh.bisect(marked)
    return history


def effectivity(history):
    """Per-iteration eta / true-error series and its max/min ratio."""
    series = []
    for row in history.rows:
        if "effectivity" not in row:
            raise AfemError("history lacks true errors")
        series.append(row["effectivity"])
    finite = [s for s in series if np.isfinite(s)]
    ratio = max(finite) / min(finite) if finite else float("inf")
    return series, ratio
