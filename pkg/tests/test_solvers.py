"""Solvers: direct/CG agreement, auxiliary-space preconditioner, MINRES."""

import numpy as np
import pytest

from derham.assembly import assemble_hd, assemble_hodge_laplacian, split_hodge_solution
from derham.mesh import generate_structured
from derham.problems import get_problem
from derham.solvers import (
    SolverError,
    build_hx_preconditioner,
    hodge_riesz_preconditioner,
    solve,
    solve_cg,
    solve_direct,
    solve_minres,
    spectral_interval,
)


def maxwell_system(m):
    case = get_problem("maxwell-cube")
    spec = case["build"]()
    mesh = generate_structured("unit-cube", m, gamma="whole-boundary")
    system, space = assemble_hd(spec, mesh)
    return spec, mesh, system, space


def test_direct_and_cg_agree():
    spec, mesh, system, space = maxwell_system(2)
    xd, rd = solve_direct(system)
    xc, rc = solve_cg(system, tol=1e-12)
    assert rd.converged and rc.converged
    assert np.linalg.norm(xd - xc) < 1e-8 * np.linalg.norm(xd)
    assert rd.relative_residual < 1e-10
    assert rc.iterations > 1


def test_zero_rhs_returns_zero():
    spec, mesh, system, space = maxwell_system(1)
    system.rhs[:] = 0.0
    x, rep = solve_cg(system)
    assert rep.iterations == 0 and rep.converged
    assert np.allclose(x, 0.0)


def test_hx_preconditioner_accelerates_cg():
    spec, mesh, system, space = maxwell_system(3)
    _, plain = solve_cg(system, tol=1e-8)
    pre = build_hx_preconditioner(mesh, 1, 1.0, 1.0, "whole-boundary")
    xh, fast = solve_cg(system, pre, tol=1e-8, tag="hx-cg")
    assert fast.converged
    assert fast.iterations < plain.iterations
    xd, _ = solve_direct(system)
    assert np.linalg.norm(xh - xd) < 1e-6 * np.linalg.norm(xd)


def test_hx_parameter_robustness():
    # iteration counts stay flat across strong coefficient contrasts
    counts = []
    for eps, kappa in [(1.0, 1.0), (1e-4, 1.0), (1.0, 1e4), (1e-4, 1e4)]:
        spec = get_problem("maxwell-cube")["build"](eps=eps, kappa=kappa)
        mesh = generate_structured("unit-cube", 2, gamma="whole-boundary")
        system, _ = assemble_hd(spec, mesh)
        pre = build_hx_preconditioner(mesh, 1, eps, kappa, "whole-boundary")
        _, rep = solve_cg(system, pre, tol=1e-8)
        assert rep.converged
        counts.append(rep.iterations)
    assert max(counts) <= 3 * min(counts)


def test_spectral_interval_bounded():
    spec, mesh, system, space = maxwell_system(2)
    pre = build_hx_preconditioner(mesh, 1, 1.0, 1.0, "whole-boundary")
    lo, hi = spectral_interval(system, pre, probes=100, seed=0)
    assert 0.0 < lo < hi
    assert hi / lo < 50.0


def test_hodge_minres_matches_direct():
    case = get_problem("mixed-poisson-square")
    spec = case["build"]()
    mesh = generate_structured("unit-square", 4)
    system, ss, su = assemble_hodge_laplacian(spec, mesh)
    xd, _ = solve_direct(system)
    pre = hodge_riesz_preconditioner(system, ss, su)
    xm, rep = solve_minres(system, pre, tol=1e-12)
    assert rep.converged
    assert np.linalg.norm(xm - xd) < 1e-7 * np.linalg.norm(xd)
    sd, ud = split_hodge_solution(system, ss, su, xd)
    sm, um = split_hodge_solution(system, ss, su, xm)
    assert np.linalg.norm(sm - sd) < 1e-7 * max(np.linalg.norm(sd), 1.0)


def test_solve_dispatcher():
    spec, mesh, system, space = maxwell_system(1)
    x_auto, rep = solve(system, "auto")
    assert rep.method == "direct"
    x_cg, _ = solve(system, "cg")
    assert np.linalg.norm(x_auto - x_cg) < 1e-7 * np.linalg.norm(x_auto)
    with pytest.raises(SolverError):
        solve(system, "bogus")
