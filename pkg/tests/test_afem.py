"""Adaptive loop: marking properties, history bookkeeping, stopping rules."""

import csv

import numpy as np
import pytest

from derham.afem import AfemError, afem_loop, dorfler_mark, effectivity, true_error
from derham.estimators import EstimatorReport
from derham.mesh import generate_structured, mark_gamma
from derham.problems import get_problem


def synthetic_report(eta):
    eta = np.asarray(eta, dtype=float)
    z = np.zeros_like(eta)
    return EstimatorReport("standard", eta, z, z.copy(), z.copy(), z.copy())


def test_dorfler_threshold_and_minimality():
    rep = synthetic_report([3.0, 1.0, 2.0, 0.5, 0.0])
    total = (rep.eta_cell**2).sum()
    for theta in (0.3, 0.5, 0.8, 1.0):
        marked = dorfler_mark(rep, theta)
        got = (rep.eta_cell[marked] ** 2).sum()
        assert got >= theta**2 * total - 1e-12
        # minimality of the greedy set: removing its weakest member breaks it
        if len(marked) > 1:
            weakest = marked[np.argmin(rep.eta_cell[marked])]
            reduced = got - rep.eta_cell[weakest] ** 2
            assert reduced < theta**2 * total


def test_dorfler_theta_one_marks_support():
    rep = synthetic_report([3.0, 1.0, 2.0, 0.5, 0.0])
    marked = dorfler_mark(rep, 1.0)
    assert sorted(marked) == [0, 1, 2, 3]  # zero-indicator cell excluded


def test_dorfler_zero_estimator_marks_nothing():
    rep = synthetic_report([0.0, 0.0])
    assert len(dorfler_mark(rep, 0.5)) == 0


def test_dorfler_invalid_theta():
    rep = synthetic_report([1.0])
    with pytest.raises(AfemError):
        dorfler_mark(rep, 0.0)
    with pytest.raises(AfemError):
        dorfler_mark(rep, 1.5)


def test_afem_loop_converges_on_manufactured_problem():
    case = get_problem("reaction-diffusion-square")
    spec = case["build"]()
    mesh = generate_structured("unit-square", 2, gamma="whole-boundary")
    hist = afem_loop(spec, mesh, theta=0.5, max_iters=6)
    assert len(hist.rows) == 6
    etas = [r["eta"] for r in hist.rows]
    ndofs = [r["ndofs"] for r in hist.rows]
    assert etas[-1] < etas[0]
    assert ndofs[-1] > ndofs[0]
    assert all(r["err_total"] > 0 for r in hist.rows)
    series, ratio = effectivity(hist)
    assert np.isfinite(ratio)
    assert ratio < 5.0  # effectivity stays in a narrow band


def test_afem_stopping_rules():
    case = get_problem("reaction-diffusion-square")
    spec = case["build"]()
    mesh = generate_structured("unit-square", 2, gamma="whole-boundary")
    hist = afem_loop(spec, mesh, max_iters=10, max_dofs=5)
    assert hist.rows[-1]["ndofs"] >= 5
    assert len(hist.rows) < 10
    hist = afem_loop(spec, mesh, max_iters=10, tol=1e6)
    assert len(hist.rows) == 1  # tolerance met immediately


def test_uniform_mode_refines_everything():
    case = get_problem("reaction-diffusion-square")
    spec = case["build"]()
    mesh = generate_structured("unit-square", 2, gamma="whole-boundary")
    hist = afem_loop(spec, mesh, max_iters=3, uniform=True)
    assert hist.final_mesh.n_cells >= 4 * mesh.n_cells


def test_history_csv(tmp_path):
    case = get_problem("lshape-poisson")
    spec = case["build"]()
    mesh = generate_structured("l-shape", 1, gamma="whole-boundary")
    hist = afem_loop(spec, mesh, max_iters=3)
    path = tmp_path / "history.csv"
    hist.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert rows[0]["err_total"] == ""  # no manufactured solution
    assert float(rows[-1]["eta"]) == hist.rows[-1]["eta"]


def test_true_error_requires_manufactured():
    case = get_problem("lshape-poisson")
    spec = case["build"]()
    mesh = generate_structured("l-shape", 1, gamma="whole-boundary")
    hist = afem_loop(spec, mesh, max_iters=1)
    with pytest.raises(AfemError):
        true_error(spec, hist.final_fields[0])
    with pytest.raises(AfemError):
        effectivity(hist)


def test_true_error_decreases():
    case = get_problem("curl2d-square")
    spec = case["build"]()
    errs = []
    for m in (2, 4):
        mesh = generate_structured("unit-square", m, gamma="whole-boundary")
        hist = afem_loop(spec, mesh, max_iters=1)
        errs.append(hist.rows[0]["err_total"])
    assert errs[1] < 0.7 * errs[0]
