"""Configuration-driven experiment runner.

Subcommands: ``run`` (adaptive/uniform refinement experiments with CSV
emission), ``precond-bench`` (CG iteration counts per preconditioner and
refinement level), ``mesh-info`` (counts and quality of a mesh), ``report``
(render figures from previously written CSVs), and ``list-problems``.

Config files are plain-text sectioned ``key = value`` (configparser
grammar); see the bundled ``configs/maxwell_cube.cfg`` for the layout.
Relative output paths are resolved against the ``DERHAM_OUTPUT_ROOT``
environment variable when it is set.  By default the ``seconds`` columns
are written as ``0.0`` so that repeated identical runs produce
bitwise-identical CSVs; set ``timing = wall`` to record wall-clock times.
"""

import argparse
import configparser
import csv
import importlib.resources
import os
import sys

import numpy as np

from derham.afem import afem_loop
from derham.assembly import (
    HODGE_LAPLACIAN,
    AssemblyError,
    assemble_hd,
)
from derham.mesh import MeshError, SimplicialMesh, generate_structured, mark_gamma
from derham.problems import ProblemError, get_problem, list_problems
from derham.solvers import SolverError, build_hx_preconditioner, solve_cg

OUTPUT_ROOT_ENV = "DERHAM_OUTPUT_ROOT"

_ESTIMATOR_CHOICES = {
    "residual": ("residual", "standard"),
    "residual-robust": ("residual", "robust"),
    "local-implicit": ("implicit", "standard"),
}


class ConfigError(Exception):
    pass


# -- config handling -----------------------------------------------------


def _read_config(path):
    if not os.path.isfile(path):
        bundled = bundled_config_path(os.path.basename(path))
        if bundled is None:
            raise ConfigError(f"config file not found: {path}")
        path = bundled
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cfg.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return cfg


def bundled_config_path(name):
    """Filesystem path of a config shipped with the package, or None."""
    res = importlib.resources.files("derham") / "configs" / name
    try:
        if res.is_file():
            return str(res)
    except (OSError, TypeError):
        pass
    return None


def _get(cfg, section, key, default=None, conv=str):
    if cfg.has_option(section, key):
        raw = cfg.get(section, key).strip()
        if raw == "":
            return default
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {key}: bad value {raw!r}") from exc
    return default


def _floats(raw):
    vals = [float(t) for t in raw.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _bool(raw):
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(raw)


def _output_dir(cfg, default_name):
    path = _get(cfg, "output", "path", default_name)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(cfg, outdir):
    with open(os.path.join(outdir, "config.cfg"), "w") as fh:
        cfg.write(fh)


def _timing_policy(cfg):
    timing = _get(cfg, "output", "timing", "none")
    if timing not in ("none", "wall"):
        raise ConfigError(f"[output] timing must be 'none' or 'wall', got {timing!r}")
    return timing


def _build_mesh(cfg, case):
    domain = _get(cfg, "problem", "domain", case["domain"])
    if domain != case["domain"]:
        raise ConfigError(
            f"domain {domain!r} does not match registry domain {case['domain']!r}"
        )
    k = _get(cfg, "problem", "k", case["k"], int)
    if k != case["k"]:
        raise ConfigError(f"k={k} does not match registry k={case['k']}")
    m = _get(cfg, "problem", "subdivisions", 1, int)
    if m < 1:
        raise ConfigError("[problem] subdivisions must be >= 1")
    gamma = _get(cfg, "problem", "gamma", case["gamma"])
    mesh = generate_structured(domain, m)
    if gamma not in (None, "none"):
        mark_gamma(mesh, gamma)
    return mesh, gamma


def _num_tag(x):
    return f"{x:g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# -- run -----------------------------------------------------------------


def cmd_run(cfg_path):
    cfg = _read_config(cfg_path)
    name = _get(cfg, "problem", "name")
    if name is None:
        raise ConfigError("[problem] name is required")
    case = get_problem(name)
    mesh0, gamma = _build_mesh(cfg, case)
    eps_list = _get(cfg, "problem", "eps", [1.0], _floats)
    kappa_list = _get(cfg, "problem", "kappa", [1.0], _floats)
    est_name = _get(cfg, "estimator", "type", "residual")
    if est_name not in _ESTIMATOR_CHOICES:
        raise ConfigError(
            f"[estimator] type must be one of {sorted(_ESTIMATOR_CHOICES)}"
        )
    estimator, mode = _ESTIMATOR_CHOICES[est_name]
    theta = _get(cfg, "afem", "theta", 0.5, float)
    if not 0.0 < theta <= 1.0:
        raise ConfigError("[afem] theta must be in (0, 1]")
    max_iters = _get(cfg, "afem", "max_iters", 8, int)
    max_dofs = _get(cfg, "afem", "max_dofs", None, int)
    tol = _get(cfg, "afem", "tol", None, float)
    uniform = _get(cfg, "afem", "uniform", False, _bool)
    solver = _get(cfg, "afem", "solver", "auto")
    timing = _timing_policy(cfg)
    outdir = _output_dir(cfg, name)

    summary = []
    written = []
    for eps in eps_list:
        for kappa in kappa_list:
            spec = case["build"](eps=eps, kappa=kappa)
            if gamma != case["gamma"]:
                spec.gamma = gamma
            history = afem_loop(
                spec,
                mesh0,
                estimator=estimator,
                mode=mode,
                theta=theta,
                max_iters=max_iters,
                max_dofs=max_dofs,
                tol=tol,
                solver=solver,
                uniform=uniform,
            )
            if timing == "none":
                for row in history.rows:
                    row["seconds"] = 0.0
            tag = f"eps{_num_tag(eps)}_kappa{_num_tag(kappa)}"
            hist_path = os.path.join(outdir, f"history_{tag}.csv")
            est_path = os.path.join(outdir, f"estimator_{tag}.csv")
            history.to_csv(hist_path)
            history.final_report.to_csv(est_path)
            written.extend([hist_path, est_path])
            last = history.rows[-1]
            summary.append(
                [
                    eps,
                    kappa,
                    last["ndofs"],
                    last["eta"],
                    last["osc"],
                    last.get("err_total", ""),
                    last.get("effectivity", ""),
                ]
            )
    summary_path = os.path.join(outdir, "summary.csv")
    _write_rows(
        summary_path,
        ["eps", "kappa", "ndofs", "eta", "osc", "err_total", "effectivity"],
        summary,
    )
    written.append(summary_path)
    _echo_config(cfg, outdir)
    for path in written:
        print(path)
    return 0


# -- precond-bench -------------------------------------------------------


def cmd_precond_bench(cfg_path):
    cfg = _read_config(cfg_path)
    name = _get(cfg, "problem", "name")
    if name is None:
        raise ConfigError("[problem] name is required")
    case = get_problem(name)
    if case["kind"] == HODGE_LAPLACIAN:
        raise ConfigError("precond-bench supports H(d) problems only")
    mesh, gamma = _build_mesh(cfg, case)
    eps = _get(cfg, "problem", "eps", 1.0, float)
    kappa = _get(cfg, "problem", "kappa", 1.0, float)
    levels = _get(cfg, "solver", "levels", 3, int)
    if levels < 1:
        raise ConfigError("[solver] levels must be >= 1")
    tol = _get(cfg, "solver", "tol", 1e-8, float)
    max_iters = _get(cfg, "solver", "max_iters", 5000, int)
    timing = _timing_policy(cfg)
    outdir = _output_dir(cfg, f"{name}-bench")

    spec = case["build"](eps=eps, kappa=kappa)
    rows = []
    for level in range(levels):
        system, space = assemble_hd(spec, mesh)
        a_red, _ = system.reduced()
        inv_diag = 1.0 / a_red.diagonal()
        precs = [
            ("none", None),
            ("jacobi", lambda r: inv_diag * r),
            ("hx", build_hx_preconditioner(mesh, spec.k, eps, kappa, spec.gamma)),
        ]
        for pname, prec in precs:
            _, rep = solve_cg(system, prec, tol=tol, max_iters=max_iters)
            seconds = 0.0 if timing == "none" else round(rep.seconds, 6)
            rows.append([pname, level, len(system.free), rep.iterations, seconds])
        if level + 1 < levels:
            mesh = mesh.uniform_refine()
    bench_path = os.path.join(outdir, "bench.csv")
    _write_rows(
        bench_path, ["preconditioner", "level", "ndofs", "iterations", "seconds"], rows
    )
    _echo_config(cfg, outdir)
    print(bench_path)
    return 0


# -- mesh-info -----------------------------------------------------------


def _load_mesh_spec(spec):
    """Mesh from a saved-mesh path or a 'domain[:m[:gamma]]' generator spec."""
    if os.path.isfile(spec):
        return SimplicialMesh.load(spec)
    parts = spec.split(":")
    domain = parts[0]
    m = int(parts[1]) if len(parts) > 1 else 1
    gamma = parts[2] if len(parts) > 2 else None
    return generate_structured(domain, m, gamma=gamma)


def cmd_mesh_info(spec):
    mesh = _load_mesh_spec(spec)
    n = mesh.dim
    labels = ["V", "E", "F", "T"][: n + 1]
    counts = " ".join(f"{lab}={mesh.n_simplices(d)}" for d, lab in enumerate(labels))
    print(f"{counts}, chi={mesh.euler_characteristic()}")
    print(f"shape-regularity (max circumradius/inradius) = {mesh.shape_regularity():g}")
    print(f"h_max = {mesh.cell_diameters.max():g}, h_min = {mesh.cell_diameters.min():g}")
    return 0


# -- list-problems -------------------------------------------------------


def cmd_list_problems():
    for case in list_problems():
        print(
            f"{case['name']:24s} kind={case['kind']:18s} domain={case['domain']:12s} "
            f"n={case['dim']} k={case['k']}  {case['description']}"
        )
    return 0


# -- report --------------------------------------------------------------


def cmd_report(outdir):
    """Render convergence figures from the CSVs in an output directory."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not os.path.isdir(outdir):
        raise ConfigError(f"not a directory: {outdir}")
    hist_files = sorted(
        f for f in os.listdir(outdir) if f.startswith("history_") and f.endswith(".csv")
    )
    if not hist_files:
        raise ConfigError(f"no history_*.csv files in {outdir}")
    written = []
    fig_all, ax_all = plt.subplots(figsize=(6, 4.5))
    for fname in hist_files:
        with open(os.path.join(outdir, fname), newline="") as fh:
            rows = list(csv.DictReader(fh))
        ndofs = np.array([int(r["ndofs"]) for r in rows])
        eta = np.array([float(r["eta"]) for r in rows])
        err = np.array(
            [float(r["err_total"]) if r["err_total"] else np.nan for r in rows]
        )
        tag = fname[len("history_") : -len(".csv")]
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.loglog(ndofs, eta, "o-", label="estimator eta")
        if np.isfinite(err).any():
            ax.loglog(ndofs, err, "s--", label="true error")
        ax.set_xlabel("degrees of freedom")
        ax.set_ylabel("error / estimator")
        ax.set_title(tag)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig_path = os.path.join(outdir, f"convergence_{tag}.png")
        fig.savefig(fig_path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(fig_path)
        ax_all.loglog(ndofs, eta, "o-", label=tag)
    ax_all.set_xlabel("degrees of freedom")
    ax_all.set_ylabel("estimator eta")
    ax_all.grid(True, which="both", alpha=0.3)
    ax_all.legend(fontsize=8)
    all_path = os.path.join(outdir, "convergence_all.png")
    fig_all.savefig(all_path, dpi=120, bbox_inches="tight")
    plt.close(fig_all)
    written.append(all_path)
    for path in written:
        print(path)
    return 0


# -- entry point ---------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(
        prog="derham",
        description="Adaptive finite element exterior calculus experiments",
    )
    sub = p.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run a refinement experiment from a config")
    pr.add_argument("config")
    pb = sub.add_parser("precond-bench", help="benchmark CG preconditioners")
    pb.add_argument("config")
    pm = sub.add_parser("mesh-info", help="print mesh counts and quality")
    pm.add_argument("spec", help="mesh file path or 'domain[:m[:gamma]]'")
    sub.add_parser("list-problems", help="list registered benchmark problems")
    pp = sub.add_parser("report", help="render figures from an output directory")
    pp.add_argument("outdir")
    return p


_PARSE_ERRORS = (ConfigError, ProblemError, MeshError, ValueError)
_RUNTIME_ERRORS = (AssemblyError, SolverError, ArithmeticError, np.linalg.LinAlgError)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "precond-bench":
            return cmd_precond_bench(args.config)
        if args.command == "mesh-info":
            return cmd_mesh_info(args.spec)
        if args.command == "list-problems":
            return cmd_list_problems()
        if args.command == "report":
            return cmd_report(args.outdir)
        return 2
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
