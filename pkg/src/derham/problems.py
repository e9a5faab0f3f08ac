"""Registry of benchmark problems with symbolically manufactured data.

Given an exact solution expression, the load, its coderivative, and the
exact derivative fields are derived with sympy and compiled to vectorized
callables, so coefficient parameters (eps, kappa) enter exactly.
"""

import numpy as np
import sympy as sp

from derham.assembly import HD_POSITIVE, HODGE_LAPLACIAN, REACTION_DIFFUSION, ProblemSpec

_X, _Y, _Z = sp.symbols("x y z")


class ProblemError(Exception):
    pass


def _coords(n):
    return (_X, _Y, _Z)[:n]


def _d_proxy(exprs, k, n):
    """Proxy of the exterior derivative of a k-form proxy expression list."""
    c = _coords(n)
    if k == 0:
        (u,) = exprs
        return [sp.diff(u, v) for v in c]
    if k == 1 and n == 2:
        return [sp.diff(exprs[1], _X) - sp.diff(exprs[0], _Y)]
    if k == 1 and n == 3:
        return [
            sp.diff(exprs[2], _Y) - sp.diff(exprs[1], _Z),
            sp.diff(exprs[0], _Z) - sp.diff(exprs[2], _X),
            sp.diff(exprs[1], _X) - sp.diff(exprs[0], _Y),
        ]
    if k == 2 and n == 3:
        return [sum(sp.diff(exprs[i], c[i]) for i in range(3))]
    raise ProblemError(f"no derivative proxy for (k, n) = ({k}, {n})")


def _delta_proxy(exprs, j, n):
    """Proxy of the coderivative of a j-form proxy expression list."""
    c = _coords(n)
    if j == 0:
        return None
    if j == 1:
        return [-sum(sp.diff(exprs[i], c[i]) for i in range(n))]
    if j == 2 and n == 3:
        return [
            sp.diff(exprs[2], _Y) - sp.diff(exprs[1], _Z),
            sp.diff(exprs[0], _Z) - sp.diff(exprs[2], _X),
            sp.diff(exprs[1], _X) - sp.diff(exprs[0], _Y),
        ]
    if j == 2 and n == 2:
        (g,) = exprs
        return [sp.diff(g, _Y), -sp.diff(g, _X)]
    if j == 3 and n == 3:
        (g,) = exprs
        return [-sp.diff(g, v) for v in c]
    raise ProblemError(f"no coderivative proxy for (j, n) = ({j}, {n})")


def _compile(exprs, n):
    """Vectorized callable x (npts, n) -> (npts,) or (npts, len(exprs))."""
    if exprs is None:
        return None
    fns = [sp.lambdify(_coords(n), e, "numpy") for e in exprs]

    def call(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [np.broadcast_to(np.asarray(f(*x.T), dtype=float), (len(x),)) for f in fns]
        return cols[0].copy() if len(cols) == 1 else np.stack(cols, axis=1)

    return call


def _hd_case(name, domain, n, k, u_exprs, gamma, description):
    def build(eps=1.0, kappa=1.0):
        eps_s, kap_s = sp.nsimplify(eps, rational=False), sp.nsimplify(kappa, rational=False)
        du = _d_proxy(u_exprs, k, n)
        f = _delta_proxy([eps_s * e for e in du], k + 1, n)
        f = [f[i] + kap_s * u_exprs[i] for i in range(len(u_exprs))]
        f_codiff = _delta_proxy(f, k, n) if k >= 1 else None
        kind = REACTION_DIFFUSION if k == 0 else HD_POSITIVE
        spec = ProblemSpec(
            kind=kind,
            k=k,
            eps=float(eps),
            kappa=float(kappa),
            f=_compile(f, n),
            f_codiff=_compile(f_codiff, n),
            gamma=gamma,
            manufactured={"u": _compile(u_exprs, n), "du": _compile(du, n)},
        )
        return spec

    return {
        "name": name,
        "kind": REACTION_DIFFUSION if k == 0 else HD_POSITIVE,
        "domain": domain,
        "dim": n,
        "k": k,
        "gamma": gamma,
        "description": description,
        "build": build,
        "manufactured": True,
    }


def _hodge_case(name, domain, n, k, u_exprs, gamma, description):
    def build(eps=1.0, kappa=1.0):
        sigma = _delta_proxy(u_exprs, k, n)
        dsigma = _d_proxy(sigma, k - 1, n)
        f = list(dsigma)
        if k < n:
            du = _d_proxy(u_exprs, k, n)
            ddu = _delta_proxy(du, k + 1, n)
            f = [f[i] + ddu[i] for i in range(len(f))]
            du_call = _compile(du, n)
        else:
            du_call = None
        f_codiff = _delta_proxy(f, k, n) if (k >= 1 and k < n) else None
        spec = ProblemSpec(
            kind=HODGE_LAPLACIAN,
            k=k,
            f=_compile(f, n),
            f_codiff=_compile(f_codiff, n),
            gamma=gamma,
            manufactured={
                "u": _compile(u_exprs, n),
                "du": du_call,
                "sigma": _compile(sigma, n),
                "dsigma": _compile(dsigma, n),
            },
        )
        return spec

    return {
        "name": name,
        "kind": HODGE_LAPLACIAN,
        "domain": domain,
        "dim": n,
        "k": k,
        "gamma": gamma,
        "description": description,
        "build": build,
        "manufactured": True,
    }


def _singular_case(name, domain, n, k, f_exprs, gamma, description, f_codiff_exprs=None):
    def build(eps=1.0, kappa=1.0):
        kind = REACTION_DIFFUSION if k == 0 else HD_POSITIVE
        return ProblemSpec(
            kind=kind,
            k=k,
            eps=float(eps),
            kappa=float(kappa),
            f=_compile(f_exprs, n),
            f_codiff=_compile(f_codiff_exprs, n),
            gamma=gamma,
            manufactured={},
        )

    return {
        "name": name,
        "kind": REACTION_DIFFUSION if k == 0 else HD_POSITIVE,
        "domain": domain,
        "dim": n,
        "k": k,
        "gamma": gamma,
        "description": description,
        "build": build,
        "manufactured": False,
    }


_PI = sp.pi
_SIN, _COS = sp.sin, sp.cos

REGISTRY = {}
for case in [
    _hd_case(
        "reaction-diffusion-square",
        "unit-square",
        2,
        0,
        [_SIN(_PI * _X) * _SIN(_PI * _Y)],
        "whole-boundary",
        "scalar reaction-diffusion on the unit square, trig solution",
    ),
    _hd_case(
        "maxwell-cube",
        "unit-cube",
        3,
        1,
        [
            _SIN(_PI * _Y) * _SIN(_PI * _Z),
            _SIN(_PI * _Z) * _SIN(_PI * _X),
            _SIN(_PI * _X) * _SIN(_PI * _Y),
        ],
        "whole-boundary",
        "curl-curl plus reaction on the unit cube, divergence-free solution",
    ),
    _hd_case(
        "graddiv-cube",
        "unit-cube",
        3,
        2,
        [
            _SIN(_PI * _X) * _COS(_PI * _Y),
            _SIN(_PI * _Y) * _COS(_PI * _Z),
            _SIN(_PI * _Z) * _COS(_PI * _X),
        ],
        "whole-boundary",
        "grad-div plus reaction on the unit cube, zero normal trace",
    ),
    _hd_case(
        "curl2d-square",
        "unit-square",
        2,
        1,
        [
            _SIN(_PI * _Y),
            _SIN(_PI * _X),
        ],
        "whole-boundary",
        "2D rot-rot plus reaction on the unit square, divergence-free solution",
    ),
    _hodge_case(
        "mixed-poisson-square",
        "unit-square",
        2,
        2,
        [_SIN(_PI * _X) * _SIN(_PI * _Y)],
        None,
        "mixed Poisson on the unit square (top-degree Hodge Laplacian)",
    ),
    _hodge_case(
        "mixed-poisson-cube",
        "unit-cube",
        3,
        3,
        [_SIN(_PI * _X) * _SIN(_PI * _Y) * _SIN(_PI * _Z)],
        None,
        "mixed Poisson on the unit cube (top-degree Hodge Laplacian)",
    ),
    _hodge_case(
        "hodge-1-cube",
        "unit-cube",
        3,
        1,
        [
            _SIN(_PI * _Y) * _SIN(_PI * _Z),
            _SIN(_PI * _Z) * _SIN(_PI * _X),
            _SIN(_PI * _X) * _SIN(_PI * _Y),
        ],
        "whole-boundary",
        "1-form Hodge Laplacian on the unit cube, divergence-free solution",
    ),
    _singular_case(
        "lshape-poisson",
        "l-shape",
        2,
        0,
        [sp.Integer(1)],
        "whole-boundary",
        "Poisson with constant load on the L-shaped domain (corner singularity)",
    ),
    _singular_case(
        "lshape-maxwell",
        "l-shape",
        2,
        1,
        [sp.Integer(1), sp.Integer(0)],
        "whole-boundary",
        "2D H(curl) problem with constant load on the L-shaped domain",
        f_codiff_exprs=[sp.Integer(0)],
    ),
]:
    REGISTRY[case["name"]] = case


def get_problem(name):
    if name not in REGISTRY:
        raise ProblemError(f"unknown problem {name!r}; see list of registered problems")
    return REGISTRY[name]


def list_problems():
    return [REGISTRY[name] for name in sorted(REGISTRY)]
