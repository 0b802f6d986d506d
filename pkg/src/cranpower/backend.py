"""Inner-loop backend selection: compiled extension if available, numpy otherwise.

Set CRANPOWER_BACKEND=python or =compiled to force a choice; forcing the
compiled backend when the extension is missing raises at import of this
module's selector.
"""
from __future__ import annotations

import os

import numpy as np

from .inner import InnerResult, inner_dual_solve_py

try:
    from . import _inner_c
    _HAVE_COMPILED = True
except ImportError:
    _inner_c = None
    _HAVE_COMPILED = False


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _HAVE_COMPILED else ("python",)


def _pick_default() -> str:
    forced = os.environ.get("CRANPOWER_BACKEND")
    if forced:
        if forced not in ("python", "compiled"):
            raise ValueError(f"unknown backend: {forced}")
        if forced == "compiled" and not _HAVE_COMPILED:
            raise RuntimeError("compiled backend requested but extension "
                               "is not built")
        return forced
    return "compiled" if _HAVE_COMPILED else "python"


_ACTIVE = _pick_default()


def active_backend() -> str:
    return _ACTIVE


def set_backend(name: str) -> None:
    global _ACTIVE
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown backend: {name}")
    if name == "compiled" and not _HAVE_COMPILED:
        raise RuntimeError("compiled extension is not built")
    _ACTIVE = name


def inner_dual_solve(m_full, m_int, p_r, rate_r, alpha, rru_of_user, n_rrus,
                     power_budget, con_of_user, rhs, lam0, q_shift, p_min,
                     step0, step_rule, normalize_step, eps, min_iters,
                     max_iters, feas_tol, bisection_tol, p_seed=None,
                     t_offset=0, backend: str | None = None) -> InnerResult:
    """Solve one convex subproblem with the selected backend."""
    name = backend or _ACTIVE
    if name == "python":
        return inner_dual_solve_py(
            m_full, m_int, p_r, rate_r, alpha, rru_of_user, n_rrus,
            power_budget, con_of_user, rhs, lam0, q_shift, p_min, step0,
            step_rule, normalize_step, eps, min_iters, max_iters, feas_tol,
            bisection_tol, p_seed, t_offset)
    p, lam, mu, metric, iters, gval = _inner_c.inner_dual_solve_c(
        np.ascontiguousarray(m_full), np.ascontiguousarray(m_int),
        np.ascontiguousarray(p_r), np.ascontiguousarray(rate_r),
        np.ascontiguousarray(alpha, dtype=float),
        np.ascontiguousarray(rru_of_user, dtype=np.int64), int(n_rrus),
        float(power_budget),
        np.ascontiguousarray(con_of_user, dtype=np.int64),
        np.ascontiguousarray(rhs, dtype=float),
        np.ascontiguousarray(lam0, dtype=float), float(q_shift), float(p_min),
        float(step0), step_rule, bool(normalize_step), float(eps),
        int(min_iters), int(max_iters), float(feas_tol), float(bisection_tol),
        p_seed, int(t_offset))
    return InnerResult(p=p, lam=lam, mu=mu, metric=metric, iterations=iters,
                       dual_objective=gval, feasible=True)
