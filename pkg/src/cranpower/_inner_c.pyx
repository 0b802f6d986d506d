# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner dual-subgradient loop.

Mirrors cranpower.inner.inner_dual_solve_py step for step; the parity test
suite holds the two implementations together.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, log, sqrt


cdef void _coeffs(const double[:, ::1] m_full, const double[:, ::1] m_int,
                  const double[::1] alpha, double[::1] lam_user,
                  double[::1] a, double[::1] b, Py_ssize_t k_users) nogil:
    cdef Py_ssize_t i, k
    cdef double sa, sb
    for i in range(k_users):
        sa = 0.0
        sb = 0.0
        for k in range(k_users):
            sa += alpha[k] * m_full[i, k] + lam_user[k] * m_int[i, k]
            sb += lam_user[k] * m_full[i, k] + alpha[k] * m_int[i, k]
        a[i] = sa
        b[i] = sb


cdef double _cell_sum(double[::1] base, double[::1] den0, const long[::1] users,
                      Py_ssize_t start, Py_ssize_t stop, double mu,
                      double p_min) nogil:
    cdef Py_ssize_t n
    cdef double s = 0.0, val
    for n in range(start, stop):
        val = base[users[n]] / (den0[users[n]] + mu)
        if val < p_min:
            val = p_min
        s += val
    return s


def inner_dual_solve_c(const double[:, ::1] m_full, const double[:, ::1] m_int,
                       const double[::1] p_r, const double[::1] rate_r, const double[::1] alpha,
                       const long[::1] rru_of_user, int n_rrus, double power_budget,
                       const long[::1] con_of_user, const double[::1] rhs, const double[::1] lam0,
                       double q_shift, double p_min, double step0,
                       str step_rule, bint normalize_step, double eps,
                       int min_iters, int max_iters, double feas_tol,
                       double bisection_tol, p_seed=None, long t_offset=0):
    cdef Py_ssize_t k_users = p_r.shape[0]
    cdef Py_ssize_t n_con = rhs.shape[0]
    cdef int max_halvings = 200
    cdef bint constant_rule = (step_rule == "constant")

    order_np = np.argsort(np.asarray(rru_of_user), kind="stable").astype(np.int64)
    counts = np.bincount(np.asarray(rru_of_user), minlength=n_rrus)
    starts_np = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cdef long[::1] order = order_np
    cdef long[::1] starts = starts_np

    log_p_r_np = np.log(np.asarray(p_r))
    cdef double[::1] log_p_r = log_p_r_np

    cdef double[::1] a = np.empty(k_users)
    cdef double[::1] b = np.empty(k_users)
    cdef double[::1] base = np.empty(k_users)
    cdef double[::1] den0 = np.empty(k_users)
    cdef double[::1] p = np.empty(k_users)
    cdef double[::1] dp = np.empty(k_users)
    cdef double[::1] dlog = np.empty(k_users)
    cdef double[::1] g = np.empty(k_users)
    cdef double[::1] h = np.empty(k_users)
    cdef double[::1] mu = np.empty(n_rrus)
    cdef double[::1] lam = np.asarray(lam0, dtype=np.float64).copy()
    cdef double[::1] lam_user = np.zeros(k_users)
    cdef double[::1] slack = np.empty(max(n_con, 1))
    cdef double[::1] feas_slack = np.empty(max(n_con, 1))

    best_p = np.asarray(p_r).copy()
    cdef double best_metric
    cdef bint have_gval = 0

    cdef Py_ssize_t i, k, l, c, n, t
    cdef double s, lo, hi, mid, tol, metric, gval, prev_gval = 0.0
    cdef double step, nrm, val, sg, sh
    cdef bint feasible, bracketed, hit

    tol = bisection_tol if bisection_tol > 0.0 else 1e-12 * power_budget
    for c in range(n_con):
        feas_slack[c] = feas_tol * (1.0 if rhs[c] < 1.0 else rhs[c])

    # metric at the expansion-point seed
    best_metric = 0.0
    for k in range(k_users):
        best_metric += alpha[k] * rate_r[k] - q_shift * p_r[k]

    from .inner import BisectionError

    # optional extra seed (previous Dinkelbach solution)
    if p_seed is not None:
        seed = np.ascontiguousarray(p_seed, dtype=np.float64)
        sdp = seed - np.asarray(p_r)
        sdl = np.asarray(p_r) * (np.log(seed) - log_p_r_np)
        gs = np.asarray(rate_r) - np.asarray(m_int).T @ sdp \
            + np.asarray(m_full).T @ sdl
        hs = np.asarray(rate_r) + np.asarray(m_full).T @ sdp \
            - np.asarray(m_int).T @ sdl
        if n_con:
            sums = np.zeros(n_con)
            np.add.at(sums, np.asarray(con_of_user), hs)
            ok = np.all(sums - np.asarray(rhs) <= np.asarray(feas_slack[:n_con]))
        else:
            ok = True
        if ok:
            m_seed = float(np.asarray(alpha) @ gs) - q_shift * float(seed.sum())
            if m_seed > best_metric:
                best_metric = m_seed
                best_p = seed.copy()

    gval = 0.0
    t = 0
    for t in range(1, max_iters + 1):
        if n_con:
            for k in range(k_users):
                lam_user[k] = lam[con_of_user[k]]
        _coeffs(m_full, m_int, alpha, lam_user, a, b, k_users)

        for i in range(k_users):
            base[i] = p_r[i] * a[i]
            den0[i] = b[i] + q_shift
            val = base[i] / den0[i]
            p[i] = val if val > p_min else p_min
        for l in range(n_rrus):
            mu[l] = 0.0
            if starts[l] == starts[l + 1]:
                continue
            s = 0.0
            for n in range(starts[l], starts[l + 1]):
                s += p[order[n]]
            if s <= power_budget:
                continue
            hi = 1.0
            bracketed = 0
            for n in range(max_halvings):
                if _cell_sum(base, den0, order, starts[l], starts[l + 1],
                             hi, p_min) < power_budget:
                    bracketed = 1
                    break
                hi *= 2.0
            if not bracketed:
                raise BisectionError("could not bracket the power multiplier")
            lo = 0.0
            hit = 0
            for n in range(max_halvings):
                mid = 0.5 * (lo + hi)
                s = _cell_sum(base, den0, order, starts[l], starts[l + 1],
                              mid, p_min)
                if fabs(s - power_budget) <= tol:
                    hi = mid
                    hit = 1
                    break
                if s > power_budget:
                    lo = mid
                else:
                    hi = mid
            if not hit:
                s = _cell_sum(base, den0, order, starts[l], starts[l + 1],
                              hi, p_min)
                if fabs(s - power_budget) > 1e3 * tol:
                    raise BisectionError("power bisection did not converge")
            mu[l] = hi
            for n in range(starts[l], starts[l + 1]):
                val = base[order[n]] / (den0[order[n]] + hi)
                p[order[n]] = val if val > p_min else p_min

        for i in range(k_users):
            dp[i] = p[i] - p_r[i]
            dlog[i] = p_r[i] * (log(p[i]) - log_p_r[i])
        for k in range(k_users):
            sg = rate_r[k]
            sh = rate_r[k]
            for i in range(k_users):
                sg += m_full[i, k] * dlog[i] - m_int[i, k] * dp[i]
                sh += m_full[i, k] * dp[i] - m_int[i, k] * dlog[i]
            g[k] = sg
            h[k] = sh

        for c in range(n_con):
            slack[c] = -rhs[c]
        for k in range(k_users):
            if n_con:
                slack[con_of_user[k]] += h[k]

        metric = 0.0
        for k in range(k_users):
            metric += alpha[k] * g[k] - q_shift * p[k]
        gval = -metric
        feasible = 1
        for c in range(n_con):
            gval += lam[c] * slack[c]
            if slack[c] > feas_slack[c]:
                feasible = 0

        if n_con == 0:
            best_metric = metric
            best_p = np.asarray(p).copy()
            break
        if feasible and metric > best_metric:
            best_metric = metric
            best_p = np.asarray(p).copy()
        if (feasible and t >= min_iters and have_gval
                and fabs(gval - prev_gval)
                <= eps * (1.0 if fabs(prev_gval) < 1.0 else fabs(prev_gval))):
            break
        prev_gval = gval
        have_gval = 1

        step = step0 if constant_rule else step0 / sqrt(<double>(t + t_offset))
        if normalize_step:
            nrm = 0.0
            for c in range(n_con):
                nrm += slack[c] * slack[c]
            nrm = sqrt(nrm)
            if nrm < 1e-12:
                nrm = 1e-12
            step /= nrm
        for c in range(n_con):
            val = lam[c] + step * slack[c]
            lam[c] = val if val > 0.0 else 0.0

    return (best_p, np.asarray(lam[:n_con]).copy() if n_con else np.zeros(0),
            np.asarray(mu).copy(), best_metric, int(t), float(gval))
