"""Compiled inner loops for the Cox partial likelihood.

All kernels expect rows sorted by ascending time. Ties among events use the
Breslow approximation: every event at a tied time shares the full risk set.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _group_start(time, i):
    j = i
    while j > 0 and time[j - 1] == time[i]:
        j -= 1
    return j


@njit(cache=True)
def cox_loglik(time, event, eta):
    n = time.shape[0]
    c = eta.max()
    s0 = 0.0
    ll = 0.0
    i = n - 1
    while i >= 0:
        j = _group_start(time, i)
        for k in range(j, i + 1):
            s0 += np.exp(eta[k] - c)
        logs0 = np.log(s0)
        for k in range(j, i + 1):
            if event[k]:
                ll += eta[k] - c - logs0
        i = j - 1
    return ll


@njit(cache=True)
def cox_derivatives(time, event, x, eta):
    """Return (loglik, score, hessian) of the log partial likelihood."""
    n, p = x.shape
    c = eta.max()
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    ll = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    i = n - 1
    while i >= 0:
        j = _group_start(time, i)
        for k in range(j, i + 1):
            w = np.exp(eta[k] - c)
            s0 += w
            for a in range(p):
                wa = w * x[k, a]
                s1[a] += wa
                for b in range(a + 1):
                    s2[a, b] += wa * x[k, b]
        d = 0
        for k in range(j, i + 1):
            if event[k]:
                d += 1
                ll += eta[k] - c
                for a in range(p):
                    grad[a] += x[k, a]
        if d > 0:
            ll -= d * np.log(s0)
            for a in range(p):
                ma = s1[a] / s0
                grad[a] -= d * ma
                for b in range(a + 1):
                    hess[a, b] -= d * (s2[a, b] / s0 - ma * s1[b] / s0)
        i = j - 1
    for a in range(p):
        for b in range(a):
            hess[b, a] = hess[a, b]
    return ll, grad, hess


@njit(cache=True)
def breslow_increments(time, event, eta):
    """Breslow hazard increments at each distinct event time.

    Returns (event_times, increments) in ascending time order.
    """
    n = time.shape[0]
    c = eta.max()
    out_t = np.empty(n)
    out_h = np.empty(n)
    m = 0
    s0 = 0.0
    i = n - 1
    while i >= 0:
        j = _group_start(time, i)
        d = 0
        for k in range(j, i + 1):
            s0 += np.exp(eta[k] - c)
            if event[k]:
                d += 1
        if d > 0:
            out_t[m] = time[i]
            # increment on the original eta scale: d / sum exp(eta)
            out_h[m] = d / s0 * np.exp(-c)
            m += 1
        i = j - 1
    return out_t[:m][::-1].copy(), out_h[:m][::-1].copy()


@njit(cache=True)
def _penalty(beta, lam, alpha, pf):
    s = 0.0
    for j in range(beta.shape[0]):
        if pf[j] > 0.0:
            s += pf[j] * (alpha * abs(beta[j]) + 0.5 * (1.0 - alpha) * beta[j] ** 2)
    return lam * s


@njit(cache=True)
def penalized_solve(time, event, x, beta0, lam, alpha, pf,
                    max_outer, max_cd, tol, cap):
    """Minimise -l(beta)/n + lam * sum_j pf_j [alpha|b_j| + (1-alpha) b_j^2/2].

    Outer loop: quadratic (Newton) model of -l/n; inner loop: cyclic
    coordinate descent with soft-thresholding; step-halving on the full
    objective keeps the outer sequence monotone.

    Returns (beta, objective_trace, n_outer, converged, capped).
    """
    n, p = x.shape
    beta = beta0.copy()
    eta = x @ beta
    ll, g, h = cox_derivatives(time, event, x, eta)
    f = -ll / n + _penalty(beta, lam, alpha, pf)
    trace = np.empty(max_outer + 1)
    trace[0] = f
    converged = False
    capped = False
    it = 0
    for it in range(1, max_outer + 1):
        a = -h / n
        gn = g / n
        new = beta.copy()
        u = np.zeros(p)  # a @ (new - beta)
        for _ in range(max_cd):
            maxd = 0.0
            for j in range(p):
                ajj = a[j, j]
                if ajj <= 1e-14:
                    continue
                z = ajj * new[j] + gn[j] - u[j]
                thr = lam * pf[j] * alpha
                if z > thr:
                    nj = (z - thr) / (ajj + lam * pf[j] * (1.0 - alpha))
                elif z < -thr:
                    nj = (z + thr) / (ajj + lam * pf[j] * (1.0 - alpha))
                else:
                    nj = 0.0
                d = nj - new[j]
                if d != 0.0:
                    for k in range(p):
                        u[k] += a[k, j] * d
                    new[j] = nj
                    dd = abs(d) * np.sqrt(ajj)
                    if dd > maxd:
                        maxd = dd
            if maxd < tol * 0.1:
                break
        direction = new - beta
        step = 1.0
        cand = beta + direction
        f_c = f
        while True:
            cand = beta + step * direction
            for j in range(p):
                if cand[j] > cap:
                    cand[j] = cap
                elif cand[j] < -cap:
                    cand[j] = -cap
            f_c = -cox_loglik(time, event, x @ cand) / n + _penalty(cand, lam, alpha, pf)
            if f_c <= f + 1e-13 * (1.0 + abs(f)):
                break
            step *= 0.5
            if step < 1e-10:
                cand = beta.copy()
                f_c = f
                break
        change = np.abs(cand - beta).max() if p > 0 else 0.0
        beta = cand
        f = f_c
        trace[it] = f
        for j in range(p):
            if abs(beta[j]) >= cap:
                capped = True
        eta = x @ beta
        ll, g, h = cox_derivatives(time, event, x, eta)
        if change < tol:
            converged = True
            break
        if capped:
            break
    return beta, trace[: it + 1].copy(), it, converged and not capped, capped
