# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in ``_pykernels`` with the same
signature and semantics; ``_backend`` picks one at import time.
"""

from libc.math cimport log, fabs, sqrt, INFINITY

import numpy as np


def project_simplex(const double[::1] v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, j
    cdef double tmp, cumsum = 0.0, theta = 0.0, t
    u_arr = np.sort(np.asarray(v))[::-1].copy()
    cdef double[::1] u = u_arr
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        cumsum += u[i]
        t = (cumsum - 1.0) / (i + 1)
        if i == 0 or u[i] - t > 0.0:  # index 0 always qualifies in exact arithmetic
            theta = t
    for i in range(n):
        tmp = v[i] - theta
        out[i] = tmp if tmp > 0.0 else 0.0
    return out_arr


def mixture_loglik(const double[:, ::1] P, const double[::1] counts,
                   const double[::1] w, double floor):
    """sum_k counts[k] * log(max((P @ w)[k], floor))."""
    cdef Py_ssize_t K = P.shape[0], m = P.shape[1]
    cdef Py_ssize_t k, i
    cdef double total = 0.0, p
    for k in range(K):
        if counts[k] == 0.0:
            continue
        p = 0.0
        for i in range(m):
            p += P[k, i] * w[i]
        if p < floor:
            p = floor
        total += counts[k] * log(p)
    return total


def mixture_loglik_grad(const double[:, ::1] P, const double[::1] counts,
                        const double[::1] w, double floor, double[::1] grad):
    """Value of ``mixture_loglik``; writes its gradient in w into ``grad``.

    Cells whose mixed probability sits on the floor contribute no gradient.
    """
    cdef Py_ssize_t K = P.shape[0], m = P.shape[1]
    cdef Py_ssize_t k, i
    cdef double total = 0.0, p, scale
    for i in range(m):
        grad[i] = 0.0
    for k in range(K):
        if counts[k] == 0.0:
            continue
        p = 0.0
        for i in range(m):
            p += P[k, i] * w[i]
        if p < floor:
            total += counts[k] * log(floor)
            continue
        total += counts[k] * log(p)
        scale = counts[k] / p
        for i in range(m):
            grad[i] += scale * P[k, i]
    return total


cdef inline double _ll(const double[:, ::1] P, const double[::1] counts, const double* w,
                        double floor) noexcept nogil:
    cdef Py_ssize_t K = P.shape[0], m = P.shape[1]
    cdef Py_ssize_t k, i
    cdef double total = 0.0, p
    for k in range(K):
        if counts[k] == 0.0:
            continue
        p = 0.0
        for i in range(m):
            p += P[k, i] * w[i]
        if p < floor:
            p = floor
        total += counts[k] * log(p)
    return total


cdef inline double _ll_grad(const double[:, ::1] P, const double[::1] counts, const double* w,
                            double floor, double* grad) noexcept nogil:
    cdef Py_ssize_t K = P.shape[0], m = P.shape[1]
    cdef Py_ssize_t k, i
    cdef double total = 0.0, p, scale
    for i in range(m):
        grad[i] = 0.0
    for k in range(K):
        if counts[k] == 0.0:
            continue
        p = 0.0
        for i in range(m):
            p += P[k, i] * w[i]
        if p < floor:
            total += counts[k] * log(floor)
            continue
        total += counts[k] * log(p)
        scale = counts[k] / p
        for i in range(m):
            grad[i] += scale * P[k, i]
    return total


cdef inline void _project(const double* v, double* out, double* buf, Py_ssize_t n) noexcept nogil:
    # sort-based projection followed by one renormalisation
    cdef Py_ssize_t i, j
    cdef double x, cumsum = 0.0, theta = 0.0, t, tot = 0.0
    for i in range(n):
        buf[i] = v[i]
    for i in range(1, n):
        x = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < x:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = x
    for i in range(n):
        cumsum += buf[i]
        t = (cumsum - 1.0) / (i + 1)
        if i == 0 or buf[i] - t > 0.0:
            theta = t
    for i in range(n):
        x = v[i] - theta
        out[i] = x if x > 0.0 else 0.0
        tot += out[i]
    if not tot > 0.0:
        # v - theta cancelled everywhere: the limit is the vertex at argmax(v)
        j = 0
        for i in range(1, n):
            if v[i] > v[j]:
                j = i
        for i in range(n):
            out[i] = 1.0 if i == j else 0.0
    elif tot != 1.0:
        for i in range(n):
            out[i] /= tot


def mixture_ascent(const double[:, ::1] P, const double[::1] counts, double[::1] w,
                   double floor, double tol, long max_iter, double armijo_c,
                   double backtrack, double min_step):
    """Projected-gradient ascent of ``mixture_loglik`` from ``w`` (updated in place).

    Same iteration as the generic simplex solver: Armijo backtracking along
    the projection arc, step doubled after each accepted step. Returns
    ``(f, iterations, converged)``.
    """
    cdef Py_ssize_t m = P.shape[1]
    cdef Py_ssize_t i
    cdef long it = 0
    cdef bint converged = False, accepted, moved_any
    cdef double f, f_new, step, t, gmax, dec, moved, x
    scratch = np.empty((5, m), dtype=np.float64)
    cdef double[:, ::1] sc = scratch
    cdef double* g = &sc[0, 0]
    cdef double* wn = &sc[1, 0]
    cdef double* tmp = &sc[2, 0]
    cdef double* buf = &sc[3, 0]
    cdef double* pg = &sc[4, 0]
    cdef double* wp = &w[0]
    f = _ll_grad(P, counts, wp, floor, g)
    if m == 1:
        return f, 0, True
    with nogil:
        gmax = 0.0
        for i in range(m):
            if fabs(g[i]) > gmax:
                gmax = fabs(g[i])
        step = 1.0 / (gmax if gmax > 1.0 else 1.0)
        while it < max_iter:
            for i in range(m):
                tmp[i] = wp[i] + g[i]
            _project(tmp, pg, buf, m)
            x = 0.0
            for i in range(m):
                if fabs(pg[i] - wp[i]) > x:
                    x = fabs(pg[i] - wp[i])
            if x < tol:
                converged = True
                break
            it += 1
            t = step
            accepted = False
            while t > min_step:
                for i in range(m):
                    tmp[i] = wp[i] + t * g[i]
                _project(tmp, wn, buf, m)
                moved_any = False
                dec = 0.0
                for i in range(m):
                    if wn[i] != wp[i]:
                        moved_any = True
                    dec += g[i] * (wn[i] - wp[i])
                if not moved_any:
                    break
                f_new = _ll(P, counts, wn, floor)
                if f_new >= f + armijo_c * dec:
                    accepted = True
                    break
                t *= backtrack
            if not accepted:
                converged = True
                break
            moved = 0.0
            for i in range(m):
                if fabs(wn[i] - wp[i]) > moved:
                    moved = fabs(wn[i] - wp[i])
                wp[i] = wn[i]
            f = f_new
            step = t * 2.0
            if moved < tol:
                converged = True
                break
            f = _ll_grad(P, counts, wp, floor, g)
    return f, it, converged


cdef inline void _bellman(const double[:, :, ::1] T, const double[:, ::1] R,
                          double gamma, const double[::1] V, double[::1] out,
                          long[::1] policy) noexcept nogil:
    cdef Py_ssize_t S = T.shape[0], A = T.shape[1]
    cdef Py_ssize_t s, a, sp
    cdef double q, best, acc
    cdef long arg
    for s in range(S):
        best = -INFINITY
        arg = 0
        for a in range(A):
            acc = 0.0
            for sp in range(S):
                acc += T[s, a, sp] * V[sp]
            q = R[s, a] + gamma * acc
            if q > best:
                best = q
                arg = a
        out[s] = best
        policy[s] = arg


def value_iteration(const double[:, :, ::1] T, const double[:, ::1] R,
                    double gamma, double stop, long max_iter, double[::1] V):
    """Iterate the Bellman optimality operator from ``V`` (updated in place).

    Stops after the first sweep whose sup-norm change is below ``stop``.
    Returns ``(policy, sweeps)`` with the policy greedy w.r.t. the final V.
    """
    cdef Py_ssize_t S = T.shape[0]
    cdef Py_ssize_t s
    cdef long it = 0
    cdef double diff, d
    nxt_arr = np.empty(S, dtype=np.float64)
    cdef double[::1] nxt = nxt_arr
    policy_arr = np.zeros(S, dtype=np.int64)
    cdef long[::1] policy = policy_arr
    with nogil:
        while it < max_iter:
            _bellman(T, R, gamma, V, nxt, policy)
            it += 1
            diff = 0.0
            for s in range(S):
                d = fabs(nxt[s] - V[s])
                if d > diff:
                    diff = d
                V[s] = nxt[s]
            if diff < stop:
                break
        # greedy w.r.t. the returned V; nxt is scratch
        _bellman(T, R, gamma, V, nxt, policy)
    return policy_arr, it


def bellman_residual(const double[:, :, ::1] T, const double[:, ::1] R,
                     double gamma, const double[::1] V):
    """Sup-norm of V - max_a (R + gamma T V)."""
    cdef Py_ssize_t S = T.shape[0]
    cdef Py_ssize_t s
    cdef double res = 0.0, d
    nxt_arr = np.empty(S, dtype=np.float64)
    cdef double[::1] nxt = nxt_arr
    policy_arr = np.zeros(S, dtype=np.int64)
    cdef long[::1] policy = policy_arr
    _bellman(T, R, gamma, V, nxt, policy)
    for s in range(S):
        d = fabs(nxt[s] - V[s])
        if d > res:
            res = d
    return res


def sample_categorical(const double[::1] cdf, double u):
    """Smallest index i with u < cdf[i]; the last index if none."""
    cdef Py_ssize_t n = cdf.shape[0], i
    for i in range(n):
        if u < cdf[i]:
            return i
    return n - 1


cdef inline void _matmul(const double* A, const double* B, double* C, Py_ssize_t n, Py_ssize_t k,
                         Py_ssize_t m, bint transA) noexcept nogil:
    # C (n x m) = op(A) (n x k) @ B (k x m); op(A) = A^T when transA (A stored k x n)
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(k):
                if transA:
                    acc += A[l * n + i] * B[l * m + j]
                else:
                    acc += A[i * k + l] * B[l * m + j]
            C[i * m + j] = acc


cdef inline bint _chol_solve(double* G, double* X, Py_ssize_t k, Py_ssize_t n) noexcept nogil:
    # overwrite G (k x k, SPD) by its Cholesky factor and X (k x n) by G^-1 X
    cdef Py_ssize_t i, j, l
    cdef double s
    for j in range(k):
        s = G[j * k + j]
        for l in range(j):
            s -= G[j * k + l] * G[j * k + l]
        if not s > 0.0:
            return False
        G[j * k + j] = sqrt(s)
        for i in range(j + 1, k):
            s = G[i * k + j]
            for l in range(j):
                s -= G[i * k + l] * G[j * k + l]
            G[i * k + j] = s / G[j * k + j]
    for l in range(n):
        for i in range(k):
            s = X[i * n + l]
            for j in range(i):
                s -= G[i * k + j] * X[j * n + l]
            X[i * n + l] = s / G[i * k + i]
        for i in range(k - 1, -1, -1):
            s = X[i * n + l]
            for j in range(i + 1, k):
                s -= G[j * k + i] * X[j * n + l]
            X[i * n + l] = s / G[i * k + i]
    return True


def riccati_iterate(const double[:, ::1] F, const double[:, ::1] B, const double[:, ::1] Q,
                    const double[:, ::1] R, double[:, ::1] P, double tol, long max_iter):
    """Fixed-point Riccati recursion from ``P`` (updated in place).

    Stops at the first iterate whose update has Frobenius norm <= tol and
    returns ``(K, iterations, residual, converged)`` with K computed from
    that iterate. ``P`` holds the last iterate on exit.
    """
    cdef Py_ssize_t n = F.shape[0], k = B.shape[1]
    cdef Py_ssize_t i, j
    cdef long it = 0
    cdef double res = INFINITY, d
    cdef bint converged = False, ok
    work = np.zeros(4 * n * n + 3 * n * k + 2 * k * k, dtype=np.float64)
    cdef double[::1] wk = work
    cdef double* PF = &wk[0]
    cdef double* FtPF = PF + n * n
    cdef double* nxt = FtPF + n * n
    cdef double* tmp = nxt + n * n
    cdef double* PB = tmp + n * n
    cdef double* FtPB = PB + n * k
    cdef double* X = FtPB + n * k
    cdef double* G = X + n * k
    cdef double* Gc = G + k * k
    K_arr = np.zeros((k, n), dtype=np.float64)
    cdef double[:, ::1] K = K_arr
    cdef double* Pp = &P[0, 0]
    cdef const double* Fp = &F[0, 0]
    cdef const double* Bp = &B[0, 0]
    with nogil:
        while it <= max_iter:
            _matmul(Pp, Bp, PB, n, n, k, False)
            _matmul(Bp, PB, G, k, n, k, True)
            for i in range(k * k):
                G[i] += R[i // k, i % k]
                Gc[i] = G[i]
            _matmul(Fp, PB, FtPB, n, n, k, True)
            # X = G^-1 FtPB^T  (k x n)
            for i in range(k):
                for j in range(n):
                    X[i * n + j] = FtPB[j * k + i]
            ok = _chol_solve(Gc, X, k, n)
            if not ok:
                break
            _matmul(Pp, Fp, PF, n, n, n, False)
            _matmul(Fp, PF, FtPF, n, n, n, True)
            _matmul(FtPB, X, tmp, n, k, n, False)
            for i in range(n):
                for j in range(n):
                    nxt[i * n + j] = Q[i, j] + FtPF[i * n + j] - tmp[i * n + j]
            res = 0.0
            for i in range(n):
                for j in range(i, n):
                    d = 0.5 * (nxt[i * n + j] + nxt[j * n + i])
                    nxt[i * n + j] = d
                    nxt[j * n + i] = d
            for i in range(n * n):
                d = nxt[i] - Pp[i]
                res += d * d
            res = sqrt(res)
            if not res < INFINITY:
                break
            if res <= tol:
                converged = True
                for i in range(k):
                    for j in range(n):
                        K[i, j] = X[i * n + j]
                break
            for i in range(n * n):
                Pp[i] = nxt[i]
            it += 1
    return K_arr, it, res, converged
