"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def project_simplex(v):
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - css / ind > 0
    rho = max(int(np.count_nonzero(cond)), 1)  # index 0 always qualifies in exact arithmetic
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def mixture_loglik(P, counts, w, floor):
    p = np.maximum(P @ w, floor)
    mask = counts != 0.0
    return float(np.dot(counts[mask], np.log(p[mask])))


def mixture_loglik_grad(P, counts, w, floor, grad):
    raw = P @ w
    mask = counts != 0.0
    live = mask & (raw >= floor)
    total = float(np.dot(counts[mask], np.log(np.maximum(raw[mask], floor))))
    scale = np.zeros_like(raw)
    scale[live] = counts[live] / raw[live]
    grad[:] = scale @ P
    return total


def _project_renorm(v):
    w = project_simplex(v)
    tot = w.sum()
    if not tot > 0.0:
        w = np.zeros_like(w)
        w[int(np.argmax(v))] = 1.0
        return w
    return w / tot if tot != 1.0 else w


def mixture_ascent(P, counts, w, floor, tol, max_iter, armijo_c, backtrack, min_step):
    m = P.shape[1]
    g = np.empty(m)
    f = mixture_loglik_grad(P, counts, w, floor, g)
    if m == 1:
        return f, 0, True
    step = 1.0 / max(float(np.max(np.abs(g))), 1.0)
    it = 0
    converged = False
    while it < max_iter:
        if np.max(np.abs(_project_renorm(w + g) - w)) < tol:
            converged = True
            break
        it += 1
        t = step
        accepted = False
        while t > min_step:
            wn = _project_renorm(w + t * g)
            d = wn - w
            if not np.any(d):
                break
            f_new = mixture_loglik(P, counts, wn, floor)
            if f_new >= f + armijo_c * float(g @ d):
                accepted = True
                break
            t *= backtrack
        if not accepted:
            converged = True
            break
        moved = float(np.max(np.abs(d)))
        w[:] = wn
        f = f_new
        step = t * 2.0
        if moved < tol:
            converged = True
            break
        f = mixture_loglik_grad(P, counts, w, floor, g)
    return f, it, converged


def _bellman(T, R, gamma, V):
    Q = R + gamma * (T @ V)
    policy = np.argmax(Q, axis=1)
    return Q[np.arange(Q.shape[0]), policy], policy


def value_iteration(T, R, gamma, stop, max_iter, V):
    it = 0
    while it < max_iter:
        nxt, _ = _bellman(T, R, gamma, V)
        it += 1
        diff = np.max(np.abs(nxt - V))
        V[:] = nxt
        if diff < stop:
            break
    _, policy = _bellman(T, R, gamma, V)
    return policy.astype(np.int64), it


def bellman_residual(T, R, gamma, V):
    nxt, _ = _bellman(T, R, gamma, V)
    return float(np.max(np.abs(nxt - V)))


def sample_categorical(cdf, u):
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, cdf.shape[0] - 1)


def riccati_iterate(F, B, Q, R, P, tol, max_iter):
    it = 0
    res = np.inf
    K = np.zeros((B.shape[1], F.shape[0]))
    while it <= max_iter:
        PB = P @ B
        G = R + B.T @ PB
        FtPB = F.T @ PB
        try:
            X = np.linalg.solve(G, FtPB.T)
        except np.linalg.LinAlgError:
            break
        nxt = Q + F.T @ (P @ F) - FtPB @ X
        nxt = 0.5 * (nxt + nxt.T)
        res = float(np.linalg.norm(nxt - P))
        if not np.isfinite(res):
            break
        if res <= tol:
            return X, it, res, True
        P[...] = nxt
        it += 1
    return K, it, res, False
