"""Dense reference solver for the market-neutral minimum-variance QP.

Accelerated projected gradient on the full covariance matrix. The
projection onto {sum w = 1, w.beta = 0, lo <= w <= hi} is computed by
maximising its two-variable concave dual with a damped Newton method.
Nothing here shares code with the package solver.
"""

import numpy as np


def project(z, beta, lo, hi, tol=1e-14, max_iter=200):
    A = np.vstack([np.ones(z.size), beta])
    b = np.array([1.0, 0.0])
    lam = np.zeros(2)

    def w_of(l):
        return np.clip(z - A.T @ l, lo, hi)

    def dual(l):
        w = w_of(l)
        return 0.5 * np.sum((w - z) ** 2) + l @ (A @ w - b)

    for _ in range(max_iter):
        w = w_of(lam)
        g = A @ w - b  # dual gradient (ascent direction)
        if np.max(np.abs(g)) <= tol:
            break
        free = (w > lo) & (w < hi)
        # the dual Hessian is -A_F A_F', so the Newton ascent step solves A_F A_F' s = g
        H = A[:, free] @ A[:, free].T + 1e-12 * np.eye(2)
        step = np.linalg.solve(H, g)
        t, f0 = 1.0, dual(lam)
        cand = lam + step
        while dual(cand) < f0 and t > 1e-12:
            t *= 0.5
            cand = lam + t * step
        if np.array_equal(cand, lam):
            break
        lam = cand
    return w_of(lam)


def solve(S, beta, bound=0.3, iters=20000, tol=1e-13):
    n = beta.size
    L = 2.0 * np.linalg.eigvalsh(S).max()
    w = project(np.full(n, 1.0 / n), beta, -bound, bound)
    y, t = w.copy(), 1.0
    best = w
    for _ in range(iters):
        w_new = project(y - (2.0 * S @ y) / L, beta, -bound, bound)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = w_new + (t - 1) / t_new * (w_new - w)
        if w_new @ S @ w_new > w @ S @ w:
            # restart momentum when the objective goes up
            y, t_new = w_new.copy(), 1.0
        done = np.max(np.abs(w_new - w)) <= tol
        w, t = w_new, t_new
        best = w
        if done:
            break
    return best, float(best @ S @ best)
