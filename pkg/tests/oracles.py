"""Independent reference computations used to check the library.

Each oracle takes the slow, obvious route: direct sums, normal equations,
finite differences. None of them calls into the code path it checks.
"""

import numpy as np


def vif_normal_equations(X):
    """VIF_j = 1 / (1 - R^2_j) via (A^T A) beta = A^T x_j."""
    n, m = X.shape
    out = []
    for j in range(m):
        y = X[:, j]
        A = np.column_stack([np.ones(n)] + [X[:, k] for k in range(m) if k != j])
        beta = np.linalg.solve(A.T @ A, A.T @ y)
        resid = y - A @ beta
        r2 = 1 - np.sum(resid**2) / np.sum((y - y.mean()) ** 2)
        out.append(1 / (1 - r2))
    return np.array(out)


def brute_force_split(X, y, min_leaf=1):
    """Best (feature, threshold) by direct SSE evaluation of every midpoint."""
    def sse(v):
        return float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0

    parent = sse(y)
    best = None
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j].tolist()))
        for a, b in zip(vals, vals[1:]):
            t = (a + b) / 2
            left = X[:, j] <= t
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            gain = parent - sse(y[left]) - sse(y[~left])
            if best is None or gain > best[0] + 1e-9:
                best = (gain, j, t)
    return best


def finite_difference_gradients(model, X, y, step=1e-5):
    """Central differences of the batch MSE w.r.t. every parameter."""
    def loss():
        a = X
        last = len(model.weights) - 1
        for l, (W, b) in enumerate(zip(model.weights, model.biases)):
            z = a @ W.T + b
            a = z if l == last else np.maximum(z, 0.0)
        return float(np.mean((a[:, 0] - y) ** 2))

    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        flat, gf = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss()
            flat[i] = keep - step
            down = loss()
            flat[i] = keep
            gf[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def cpc_direct(actual, predicted):
    num = sum(min(a, p) for a, p in zip(actual, predicted))
    return 2 * num / (sum(actual) + sum(predicted))
