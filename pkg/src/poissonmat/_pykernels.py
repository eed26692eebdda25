"""Pure-Python SGD sweeps.

Reference fallback for ``_kernels.pyx``.  Both modules perform the same
floating-point operations in the same order, so for equal inputs they
produce bitwise-identical factors.  Keep them in lockstep.

Every sweep mutates ``U`` and ``V`` (C-contiguous float64) in place over
the schedule ``users[t], items[t]``, stepping each pair ``n_iter`` times,
and returns the largest | ||row|| - 1 | seen after a normalization when
``track`` is set (0.0 otherwise).
"""
from math import exp, log, sqrt


def _normalize(w, d, eps):
    ss = 0.0
    for k in range(d):
        ss += w[k] * w[k]
    norm = sqrt(ss)
    if norm > eps:
        for k in range(d):
            w[k] = w[k] / norm
    else:
        fill = 1.0 / sqrt(d)
        for k in range(d):
            w[k] = fill


def _deviation(w, d):
    ss = 0.0
    for k in range(d):
        ss += w[k] * w[k]
    return abs(sqrt(ss) - 1.0)


def _dot(u, v, d):
    s = 0.0
    for k in range(d):
        s += u[k] * v[k]
    return s


def _check(U, V, users, items, targets):
    if U.shape[1] != V.shape[1]:
        raise ValueError("latent dims differ")
    if users.shape[0] != items.shape[0]:
        raise ValueError("schedule arrays differ in length")
    if targets is not None and targets.shape[0] != users.shape[0]:
        raise ValueError("targets length differs from schedule")
    if users.shape[0] and (users.min() < 0 or users.max() >= U.shape[0]
                           or items.min() < 0 or items.max() >= V.shape[0]):
        raise IndexError("schedule index out of range")


def _sweep(U, V, users, items, targets, lr, eps, n_iter, track, rule):
    _check(U, V, users, items, targets)
    Ul = U.tolist()
    Vl = V.tolist()
    users = users.tolist()
    items = items.tolist()
    targets = targets.tolist() if targets is not None else [0.0] * len(users)
    lr = float(lr)
    eps = float(eps)
    d = U.shape[1]
    worst = 0.0
    for t in range(len(users)):
        u = Ul[users[t]]
        v = Vl[items[t]]
        r = targets[t]
        for _ in range(n_iter):
            u_old = u[:]
            x = _dot(u, v, d)
            if rule == 3:
                # classic MF: unclamped residual, no normalization
                step = lr * 2.0 * (r - x)
                for k in range(d):
                    u[k] = u[k] + step * v[k]
                for k in range(d):
                    v[k] = v[k] + step * u_old[k]
                continue
            if x < eps:
                x = eps
            if rule == 0:
                g = (x + 1.0) / x + log(x) - 1.0
                step = lr * g
                for k in range(d):
                    u[k] = u[k] + step * v[k]
                for k in range(d):
                    v[k] = v[k] + step * u_old[k]
            elif rule == 1:
                for k in range(d):
                    u[k] = u[k] + lr * (v[k] / x - 2.0 * u[k])
                for k in range(d):
                    v[k] = v[k] + lr * (u_old[k] / x - 2.0 * v[k])
            else:
                xx = exp(x * log(x))
                diff = xx - r
                sgn = 1.0 if diff > 0.0 else (-1.0 if diff < 0.0 else 0.0)
                c = (xx * sgn - x) * (1.0 + log(x))
                step = lr * c
                for k in range(d):
                    u[k] = u[k] - step * v[k]
                for k in range(d):
                    v[k] = v[k] - step * u_old[k]
            _normalize(u, d, eps)
            _normalize(v, d, eps)
            if track:
                du = _deviation(u, d)
                dv = _deviation(v, d)
                if du > worst:
                    worst = du
                if dv > worst:
                    worst = dv
    U[...] = Ul
    V[...] = Vl
    return worst


def sgd_poissonmat(U, V, users, items, lr, eps, n_iter, track=False):
    return _sweep(U, V, users, items, None, lr, eps, n_iter, track, 0)


def sgd_zeromat(U, V, users, items, lr, eps, n_iter, track=False):
    return _sweep(U, V, users, items, None, lr, eps, n_iter, track, 1)


def sgd_dotmat(U, V, users, items, targets, lr, eps, n_iter, track=False):
    return _sweep(U, V, users, items, targets, lr, eps, n_iter, track, 2)


def sgd_classic_mf(U, V, users, items, targets, lr, n_iter):
    _sweep(U, V, users, items, targets, lr, 0.0, n_iter, False, 3)
