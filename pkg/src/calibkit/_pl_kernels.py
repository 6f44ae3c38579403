"""Compiled training loop for piecewise-linear maps.

Mirrors ``piecewise._loss_and_grad`` point by point; the two are checked
against each other in the test suite.
"""

import numpy as np
from numba import njit

CLIP = 1e-6
MIN_WIDTH = 1e-300


@njit(cache=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True)
def layout(is_logit, tb, th, s, q, xk, dxdq, h, dh):
    b = tb.size
    m = tb.max()
    tot = 0.0
    for i in range(b):
        s[i] = np.exp(tb[i] - m)
        tot += s[i]
    for i in range(b):
        s[i] /= tot
    q[0] = 0.0
    acc = 0.0
    for i in range(1, b):
        acc += s[i - 1]
        q[i] = acc
    q[b] = 1.0
    for i in range(b + 1):
        if is_logit:
            qc = min(max(q[i], CLIP), 1.0 - CLIP)
            xk[i] = np.log(qc) - np.log1p(-qc)
            if q[i] > CLIP and q[i] < 1.0 - CLIP:
                dxdq[i] = 1.0 / (qc * (1.0 - qc))
            else:
                dxdq[i] = 0.0
            h[i] = th[i]
            dh[i] = 1.0
        else:
            xk[i] = q[i]
            dxdq[i] = 1.0
            hv = _sigmoid(th[i])
            h[i] = hv
            dh[i] = hv * (1.0 - hv)


@njit(cache=True)
def _point(is_logit, is_ce, xk, h, xv, yv):
    """Loss, dloss/dworking-output, segment, t, width, height step for one point."""
    b = xk.size - 1
    k = 0
    while k < b - 1 and xk[k + 1] <= xv:
        k += 1
    width = max(xk[k + 1] - xk[k], MIN_WIDTH)
    t = (xv - xk[k]) / width
    step = h[k + 1] - h[k]
    w = h[k] + step * t
    out = _sigmoid(w) if is_logit else w
    if is_ce:
        oc = min(max(out, CLIP), 1.0 - CLIP)
        loss = -(yv * np.log(oc) + (1.0 - yv) * np.log1p(-oc))
        inside = out > CLIP and out < 1.0 - CLIP
        if not inside:
            g = 0.0
        elif is_logit:
            g = out - yv
        else:
            g = (oc - yv) / (oc * (1.0 - oc))
    else:
        diff = out - yv
        loss = diff * diff
        g = 2.0 * diff
        if is_logit:
            g *= out * (1.0 - out)
    return loss, g, k, t, width, step


@njit(cache=True)
def loss_and_grad(is_logit, is_ce, params, x, y, idx, start, stop, grad, ws):
    b = (params.size - 1) // 2
    tb = params[:b]
    th = params[b:]
    s, q, xk, dxdq, h, dh, gh, gk = ws
    layout(is_logit, tb, th, s, q, xk, dxdq, h, dh)
    for i in range(b + 1):
        gh[i] = 0.0
        gk[i] = 0.0
    total = 0.0
    cnt = stop - start
    for j in range(start, stop):
        i = idx[j]
        loss, g, k, t, width, step = _point(is_logit, is_ce, xk, h, x[i], y[i])
        total += loss
        g /= cnt
        gh[k] += g * (1.0 - t)
        gh[k + 1] += g * t
        st = g * step / width
        gk[k] += st * (t - 1.0)
        gk[k + 1] -= st * t
    gk[0] = 0.0
    gk[b] = 0.0
    dot = 0.0
    for i in range(b + 1):
        gk[i] *= dxdq[i]
        dot += gk[i] * q[i]
    suffix = 0.0
    for m in range(b - 1, -1, -1):
        suffix += gk[m + 1]
        grad[m] = s[m] * (suffix - dot)
    for i in range(b + 1):
        grad[b + i] = gh[i] * dh[i]
    return total / cnt


@njit(cache=True)
def full_loss(is_logit, is_ce, params, x, y, ws):
    b = (params.size - 1) // 2
    s, q, xk, dxdq, h, dh, gh, gk = ws
    layout(is_logit, params[:b], params[b:], s, q, xk, dxdq, h, dh)
    total = 0.0
    for i in range(x.size):
        loss, g, k, t, width, step = _point(is_logit, is_ce, xk, h, x[i], y[i])
        total += loss
    return total / x.size


@njit(cache=True)
def _workspace(b):
    return (
        np.empty(b),
        np.empty(b + 1),
        np.empty(b + 1),
        np.empty(b + 1),
        np.empty(b + 1),
        np.empty(b + 1),
        np.empty(b + 1),
        np.empty(b + 1),
    )


@njit(cache=True)
def train_loop(is_logit, is_ce, params0, x, y, batch, max_epochs, patience, lr, beta1, beta2, eps, seed):
    """Minibatch Adam with reshuffling and early stopping on the full training loss.

    Returns ``(best_params, best_loss, epochs_run)``.
    """
    np.random.seed(seed)
    n = x.size
    p = params0.size
    b = (p - 1) // 2
    ws = _workspace(b)
    params = params0.copy()
    grad = np.zeros(p)
    m = np.zeros(p)
    v = np.zeros(p)
    idx = np.arange(n)
    best = params.copy()
    best_loss = full_loss(is_logit, is_ce, params, x, y, ws)
    stale = 0
    t = 0
    epochs = 0
    for _ in range(max_epochs):
        epochs += 1
        np.random.shuffle(idx)
        for start in range(0, n, batch):
            stop = min(start + batch, n)
            loss_and_grad(is_logit, is_ce, params, x, y, idx, start, stop, grad, ws)
            t += 1
            c1 = 1.0 - beta1**t
            c2 = 1.0 - beta2**t
            for j in range(p):
                m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j]
                v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j]
                params[j] -= lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + eps)
        cur = full_loss(is_logit, is_ce, params, x, y, ws)
        if cur < best_loss:
            best_loss = cur
            best[:] = params
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best, best_loss, epochs


def kernel_loss_and_grad(is_logit, is_ce, params, x, y):
    """Convenience wrapper over the whole batch (used for cross-checking)."""
    params = np.ascontiguousarray(params, dtype=np.float64)
    b = (params.size - 1) // 2
    grad = np.zeros(params.size)
    idx = np.arange(x.size)
    loss = loss_and_grad(is_logit, is_ce, params, x, y, idx, 0, x.size, grad, _workspace(b))
    return loss, grad
