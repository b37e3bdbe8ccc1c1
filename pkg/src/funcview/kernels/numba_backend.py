"""Numba-compiled mirrors of the numpy training kernels.

Same signatures and semantics as numpy_backend; loops are written out so the
compiler can keep the batch state in registers. No fastmath: reassociation
would break the reproducibility guarantee within this backend. nogil lets
null-distribution trials overlap when driven from a thread pool.
"""

import numpy as np
from numba import njit

OK = 0
GUARD = 1
NONFINITE = 2

_JIT = {"cache": True, "nogil": True}


@njit(**_JIT)
def _recover_rank_inplace(p, a, b, c, lam1):
    d = p.shape[0]
    if lam1 <= 1e-24:
        for k in range(d):
            p[k, 0] = 0.0
            p[k, 1] = 0.0
        p[0, 0] = 1.0
        p[1, 1] = 1.0
        return
    if abs(b) < 1e-300:
        if a >= c:
            v0, v1 = 1.0, 0.0
        else:
            v0, v1 = 0.0, 1.0
    else:
        v0 = b
        v1 = lam1 - a
        nv = np.sqrt(v0 * v0 + v1 * v1)
        v0 /= nv
        v1 /= nv
    s = np.sqrt(lam1)
    for k in range(d):
        q0 = p[k, 0]
        q1 = p[k, 1]
        p[k, 0] = (q0 * v0 + q1 * v1) / s
    axis = 0
    for k in range(d):
        if 1.0 - p[k, 0] * p[k, 0] > 1e-8:
            axis = k
            break
    proj = p[axis, 0]
    norm = 0.0
    for k in range(d):
        w = (1.0 if k == axis else 0.0) - proj * p[k, 0]
        p[k, 1] = w
        norm += w * w
    norm = np.sqrt(norm)
    for k in range(d):
        p[k, 1] /= norm


@njit(**_JIT)
def _retract_inplace(p, polar):
    d = p.shape[0]
    a = 0.0
    b = 0.0
    c = 0.0
    for k in range(d):
        a += p[k, 0] * p[k, 0]
        b += p[k, 0] * p[k, 1]
        c += p[k, 1] * p[k, 1]
    half = 0.5 * (a + c)
    diff = 0.5 * (a - c)
    disc = np.sqrt(diff * diff + b * b)
    lam1 = half + disc
    lam2 = half - disc
    if lam2 <= 1e-24:
        _recover_rank_inplace(p, a, b, c, lam1)
        return True
    if abs(b) < 1e-300:
        if a >= c:
            v00, v10 = 1.0, 0.0
        else:
            v00, v10 = 0.0, 1.0
    else:
        v00 = b
        v10 = lam1 - a
        nv = np.sqrt(v00 * v00 + v10 * v10)
        v00 /= nv
        v10 /= nv
    v01 = -v10
    v11 = v00
    is1 = 1.0 / np.sqrt(lam1)
    is2 = 1.0 / np.sqrt(lam2)
    if polar:
        # Symmetric factor v diag(1/sigma) v^T equals (P^T P)^(-1/2).
        t00 = is1 * v00 * v00 + is2 * v01 * v01
        t01 = is1 * v00 * v10 + is2 * v01 * v11
        t11 = is1 * v10 * v10 + is2 * v11 * v11
        for k in range(d):
            q0 = p[k, 0]
            q1 = p[k, 1]
            p[k, 0] = q0 * t00 + q1 * t01
            p[k, 1] = q0 * t01 + q1 * t11
    else:
        for k in range(d):
            q0 = p[k, 0]
            q1 = p[k, 1]
            p[k, 0] = (q0 * v00 + q1 * v10) * is1
            p[k, 1] = (q0 * v01 + q1 * v11) * is2
    return False


def retract2(p, polar=True):
    out = p.astype(np.float64).copy()
    collapsed = _retract_inplace(out, polar)
    return out, bool(collapsed)


@njit(**_JIT)
def epoch_poly(x, f, perm, p, theta, ea, eb, lr, batch_size, guard_threshold, polar):
    n, d = x.shape
    n_resp = f.shape[0]
    m = ea.shape[0]
    degree = 0
    for j in range(m):
        t = ea[j] + eb[j]
        if t > degree:
            degree = t
    y = np.empty((batch_size, 2))
    phi = np.empty((batch_size, m))
    d1 = np.empty((batch_size, m))
    d2 = np.empty((batch_size, m))
    dy = np.empty((batch_size, 2))
    resid = np.empty(batch_size)
    gtheta = np.empty(m)
    gp = np.empty((d, 2))
    pow1 = np.empty(degree + 1)
    pow2 = np.empty(degree + 1)
    loss_sum = 0.0
    collapses = 0
    batch_index = -1
    for start in range(0, n, batch_size):
        batch_index += 1
        end = min(start + batch_size, n)
        nb = end - start
        for i in range(nb):
            row = perm[start + i]
            acc0 = 0.0
            acc1 = 0.0
            for k in range(d):
                v = x[row, k]
                acc0 += v * p[k, 0]
                acc1 += v * p[k, 1]
            y[i, 0] = acc0
            y[i, 1] = acc1
            pow1[0] = 1.0
            pow2[0] = 1.0
            for t in range(1, degree + 1):
                pow1[t] = pow1[t - 1] * acc0
                pow2[t] = pow2[t - 1] * acc1
            for j in range(m):
                a = ea[j]
                b = eb[j]
                phi[i, j] = pow1[a] * pow2[b]
                d1[i, j] = (pow1[a - 1] if a > 0 else 1.0) * pow2[b]
                d2[i, j] = pow1[a] * (pow2[b - 1] if b > 0 else 1.0)
            dy[i, 0] = 0.0
            dy[i, 1] = 0.0
        batch_loss = 0.0
        coef = 2.0 / (nb * n_resp)
        for l in range(n_resp):
            sq = 0.0
            for i in range(nb):
                pred = 0.0
                for j in range(m):
                    pred += phi[i, j] * theta[l, j]
                r = pred - f[l, perm[start + i]]
                resid[i] = r
                sq += r * r
            batch_loss += sq / (nb * n_resp)
            for j in range(m):
                gtheta[j] = 0.0
            for i in range(nb):
                ri = resid[i]
                g1 = 0.0
                g2 = 0.0
                for j in range(m):
                    thj = theta[l, j]
                    g1 += thj * ea[j] * d1[i, j]
                    g2 += thj * eb[j] * d2[i, j]
                    gtheta[j] += phi[i, j] * ri
                dy[i, 0] += coef * ri * g1
                dy[i, 1] += coef * ri * g2
            for j in range(m):
                theta[l, j] -= lr * coef * gtheta[j]
        if not np.isfinite(batch_loss):
            return loss_sum, NONFINITE, batch_index, collapses
        if batch_loss > guard_threshold:
            return loss_sum, GUARD, batch_index, collapses
        loss_sum += batch_loss * nb
        for k in range(d):
            gp[k, 0] = 0.0
            gp[k, 1] = 0.0
        for i in range(nb):
            row = perm[start + i]
            s0 = lr * dy[i, 0]
            s1 = lr * dy[i, 1]
            for k in range(d):
                v = x[row, k]
                gp[k, 0] += v * s0
                gp[k, 1] += v * s1
        for k in range(d):
            p[k, 0] -= gp[k, 0]
            p[k, 1] -= gp[k, 1]
        if _retract_inplace(p, polar):
            collapses += 1
    return loss_sum, OK, -1, collapses


@njit(**_JIT)
def epoch_softmax(
    x, labels, perm, p, w1, b1, w2, b2, hidden_width, lr, batch_size, guard_threshold, polar
):
    n, d = x.shape
    k_cls = w2.shape[0]
    h = hidden_width
    y = np.empty((batch_size, 2))
    pre = np.empty((batch_size, max(h, 1)))
    logits = np.empty((batch_size, k_cls))
    dlog = np.empty((batch_size, k_cls))
    dhid = np.empty((batch_size, max(h, 1)))
    dy = np.empty((batch_size, 2))
    gp = np.empty((d, 2))
    loss_sum = 0.0
    collapses = 0
    batch_index = -1
    for start in range(0, n, batch_size):
        batch_index += 1
        end = min(start + batch_size, n)
        nb = end - start
        for i in range(nb):
            row = perm[start + i]
            acc0 = 0.0
            acc1 = 0.0
            for kk in range(d):
                v = x[row, kk]
                acc0 += v * p[kk, 0]
                acc1 += v * p[kk, 1]
            y[i, 0] = acc0
            y[i, 1] = acc1
        if h > 0:
            for i in range(nb):
                for j in range(h):
                    z = y[i, 0] * w1[j, 0] + y[i, 1] * w1[j, 1] + b1[j]
                    pre[i, j] = z
            for i in range(nb):
                for cc in range(k_cls):
                    acc = b2[cc]
                    for j in range(h):
                        hj = pre[i, j]
                        if hj > 0.0:
                            acc += w2[cc, j] * hj
                    logits[i, cc] = acc
        else:
            for i in range(nb):
                for cc in range(k_cls):
                    logits[i, cc] = y[i, 0] * w2[cc, 0] + y[i, 1] * w2[cc, 1] + b2[cc]
        batch_loss = 0.0
        for i in range(nb):
            mx = logits[i, 0]
            for cc in range(1, k_cls):
                if logits[i, cc] > mx:
                    mx = logits[i, cc]
            denom = 0.0
            for cc in range(k_cls):
                e = np.exp(logits[i, cc] - mx)
                dlog[i, cc] = e
                denom += e
            lab = labels[perm[start + i]]
            batch_loss += np.log(denom) - (logits[i, lab] - mx)
            for cc in range(k_cls):
                dlog[i, cc] /= denom
            dlog[i, lab] -= 1.0
        batch_loss /= nb
        if not np.isfinite(batch_loss):
            return loss_sum, NONFINITE, batch_index, collapses
        if batch_loss > guard_threshold:
            return loss_sum, GUARD, batch_index, collapses
        loss_sum += batch_loss * nb
        inv = 1.0 / nb
        for i in range(nb):
            for cc in range(k_cls):
                dlog[i, cc] *= inv
        if h > 0:
            for i in range(nb):
                for j in range(h):
                    if pre[i, j] > 0.0:
                        acc = 0.0
                        for cc in range(k_cls):
                            acc += dlog[i, cc] * w2[cc, j]
                        dhid[i, j] = acc
                    else:
                        dhid[i, j] = 0.0
            # Output layer gradients need pre-update hidden activations.
            for cc in range(k_cls):
                accb = 0.0
                for i in range(nb):
                    accb += dlog[i, cc]
                for j in range(h):
                    accw = 0.0
                    for i in range(nb):
                        hj = pre[i, j]
                        if hj > 0.0:
                            accw += dlog[i, cc] * hj
                    w2[cc, j] -= lr * accw
                b2[cc] -= lr * accb
            for i in range(nb):
                dy[i, 0] = 0.0
                dy[i, 1] = 0.0
                for j in range(h):
                    dy[i, 0] += dhid[i, j] * w1[j, 0]
                    dy[i, 1] += dhid[i, j] * w1[j, 1]
            for j in range(h):
                acc0 = 0.0
                acc1 = 0.0
                accb = 0.0
                for i in range(nb):
                    acc0 += dhid[i, j] * y[i, 0]
                    acc1 += dhid[i, j] * y[i, 1]
                    accb += dhid[i, j]
                w1[j, 0] -= lr * acc0
                w1[j, 1] -= lr * acc1
                b1[j] -= lr * accb
        else:
            for i in range(nb):
                dy[i, 0] = 0.0
                dy[i, 1] = 0.0
                for cc in range(k_cls):
                    dy[i, 0] += dlog[i, cc] * w2[cc, 0]
                    dy[i, 1] += dlog[i, cc] * w2[cc, 1]
            for cc in range(k_cls):
                acc0 = 0.0
                acc1 = 0.0
                accb = 0.0
                for i in range(nb):
                    acc0 += dlog[i, cc] * y[i, 0]
                    acc1 += dlog[i, cc] * y[i, 1]
                    accb += dlog[i, cc]
                w2[cc, 0] -= lr * acc0
                w2[cc, 1] -= lr * acc1
                b2[cc] -= lr * accb
        for kk in range(d):
            gp[kk, 0] = 0.0
            gp[kk, 1] = 0.0
        for i in range(nb):
            row = perm[start + i]
            s0 = lr * dy[i, 0]
            s1 = lr * dy[i, 1]
            for kk in range(d):
                v = x[row, kk]
                gp[kk, 0] += v * s0
                gp[kk, 1] += v * s1
        for kk in range(d):
            p[kk, 0] -= gp[kk, 0]
            p[kk, 1] -= gp[kk, 1]
        if _retract_inplace(p, polar):
            collapses += 1
    return loss_sum, OK, -1, collapses
