"""Vectorized numpy implementations of the training-loop hot paths.

Each epoch_* function runs one full pass of mini-batch SGD over a
pre-shuffled index order, mutating the projection and head parameters in
place, and returns (loss_sum, status, status_batch, collapse_count) where
loss_sum is the sum over samples of their batch-mean loss contribution
(so loss_sum / n is the epoch-mean loss), status is 0 for a clean epoch,
1 when a batch loss crossed the divergence guard threshold and 2 when it
went non-finite; status_batch is the offending batch index.

The numba backend mirrors these signatures exactly; semantic agreement
between the two is covered by tests, bit-level agreement is not promised
because summation order differs.
"""

import numpy as np

OK = 0
GUARD = 1
NONFINITE = 2

_RANK_TOL = 1e-12  # on singular values; compared squared against eigenvalues


def retract2(p, polar=True):
    """Nearest-orthonormal (polar) or left-factor (paper-u) retraction of a D x 2 matrix.

    The thin SVD is computed in closed form from the 2 x 2 eigenproblem of
    P^T P. Returns (retracted matrix, collapsed flag). On rank deficiency the
    deficient direction is replaced deterministically by the first coordinate
    axis that is not spanned by the surviving column (kernel paths cannot carry
    an RNG; the public API wraps this with a randomized variant).
    """
    a = float(p[:, 0] @ p[:, 0])
    b = float(p[:, 0] @ p[:, 1])
    c = float(p[:, 1] @ p[:, 1])
    half = 0.5 * (a + c)
    diff = 0.5 * (a - c)
    disc = np.sqrt(diff * diff + b * b)
    lam1 = half + disc
    lam2 = half - disc
    if lam2 <= _RANK_TOL * _RANK_TOL:
        return _recover_rank(p, a, b, c, lam1), True
    # Eigenvectors of [[a, b], [b, c]]: v1 for lam1, v2 its perpendicular.
    if abs(b) < 1e-300:
        if a >= c:
            v = np.array([[1.0, 0.0], [0.0, 1.0]])
        else:
            v = np.array([[0.0, 1.0], [1.0, 0.0]])
    else:
        v1 = np.array([b, lam1 - a])
        v1 /= np.linalg.norm(v1)
        v = np.column_stack([v1, [-v1[1], v1[0]]])
    inv_sigma = 1.0 / np.sqrt([lam1, lam2])
    u = (p @ v) * inv_sigma
    if polar:
        return u @ v.T, False
    return u, False


def _recover_rank(p, a, b, c, lam1):
    d = p.shape[0]
    if lam1 <= _RANK_TOL * _RANK_TOL:
        out = np.zeros((d, 2))
        out[0, 0] = 1.0
        out[1, 1] = 1.0
        return out
    if abs(b) < 1e-300:
        v1 = np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    else:
        v1 = np.array([b, lam1 - a])
        v1 /= np.linalg.norm(v1)
    u1 = (p @ v1) / np.sqrt(lam1)
    for k in range(d):
        w = -u1[k] * u1
        w[k] += 1.0
        norm = np.linalg.norm(w)
        if norm > 1e-4:
            return np.column_stack([u1, w / norm])
    return np.column_stack([u1, u1])  # unreachable: some axis always escapes u1


def _poly_tables(y, ea, eb, degree):
    n = y.shape[0]
    p1 = np.ones((n, degree + 1))
    p2 = np.ones((n, degree + 1))
    for k in range(1, degree + 1):
        p1[:, k] = p1[:, k - 1] * y[:, 0]
        p2[:, k] = p2[:, k - 1] * y[:, 1]
    phi = p1[:, ea] * p2[:, eb]
    d1 = p1[:, np.maximum(ea - 1, 0)] * p2[:, eb]
    d2 = p1[:, ea] * p2[:, np.maximum(eb - 1, 0)]
    return phi, d1, d2


def epoch_poly(x, f, perm, p, theta, ea, eb, lr, batch_size, guard_threshold, polar):
    """One epoch of joint SGD for L polynomial heads sharing one projection.

    x: n x D standardized features, f: L x n targets, theta: L x M
    coefficients. The objective is the mean over responses and samples of the
    squared error; gradients on each head and on the projection carry the 1/L
    weight so response count does not change the step scale.
    """
    n = x.shape[0]
    n_resp = f.shape[0]
    degree = int(ea.max())
    scale_resp = 1.0 / n_resp
    loss_sum = 0.0
    collapses = 0
    # Divergence is detected by the explicit loss checks below; the float
    # warnings numpy would emit on a blown-up step are pure noise (the
    # compiled backend cannot emit them anyway).
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb = x[idx]
            nb = idx.shape[0]
            y = xb @ p
            phi, d1, d2 = _poly_tables(y, ea, eb, degree)
            dy = np.zeros((nb, 2))
            batch_loss = 0.0
            coef = 2.0 / (nb * n_resp)
            for l in range(n_resp):
                th = theta[l]
                resid = phi @ th - f[l, idx]
                batch_loss += scale_resp * float(resid @ resid) / nb
                g1 = d1 @ (th * ea)
                g2 = d2 @ (th * eb)
                dy[:, 0] += coef * resid * g1
                dy[:, 1] += coef * resid * g2
                theta[l] -= lr * coef * (phi.T @ resid)
            if not np.isfinite(batch_loss):
                return loss_sum, NONFINITE, start // batch_size, collapses
            if batch_loss > guard_threshold:
                return loss_sum, GUARD, start // batch_size, collapses
            loss_sum += batch_loss * nb
            gp = xb.T @ dy
            p_new, collapsed = retract2(p - lr * gp, polar)
            if collapsed:
                collapses += 1
            p[:] = p_new
    return loss_sum, OK, -1, collapses


def epoch_softmax(
    x, labels, perm, p, w1, b1, w2, b2, hidden_width, lr, batch_size, guard_threshold, polar
):
    """One epoch of joint SGD for a single softmax head (optional hidden layer).

    w1: H x 2, w2: K x H (or K x 2 when hidden_width == 0). Loss is the
    batch-mean cross entropy computed from logits via max-subtraction.
    """
    n = x.shape[0]
    loss_sum = 0.0
    collapses = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb = x[idx]
            lab = labels[idx]
            nb = idx.shape[0]
            y = xb @ p
            if hidden_width > 0:
                pre = y @ w1.T + b1
                hidden = np.maximum(pre, 0.0)
                logits = hidden @ w2.T + b2
            else:
                logits = y @ w2.T + b2
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            denom = e.sum(axis=1)
            batch_loss = float(np.mean(np.log(denom) - shifted[np.arange(nb), lab]))
            if not np.isfinite(batch_loss):
                return loss_sum, NONFINITE, start // batch_size, collapses
            if batch_loss > guard_threshold:
                return loss_sum, GUARD, start // batch_size, collapses
            loss_sum += batch_loss * nb
            d_logits = e / denom[:, None]
            d_logits[np.arange(nb), lab] -= 1.0
            d_logits /= nb
            if hidden_width > 0:
                d_w2 = d_logits.T @ hidden
                d_b2 = d_logits.sum(axis=0)
                d_hidden = (d_logits @ w2) * (pre > 0)
                d_w1 = d_hidden.T @ y
                d_b1 = d_hidden.sum(axis=0)
                dy = d_hidden @ w1
                w1 -= lr * d_w1
                b1 -= lr * d_b1
            else:
                d_w2 = d_logits.T @ y
                d_b2 = d_logits.sum(axis=0)
                dy = d_logits @ w2
            w2 -= lr * d_w2
            b2 -= lr * d_b2
            gp = xb.T @ dy
            p_new, collapsed = retract2(p - lr * gp, polar)
            if collapsed:
                collapses += 1
            p[:] = p_new
    return loss_sum, OK, -1, collapses
