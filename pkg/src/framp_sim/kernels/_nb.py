"""Loop-form numba kernels; same contracts and flat layout as ``_np``."""
import numpy as np
from numba import njit

# above this active-weight fraction the dense loops win
SPARSE_DENSITY = 0.3


@njit(cache=True)
def _offsets(widths):
    L = widths.shape[0] - 1
    woff = np.empty(L, dtype=np.int64)
    coff = np.empty(L + 2, dtype=np.int64)
    off = 0
    coff[0] = 0
    for l in range(L):
        woff[l] = off
        off += widths[l] * widths[l + 1] + widths[l + 1]
        coff[l + 1] = coff[l] + widths[l]
    coff[L + 1] = coff[L] + widths[L]
    return woff, coff


@njit(cache=True)
def _forward_into(widths, relu, w, X, idx, acts, woff, coff):
    # acts[b, coff[l]:coff[l+1]] holds layer-l activations (layer 0 = input)
    L = widths.shape[0] - 1
    B = idx.shape[0]
    k = widths[0]
    for b in range(B):
        for i in range(k):
            acts[b, i] = X[idx[b], i]
    for l in range(L):
        n_in = widths[l]
        n_out = widths[l + 1]
        wo = woff[l]
        bo = wo + n_in * n_out
        ci = coff[l]
        co = coff[l + 1]
        for b in range(B):
            for j in range(n_out):
                acts[b, co + j] = w[bo + j]
            for i in range(n_in):
                a = acts[b, ci + i]
                if a != 0.0:
                    row = wo + i * n_out
                    for j in range(n_out):
                        acts[b, co + j] += a * w[row + j]
            if l < L - 1:
                for j in range(n_out):
                    z = acts[b, co + j]
                    if relu:
                        acts[b, co + j] = z if z > 0.0 else 0.0
                    else:
                        acts[b, co + j] = np.tanh(z)


@njit(cache=True)
def _loss_grad_idx(widths, relu, w, X, y, idx, gp, gp_present, lam, acts, dacts, woff, coff, grad):
    L = widths.shape[0] - 1
    B = idx.shape[0]
    C = widths[L]
    h = widths[L - 1]
    _forward_into(widths, relu, w, X, idx, acts, woff, coff)
    lo = coff[L]
    ho = coff[L - 1]

    ce = 0.0
    for b in range(B):
        m = acts[b, lo]
        for c in range(1, C):
            if acts[b, lo + c] > m:
                m = acts[b, lo + c]
        s = 0.0
        for c in range(C):
            s += np.exp(acts[b, lo + c] - m)
        lse = np.log(s)
        yb = y[idx[b]]
        ce -= acts[b, lo + yb] - m - lse
        for c in range(C):
            dacts[b, lo + c] = np.exp(acts[b, lo + c] - m - lse) / B
        dacts[b, lo + yb] -= 1.0 / B
    ce /= B

    counts = np.zeros(C, dtype=np.int64)
    protos = np.zeros((C, h))
    for b in range(B):
        yb = y[idx[b]]
        counts[yb] += 1
        for j in range(h):
            protos[yb, j] += acts[b, ho + j]
    align = 0.0
    diff = np.zeros((C, h))
    for c in range(C):
        if counts[c] > 0:
            for j in range(h):
                protos[c, j] /= counts[c]
            if gp_present[c]:
                for j in range(h):
                    d = protos[c, j] - gp[c, j]
                    diff[c, j] = d
                    align += d * d

    for i in range(grad.shape[0]):
        grad[i] = 0.0
    for l in range(L - 1, -1, -1):
        n_in = widths[l]
        n_out = widths[l + 1]
        wo = woff[l]
        bo = wo + n_in * n_out
        ci = coff[l]
        co = coff[l + 1]
        for b in range(B):
            for j in range(n_out):
                grad[bo + j] += dacts[b, co + j]
            for i in range(n_in):
                a = acts[b, ci + i]
                row = wo + i * n_out
                for j in range(n_out):
                    grad[row + j] += a * dacts[b, co + j]
        if l == 0:
            break
        for b in range(B):
            for i in range(n_in):
                row = wo + i * n_out
                s = 0.0
                for j in range(n_out):
                    s += w[row + j] * dacts[b, co + j]
                if l == L - 1 and lam != 0.0:
                    yb = y[idx[b]]
                    s += 2.0 * lam * diff[yb, i] / counts[yb]
                a = acts[b, ci + i]
                if relu:
                    dacts[b, ci + i] = s if a > 0.0 else 0.0
                else:
                    dacts[b, ci + i] = s * (1.0 - a * a)
    return ce + lam * align, protos, counts


@njit(cache=True)
def loss_grad(widths, relu, w, X, y, gp, gp_present, lam):
    B = X.shape[0]
    woff, coff = _offsets(widths)
    tot = coff[-1]
    acts = np.empty((B, tot))
    dacts = np.empty((B, tot))
    grad = np.empty(w.shape[0])
    idx = np.arange(B)
    loss, protos, counts = _loss_grad_idx(
        widths, relu, w, X, y, idx, gp, gp_present, lam, acts, dacts, woff, coff, grad
    )
    return loss, grad, protos, counts


@njit(cache=True)
def _active_weights(widths, mask, woff):
    # flat indices of unmasked weights, grouped by layer in flat order
    L = widths.shape[0] - 1
    n = 0
    for l in range(L):
        for f in range(woff[l], woff[l] + widths[l] * widths[l + 1]):
            if mask[f] != 0.0:
                n += 1
    start = np.empty(L + 1, dtype=np.int64)
    ei = np.empty(n, dtype=np.int64)
    ej = np.empty(n, dtype=np.int64)
    ef = np.empty(n, dtype=np.int64)
    e = 0
    for l in range(L):
        start[l] = e
        n_out = widths[l + 1]
        for f in range(woff[l], woff[l] + widths[l] * n_out):
            if mask[f] != 0.0:
                r = f - woff[l]
                ei[e] = r // n_out
                ej[e] = r % n_out
                ef[e] = f
                e += 1
    start[L] = e
    return start, ei, ej, ef


@njit(cache=True)
def _sparse_step(widths, relu, w, mask, X, y, idx, gp, gp_present, lam, lr,
                 acts, dacts, woff, coff, start, ei, ej, ef):
    # one SGD step touching only active weights; w is updated in place
    L = widths.shape[0] - 1
    B = idx.shape[0]
    C = widths[L]
    h = widths[L - 1]
    for b in range(B):
        for i in range(widths[0]):
            acts[b, i] = X[idx[b], i]
    for l in range(L):
        n_in = widths[l]
        n_out = widths[l + 1]
        bo = woff[l] + n_in * n_out
        ci = coff[l]
        co = coff[l + 1]
        for b in range(B):
            for j in range(n_out):
                acts[b, co + j] = w[bo + j]
            for e in range(start[l], start[l + 1]):
                acts[b, co + ej[e]] += acts[b, ci + ei[e]] * w[ef[e]]
            if l < L - 1:
                for j in range(n_out):
                    z = acts[b, co + j]
                    if relu:
                        acts[b, co + j] = z if z > 0.0 else 0.0
                    else:
                        acts[b, co + j] = np.tanh(z)
    lo = coff[L]
    ho = coff[L - 1]

    ce = 0.0
    for b in range(B):
        m = acts[b, lo]
        for c in range(1, C):
            if acts[b, lo + c] > m:
                m = acts[b, lo + c]
        s = 0.0
        for c in range(C):
            s += np.exp(acts[b, lo + c] - m)
        lse = np.log(s)
        yb = y[idx[b]]
        ce -= acts[b, lo + yb] - m - lse
        for c in range(C):
            dacts[b, lo + c] = np.exp(acts[b, lo + c] - m - lse) / B
        dacts[b, lo + yb] -= 1.0 / B
    ce /= B

    counts = np.zeros(C, dtype=np.int64)
    diff = np.zeros((C, h))
    align = 0.0
    if lam != 0.0:
        for b in range(B):
            yb = y[idx[b]]
            counts[yb] += 1
            for j in range(h):
                diff[yb, j] += acts[b, ho + j]
        for c in range(C):
            if counts[c] > 0:
                if gp_present[c]:
                    for j in range(h):
                        dd = diff[c, j] / counts[c] - gp[c, j]
                        diff[c, j] = dd
                        align += dd * dd
                else:
                    for j in range(h):
                        diff[c, j] = 0.0

    for l in range(L - 1, -1, -1):
        n_in = widths[l]
        n_out = widths[l + 1]
        bo = woff[l] + n_in * n_out
        ci = coff[l]
        co = coff[l + 1]
        if l > 0:
            for b in range(B):
                for i in range(n_in):
                    dacts[b, ci + i] = 0.0
            # input-side gradient must use the pre-update weights
            for e in range(start[l], start[l + 1]):
                wf = w[ef[e]]
                for b in range(B):
                    dacts[b, ci + ei[e]] += wf * dacts[b, co + ej[e]]
        for e in range(start[l], start[l + 1]):
            g = 0.0
            for b in range(B):
                g += acts[b, ci + ei[e]] * dacts[b, co + ej[e]]
            w[ef[e]] -= lr * g
        for j in range(n_out):
            if mask[bo + j] != 0.0:
                g = 0.0
                for b in range(B):
                    g += dacts[b, co + j]
                w[bo + j] -= lr * g
        if l == 0:
            break
        for b in range(B):
            yb = y[idx[b]]
            for i in range(n_in):
                s = dacts[b, ci + i]
                if l == L - 1 and lam != 0.0:
                    s += 2.0 * lam * diff[yb, i] / counts[yb]
                a = acts[b, ci + i]
                if relu:
                    dacts[b, ci + i] = s if a > 0.0 else 0.0
                else:
                    dacts[b, ci + i] = s * (1.0 - a * a)
    return ce + lam * align


@njit(cache=True)
def sparse_sgd(widths, relu, w0, mask, X, y, batch_idx, gp, gp_present, lam, lr):
    """``local_sgd`` that always takes the active-weight path."""
    T = batch_idx.shape[0]
    B = batch_idx.shape[1]
    woff, coff = _offsets(widths)
    tot = coff[-1]
    acts = np.empty((B, tot))
    dacts = np.empty((B, tot))
    start, ei, ej, ef = _active_weights(widths, mask, woff)
    w = w0 * mask
    losses = np.empty(T)
    for t in range(T):
        losses[t] = _sparse_step(widths, relu, w, mask, X, y, batch_idx[t], gp, gp_present, lam, lr,
                                 acts, dacts, woff, coff, start, ei, ej, ef)
    return w, losses


@njit(cache=True)
def local_sgd(widths, relu, w0, mask, X, y, batch_idx, gp, gp_present, lam, lr):
    T = batch_idx.shape[0]
    B = batch_idx.shape[1]
    woff, coff = _offsets(widths)
    tot = coff[-1]
    acts = np.empty((B, tot))
    dacts = np.empty((B, tot))
    start, ei, ej, ef = _active_weights(widths, mask, woff)
    d = w0.shape[0]
    w = w0 * mask
    losses = np.empty(T)
    if ef.shape[0] <= SPARSE_DENSITY * d:
        for t in range(T):
            losses[t] = _sparse_step(widths, relu, w, mask, X, y, batch_idx[t], gp, gp_present, lam, lr,
                                     acts, dacts, woff, coff, start, ei, ej, ef)
        return w, losses
    grad = np.empty(d)
    for t in range(T):
        loss, _, _ = _loss_grad_idx(
            widths, relu, w, X, y, batch_idx[t], gp, gp_present, lam, acts, dacts, woff, coff, grad
        )
        for i in range(d):
            w[i] -= lr * (grad[i] * mask[i])
        losses[t] = loss
    return w, losses
