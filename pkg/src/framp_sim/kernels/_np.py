"""Vectorized numpy implementation of the dense-MLP kernels.

Flat parameter layout: for each layer (in -> out) the weight matrix of shape
``(in, out)`` in row-major order, followed by the ``out`` bias entries.
Entry ``W[i, j]`` sits at ``offset + i * out + j``; bias ``j`` at
``offset + in * out + j``.
"""
import numpy as np


def _views(widths, w):
    off = 0
    out = []
    for l in range(len(widths) - 1):
        n_in, n_out = int(widths[l]), int(widths[l + 1])
        W = w[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = w[off:off + n_out]
        off += n_out
        out.append((W, b))
    return out


def forward_batch(widths, relu, w, X):
    """Return ``(logits, hidden)`` for a batch; hidden is the encoder output."""
    layers = _views(widths, w)
    a = X
    hidden = X
    for l, (W, b) in enumerate(layers):
        z = a @ W + b
        if l < len(layers) - 1:
            a = np.maximum(z, 0.0) if relu else np.tanh(z)
            hidden = a
        else:
            a = z
    return a, hidden


def loss_grad(widths, relu, w, X, y, gp, gp_present, lam):
    """Cross-entropy plus prototype alignment, with its exact gradient.

    Returns ``(loss, grad, batch_protos, class_counts)``.
    """
    layers = _views(widths, w)
    n_layers = len(layers)
    B = X.shape[0]
    C = int(widths[-1])

    acts = [X]
    a = X
    for l, (W, b) in enumerate(layers):
        z = a @ W + b
        if l < n_layers - 1:
            a = np.maximum(z, 0.0) if relu else np.tanh(z)
        else:
            a = z
        acts.append(a)
    logits = acts[-1]
    hidden = acts[-2]
    h = hidden.shape[1]

    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    sumexp = expd.sum(axis=1, keepdims=True)
    logp = shifted - np.log(sumexp)
    rows = np.arange(B)
    ce = -logp[rows, y].mean()

    counts = np.bincount(y, minlength=C)
    sums = np.zeros((C, h))
    np.add.at(sums, y, hidden)
    present = counts > 0
    protos = np.zeros((C, h))
    protos[present] = sums[present] / counts[present, None]

    shared = present & gp_present
    diff = np.where(shared[:, None], protos - gp, 0.0)
    align = float((diff * diff).sum())
    loss = ce + lam * align

    dz = expd / sumexp
    dz[rows, y] -= 1.0
    dz /= B

    grad = np.empty_like(w)
    off_end = len(w)
    for l in range(n_layers - 1, -1, -1):
        W, b = layers[l]
        n_in, n_out = W.shape
        a_in = acts[l]
        gb_start = off_end - n_out
        gw_start = gb_start - n_in * n_out
        grad[gw_start:gb_start] = (a_in.T @ dz).ravel()
        grad[gb_start:off_end] = dz.sum(axis=0)
        off_end = gw_start
        if l == 0:
            break
        da = dz @ W.T
        if l == n_layers - 1 and lam != 0.0:
            da = da + (2.0 * lam) * diff[y] / counts[y][:, None]
        if relu:
            dz = da * (a_in > 0.0)
        else:
            dz = da * (1.0 - a_in * a_in)
    return loss, grad, protos, counts


def local_sgd(widths, relu, w0, mask, X, y, batch_idx, gp, gp_present, lam, lr):
    """Run ``len(batch_idx)`` masked SGD steps; returns ``(params, losses)``."""
    w = w0 * mask
    T = batch_idx.shape[0]
    losses = np.empty(T)
    for t in range(T):
        idx = batch_idx[t]
        loss, g, _, _ = loss_grad(widths, relu, w, X[idx], y[idx], gp, gp_present, lam)
        w = w - lr * (g * mask)
        losses[t] = loss
    return w, losses
