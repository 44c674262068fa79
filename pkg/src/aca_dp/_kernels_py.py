"""Numpy implementation of the per-example gradient kernels.

Parameter layout (flat, row-major blocks):
    logistic: W (K x d_in), b (K)
    mlp:      W1 (H x d_in), b1 (H), W2 (K x H), b2 (K)
`hidden == 0` selects the logistic model.
"""

import numpy as np


def _softmax_parts(scores, y):
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    z = e.sum(axis=1, keepdims=True)
    rows = np.arange(scores.shape[0])
    e_y = e[rows, y]
    # sum over k != y, so p_y - 1 = -other / z has no cancellation as p_y -> 1
    e[rows, y] = 0.0
    other = e.sum(axis=1)
    e[rows, y] = e_y
    top = scores[rows, y] == m[:, 0]
    losses = np.where(top, np.log1p(other), np.log(z[:, 0]) - (scores[rows, y] - m[:, 0]))
    ds = e / z
    ds[rows, y] = -other / z[:, 0]
    return ds, losses


def example_grads(theta, X, y, d_in, hidden, num_classes):
    """Per-example cross-entropy gradients (n x d) and losses (n,)."""
    n = X.shape[0]
    K = num_classes
    if hidden == 0:
        W = theta[: K * d_in].reshape(K, d_in)
        b = theta[K * d_in:]
        ds, losses = _softmax_parts(X @ W.T + b, y)
        gW = ds[:, :, None] * X[:, None, :]
        return np.concatenate([gW.reshape(n, K * d_in), ds], axis=1), losses

    H = hidden
    o = 0
    W1 = theta[o: o + H * d_in].reshape(H, d_in); o += H * d_in
    b1 = theta[o: o + H]; o += H
    W2 = theta[o: o + K * H].reshape(K, H); o += K * H
    b2 = theta[o: o + K]
    pre = X @ W1.T + b1
    active = pre > 0.0
    hid = np.where(active, pre, 0.0)
    ds, losses = _softmax_parts(hid @ W2.T + b2, y)
    dh = np.where(active, ds @ W2, 0.0)
    gW1 = dh[:, :, None] * X[:, None, :]
    gW2 = ds[:, :, None] * hid[:, None, :]
    G = np.concatenate(
        [gW1.reshape(n, H * d_in), dh, gW2.reshape(n, K * H), ds], axis=1
    )
    return G, losses


def clip_scales(G, clip):
    """Per-row factors min(1, clip/||g||), shrunk by ulps where rounding
    would leave a scaled norm above `clip`."""
    norms = np.sqrt((G * G).sum(axis=1))
    scale = np.ones(G.shape[0])
    if np.isinf(clip):
        return scale, norms
    over = norms > clip
    scale[over] = clip / norms[over]
    post = norms.copy()
    post[over] = np.sqrt(((G[over] * scale[over, None]) ** 2).sum(axis=1))
    bad = post > clip
    while bad.any():
        scale[bad] = np.nextafter(scale[bad], 0.0)
        post[bad] = np.sqrt(((G[bad] * scale[bad, None]) ** 2).sum(axis=1))
        bad = post > clip
    return scale, post


def clipped_grad_sum(theta, X, y, d_in, hidden, num_classes, clip):
    """Sum of clipped per-example gradients, the largest post-clip norm,
    and the summed loss."""
    G, losses = example_grads(theta, X, y, d_in, hidden, num_classes)
    scale, post = clip_scales(G, clip)
    total = (G * scale[:, None]).sum(axis=0)
    return total, float(post.max()), float(losses.sum())
