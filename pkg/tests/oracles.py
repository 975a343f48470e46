"""Slow, obviously-correct reference implementations used to freeze expected values."""

from __future__ import annotations

import math

import numpy as np


def bilinear_sample(img, y, x):
    """Sample a (H, W) array at real (y, x); each out-of-range corner reads zero."""
    H, W = img.shape
    y0, x0 = math.floor(y), math.floor(x)
    total = 0.0
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            w = (1 - abs(y - yy)) * (1 - abs(x - xx))
            if 0 <= yy < H and 0 <= xx < W:
                total += w * img[yy, xx]
    return total


def deform_conv_loop(x, offset, mask, weight, bias=None, padding=None, dilation=1):
    """Nested-loop modulated deformable convolution.

    x (N, C, H, W); offset (N, 2k^2, Ho, Wo) with tap t stored as (dx, dy) at
    channels (2t, 2t+1); mask (N, k^2, Ho, Wo); weight (O, C, k, k). Stride 1.
    """
    x, offset, mask, weight = (np.asarray(a, dtype=np.float64) for a in (x, offset, mask, weight))
    N, C, H, W = x.shape
    O, _, k, _ = weight.shape
    pad = dilation * (k // 2) if padding is None else padding
    Ho = H + 2 * pad - dilation * (k - 1)
    Wo = W + 2 * pad - dilation * (k - 1)
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for a in range(k):
                        for b in range(k):
                            t = a * k + b
                            dx = offset[n, 2 * t, i, j]
                            dy = offset[n, 2 * t + 1, i, j]
                            py = i - pad + a * dilation + dy
                            px = j - pad + b * dilation + dx
                            m = mask[n, t, i, j]
                            for c in range(C):
                                acc += weight[o, c, a, b] * m * bilinear_sample(x[n, c], py, px)
                    out[n, o, i, j] = acc
    return out


def conv2d_loop(x, weight, bias=None, padding=1):
    x, weight = np.asarray(x, dtype=np.float64), np.asarray(weight, dtype=np.float64)
    N, C, H, W = x.shape
    O, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho, Wo = H + 2 * padding - k + 1, W + 2 * padding - k + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    out[n, o, i, j] = np.sum(xp[n, :, i : i + k, j : j + k] * weight[o]) + (
                        0.0 if bias is None else bias[o]
                    )
    return out


def attention_loop(q, k, v):
    """Per-token scalar attention: q (T, d), k (S, d), v (S, c) -> (T, c) and the weights."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    T, d = q.shape
    S = k.shape[0]
    out = np.zeros((T, v.shape[1]))
    weights = np.zeros((T, S))
    for t in range(T):
        scores = [sum(q[t, e] * k[s, e] for e in range(d)) / math.sqrt(d) for s in range(S)]
        mx = max(scores)
        ex = [math.exp(sc - mx) for sc in scores]
        z = sum(ex)
        for s in range(S):
            weights[t, s] = ex[s] / z
            for c in range(v.shape[1]):
                out[t, c] += weights[t, s] * v[s, c]
    return out, weights


def mse_loop(a, b):
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return total / len(a)


def total_loss_loop(l_h, l_io, alpha):
    acc = 0.0
    for t in l_io:
        acc += t
    return l_h + alpha * acc


def pck_loop(pred, gt, boxes, tau):
    """Per-joint AP table {k: percent} by explicit counting; joints never visible are omitted."""
    N, K = len(gt), len(gt[0])
    table = {}
    for kk in range(K):
        vis = correct = 0
        for n in range(N):
            x, y, v = gt[n][kk]
            if v <= 0:
                continue
            vis += 1
            cx, cy, w, h = boxes[n]
            thr = tau * math.sqrt(w * w + h * h)
            dx, dy = pred[n][kk][0] - x, pred[n][kk][1] - y
            if math.sqrt(dx * dx + dy * dy) <= thr:
                correct += 1
        if vis:
            table[kk] = 100.0 * correct / vis
    return table
