"""Naive scalar-loop references for every tensor op.

These are slow on purpose: each output element is accumulated one scalar at a
time with plain Python loops, sharing no code with :mod:`.ops`. Tests and the
gradcheck harness compare the vectorized kernels against them.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    ph, pw = (pad, pad) if np.isscalar(pad) else pad
    n, c, h, wd = x.shape
    co, cg, kh, kw = w.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    cpo = co // groups
    out = np.zeros((n, co, ho, wo))
    for bi in range(n):
        for o in range(co):
            g = o // cpo
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * sh + u - ph
                                xx = j * sw + v - pw
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[bi, g * cg + ci, y, xx] * w[o, ci, u, v]
                    out[bi, o, i, j] = acc
    return out


def transposed_conv2d(x, w, b=None, stride=1, pad=0, out_pad=0):
    """Scatter-accumulate: every input pixel spreads its kernel over the output."""
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    out = np.zeros((n, co, ho, wo))
    for bi in range(n):
        for c in range(ci):
            for i in range(h):
                for j in range(wd):
                    for o in range(co):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * stride + u - pad
                                xx = j * stride + v - pad
                                if 0 <= y < ho and 0 <= xx < wo:
                                    out[bi, o, y, xx] += x[bi, c, i, j] * w[c, o, u, v]
    if b is not None:
        for bi in range(n):
            for o in range(co):
                for y in range(ho):
                    for xx in range(wo):
                        out[bi, o, y, xx] += b[o]
    return out


def pool_directional(x, axis):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    if axis == "width":
        out = np.zeros((n, c, h, 1))
        for a in range(n):
            for k in range(c):
                for i in range(h):
                    s = 0.0
                    for j in range(w):
                        s += x[a, k, i, j]
                    out[a, k, i, 0] = s / w
    else:
        out = np.zeros((n, c, 1, w))
        for a in range(n):
            for k in range(c):
                for j in range(w):
                    s = 0.0
                    for i in range(h):
                        s += x[a, k, i, j]
                    out[a, k, 0, j] = s / h
    return out


def global_avg_pool(x):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for a in range(n):
        for k in range(c):
            s = 0.0
            for i in range(h):
                for j in range(w):
                    s += x[a, k, i, j]
            out[a, k, 0, 0] = s / (h * w)
    return out


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for idx, v in np.ndenumerate(x):
        out[idx] = v if v > 0 else 0.0
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for idx, v in np.ndenumerate(x):
        out[idx] = 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))
    return out


def softmax(x, axis):
    x = np.asarray(x, dtype=np.float64)
    moved = np.moveaxis(x, axis, -1)
    out = np.empty_like(moved)
    for idx in np.ndindex(*moved.shape[:-1]):
        row = moved[idx]
        m = max(row)
        e = [math.exp(v - m) for v in row]
        s = math.fsum(e)
        out[idx] = [v / s for v in e]
    return np.moveaxis(out, -1, axis)


def batch_norm_train(x, gamma, beta, eps=1e-5):
    """Two-pass batch statistics: mean first, then centered variance."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    m = n * h * w
    for k in range(c):
        s = 0.0
        for a in range(n):
            for i in range(h):
                for j in range(w):
                    s += x[a, k, i, j]
        mean = s / m
        v = 0.0
        for a in range(n):
            for i in range(h):
                for j in range(w):
                    v += (x[a, k, i, j] - mean) ** 2
        var = v / m
        for a in range(n):
            for i in range(h):
                for j in range(w):
                    out[a, k, i, j] = (x[a, k, i, j] - mean) / math.sqrt(var + eps) * gamma[k] + beta[k]
    return out


def batch_norm_eval(x, gamma, beta, mean, var, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for (a, k, i, j), v in np.ndenumerate(x):
        out[a, k, i, j] = (v - mean[k]) / math.sqrt(var[k] + eps) * gamma[k] + beta[k]
    return out


def group_norm(x, num_groups, gamma=None, beta=None, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    cg = c // num_groups
    out = np.zeros_like(x)
    for a in range(n):
        for g in range(num_groups):
            vals = [x[a, k, i, j] for k in range(g * cg, (g + 1) * cg) for i in range(h) for j in range(w)]
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
            for k in range(g * cg, (g + 1) * cg):
                ga = 1.0 if gamma is None else gamma[k]
                be = 0.0 if beta is None else beta[k]
                for i in range(h):
                    for j in range(w):
                        out[a, k, i, j] = (x[a, k, i, j] - mean) / math.sqrt(var + eps) * ga + be
    return out


def instance_norm(x, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    for a in range(n):
        for k in range(c):
            vals = [x[a, k, i, j] for i in range(h) for j in range(w)]
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
            for i in range(h):
                for j in range(w):
                    out[a, k, i, j] = (x[a, k, i, j] - mean) / math.sqrt(var + eps)
    return out


def broadcast_binary(a, b, fn):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    shape = tuple(max(p, q) for p, q in zip(a.shape, b.shape))
    out = np.zeros(shape)
    for idx in np.ndindex(*shape):
        ia = tuple(0 if s == 1 else i for i, s in zip(idx, a.shape))
        ib = tuple(0 if s == 1 else i for i, s in zip(idx, b.shape))
        out[idx] = fn(a[ia], b[ib])
    return out


def add(a, b):
    return broadcast_binary(a, b, lambda p, q: p + q)


def mul(a, b):
    return broadcast_binary(a, b, lambda p, q: p * q)


def batched_matmul(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    bsz, p, k = a.shape
    m = b.shape[2]
    out = np.zeros((bsz, p, m))
    for t in range(bsz):
        for i in range(p):
            for j in range(m):
                s = 0.0
                for q in range(k):
                    s += a[t, i, q] * b[t, q, j]
                out[t, i, j] = s
    return out


def concat(xs, axis):
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    shape = list(xs[0].shape)
    shape[axis] = sum(x.shape[axis] for x in xs)
    out = np.zeros(shape)
    offset = 0
    for x in xs:
        for idx in np.ndindex(*x.shape):
            tgt = list(idx)
            tgt[axis] += offset
            out[tuple(tgt)] = x[idx]
        offset += x.shape[axis]
    return out
