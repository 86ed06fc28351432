"""Scalar compositions of the attention and residual blocks.

Everything here reads weights straight off a module and recomputes its output
with explicit loops and the naive kernels in ``mrcdetr.tensor.reference``,
never touching the vectorized ops.
"""
import math

import numpy as np

from mrcdetr.tensor import reference as ref


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def _softmax(values):
    m = max(values)
    e = [math.exp(v - m) for v in values]
    s = math.fsum(e)
    return [v / s for v in e]


def _w(p):
    return np.asarray(p.data, dtype=np.float64)


def lssm(x, block):
    n, c, h, w = x.shape
    strip_h = ref.pool_directional(x, "width")
    strip_w = ref.pool_directional(x, "height")
    k = block.kernel
    gh = ref.conv2d(strip_h, _w(block.conv_h.weight), _w(block.conv_h.bias), 1, (k // 2, 0))
    gw = ref.conv2d(strip_w, _w(block.conv_w.weight), _w(block.conv_w.bias), 1, (0, k // 2))
    out = np.zeros_like(x)
    for a, ch, i, j in np.ndindex(*x.shape):
        out[a, ch, i, j] = x[a, ch, i, j] * sig(gh[a, ch, i, 0]) * sig(gw[a, ch, 0, j])
    return out


def se(x, block):
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    w1, b1 = _w(block.reduce.weight)[:, :, 0, 0], _w(block.reduce.bias)
    w2, b2 = _w(block.expand.weight)[:, :, 0, 0], _w(block.expand.bias)
    for a in range(n):
        s = [math.fsum(x[a, ch].ravel()) / (h * w) for ch in range(c)]
        hidden = [max(0.0, b1[o] + math.fsum(w1[o, q] * s[q] for q in range(c))) for o in range(len(b1))]
        gate = [sig(b2[o] + math.fsum(w2[o, q] * hidden[q] for q in range(len(hidden)))) for o in range(c)]
        for ch in range(c):
            out[a, ch] = x[a, ch] * gate[ch]
    return out


def attention(kind, x, block):
    return {"lssm": lssm, "se": se}[kind](x, block)


def sfa(x_high, x_low, block, kind="lssm"):
    up = ref.transposed_conv2d(x_high, _w(block.upconv.weight), _w(block.upconv.bias), 2, 1, 1)
    screened = attention(kind, x_low, block.lssm_low)
    low = ref.conv2d(screened, _w(block.align.weight), _w(block.align.bias))
    high = attention(kind, up, block.lssm_high)
    out = np.zeros_like(up)
    for idx in np.ndindex(*up.shape):
        out[idx] = high[idx] * sig(low[idx]) + up[idx]
    return out


def _gn(x, norm):
    return ref.group_norm(x, norm.num_groups, _w(norm.gamma), _w(norm.beta), norm.eps)


def dca(x, block, trace=None):
    """Loop over every (image, group) slice and rebuild the attention map."""
    cfg = block.cfg
    n, c, h, w = x.shape
    g = cfg.groups
    cg = c // g
    whw, bhw = _w(block.conv_hw.weight)[:, :, 0, 0], _w(block.conv_hw.bias)
    out = np.zeros_like(x)
    for a in range(n):
        for grp in range(g):
            xs = x[a:a + 1, grp * cg:(grp + 1) * cg]
            col = [[math.fsum(xs[0, ch, i, :]) / w for i in range(h)] + [math.fsum(xs[0, ch, :, j]) / h
                                                                         for j in range(w)] for ch in range(cg)]
            fused = [[bhw[o] + math.fsum(whw[o, q] * col[q][t] for q in range(cg)) for t in range(h + w)]
                     for o in range(cg)]
            x1 = np.zeros_like(xs)
            for ch, i, j in np.ndindex(cg, h, w):
                x1[0, ch, i, j] = xs[0, ch, i, j] * sig(fused[ch][i]) * sig(fused[ch][h + j])
            x2 = ref.conv2d(xs, _w(block.conv3.weight), _w(block.conv3.bias), 1, 1)
            n1, n2 = _gn(x1, block.gn1), _gn(x2, block.gn2)
            w1 = _softmax([math.fsum(n1[0, ch].ravel()) / (h * w) for ch in range(cg)])
            w2 = _softmax([math.fsum(n2[0, ch].ravel()) / (h * w) for ch in range(cg)])
            for i, j in np.ndindex(h, w):
                logit = math.fsum(w1[ch] * x2[0, ch, i, j] + w2[ch] * x1[0, ch, i, j] for ch in range(cg))
                att = sig(logit)
                for ch in range(cg):
                    out[a, grp * cg + ch, i, j] = xs[0, ch, i, j] * att
            if trace is not None:
                trace.setdefault("w1", []).append(w1)
                trace.setdefault("w2", []).append(w2)
    return out


def _cbr_eval(x, cbr):
    bn = cbr.bn
    y = ref.conv2d(x, _w(cbr.conv.weight), None, 1, 1)
    y = ref.batch_norm_eval(y, _w(bn.gamma), _w(bn.beta), bn.running_mean, bn.running_var, bn.eps)
    return ref.relu(y)


def msru_eval(x, block):
    c, k = block.cfg.channels, block.cfg.split_at
    r1 = x + _cbr_eval(_cbr_eval(x, block.cbr1), block.cbr2)
    s1 = ref.conv2d(r1[:, :k], _w(block.conv_s1.weight), _w(block.conv_s1.bias), 1, 1)
    f_split = ref.concat([s1, r1[:, k:]], 1)
    mid = ref.conv2d(f_split, _w(block.conv_expand.weight), _w(block.conv_expand.bias))
    f_interact = ref.conv2d(mid, _w(block.conv_project.weight), _w(block.conv_project.bias))
    return r1 + dca(f_interact, block.dca)
