"""Differentiable primitives over NCHW tensors.

Every op validates its shape contract, computes the forward result with numpy,
and registers a closure that maps the upstream gradient to input gradients.
Empty tensors (any extent 0) flow through every op and yield empty results.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ContractError
from . import flops
from .core import _KINK_WATCHERS, Tensor, as_tensor, note_kinks, record


def _pair(v, what):
    if isinstance(v, (tuple, list)):
        a, b = int(v[0]), int(v[1])
    else:
        a = b = int(v)
    return a, b


def _check_4d(x: Tensor, op: str):
    if x.ndim != 4:
        raise ContractError(f"{op} expects an NCHW tensor, got shape {x.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    if len(a) != len(b):
        raise ContractError(f"{op}: rank mismatch {a} vs {b}")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ContractError(f"{op}: shapes {a} and {b} do not broadcast")
    return tuple(out)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_out(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def _windows(xp, kh, kw, sh, sw, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _conv_forward(xd, wd, sh, sw, ph, pw, groups):
    n, c, h, w = xd.shape
    co, cg, kh, kw = wd.shape
    ho, wo = _conv_out(h, kh, sh, ph), _conv_out(w, kw, sw, pw)
    dtype = np.result_type(xd, wd)
    if n == 0 or ho <= 0 or wo <= 0 or c == 0 or co == 0:
        return np.zeros((n, co, max(ho, 0), max(wo, 0)), dtype=dtype), None
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    if kh == kw == 1 and sh == sw == 1 and groups == 1:
        out = np.tensordot(wd[:, :, 0, 0], xp, axes=([1], [1]))  # co, n, h, w
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), xp
    win = _windows(xp, kh, kw, sh, sw, ho, wo)  # n, c, ho, wo, kh, kw
    if groups == 1:
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3]))  # n, ho, wo, co
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), xp
    wg = wd.reshape(groups, co // groups, cg, kh, kw)
    wing = win.reshape(n, groups, cg, ho, wo, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=True)
    return np.ascontiguousarray(out.reshape(n, co, ho, wo)), xp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0, groups: int = 1) -> Tensor:
    """Cross-correlation with zero padding. ``w`` is [Cout, Cin/groups, kh, kw]."""
    _check_4d(x, "conv2d")
    _check_4d(w, "conv2d weight")
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(pad, "pad")
    if sh <= 0 or sw <= 0:
        raise ConfigError(f"conv2d stride must be positive, got {stride}")
    if ph < 0 or pw < 0:
        raise ConfigError(f"conv2d pad must be non-negative, got {pad}")
    n, c, h, wd_ = x.shape
    co, cg, kh, kw = w.shape
    if groups < 1 or c != cg * groups or co % groups:
        raise ContractError(f"conv2d: input {x.shape} incompatible with weight {w.shape} (groups={groups})")
    if b is not None and b.shape != (co,):
        raise ContractError(f"conv2d: bias {b.shape} does not match weight {w.shape}")
    ho, wo = _conv_out(h, kh, sh, ph), _conv_out(wd_, kw, sw, pw)
    if ho < 0 or wo < 0:
        raise ContractError(f"conv2d: input {x.shape} too small for weight {w.shape} with pad {pad}")

    out, xp = _conv_forward(x.data, w.data, sh, sw, ph, pw, groups)
    if b is not None and out.size:
        out += b.data.reshape(1, co, 1, 1)
    flops.count("conv2d", 2 * n * co * cg * kh * kw * ho * wo)
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        gb = None if b is None else g.sum(axis=(0, 2, 3))
        if xp is None or g.size == 0:
            return (gx, gw) if b is None else (gx, gw, gb)
        if kh == kw == 1 and sh == sw == 1 and groups == 1:
            gw[:, :, 0, 0] = np.tensordot(g, xp, axes=([0, 2, 3], [0, 2, 3]))
            gx = np.ascontiguousarray(np.tensordot(g, w.data[:, :, 0, 0], axes=([1], [0])).transpose(0, 3, 1, 2))
            gx = gx[:, :, ph : ph + h, pw : pw + wd_] if (ph or pw) else gx
            return (gx, gw) if b is None else (gx, gw, gb)
        win = _windows(xp, kh, kw, sh, sw, ho, wo)
        if groups == 1:
            gw[...] = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(g, w.data, axes=([1], [0]))  # n, ho, wo, c, kh, kw
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g.reshape(n, groups, co // groups, ho, wo)
            wing = win.reshape(n, groups, cg, ho, wo, kh, kw)
            wg = w.data.reshape(groups, co // groups, cg, kh, kw)
            gw[...] = np.einsum("ngohw,ngchwij->gocij", gg, wing, optimize=True).reshape(gw.shape)
            gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True).reshape(n, c, ho, wo, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += gcols[..., i, j]
        gx = gxp[:, :, ph : ph + h, pw : pw + wd_]
        return (gx, gw) if b is None else (gx, gw, gb)

    return record("conv2d", Tensor(out), inputs, backward)


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0, out_pad=0) -> Tensor:
    """Fractionally-strided convolution. ``w`` is [Cin, Cout, kh, kw].

    Output extent is ``(H - 1)·stride - 2·pad + kh + out_pad``; ``out_pad``
    extends the bottom/right border.
    """
    _check_4d(x, "transposed_conv2d")
    _check_4d(w, "transposed_conv2d weight")
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(pad, "pad")
    oph, opw = _pair(out_pad, "out_pad")
    if sh <= 0 or sw <= 0:
        raise ConfigError(f"transposed_conv2d stride must be positive, got {stride}")
    n, ci, h, wd_ = x.shape
    ci_w, co, kh, kw = w.shape
    if ci != ci_w:
        raise ContractError(f"transposed_conv2d: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (co,):
        raise ContractError(f"transposed_conv2d: bias {b.shape} does not match weight {w.shape}")
    ho = (h - 1) * sh - 2 * ph + kh + oph
    wo = (wd_ - 1) * sw - 2 * pw + kw + opw
    if ho <= 0 or wo <= 0:
        raise ContractError(f"transposed_conv2d: output size {ho}x{wo} from input {x.shape} is not positive")
    dtype = np.result_type(x.data, w.data)
    fh = max((h - 1) * sh + kh, ph + ho)
    fw = max((wd_ - 1) * sw + kw, pw + wo)

    if n and h and wd_:
        cols = np.tensordot(x.data, w.data, axes=([1], [0]))  # n, h, w, co, kh, kw
        cols = cols.transpose(0, 3, 1, 2, 4, 5)
        full = np.zeros((n, co, fh, fw), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                full[:, :, i : i + (h - 1) * sh + 1 : sh, j : j + (wd_ - 1) * sw + 1 : sw] += cols[..., i, j]
        out = np.ascontiguousarray(full[:, :, ph : ph + ho, pw : pw + wo])
    else:
        out = np.zeros((n, co, ho, wo), dtype=dtype)
    if b is not None and out.size:
        out += b.data.reshape(1, co, 1, 1)
    flops.count("transposed_conv2d", 2 * n * co * ci * kh * kw * ho * wo)
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gb = None if b is None else g.sum(axis=(0, 2, 3))
        if g.size == 0 or x.size == 0:
            gx, gw = np.zeros_like(x.data), np.zeros_like(w.data)
            return (gx, gw) if b is None else (gx, gw, gb)
        gfull = np.zeros((n, co, fh, fw), dtype=g.dtype)
        gfull[:, :, ph : ph + ho, pw : pw + wo] = g
        win = _windows(gfull, kh, kw, sh, sw, h, wd_)  # n, co, h, w, kh, kw
        gx = np.ascontiguousarray(np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        return (gx, gw) if b is None else (gx, gw, gb)

    return record("transposed_conv2d", Tensor(out), inputs, backward)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool_directional(x: Tensor, axis: str) -> Tensor:
    """Mean over one spatial axis.

    ``axis="width"`` averages over W giving [N,C,H,1]; ``axis="height"``
    averages over H giving [N,C,1,W].
    """
    _check_4d(x, "pool_directional")
    if axis == "width":
        ax = 3
    elif axis == "height":
        ax = 2
    else:
        raise ConfigError(f"pool_directional axis must be 'height' or 'width', got {axis!r}")
    extent = x.shape[ax]
    if extent == 0:
        raise ContractError(f"pool_directional over {axis}: zero extent in {x.shape}")
    out = x.data.mean(axis=ax, keepdims=True) if x.size else np.zeros(
        tuple(1 if i == ax else s for i, s in enumerate(x.shape)), dtype=x.dtype)
    flops.count("pool", out.size)

    def backward(g):
        return (np.broadcast_to(g / extent, x.shape).copy(),)

    return record("pool_directional", Tensor(out), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    if h * w == 0:
        raise ContractError(f"global_avg_pool: empty spatial extent in {x.shape}")
    out = x.data.mean(axis=(2, 3), keepdims=True) if x.size else np.zeros((n, c, 1, 1), dtype=x.dtype)
    flops.count("pool", out.size)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return record("global_avg_pool", Tensor(out), (x,), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _KINK_WATCHERS:
        note_kinks(mask)
    out = np.where(mask, x.data, 0).astype(x.dtype)
    flops.count("relu", out.size)
    return record("relu", Tensor(out), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    flops.count("sigmoid", out.size)
    return record("sigmoid", Tensor(out), (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int) -> Tensor:
    if x.size:
        z = x.data - x.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)
    else:
        out = np.zeros_like(x.data)
    flops.count("softmax", out.size)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", Tensor(out), (x,), backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization; training mode updates the running stats in place."""
    _check_4d(x, "batch_norm")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractError(f"batch_norm: affine params {gamma.shape}/{beta.shape} do not match input {x.shape}")
    if eps <= 0:
        raise ConfigError("batch_norm eps must be positive")
    m = n * h * w
    if training and m > 0:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)
    flops.count("batch_norm", out.size)
    batch_stats = training and m > 0

    def backward(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if batch_stats:
            gx = (inv.reshape(1, c, 1, 1) / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return record("batch_norm", Tensor(out), (x, gamma, beta), backward)


def group_norm(x: Tensor, num_groups: int, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over (channels-in-group, H, W) per sample, then per-channel affine."""
    _check_4d(x, "group_norm")
    n, c, h, w = x.shape
    if num_groups < 1 or c % num_groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {num_groups} groups")
    if eps <= 0:
        raise ConfigError("group_norm eps must be positive")
    cg = c // num_groups
    m = cg * h * w
    xg = x.data.reshape(n, num_groups, m)
    if xg.size:
        mean = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
    else:
        mean = np.zeros((n, num_groups, 1), dtype=x.dtype)
        var = np.zeros((n, num_groups, 1), dtype=x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(x.shape)
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(1, c, 1, 1)
    if beta is not None:
        out = out + beta.data.reshape(1, c, 1, 1)
    out = np.ascontiguousarray(out, dtype=np.result_type(x.data, *(p.data for p in (gamma, beta) if p is not None)))
    flops.count("group_norm", out.size)
    inputs = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        grads = []
        gxhat = g * gamma.data.reshape(1, c, 1, 1) if gamma is not None else g
        if m:
            gh = gxhat.reshape(n, num_groups, m)
            xh = xhat.reshape(n, num_groups, m)
            gx = (inv / m) * (m * gh - gh.sum(axis=2, keepdims=True) - xh * (gh * xh).sum(axis=2, keepdims=True))
            grads.append(gx.reshape(x.shape))
        else:
            grads.append(np.zeros_like(x.data))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return record("group_norm", Tensor(out), inputs, backward)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s < 0 for s in shape):
        raise ContractError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)
    src = x.shape
    return record("reshape", Tensor(out), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record("transpose", Tensor(out), (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def reshape_group(x: Tensor, groups: int) -> Tensor:
    """[N, C, H, W] -> [N·G, C/G, H, W]; group g of sample n holds channels g·C/G.."""
    _check_4d(x, "reshape_group")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"reshape_group: {c} channels not divisible by G={groups}")
    return reshape(x, (n * groups, c // groups, h, w))


def unreshape_group(x: Tensor, groups: int) -> Tensor:
    """Inverse of :func:`reshape_group`."""
    _check_4d(x, "unreshape_group")
    ng, cg, h, w = x.shape
    if groups < 1 or ng % groups:
        raise ConfigError(f"unreshape_group: batch {ng} not divisible by G={groups}")
    return reshape(x, (ng // groups, cg * groups, h, w))


def concat(xs, axis: int) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ContractError("concat of an empty list")
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ContractError(f"concat along {axis}: shapes {ref} and {t.shape} disagree")
    out = np.concatenate([t.data for t in xs], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in xs])

    def backward(g):
        return tuple(np.ascontiguousarray(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax))
                     for i in range(len(xs)))

    return record("concat", Tensor(out), xs, backward)


def split(x: Tensor, sizes, axis: int) -> list[Tensor]:
    sizes = [int(s) for s in sizes]
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax] or any(s < 0 for s in sizes):
        raise ContractError(f"split sizes {sizes} do not sum to extent {x.shape[ax]} of {x.shape}")
    outs = []
    start = 0
    for s in sizes:
        lo, hi = start, start + s
        piece = np.ascontiguousarray(np.take(x.data, range(lo, hi), axis=ax))

        def backward(g, lo=lo, hi=hi):
            full = np.zeros(x.shape, dtype=g.dtype)
            idx = [slice(None)] * x.ndim
            idx[ax] = slice(lo, hi)
            full[tuple(idx)] = g
            return (full,)

        outs.append(record("split", Tensor(piece), (x,), backward))
        start = hi
    return outs


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape(a.shape, b.shape, "add")
    out = a.data + b.data
    flops.count("add", out.size)
    return record("add", Tensor(out), (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    out = a.data - b.data
    flops.count("add", out.size)
    return record("sub", Tensor(out), (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    out = ad * bd
    flops.count("mul", out.size)
    return record("mul", Tensor(out), (a, b),
                  lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * c
    flops.count("mul", out.size)
    return record("scale", Tensor(out), (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(())
    return record("sum", Tensor(out), (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """[B, P, K] @ [B, K, M] -> [B, P, M]."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ContractError(f"batched_matmul: shapes {a.shape} and {b.shape} do not chain")
    bsz, p, k = a.shape
    m = b.shape[2]
    out = np.matmul(a.data, b.data)
    flops.count("matmul", 2 * bsz * p * k * m)

    def backward(g):
        return np.matmul(g, b.data.transpose(0, 2, 1)), np.matmul(a.data.transpose(0, 2, 1), g)

    return record("batched_matmul", Tensor(out), (a, b), backward)
