"""Differentiable primitives.

Every function takes and returns :class:`Tensor`. Reductions accumulate in
float64 and cast back, so results stay deterministic and 32-bit at rest.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import DimensionError, NumericError
from .tensor import Tensor, active_tape, current_scope

F32 = np.float32


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    data = np.asarray(data, dtype=F32)
    if not np.isfinite(data).all():
        raise NumericError(op, current_scope())
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=np.float64)
    return g.astype(F32).reshape(shape)


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _emit("div", a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = _t(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = _t(a)
    return _emit("power", a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _t(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _emit("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _t(a)
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, F32(0)), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = _t(a)
    s = _sigmoid(a.data)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def silu(a) -> Tensor:
    a = _t(a)
    s = _sigmoid(a.data)
    return _emit("silu", a.data * s, (a,), lambda g: (g * s * (1 + a.data * (1 - s)),))


def gelu(a) -> Tensor:
    a = _t(a)
    x = a.data.astype(np.float64)
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _emit("gelu", x * cdf, (a,), lambda g: ((g * (cdf + x * pdf)).astype(F32),))


# shape -----------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _t(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from e
    return _emit("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = _t(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def _norm_axis(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64)
    src = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).astype(F32),)

    return _emit("sum", out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64) / count
    src = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / F32(count), src).astype(F32),)

    return _emit("mean", out, (a,), back)


# linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", np.matmul(a.data, b.data), (a, b), back)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as (in, out)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# softmax family --------------------------------------------------------------

def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = _t(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    s = _softmax_np(a.data, axis).astype(F32)

    def back(g):
        dot = (g * s).sum(axis=axis, keepdims=True, dtype=np.float64)
        return ((s * (g - dot)).astype(F32),)

    return _emit("softmax", s, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _t(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    z = a.data.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g):
        total = g.sum(axis=axis, keepdims=True, dtype=np.float64)
        return ((g - s * total).astype(F32),)

    return _emit("log_softmax", out, (a,), back)


def softmax_kl(target_logits, logits, axis: int = -1, scale: float = 1.0) -> Tensor:
    """Row-wise KL(softmax(scale * target) || softmax(scale * logits)), with
    the target side a constant.

    Fused so the whole divergence is formed in float64 and rounded once;
    composing float32 log-softmax with a large multiplier (e.g. T^2 in
    distillation) otherwise amplifies the rounding of the log terms. Both
    sides share one log-softmax, so equal inputs give exactly zero.
    """
    logits = _t(logits)
    t = target_logits.data if isinstance(target_logits, Tensor) else np.asarray(target_logits)
    if t.shape != logits.shape:
        raise DimensionError(f"target {t.shape} and logits {logits.shape} differ")

    def log_softmax64(v):
        z = v.astype(np.float64) * scale
        z = z - z.max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    log_p = log_softmax64(t)
    log_q = log_softmax64(logits.data)
    p = np.exp(log_p)
    kl = (p * (log_p - log_q)).sum(axis=axis)
    q = np.exp(log_q)

    def back(g):
        return ((np.expand_dims(g, axis) * scale * (q - p)).astype(F32),)

    return _emit("softmax_kl", kl, (logits,), back)


# regularisation --------------------------------------------------------------

def dropout(a, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: zero each entry with probability ``rate`` and scale
    survivors by ``1/(1-rate)``. Identity when not training."""
    a = _t(a)
    if not train or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(a.shape) >= rate).astype(F32) / F32(1.0 - rate)
    return _emit("dropout", a.data * mask, (a,), lambda g: (g * mask,))


# normalisation ---------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalise over every axis except 1. In training mode the running
    statistics are updated in place (unbiased variance, as is customary)."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm affine params must be ({C},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    xd = x.data.astype(np.float64)
    if train:
        m = x.size // C
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        unbiased = var * m / max(m - 1, 1)
        running_mean *= (1 - momentum)
        running_mean += (momentum * mu).astype(F32)
        running_var *= (1 - momentum)
        running_var += (momentum * unbiased).astype(F32)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * invstd.reshape(bshape)
    g64 = gamma.data.astype(np.float64).reshape(bshape)
    out = xhat * g64 + beta.data.reshape(bshape)

    def back(g):
        gd = g.astype(np.float64)
        dgamma = (gd * xhat).sum(axis=axes)
        dbeta = gd.sum(axis=axes)
        dxhat = gd * g64
        if train:
            m = x.size // C
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = invstd.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * invstd.reshape(bshape)
        return dx.astype(F32), dgamma.astype(F32), dbeta.astype(F32)

    return _emit("batch_norm", out, (x, gamma, beta), back)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine params must be ({d},)")
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * invstd
    g64 = gamma.data.astype(np.float64)
    out = xhat * g64 + beta.data

    def back(g):
        gd = g.astype(np.float64)
        lead = tuple(range(x.ndim - 1))
        dgamma = (gd * xhat).sum(axis=lead)
        dbeta = gd.sum(axis=lead)
        dxhat = gd * g64
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        dx = invstd / d * (d * dxhat - s1 - xhat * s2)
        return dx.astype(F32), dgamma.astype(F32), dbeta.astype(F32)

    return _emit("layer_norm", out, (x, gamma, beta), back)


def weight_norm(v, g) -> Tensor:
    """Effective weight ``g * v / ||v||`` with the norm taken per output
    channel (over every axis except 0)."""
    v, g = _t(v), _t(g)
    if g.shape != (v.shape[0],):
        raise DimensionError(f"weight_norm gain must be ({v.shape[0]},), got {g.shape}")
    axes = tuple(range(1, v.ndim))
    bshape = (-1,) + (1,) * (v.ndim - 1)
    vd = v.data.astype(np.float64)
    norm = np.sqrt((vd * vd).sum(axis=axes, keepdims=True))
    u = vd / norm
    gd = g.data.astype(np.float64).reshape(bshape)
    out = gd * u

    def back(grad):
        gw = grad.astype(np.float64)
        proj = (gw * u).sum(axis=axes, keepdims=True)
        dg = proj.reshape(-1)
        dv = gd / norm * (gw - u * proj)
        return dv.astype(F32), dg.astype(F32)

    return _emit("weight_norm", out, (v, g), back)


# convolution -----------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x, w, bias=None, stride=(1, 1), padding=(0, 0), groups: int = 1) -> Tensor:
    """2-D cross-correlation on NCHW input with OIHW weights."""
    x, w = _t(x), _t(w)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    N, C, H, W = x.shape
    Co, Cg, Kh, Kw = w.shape
    if C % groups or Co % groups or C // groups != Cg:
        raise DimensionError(f"conv2d channel mismatch: input {C}, weight {w.shape}, groups {groups}")
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if Hp < Kh or Wp < Kw:
        raise DimensionError(f"kernel {(Kh, Kw)} larger than padded input {(Hp, Wp)}")
    Ho, Wo = (Hp - Kh) // sh + 1, (Wp - Kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (Kh, Kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    # win: (N, C, Ho, Wo, Kh, Kw)
    if groups == 1:
        out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        Cog = Co // groups
        wg = w.data.reshape(groups, Cog, Cg, Kh, Kw)
        wing = win.reshape(N, groups, Cg, Ho, Wo, Kh, Kw)
        out = np.einsum("ngchwij,gocij->ngohw", wing, wg).reshape(N, Co, Ho, Wo)
    if bias is not None:
        bias = _t(bias)
        if bias.shape != (Co,):
            raise DimensionError(f"conv2d bias must be ({Co},), got {bias.shape}")
        out = out + bias.data.reshape(1, Co, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        if groups == 1:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g.reshape(N, groups, Co // groups, Ho, Wo)
            gw = np.einsum("ngohw,ngchwij->gocij", gg, wing).reshape(w.shape)
            gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg).reshape(N, C, Ho, Wo, Kh, Kw)
        gxp = np.zeros((N, C, Hp, Wp), dtype=F32)
        for i in range(Kh):
            for j in range(Kw):
                gxp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += gcols[..., i, j]
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        grads = [np.ascontiguousarray(gx), gw.astype(F32)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(F32))
        return grads

    inputs = (x, w) if bias is None else (x, w, bias)
    return _emit("conv2d", out, inputs, back)


def causal_conv1d(x, w, bias=None, dilation: int = 1) -> Tensor:
    """Dilated 1-D convolution whose output at step t sees only steps <= t.

    The last kernel tap is aligned with the current step; the input is
    left-padded with ``(K - 1) * dilation`` zeros so length is preserved.
    """
    x, w = _t(x), _t(w)
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"causal_conv1d expects (N,C,T) and (O,C,K), got {x.shape}, {w.shape}")
    N, C, T = x.shape
    Co, Ci, K = w.shape
    if Ci != C:
        raise DimensionError(f"causal_conv1d channel mismatch: input {C}, weight expects {Ci}")
    if K < 1 or dilation < 1:
        raise DimensionError("kernel size and dilation must be >= 1")
    pad = (K - 1) * dilation
    # one GEMM: taps stacked as (K*C, N*T) columns, weights as (Co, K*C)
    xt = np.zeros((C, N, T + pad), dtype=F32)
    xt[:, :, pad:] = x.data.transpose(1, 0, 2)
    cols = np.empty((K, C, N, T), dtype=F32)
    for k in range(K):
        cols[k] = xt[:, :, k * dilation:k * dilation + T]
    cols = cols.reshape(K * C, N * T)
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 1)).reshape(Co, K * C)
    out = (wmat @ cols).reshape(Co, N, T)
    if bias is not None:
        bias = _t(bias)
        out += bias.data.reshape(Co, 1, 1)
    out = np.ascontiguousarray(out.transpose(1, 0, 2))

    def back(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(Co, N * T)
        gw = (gt @ cols.T).reshape(Co, K, C).transpose(0, 2, 1)
        gcols = (wmat.T @ gt).reshape(K, C, N, T)
        gxt = np.zeros((C, N, T + pad), dtype=F32)
        for k in range(K):
            gxt[:, :, k * dilation:k * dilation + T] += gcols[k]
        grads = [np.ascontiguousarray(gxt[:, :, pad:].transpose(1, 0, 2)), np.ascontiguousarray(gw)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2), dtype=np.float64).astype(F32))
        return grads

    inputs = (x, w) if bias is None else (x, w, bias)
    return _emit("causal_conv1d", out, inputs, back)
