"""EEGMobile student and EEGViT-TCNet teacher.

Both share the same front end:

    EEG (B, 129, 500)
      -> TCN: three residual levels of weight-normalised causal convs -> (B, 256, 500)
      -> feature extraction: view as (B, 1, 256, 500), conv (1, 36) -> (B, 256, 256, 14),
         conv (256, 1) -> (B, 768, 1, 14)

The student continues with MobileViTV2 blocks (separable attention, no input
skip), the teacher with a 12-layer pre-norm ViT encoder over the 14 tokens.
Both mean-pool, apply head dropout and regress (x, y).

Parameters live in a flat, insertion-ordered ``dict[str, Tensor]`` so names
double as checkpoint keys.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .tensor import Tensor, name_scope

F32 = np.float32


# configs ---------------------------------------------------------------------

def _as_pair(v, name: str) -> tuple[int, int]:
    try:
        a, b = v
        return int(a), int(b)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} must be a pair of ints, got {v!r}") from e


@dataclass
class StudentConfig:
    in_channels: int = 129
    timesteps: int = 500
    tcn_channels: list[int] = field(default_factory=lambda: [64, 128, 256])
    tcn_kernel: int = 3
    tcn_dropout: float = 0.75
    fe1_out: int = 256
    fe1_kernel: tuple[int, int] = (1, 36)
    fe1_stride: tuple[int, int] = (1, 36)
    fe1_padding: tuple[int, int] = (0, 2)
    fe2_out: int = 768
    mvit_blocks: int = 1
    mvit_transformer_layers: int = 1
    mvit_dim: int = 768
    mvit_ffn_expansion: int = 2
    mvit_conv_kernel: tuple[int, int] = (3, 3)
    mvit_patch: tuple[int, int] = (1, 1)
    head_dropout: float = 0.1
    out_dim: int = 2

    def __post_init__(self):
        _check_front_end(self)
        self.mvit_conv_kernel = _as_pair(self.mvit_conv_kernel, "mvit_conv_kernel")
        self.mvit_patch = _as_pair(self.mvit_patch, "mvit_patch")
        if self.mvit_blocks < 1 or self.mvit_transformer_layers < 1:
            raise ConfigError("mvit_blocks and mvit_transformer_layers must be >= 1")
        if self.mvit_dim < 1 or self.mvit_ffn_expansion < 1:
            raise ConfigError("mvit_dim and mvit_ffn_expansion must be >= 1")
        if any(k % 2 == 0 for k in self.mvit_conv_kernel):
            raise ConfigError("mvit_conv_kernel must be odd so the map size is kept")
        h, w = feature_map_size(self)
        ph, pw = self.mvit_patch
        if ph < 1 or pw < 1 or h % ph or w % pw:
            raise ConfigError(f"mvit_patch {self.mvit_patch} does not tile the {h}x{w} feature map")


@dataclass
class TeacherConfig:
    in_channels: int = 129
    timesteps: int = 500
    tcn_channels: list[int] = field(default_factory=lambda: [64, 128, 256])
    tcn_kernel: int = 3
    tcn_dropout: float = 0.75
    fe1_out: int = 256
    fe1_kernel: tuple[int, int] = (1, 36)
    fe1_stride: tuple[int, int] = (1, 36)
    fe1_padding: tuple[int, int] = (0, 2)
    fe2_out: int = 768
    vit_dim: int = 768
    vit_layers: int = 12
    vit_heads: int = 12
    vit_mlp: int = 3072
    head_dropout: float = 0.1
    out_dim: int = 2

    def __post_init__(self):
        _check_front_end(self)
        if self.vit_heads < 1 or self.vit_dim % self.vit_heads:
            raise ConfigError(f"vit_dim {self.vit_dim} not divisible by vit_heads {self.vit_heads}")
        if self.vit_dim != self.fe2_out:
            raise ConfigError(f"vit_dim {self.vit_dim} must equal fe2_out {self.fe2_out}")
        if self.vit_layers < 1 or self.vit_mlp < 1:
            raise ConfigError("vit_layers and vit_mlp must be >= 1")


def _check_front_end(cfg) -> None:
    if cfg.in_channels < 1 or cfg.timesteps < 1:
        raise ConfigError("in_channels and timesteps must be >= 1")
    cfg.tcn_channels = [int(c) for c in cfg.tcn_channels]
    if not cfg.tcn_channels or min(cfg.tcn_channels) < 1:
        raise ConfigError("tcn_channels must be a nonempty list of positive ints")
    if cfg.tcn_kernel < 1:
        raise ConfigError("tcn_kernel must be >= 1")
    for name in ("tcn_dropout", "head_dropout"):
        if not 0.0 <= getattr(cfg, name) < 1.0:
            raise ConfigError(f"{name} must lie in [0, 1)")
    cfg.fe1_kernel = _as_pair(cfg.fe1_kernel, "fe1_kernel")
    cfg.fe1_stride = _as_pair(cfg.fe1_stride, "fe1_stride")
    cfg.fe1_padding = _as_pair(cfg.fe1_padding, "fe1_padding")
    if cfg.fe1_out < 1 or cfg.fe2_out < 1:
        raise ConfigError("fe1_out and fe2_out must be >= 1")
    if cfg.out_dim != 2:
        raise ConfigError(f"out_dim must be 2 (x, y gaze), got {cfg.out_dim}")
    kh, kw = cfg.fe1_kernel
    ph, pw = cfg.fe1_padding
    if cfg.tcn_channels[-1] + 2 * ph < kh or cfg.timesteps + 2 * pw < kw:
        raise ConfigError("fe1_kernel larger than the padded TCN output")


def feature_map_size(cfg) -> tuple[int, int]:
    """(H, W) of the map leaving the feature extractor."""
    kh, kw = cfg.fe1_kernel
    sh, sw = cfg.fe1_stride
    ph, pw = cfg.fe1_padding
    h1 = (cfg.tcn_channels[-1] + 2 * ph - kh) // sh + 1
    w1 = (cfg.timesteps + 2 * pw - kw) // sw + 1
    # the second conv spans the full height of the TCN channel axis
    return h1 - cfg.tcn_channels[-1] + 1, w1


def tiny_student_config(**overrides) -> StudentConfig:
    """Desk-scale student: TCN [8, 8, 8], width 32."""
    base = dict(tcn_channels=[8, 8, 8], fe1_out=8, fe2_out=32, mvit_dim=32)
    base.update(overrides)
    return StudentConfig(**base)


def tiny_teacher_config(**overrides) -> TeacherConfig:
    """Desk-scale teacher: TCN [8, 8, 8], width 32, 2 encoder layers."""
    base = dict(tcn_channels=[8, 8, 8], fe1_out=8, fe2_out=32, vit_dim=32,
                vit_layers=2, vit_heads=4, vit_mlp=64)
    base.update(overrides)
    return TeacherConfig(**base)


def config_from_dict(arch: str, values: dict):
    cls = {"student": StudentConfig, "teacher": TeacherConfig}.get(arch)
    if cls is None:
        raise ConfigError(f"unknown architecture {arch!r}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {arch} config keys: {sorted(unknown)}")
    return cls(**values)


def config_to_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# model container -------------------------------------------------------------

@dataclass
class Model:
    arch: str
    config: StudentConfig | TeacherConfig
    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def requires_grad_(self, flag: bool) -> "Model":
        for p in self.params.values():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as one ordered name -> array mapping."""
        out = {k: p.data for k, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, arr in state.items():
            target = self.params[k].data if k in self.params else self.buffers[k]
            if target.shape != arr.shape:
                raise DimensionError(f"{k}: shape {arr.shape} != expected {target.shape}")
        for k, arr in state.items():
            if k in self.params:
                self.params[k].data = np.array(arr, dtype=F32)
            else:
                self.buffers[k] = np.array(arr, dtype=F32)

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state().items()}


class _Init:
    """Seeded parameter factory; draw order fixes the result."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _add(self, name: str, arr: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name}")
        self.params[name] = Tensor(arr, requires_grad=True, name=name)
        return arr

    def uniform_fan_in(self, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = F32(1.0 / math.sqrt(fan_in))
        u = self.rng.random(shape, dtype=F32)
        u *= F32(2.0)
        u -= F32(1.0)
        u *= bound
        return self._add(name, u)

    def trunc_normal(self, name: str, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
        z = self.rng.standard_normal(shape, dtype=F32)
        bad = np.abs(z) > 2.0
        while bad.any():
            z[bad] = self.rng.standard_normal(int(bad.sum()), dtype=F32)
            bad = np.abs(z) > 2.0
        z *= F32(std)
        return self._add(name, z)

    def const(self, name: str, shape: tuple[int, ...], value: float) -> np.ndarray:
        return self._add(name, np.full(shape, value, dtype=F32))

    def buffer(self, name: str, shape: tuple[int, ...], value: float) -> None:
        self.buffers[name] = np.full(shape, value, dtype=F32)

    # composite helpers
    def conv(self, prefix: str, cout: int, cin: int, kh: int, kw: int, bias: bool = True) -> None:
        self.uniform_fan_in(f"{prefix}.w", (cout, cin, kh, kw), cin * kh * kw)
        if bias:
            self.const(f"{prefix}.b", (cout,), 0.0)

    def weight_normed_conv1d(self, prefix: str, cout: int, cin: int, k: int) -> None:
        v = self.uniform_fan_in(f"{prefix}.v", (cout, cin, k), cin * k)
        # start with g = ||v|| so the effective weight equals v
        norms = np.sqrt((v.astype(np.float64) ** 2).sum(axis=(1, 2)))
        self._add(f"{prefix}.g", norms.astype(F32))
        self.const(f"{prefix}.b", (cout,), 0.0)

    def batch_norm(self, prefix: str, c: int) -> None:
        self.const(f"{prefix}.gamma", (c,), 1.0)
        self.const(f"{prefix}.beta", (c,), 0.0)
        self.buffer(f"{prefix}.running_mean", (c,), 0.0)
        self.buffer(f"{prefix}.running_var", (c,), 1.0)

    def layer_norm(self, prefix: str, d: int) -> None:
        self.const(f"{prefix}.gamma", (d,), 1.0)
        self.const(f"{prefix}.beta", (d,), 0.0)

    def dense(self, prefix: str, din: int, dout: int, wname: str = "w", bname: str = "b") -> None:
        self.trunc_normal(f"{prefix}.{wname}", (din, dout))
        self.const(f"{prefix}.{bname}", (dout,), 0.0)


def _init_front_end(init: _Init, cfg) -> None:
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.tcn_channels):
        p = f"tcn.{i}"
        init.weight_normed_conv1d(f"{p}.conv1", cout, cin, cfg.tcn_kernel)
        init.weight_normed_conv1d(f"{p}.conv2", cout, cout, cfg.tcn_kernel)
        if cin != cout:
            init.uniform_fan_in(f"{p}.down.w", (cout, cin, 1), cin)
            init.const(f"{p}.down.b", (cout,), 0.0)
        cin = cout
    kh, kw = cfg.fe1_kernel
    init.conv("fe.conv1", cfg.fe1_out, 1, kh, kw)
    init.batch_norm("fe.bn1", cfg.fe1_out)
    init.conv("fe.conv2", cfg.fe2_out, cfg.fe1_out, cfg.tcn_channels[-1], 1)
    init.batch_norm("fe.bn2", cfg.fe2_out)


def _init_head(init: _Init, cfg, width: int) -> None:
    init.dense("head", width, cfg.out_dim)
    # fixed output affine; fit() sets it from the training labels
    init.buffer("head.target_mean", (cfg.out_dim,), 0.0)
    init.buffer("head.target_std", (cfg.out_dim,), 1.0)


def build_student(cfg: StudentConfig | None = None, seed: int = 0) -> Model:
    cfg = cfg or StudentConfig()
    init = _Init(seed)
    _init_front_end(init, cfg)
    C, d = cfg.fe2_out, cfg.mvit_dim
    kh, kw = cfg.mvit_conv_kernel
    for b in range(cfg.mvit_blocks):
        p = f"mvit.{b}"
        init.conv(f"{p}.local.dw", C, 1, kh, kw, bias=False)
        init.batch_norm(f"{p}.local.bn", C)
        init.conv(f"{p}.local.pw", d, C, 1, 1, bias=False)
        for layer in range(cfg.mvit_transformer_layers):
            q = f"{p}.layer.{layer}"
            init.layer_norm(f"{q}.ln1", d)
            init.dense(f"{q}.attn", d, 1, "w_i", "b_i")
            init.dense(f"{q}.attn", d, d, "w_k", "b_k")
            init.dense(f"{q}.attn", d, d, "w_v", "b_v")
            init.dense(f"{q}.attn", d, d, "w_o", "b_o")
            init.layer_norm(f"{q}.ln2", d)
            init.dense(f"{q}.ffn", d, cfg.mvit_ffn_expansion * d, "w1", "b1")
            init.dense(f"{q}.ffn", cfg.mvit_ffn_expansion * d, d, "w2", "b2")
        init.layer_norm(f"{p}.ln", d)
        init.conv(f"{p}.proj", C, d, 1, 1, bias=False)
        init.batch_norm(f"{p}.proj.bn", C)
    _init_head(init, cfg, C)
    return Model("student", cfg, init.params, init.buffers)


def build_teacher(cfg: TeacherConfig | None = None, seed: int = 0) -> Model:
    cfg = cfg or TeacherConfig()
    init = _Init(seed)
    _init_front_end(init, cfg)
    h, w = feature_map_size(cfg)
    d = cfg.vit_dim
    init.trunc_normal("vit.pos", (h * w, d))
    for layer in range(cfg.vit_layers):
        q = f"vit.layer.{layer}"
        init.layer_norm(f"{q}.ln1", d)
        for proj in ("q", "k", "v", "o"):
            init.dense(f"{q}.attn", d, d, f"w_{proj}", f"b_{proj}")
        init.layer_norm(f"{q}.ln2", d)
        init.dense(f"{q}.mlp", d, cfg.vit_mlp, "w1", "b1")
        init.dense(f"{q}.mlp", cfg.vit_mlp, d, "w2", "b2")
    init.layer_norm("vit.ln", d)
    _init_head(init, cfg, d)
    return Model("teacher", cfg, init.params, init.buffers)


def build_model(arch: str, cfg=None, seed: int = 0) -> Model:
    if arch == "student":
        return build_student(cfg, seed)
    if arch == "teacher":
        return build_teacher(cfg, seed)
    raise ConfigError(f"unknown architecture {arch!r}")


# layers ----------------------------------------------------------------------

def _sub(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def tcn_level(params: dict[str, Tensor], x: Tensor, dilation: int, dropout: float,
              train: bool, rng: np.random.Generator | None) -> Tensor:
    """One residual level: two weight-normalised causal convs with ReLU and
    dropout, plus a 1x1 projection of the input when widths differ."""
    h = x
    for conv in ("conv1", "conv2"):
        w = ops.weight_norm(params[f"{conv}.v"], params[f"{conv}.g"])
        h = ops.causal_conv1d(h, w, params[f"{conv}.b"], dilation)
        h = ops.relu(h)
        h = ops.dropout(h, dropout, rng, train)
    res = x
    if "down.w" in params:
        res = ops.causal_conv1d(x, params["down.w"], params["down.b"], 1)
    return ops.relu(ops.add(h, res))


def tcn_dilations(cfg) -> list[int]:
    return [2 ** i for i in range(len(cfg.tcn_channels))]


def receptive_field(cfg) -> int:
    return 1 + sum(2 * (cfg.tcn_kernel - 1) * d for d in tcn_dilations(cfg))


def tcn_forward(m: Model, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    cfg = m.config
    if x.ndim != 3 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"TCN expects (B, {cfg.in_channels}, T), got {x.shape}")
    h = x
    for i, d in enumerate(tcn_dilations(cfg)):
        with name_scope(f"tcn.{i}"):
            h = tcn_level(_sub(m.params, f"tcn.{i}"), h, d, cfg.tcn_dropout, train, rng)
    return h


def _batch_norm(m: Model, prefix: str, x: Tensor, train: bool) -> Tensor:
    return ops.batch_norm(x, m.params[f"{prefix}.gamma"], m.params[f"{prefix}.beta"],
                          m.buffers[f"{prefix}.running_mean"], m.buffers[f"{prefix}.running_var"], train)


def feature_extract(m: Model, h: Tensor, train: bool = False) -> Tensor:
    """(B, C_tcn, T) -> (B, fe2_out, 1, W') by two convolutions, each followed
    by batch norm and ReLU. The TCN output is read as a one-channel image."""
    cfg = m.config
    height = cfg.tcn_channels[-1]
    if h.ndim != 3 or h.shape[1] != height:
        raise DimensionError(f"feature extractor expects (B, {height}, T), got {h.shape}")
    with name_scope("fe.conv1"):
        z = ops.reshape(h, (h.shape[0], 1, h.shape[1], h.shape[2]))
        z = ops.conv2d(z, m.params["fe.conv1.w"], m.params["fe.conv1.b"],
                       stride=cfg.fe1_stride, padding=cfg.fe1_padding)
        z = ops.relu(_batch_norm(m, "fe.bn1", z, train))
    with name_scope("fe.conv2"):
        if z.shape[2] != height:
            raise DimensionError(f"conv2 kernel height {height} != feature map height {z.shape[2]}")
        z = ops.conv2d(z, m.params["fe.conv2.w"], m.params["fe.conv2.b"])
        z = ops.relu(_batch_norm(m, "fe.bn2", z, train))
    return z


def separable_attention(params: dict[str, Tensor], X: Tensor) -> Tensor:
    """Linear-cost attention through one latent token.

    Each token gets a scalar score; the softmax of those scores over tokens
    weights the keys into a single context vector, which gates the ReLU'd
    values elementwise before the output projection. Nothing of size n x n
    is formed.
    """
    d = params["w_k"].shape[0]
    if X.ndim != 3 or X.shape[-1] != d:
        raise DimensionError(f"separable attention expects (B, n, {d}), got {X.shape}")
    scores = ops.softmax(ops.linear(X, params["w_i"], params["b_i"]), axis=1)   # (B, n, 1)
    keys = ops.linear(X, params["w_k"], params["b_k"])                          # (B, n, d)
    context = ops.sum(ops.mul(scores, keys), axis=1, keepdims=True)             # (B, 1, d)
    values = ops.relu(ops.linear(X, params["w_v"], params["b_v"]))
    return ops.linear(ops.mul(values, context), params["w_o"], params["b_o"])


def multihead_attention(params: dict[str, Tensor], X: Tensor, heads: int,
                        return_weights: bool = False):
    B, n, d = X.shape
    if params["w_q"].shape != (d, d):
        raise DimensionError(f"attention width {params['w_q'].shape[0]} != input width {d}")
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (B, n, heads, dh)), (0, 2, 1, 3))

    q = split(ops.linear(X, params["w_q"], params["b_q"]))
    k = split(ops.linear(X, params["w_k"], params["b_k"]))
    v = split(ops.linear(X, params["w_v"], params["b_v"]))
    logits = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = ops.softmax(logits, axis=-1)
    ctx = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (B, n, d))
    out = ops.linear(ctx, params["w_o"], params["b_o"])
    return (out, weights) if return_weights else out


def unfold_patches(F: Tensor, patch: tuple[int, int]) -> Tensor:
    """(B, d, H, W) -> (B * P, N, d): P = pixels per patch, N = patches."""
    B, d, H, W = F.shape
    ph, pw = patch
    if H % ph or W % pw:
        raise DimensionError(f"patch {patch} does not tile a {H}x{W} map")
    nh, nw = H // ph, W // pw
    z = ops.reshape(F, (B, d, nh, ph, nw, pw))
    z = ops.transpose(z, (0, 3, 5, 2, 4, 1))          # B, ph, pw, nh, nw, d
    return ops.reshape(z, (B * ph * pw, nh * nw, d))


def fold_patches(z: Tensor, shape: tuple[int, int, int, int], patch: tuple[int, int]) -> Tensor:
    B, d, H, W = shape
    ph, pw = patch
    nh, nw = H // ph, W // pw
    z = ops.reshape(z, (B, ph, pw, nh, nw, d))
    z = ops.transpose(z, (0, 5, 3, 1, 4, 2))          # B, d, nh, ph, nw, pw
    return ops.reshape(z, (B, d, H, W))


def _transformer_ffn(params: dict[str, Tensor], z: Tensor, act) -> Tensor:
    return ops.linear(act(ops.linear(z, params["w1"], params["b1"])), params["w2"], params["b2"])


def mobilevit_block(m: Model, F: Tensor, block: int = 0, train: bool = False,
                    transformer=None) -> Tensor:
    """MobileViTV2 block: local conv, patch tokens through separable-attention
    transformer layers, fold back, 1x1 projection. The block input is not
    added back or concatenated.

    ``transformer`` replaces the token stage (used to test unfold/fold).
    """
    cfg = m.config
    p = f"mvit.{block}"
    C = cfg.fe2_out
    if F.ndim != 4 or F.shape[1] != C:
        raise DimensionError(f"MobileViT block expects (B, {C}, H, W), got {F.shape}")
    kh, kw = cfg.mvit_conv_kernel
    with name_scope(f"{p}.local"):
        z = ops.conv2d(F, m.params[f"{p}.local.dw.w"], padding=(kh // 2, kw // 2), groups=C)
        z = ops.silu(_batch_norm(m, f"{p}.local.bn", z, train))
        z = ops.conv2d(z, m.params[f"{p}.local.pw.w"])
    shape = z.shape
    tokens = unfold_patches(z, cfg.mvit_patch)
    if transformer is not None:
        tokens = transformer(tokens)
    else:
        for layer in range(cfg.mvit_transformer_layers):
            q = f"{p}.layer.{layer}"
            with name_scope(q):
                a = ops.layer_norm(tokens, m.params[f"{q}.ln1.gamma"], m.params[f"{q}.ln1.beta"])
                tokens = ops.add(tokens, separable_attention(_sub(m.params, f"{q}.attn"), a))
                f = ops.layer_norm(tokens, m.params[f"{q}.ln2.gamma"], m.params[f"{q}.ln2.beta"])
                tokens = ops.add(tokens, _transformer_ffn(_sub(m.params, f"{q}.ffn"), f, ops.silu))
        tokens = ops.layer_norm(tokens, m.params[f"{p}.ln.gamma"], m.params[f"{p}.ln.beta"])
    z = fold_patches(tokens, shape, cfg.mvit_patch)
    with name_scope(f"{p}.proj"):
        z = ops.conv2d(z, m.params[f"{p}.proj.w"])
        z = _batch_norm(m, f"{p}.proj.bn", z, train)
    return z


def vit_encoder(m: Model, F: Tensor) -> Tensor:
    """(B, d, H, W) map -> (B, H*W, d) tokens after the pre-norm encoder."""
    cfg = m.config
    B, d, H, W = F.shape
    tokens = ops.transpose(ops.reshape(F, (B, d, H * W)), (0, 2, 1))
    tokens = ops.add(tokens, m.params["vit.pos"])
    for layer in range(cfg.vit_layers):
        q = f"vit.layer.{layer}"
        with name_scope(q):
            a = ops.layer_norm(tokens, m.params[f"{q}.ln1.gamma"], m.params[f"{q}.ln1.beta"])
            tokens = ops.add(tokens, multihead_attention(_sub(m.params, f"{q}.attn"), a, cfg.vit_heads))
            f = ops.layer_norm(tokens, m.params[f"{q}.ln2.gamma"], m.params[f"{q}.ln2.beta"])
            tokens = ops.add(tokens, _transformer_ffn(_sub(m.params, f"{q}.mlp"), f, ops.gelu))
    return ops.layer_norm(tokens, m.params["vit.ln.gamma"], m.params["vit.ln.beta"])


def _head(m: Model, pooled: Tensor, train: bool, rng) -> Tensor:
    with name_scope("head"):
        z = ops.dropout(pooled, m.config.head_dropout, rng, train)
        y = ops.linear(z, m.params["head.w"], m.params["head.b"])
        y = ops.mul(y, Tensor(m.buffers["head.target_std"]))
        return ops.add(y, Tensor(m.buffers["head.target_mean"]))


def forward(m: Model, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """(B, channels, timesteps) EEG -> (B, out_dim) gaze positions."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    h = tcn_forward(m, x, train, rng)
    z = feature_extract(m, h, train)
    if m.arch == "student":
        for b in range(m.config.mvit_blocks):
            z = mobilevit_block(m, z, b, train)
        pooled = ops.mean(z, axis=(2, 3))
    else:
        with name_scope("vit"):
            pooled = ops.mean(vit_encoder(m, z), axis=1)
    return _head(m, pooled, train, rng)


def predict(m: Model, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode forward over a numpy array in batches, without recording."""
    from .tensor import no_grad

    outs = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(forward(m, Tensor(x[i:i + batch_size]), train=False).data)
    if not outs:
        return np.zeros((0, m.config.out_dim), dtype=F32)
    return np.concatenate(outs, axis=0)


# parameter counting ----------------------------------------------------------

COMPONENTS = ("tcn", "feature_extraction", "backbone", "head")


def _component(name: str) -> str:
    head = name.split(".", 1)[0]
    return {"tcn": "tcn", "fe": "feature_extraction", "mvit": "backbone",
            "vit": "backbone", "head": "head"}[head]


def param_count(m: Model) -> dict[str, int]:
    """Exact scalar parameter counts per component plus ``total``.
    Buffers (batch-norm statistics, output affine) are not parameters."""
    counts = dict.fromkeys(COMPONENTS, 0)
    for name, p in m.params.items():
        counts[_component(name)] += p.size
    counts["total"] = sum(counts[c] for c in COMPONENTS)
    return counts


def analytic_param_count(arch: str, cfg=None) -> dict[str, int]:
    """Closed-form count from the config alone, without allocating weights."""
    cfg = cfg or (StudentConfig() if arch == "student" else TeacherConfig())
    k = cfg.tcn_kernel
    tcn = 0
    cin = cfg.in_channels
    for cout in cfg.tcn_channels:
        tcn += (cout * cin * k + 2 * cout) + (cout * cout * k + 2 * cout)
        if cin != cout:
            tcn += cout * cin + cout
        cin = cout
    kh, kw = cfg.fe1_kernel
    fe = (cfg.fe1_out * kh * kw + cfg.fe1_out + 2 * cfg.fe1_out
          + cfg.fe2_out * cfg.fe1_out * cfg.tcn_channels[-1] + cfg.fe2_out + 2 * cfg.fe2_out)
    if arch == "student":
        C, d, e = cfg.fe2_out, cfg.mvit_dim, cfg.mvit_ffn_expansion
        ck = cfg.mvit_conv_kernel[0] * cfg.mvit_conv_kernel[1]
        layer = 2 * d + (d + 1) + 3 * (d * d + d) + 2 * d + (d * e * d + e * d) + (e * d * d + d)
        block = C * ck + 2 * C + d * C + cfg.mvit_transformer_layers * layer + 2 * d + C * d + 2 * C
        backbone = cfg.mvit_blocks * block
        width = C
    else:
        d, mlp = cfg.vit_dim, cfg.vit_mlp
        h, w = feature_map_size(cfg)
        layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * mlp + mlp) + (mlp * d + d)
        backbone = h * w * d + cfg.vit_layers * layer + 2 * d
        width = d
    head = width * cfg.out_dim + cfg.out_dim
    return {"tcn": tcn, "feature_extraction": fe, "backbone": backbone, "head": head,
            "total": tcn + fe + backbone + head}
