import math

import numpy as np
import pytest

from eegmobile import ConfigError, DimensionError, NumericError, Tape, Tensor, ops
from eegmobile.bench import distance_metric
from eegmobile.data import SyntheticSpec, generate_synthetic
from eegmobile.models import (COMPONENTS, StudentConfig, TeacherConfig, analytic_param_count, build_model,
                              build_student, build_teacher, feature_extract, fold_patches, forward,
                              mobilevit_block, multihead_attention, param_count, predict, receptive_field,
                              separable_attention, tcn_forward, tiny_student_config, tiny_teacher_config,
                              unfold_patches)
from eegmobile.train import OptimState, adam_step, set_target_stats, true_loss


@pytest.fixture(scope="module")
def default_student():
    return build_student(seed=0)


def rand(rng, *shape, scale=1.0):
    return (rng.standard_normal(shape) * scale).astype(np.float32)


# configs --------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        StudentConfig(in_channels=0)
    with pytest.raises(ConfigError):
        StudentConfig(tcn_channels=[])
    with pytest.raises(ConfigError):
        StudentConfig(out_dim=3)
    with pytest.raises(ConfigError):
        TeacherConfig(vit_heads=7)
    with pytest.raises(ConfigError):
        build_model("resnet")


# builds and shapes --------------------------------------------------------------

def test_default_student_forward_shape(default_student):
    x = rand(np.random.default_rng(0), 2, 129, 500)
    assert predict(default_student, x).shape == (2, 2)


def test_builds_are_seed_deterministic():
    cfg = tiny_student_config()
    a, b, c = build_student(cfg, seed=3), build_student(cfg, seed=3), build_student(cfg, seed=4)
    assert a.state().keys() == b.state().keys()
    assert all(a.state()[k].tobytes() == b.state()[k].tobytes() for k in a.state())
    assert any(a.state()[k].tobytes() != c.state()[k].tobytes() for k in a.params)


def test_tiny_student_is_small():
    assert param_count(build_student(tiny_student_config()))["total"] < 100_000


def test_parameters_finite_and_names_unique():
    m = build_teacher(tiny_teacher_config(), seed=1)
    names = list(m.params)
    assert len(names) == len(set(names))
    assert all(np.isfinite(p.data).all() for p in m.params.values())


# TCN -----------------------------------------------------------------------------

def test_default_tcn_shape_and_causality(default_student):
    rng = np.random.default_rng(1)
    x = rand(rng, 1, 129, 500)
    base = tcn_forward(default_student, Tensor(x)).data
    assert base.shape == (1, 256, 500)
    x[0, :, 400] += 3.0
    moved = tcn_forward(default_student, Tensor(x)).data
    assert moved[..., :400].tobytes() == base[..., :400].tobytes()


def test_tcn_receptive_field_scan():
    cfg = tiny_student_config()
    m = build_student(cfg, seed=2)
    rf = receptive_field(cfg)
    assert rf == 1 + 2 * 2 * (1 + 2 + 4) == 29
    rng = np.random.default_rng(2)
    x = rand(rng, 1, cfg.in_channels, 120)
    base = tcn_forward(m, Tensor(x)).data
    t0 = 40
    x[0, :, t0] += 1.0
    diff = np.abs(tcn_forward(m, Tensor(x)).data - base).max(axis=(0, 1))
    touched = np.flatnonzero(diff > 0)
    assert touched.min() == t0
    assert touched.max() == t0 + rf - 1


def test_tcn_rejects_wrong_channels():
    m = build_student(tiny_student_config())
    with pytest.raises(DimensionError):
        tcn_forward(m, Tensor(np.zeros((1, 64, 50), np.float32)))


# feature extraction -----------------------------------------------------------------

def test_feature_extract_default(default_student):
    h = Tensor(np.zeros((2, 256, 500), np.float32))
    z = feature_extract(default_student, h).data
    assert z.shape == (2, 768, 1, 14)
    assert np.isfinite(z).all()
    # zero input: conv1 emits its bias, so every stage is a per-channel constant
    p = {k: v.data.astype(np.float64) for k, v in default_student.params.items()}
    b = default_student.buffers

    def bn_relu(v, name):
        scale = p[f"{name}.gamma"] / np.sqrt(b[f"{name}.running_var"] + 1e-5)
        return np.maximum(0, (v - b[f"{name}.running_mean"]) * scale + p[f"{name}.beta"])

    z1 = bn_relu(p["fe.conv1.b"], "fe.bn1")                                  # (256,)
    z2 = bn_relu(p["fe.conv2.w"][..., 0].sum(axis=2) @ z1 + p["fe.conv2.b"], "fe.bn2")
    np.testing.assert_allclose(z[0, :, 0, :], np.repeat(z2[:, None], 14, axis=1), rtol=1e-4, atol=1e-5)
    assert p["fe.conv2.w"].size + p["fe.conv2.b"].size == 50_332_416


def test_feature_extract_height_mismatch():
    m = build_student(tiny_student_config())
    with pytest.raises(DimensionError):
        feature_extract(m, Tensor(np.zeros((1, 5, 500), np.float32)))


# separable attention ------------------------------------------------------------------

def sep_params(rng, d):
    p = {k: Tensor(rand(rng, d, d)) for k in ("w_k", "w_v", "w_o")}
    p["w_i"] = Tensor(rand(rng, d, 1))
    for k, n in (("b_i", 1), ("b_k", d), ("b_v", d), ("b_o", d)):
        p[k] = Tensor(rand(rng, n))
    return p


def test_separable_attention_single_token():
    rng = np.random.default_rng(3)
    p = sep_params(rng, 4)
    x = rand(rng, 1, 1, 4)
    key = x[0] @ p["w_k"].data + p["b_k"].data
    val = np.maximum(0, x[0] @ p["w_v"].data + p["b_v"].data)
    expect = (val * key) @ p["w_o"].data + p["b_o"].data
    np.testing.assert_allclose(separable_attention(p, Tensor(x)).data[0], expect, rtol=1e-5, atol=1e-5)


def test_separable_attention_direct_oracle_and_permutation():
    rng = np.random.default_rng(4)
    p = {k: v.data.astype(np.float64) for k, v in sep_params(rng, 4).items()}
    x = rand(rng, 1, 5, 4)
    s = x[0] @ p["w_i"] + p["b_i"]
    s = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    ctx = (s * (x[0] @ p["w_k"] + p["b_k"])).sum(0)
    ref = (np.maximum(0, x[0] @ p["w_v"] + p["b_v"]) * ctx) @ p["w_o"] + p["b_o"]
    pt = {k: Tensor(v.astype(np.float32)) for k, v in p.items()}
    out = separable_attention(pt, Tensor(x)).data[0]
    np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)
    perm = rng.permutation(5)
    np.testing.assert_allclose(separable_attention(pt, Tensor(x[:, perm])).data[0], out[perm], atol=1e-5)


def test_separable_attention_memory_is_linear():
    rng = np.random.default_rng(5)
    p = sep_params(rng, 8)
    for k in p:
        p[k].requires_grad = True
    peaks = []
    for n in (64, 256):
        with Tape() as tape:
            separable_attention(p, Tensor(rand(rng, 1, n, 8)))
        peaks.append(max(r.output.size for r in tape.records))
    assert peaks[1] == 4 * peaks[0]     # n*d, never n*n


# multi-head attention ---------------------------------------------------------------------

def mha_params(rng, d, identity=False):
    p = {}
    for k in ("q", "k", "v", "o"):
        p[f"w_{k}"] = Tensor(np.eye(d, dtype=np.float32) if identity else rand(rng, d, d, scale=0.5))
        p[f"b_{k}"] = Tensor(np.zeros(d, np.float32) if identity else rand(rng, d, scale=0.1))
    return p


def test_mha_single_token_returns_value():
    rng = np.random.default_rng(6)
    x = rand(rng, 1, 1, 8)
    np.testing.assert_allclose(multihead_attention(mha_params(rng, 8, identity=True), Tensor(x), 2).data, x,
                               atol=1e-6)


def test_mha_matches_naive_oracle_and_rows_sum_to_one():
    rng = np.random.default_rng(7)
    p = mha_params(rng, 8)
    x = rand(rng, 1, 6, 8)
    out, w = multihead_attention(p, Tensor(x), 2, return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-6)
    P = {k: v.data.astype(np.float64) for k, v in p.items()}
    X = x[0].astype(np.float64)
    q, k, v = (X @ P[f"w_{n}"] + P[f"b_{n}"] for n in "qkv")
    heads = []
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        rows = []
        for i in range(6):
            logits = [sum(q[i, sl] * k[j, sl]) / math.sqrt(4) for j in range(6)]
            e = np.exp(np.array(logits) - max(logits))
            a = e / e.sum()
            rows.append(sum(a[j] * v[j, sl] for j in range(6)))
        heads.append(np.array(rows))
    ref = np.concatenate(heads, axis=1) @ P["w_o"] + P["b_o"]
    np.testing.assert_allclose(out.data[0], ref, atol=1e-5)


def test_mha_dim_mismatch():
    rng = np.random.default_rng(8)
    with pytest.raises(DimensionError):
        multihead_attention(mha_params(rng, 8), Tensor(rand(rng, 1, 2, 6)), 2)


# MobileViT block -------------------------------------------------------------------------

def test_mobilevit_block_default_shape(default_student):
    F = Tensor(rand(np.random.default_rng(9), 2, 768, 1, 14))
    assert mobilevit_block(default_student, F).shape == (2, 768, 1, 14)


@pytest.mark.parametrize("patch", [(1, 1), (1, 2)])
def test_unfold_fold_round_trip(patch):
    F = Tensor(rand(np.random.default_rng(10), 2, 6, 2, 4))
    z = unfold_patches(F, patch)
    assert z.shape == (2 * patch[0] * patch[1], (2 // patch[0]) * (4 // patch[1]), 6)
    assert fold_patches(z, F.shape, patch).data.tobytes() == F.data.tobytes()


def test_mobilevit_block_identity_transformer_is_local_then_projection():
    m = build_student(tiny_student_config(), seed=5)
    F = Tensor(rand(np.random.default_rng(11), 2, 32, 1, 14))
    out = mobilevit_block(m, F, transformer=lambda z: z)
    assert out.shape == F.shape


def test_gradients_reach_every_block_parameter():
    m = build_student(tiny_student_config(), seed=6)
    m.requires_grad_(True)
    F = Tensor(rand(np.random.default_rng(12), 3, 32, 1, 14))
    with Tape() as tape:
        loss = ops.sum(ops.mul(mobilevit_block(m, F, train=True), Tensor(rand(np.random.default_rng(13), 3, 32, 1, 14))))
    tape.backward(loss)
    block = [k for k in m.params if k.startswith("mvit.0.")]
    assert block
    for k in block:
        g = m.params[k].grad
        assert g is not None and np.linalg.norm(g) > 0, k


# whole model -------------------------------------------------------------------------------

def test_eval_forward_is_pure():
    m = build_student(tiny_student_config(), seed=7)
    x = rand(np.random.default_rng(14), 3, 129, 500)
    assert predict(m, x).tobytes() == predict(m, x).tobytes()


def test_nan_input_names_the_layer():
    m = build_student(tiny_student_config(), seed=7)
    x = np.zeros((1, 129, 500), np.float32)
    x[0, 0, 0] = np.nan
    with pytest.raises(NumericError, match="tcn.0"):
        forward(m, Tensor(x))


def test_teacher_forward_shape():
    m = build_teacher(tiny_teacher_config(), seed=0)
    assert predict(m, rand(np.random.default_rng(15), 2, 129, 500)).shape == (2, 2)


def test_tiny_student_overfits_32_samples():
    d = generate_synthetic(SyntheticSpec(n_samples=32, seed=3))
    m = build_student(tiny_student_config(tcn_dropout=0.0, head_dropout=0.0), seed=0)
    set_target_stats(m, d.labels)
    m.requires_grad_(True)
    params = m.parameters()
    state = OptimState()
    err = math.inf
    for step in range(300):
        with Tape() as tape:
            loss = true_loss(forward(m, Tensor(d.eeg), train=True), d.labels)
        tape.backward(loss)
        adam_step(state, [p.data for p in params], [p.grad for p in params], 1e-3)
        m.zero_grad()
        if step % 25 == 24:
            err = distance_metric(predict(m, d.eeg), d.labels, px_to_mm=1.0)
            if err < 10:
                break
    assert err < 10


# parameter counts ----------------------------------------------------------------------------

def test_head_count():
    assert analytic_param_count("student")["head"] == 768 * 2 + 2 == 1538


def test_default_counts_against_table():
    s = analytic_param_count("student")
    t = analytic_param_count("teacher")
    assert 54.2e6 <= s["total"] <= 57.6e6
    assert 133.1e6 <= t["total"] <= 141.3e6
    assert abs(s["total"] - 55.9e6) / 55.9e6 <= 0.03
    assert abs(t["total"] - 137.2e6) / 137.2e6 <= 0.03


def test_counted_equals_analytic(default_student):
    assert param_count(default_student) == analytic_param_count("student")
    for cfg, arch in ((tiny_student_config(mvit_blocks=2, mvit_transformer_layers=2), "student"),
                      (tiny_teacher_config(), "teacher")):
        m = build_model(arch, cfg)
        counted = param_count(m)
        assert counted == analytic_param_count(arch, cfg)
        assert set(counted) == set(COMPONENTS) | {"total"}
        assert counted["total"] == sum(counted[c] for c in COMPONENTS)
