"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run with pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py`` to print only the criterion lines.
Distances are in pixels (px_to_mm=1) throughout.
"""
from __future__ import annotations

import inspect
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from eegmobile import Tensor, no_grad
from eegmobile.bench import distance_metric, latency_bench, naive_baseline
from eegmobile.checkpoint import save_model
from eegmobile.data import (DatasetContainer, SplitSpec, SyntheticSpec, filter_valid_labels, generate_synthetic,
                            split)
from eegmobile.models import (StudentConfig, TeacherConfig, analytic_param_count, build_student, build_teacher,
                              multihead_attention, param_count, predict, separable_attention, tcn_forward,
                              tiny_student_config, tiny_teacher_config)
from eegmobile.train import KDConfig, distill_loss, fit, kd_loss, true_loss

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def within(value, target, rel):
    return abs(value - target) <= rel * target


# 1 ----------------------------------------------------------------------------------------

def test_c1_parameter_counts():
    s = build_student(StudentConfig(), seed=0)
    counted_s = param_count(s)
    conv2 = s.params["fe.conv2.w"].size + s.params["fe.conv2.b"].size
    del s
    t_total = param_count(build_teacher(TeacherConfig(), seed=0))["total"]
    ok = (within(counted_s["total"], 55.9e6, 0.03) and conv2 == 50_332_416
          and within(t_total, 137.2e6, 0.03)
          and counted_s == analytic_param_count("student")
          and t_total == analytic_param_count("teacher")["total"])
    record(1, ok, f"student {counted_s['total']:,} (target 55.9M +-3%), fe conv2 {conv2:,} "
                  f"(exact 50,332,416), teacher {t_total:,} (target 137.2M +-3%)")


# 2 ----------------------------------------------------------------------------------------

def test_c2_gradient_checks():
    from gradprobe import layer_error
    from layer_cases import LAYER_CASES
    start = time.perf_counter()
    worst, failures = 0.0, []
    for name in sorted(LAYER_CASES):
        for seed in range(5):
            err = layer_error(LAYER_CASES[name], seed)
            worst = max(worst, err)
            if not err < 1e-2:
                failures.append(f"{name}/{seed}={err:.2e}")
    elapsed = time.perf_counter() - start
    record(2, not failures and elapsed < 120,
           f"{len(LAYER_CASES)} layer cases x 5 seeds, max rel err {worst:.2e} (< 1e-2), {elapsed:.1f}s"
           + (f"; failing {failures}" if failures else ""))


# 3 ----------------------------------------------------------------------------------------

def _attention_params(rng, d):
    def w(*shape):
        return Tensor((rng.standard_normal(shape) * 0.1).astype(np.float32))
    sep = {"w_i": w(d, 1), "b_i": w(1), "w_k": w(d, d), "b_k": w(d), "w_v": w(d, d), "b_v": w(d),
           "w_o": w(d, d), "b_o": w(d)}
    quad = {f"{p}_{k}": w(d, d) if p == "w" else w(d) for k in "qkvo" for p in ("w", "b")}
    return sep, quad


def _best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def test_c3_attention_scaling():
    rng = np.random.default_rng(0)
    d = 64
    sep, quad = _attention_params(rng, d)
    times = {}
    with threadpool_limits(1), no_grad():
        for n in (1024, 4096):
            x = Tensor(rng.standard_normal((1, n, d)).astype(np.float32))
            times[n] = (_best_time(lambda: separable_attention(sep, x), 9),
                        _best_time(lambda: multihead_attention(quad, x, 1), 3))
    sep_ratio = times[4096][0] / times[1024][0]
    quad_ratio = times[4096][1] / times[1024][1]
    record(3, sep_ratio <= 6 and quad_ratio >= 12,
           f"separable t(4096)/t(1024) = {sep_ratio:.2f} (<= 6), quadratic reference = {quad_ratio:.2f} (>= 12)")


# 4 ----------------------------------------------------------------------------------------

def test_c4_causality_probes():
    rng = np.random.default_rng(4)
    model = build_student(StudentConfig(), seed=4)
    probes, T = 100, 500
    base_x = rng.standard_normal((4, 129, T)).astype(np.float32)
    samples = rng.integers(0, 4, probes)
    times = rng.integers(1, T, probes)
    x = base_x[samples].copy()
    x[np.arange(probes), :, times] += rng.standard_normal((probes, 129)).astype(np.float32) * 3
    violations = 0
    with threadpool_limits(1), no_grad():
        base = tcn_forward(model, Tensor(base_x)).data
        for lo in range(0, probes, 25):
            moved = tcn_forward(model, Tensor(x[lo:lo + 25])).data
            for j in range(moved.shape[0]):
                i = lo + j
                t = times[i]
                if moved[j, :, :t].tobytes() != base[samples[i], :, :t].tobytes():
                    violations += 1
    record(4, violations == 0, f"{probes} random (sample, t) probes on the default TCN, {violations} changed an "
                               "output at times < t")


# 5 ----------------------------------------------------------------------------------------

def test_c5_kd_contract():
    rng = np.random.default_rng(5)
    worst_self = 0.0
    for T in (0.5, 1.0, 4.0, 20.0):
        x = (rng.standard_normal((16, 2)) * 5).astype(np.float32)
        worst_self = max(worst_self, abs(distill_loss(Tensor(x), x, T).item()))
    s, t, y = (rng.standard_normal((8, 2)).astype(np.float32) for _ in range(3))
    S = Tensor(s)
    ends = (kd_loss(S, t, y, KDConfig(lam=0.0)).item() == true_loss(S, y).item()
            and kd_loss(S, t, y, KDConfig(lam=1.0)).item() == distill_loss(S, t, 20.0).item())
    hand = distill_loss(Tensor(np.zeros((1, 2), np.float32)), np.array([[2.0, 0.0]], np.float32), 1.0).item()
    ok = worst_self == 0.0 and ends and abs(hand - 0.3278) <= 5e-4
    record(5, ok, f"max |distill(x,x,T)| = {worst_self:.1e}, lambda endpoints exact = {ends}, "
                  f"hand example = {hand:.5f} (0.3278 +- 5e-4)")


# 6 and 9 ----------------------------------------------------------------------------------

def _distill_run(teacher, train, val, tmp_path, tag):
    student = build_student(tiny_student_config(), seed=7)
    history = fit(student, teacher, train, val, KDConfig(lam=0.9, temperature=20.0, epochs=15, seed=7))
    path = tmp_path / f"{tag}.ckpt"
    save_model(student, path)
    return student, history, path.read_bytes()


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("desk")
    with threadpool_limits(1):
        start = time.perf_counter()
        data = filter_valid_labels(generate_synthetic(SyntheticSpec(n_samples=2048, seed=7)))
        train, val, _ = split(data, SplitSpec(seed=7))
        teacher = build_teacher(tiny_teacher_config(), seed=7)
        fit(teacher, None, train, val, KDConfig(lam=0.0, epochs=15, seed=7))
        plain = build_student(tiny_student_config(), seed=7)
        fit(plain, None, train, val, KDConfig(lam=0.0, epochs=15, seed=7))
        kd_model, kd_hist, kd_bytes = _distill_run(teacher, train, val, tmp, "kd_a")
        elapsed = time.perf_counter() - start
        _, kd_hist_b, kd_bytes_b = _distill_run(teacher, train, val, tmp, "kd_b")

    def dist(m):
        return distance_metric(predict(m, val.eeg), val.labels, px_to_mm=1.0)
    return {"naive": naive_baseline(train, val, px_to_mm=1.0), "teacher": dist(teacher), "plain": dist(plain),
            "kd": dist(kd_model), "elapsed": elapsed, "runs": ((kd_hist, kd_bytes), (kd_hist_b, kd_bytes_b))}


@pytest.mark.slow
def test_c6_desk_distillation(desk):
    naive, teacher, plain, kd = desk["naive"], desk["teacher"], desk["plain"], desk["kd"]
    ok = teacher < naive and kd < naive and kd <= 1.05 * plain and desk["elapsed"] < 600
    record(6, ok, f"val distance px: naive {naive:.1f}, teacher {teacher:.1f}, student lambda=0 {plain:.1f}, "
                  f"student lambda=0.9 T=20 {kd:.1f} (<= {1.05 * plain:.1f}), {desk['elapsed']:.0f}s single-threaded")


# 7 ----------------------------------------------------------------------------------------

def test_c7_latency_direction():
    data = generate_synthetic(SyntheticSpec(n_samples=4, seed=0))
    student = build_student(StudentConfig(), seed=0)
    s = latency_bench(student, data, batch_size=4)
    del student
    teacher = build_teacher(TeacherConfig(), seed=0)
    t = latency_bench(teacher, data, batch_size=4)
    ratio = t["runtime_mean_min"] / s["runtime_mean_min"]
    record(7, ratio >= 1.1, f"teacher/student sweep time = {ratio:.2f} (>= 1.1) at n=4, batch 4, "
                            f"{s['passes']} passes x {s['runs']} runs; {s['hardware']}")


# 8 ----------------------------------------------------------------------------------------

def test_c8_protocol():
    n = 1000
    d = DatasetContainer(np.zeros((n, 1, 1), np.float32),
                         np.random.default_rng(8).uniform(0, 1, (n, 2)).astype(np.float32) * [800, 600])
    sizes = tuple(p.n_samples for p in split(d, SplitSpec(seed=0)))
    edge = DatasetContainer(np.zeros((6, 1, 1), np.float32),
                            np.array([[0, 0], [800, 600], [800.5, 10], [-1, 10], [10, 601], [400, 300]],
                                     np.float32))
    kept = filter_valid_labels(edge).labels.tolist()
    defaults = inspect.signature(latency_bench).parameters
    protocol = (defaults["passes"].default, defaults["runs"].default)
    ok = sizes == (700, 150, 150) and kept == [[0, 0], [800, 600], [400, 300]] and protocol == (10, 5)
    record(8, ok, f"split {sizes}, out-of-screen labels dropped ({6 - len(kept)} of 6), "
                  f"bench passes/runs = {protocol}, reports mean +- std over runs")


# 9 ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_c9_determinism(desk):
    (h1, b1), (h2, b2) = desk["runs"]
    same_hist, same_ckpt = h1 == h2, b1 == b2
    record(9, same_hist and same_ckpt, f"two seeded distillation runs: histories identical = {same_hist}, "
                                       f"checkpoints byte-identical = {same_ckpt} ({len(b1):,} bytes)")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
