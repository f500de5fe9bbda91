"""Inference sweep timing of the default student against the default
teacher on synthetic inputs (weights are random; only time is meaningful).

    python3 scripts/latency_compare.py --n 8 --passes 10 --runs 5
"""
import argparse
import gc

from eegmobile.bench import bench_model, emit_report
from eegmobile.data import SyntheticSpec, generate_synthetic
from eegmobile.models import build_student, build_teacher


def main() -> None:
    p = argparse.ArgumentParser(description="student vs teacher latency")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--passes", type=int, default=10)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", default="latency_report.json")
    a = p.parse_args()
    data = generate_synthetic(SyntheticSpec(n_samples=a.n, seed=0))
    reports = []
    for name, build in (("EEGMobile", build_student), ("EEGViT-TCNet", build_teacher)):
        reports.append(bench_model(name, build(seed=0), data, a.passes, a.runs, a.batch_size, threads=a.threads))
        gc.collect()
    emit_report(reports, a.report)
    s, t = reports
    print(f"teacher/student time ratio {t.runtime_mean_min / s.runtime_mean_min:.2f}; {s.hardware}")


if __name__ == "__main__":
    main()
