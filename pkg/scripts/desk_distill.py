"""Desk-scale distillation on synthetic data: tiny teacher, plain student,
distilled student. Prints per-epoch validation distance (pixels) and writes
histories plus a summary JSON to --out-dir.

    python3 scripts/desk_distill.py --n 2048 --epochs 15 --seed 7
"""
from __future__ import annotations

import argparse
import json
import time
from dataclasses import dataclass
from pathlib import Path

from threadpoolctl import threadpool_limits

from eegmobile.bench import distance_metric, naive_baseline, rmse_eval
from eegmobile.data import SplitSpec, SyntheticSpec, filter_valid_labels, generate_synthetic, ridge_fit_predict, split
from eegmobile.models import build_student, build_teacher, tiny_student_config, tiny_teacher_config
from eegmobile.train import KDConfig, fit, write_history


@dataclass
class DeskConfig:
    n: int = 2048
    seed: int = 7
    epochs: int = 15
    lam: float = 0.9
    temperature: float = 20.0
    threads: int = 1
    out_dir: str = "runs/desk"


def parse() -> DeskConfig:
    cfg = DeskConfig()
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, value in vars(cfg).items():
        p.add_argument("--" + name.replace("_", "-"), type=type(value), default=value)
    return DeskConfig(**vars(p.parse_args()))


def main() -> None:
    cfg = parse()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    data = filter_valid_labels(generate_synthetic(SyntheticSpec(n_samples=cfg.n, seed=cfg.seed)))
    train, val, _ = split(data, SplitSpec(seed=cfg.seed))
    summary = {"config": vars(cfg),
               "naive_px": naive_baseline(train, val, px_to_mm=1.0),
               "ridge_px": distance_metric(ridge_fit_predict(train, val), val.labels, px_to_mm=1.0)}
    print(f"naive {summary['naive_px']:.1f} px, ridge oracle {summary['ridge_px']:.1f} px")

    runs = [("teacher", lambda: build_teacher(tiny_teacher_config(), seed=cfg.seed), 0.0),
            ("student_lambda0", lambda: build_student(tiny_student_config(), seed=cfg.seed), 0.0),
            ("student_kd", lambda: build_student(tiny_student_config(), seed=cfg.seed), cfg.lam)]
    teacher = None
    with threadpool_limits(cfg.threads):
        for name, make, lam in runs:
            t0 = time.perf_counter()
            model = make()
            kd = KDConfig(lam=lam, temperature=cfg.temperature, epochs=cfg.epochs, seed=cfg.seed)
            hist = fit(model, teacher if lam > 0 else None, train, val, kd)
            write_history(out / f"{name}.jsonl", hist)
            summary[f"{name}_px"] = rmse_eval(model, val, px_to_mm=1.0)
            print(f"{name:16s} {time.perf_counter() - t0:6.1f}s  val px per epoch: "
                  + " ".join(f"{r['val_rmse']:.1f}" for r in hist))
            if name == "teacher":
                teacher = model
    summary["seconds"] = time.perf_counter() - start
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"kd / lambda0 = {summary['student_kd_px'] / summary['student_lambda0_px']:.3f}, "
          f"total {summary['seconds']:.0f}s")


if __name__ == "__main__":
    main()
