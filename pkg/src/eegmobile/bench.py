"""Distance metric, naive baseline, inference timing and report files."""
from __future__ import annotations

import dataclasses
import json
import os
import platform
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .data import DatasetContainer
from .errors import ContractError
from .models import Model, param_count, predict

PX_TO_MM = 0.5


def distance_metric(pred: np.ndarray, target: np.ndarray, px_to_mm: float = PX_TO_MM,
                    strict: bool = False) -> float:
    """Mean Euclidean distance times ``px_to_mm``. ``strict`` gives the root of
    the mean squared distance instead."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if len(target) == 0:
        raise ContractError("distance metric of an empty set")
    if pred.shape != target.shape:
        raise ContractError(f"prediction {pred.shape} and target {target.shape} differ")
    sq = ((pred - target) ** 2).sum(axis=1)
    value = np.sqrt(sq.mean()) if strict else np.sqrt(sq).mean()
    return float(value * px_to_mm)


def rmse_eval(model: Model, data: DatasetContainer, px_to_mm: float = PX_TO_MM,
              strict: bool = False, batch_size: int = 64) -> float:
    """Eval-mode gaze error of ``model`` on ``data`` (the benchmark's "RMSE",
    a mean Euclidean distance)."""
    if data.n_samples == 0:
        raise ContractError("rmse_eval needs a nonempty dataset")
    return distance_metric(predict(model, data.eeg, batch_size), data.labels, px_to_mm, strict)


def naive_baseline(train: DatasetContainer, data: DatasetContainer | None = None,
                   px_to_mm: float = PX_TO_MM, strict: bool = False) -> float:
    """Error of always predicting the mean training label."""
    if train.n_samples == 0:
        raise ContractError("naive baseline needs training labels")
    data = train if data is None else data
    centre = train.labels.astype(np.float64).mean(axis=0)
    return distance_metric(np.broadcast_to(centre, data.labels.shape), data.labels, px_to_mm, strict)


def hardware_note(threads: int | None) -> str:
    blas = ", ".join(f"{i.get('internal_api')} x{i.get('num_threads')}" for i in threadpool_info())
    return (f"{platform.machine()} {platform.processor() or platform.system()}, "
            f"cpus={os.cpu_count()}, threads={threads if threads else 'default'}, blas=[{blas}]")


def latency_bench(model: Model, data: DatasetContainer, passes: int = 10, runs: int = 5,
                  batch_size: int = 64, threads: int | None = 1, warmup: bool = True,
                  clock: Callable[[], float] = time.perf_counter) -> dict:
    """Wall time of ``passes`` full eval-mode sweeps over ``data``, repeated
    ``runs`` times. One unmeasured sweep runs first. Only inference is timed."""
    if runs < 1:
        raise ContractError("runs must be >= 1")
    if passes < 0:
        raise ContractError("passes must be >= 0")
    seconds = []
    limiter = threadpool_limits(threads) if threads else None
    try:
        if warmup and passes > 0:
            predict(model, data.eeg, batch_size)
        for _ in range(runs):
            if passes == 0:
                seconds.append(0.0)
                continue
            start = clock()
            for _ in range(passes):
                predict(model, data.eeg, batch_size)
            seconds.append(clock() - start)
    finally:
        if limiter is not None:
            limiter.unregister()
    sec = np.asarray(seconds)
    return {
        "run_seconds": [float(s) for s in sec],
        "runtime_mean_min": float(sec.mean() / 60.0),
        "runtime_std_min": float(sec.std() / 60.0),
        "runs": runs,
        "passes": passes,
        "hardware": hardware_note(threads),
    }


@dataclass
class BenchReport:
    model: str
    params: int
    rmse_mean: float
    rmse_std: float
    runtime_mean_min: float
    runtime_std_min: float
    runs: int = 5
    passes: int = 10
    hardware: str = ""

    def __post_init__(self):
        if self.runs < 1:
            raise ContractError("runs must be >= 1")
        if self.rmse_std < 0 or self.runtime_std_min < 0 or self.runtime_mean_min < 0:
            raise ContractError("std and runtime must be nonnegative")


REPORT_FIELDS = tuple(f.name for f in dataclasses.fields(BenchReport))


def bench_model(name: str, model: Model, data: DatasetContainer, passes: int = 10, runs: int = 5,
                batch_size: int = 64, px_to_mm: float = PX_TO_MM, threads: int | None = 1,
                rmse_values: list[float] | None = None) -> BenchReport:
    """Full report for one model. ``rmse_values`` lets callers pool errors
    from several trained instances; by default the one model is evaluated."""
    if rmse_values is None:
        rmse_values = [rmse_eval(model, data, px_to_mm, batch_size=batch_size)]
    timing = latency_bench(model, data, passes, runs, batch_size, threads)
    rv = np.asarray(rmse_values, dtype=np.float64)
    return BenchReport(name, param_count(model)["total"], float(rv.mean()), float(rv.std()),
                       timing["runtime_mean_min"], timing["runtime_std_min"], runs, passes,
                       timing["hardware"])


def comparison_table(reports: list[BenchReport]) -> str:
    """Aligned text table, fastest model first."""
    rows = sorted(reports, key=lambda r: r.runtime_mean_min)
    header = ("Model", "RMSE", "Runtime (min)", "Params (M)")
    body = [(r.model, f"{r.rmse_mean:.1f} ± {r.rmse_std:.1f}",
             f"{r.runtime_mean_min:.4f} ± {r.runtime_std_min:.4f}", f"{r.params / 1e6:.1f} M")
            for r in rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    fmt = "| " + " | ".join(f"{{:<{w}}}" for w in widths) + " |"
    lines = [fmt.format(*header), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines += [fmt.format(*row) for row in body]
    return "\n".join(lines)


def emit_report(reports: BenchReport | list[BenchReport], path, echo: bool = True) -> str:
    """Write reports as a JSON list (fixed key order) and return the
    comparison table, also printed unless ``echo`` is false."""
    if isinstance(reports, BenchReport):
        reports = [reports]
    payload = [{k: getattr(r, k) for k in REPORT_FIELDS} for r in reports]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    table = comparison_table(reports)
    if echo:
        print(table)
    return table


def read_report(path) -> list[BenchReport]:
    with open(path) as fh:
        return [BenchReport(**rec) for rec in json.load(fh)]
