"""Command-line front end.

    eegmobile gen-data --n 512 --seed 7 --out data.eegt
    eegmobile params --arch student
    eegmobile train-teacher --data data.eegt --out-dir runs/teacher
    eegmobile distill --teacher runs/teacher/teacher.ckpt --data data.eegt --lambda 0.9 --temperature 20
    eegmobile eval --model runs/distill/student.ckpt --data data.eegt
    eegmobile bench --model runs/distill/student.ckpt --data data.eegt --passes 10 --runs 5

Configuration comes from an optional JSON file with sections ``student``,
``teacher``, ``kd``, ``split`` and ``synthetic``, then ``--set section.key=value``
overrides, then the dedicated flags. Every command that writes files also
writes ``resolved_config.json`` next to them.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric
error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import PX_TO_MM, bench_model, emit_report, naive_baseline, rmse_eval
from .checkpoint import load_model, save_model
from .data import SplitSpec, SyntheticSpec, filter_valid_labels, generate_synthetic, read_container, split, write_container
from .errors import ConfigError
from .models import (StudentConfig, TeacherConfig, analytic_param_count, build_model, config_to_dict,
                     tiny_student_config, tiny_teacher_config)
from .train import KDConfig, fit, write_history

SECTIONS = {
    "student": StudentConfig,
    "teacher": TeacherConfig,
    "kd": KDConfig,
    "split": SplitSpec,
    "synthetic": SyntheticSpec,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path: str | None, overrides: list[str], preset: str = "default") -> dict[str, dict]:
    """Merge preset defaults, the config file and ``section.key=value``
    overrides into plain dicts, rejecting unknown sections and keys."""
    base_student = tiny_student_config() if preset == "tiny" else StudentConfig()
    base_teacher = tiny_teacher_config() if preset == "tiny" else TeacherConfig()
    resolved = {
        "student": config_to_dict(base_student),
        "teacher": config_to_dict(base_teacher),
        "kd": dataclasses.asdict(KDConfig()),
        "split": dataclasses.asdict(SplitSpec()),
        "synthetic": dataclasses.asdict(SyntheticSpec()),
    }
    layers: list[tuple[str, str, object]] = []
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}") from e
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        for section, values in doc.items():
            if not isinstance(values, dict):
                raise UsageError(f"config section {section!r} must be an object")
            layers += [(section, k, v) for k, v in values.items()]
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"override {item!r} must look like section.key=value")
        layers.append((section, name, _parse_value(value)))
    for section, key, value in layers:
        if section not in SECTIONS:
            raise UsageError(f"unknown config section {section!r}")
        if key not in resolved[section]:
            raise UsageError(f"unknown key {section}.{key}")
        resolved[section][key] = value
    return resolved


def build_configs(resolved: dict[str, dict]) -> dict:
    try:
        return {name: cls(**resolved[name]) for name, cls in SECTIONS.items()}
    except (ConfigError, TypeError) as e:
        raise UsageError(str(e)) from e


def _write_resolved(out_dir: Path, command: str, argv: list[str], resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "argv": argv, "version": __version__, "config": resolved}
    (out_dir / "resolved_config.json").write_text(json.dumps(record, indent=2) + "\n")


def _load_splits(path: str, spec: SplitSpec):
    return split(filter_valid_labels(read_container(path)), spec)


def _add_common(p: argparse.ArgumentParser, out_dir: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--preset", choices=("default", "tiny"), default="default",
                   help="architecture size to start from")
    if out_dir:
        p.add_argument("--out-dir", default="runs/out")


def _kd_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eegmobile", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic EEGT dataset")
    _add_common(p, out_dir=False)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--signal-gain", type=float)
    p.add_argument("--participants", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-teacher", help="fine-tune the teacher on true loss")
    _add_common(p)
    p.add_argument("--data", required=True)
    _kd_flags(p)

    p = sub.add_parser("distill", help="train the student, distilling from a teacher")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", help="teacher checkpoint; omit for a lambda=0 run")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--temperature", type=float)
    _kd_flags(p)

    p = sub.add_parser("eval", help="gaze error of a checkpoint on a split")
    _add_common(p, out_dir=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--px-to-mm", type=float, default=PX_TO_MM)
    p.add_argument("--strict-rms", action="store_true", help="root-mean-square distance instead of mean")

    p = sub.add_parser("params", help="parameter breakdown of an architecture")
    _add_common(p, out_dir=False)
    p.add_argument("--arch", choices=("student", "teacher"), required=True)

    p = sub.add_parser("bench", help="inference timing and report")
    _add_common(p)
    p.add_argument("--model", action="append", required=True, help="checkpoint; repeat to compare")
    p.add_argument("--data", help="EEGT file; default is synthetic data of --n samples")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--passes", type=int, default=10)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--px-to-mm", type=float, default=PX_TO_MM)
    p.add_argument("--report", help="report path (default OUT_DIR/report.json)")
    return parser


def _apply_flags(resolved: dict, args: argparse.Namespace) -> None:
    kd = resolved["kd"]
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
                      ("seed", "seed"), ("lam", "lam"), ("temperature", "temperature")):
        value = getattr(args, flag, None)
        if value is not None:
            kd[key] = value


def cmd_gen_data(args, resolved, argv) -> int:
    syn = resolved["synthetic"]
    for flag, key in (("n", "n_samples"), ("seed", "seed"), ("noise_std", "noise_std"),
                      ("signal_gain", "signal_gain"), ("participants", "n_participants")):
        value = getattr(args, flag)
        if value is not None:
            syn[key] = value
    spec = build_configs(resolved)["synthetic"]
    d = generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_container(out, d)
    _write_resolved(out.parent, "gen-data", argv, {"synthetic": resolved["synthetic"]})
    print(f"wrote {d.n_samples} samples ({d.channels} x {d.timesteps}) to {out}")
    return 0


def cmd_params(args, resolved, argv) -> int:
    cfgs = build_configs(resolved)
    counts = analytic_param_count(args.arch, cfgs[args.arch])
    width = max(len(k) for k in counts)
    for k, v in counts.items():
        print(f"{k:<{width}}  {v:>12,d}  ({v / 1e6:.2f} M)")
    return 0


def _train(args, resolved, argv, arch: str) -> int:
    _apply_flags(resolved, args)
    if arch == "teacher":
        resolved["kd"]["lam"] = 0.0
    cfgs = build_configs(resolved)
    kd: KDConfig = cfgs["kd"]
    teacher = None
    if arch == "student" and kd.lam > 0:
        if not args.teacher:
            raise UsageError("--teacher is required when lambda > 0")
        teacher = load_model(args.teacher)
        if teacher.arch != "teacher":
            raise UsageError(f"{args.teacher} holds a {teacher.arch}, not a teacher")
    out_dir = Path(args.out_dir)
    _write_resolved(out_dir, args.command, argv, resolved)
    train, val, _ = _load_splits(args.data, cfgs["split"])
    model = build_model(arch, cfgs[arch], seed=kd.seed)
    history = fit(model, teacher, train, val, kd)
    write_history(out_dir / "history.jsonl", history)
    ckpt = out_dir / f"{arch}.ckpt"
    save_model(model, ckpt)
    best = min(r["val_rmse"] for r in history)
    print(f"{arch}: best validation distance {best:.2f} px "
          f"(naive {naive_baseline(train, val, px_to_mm=1.0):.2f} px); saved {ckpt}")
    return 0


def cmd_eval(args, resolved, argv) -> int:
    cfgs = build_configs(resolved)
    model = load_model(args.model)
    d = filter_valid_labels(read_container(args.data))
    parts = dict(zip(("train", "val", "test"), split(d, cfgs["split"])))
    data = d if args.split == "all" else parts[args.split]
    value = rmse_eval(model, data, args.px_to_mm, strict=args.strict_rms)
    base = naive_baseline(parts["train"], data, args.px_to_mm, strict=args.strict_rms)
    print(json.dumps({"model": args.model, "split": args.split, "n": data.n_samples,
                      "rmse": value, "naive": base, "px_to_mm": args.px_to_mm}))
    return 0


def cmd_bench(args, resolved, argv) -> int:
    cfgs = build_configs(resolved)
    if args.data:
        data = filter_valid_labels(read_container(args.data))
    else:
        spec = dataclasses.replace(cfgs["synthetic"], n_samples=args.n)
        data = generate_synthetic(spec)
    out_dir = Path(args.out_dir)
    _write_resolved(out_dir, "bench", argv, resolved)
    reports = []
    for path in args.model:
        model = load_model(path)
        reports.append(bench_model(Path(path).stem, model, data, args.passes, args.runs,
                                   args.batch_size, args.px_to_mm, args.threads))
    report_path = Path(args.report) if args.report else out_dir / "report.json"
    emit_report(reports, report_path)
    print(f"report written to {report_path}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "params": cmd_params,
    "train-teacher": lambda a, r, v: _train(a, r, v, "teacher"),
    "distill": lambda a, r, v: _train(a, r, v, "student"),
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolved = resolve_config(args.config, args.overrides, args.preset)
        if args.command not in ("gen-data", "params"):
            _apply_flags(resolved, args)
            build_configs(resolved)
        return COMMANDS[args.command](args, resolved, argv)
    except UsageError as e:
        print(f"eegmobile {args.command}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"eegmobile {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
