"""Command line: ``simulate``, ``sweep`` and ``verify``.

Exit codes: 0 success, 1 run or check failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, RULE_KINDS, config_from_dict, parse_config
from .engine import RoundRecord, run_simulation

CSV_HEADER = ["round", "true_m", "estimated_m", "selected_count", "filtered_malicious",
              "filtered_benign", "train_loss", "eval_accuracy", "warnings"]
SWEEP_PARAMS = ("alpha_q", "rule", "attack", "ratio_mode", "gamma", "m_tilde_override")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (set, frozenset)):
        return ";".join(sorted(value))
    return str(value)


def record_row(rec: RoundRecord) -> list:
    return [_cell(getattr(rec, name)) for name in CSV_HEADER]


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow(record_row(rec))
    return buf.getvalue()


def record_dict(rec: RoundRecord) -> dict:
    d = {name: getattr(rec, name) for name in CSV_HEADER}
    d["warnings"] = sorted(rec.warnings)
    return d


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_run(cfg: ExperimentConfig, out_dir: Path) -> list:
    """Run one simulation and write ``metrics.csv`` and ``summary.json`` into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    records = run_simulation(cfg)
    elapsed = time.perf_counter() - start
    (out_dir / "metrics.csv").write_text(records_to_csv(records))
    summary = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "build_id": build_id(),
        "eval_metric": "param_error" if cfg.task.kind == "gaussian_mean" else "accuracy",
        "rounds": len(records),
        "final_record": record_dict(records[-1]) if records else None,
        "wall_clock_seconds": elapsed,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return records


def _load(config_path, seed=None, out=None) -> ExperimentConfig:
    cfg = parse_config(config_path)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.output_dir = str(out)
    return cfg.validate()


def cmd_simulate(config_path, seed_override=None, out_dir=None) -> int:
    try:
        cfg = _load(config_path, seed_override, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(cfg.to_json())
    try:
        records = write_run(cfg, Path(cfg.output_dir))
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if records:
        print("final:", json.dumps(record_dict(records[-1]), sort_keys=True))
    return 0


def _sweep_value(param: str, raw: str):
    raw = raw.strip()
    if param in ("alpha_q", "gamma"):
        return float(raw)
    if param == "m_tilde_override":
        return None if raw in ("auto", "none", "") else int(raw)
    if param == "rule" and raw not in RULE_KINDS:
        raise ConfigError(f"rule: unknown rule {raw!r}")
    return raw


def apply_sweep_value(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    cfg = copy.deepcopy(cfg)
    if param == "alpha_q":
        cfg.attack.alpha_q = value
    elif param == "rule":
        cfg.rule.kind = value
    elif param == "attack":
        cfg.attack.kind = value
    elif param == "ratio_mode":
        cfg.population.ratio_mode = value
    elif param == "gamma":
        cfg.rule.gamma = value
    elif param == "m_tilde_override":
        cfg.rule.m_tilde_override = value
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    return cfg.validate()


def _sweep_job(args):
    cfg_dict, sub = args
    cfg = config_from_dict(cfg_dict)
    return write_run(cfg, Path(sub))


def cmd_sweep(config_path, param, values, out_dir) -> int:
    try:
        if param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
        base = _load(config_path, out=out_dir)
        raw_values = [v for v in values.split(",")] if isinstance(values, str) else list(values)
        cfgs = []
        for raw in raw_values:
            cfg = apply_sweep_value(base, param, _sweep_value(param, str(raw)))
            cfg.output_dir = str(Path(out_dir) / f"{param}={str(raw).strip()}")
            cfgs.append((str(raw).strip(), cfg))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    jobs = [(cfg.to_dict(), cfg.output_dir) for _, cfg in cfgs]
    workers = max(1, int(os.environ.get("FEDRA_SIM_THREADS", "1") or 1))
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sweep_job, jobs))
        else:
            results = [_sweep_job(j) for j in jobs]
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1

    Path(out_dir).mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "seed"] + CSV_HEADER)
    for (raw, cfg), records in zip(cfgs, results):
        row = record_row(records[-1]) if records else [""] * len(CSV_HEADER)
        w.writerow([param, raw, cfg.seed] + row)
    (Path(out_dir) / "sweep.csv").write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


def cmd_verify(report_path=None, quick=False) -> int:
    from .verify import run_all_checks

    checks = run_all_checks(quick=quick)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  value={c.value:.6g}  bound={c.bound:.6g}"
              + (f"  {c.detail}" if c.detail else ""))
    ok = all(c.passed for c in checks)
    if report_path:
        report = {"passed": ok, "build_id": build_id(), "checks": [c.as_dict() for c in checks]}
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(json.dumps(report, indent=2, default=float) + "\n")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedra-sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="one sub-run per parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated list")
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--report", default="verify_report.json")
    p.add_argument("--quick", action="store_true", help="fewer Monte-Carlo trials")

    args = parser.parse_args(argv)
    if args.command == "simulate":
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            parser.error("--seed must be an unsigned 64-bit integer")
        return cmd_simulate(args.config, args.seed, args.out)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.param, args.values, args.out)
    return cmd_verify(args.report, args.quick)


if __name__ == "__main__":
    sys.exit(main())
