"""Command-line front end.

Subcommands:
  analyze   duration/schedule curve CSVs for configured models
  simulate  run an experiment from a JSON config
  detect    run passive wardens over stored JSON-lines traces
  mos       MOS-vs-loss curve family CSV

Exit codes: 0 success, 2 configuration error, 3 quality floor infeasible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import harness, warden
from .durations import WEIBULL_CV_SWEEP
from .harness import ConfigError, ExperimentConfig, model_from_spec, _model_label
from .quality import MosParams, QualityInfeasibleError, SKYPE_MOS_PARAMS
from .rtp import TraceEvent, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_QUALITY = 3


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _default_model_specs() -> list[dict]:
    return [{"kind": "weibull", "k": k, "lambda": lam} for k, lam, _ in WEIBULL_CV_SWEEP]


def _cmd_analyze(args) -> int:
    raw = _load_config(args.config)
    specs = raw.get("models", _default_model_specs())
    s_bits = float(raw.get("s_bits", 1000))
    dur = raw.get("duration", {})
    sch = raw.get("schedule", {})
    t_max = float(dur.get("t_max", 300.0))
    step = float(dur.get("step", 1.0))
    sch_t_max = float(sch.get("t_max", 300.0))
    sch_step = float(sch.get("step", 0.1))
    mode = sch.get("mode", "distribution")
    ir_cap = float(sch["ir_cap"]) if sch.get("ir_cap") is not None else math.inf
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        model = model_from_spec(spec)
        label = _model_label(spec)
        ts = np.arange(0.0, t_max + step / 2, step)
        try:
            harness.write_duration_curves(model, ts, out / f"duration_{label}.csv")
        except ValueError as exc:
            raise ConfigError(f"duration grid for {label}: {exc}") from exc
        harness.write_schedule_curve(
            model,
            s_bits,
            out / f"schedule_{label}.csv",
            t_end=sch_t_max,
            step_s=sch_step,
            mode=mode,
            ir_cap=ir_cap,
        )
    print(f"wrote {2 * len(specs)} curve files under {out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.config is None:
        raise ConfigError("simulate requires --config")
    raw = _load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(raw)
    report = harness.run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        harness.write_calls_jsonl(out / "calls.jsonl", report.calls)
    else:
        harness.write_calls_csv(out / "calls.csv", report.calls)
    harness.write_summary_json(out / "summary.json", report.aggregate)
    if report.traces is not None:
        events = [ev for trace in report.traces for ev in trace]
        write_trace(out / "traces.jsonl", events)
    print(f"simulated {cfg.n_calls} calls; reports under {out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    raw = _load_config(args.config)
    trace_path = raw.get("traces") or args.traces
    if trace_path is None:
        raise ConfigError("detect needs a traces path (config key 'traces' or --traces)")
    try:
        events = _read_events(trace_path)
    except OSError as exc:
        raise ConfigError(f"cannot read traces: {exc}") from exc
    per_call = defaultdict(list)
    for ev in events:
        per_call[ev.ssrc].append(ev)
    traces = [per_call[k] for k in sorted(per_call)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"n_traces": len(traces)}

    passive = raw.get("passive", {"threshold": 0.02})
    scan = warden.passive_loss_scan(
        traces,
        threshold=passive.get("threshold"),
        sigma=passive.get("sigma"),
    )
    if args.format == "json":
        with open(out / "verdicts.jsonl", "w") as fh:
            for rec in scan.records:
                fh.write(
                    json.dumps(
                        {
                            "ssrc": rec.ssrc,
                            "loss_ratio": rec.loss_ratio,
                            "duration_s": rec.duration_s,
                            "flagged": rec.flagged,
                        },
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    else:
        warden.write_verdict_csv(out / "verdicts.csv", scan.records)
    summary["passive"] = {
        "threshold": scan.threshold,
        "flagged": sum(r.flagged for r in scan.records),
        "warnings": list(scan.warnings),
    }

    dt = raw.get("duration_test")
    if dt:
        model = model_from_spec(dt["model"])
        durations = [warden.loss_stats(tr).duration_s for tr in traces]
        fit = warden.duration_fit_test(durations, model, alpha=float(dt.get("alpha", 0.05)))
        summary["duration_test"] = {
            "statistic": fit.statistic,
            "p_value": fit.p_value,
            "rejected": fit.rejected,
        }

    with open(out / "detect_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"scanned {len(traces)} call traces; verdicts under {out}")
    return EXIT_OK


def _read_events(path) -> list[TraceEvent]:
    with open(path) as fh:
        return [TraceEvent.from_json(line) for line in fh if line.strip()]


def _cmd_mos(args) -> int:
    raw = _load_config(args.config)
    mp = raw.get("mos", {})
    params = MosParams(
        alpha=float(mp.get("alpha", SKYPE_MOS_PARAMS.alpha)),
        beta=float(mp.get("beta", SKYPE_MOS_PARAMS.beta)),
        gamma=float(mp.get("gamma", SKYPE_MOS_PARAMS.gamma)),
    )
    grid = raw.get("p_loss", {})
    p_losses = np.linspace(
        float(grid.get("start", 0.0)),
        float(grid.get("stop", 0.30)),
        int(grid.get("num", 61)),
    )
    p_lacks = raw.get("p_lack", [0.0, 0.005, 0.01, 0.02, 0.05])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_mos_curves(params, None, p_losses, p_lacks, out / "mos_curves.csv")
    print(f"wrote MOS family ({len(p_lacks)} curves) under {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lacklab",
        description="Laboratory for the delayed-packet VoIP covert channel",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("analyze", _cmd_analyze, "emit duration/schedule curve CSVs"),
        ("simulate", _cmd_simulate, "run an experiment from a JSON config"),
        ("detect", _cmd_detect, "run passive wardens over stored traces"),
        ("mos", _cmd_mos, "emit the MOS-vs-loss curve family"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", metavar="PATH", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "detect":
            p.add_argument("--traces", metavar="PATH", default=None, help="JSON-lines trace file")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QualityInfeasibleError as exc:
        print(f"quality floor infeasible: {exc}", file=sys.stderr)
        return EXIT_QUALITY


if __name__ == "__main__":
    sys.exit(main())
