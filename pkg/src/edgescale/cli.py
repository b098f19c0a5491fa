"""Command-line entry points: scenario runs, model validation, planner benchmarks.

Subcommands:
  run           simulate a scenario file, write requests.csv/epochs.csv/summary.txt
  validate      compare model predictions against the Monte-Carlo oracle
  bench-planner time the heterogeneous pool-sizing search at various pool sizes
  replay        shortcut: build a scenario from a trace CSV and run it
  sweep         run a scenario across a grid of overrides
"""

from __future__ import annotations

import argparse
import csv
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import oracle, queuing, scenario as scenario_mod, simulator
from .errors import EdgeScaleError
from .queuing import WaitTarget


def _write_requests_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["function_id", "arrival_s", "dispatch_s", "completion_s", "wait_s",
             "service_s", "container_id", "status", "reruns"]
        )
        for r in metrics.requests:
            dispatch = "" if math.isnan(r.dispatch) else f"{r.dispatch:.6f}"
            completion = "" if math.isnan(r.completion) else f"{r.completion:.6f}"
            wait = "" if math.isnan(r.dispatch) else f"{r.dispatch - r.arrival:.6f}"
            service = (
                f"{r.completion - r.dispatch:.6f}"
                if not (math.isnan(r.completion) or math.isnan(r.dispatch))
                else ""
            )
            w.writerow(
                [r.function_id, f"{r.arrival:.6f}", dispatch, completion, wait,
                 service, r.container_id if r.container_id >= 0 else "", r.status,
                 r.reruns]
            )


def _write_epochs_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["epoch", "time_s", "function_id", "rate_estimate", "c_active", "c_lazy",
             "c_new", "demand_vcpu", "target_vcpu", "guar_vcpu", "alloc_vcpu",
             "overloaded", "infeasible", "creates", "terminates", "marks", "unmarks",
             "deflates", "inflates", "create_failures"]
        )
        for e in metrics.epochs:
            w.writerow(
                [e.epoch, f"{e.time:.3f}", e.function_id, f"{e.rate_estimate:.4f}",
                 e.c_active, e.c_lazy, e.c_new, f"{e.demand_vcpu:.4f}",
                 f"{e.target_vcpu:.4f}", f"{e.guar_vcpu:.4f}", f"{e.alloc_vcpu:.4f}",
                 int(e.overloaded), int(e.infeasible), e.creates, e.terminates,
                 e.marks, e.unmarks, e.deflates, e.inflates, e.create_failures]
            )


def _write_summary(path, scn, metrics):
    lines = []
    lines.append(f"horizon_s={metrics.horizon:.1f} capacity_vcpu={metrics.capacity_vcpu:.2f}")
    lines.append(f"utilization_busy={metrics.utilization:.4f}")
    lines.append(f"utilization_allocated={metrics.allocated_utilization:.4f}")
    lines.append(
        f"cold_starts={metrics.cold_starts} reruns={metrics.reruns} "
        f"create_failures={metrics.create_failures}"
    )
    lines.append("")
    header = (
        f"{'function':<14}{'requests':>9}{'completed':>10}{'dropped':>8}"
        f"{'p50_wait':>10}{'p95_wait':>10}{'p99_wait':>10}"
        f"{'p50_resp':>10}{'p95_resp':>10}{'p99_resp':>10}{'slo_viol':>9}"
    )
    lines.append(header)
    for fid in sorted(scn.functions):
        counts = metrics.counts(fid)
        spec = scn.functions[fid]
        deadline = spec.slo.deadline
        completed = [r for r in metrics.requests
                     if r.function_id == fid and r.status == "completed"]
        if completed:
            waits = np.array([r.dispatch - r.arrival for r in completed])
            resps = np.array([r.completion - r.arrival for r in completed])
            basis = waits if spec.slo.applies_to == "waiting" else resps
            viol = float(np.mean(basis > deadline))
            row = (
                f"{fid:<14}{counts['generated']:>9}{counts['completed']:>10}"
                f"{counts['dropped']:>8}"
                f"{np.percentile(waits, 50):>10.4f}{np.percentile(waits, 95):>10.4f}"
                f"{np.percentile(waits, 99):>10.4f}"
                f"{np.percentile(resps, 50):>10.4f}{np.percentile(resps, 95):>10.4f}"
                f"{np.percentile(resps, 99):>10.4f}{viol:>9.4f}"
            )
        else:
            row = (
                f"{fid:<14}{counts['generated']:>9}{counts['completed']:>10}"
                f"{counts['dropped']:>8}" + " " * 60
            )
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def run_scenario_to_dir(scn, out_dir) -> simulator.SimMetrics:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = simulator.run(scn)
    _write_requests_csv(out / "requests.csv", metrics)
    _write_epochs_csv(out / "epochs.csv", metrics)
    _write_summary(out / "summary.txt", scn, metrics)
    return metrics


def cmd_run(args) -> int:
    scn = scenario_mod.load(args.scenario, overrides=args.override)
    if args.seed is not None:
        scn.seed = args.seed
    run_scenario_to_dir(scn, args.out)
    print(f"wrote {args.out}/requests.csv, epochs.csv, summary.txt")
    return 0


def cmd_validate(args) -> int:
    target = WaitTarget(t=args.deadline, percentile=args.percentile)
    rows = []
    if args.rates:
        rates = sorted(float(x) for x in args.rates.split(","))
        k = queuing.find_c_heterogeneous(args.arrival_rate, rates, args.service_rate, target)
        pool = sorted(rates + [args.service_rate] * k)
        model = queuing.HeterogeneousModel(args.arrival_rate, tuple(pool))
        p_model = queuing.wait_cdf_heterogeneous(model, args.deadline)
        policy = "slowest-idle"
        label = f"hetero c={len(pool)} (+{k} std)"
    else:
        c = queuing.find_c_homogeneous(args.arrival_rate, args.service_rate, target)
        pool = [args.service_rate] * c
        model = queuing.HomogeneousModel(args.arrival_rate, args.service_rate, c)
        p_model = queuing.wait_cdf_homogeneous(model, args.deadline)
        policy = "fastest-idle"
        label = f"homog c={c}"

    estimates = []
    for rep in range(args.replications):
        res = oracle.mc_wait(
            args.arrival_rate, pool, args.deadline,
            num_requests=args.requests, seed=args.seed + rep, policy=policy,
        )
        estimates.append(res)
    p_mc = statistics.fmean(r.p_wait_le_t for r in estimates)
    se = max(r.stderr for r in estimates) / math.sqrt(len(estimates))
    if args.rates:
        ok = p_mc >= p_model - 3 * se  # worst-case bound: measured must not fall below
    else:
        ok = abs(p_mc - p_model) <= 3 * se
    verdict = "PASS" if ok else "FAIL"
    print(f"{'pool':<22}{'model P(wait<=t)':>18}{'oracle':>12}{'+-3se':>10}  verdict")
    print(f"{label:<22}{p_model:>18.5f}{p_mc:>12.5f}{3 * se:>10.5f}  {verdict}")
    return 0 if ok else 1


def cmd_bench_planner(args) -> int:
    target = WaitTarget(t=args.deadline, percentile=args.percentile)
    rng = np.random.default_rng(args.seed)
    print(f"{'pool_size':>10}{'mean_ms':>10}{'max_ms':>10}  (burst={args.burst:g})")
    worst = 0.0
    for n in (int(x) for x in args.pool_sizes.split(",")):
        # a provisioned pool with random deflation within tau
        fracs = 1.0 - rng.uniform(0.0, 0.3, size=n)
        mult = 1.0 - 0.1 * ((1.0 - fracs) / 0.3)
        rates = np.sort(args.service_rate * mult)
        lam = 0.7 * float(rates.sum())
        burst_lam = (1.0 + args.burst) * lam
        times = []
        for _ in range(args.runs):
            t0 = time.perf_counter()
            queuing.find_c_heterogeneous(burst_lam, rates, args.service_rate, target)
            times.append((time.perf_counter() - t0) * 1000.0)
        print(f"{n:>10}{statistics.fmean(times):>10.3f}{max(times):>10.3f}")
        worst = max(worst, statistics.fmean(times))
    return 0


def cmd_replay(args) -> int:
    from .workload import load_trace

    traces = load_trace(args.trace)
    if not traces:
        print("trace file has no rows", file=sys.stderr)
        return 1
    horizon = args.horizon or max(len(t.per_minute_counts) for t in traces) * 60.0
    doc = {
        "horizon_seconds": horizon,
        "seed": args.seed or 0,
        "cluster": {"nodes": [{"vcpu": args.node_vcpu, "memory_mb": args.node_memory_mb}
                              for _ in range(args.nodes)]},
        "controller": {"reclamation": args.reclamation},
        "functions": [
            {
                "id": t.function_id,
                "size": {"vcpu": args.vcpu, "memory_mb": args.memory_mb},
                "slo": {"deadline": args.deadline, "percentile": args.percentile},
                "service": {"distribution": "exponential", "rate": args.service_rate},
                "workload": {"mode": "trace", "file": str(Path(args.trace).name),
                             "function": t.function_id},
            }
            for t in traces
        ],
    }
    scn = scenario_mod.from_dict(doc, base_dir=Path(args.trace).parent)
    run_scenario_to_dir(scn, args.out)
    print(f"replayed {len(traces)} functions for {horizon:.0f}s -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    grids = []
    for spec in args.set:
        if "=" not in spec:
            print(f"--set must look like key=v1,v2 (got {spec!r})", file=sys.stderr)
            return 2
        key, values = spec.split("=", 1)
        grids.append([(key, v) for v in values.split(",")])
    combos = [[]]
    for grid in grids:
        combos = [c + [kv] for c in combos for kv in grid]
    for combo in combos:
        name = "_".join(f"{k.split('.')[-1]}-{v}" for k, v in combo) or "base"
        overrides = list(args.override) + [f"{k}={v}" for k, v in combo]
        scn = scenario_mod.load(args.scenario, overrides=overrides)
        out = Path(args.out) / name
        run_scenario_to_dir(scn, out)
        print(f"[{name}] done -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgescale")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario file")
    run_p.add_argument("scenario")
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE")
    run_p.set_defaults(func=cmd_run)

    val_p = sub.add_parser("validate", help="model vs Monte-Carlo oracle")
    val_p.add_argument("--arrival-rate", type=float, required=True)
    val_p.add_argument("--service-rate", type=float, required=True)
    val_p.add_argument("--rates", default="",
                       help="existing heterogeneous pool rates, comma separated")
    val_p.add_argument("--deadline", type=float, default=0.1)
    val_p.add_argument("--percentile", type=float, default=0.95)
    val_p.add_argument("--replications", type=int, default=3)
    val_p.add_argument("--requests", type=int, default=120_000)
    val_p.add_argument("--seed", type=int, default=0)
    val_p.set_defaults(func=cmd_validate)

    bench_p = sub.add_parser("bench-planner", help="time the pool-sizing search")
    bench_p.add_argument("--pool-sizes", default="10,100,1000")
    bench_p.add_argument("--burst", type=float, default=0.1)
    bench_p.add_argument("--runs", type=int, default=20)
    bench_p.add_argument("--service-rate", type=float, default=10.0)
    bench_p.add_argument("--deadline", type=float, default=0.1)
    bench_p.add_argument("--percentile", type=float, default=0.99)
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.set_defaults(func=cmd_bench_planner)

    rep_p = sub.add_parser("replay", help="run a trace CSV with default settings")
    rep_p.add_argument("trace")
    rep_p.add_argument("--out", required=True)
    rep_p.add_argument("--horizon", type=float, default=None)
    rep_p.add_argument("--seed", type=int, default=0)
    rep_p.add_argument("--nodes", type=int, default=3)
    rep_p.add_argument("--node-vcpu", type=float, default=4.0)
    rep_p.add_argument("--node-memory-mb", type=float, default=16384.0)
    rep_p.add_argument("--vcpu", type=float, default=1.0)
    rep_p.add_argument("--memory-mb", type=float, default=512.0)
    rep_p.add_argument("--service-rate", type=float, default=10.0)
    rep_p.add_argument("--deadline", type=float, default=0.1)
    rep_p.add_argument("--percentile", type=float, default=0.95)
    rep_p.add_argument("--reclamation", default="deflation",
                       choices=("deflation", "termination"))
    rep_p.set_defaults(func=cmd_replay)

    sweep_p = sub.add_parser("sweep", help="run a scenario across a grid of overrides")
    sweep_p.add_argument("scenario")
    sweep_p.add_argument("--out", required=True)
    sweep_p.add_argument("--set", action="append", default=[],
                         metavar="KEY=V1,V2", help="grid dimension (repeatable)")
    sweep_p.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE")
    sweep_p.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EdgeScaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
