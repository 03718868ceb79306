"""Experiment orchestration: the interval loop, A/B compare, parameter sweep."""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import baselines, metrics, migrator, policy, profiler, workload
from .config import ConfigError, RunConfig
from .memmodel import CostModel, MemoryState, TierTopology
from .metrics import IntervalMetrics
from .workload import AccessTrace, GupsPhase, HotOracle


def _derive_seed(master: int, label: str) -> int:
    return random.Random(f"{master}:{label}").getrandbits(63)


def build_trace(cfg: RunConfig) -> tuple[AccessTrace, HotOracle]:
    w = cfg.workload
    seed = _derive_seed(cfg.seed, "trace")
    topo_nodes = cfg.topology_spec.get("nodes", [0])
    if w.kind == "gups":
        return workload.gen_gups(
            w.footprint_pages, w.hotset_fraction, w.hot_access_fraction,
            w.accesses, topo_nodes, seed,
            accesses_per_interval=w.accesses_per_interval,
            hotset_layout=w.hotset_layout, init_pass=w.init_pass,
            rehash_hotset_every_n_passes=w.rehash_hotset_every_n_passes)
    if w.kind == "phase_change":
        phases = [GupsPhase(w.footprint_pages, w.hotset_fraction,
                            w.hot_access_fraction, w.accesses,
                            init_pass=(w.init_pass and i == 0))
                  for i in range(w.phases)]
        return workload.gen_phase_change(
            phases, seed, topo_nodes,
            accesses_per_interval=w.accesses_per_interval,
            hotset_layout=w.hotset_layout)
    if w.kind == "microbench":
        trace = workload.gen_seq_microbench(w.bench, w.array_pages, w.passes,
                                            node=w.node,
                                            accesses_per_interval=w.accesses_per_interval)
        return trace, HotOracle.from_trace(trace)
    raise ConfigError(f"unknown workload kind {w.kind!r}")


@dataclass
class RunResult:
    system: str
    rows: list[IntervalMetrics] = field(default_factory=list)
    plan_rows: list[list] = field(default_factory=list)
    profiler_rows: list[list] = field(default_factory=list)
    migration_rows: list[list] = field(default_factory=list)
    tier_ids: list[str] = field(default_factory=list)

    def totals(self) -> tuple[float, float, float]:
        return metrics.time_breakdown(self.rows)

    def total_cost(self) -> float:
        return sum(self.totals())


def run_simulation(cfg: RunConfig, trace: AccessTrace | None = None,
                   oracle: HotOracle | None = None) -> RunResult:
    """Execute the interval loop: replay+profile, restructure regions, EMA,
    plan, migrate, measure.  Fully deterministic in (config, seed)."""
    topology = cfg.topology()
    if trace is None:
        trace, oracle = build_trace(cfg)
    group = cfg.alloc_group_pages or cfg.profiler.default_region_pages
    space = MemoryState(topology, cfg.cost_model, trace.footprint(),
                        allocator=baselines.group_first_touch(group))
    system = baselines.make_system(
        cfg.system, space, cfg.profiler, cfg.policy,
        _derive_seed(cfg.seed, f"system:{cfg.system}"),
        detect_threshold=cfg.detect_threshold,
        autonuma_window_fraction=cfg.autonuma_window_fraction)
    mode = cfg.migrator_mode or system.migrator_mode
    result = RunResult(system=cfg.system, tier_ids=list(topology.tier_ids))
    intervals = min(cfg.intervals, trace.num_intervals)
    for i in range(intervals):
        slc = trace.interval_slice(i)
        app0 = space.ledger.app
        prof0 = space.ledger.profiling
        mig0 = space.ledger.migration_exposed
        acc0 = dict(space.tier_access_counts)

        system.run_profiling(slc, i)
        detected = system.detected_pages()
        plan, regions = system.plan()

        if plan.moves:
            concurrent = []
            if mode in ("async", "adaptive") and i + 1 < trace.num_intervals:
                concurrent = migrator.project_write_times(
                    space, trace.interval_slice(i + 1), space.clock)
            report = migrator.execute_plan(space, plan, regions, mode=mode,
                                           concurrent=concurrent,
                                           start_time=space.clock)
            result.migration_rows.extend(migrator.report_rows(i, report))
            result.plan_rows.extend(policy.plan_rows(i, plan))

        oracle_set = oracle.hot_pages(i) if oracle is not None else set()
        rec, prec = metrics.recall_precision(detected, oracle_set)
        merges, splits = system.struct_counts()
        row = IntervalMetrics(
            interval=i, recall=rec, precision=prec,
            app_cost=space.ledger.app - app0,
            profiling_cost=space.ledger.profiling - prof0,
            migration_exposed_cost=space.ledger.migration_exposed - mig0,
            tier_access_counts={t: space.tier_access_counts[t] - acc0[t]
                                for t in topology.tier_ids},
            merges=merges, splits=splits)
        result.rows.append(row)
        if isinstance(system, baselines.MtmSystem):
            result.profiler_rows.extend(
                profiler.snapshot_rows(i, system.profiler.regions))
    return result


def write_run_outputs(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(metrics.metrics_header(result.tier_ids))
        for row in result.rows:
            w.writerow(metrics.metrics_row(row, result.tier_ids))
    with open(out / "plans.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "region_id", "src_tier", "dst_tier", "reason", "bytes"])
        w.writerows(result.plan_rows)
    with open(out / "profiler.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "region_id", "start_page", "len_pages", "tier",
                    "quota", "hi", "whi"])
        w.writerows(result.profiler_rows)
    with open(out / "migrations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "region_id", "src", "dst", "mechanism",
                    "exposed_cost", "background_cost", "recopied_pages"])
        w.writerows(result.migration_rows)
    with open(out / "summary.txt", "w") as fh:
        fh.write(metrics.summary_text(result.system, result.rows, result.tier_ids))


def run_to_dir(cfg: RunConfig, out_dir: str | Path) -> RunResult:
    result = run_simulation(cfg)
    write_run_outputs(result, out_dir)
    return result


def compare_systems(cfg: RunConfig, systems: list[str],
                    out_dir: str | Path | None = None) -> list[dict]:
    """Run several systems over one shared trace instance and emit app-cost
    figures normalized to the first-touch member."""
    from dataclasses import replace
    if len(set(systems)) != len(systems):
        raise ConfigError("duplicate systems in compare")
    if len(systems) > 1 and "first-touch" not in systems:
        raise ConfigError("compare needs the first-touch member for normalization")
    trace, oracle = build_trace(cfg)
    results = []
    for name in systems:
        sub = replace(cfg, system=name)
        results.append(run_simulation(sub, trace=trace, oracle=oracle))
    by_name = {r.system: r for r in results}
    base = by_name.get("first-touch", results[0])
    base_app, _, _ = base.totals()
    base_total = base.total_cost()
    rows = []
    for r in results:
        app, prof, mig = r.totals()
        rows.append({
            "system": r.system,
            "app_cost": app, "prof_cost": prof, "mig_cost": mig,
            "total_cost": app + prof + mig,
            "norm_app": app / base_app if base_app else 1.0,
            "norm_total": (app + prof + mig) / base_total if base_total else 1.0,
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "compare.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["system", "app_cost", "prof_cost", "mig_cost",
                        "total_cost", "norm_app", "norm_total"])
            for row in rows:
                w.writerow([row["system"], f"{row['app_cost']:.6f}",
                            f"{row['prof_cost']:.6f}", f"{row['mig_cost']:.6f}",
                            f"{row['total_cost']:.6f}", f"{row['norm_app']:.6f}",
                            f"{row['norm_total']:.6f}"])
        for r in results:
            write_run_outputs(r, out / r.system)
    return rows


SWEEP_PARAMS = ("overhead_constraint", "alpha", "tau1", "tau2", "num_scans",
                "bucket_width", "N")


def _with_param(cfg: RunConfig, param: str, value) -> RunConfig:
    from dataclasses import replace
    import copy
    out = replace(cfg)
    out.profiler = copy.deepcopy(cfg.profiler)
    out.policy = copy.deepcopy(cfg.policy)
    out.cost_model = copy.deepcopy(cfg.cost_model)
    if param == "overhead_constraint":
        out.profiler.overhead_constraint = float(value)
    elif param == "alpha":
        out.policy.alpha = float(value)
    elif param == "tau1":
        out.profiler.tau1 = float(value)
    elif param == "tau2":
        out.profiler.tau2 = float(value)
    elif param == "num_scans":
        out.profiler.num_scans = int(value)
        out.profiler.tau1 = None
        out.profiler.tau2 = None
        out.profiler.__post_init__()
    elif param == "bucket_width":
        out.policy.bucket_width = float(value)
    elif param == "N":
        out.policy.n_bytes = int(value)
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}; "
                          f"expected one of {SWEEP_PARAMS}")
    return out


def sweep_parameter(cfg: RunConfig, param: str, values: list,
                    out_dir: str | Path | None = None) -> list[dict]:
    if not values:
        raise ConfigError("sweep needs a non-empty value list")
    rows = []
    for value in values:
        sub = _with_param(cfg, param, value)
        result = run_simulation(sub)
        app, prof, mig = result.totals()
        n = len(result.rows)
        rows.append({
            "param": param, "value": value,
            "app_cost": app, "prof_cost": prof, "mig_cost": mig,
            "total_cost": app + prof + mig,
            "mean_recall": sum(r.recall for r in result.rows) / n if n else 0.0,
            "mean_precision": sum(r.precision for r in result.rows) / n if n else 0.0,
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "value", "app_cost", "prof_cost", "mig_cost",
                        "total_cost", "mean_recall", "mean_precision"])
            for row in rows:
                w.writerow([row["param"], row["value"], f"{row['app_cost']:.6f}",
                            f"{row['prof_cost']:.6f}", f"{row['mig_cost']:.6f}",
                            f"{row['total_cost']:.6f}", f"{row['mean_recall']:.6f}",
                            f"{row['mean_precision']:.6f}"])
    return rows
