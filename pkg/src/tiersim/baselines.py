"""Reference profiling/policy behaviour of the comparison systems, run under
the same simulator contract (same traces, topologies, cost models, budget)."""
from __future__ import annotations

import random
from dataclasses import dataclass

from .memmodel import BASE_PAGE_BYTES, CapacityError, MemoryState
from .metrics import detect_hot_pages
from .profiler import Profiler, ProfilerConfig, Region, compute_budget
from .policy import Move, MigrationPlan, PolicyConfig, plan_interval, update_ema
from .workload import TraceSlice

BASELINE_KINDS = ("mtm", "mtm-no-pebs", "first-touch", "autonuma", "thermostat", "damon")

# paper-scale window the tiered-AutoNUMA profiler inspects per interval
AUTONUMA_WINDOW_BYTES = 256 * 1024 * 1024
PAPER_SYSTEM_MEMORY_BYTES = 1536 * 1024 ** 3
THERMOSTAT_COST_MULTIPLIER = 2.5
DAMON_MERGE_FRACTION = 0.10


def first_touch_alloc(space: MemoryState, vpage: int, node: int) -> str:
    """Place an untouched page in the first tier with room along the toucher
    node's distance order.  Never migrates."""
    topo = space.topology
    for tier_id in topo.alloc_order(node):
        if topo.tier(tier_id).free_bytes >= BASE_PAGE_BYTES:
            space.map_page(vpage, tier_id)
            return tier_id
    raise CapacityError("all tiers full")


def group_first_touch(group_pages: int):
    """First-touch at allocation-extent granularity: touching any page maps
    its whole aligned group into one tier, like THP-backed faulting.  Falls
    back to page-by-page placement when no tier can hold a full group."""

    def alloc(space: MemoryState, vpage: int, node: int) -> None:
        g0 = (vpage // group_pages) * group_pages
        pages = [p for p in range(g0, min(g0 + group_pages, space.num_pages))
                 if not space.is_mapped(p)]
        need = len(pages) * BASE_PAGE_BYTES
        topo = space.topology
        for tier_id in topo.alloc_order(node):
            if topo.tier(tier_id).free_bytes >= need:
                for p in pages:
                    space.map_page(p, tier_id)
                return
        for p in pages:  # spill across tiers at the capacity boundary
            first_touch_alloc(space, p, node)

    return alloc


def mtm_no_pebs_variant(cfg: ProfilerConfig) -> ProfilerConfig:
    """MTM with counter assistance off: the slowest tier is profiled like any
    other (every region, one random sample)."""
    out = ProfilerConfig(**{**cfg.__dict__})
    out.pebs_assist = False
    return out


def replay_plain(space: MemoryState, slc: TraceSlice) -> None:
    for ev in slc.events():
        space.apply_access(ev.vpage, ev.is_write, ev.node)


def _interval_budget(cfg: ProfilerConfig) -> float:
    return cfg.interval_cost * cfg.overhead_constraint


def _tier_runs_with_score(space: MemoryState, start: int, length: int,
                          score: float) -> list[Region]:
    """Split a window into per-tier runs so the shared planner can use it."""
    out = []
    run_start, run_tier = None, None
    for p in range(start, start + length + 1):
        tier = space.page_tier[p] if p < start + length else None
        if tier != run_tier:
            if run_tier is not None:
                reg = Region(run_start, p - run_start, run_tier, quota=1)
                reg.hi = score
                reg.whi = score
                out.append(reg)
            run_start, run_tier = p, tier
    return out


class FirstTouchSystem:
    """Allocation-only baseline: no profiling, no migration."""

    name = "first-touch"
    migrator_mode = "sync"

    def __init__(self, space: MemoryState, cfg: ProfilerConfig,
                 policy: PolicyConfig, seed: int):
        self.space = space

    def run_profiling(self, slc: TraceSlice, interval: int) -> None:
        replay_plain(self.space, slc)

    def detected_pages(self) -> set[int]:
        return set()

    def plan(self):
        return MigrationPlan(), {}

    def struct_counts(self) -> tuple[int, int]:
        return (0, 0)


class MtmSystem:
    """The adaptive profiler plus the EMA histogram planner."""

    name = "mtm"
    migrator_mode = "adaptive"

    def __init__(self, space: MemoryState, cfg: ProfilerConfig,
                 policy: PolicyConfig, seed: int,
                 detect_threshold: float = 2.0):
        self.space = space
        self.cfg = cfg
        self.policy = policy
        self.profiler = Profiler(cfg, space, seed)
        self.detect_threshold = detect_threshold

    def run_profiling(self, slc: TraceSlice, interval: int) -> None:
        prof = self.profiler
        if not prof.initialized:
            replay_plain(self.space, slc)
            prof.init_regions(slc)
            return
        prof.adopt_new_pages()
        prof.select_active(slc)
        prof.profile_interval(slc)
        for r in prof.regions:
            if r.id in prof.active_ids:
                update_ema(r, r.hi, self.policy.alpha)
        prof.end_interval()

    def detected_pages(self) -> set[int]:
        return detect_hot_pages(self.profiler.regions, self.detect_threshold)

    def plan(self):
        plan = plan_interval(self.profiler.regions, self.space.topology,
                             self.policy, self.space.topology.views,
                             self.cfg.num_scans)
        return plan, {r.id: r for r in self.profiler.regions}

    def struct_counts(self) -> tuple[int, int]:
        return self.profiler.take_struct_counts()


class AutonumaSystem:
    """Tiered-AutoNUMA style: one random window per interval, fault counting,
    one-level-per-interval migration along the canonical hierarchy."""

    name = "autonuma"
    migrator_mode = "sync"

    def __init__(self, space: MemoryState, cfg: ProfilerConfig,
                 policy: PolicyConfig, seed: int,
                 window_fraction: float | None = None):
        self.space = space
        self.cfg = cfg
        self.policy = policy
        self.rng = random.Random(seed)
        self.window_fraction = window_fraction
        self.counts: dict[int, int] = {}  # retained per-page fault counts

    def _window_pages(self) -> int:
        footprint = self.space.num_pages
        frac = self.window_fraction if self.window_fraction is not None \
            else AUTONUMA_WINDOW_BYTES / PAPER_SYSTEM_MEMORY_BYTES
        scaled = max(1, int(footprint * frac))
        by_budget = max(1, int(_interval_budget(self.cfg) /
                               (self.space.cost_model.scan_cost * self.cfg.num_scans)))
        return min(footprint, scaled, by_budget)

    def run_profiling(self, slc: TraceSlice, interval: int) -> None:
        space, cfg = self.space, self.cfg
        window = self._window_pages()
        w0 = self.rng.randrange(max(1, space.num_pages - window + 1))
        w1 = w0 + window
        budget = _interval_budget(cfg)
        spent = 0.0
        fresh = {}
        for sub in slc.subwindows(cfg.num_scans):
            seen: set[int] = set()
            for ev in sub.events():
                space.apply_access(ev.vpage, ev.is_write, ev.node)
                p = ev.vpage
                if w0 <= p < w1 and p not in seen and spent + space.cost_model.scan_cost <= budget:
                    seen.add(p)
                    spent += space.cost_model.scan_cost
                    fresh[p] = fresh.get(p, 0) + 1
        space.ledger.profiling += spent
        for p in range(w0, w1):
            self.counts[p] = fresh.get(p, 0)

    def detected_pages(self) -> set[int]:
        return {p for p, c in self.counts.items() if c >= 2}

    def plan(self):
        """Promote hot pages one level toward the fastest tier; the coldest
        residents drop one level when the target lacks room."""
        space, topo = self.space, self.space.topology
        order = topo.tier_ids  # fixed global hierarchy
        free = {t.id: t.free_bytes for t in topo.tiers}
        budget = self.policy.promotion_budget(topo)
        page = BASE_PAGE_BYTES
        moves: list[Move] = []
        regions: dict[int, Region] = {}
        hot = sorted(self.detected_pages())
        hot_set = set(hot)
        # coldest-first victim queues per tier, built once per plan
        victims: dict[str, list[int]] = {t.id: [] for t in topo.tiers}
        for p, t in enumerate(space.page_tier):
            if t is not None and p not in hot_set:
                victims[t].append(p)
        for t in victims:
            victims[t].sort(key=lambda p: (self.counts.get(p, 0), p))
        for p in hot:
            if budget < page:
                break
            tier = space.page_tier[p]
            if tier is None:
                continue
            rank = order.index(tier)
            if rank == 0:
                continue
            dst = order[rank - 1]
            if free.get(dst, 0) < page:
                below = order[rank] if rank < len(order) else None
                if below is None or free.get(below, 0) < page or not victims[dst]:
                    continue
                v = victims[dst].pop(0)
                vreg = Region(v, 1, dst, quota=1)
                regions[v] = vreg
                moves.append(Move(v, dst, below, "demote", page))
                free[below] -= page
                free[dst] += page
            regions[p] = Region(p, 1, tier, quota=1)
            moves.append(Move(p, tier, dst, "promote", page))
            free[dst] -= page
            free[tier] = free.get(tier, 0) + page
            budget -= page
        return MigrationPlan(moves=moves), regions

    def struct_counts(self) -> tuple[int, int]:
        return (0, 0)


class ThermostatSystem:
    """One random base page per fixed-size region, every access to it counted
    at a protection-fault premium; stops sampling when the budget runs dry."""

    name = "thermostat"
    migrator_mode = "sync"

    def __init__(self, space: MemoryState, cfg: ProfilerConfig,
                 policy: PolicyConfig, seed: int):
        self.space = space
        self.cfg = cfg
        self.policy = policy
        self.rng = random.Random(seed)
        self.region_pages = cfg.default_region_pages
        self.hotness: dict[int, int] = {}  # window start -> retained count

    def _windows(self) -> list[int]:
        n = self.space.num_pages
        return list(range(0, n, self.region_pages))

    def run_profiling(self, slc: TraceSlice, interval: int) -> None:
        space = self.space
        replay_counts: dict[int, int] = {}
        for ev in slc.events():
            space.apply_access(ev.vpage, ev.is_write, ev.node)
            replay_counts[ev.vpage] = replay_counts.get(ev.vpage, 0) + 1
        budget = _interval_budget(self.cfg)
        fault_cost = THERMOSTAT_COST_MULTIPLIER * space.cost_model.scan_cost
        spent = 0.0
        windows = self._windows()
        self.rng.shuffle(windows)
        for w in windows:
            pages = [p for p in range(w, min(w + self.region_pages, space.num_pages))
                     if space.is_mapped(p)]
            if not pages:
                continue
            sample = pages[self.rng.randrange(len(pages))]
            count = replay_counts.get(sample, 0)
            cost = count * fault_cost
            if spent + cost > budget:
                break  # out of budget: remaining regions go unprofiled
            spent += cost
            self.hotness[w] = count
        space.ledger.profiling += spent

    def detected_pages(self) -> set[int]:
        hot: set[int] = set()
        for w, c in self.hotness.items():
            if c >= 2:
                hot.update(range(w, min(w + self.region_pages, self.space.num_pages)))
        return hot

    def plan(self):
        """Thermostat is profiling-only: migration reuses the shared planner."""
        regions: list[Region] = []
        for w in self._windows():
            score = min(float(self.hotness.get(w, 0)), float(self.cfg.num_scans))
            ln = min(self.region_pages, self.space.num_pages - w)
            regions.extend(_tier_runs_with_score(self.space, w, ln, score))
        plan = plan_interval(regions, self.space.topology, self.policy,
                             self.space.topology.views, self.cfg.num_scans)
        return plan, {r.id: r for r in regions}

    def struct_counts(self) -> tuple[int, int]:
        return (0, 0)


@dataclass
class _DamonRegion:
    start: int
    length: int
    result: float = 0.0

    @property
    def end(self) -> int:
        return self.start + self.length


class DamonSystem:
    """Region monitor: one random sample per region, merge near-equal
    neighbours, split every region randomly when the count falls below half
    the maximum."""

    name = "damon"
    migrator_mode = "sync"

    def __init__(self, space: MemoryState, cfg: ProfilerConfig,
                 policy: PolicyConfig, seed: int):
        self.space = space
        self.cfg = cfg
        self.policy = policy
        self.rng = random.Random(seed)
        self.max_regions = max(2, compute_budget(cfg, space.cost_model.scan_cost,
                                                 space.cost_model.hint_fault_multiplier))
        self.regions: list[_DamonRegion] = []
        self.merges = 0
        self.splits = 0

    def _init_regions(self) -> None:
        # one region per contiguous mapped run in the footprint
        space = self.space
        start = None
        for p in range(space.num_pages + 1):
            mapped = p < space.num_pages and space.is_mapped(p)
            if mapped and start is None:
                start = p
            elif not mapped and start is not None:
                self.regions.append(_DamonRegion(start, p - start))
                start = None

    def run_profiling(self, slc: TraceSlice, interval: int) -> None:
        space, cfg = self.space, self.cfg
        if not self.regions:
            replay_plain(space, slc)
            self._init_regions()
            return
        budget_samples = self.max_regions
        picks: list[tuple[_DamonRegion, int]] = []
        for reg in self.regions[:budget_samples]:
            pages = [p for p in range(reg.start, reg.end) if space.is_mapped(p)]
            if pages:
                picks.append((reg, pages[self.rng.randrange(len(pages))]))
        hits = {id(reg): 0 for reg, _ in picks}
        for sub in slc.subwindows(cfg.num_scans):
            for ev in sub.events():
                space.apply_access(ev.vpage, ev.is_write, ev.node)
            for reg, page in picks:
                hits[id(reg)] += space.scan_pte(page)
        for reg, _ in picks:
            reg.result = float(hits[id(reg)])
        self._merge()
        self._split()

    def _merge(self) -> None:
        threshold = DAMON_MERGE_FRACTION * self.cfg.num_scans
        out: list[_DamonRegion] = []
        for reg in sorted(self.regions, key=lambda r: r.start):
            if out and out[-1].end == reg.start and \
                    abs(out[-1].result - reg.result) < threshold:
                prev = out[-1]
                merged = _DamonRegion(
                    prev.start, prev.length + reg.length,
                    (prev.result * prev.length + reg.result * reg.length)
                    / (prev.length + reg.length))
                out[-1] = merged
                self.merges += 1
            else:
                out.append(reg)
        self.regions = out

    def _split(self) -> None:
        if len(self.regions) >= self.max_regions / 2:
            return
        out: list[_DamonRegion] = []
        for reg in self.regions:
            if reg.length < 2:
                out.append(reg)
                continue
            cut = reg.start + self.rng.randrange(1, reg.length)
            out.append(_DamonRegion(reg.start, cut - reg.start, reg.result))
            out.append(_DamonRegion(cut, reg.end - cut, reg.result))
            self.splits += 1
        self.regions = out

    def detected_pages(self) -> set[int]:
        hot: set[int] = set()
        for reg in self.regions:
            if reg.result >= 2.0:
                hot.update(range(reg.start, reg.end))
        return hot

    def plan(self):
        regions: list[Region] = []
        for reg in self.regions:
            score = min(reg.result, float(self.cfg.num_scans))
            regions.extend(_tier_runs_with_score(self.space, reg.start,
                                                 reg.length, score))
        plan = plan_interval(regions, self.space.topology, self.policy,
                             self.space.topology.views, self.cfg.num_scans)
        return plan, {r.id: r for r in regions}

    def struct_counts(self) -> tuple[int, int]:
        m, s = self.merges, self.splits
        self.merges = 0
        self.splits = 0
        return (m, s)


def make_system(name: str, space: MemoryState, cfg: ProfilerConfig,
                policy: PolicyConfig, seed: int, detect_threshold: float = 2.0,
                autonuma_window_fraction: float | None = None):
    if name == "mtm":
        return MtmSystem(space, cfg, policy, seed, detect_threshold)
    if name == "mtm-no-pebs":
        sys = MtmSystem(space, mtm_no_pebs_variant(cfg), policy, seed, detect_threshold)
        sys.name = "mtm-no-pebs"
        return sys
    if name == "first-touch":
        return FirstTouchSystem(space, cfg, policy, seed)
    if name == "autonuma":
        return AutonumaSystem(space, cfg, policy, seed, autonuma_window_fraction)
    if name == "thermostat":
        return ThermostatSystem(space, cfg, policy, seed)
    if name == "damon":
        return DamonSystem(space, cfg, policy, seed)
    raise ValueError(f"unknown system {name!r}")
