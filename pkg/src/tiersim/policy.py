"""EMA-driven migration planning: histogram, fast promotion, slow demotion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .memmodel import BASE_PAGE_BYTES, CapacityError, TierTopology
from .profiler import Region


@dataclass
class PolicyConfig:
    alpha: float = 0.5
    bucket_width: float = 0.1
    # Per-interval promotion budget: fraction of total capacity, or absolute
    # bytes when n_bytes is set.
    n_fraction: float = 0.05
    n_bytes: int | None = None

    def promotion_budget(self, topology: TierTopology) -> int:
        if self.n_bytes is not None:
            return self.n_bytes
        return int(topology.total_capacity() * self.n_fraction)


def update_ema(region: Region, hi: float, alpha: float) -> float:
    """Fold the interval's hotness into the region's running average.
    The first observation seeds the average directly."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if region.whi is None:
        region.whi = hi
    else:
        region.whi = alpha * hi + (1 - alpha) * region.whi
    return region.whi


class HotnessHistogram:
    """Buckets regions by smoothed hotness; bucket = floor(whi / width),
    top edge inclusive in the last bucket."""

    def __init__(self, bucket_width: float, num_scans: int = 3):
        if bucket_width <= 0:
            raise ValueError("bucket_width must be > 0")
        self.bucket_width = bucket_width
        self.num_buckets = max(1, math.ceil(num_scans / bucket_width))
        self.buckets: list[dict[int, Region]] = [{} for _ in range(self.num_buckets)]
        self._where: dict[int, int] = {}

    def bucket_index(self, whi: float) -> int:
        return min(self.num_buckets - 1, int(whi // self.bucket_width))

    def insert(self, region: Region) -> None:
        b = self.bucket_index(region.whi or 0.0)
        self.buckets[b][region.id] = region
        self._where[region.id] = b

    def remove(self, region_id: int) -> None:
        b = self._where.pop(region_id)
        del self.buckets[b][region_id]

    def update(self, region: Region) -> None:
        """Incremental move after a whi change; equivalent to a rebuild."""
        if region.id in self._where:
            self.remove(region.id)
        self.insert(region)

    def bucket_members(self, index: int) -> list[Region]:
        return sorted(self.buckets[index].values(), key=lambda r: r.id)

    def bucket_bytes(self, index: int) -> int:
        return sum(r.bytes for r in self.buckets[index].values())

    def hottest_first(self):
        """Regions from the hottest bucket down; ties by higher whi, lower id."""
        for b in range(self.num_buckets - 1, -1, -1):
            members = sorted(self.buckets[b].values(),
                             key=lambda r: (-(r.whi or 0.0), r.id))
            yield from members

    def coldest_first(self):
        for b in range(self.num_buckets):
            members = sorted(self.buckets[b].values(),
                             key=lambda r: ((r.whi or 0.0), r.id))
            yield from members


def build_histogram(regions: list[Region], bucket_width: float,
                    num_scans: int = 3) -> HotnessHistogram:
    hist = HotnessHistogram(bucket_width, num_scans)
    for r in regions:
        hist.insert(r)
    return hist


@dataclass
class Move:
    region_id: int
    src: str
    dst: str
    reason: str  # promote | demote
    bytes: int


@dataclass
class MigrationPlan:
    moves: list[Move] = field(default_factory=list)

    def promoted_bytes(self) -> int:
        return sum(m.bytes for m in self.moves if m.reason == "promote")

    def demoted_bytes(self) -> int:
        return sum(m.bytes for m in self.moves if m.reason == "demote")

    def __len__(self) -> int:
        return len(self.moves)


def resolve_destination(region: Region, views: dict[int, list[str]]) -> list[str]:
    """Tier preference order for a region: the view of the node with the most
    recorded accesses (ties to the lower node id; no data means node 0)."""
    nodes = sorted(views)
    if region.origin_counts:
        best = max(nodes, key=lambda n: (region.origin_counts.get(n, 0), -n))
        if region.origin_counts.get(best, 0) > 0:
            return views[best]
    return views[nodes[0]]


def plan_promotions(hist: HotnessHistogram, topology: TierTopology,
                    n_bytes: int, views: dict[int, list[str]],
                    exclude: set[int] | None = None,
                    free_override: dict[str, int] | None = None) -> MigrationPlan:
    """Select regions hottest-first until n_bytes are promoted.

    Each region targets the fastest tier of its dominant accessor's view;
    when that tier's space runs out the walk keeps selecting for the next
    tier in the view.  Regions already at their best attainable tier are
    skipped.  Candidates larger than the remaining byte budget are skipped
    (not blocking), so one oversized region cannot stall promotion.
    """
    if n_bytes <= 0:
        return MigrationPlan()
    free = dict(free_override) if free_override is not None else \
        {t.id: t.free_bytes for t in topology.tiers}
    plan = MigrationPlan()
    planned = set(exclude or ())
    budget = n_bytes
    for region in hist.hottest_first():
        if budget <= 0:
            break
        if (region.whi or 0.0) <= 0.0:
            break  # never-warm regions are not promotion candidates
        if region.id in planned or region.bytes > budget:
            continue
        order = resolve_destination(region, views)
        rank_now = order.index(region.tier)
        dst = None
        for cand in order[:rank_now]:  # only tiers the region's view ranks faster
            if free.get(cand, 0) >= region.bytes:
                dst = cand
                break
        if dst is None:
            continue
        plan.moves.append(Move(region.id, region.tier, dst, "promote", region.bytes))
        free[dst] -= region.bytes
        free[region.tier] = free.get(region.tier, 0) + region.bytes
        planned.add(region.id)
        budget -= region.bytes
    return plan


def plan_demotions(topology: TierTopology, tier: str, need_bytes: int,
                   hist: HotnessHistogram, views: dict[int, list[str]],
                   exclude: set[int] | None = None,
                   free_override: dict[str, int] | None = None,
                   colder_than: float | None = None) -> MigrationPlan:
    """Free need_bytes in `tier` by demoting its coldest regions one level
    down their dominant view, cascading when the next tier is also full.
    With colder_than set, only regions strictly below that hotness are
    eligible (room-making never evicts something hotter than the arrival)."""
    plan = MigrationPlan()
    if need_bytes <= 0:
        return plan
    free = dict(free_override) if free_override is not None else \
        {t.id: t.free_bytes for t in topology.tiers}
    planned = set(exclude or ())
    _demote_into(topology, tier, need_bytes, hist, views, plan, planned, free,
                 depth=0, colder_than=colder_than)
    return plan


def _demote_into(topology, tier, need_bytes, hist, views, plan, planned, free,
                 depth, colder_than=None):
    if depth > len(topology.tiers):
        raise CapacityError("memory exhausted: demotion cascade found no space")
    freed = 0
    for region in hist.coldest_first():
        if freed >= need_bytes:
            break
        if region.id in planned or region.tier != tier:
            continue
        if colder_than is not None and (region.whi or 0.0) >= colder_than:
            continue
        order = resolve_destination(region, views)
        rank = order.index(tier)
        dst = None
        for lower in order[rank + 1:]:
            if free.get(lower, 0) >= region.bytes:
                dst = lower
                break
            # next lower tier is full: try to cascade space out of it
            before_moves = len(plan.moves)
            before_free = dict(free)
            before_planned = set(planned)
            try:
                _demote_into(topology, lower, region.bytes - free.get(lower, 0),
                             hist, views, plan, planned, free, depth + 1,
                             colder_than=colder_than)
            except CapacityError:
                del plan.moves[before_moves:]
                free.clear(); free.update(before_free)
                planned.clear(); planned.update(before_planned)
                continue
            if free.get(lower, 0) >= region.bytes:
                dst = lower
                break
            del plan.moves[before_moves:]
            free.clear(); free.update(before_free)
            planned.clear(); planned.update(before_planned)
        if dst is None:
            continue
        plan.moves.append(Move(region.id, region.tier, dst, "demote", region.bytes))
        free[dst] -= region.bytes
        free[tier] = free.get(tier, 0) + region.bytes
        planned.add(region.id)
        freed += region.bytes
    if freed < need_bytes:
        raise CapacityError(
            f"memory exhausted: could free only {freed} of {need_bytes} bytes in {tier}")


def plan_interval(regions: list[Region], topology: TierTopology,
                  policy: PolicyConfig, views: dict[int, list[str]],
                  num_scans: int = 3) -> MigrationPlan:
    """One planning pass, hottest candidate first.  Each candidate aims at
    the fastest tier of its view; if that tier is full of strictly colder
    regions, those are demoted (cascading) to make room, otherwise the
    candidate settles for the next tier in its view.  Demoted bytes do not
    consume the promotion budget N."""
    hist = build_histogram(regions, policy.bucket_width, num_scans)
    budget = policy.promotion_budget(topology)
    free = {t.id: t.free_bytes for t in topology.tiers}
    planned: set[int] = set()
    moves: list[Move] = []

    for cand in hist.hottest_first():
        if budget <= 0:
            break
        if (cand.whi or 0.0) <= 0.0:
            break
        if cand.id in planned or cand.bytes > budget:
            continue
        order = resolve_destination(cand, views)
        rank_now = order.index(cand.tier)
        for dst in order[:rank_now]:
            if free.get(dst, 0) < cand.bytes:
                try:
                    part = plan_demotions(
                        topology, dst, cand.bytes - free.get(dst, 0), hist,
                        views, exclude=planned, free_override=free,
                        colder_than=cand.whi)
                except CapacityError:
                    continue
                for m in part.moves:
                    free[m.dst] -= m.bytes
                    free[m.src] = free.get(m.src, 0) + m.bytes
                    planned.add(m.region_id)
                moves.extend(part.moves)
            moves.append(Move(cand.id, cand.tier, dst, "promote", cand.bytes))
            free[dst] -= cand.bytes
            free[cand.tier] = free.get(cand.tier, 0) + cand.bytes
            planned.add(cand.id)
            budget -= cand.bytes
            break
    return MigrationPlan(moves=moves)


def plan_rows(interval: int, plan: MigrationPlan) -> list[list]:
    """Rows for the plan CSV: interval,region_id,src_tier,dst_tier,reason,bytes."""
    return [[interval, m.region_id, m.src, m.dst, m.reason, m.bytes]
            for m in plan.moves]
