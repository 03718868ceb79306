import random

import pytest

from tiersim.memmodel import BASE_PAGE_BYTES, CapacityError, build_topology
from tiersim.policy import (
    HotnessHistogram, PolicyConfig, build_histogram, plan_demotions,
    plan_interval, plan_promotions, resolve_destination, update_ema,
)
from tiersim.profiler import Region


def region(start, length, tier, whi, origin=None):
    r = Region(start, length, tier, quota=1)
    r.whi = whi
    r.hi = whi
    if origin:
        r.origin_counts = dict(origin)
    return r


def topo_pages(caps, nodes=(0,), views=None):
    spec = {
        "tiers": [{"id": f"t{i+1}", "capacity_bytes": c * BASE_PAGE_BYTES,
                   "access_cost": cost}
                  for i, (c, cost) in enumerate(zip(caps, (1.0, 1.8, 3.0, 5.4)))],
        "nodes": list(nodes),
    }
    if views:
        spec["views"] = views
    return build_topology(spec)


def occupy(topo, regions):
    """Charge each region's bytes against its tier so free space is honest."""
    for r in regions:
        topo.tier(r.tier).free_bytes -= r.bytes


class TestUpdateEma:
    def test_substitution(self):
        r = region(0, 8, "t1", whi=2.0)
        assert update_ema(r, hi=3.0, alpha=0.5) == pytest.approx(2.5)

    def test_constant_hi_converges(self):
        r = region(0, 8, "t1", whi=0.0)
        for _ in range(60):
            update_ema(r, hi=1.75, alpha=0.5)
        assert r.whi == pytest.approx(1.75, abs=1e-9)

    def test_alpha_one_ignores_history(self):
        r = region(0, 8, "t1", whi=0.3)
        assert update_ema(r, hi=2.9, alpha=1.0) == 2.9

    def test_first_interval_seeds_directly(self):
        r = Region(0, 8, "t1", quota=1)
        assert r.whi is None
        assert update_ema(r, hi=1.2, alpha=0.5) == 1.2

    def test_closed_form_linearity(self):
        rng = random.Random(33)
        for _ in range(25):
            alpha = rng.uniform(0.05, 1.0)
            his = [rng.uniform(0, 3) for _ in range(50)]
            r = Region(0, 8, "t1", quota=1)
            update_ema(r, his[0], alpha)
            for h in his[1:]:
                update_ema(r, h, alpha)
            # closed form: alpha * sum (1-alpha)^j hi_{k-j} + (1-alpha)^k hi_0
            k = len(his) - 1
            expect = (1 - alpha) ** k * his[0]
            for j, h in enumerate(reversed(his[1:])):
                expect += alpha * (1 - alpha) ** j * h
            assert r.whi == pytest.approx(expect, abs=1e-9)


class TestHistogram:
    def test_bucket_floor_arithmetic(self):
        regs = [region(0, 8, "t1", 0.05), region(8, 8, "t1", 1.55),
                region(16, 8, "t1", 2.95)]
        hist = build_histogram(regs, 0.1, num_scans=3)
        assert hist.bucket_index(0.05) == 0
        assert hist.bucket_index(1.55) == 15
        assert hist.bucket_index(2.95) == 29
        assert hist.bucket_index(3.0) == 29  # top edge inclusive

    def test_equal_whi_single_bucket(self):
        regs = [region(i * 8, 8, "t1", 1.23) for i in range(5)]
        hist = build_histogram(regs, 0.1)
        occupied = [i for i, b in enumerate(hist.buckets) if b]
        assert occupied == [hist.bucket_index(1.23)]

    def test_incremental_update_equals_rebuild(self):
        rng = random.Random(4)
        regs = [region(i * 8, 8, "t1", rng.uniform(0, 3)) for i in range(40)]
        hist = build_histogram(regs, 0.1)
        for _ in range(100):
            r = rng.choice(regs)
            r.whi = rng.uniform(0, 3)
            hist.update(r)
        rebuilt = build_histogram(regs, 0.1)
        got = [{rid for rid in b} for b in hist.buckets]
        want = [{rid for rid in b} for b in rebuilt.buckets]
        assert got == want


def brute_force_promotion_ids(regions, topology, n_bytes, views):
    """Independent oracle: hottest-first by (whi desc, id asc), skip regions
    already best-placed or oversized for the remaining budget."""
    free = {t.id: t.free_bytes for t in topology.tiers}
    budget = n_bytes
    picked = []
    for r in sorted(regions, key=lambda r: (-(r.whi or 0.0), r.id)):
        if (r.whi or 0.0) <= 0 or r.bytes > budget:
            continue
        order = resolve_destination(r, views)
        dst = next((t for t in order[:order.index(r.tier)]
                    if free.get(t, 0) >= r.bytes), None)
        if dst is None:
            continue
        picked.append((r.id, dst))
        free[dst] -= r.bytes
        free[r.tier] += r.bytes
        budget -= r.bytes
    return picked


class TestPlanPromotions:
    def test_hottest_already_fastest_is_skipped(self):
        topo = topo_pages((64, 64, 64, 64))
        regs = [region(0, 8, "t1", 3.0), region(8, 8, "t3", 2.5)]
        occupy(topo, regs)
        hist = build_histogram(regs, 0.01)
        plan = plan_promotions(hist, topo, 8 * BASE_PAGE_BYTES, topo.views)
        assert [(m.region_id, m.dst) for m in plan.moves] == [(8, "t1")]

    def test_top_k_matches_brute_force(self):
        topo = topo_pages((64, 64, 64, 64))
        regs = [region(0, 8, "t3", 2.9), region(8, 8, "t3", 2.5),
                region(16, 8, "t4", 2.7)]
        occupy(topo, regs)
        hist = build_histogram(regs, 0.01)
        n = 16 * BASE_PAGE_BYTES  # room for exactly two regions
        plan = plan_promotions(hist, topo, n, topo.views)
        want = brute_force_promotion_ids(regs, topo, n, topo.views)
        assert [(m.region_id, m.dst) for m in plan.moves] == want
        assert {m.region_id for m in plan.moves} == {0, 16}

    def test_all_optimally_placed_empty_plan(self):
        topo = topo_pages((64, 64, 64, 64))
        regs = [region(0, 8, "t1", 3.0), region(8, 8, "t1", 2.0)]
        occupy(topo, regs)
        hist = build_histogram(regs, 0.1)
        plan = plan_promotions(hist, topo, 4 * BASE_PAGE_BYTES, topo.views)
        assert plan.moves == []

    def test_overflow_to_second_fastest_when_fastest_full(self):
        topo = topo_pages((8, 64, 64, 64))
        regs = [region(0, 8, "t1", 1.0), region(8, 8, "t4", 3.0),
                region(16, 8, "t4", 2.8)]
        occupy(topo, regs)  # t1 completely full
        hist = build_histogram(regs, 0.1)
        plan = plan_promotions(hist, topo, 16 * BASE_PAGE_BYTES, topo.views)
        assert [(m.region_id, m.dst) for m in plan.moves] == \
            [(8, "t2"), (16, "t2")]

    def test_oracle_equivalence_randomized(self):
        rng = random.Random(99)
        for _ in range(60):
            caps = [rng.randrange(16, 128) for _ in range(4)]
            topo = topo_pages(caps)
            regs = []
            start = 0
            whis = set()
            for _ in range(rng.randrange(2, 24)):
                ln = rng.randrange(1, 6)
                whi = round(rng.uniform(0, 3), 3)
                while whi in whis:  # unique whi keeps the ordering unambiguous
                    whi = round(rng.uniform(0, 3), 3)
                whis.add(whi)
                tier = rng.choice(topo.tier_ids)
                if topo.tier(tier).free_bytes >= ln * BASE_PAGE_BYTES:
                    r = region(start, ln, tier, whi)
                    regs.append(r)
                    topo.tier(tier).free_bytes -= r.bytes
                start += ln
            n_bytes = rng.randrange(1, 64) * BASE_PAGE_BYTES
            hist = build_histogram(regs, 0.0001)
            plan = plan_promotions(hist, topo, n_bytes, topo.views)
            want = brute_force_promotion_ids(regs, topo, n_bytes, topo.views)
            assert [(m.region_id, m.dst) for m in plan.moves] == want


class TestPlanDemotions:
    def test_coldest_demoted_one_level(self):
        topo = topo_pages((16, 64, 64, 64))
        regs = [region(0, 8, "t1", 3.0), region(8, 8, "t1", 0.2)]
        occupy(topo, regs)
        hist = build_histogram(regs, 0.1)
        plan = plan_demotions(topo, "t1", 8 * BASE_PAGE_BYTES, hist, topo.views)
        assert [(m.region_id, m.src, m.dst) for m in plan.moves] == \
            [(8, "t1", "t2")]

    def test_cascade_two_levels(self):
        # t2 is full as well: making room in t1 demotes t2's coldest into t3
        topo = topo_pages((8, 8, 64, 64))
        regs = [region(0, 8, "t1", 2.0), region(8, 8, "t2", 0.5)]
        occupy(topo, regs)
        hist = build_histogram(regs, 0.1)
        plan = plan_demotions(topo, "t1", 8 * BASE_PAGE_BYTES, hist, topo.views)
        moves = [(m.region_id, m.src, m.dst) for m in plan.moves]
        assert moves == [(8, "t2", "t3"), (0, "t1", "t2")]
        # space accounting: replay the plan against the ledgers
        free = {t.id: t.free_bytes for t in topo.tiers}
        for m in plan.moves:
            free[m.dst] -= m.bytes
            free[m.src] += m.bytes
            assert all(v >= 0 for v in free.values())

    def test_zero_need_empty(self):
        topo = topo_pages((16, 16, 16, 16))
        hist = build_histogram([], 0.1)
        assert plan_demotions(topo, "t1", 0, hist, topo.views).moves == []

    def test_memory_exhausted(self):
        topo = topo_pages((8, 8, 8, 8))
        regs = [region(0, 8, "t1", 1.0), region(8, 8, "t2", 0.9),
                region(16, 8, "t3", 0.8), region(24, 8, "t4", 0.7)]
        occupy(topo, regs)  # every tier full
        hist = build_histogram(regs, 0.1)
        with pytest.raises(CapacityError):
            plan_demotions(topo, "t1", 8 * BASE_PAGE_BYTES, hist, topo.views)


class TestResolveDestination:
    views = {0: ["t1", "t2", "t3", "t4"], 1: ["t2", "t1", "t4", "t3"]}

    def test_argmax_wins(self):
        r = region(0, 8, "t3", 1.0, origin={0: 5, 1: 2})
        assert resolve_destination(r, self.views) == self.views[0]

    def test_tie_breaks_to_lower_node(self):
        r = region(0, 8, "t3", 1.0, origin={0: 4, 1: 4})
        assert resolve_destination(r, self.views) == self.views[0]

    def test_node1_dominant_uses_node1_view(self):
        r = region(0, 8, "t3", 1.0, origin={1: 7})
        assert resolve_destination(r, self.views) == self.views[1]

    def test_all_zero_defaults_to_node0(self):
        r = region(0, 8, "t3", 1.0)
        assert resolve_destination(r, self.views) == self.views[0]

    def test_argmax_scale_invariance(self):
        rng = random.Random(6)
        for _ in range(50):
            counts = {0: rng.randrange(0, 50), 1: rng.randrange(0, 50)}
            r1 = region(0, 8, "t3", 1.0, origin=counts)
            k = rng.randrange(2, 9)
            r2 = region(0, 8, "t3", 1.0,
                        origin={n: c * k for n, c in counts.items()})
            assert resolve_destination(r1, self.views) == \
                resolve_destination(r2, self.views)


class TestPlanInterval:
    def test_demotions_precede_promotions_and_fit(self):
        topo = topo_pages((16, 16, 64, 64))
        regs = [region(0, 16, "t1", 0.3), region(16, 8, "t4", 3.0),
                region(24, 8, "t3", 2.5)]
        occupy(topo, regs)
        policy = PolicyConfig(bucket_width=0.1, n_bytes=16 * BASE_PAGE_BYTES)
        plan = plan_interval(regs, topo, policy, topo.views)
        reasons = [m.reason for m in plan.moves]
        assert "demote" in reasons and "promote" in reasons
        assert reasons.index("demote") < reasons.index("promote")
        free = {t.id: t.free_bytes for t in topo.tiers}
        for m in plan.moves:
            free[m.dst] -= m.bytes
            free[m.src] += m.bytes
            assert min(free.values()) >= 0
        assert plan.promoted_bytes() <= policy.n_bytes
