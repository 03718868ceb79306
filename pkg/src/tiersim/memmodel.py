"""Tier topology, page placement, and the simulated access/dirty bits."""
from __future__ import annotations

from dataclasses import dataclass, field

BASE_PAGE_BYTES = 4096
HUGE_PAGE_PAGES = 512  # 2MB huge pages by default

DEFAULT_RANK_COSTS = (1.0, 1.8, 3.0, 5.4)


class TiersimError(Exception):
    pass


class TopologyError(TiersimError):
    pass


class UnmappedPageError(TiersimError):
    pass


class CapacityError(TiersimError):
    """Raised when no tier chain can absorb bytes ("memory exhausted")."""


class BudgetError(TiersimError):
    """Raised when the overhead constraint admits no samples ("constraint infeasible")."""


@dataclass
class TierSpec:
    id: str
    capacity_bytes: int
    access_cost: float
    free_bytes: int = 0

    def __post_init__(self):
        if self.capacity_bytes <= 0 or self.capacity_bytes % BASE_PAGE_BYTES != 0:
            raise TopologyError(
                f"tier {self.id}: capacity must be a positive multiple of "
                f"{BASE_PAGE_BYTES} bytes, got {self.capacity_bytes}")
        if self.access_cost <= 0:
            raise TopologyError(f"tier {self.id}: access_cost must be > 0")


@dataclass
class CostModel:
    scan_cost: float = 1.0
    hint_fault_multiplier: float = 12.0
    step_alloc: float = 1.0
    step_unmap: float = 1.0
    step_copy: float = 2.0
    step_map: float = 1.0
    inter_tier_factor: dict[tuple[str, str], float] = field(default_factory=dict)
    pebs_sample_period: int = 200

    def __post_init__(self):
        for name in ("scan_cost", "step_alloc", "step_unmap", "step_copy", "step_map"):
            if getattr(self, name) <= 0:
                raise TopologyError(f"cost model: {name} must be > 0")
        for (a, b), f in self.inter_tier_factor.items():
            if f < 1.0:
                raise TopologyError(f"inter_tier_factor[{a},{b}] must be >= 1")
            if self.inter_tier_factor.get((b, a), f) != f:
                raise TopologyError("inter_tier_factor must be symmetric")

    def copy_factor(self, src: str, dst: str) -> float:
        if src == dst:
            return 1.0
        return self.inter_tier_factor.get((src, dst), 1.0)

    def sync_page_cost(self, src: str, dst: str) -> float:
        return (self.step_alloc + self.step_unmap +
                self.step_copy * self.copy_factor(src, dst) + self.step_map)


class TierTopology:
    """Ordered tiers plus per-accessor-node fastest-to-slowest views.

    The canonical tier order defines a cost ladder: the cost a node pays for
    a tier is the access_cost at the position that tier occupies in the
    node's view.  A remote node therefore sees its neighbour's local DRAM at
    the remote-DRAM rank cost.
    """

    def __init__(self, tiers: list[TierSpec], accessor_nodes: list[int],
                 views: dict[int, list[str]],
                 alloc_orders: dict[int, list[str]] | None = None):
        if len(tiers) < 2:
            raise TopologyError("at least 2 tiers required")
        ids = [t.id for t in tiers]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate tier ids")
        if not accessor_nodes:
            raise TopologyError("at least one accessor node required")
        for node in accessor_nodes:
            view = views.get(node)
            if view is None or sorted(view) != sorted(ids):
                raise TopologyError(f"node {node}: view must be a permutation of tier ids")
        self.tiers = tiers
        self.tier_ids = ids
        self.accessor_nodes = list(accessor_nodes)
        self.views = {n: list(views[n]) for n in accessor_nodes}
        self.alloc_orders = {}
        for n in accessor_nodes:
            order = (alloc_orders or {}).get(n, self.views[n])
            if sorted(order) != sorted(ids):
                raise TopologyError(f"node {n}: alloc order must be a permutation")
            self.alloc_orders[n] = list(order)
        self._by_id = {t.id: t for t in tiers}
        for t in tiers:
            t.free_bytes = t.capacity_bytes
        rank_costs = [t.access_cost for t in tiers]
        # cost[node][tier] from the node's view rank
        self._cost = {
            n: {tid: rank_costs[rank] for rank, tid in enumerate(self.views[n])}
            for n in accessor_nodes
        }
        avg = {tid: sum(self._cost[n][tid] for n in accessor_nodes) / len(accessor_nodes)
               for tid in ids}
        self.slowest_tier = max(ids, key=lambda tid: (avg[tid], ids.index(tid)))

    def tier(self, tier_id: str) -> TierSpec:
        try:
            return self._by_id[tier_id]
        except KeyError:
            raise TopologyError(f"unknown tier {tier_id!r}") from None

    def access_cost(self, node: int, tier_id: str) -> float:
        return self._cost[node][tier_id]

    def free_bytes(self, tier_id: str) -> int:
        return self.tier(tier_id).free_bytes

    def total_capacity(self) -> int:
        return sum(t.capacity_bytes for t in self.tiers)

    def view_for(self, node: int) -> list[str]:
        return self.views[node]

    def alloc_order(self, node: int) -> list[str]:
        """First-touch placement order for a node (local-first by default)."""
        return self.alloc_orders[node]


def build_topology(spec: dict) -> TierTopology:
    """Build a topology from a structured description.

    Expected keys: ``tiers`` (list of {id, capacity_bytes, access_cost}),
    ``nodes`` (list of node ids), optional ``views`` ({node: [tier ids]},
    default: canonical order for every node).
    """
    tier_specs = spec.get("tiers") or []
    if len(tier_specs) < 2:
        raise TopologyError("topology needs at least 2 tiers")
    tiers = []
    for i, t in enumerate(tier_specs):
        cost = t.get("access_cost")
        if cost is None:
            cost = DEFAULT_RANK_COSTS[i] if i < len(DEFAULT_RANK_COSTS) else \
                DEFAULT_RANK_COSTS[-1] * (i - len(DEFAULT_RANK_COSTS) + 2)
        tiers.append(TierSpec(id=str(t["id"]), capacity_bytes=int(t["capacity_bytes"]),
                              access_cost=float(cost)))
    nodes = [int(n) for n in spec.get("nodes", [0])]
    views = {int(k): [str(x) for x in v] for k, v in (spec.get("views") or {}).items()}
    for n in nodes:
        views.setdefault(n, [t.id for t in tiers])
    alloc_orders = {int(k): [str(x) for x in v]
                    for k, v in (spec.get("alloc_order") or {}).items()}
    return TierTopology(tiers, nodes, views, alloc_orders or None)


@dataclass
class CostLedger:
    app: float = 0.0
    profiling: float = 0.0
    migration_exposed: float = 0.0
    migration_background: float = 0.0


class MemoryState:
    """Page placements, access/dirty bits, per-tier counters, and cost ledgers.

    Huge pages occupy HUGE_PAGE_PAGES consecutive slots sharing one tier;
    their access/dirty bits live on the head slot.
    """

    def __init__(self, topology: TierTopology, cost_model: CostModel,
                 num_pages: int, allocator=None):
        self.topology = topology
        self.cost_model = cost_model
        self.num_pages = num_pages
        self.page_tier: list[str | None] = [None] * num_pages
        self.access_bit = bytearray(num_pages)
        self.dirty_bit = bytearray(num_pages)
        self.huge_head: list[int] = [-1] * num_pages  # head slot index, -1 = base page
        self.tier_access_counts = {t.id: 0 for t in topology.tiers}
        self.ledger = CostLedger()
        self.clock = 0.0  # application-time clock, drives migration windows
        self.allocator = allocator  # callable(state, vpage, node) -> None

    # -- placement ---------------------------------------------------------

    def is_mapped(self, vpage: int) -> bool:
        return 0 <= vpage < self.num_pages and self.page_tier[vpage] is not None

    def map_page(self, vpage: int, tier_id: str) -> None:
        if self.is_mapped(vpage):
            raise TiersimError(f"page {vpage} already mapped")
        tier = self.topology.tier(tier_id)
        if tier.free_bytes < BASE_PAGE_BYTES:
            raise CapacityError(f"tier {tier_id} full")
        tier.free_bytes -= BASE_PAGE_BYTES
        self.page_tier[vpage] = tier_id

    def map_huge_page(self, head: int, tier_id: str) -> None:
        n = HUGE_PAGE_PAGES
        if head % n != 0:
            raise TiersimError(f"huge page head {head} not {n}-page aligned")
        if any(self.is_mapped(p) for p in range(head, head + n)):
            raise TiersimError("huge page range partially mapped")
        tier = self.topology.tier(tier_id)
        if tier.free_bytes < n * BASE_PAGE_BYTES:
            raise CapacityError(f"tier {tier_id} cannot hold a huge page")
        tier.free_bytes -= n * BASE_PAGE_BYTES
        for p in range(head, head + n):
            self.page_tier[p] = tier_id
            self.huge_head[p] = head

    def bit_slot(self, vpage: int) -> int:
        head = self.huge_head[vpage]
        return vpage if head < 0 else head

    def move_pages(self, pages: range, dst: str) -> None:
        """Remap a contiguous run to dst, updating free-space ledgers and
        clearing access/dirty bits.  Cost accounting is the migrator's job."""
        dst_tier = self.topology.tier(dst)
        need = sum(BASE_PAGE_BYTES for p in pages if self.page_tier[p] != dst)
        if dst_tier.free_bytes < need:
            raise CapacityError(f"tier {dst} lacks space for {need} bytes")
        for p in pages:
            src = self.page_tier[p]
            if src is None:
                raise UnmappedPageError(f"page {p} unmapped")
            if src == dst:
                continue
            self.topology.tier(src).free_bytes += BASE_PAGE_BYTES
            dst_tier.free_bytes -= BASE_PAGE_BYTES
            self.page_tier[p] = dst
        for p in pages:
            self.access_bit[p] = 0
            self.dirty_bit[p] = 0
            head = self.huge_head[p]
            if head >= 0:
                self.access_bit[head] = 0
                self.dirty_bit[head] = 0

    def placed_bytes(self) -> dict[str, int]:
        out = {t.id: 0 for t in self.topology.tiers}
        for tid in self.page_tier:
            if tid is not None:
                out[tid] += BASE_PAGE_BYTES
        return out

    # -- access & scanning -------------------------------------------------

    def apply_access(self, vpage: int, is_write: bool, node: int) -> float:
        if not self.is_mapped(vpage):
            if self.allocator is None:
                raise UnmappedPageError(f"page {vpage} unmapped")
            self.allocator(self, vpage, node)
        slot = self.bit_slot(vpage)
        self.access_bit[slot] = 1
        if is_write:
            self.dirty_bit[slot] = 1
        tier_id = self.page_tier[vpage]
        cost = self.topology.access_cost(node, tier_id)
        self.ledger.app += cost
        self.clock += cost
        self.tier_access_counts[tier_id] += 1
        return cost

    def scan_pte(self, vpage: int, cost: float | None = None) -> int:
        """Read and reset the page's access bit, charging the profiling ledger.

        A huge page has a single bit: scanning any of its slots observes and
        clears the head bit.  ``cost`` overrides the plain scan cost so the
        profiler can fold in amortized hint-fault overhead.
        """
        if not self.is_mapped(vpage):
            raise UnmappedPageError(f"page {vpage} unmapped")
        slot = self.bit_slot(vpage)
        observed = self.access_bit[slot]
        self.access_bit[slot] = 0
        self.ledger.profiling += self.cost_model.scan_cost if cost is None else cost
        return observed
