"""Synthetic access traces with ground-truth per-interval hot-page oracles."""
from __future__ import annotations

import csv
import random
from collections import Counter
from dataclasses import dataclass, field

HOT_THRESHOLD_ACCESSES = 2  # a page is hot in an interval iff accessed >= 2 times


class WorkloadError(Exception):
    pass


@dataclass(frozen=True)
class AccessEvent:
    seq: int
    vpage: int
    is_write: bool
    node: int


class AccessTrace:
    """Time-ordered access stream, stored column-wise for cheap replay."""

    def __init__(self, vpages: list[int], writes: list[bool], nodes: list[int],
                 accesses_per_interval: int):
        if not (len(vpages) == len(writes) == len(nodes)):
            raise WorkloadError("trace columns must have equal length")
        if accesses_per_interval < 1:
            raise WorkloadError("accesses_per_interval must be >= 1")
        self.vpages = vpages
        self.writes = writes
        self.nodes = nodes
        self.accesses_per_interval = accesses_per_interval

    def __len__(self) -> int:
        return len(self.vpages)

    @property
    def num_intervals(self) -> int:
        n = len(self.vpages)
        api = self.accesses_per_interval
        return (n + api - 1) // api

    def interval_bounds(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.num_intervals:
            raise IndexError(f"interval {index} out of range")
        lo = index * self.accesses_per_interval
        return lo, min(lo + self.accesses_per_interval, len(self.vpages))

    def interval_slice(self, index: int) -> "TraceSlice":
        lo, hi = self.interval_bounds(index)
        return TraceSlice(self, lo, hi)

    def events(self):
        for i, (p, w, n) in enumerate(zip(self.vpages, self.writes, self.nodes)):
            yield AccessEvent(i, p, w, n)

    def footprint(self) -> int:
        return max(self.vpages) + 1 if self.vpages else 0

    # -- CSV interchange: header `seq,vpage,rw,node`, rw in {R,W} ----------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seq", "vpage", "rw", "node"])
            for ev in self.events():
                w.writerow([ev.seq, ev.vpage, "W" if ev.is_write else "R", ev.node])

    @classmethod
    def from_csv(cls, path, accesses_per_interval: int) -> "AccessTrace":
        vpages, writes, nodes = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["seq", "vpage", "rw", "node"]:
                raise WorkloadError(f"unexpected trace header {header}")
            for row in reader:
                vpages.append(int(row[1]))
                writes.append(row[2] == "W")
                nodes.append(int(row[3]))
        return cls(vpages, writes, nodes, accesses_per_interval)


class TraceSlice:
    """A half-open [lo, hi) window of a trace; what replay and profiling see."""

    def __init__(self, trace: AccessTrace, lo: int, hi: int):
        self.trace = trace
        self.lo = lo
        self.hi = hi

    def __len__(self) -> int:
        return self.hi - self.lo

    def events(self):
        t = self.trace
        for i in range(self.lo, self.hi):
            yield AccessEvent(i, t.vpages[i], t.writes[i], t.nodes[i])

    def subwindows(self, count: int) -> list["TraceSlice"]:
        """Split into `count` near-equal consecutive sub-windows."""
        n = len(self)
        out = []
        start = self.lo
        for k in range(count):
            end = self.lo + (n * (k + 1)) // count
            out.append(TraceSlice(self.trace, start, end))
            start = end
        return out

    def head_fraction(self, fraction: float) -> "TraceSlice":
        cut = self.lo + int(len(self) * fraction)
        return TraceSlice(self.trace, self.lo, max(self.lo, cut))


@dataclass
class HotOracle:
    """Per-interval ground-truth hot sets (pages accessed >= 2 times)."""

    hot_sets: list[set[int]] = field(default_factory=list)

    @classmethod
    def from_trace(cls, trace: AccessTrace) -> "HotOracle":
        sets = []
        for i in range(trace.num_intervals):
            counts = Counter()
            lo, hi = trace.interval_bounds(i)
            for p in trace.vpages[lo:hi]:
                counts[p] += 1
            sets.append({p for p, c in counts.items() if c >= HOT_THRESHOLD_ACCESSES})
        return cls(sets)

    def hot_pages(self, interval_index: int) -> set[int]:
        if not 0 <= interval_index < len(self.hot_sets):
            raise IndexError(f"oracle interval {interval_index} out of range")
        return self.hot_sets[interval_index]


def oracle_hot_pages(oracle: HotOracle, interval_index: int) -> set[int]:
    return oracle.hot_pages(interval_index)


def _emit_gups_block(rng: random.Random, vpages, writes, nodes,
                     footprint_pages: int, hotset_fraction: float,
                     hot_access_fraction: float, accesses: int,
                     node_ids: list[int], base_page: int,
                     hotset_layout: str, init_pass: bool,
                     rehash_every: int) -> None:
    hot_count = min(footprint_pages - 1, max(1, round(footprint_pages * hotset_fraction)))

    def draw_hotset():
        if hotset_layout == "scattered":
            return sorted(rng.sample(range(footprint_pages), hot_count))
        offset = rng.randrange(footprint_pages - hot_count + 1)
        return list(range(offset, offset + hot_count))

    hotset = draw_hotset()
    cold = None  # lazily built complement for scattered mode
    idx = len(vpages)
    if init_pass:
        for p in range(footprint_pages):
            vpages.append(base_page + p)
            writes.append(True)
            nodes.append(node_ids[idx % len(node_ids)])
            idx += 1
    emitted = 0
    for _ in range(accesses):
        if rehash_every and emitted and emitted % (rehash_every * footprint_pages) == 0:
            hotset = draw_hotset()
            cold = None
        if rng.random() < hot_access_fraction:
            p = hotset[rng.randrange(len(hotset))]
        elif hotset_layout == "scattered":
            if cold is None:
                hs = set(hotset)
                cold = [q for q in range(footprint_pages) if q not in hs]
            p = cold[rng.randrange(len(cold))]
        else:
            lo, hi = hotset[0], hotset[-1] + 1
            span = footprint_pages - (hi - lo)
            r = rng.randrange(span)
            p = r if r < lo else r + (hi - lo)
        vpages.append(base_page + p)
        writes.append(True)  # GUPS performs updates
        nodes.append(node_ids[idx % len(node_ids)])
        idx += 1
        emitted += 1


def gen_gups(footprint_pages: int, hotset_fraction: float, hot_access_fraction: float,
             accesses: int, nodes: list[int], seed: int,
             accesses_per_interval: int = 1024, hotset_layout: str = "contiguous",
             init_pass: bool = False,
             rehash_hotset_every_n_passes: int = 0) -> tuple[AccessTrace, HotOracle]:
    """GUPS-style workload: a seeded hotset receives hot_access_fraction of
    all accesses, the rest spread uniformly over the cold pages."""
    if footprint_pages <= 0 or accesses <= 0:
        raise WorkloadError("footprint and accesses must be positive")
    if not 0 < hotset_fraction < 1:
        raise WorkloadError("hotset_fraction must be in (0, 1)")
    if not 0 < hot_access_fraction <= 1:
        raise WorkloadError("hot_access_fraction must be in (0, 1]")
    rng = random.Random(seed)
    vpages, writes, node_col = [], [], []
    _emit_gups_block(rng, vpages, writes, node_col, footprint_pages, hotset_fraction,
                     hot_access_fraction, accesses, list(nodes) or [0], 0,
                     hotset_layout, init_pass, rehash_hotset_every_n_passes)
    trace = AccessTrace(vpages, writes, node_col, accesses_per_interval)
    return trace, HotOracle.from_trace(trace)


@dataclass
class GupsPhase:
    footprint_pages: int
    hotset_fraction: float
    hot_access_fraction: float
    accesses: int
    seed: int | None = None   # default: derived from the master seed and index
    node: int | None = None   # pin every access of the phase to one node
    init_pass: bool = False


def gen_phase_change(phases: list[GupsPhase], seed: int, nodes: list[int],
                     accesses_per_interval: int = 1024,
                     hotset_layout: str = "contiguous") -> tuple[AccessTrace, HotOracle]:
    """Concatenated GUPS blocks; each phase draws a fresh hotset."""
    if len(phases) < 2:
        raise WorkloadError("need at least 2 phases")
    vpages, writes, node_col = [], [], []
    for i, ph in enumerate(phases):
        phase_seed = ph.seed if ph.seed is not None else (seed * 1000003 + i)
        rng = random.Random(phase_seed)
        phase_nodes = [ph.node] if ph.node is not None else (list(nodes) or [0])
        _emit_gups_block(rng, vpages, writes, node_col, ph.footprint_pages,
                         ph.hotset_fraction, ph.hot_access_fraction, ph.accesses,
                         phase_nodes, 0, hotset_layout, ph.init_pass, 0)
    trace = AccessTrace(vpages, writes, node_col, accesses_per_interval)
    return trace, HotOracle.from_trace(trace)


def gen_seq_microbench(kind: str, array_pages: int, passes: int, node: int = 0,
                       accesses_per_interval: int | None = None) -> AccessTrace:
    """Sequential microbenchmarks used to exercise migration mechanisms."""
    if array_pages < 1:
        raise WorkloadError("array_pages must be >= 1")
    vpages, writes = [], []
    for _ in range(passes):
        for p in range(array_pages):
            if kind == "read_only":
                vpages.append(p); writes.append(False)
            elif kind == "half_read":
                vpages.append(p); writes.append(False)
                vpages.append(p); writes.append(True)
            elif kind == "write_only":
                vpages.append(p); writes.append(True)
            else:
                raise WorkloadError(f"unknown microbench kind {kind!r}")
    api = accesses_per_interval or max(1, len(vpages))
    return AccessTrace(vpages, writes, [node] * len(vpages), api)
