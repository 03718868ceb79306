"""Run configuration: flat dotted key=value files or JSON, validated into
typed config objects."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .baselines import BASELINE_KINDS
from .memmodel import CostModel, TierTopology, build_topology
from .policy import PolicyConfig
from .profiler import ProfilerConfig


class ConfigError(Exception):
    def __init__(self, message: str, location: str | None = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


def _coerce(raw: str):
    s = raw.strip()
    if "," in s:
        return [_coerce(part) for part in s.split(",") if part.strip()]
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """`a.b.c = value` lines into a nested dict; '#' starts a comment."""
    tree: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected key = value", f"{origin}:{lineno}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("empty key", f"{origin}:{lineno}")
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} conflicts with a scalar",
                                  f"{origin}:{lineno}")
        node[parts[-1]] = _coerce(raw)
    return tree


def load_config_file(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON: {exc}", path) from None
    return parse_config_text(text, origin=path)


@dataclass
class WorkloadConfig:
    kind: str = "gups"
    footprint_pages: int = 1024
    hotset_fraction: float = 0.2
    hot_access_fraction: float = 0.8
    accesses: int = 20480
    accesses_per_interval: int = 1024
    hotset_layout: str = "contiguous"
    init_pass: bool = False
    rehash_hotset_every_n_passes: int = 0
    phases: int = 4
    bench: str = "read_only"
    array_pages: int = 2048
    passes: int = 4
    node: int = 0


@dataclass
class RunConfig:
    seed: int
    system: str = "mtm"
    intervals: int = 20
    detect_threshold: float = 2.0
    migrator_mode: str | None = None  # default: the system's native mechanism
    autonuma_window_fraction: float | None = None
    alloc_group_pages: int | None = None  # default: the profiler window size
    topology_spec: dict = field(default_factory=dict)
    cost_model: CostModel = field(default_factory=CostModel)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    profiler: ProfilerConfig = field(default_factory=ProfilerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def topology(self) -> TierTopology:
        return build_topology(self.topology_spec)


_PROFILER_KEYS = {f for f in ProfilerConfig.__dataclass_fields__}
_POLICY_KEYS = {f for f in PolicyConfig.__dataclass_fields__}
_WORKLOAD_KEYS = {f for f in WorkloadConfig.__dataclass_fields__}
_COST_KEYS = {f for f in CostModel.__dataclass_fields__} - {"inter_tier_factor"}


def _section_kwargs(section: dict, known: set[str], where: str) -> dict:
    for key in section:
        if key not in known:
            raise ConfigError(f"unknown field {key!r}", where)
    return dict(section)


def build_run_config(tree: dict, origin: str = "<config>") -> RunConfig:
    """Validate a parsed config tree; errors name the offending field."""
    if "seed" not in tree:
        raise ConfigError("seed is mandatory", origin)
    try:
        seed = int(tree["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer", f"{origin}:seed") from None

    cfg = RunConfig(seed=seed)
    cfg.system = str(tree.get("system", cfg.system))
    if cfg.system not in BASELINE_KINDS:
        raise ConfigError(f"system must be one of {BASELINE_KINDS}", f"{origin}:system")
    cfg.intervals = int(tree.get("intervals", cfg.intervals))
    if cfg.intervals < 1:
        raise ConfigError("intervals must be >= 1", f"{origin}:intervals")
    cfg.detect_threshold = float(tree.get("detect_threshold", cfg.detect_threshold))
    if "migrator_mode" in tree:
        mode = str(tree["migrator_mode"])
        if mode not in ("sync", "async", "adaptive"):
            raise ConfigError("migrator_mode must be sync|async|adaptive",
                              f"{origin}:migrator_mode")
        cfg.migrator_mode = mode
    if "autonuma_window_fraction" in tree:
        cfg.autonuma_window_fraction = float(tree["autonuma_window_fraction"])
    if "alloc_group_pages" in tree:
        cfg.alloc_group_pages = int(tree["alloc_group_pages"])

    topo = tree.get("topology")
    if not topo:
        raise ConfigError("topology section is mandatory", origin)
    cfg.topology_spec = _normalize_topology(topo, origin)

    from .memmodel import TopologyError
    try:
        cfg.workload = WorkloadConfig(**_section_kwargs(
            tree.get("workload", {}), _WORKLOAD_KEYS, f"{origin}:workload"))
        cfg.profiler = ProfilerConfig(**_section_kwargs(
            tree.get("profiler", {}), _PROFILER_KEYS, f"{origin}:profiler"))
        cfg.policy = PolicyConfig(**_section_kwargs(
            tree.get("policy", {}), _POLICY_KEYS, f"{origin}:policy"))
        cfg.cost_model = CostModel(**_section_kwargs(
            tree.get("cost", {}), _COST_KEYS, f"{origin}:cost"))
    except (ValueError, TopologyError) as exc:
        raise ConfigError(str(exc), origin) from None
    if cfg.workload.kind not in ("gups", "phase_change", "microbench"):
        raise ConfigError("workload.kind must be gups|phase_change|microbench",
                          f"{origin}:workload.kind")
    env_seed = os.environ.get("TIERSIM_SEED")
    if env_seed:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError("TIERSIM_SEED must be an integer", "env") from None
    return cfg


def _normalize_topology(topo: dict, origin: str) -> dict:
    """Accept either an explicit tiers list (JSON) or dotted tierN sections."""
    if "tiers" in topo and isinstance(topo["tiers"], list):
        return topo
    tiers = []
    for key in sorted(k for k in topo if k.startswith("tier")):
        section = topo[key]
        if not isinstance(section, dict) or "capacity_bytes" not in section:
            raise ConfigError(f"topology.{key} needs capacity_bytes", origin)
        tiers.append({"id": section.get("id", key), **section})
    if not tiers:
        raise ConfigError("topology needs tier sections or a tiers list", origin)
    out = {"tiers": tiers}
    if "nodes" in topo:
        nodes = topo["nodes"]
        out["nodes"] = nodes if isinstance(nodes, list) else [nodes]
    for section in ("views", "alloc_order"):
        if section in topo:
            out[section] = {k: v if isinstance(v, list) else [v]
                            for k, v in topo[section].items()}
    return out


def load_run_config(path: str) -> RunConfig:
    return build_run_config(load_config_file(path), origin=path)
