"""Cycle-approximate, value-agnostic simulator of the dense baseline tile and
the sparse tile with look-ahead input matching.

A tile holds k filters x m MAC lanes. Timing for one output position:

* dense: every weight position is broadcast, ceil(M/m) cycles per group,
  lanes with inactive weights idle.
* sparse: each filter keeps a pointer to its next pending active weight and
  may consume up to m active weights per cycle from the look-ahead window of
  W*m input positions starting at that pointer; a group finishes when its
  slowest filter drains. Work (MAC count) is conserved versus dense; only
  timing changes.

Groups are scheduled by descending active count so filters sharing a tile
pass need similar MAC counts (less lane idling). Layer-level numbers multiply
the single-position group cycles by the layer's output-position count, since
masks are identical across positions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCorpus


@dataclass
class AccelConfig:
    tiles: int = 1
    filters_per_tile: int = 4   # k
    lanes_per_filter: int = 1   # m
    lookahead: int = 2          # W, input-window depth in units of m positions
    mode: str = "sparse"

    def __post_init__(self):
        if min(self.tiles, self.filters_per_tile, self.lanes_per_filter,
               self.lookahead) < 1:
            raise ValueError("all accelerator dimensions must be >= 1")
        if self.mode not in ("sparse", "dense"):
            raise ValueError("mode must be sparse or dense")

    def to_dict(self):
        return {"tiles": self.tiles, "filters_per_tile": self.filters_per_tile,
                "lanes_per_filter": self.lanes_per_filter,
                "lookahead": self.lookahead, "mode": self.mode}


class FilterJob:
    """One filter's active-weight bitmask over its M broadcast positions."""

    def __init__(self, filter_id, mask):
        self.filter_id = filter_id
        self.mask = np.asarray(mask, dtype=bool)
        if self.mask.ndim != 1 or self.mask.size < 1:
            raise ValueError("mask must be a nonempty 1-D bitvector")
        self.active_positions = np.flatnonzero(self.mask)

    @property
    def weight_count(self):
        return int(self.mask.size)

    @property
    def active_count(self):
        return int(self.active_positions.size)


@dataclass
class ScheduleGroup:
    jobs: list

    @property
    def max_weight_count(self):
        return max(j.weight_count for j in self.jobs)


@dataclass
class SimReport:
    total_cycles: int
    mac_ops: int
    utilization: float
    stall_cycles: int
    per_group: list
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"total_cycles": self.total_cycles, "mac_ops": self.mac_ops,
                "utilization": self.utilization, "stall_cycles": self.stall_cycles,
                "per_group": self.per_group, "config": self.config}


def schedule_groups(jobs, k):
    """Sort descending by active count (ties by id) and chunk into groups of k."""
    if not jobs:
        raise EmptyCorpus("no filter jobs to schedule")
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(jobs, key=lambda j: (-j.active_count, j.filter_id))
    return [ScheduleGroup(ordered[i:i + k]) for i in range(0, len(ordered), k)]


def _sparse_group_cycles(group, m, lookahead, want_trace=False):
    """Lockstep event loop for one group, one output position.

    Returns (cycles, macs, per-cycle consumption trace or None).
    """
    pointers = [0] * len(group.jobs)
    remaining = sum(j.active_count for j in group.jobs)
    window_span = lookahead * m
    cycles = 0
    trace = [] if want_trace else None
    while remaining:
        cycles += 1
        consumed_this_cycle = 0
        for fi, job in enumerate(group.jobs):
            p = pointers[fi]
            pos = job.active_positions
            if p >= pos.size:
                continue
            base = pos[p]
            take = 0
            while p + take < pos.size and take < m and pos[p + take] < base + window_span:
                take += 1
            pointers[fi] = p + take
            consumed_this_cycle += take
        remaining -= consumed_this_cycle
        if want_trace:
            trace.append(consumed_this_cycle)
    return cycles, sum(j.active_count for j in group.jobs), trace


def _assign_to_tiles(per_group_cycles, tiles):
    """Round-robin groups over tiles; makespan is the busiest tile."""
    tile_cycles = [0] * tiles
    for i, c in enumerate(per_group_cycles):
        tile_cycles[i % tiles] += c
    return max(tile_cycles)


def _report(groups, per_group_cycles, per_group_entries, config):
    k, m = config.filters_per_tile, config.lanes_per_filter
    total = _assign_to_tiles(per_group_cycles, config.tiles)
    macs = sum(sum(j.active_count for j in g.jobs) for g in groups)
    slots = total * k * m * config.tiles
    stall = slots - macs
    util = macs / slots if slots else 0.0
    return SimReport(total_cycles=int(total), mac_ops=int(macs),
                     utilization=float(util), stall_cycles=int(stall),
                     per_group=per_group_entries, config=config.to_dict())


def simulate_dense(groups, config):
    """Baseline tile: every weight position broadcast regardless of masks."""
    m = config.lanes_per_filter
    cycles, entries = [], []
    for g in groups:
        c = math.ceil(g.max_weight_count / m)
        cycles.append(c)
        entries.append({"cycles": c,
                        "mac_ops": sum(j.active_count for j in g.jobs),
                        "filters": len(g.jobs),
                        "active_counts": [j.active_count for j in g.jobs]})
    return _report(groups, cycles, entries, config)


def simulate_sparse(groups, config, trace=False):
    """Sparse tile with per-filter look-ahead consumption."""
    m = config.lanes_per_filter
    cycles, entries = [], []
    for g in groups:
        c, macs, tr = _sparse_group_cycles(g, m, config.lookahead, want_trace=trace)
        cycles.append(c)
        entry = {"cycles": c, "mac_ops": macs, "filters": len(g.jobs),
                 "active_counts": [j.active_count for j in g.jobs]}
        if trace:
            entry["cycle_macs"] = tr
        entries.append(entry)
    return _report(groups, cycles, entries, config)


def simulate(groups, config, trace=False):
    if config.mode == "dense":
        return simulate_dense(groups, config)
    return simulate_sparse(groups, config, trace=trace)


# ---------------------------------------------------------------------------
# Model-level workloads
# ---------------------------------------------------------------------------

@dataclass
class LayerWorkload:
    """Filter jobs for one parameter layer plus the number of output
    positions the tile pass repeats for."""
    layer_index: int
    output_positions: int
    jobs: list


def model_workloads(model, plan=None):
    """Build per-layer workloads from a model and an optional sparsity plan
    (all weights active when plan is None)."""
    shape = model.input_shape
    out = []
    for li, layer in enumerate(model.layers):
        new_shape = layer.out_shape(shape)
        if layer.kind == "conv2d":
            positions = int(new_shape[1] * new_shape[2])
        elif layer.kind == "fully_connected":
            positions = 1
        else:
            shape = new_shape
            continue
        jobs = []
        for f in range(layer.num_filters):
            if plan is None:
                size = layer.weights[f].size if layer.kind == "conv2d" \
                    else layer.weights.shape[1]
                mask = np.ones(int(size), dtype=bool)
            else:
                mask = plan.masks[(li, f)]
            jobs.append(FilterJob(f, mask))
        out.append(LayerWorkload(li, positions, jobs))
        shape = new_shape
    return out


def workload_cycles(workloads, config, mode):
    """Total cycles of one inference pass: per-layer group cycles scaled by
    output positions."""
    total = 0
    for wl in workloads:
        groups = schedule_groups(wl.jobs, config.filters_per_tile)
        rep = simulate_dense(groups, config) if mode == "dense" \
            else simulate_sparse(groups, config)
        total += rep.total_cycles * wl.output_positions
    return total


def detection_overhead(verdicts, per_input_run_workloads, config):
    """Mean over inputs of (dense + sum of noisy-pass cycles) / dense.

    `per_input_run_workloads[i][r]` holds the layer workloads of input i's
    noisy run r; runs beyond verdicts[i].runs_used are ignored. The dense
    reference pass reuses the first run's mask lengths with all-active masks.
    """
    if not verdicts or not per_input_run_workloads:
        raise EmptyCorpus("no inputs in the verdict stream")
    if len(verdicts) != len(per_input_run_workloads):
        raise ValueError("verdict stream and workloads disagree in length")
    ratios = []
    for v, runs in zip(verdicts, per_input_run_workloads):
        dense_wls = [
            LayerWorkload(wl.layer_index, wl.output_positions,
                          [FilterJob(j.filter_id, np.ones(j.weight_count, dtype=bool))
                           for j in wl.jobs])
            for wl in runs[0]
        ]
        dense = workload_cycles(dense_wls, config, "dense")
        noisy = sum(workload_cycles(runs[r], config, "sparse")
                    for r in range(v.runs_used))
        ratios.append((dense + noisy) / dense)
    return float(np.mean(ratios)), ratios
