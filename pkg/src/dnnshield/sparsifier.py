"""Dynamic random weight sparsification.

Offline: profile every filter once into a table of magnitude thresholds, one
per discrete sparsification-rate level. Runtime: map classification
confidence to a sparsification-rate cap, draw per-filter drop fractions
uniformly below the cap, and drop exactly that many weights per filter in
ascending (|w|, index) order, emitting active-weight bitmasks.

Randomness comes from a counter-based Philox stream keyed on
(base seed, input id, run index), so every noisy pass is reproducible.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyFilter, FormatError, PlanMismatch

TABLE_MAGIC = b"THRT"


@dataclass
class SparsifierParams:
    """Confidence-to-cap mapping knobs: cap = lam * (1 - exp(-gamma * z_gap)).

    The defaults are calibration placeholders; recipes re-fit gamma to the
    victim model's z-gap range.
    """
    lam: float = 0.8
    gamma: float = 0.3
    levels: int = 101

    def __post_init__(self):
        if not (0.0 < self.lam <= 1.0):
            raise ValueError("lam must be in (0, 1]")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be > 0")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")


@dataclass
class RateVector:
    """Per-filter drop fractions, the cap they were drawn under, and the seed key."""
    rates: dict
    cap: float
    seed_key: tuple = None

    def __post_init__(self):
        for key, d in self.rates.items():
            if not (0.0 <= d <= self.cap + 1e-12):
                raise ValueError(f"rate {d} for filter {key} above cap {self.cap}")


@dataclass
class SparsityPlan:
    """Active-weight bitmasks per filter plus bookkeeping."""
    masks: dict            # (layer, filter) -> bool array, True = active
    active_counts: dict    # (layer, filter) -> int
    thresholds_used: dict  # (layer, filter) -> float

    def total_active(self):
        return sum(self.active_counts.values())

    def total_weights(self):
        return sum(int(m.size) for m in self.masks.values())


class ThresholdTable:
    """Per-filter magnitude thresholds for L discrete drop levels, plus the
    (|w|, index)-ascending permutation used for exact-count masking."""

    def __init__(self, levels, thresholds, orders, weight_counts):
        self.levels = int(levels)
        self.thresholds = thresholds      # key -> float32 array (levels,)
        self.orders = orders              # key -> int64 argsort array
        self.weight_counts = weight_counts

    def keys(self):
        return list(self.thresholds.keys())

    def check_model(self, model):
        keys = model.filter_keys()
        if set(keys) != set(self.thresholds.keys()):
            raise PlanMismatch("threshold table filters disagree with model")
        for f in model.filters():
            if self.weight_counts[f.key] != f.weight_count:
                raise PlanMismatch(f"filter {f.key} weight count changed")


def _drop_count(level, n, levels):
    # exact integer ceil(level * n / (levels - 1))
    return -((-level * n) // (levels - 1))


def profile_thresholds(model, levels=101):
    """One-time offline profile: thresholds[l] = magnitude of the
    ceil(l/(L-1) * N)-th smallest |w| (0 at level 0)."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    thresholds, orders, counts = {}, {}, {}
    got_any = False
    for f in model.filters():
        got_any = True
        n = f.weight_count
        if n == 0:
            raise EmptyFilter(f"filter {f.key} has no weights")
        mags = np.abs(f.flat)
        order = np.argsort(mags, kind="stable")
        sorted_mags = mags[order]
        t = np.zeros(levels, dtype=np.float32)
        for lvl in range(1, levels):
            t[lvl] = sorted_mags[_drop_count(lvl, n, levels) - 1]
        thresholds[f.key] = t
        orders[f.key] = order.astype(np.int64)
        counts[f.key] = n
    if not got_any:
        raise EmptyFilter("model has no filter-bearing layers")
    return ThresholdTable(levels, thresholds, orders, counts)


def sr_cap_from_confidence(z_gap, params):
    """Saturating confidence-to-cap map: lam * (1 - exp(-gamma * z_gap))."""
    if z_gap < 0:
        raise ValueError("z_gap must be >= 0")
    return params.lam * (1.0 - math.exp(-params.gamma * z_gap))


def make_rng(base_seed, input_id, run_index):
    """Philox generator keyed per (base seed, input id, run index)."""
    key = ((int(base_seed) & 0xFFFFFFFFFFFFFFFF) << 64) \
        | ((int(input_id) & 0xFFFFFFFF) << 32) \
        | (int(run_index) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def sample_rates(sr_max, filter_keys, rng, seed_key=None):
    """Per-filter drop fractions drawn i.i.d. Uniform[0, sr_max]."""
    if not (0.0 <= sr_max <= 1.0):
        raise ValueError("sr_max must be in [0, 1]")
    draws = rng.uniform(0.0, sr_max, size=len(filter_keys))
    rates = {key: float(d) for key, d in zip(filter_keys, draws)}
    return RateVector(rates=rates, cap=float(sr_max), seed_key=seed_key)


def build_plan(model, rates, table):
    """Quantize each drop fraction to the nearest table level and deactivate
    exactly that many smallest-magnitude weights (index tie-break)."""
    table.check_model(model)
    if set(rates.rates.keys()) != set(table.thresholds.keys()):
        raise PlanMismatch("rate vector filters disagree with threshold table")
    L = table.levels
    masks, counts, used = {}, {}, {}
    for key, d in rates.rates.items():
        n = table.weight_counts[key]
        level = int(math.floor(d * (L - 1) + 0.5))
        drop = _drop_count(level, n, L)
        mask = np.ones(n, dtype=bool)
        if drop:
            mask[table.orders[key][:drop]] = False
        masks[key] = mask
        counts[key] = n - drop
        used[key] = float(table.thresholds[key][level])
    return SparsityPlan(masks=masks, active_counts=counts, thresholds_used=used)


def all_active_plan(model):
    """Plan that drops nothing (level 0 everywhere)."""
    masks, counts, used = {}, {}, {}
    for f in model.filters():
        masks[f.key] = np.ones(f.weight_count, dtype=bool)
        counts[f.key] = f.weight_count
        used[f.key] = 0.0
    return SparsityPlan(masks=masks, active_counts=counts, thresholds_used=used)


def plan_for_run(model, table, params, z_gap, base_seed, input_id, run_index,
                 fixed_cap=None):
    """One noisy pass worth of sparsity: cap from confidence (or a fixed
    override for ablations), fresh rates, exact-count masks.
    Returns (plan, rate_vector)."""
    cap = fixed_cap if fixed_cap is not None else sr_cap_from_confidence(z_gap, params)
    rng = make_rng(base_seed, input_id, run_index)
    rates = sample_rates(cap, sorted(table.thresholds.keys()), rng,
                         seed_key=(base_seed, input_id, run_index))
    return build_plan(model, rates, table), rates


def save_threshold_table(table, path):
    """Binary table: magic, u32 levels, u32 filters, then per filter the
    (layer, filter, weight_count) triple and its float32 thresholds."""
    with open(Path(path), "wb") as f:
        keys = sorted(table.thresholds.keys())
        f.write(TABLE_MAGIC)
        f.write(struct.pack("<II", table.levels, len(keys)))
        for key in keys:
            f.write(struct.pack("<III", key[0], key[1], table.weight_counts[key]))
            f.write(np.ascontiguousarray(table.thresholds[key], dtype="<f4").tobytes())
    return Path(path)


def load_threshold_table(path, model):
    """Read thresholds and rebuild the sort permutations from the model
    (the table is only meaningful next to its model)."""
    raw = Path(path).read_bytes()
    if raw[:4] != TABLE_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {TABLE_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError("truncated threshold table header")
    levels, nfilters = struct.unpack_from("<II", raw, 4)
    off = 12
    thresholds, counts = {}, {}
    for _ in range(nfilters):
        if len(raw) < off + 12 + 4 * levels:
            raise FormatError("truncated threshold table entry")
        li, fi, n = struct.unpack_from("<III", raw, off)
        off += 12
        t = np.frombuffer(raw, dtype="<f4", count=levels, offset=off).astype(np.float32)
        off += 4 * levels
        thresholds[(li, fi)] = t
        counts[(li, fi)] = n
    if off != len(raw):
        raise FormatError("trailing bytes in threshold table")
    orders = {}
    model_filters = {f.key: f for f in model.filters()}
    if set(model_filters.keys()) != set(thresholds.keys()):
        raise PlanMismatch("threshold table filters disagree with model")
    for key, f in model_filters.items():
        if counts[key] != f.weight_count:
            raise PlanMismatch(f"filter {key} weight count differs from table")
        orders[key] = np.argsort(np.abs(f.flat), kind="stable").astype(np.int64)
    return ThresholdTable(levels, thresholds, orders, counts)
