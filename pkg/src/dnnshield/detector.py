"""Adversarial-input detection from output deviation under sparsification.

A dense reference pass yields the class probabilities and a z-scored
confidence reading; noisy passes re-run inference under random weight
sparsification capped by that confidence. The L1 distance between reference
and noisy probability vectors (CPDN) feeds a small state machine: tight
first-run fast-path thresholds, then running-mean thresholds up to a maximum
number of noisy runs, defaulting to Benign.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import DomainError, EmptyCorpus, ShapeMismatch, TooFewClasses
from .sparsifier import SparsifierParams, plan_for_run


@dataclass
class ConfidenceReading:
    z_top: float
    z_runner_up: float
    z_gap: float
    predicted_class: int


def z_score_confidence(logits):
    """Standardize logits with the population std; z_gap is the top-2 gap."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise TooFewClasses("need at least 2 logits")
    predicted = int(np.argmax(z))  # first index wins ties
    std = z.std()
    if std == 0.0:
        return ConfidenceReading(0.0, 0.0, 0.0, predicted)
    zs = (z - z.mean()) / std
    others = np.delete(np.arange(z.shape[0]), predicted)
    runner = int(others[int(np.argmax(z[others]))])
    return ConfidenceReading(
        z_top=float(zs[predicted]),
        z_runner_up=float(zs[runner]),
        z_gap=float(zs[predicted] - zs[runner]),
        predicted_class=predicted,
    )


def cpdn(p_ref, p_noisy):
    """Classification Probability Deviation under Noise: sum |p_ref - p_noisy|."""
    a = np.asarray(p_ref, dtype=np.float64)
    b = np.asarray(p_noisy, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"probability vectors {a.shape} vs {b.shape}")
    for name, v in (("p_ref", a), ("p_noisy", b)):
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} not normalized within 1e-6")
    return float(np.abs(a - b).sum())


# Acklam's rational approximation to the inverse standard normal CDF.
# Max relative error ~1.15e-9, i.e. well below 1.2e-7 absolute over the
# invertible range; anchor-tested against Phi(+-1), Phi(+-2) in the suite.
_ICDF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
           1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ICDF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
           6.680131188771972e+01, -1.328068155288572e+01)
_ICDF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
           -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ICDF_D = (7.784695709041462e-03, 3.224671290700398e-01,
           2.445134137142996e+00, 3.754408661907416e+00)
_ICDF_PLOW = 0.02425


def inverse_normal_cdf(p):
    """Quantile function of the standard normal (Acklam's approximation)."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must be in (0, 1), got {p}")
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    if p < _ICDF_PLOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if p > 1.0 - _ICDF_PLOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def certified_radius(p1, p2, sigma):
    """L2 robustness radius (sigma/2) * (Phi^-1(p1) - Phi^-1(p2))."""
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    if not (0.0 < p1 < 1.0) or not (0.0 < p2 < 1.0):
        raise DomainError("probabilities must be in (0, 1)")
    return 0.5 * sigma * (inverse_normal_cdf(p1) - inverse_normal_cdf(p2))


# ---------------------------------------------------------------------------
# Detection state machine
# ---------------------------------------------------------------------------

@dataclass
class DetectionConfig:
    t1: float
    t2: float
    t1p: float
    t2p: float
    max_runs: int = 4
    params: SparsifierParams = field(default_factory=SparsifierParams)
    base_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.t1p <= self.t1 <= self.t2 <= self.t2p <= 2.0):
            raise ValueError(
                f"threshold ordering 0<=t1p<=t1<=t2<=t2p<=2 violated: "
                f"{self.t1p}, {self.t1}, {self.t2}, {self.t2p}")
        if self.max_runs < 1:
            raise ValueError("max_runs must be >= 1")

    def to_dict(self):
        return {
            "t1": self.t1, "t2": self.t2, "t1p": self.t1p, "t2p": self.t2p,
            "max_runs": self.max_runs, "base_seed": self.base_seed,
            "sparsifier": {"lam": self.params.lam, "gamma": self.params.gamma,
                           "levels": self.params.levels},
        }

    @classmethod
    def from_dict(cls, d):
        sp = d.get("sparsifier", {})
        return cls(t1=d["t1"], t2=d["t2"], t1p=d["t1p"], t2p=d["t2p"],
                   max_runs=d.get("max_runs", 4), base_seed=d.get("base_seed", 0),
                   params=SparsifierParams(**sp))


@dataclass
class DetectionVerdict:
    label: str                  # "Benign" | "Adversarial"
    runs_used: int
    l1_trace: list
    mean_l1: float
    terminated_by: str          # FastPathLow|FastPathHigh|MeanLow|MeanHigh|DefaultBenign

    @property
    def is_adversarial(self):
        return self.label == "Adversarial"


def detect(model, x, table, config, input_id=0, fixed_cap=None):
    """Run the detection episode for one input.

    One dense pass establishes the reference probabilities and the confidence
    that sets the sparsification cap. The first noisy pass is judged against
    the tight fast-path thresholds; runs 2..max_runs are judged by the running
    mean (including run 1) against the conservative thresholds.

    fixed_cap replaces the confidence-adaptive cap with a constant (used by
    the fixed-SR ablations); thresholds are unaffected.
    """
    logits, p_ref = engine.forward(model, x)
    reading = z_score_confidence(logits)
    trace = []
    for run in range(1, config.max_runs + 1):
        plan, _ = plan_for_run(model, table, config.params, reading.z_gap,
                               config.base_seed, input_id, run,
                               fixed_cap=fixed_cap)
        _, p_noisy = engine.forward_masked(model, x, plan)
        l1 = cpdn(p_ref, p_noisy)
        trace.append(l1)
        if run == 1:
            if l1 < config.t1p:
                return DetectionVerdict("Benign", 1, trace, l1, "FastPathLow")
            if l1 > config.t2p:
                return DetectionVerdict("Adversarial", 1, trace, l1, "FastPathHigh")
        else:
            mean = sum(trace) / len(trace)
            if mean < config.t1:
                return DetectionVerdict("Benign", run, trace, mean, "MeanLow")
            if mean > config.t2:
                return DetectionVerdict("Adversarial", run, trace, mean, "MeanHigh")
    mean = sum(trace) / len(trace)
    return DetectionVerdict("Benign", config.max_runs, trace, mean, "DefaultBenign")


def first_run_cpdn(model, x, table, params, base_seed, input_id=0, fixed_cap=None):
    """CPDN of the first noisy pass only (the calibration observable)."""
    logits, p_ref = engine.forward(model, x)
    reading = z_score_confidence(logits)
    plan, _ = plan_for_run(model, table, params, reading.z_gap, base_seed,
                           input_id, 1, fixed_cap=fixed_cap)
    _, p_noisy = engine.forward_masked(model, x, plan)
    return cpdn(p_ref, p_noisy)


def collect_first_run_cpdn(model, inputs, table, params, base_seed,
                           input_ids=None, fixed_cap=None):
    """First-run CPDN for a corpus; input ids default to 0..N-1."""
    if input_ids is None:
        input_ids = range(len(inputs))
    return np.array([
        first_run_cpdn(model, x, table, params, base_seed, input_id=i,
                       fixed_cap=fixed_cap)
        for i, x in zip(input_ids, inputs)
    ])


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def nearest_rank_quantile(samples, q):
    """Nearest-rank quantile: sorted[ceil(q*n)] (0-based, clamped)."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    n = s.shape[0]
    if n == 0:
        raise EmptyCorpus("no samples for quantile")
    idx = math.ceil(q * n - 1e-9)
    return float(s[min(max(idx, 0), n - 1)])


@dataclass
class CalibrationReport:
    config: DetectionConfig
    benign_percentiles: dict
    adversarial_percentiles: dict
    tpr: float
    fpr: float
    overlap: bool
    heldout: bool
    fast_coverage: float
    slow_coverage: float

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "benign_percentiles": self.benign_percentiles,
            "adversarial_percentiles": self.adversarial_percentiles,
            "tpr": self.tpr, "fpr": self.fpr,
            "overlap": self.overlap, "heldout": self.heldout,
            "fast_coverage": self.fast_coverage, "slow_coverage": self.slow_coverage,
        }


def _percentiles(samples):
    return {str(p): nearest_rank_quantile(samples, p / 100.0) for p in range(0, 101, 10)}


def calibrate(benign_samples, adversarial_samples, fast_coverage=0.80,
              slow_coverage=0.95, params=None, max_runs=4, base_seed=0,
              heldout_benign=None, heldout_adversarial=None):
    """Fit detection thresholds from first-run CPDN corpora.

    Fast-path thresholds cover `fast_coverage` of each corpus, conservative
    thresholds `slow_coverage`. If the ordering t1p<=t1<=t2<=t2p collapses,
    the conservative pair is clamped to the fast-pair midpoint and the report
    is flagged. TPR/FPR are the single-run rates (adversarial iff CPDN > t2p)
    on the held-out samples when given, else resubstituted on the fit samples.
    """
    benign = np.asarray(benign_samples, dtype=np.float64)
    adv = np.asarray(adversarial_samples, dtype=np.float64)
    if benign.size == 0 or adv.size == 0:
        raise EmptyCorpus("calibration needs nonempty benign and adversarial samples")

    t1p = nearest_rank_quantile(benign, fast_coverage)
    t1 = nearest_rank_quantile(benign, slow_coverage)
    t2p = nearest_rank_quantile(adv, 1.0 - fast_coverage)
    t2 = nearest_rank_quantile(adv, 1.0 - slow_coverage)

    overlap = not (t1p <= t1 <= t2 <= t2p)
    if overlap:
        mid = 0.5 * (t1p + t2p)
        t1 = t2 = mid
        t1p = min(t1p, mid)
        t2p = max(t2p, mid)

    config = DetectionConfig(
        t1=t1, t2=t2, t1p=t1p, t2p=t2p, max_runs=max_runs,
        params=params or SparsifierParams(), base_seed=base_seed)

    eb = benign if heldout_benign is None else np.asarray(heldout_benign, dtype=np.float64)
    ea = adv if heldout_adversarial is None else np.asarray(heldout_adversarial, dtype=np.float64)
    tpr = float((ea > config.t2p).mean()) if ea.size else 0.0
    fpr = float((eb > config.t2p).mean()) if eb.size else 0.0

    return CalibrationReport(
        config=config,
        benign_percentiles=_percentiles(benign),
        adversarial_percentiles=_percentiles(adv),
        tpr=tpr, fpr=fpr, overlap=overlap,
        heldout=heldout_benign is not None or heldout_adversarial is not None,
        fast_coverage=fast_coverage, slow_coverage=slow_coverage,
    )


def verdicts_to_csv_rows(verdicts, input_ids=None):
    """CSV rows: input_id, label, runs_used, mean_l1, terminated_by."""
    if input_ids is None:
        input_ids = range(len(verdicts))
    rows = [("input_id", "label", "runs_used", "mean_l1", "terminated_by")]
    for i, v in zip(input_ids, verdicts):
        rows.append((str(i), v.label, str(v.runs_used), f"{v.mean_l1:.9g}", v.terminated_by))
    return rows


def save_detection_config(config, path):
    with open(path, "w") as f:
        json.dump(config.to_dict(), f, indent=1, sort_keys=True)


def load_detection_config(path):
    with open(path) as f:
        return DetectionConfig.from_dict(json.load(f))
