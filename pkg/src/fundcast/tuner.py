"""Hold-out validation splits and hyperparameter search.

Uniform random search over a box of per-parameter ranges, with an optional
two-phase adaptive mode that refits the sampling ranges to the top quartile
of the first phase. Every trial is seeded from (seed, trial_index) so
trials are reproducible and order-independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .boostwood import HyperParams
from .errors import SearchError, WindowTooSmallError

SCALES = ("linear", "log", "integer")


@dataclass(frozen=True)
class ParamRange:
    lo: float
    hi: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.lo > self.hi:
            raise ValueError(f"range lo {self.lo} > hi {self.hi}")
        if self.scale == "log" and self.lo <= 0:
            raise ValueError("log scale requires a positive lower bound")

    def sample(self, rng: np.random.Generator) -> float:
        if self.scale == "integer":
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        if self.scale == "log":
            return float(np.exp(rng.uniform(np.log(self.lo), np.log(self.hi))))
        return float(rng.uniform(self.lo, self.hi))

    def contains(self, value) -> bool:
        return self.lo <= value <= self.hi


@dataclass
class SearchSpace:
    """Per-hyperparameter sampling ranges."""

    ranges: dict = field(default_factory=dict)

    def sample(self, rng: np.random.Generator, base: HyperParams) -> HyperParams:
        draws = {name: rng_.sample(rng) for name, rng_ in self.ranges.items()}
        return replace(base, **draws)


def default_space() -> SearchSpace:
    """Default search box for the nine tuned parameters."""
    return SearchSpace({
        "learning_rate": ParamRange(0.6, 1.0),
        "max_bin": ParamRange(127, 255, "integer"),
        "num_leaves": ParamRange(50, 200, "integer"),
        "min_data_in_leaf": ParamRange(500, 1400, "integer"),
        "feature_fraction": ParamRange(0.3, 0.8),
        "bagging_fraction": ParamRange(0.4, 0.8),
        "bagging_freq": ParamRange(2, 8, "integer"),
        "min_gain_to_split": ParamRange(0.5, 0.72),
        "lambda_l1": ParamRange(1.0, 20.0),
        "lambda_l2": ParamRange(350.0, 450.0),
    })


@dataclass
class TrialRecord:
    index: int
    params: HyperParams
    validation_metric: float
    train_metric: float
    wall_time: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_record(self) -> dict:
        out = {
            "index": self.index,
            "validation_metric": None if np.isnan(self.validation_metric)
                else float(self.validation_metric),
            "train_metric": None if np.isnan(self.train_metric)
                else float(self.train_metric),
            "wall_time": float(self.wall_time),
            "error": self.error,
        }
        out["params"] = {k: (v if not isinstance(v, float) else float(v))
                         for k, v in vars(self.params).items()}
        return out


def make_validation_split(train_keys, size_quarters: int, mode: str, seed: int):
    """Partition training keys into (train_idx, validation_idx) by quarter.

    chronological_tail reserves the last size_quarters calendar quarters
    wholesale; random_quarters reserves size_quarters distinct quarters
    drawn uniformly. No key lands on both sides.
    """
    if mode not in ("chronological_tail", "random_quarters"):
        raise ValueError(f"unknown validation mode {mode!r}")
    quarters = sorted({q for _, q in train_keys})
    if len(quarters) < size_quarters + 1:
        raise WindowTooSmallError(
            f"window spans {len(quarters)} quarters; "
            f"need >= {size_quarters + 1} for a {size_quarters}-quarter split")
    if mode == "chronological_tail":
        held = set(quarters[-size_quarters:])
    else:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(quarters), size=size_quarters, replace=False)
        held = {quarters[i] for i in picks}
    in_valid = np.array([q in held for _, q in train_keys], dtype=bool)
    idx = np.arange(len(train_keys))
    return idx[~in_valid], idx[in_valid]


def search(space: SearchSpace, budget: int, objective, seed: int, *,
           base_params: HyperParams | None = None, mode: str = "uniform"):
    """Sample budget parameter vectors and keep the best validation metric.

    objective(params) returns (validation_metric, train_metric); a trial
    exception is recorded, not fatal, unless every trial fails. Ties on the
    metric go to the earliest trial.
    """
    if budget < 1:
        raise SearchError(f"budget must be >= 1, got {budget}")
    if mode not in ("uniform", "adaptive"):
        raise ValueError(f"unknown search mode {mode!r}")
    base = base_params if base_params is not None else HyperParams()

    trials = []
    last_error = None

    def run_trial(index: int, box: SearchSpace) -> TrialRecord:
        nonlocal last_error
        rng = np.random.default_rng([seed, index])
        params = box.sample(rng, base)
        params = replace(params, seed=int(np.random.default_rng(
            [seed, index, 1]).integers(0, 2 ** 31)))
        t0 = time.perf_counter()
        try:
            val, train = objective(params)
            record = TrialRecord(index, params, float(val), float(train),
                                 time.perf_counter() - t0)
        except Exception as exc:  # per-trial failures are recorded
            last_error = exc
            record = TrialRecord(index, params, float("nan"), float("nan"),
                                 time.perf_counter() - t0, error=str(exc))
        trials.append(record)
        return record

    if mode == "uniform":
        for i in range(budget):
            run_trial(i, space)
    else:
        phase1 = max(1, budget // 2)
        for i in range(phase1):
            run_trial(i, space)
        box = _refit_box(space, trials)
        for i in range(phase1, budget):
            run_trial(i, box)

    best = None
    for record in trials:
        if not record.ok:
            continue
        if best is None or record.validation_metric > best.validation_metric:
            best = record
    if best is None:
        raise SearchError(f"all {budget} trials failed") from last_error
    return best.params, trials


def _refit_box(space: SearchSpace, trials) -> SearchSpace:
    """Shrink each range to the top-quartile trials' parameter envelope."""
    ok = sorted((t for t in trials if t.ok),
                key=lambda t: -t.validation_metric)
    if not ok:
        return space
    top = ok[:max(1, len(ok) // 4)]
    ranges = {}
    for name, rng_ in space.ranges.items():
        values = [getattr(t.params, name) for t in top]
        ranges[name] = ParamRange(min(values), max(values), rng_.scale)
    return SearchSpace(ranges)
