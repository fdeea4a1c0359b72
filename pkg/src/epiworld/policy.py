"""Policy abstraction and evaluation metrics.

Three pluggable policy families map an information state (belief summary
plus latest surveillance) to a 13-dim ordinal action:

  Replay    fixed action table by week (historical or scripted schedules)
  Threshold deterministic trigger rules on information-state signals
  Softmax   per-dim categorical over levels 0..4 with logits linear in a
            small feature vector, temperature-scaled (the differentiable
            family used by group-relative gradient updates)

Threshold rules are tighten-only by construction: worsening signals can
only raise intervention levels, so the policy is monotone in each signal.

Metrics: alignment (exact per-cell match percentage between proposed and
realized sequences) and hospitalization reduction (percent decrease from
start to end of a per-100k series, plus a mean-over-series variant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ACTION_MAX_LEVEL,
    N_ACTION_DIMS,
    Action,
    RngStream,
    ValidationError,
)

N_LEVELS = ACTION_MAX_LEVEL + 1
FEATURE_NAMES = ("bias", "I_mean", "effective_R", "survey_compliance")
N_FEATURES = len(FEATURE_NAMES)

# comparator each signal must use so that "worse" never lowers a level
SIGNAL_COMPARATORS = {
    "effective_R": ">",
    "I_mean": ">",
    "cases_per_100k": ">",
    "survey_compliance": "<",
}


@dataclass(frozen=True)
class PolicyInfo:
    """Information state handed to a policy: belief summary + last signals."""

    I_mean: float = 0.0
    effective_R: float = 0.0
    survey_compliance: float = 0.0
    cases_per_100k: float = 0.0

    def signal(self, name: str) -> float:
        if name not in SIGNAL_COMPARATORS:
            raise ValidationError(f"unknown signal {name!r}")
        return float(getattr(self, name))

    def features(self) -> np.ndarray:
        return np.array([1.0, self.I_mean, self.effective_R, self.survey_compliance])

    @classmethod
    def from_belief(cls, belief, action, params, last_obs=None) -> "PolicyInfo":
        from .filtering import belief_summary

        summ = belief_summary(belief, action, params)
        return cls(
            I_mean=summ["I_mean"],
            effective_R=summ["effective_R_mean"],
            survey_compliance=last_obs.survey_compliance if last_obs else 0.0,
            cases_per_100k=last_obs.reported_cases_per_100k if last_obs else 0.0)


@dataclass(frozen=True)
class ThresholdRule:
    """Raise dims to at least `level` when the signal crosses tau."""

    signal: str
    tau: float
    dims: tuple[int, ...]
    level: int

    def __post_init__(self):
        if self.signal not in SIGNAL_COMPARATORS:
            raise ValidationError(f"unknown signal {self.signal!r}")
        if not math.isfinite(self.tau):
            raise ValidationError("tau must be finite")
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise ValidationError("rule must name at least one dim")
        if any(not 0 <= d < N_ACTION_DIMS for d in dims):
            raise ValidationError("rule dim index out of range")
        if not 0 <= self.level <= ACTION_MAX_LEVEL:
            raise ValidationError(f"rule level outside 0..{ACTION_MAX_LEVEL}")

    def fires(self, info: PolicyInfo) -> bool:
        value = info.signal(self.signal)
        if SIGNAL_COMPARATORS[self.signal] == ">":
            return value > self.tau
        return value < self.tau

    def to_json_dict(self) -> dict:
        return {"signal": self.signal, "tau": self.tau,
                "dims": list(self.dims), "level": self.level}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ThresholdRule":
        return cls(signal=str(d["signal"]), tau=float(d["tau"]),
                   dims=tuple(d["dims"]), level=int(d["level"]))


KINDS = ("replay", "threshold", "softmax")


@dataclass(frozen=True)
class PolicySpec:
    """One concrete policy. Payload fields depend on kind (see module doc)."""

    kind: str
    table: tuple = ()                      # replay: Action per week
    rules: tuple = ()                      # threshold: ThresholdRule list
    base_levels: tuple = (0,) * N_ACTION_DIMS  # threshold: default levels
    weights: np.ndarray | None = None      # softmax: (13, 5, F) logit weights
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "replay":
            table = tuple(self.table)
            if not table:
                raise ValidationError("replay policy needs a non-empty table")
            if not all(isinstance(a, Action) for a in table):
                raise ValidationError("replay table entries must be Actions")
            object.__setattr__(self, "table", table)
        elif self.kind == "threshold":
            rules = tuple(self.rules)
            if not all(isinstance(r, ThresholdRule) for r in rules):
                raise ValidationError("threshold rules must be ThresholdRule instances")
            object.__setattr__(self, "rules", rules)
            base = tuple(int(v) for v in self.base_levels)
            if len(base) != N_ACTION_DIMS or any(
                    not 0 <= v <= ACTION_MAX_LEVEL for v in base):
                raise ValidationError("base_levels must be 13 levels in 0..4")
            object.__setattr__(self, "base_levels", base)
        else:
            if self.weights is None:
                raise ValidationError("softmax policy needs a weights array")
            w = np.array(self.weights, dtype=np.float64)  # owned copy
            if w.shape != (N_ACTION_DIMS, N_LEVELS, N_FEATURES):
                raise ValidationError(
                    f"weights shape {w.shape} != {(N_ACTION_DIMS, N_LEVELS, N_FEATURES)}")
            if not np.all(np.isfinite(w)):
                raise ValidationError("weights must be finite")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)
            if not self.temperature > 0:
                raise ValidationError("temperature must be positive")

    @classmethod
    def replay(cls, table) -> "PolicySpec":
        return cls(kind="replay", table=tuple(table))

    @classmethod
    def threshold(cls, rules, base_levels=(0,) * N_ACTION_DIMS) -> "PolicySpec":
        return cls(kind="threshold", rules=tuple(rules), base_levels=tuple(base_levels))

    @classmethod
    def softmax(cls, weights, temperature: float = 1.0) -> "PolicySpec":
        return cls(kind="softmax", weights=weights, temperature=temperature)

    def to_json_dict(self) -> dict:
        if self.kind == "replay":
            return {"kind": "replay", "table": [a.to_json_dict() for a in self.table]}
        if self.kind == "threshold":
            return {"kind": "threshold",
                    "rules": [r.to_json_dict() for r in self.rules],
                    "base_levels": list(self.base_levels)}
        return {"kind": "softmax", "weights": self.weights.tolist(),
                "temperature": self.temperature}

    @classmethod
    def from_json_dict(cls, d: dict) -> "PolicySpec":
        kind = d.get("kind")
        if kind == "replay":
            return cls.replay(Action.from_json_dict(a) for a in d["table"])
        if kind == "threshold":
            return cls.threshold(
                (ThresholdRule.from_json_dict(r) for r in d["rules"]),
                tuple(d.get("base_levels", (0,) * N_ACTION_DIMS)))
        if kind == "softmax":
            return cls.softmax(np.array(d["weights"], dtype=np.float64),
                               float(d.get("temperature", 1.0)))
        raise ValidationError(f"unknown policy kind {kind!r}")


def softmax_probs(spec: PolicySpec, info: PolicyInfo) -> np.ndarray:
    """(13, 5) per-dim categorical probabilities of a softmax policy."""
    if spec.kind != "softmax":
        raise ValidationError("softmax_probs requires a softmax policy")
    feat = info.features()
    z = spec.weights @ feat / spec.temperature  # (13, 5)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def propose(spec: PolicySpec, info: PolicyInfo, week: int, rng=None) -> Action:
    """Draw (or compute) this week's action from the policy."""
    if spec.kind == "replay":
        if not 0 <= week < len(spec.table):
            raise ValidationError(
                f"horizon exceeds table: week {week}, table length {len(spec.table)}")
        return Action(dims=spec.table[week].dims, week_index=week)

    if spec.kind == "threshold":
        levels = list(spec.base_levels)
        for rule in spec.rules:
            if rule.fires(info):
                for d in rule.dims:
                    levels[d] = max(levels[d], rule.level)
        return Action(dims=tuple(levels), week_index=week)

    probs = softmax_probs(spec, info)
    if isinstance(rng, RngStream):
        gen = rng.generator()
    elif isinstance(rng, np.random.Generator):
        gen = rng
    else:
        raise ValidationError("softmax propose requires an rng")
    u = gen.random(N_ACTION_DIMS)
    cum = np.cumsum(probs, axis=1)
    dims = tuple(int(np.searchsorted(cum[d], u[d], side="right"))
                 for d in range(N_ACTION_DIMS))
    dims = tuple(min(v, ACTION_MAX_LEVEL) for v in dims)
    return Action(dims=dims, week_index=week)


# ---------------------------------------------------------------------------
# Evaluation metrics
# ---------------------------------------------------------------------------


def alignment(proposed, realized) -> float:
    """Percentage of (week, dim) cells where the ordinal levels match."""
    proposed = list(proposed)
    realized = list(realized)
    if len(proposed) != len(realized):
        raise ValidationError(
            f"length mismatch: {len(proposed)} proposed vs {len(realized)} realized")
    if not proposed:
        raise ValidationError("alignment of empty sequences is undefined")
    matches = 0
    for p, r in zip(proposed, realized):
        matches += sum(1 for x, y in zip(p.dims, r.dims) if x == y)
    return 100.0 * matches / (len(proposed) * N_ACTION_DIMS)


def hosp_reduction(series) -> float:
    """Percent decrease from first to last value of a per-100k series."""
    series = [float(v) for v in series]
    if not series:
        raise ValidationError("hosp_reduction needs a non-empty series")
    start, end = series[0], series[-1]
    if start <= 0:
        raise ValidationError("undefined reduction: series starts at zero")
    return 100.0 * (start - end) / start


def hosp_reduction_mean(series_collection) -> float:
    """Mean of per-series reductions (the per-state-then-average variant)."""
    series_list = [list(s) for s in series_collection]
    if not series_list:
        raise ValidationError("hosp_reduction_mean needs at least one series")
    return float(np.mean([hosp_reduction(s) for s in series_list]))
