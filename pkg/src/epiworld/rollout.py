"""Counterfactual rollout engine.

Simulates latent futures and synthetic surveillance under candidate action
sequences, starting from a belief (one weighted particle draw per rollout)
or a known state. Paired counterfactuals reuse the same per-week derived
random streams, so trajectories are bit-identical up to the divergence week
and differ afterwards only through the intervention, not the noise.

Outcome metrics follow the hospitalization-centric evaluation: peak and
end-of-horizon admissions per 100k, ICU-capacity violation weeks (census
above a per-100k threshold), and cumulative infections.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    Action,
    LatentState,
    ModelParams,
    RngStream,
    ValidationError,
    validate_action,
)
from .dynamics import step
from .filtering import Belief
from .observation import MisreportingRegime, Observation, REPORT_SCALE, observe

DEFAULT_ICU_CAPACITY = 30.0  # Hosp census per 100k; invented default


@dataclass(frozen=True)
class OutcomeMetrics:
    """Scalar outcomes of one rollout. Zero-filled for an empty horizon."""

    cumulative_infections: float
    peak_hosp_per_100k: float
    peak_week: int
    icu_violation_weeks: int
    end_hosp_per_100k: float

    def __post_init__(self):
        for name in ("cumulative_infections", "peak_hosp_per_100k",
                     "peak_week", "icu_violation_weeks", "end_hosp_per_100k"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} negative")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "OutcomeMetrics":
        return cls(**d)


@dataclass(frozen=True)
class RolloutResult:
    """One simulated future: latent path, synthetic observations, metrics."""

    states: tuple
    observations: tuple
    metrics: OutcomeMetrics
    actions: tuple
    seed: int

    @property
    def horizon(self) -> int:
        return len(self.states)

    def hosp_series_per_100k(self) -> list[float]:
        return [s.hosp_admissions * REPORT_SCALE for s in self.states]

    def census_series_per_100k(self) -> list[float]:
        return [s.Hosp * REPORT_SCALE for s in self.states]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "actions": [a.to_json_dict() for a in self.actions],
            "metrics": self.metrics.to_json_dict(),
            "weeks": [
                {
                    "week": o.week_index,
                    "latent": {
                        "S": s.S, "E": s.E, "I": s.I, "R": s.R, "Hosp": s.Hosp,
                        "new_infections": s.new_infections,
                        "hosp_admissions": s.hosp_admissions,
                        "b": s.b, "f": s.f, "m": s.m, "w": s.w,
                    },
                    "observation": o.to_json_dict(),
                }
                for s, o in zip(self.states, self.observations)
            ],
        }


def compute_metrics(states, icu_capacity: float = DEFAULT_ICU_CAPACITY) -> OutcomeMetrics:
    """Summarize a latent trajectory; all-zero metrics for an empty one."""
    if not states:
        return OutcomeMetrics(0.0, 0.0, 0, 0, 0.0)
    admissions = [s.hosp_admissions * REPORT_SCALE for s in states]
    census = [s.Hosp * REPORT_SCALE for s in states]
    peak_idx = int(np.argmax(admissions))  # first max on ties
    return OutcomeMetrics(
        cumulative_infections=float(sum(s.new_infections for s in states)),
        peak_hosp_per_100k=float(admissions[peak_idx]),
        peak_week=peak_idx + 1,
        icu_violation_weeks=int(sum(1 for c in census if c > icu_capacity)),
        end_hosp_per_100k=float(admissions[-1]),
    )


def _sample_start(start, rng: RngStream):
    """Resolve the rollout's initial state and calendar week."""
    if isinstance(start, LatentState):
        return start, 0
    if isinstance(start, Belief):
        gen = rng.child("pick").generator()
        idx = int(gen.choice(start.particle_count, p=start.weights))
        return start.particles[idx], start.week_index
    raise ValidationError(f"start must be LatentState or Belief, got {type(start).__name__}")


def _check_vaccination(vaccination, horizon):
    if vaccination is None:
        return [0.0] * horizon
    vacc = [float(v) for v in vaccination]
    if len(vacc) != horizon:
        raise ValidationError(f"vaccination length {len(vacc)} != horizon {horizon}")
    if any(v < 0 for v in vacc):
        raise ValidationError("vaccination fractions must be nonnegative")
    return vacc


def rollout(start, actions, params: ModelParams, regime: MisreportingRegime,
            rng: RngStream, vaccination=None,
            icu_capacity: float = DEFAULT_ICU_CAPACITY) -> RolloutResult:
    """Simulate H weeks forward under a fixed action sequence.

    Each week k consumes the derived streams rng.child("week", k) and
    rng.child("obs", k), so two rollouts sharing rng see identical noise in
    every week, whatever happened earlier (common random numbers).
    """
    actions = tuple(actions)
    for a in actions:
        if not isinstance(a, Action):
            raise ValidationError("actions must be Action instances")
        bad = validate_action(a)
        if bad:
            raise ValidationError("; ".join(bad))
    if not isinstance(rng, RngStream):
        raise ValidationError("rollout requires an RngStream for stream derivation")
    vacc = _check_vaccination(vaccination, len(actions))

    state, start_week = _sample_start(start, rng)
    states: list[LatentState] = []
    observations: list[Observation] = []
    for k, a in enumerate(actions, start=1):
        state = step(state, a, params, rng.child("week", k), vacc_fraction=vacc[k - 1])
        obs = observe(state, a, regime, params, rng.child("obs", k),
                      week_index=start_week + k)
        states.append(state)
        observations.append(obs)

    return RolloutResult(states=tuple(states), observations=tuple(observations),
                         metrics=compute_metrics(states, icu_capacity),
                         actions=actions, seed=rng.seed)


def counterfactual_compare(start, baseline, alternative, divergence_week: int,
                           params: ModelParams, regime: MisreportingRegime,
                           seed: int, vaccination_baseline=None,
                           vaccination_alternative=None,
                           icu_capacity: float = DEFAULT_ICU_CAPACITY):
    """Paired rollouts under common random numbers.

    baseline and alternative (actions and vaccination schedules) must agree
    strictly before divergence_week (0-based index into the sequences);
    trajectories are then bit-identical before that week.
    """
    baseline = tuple(baseline)
    alternative = tuple(alternative)
    if len(baseline) != len(alternative):
        raise ValidationError("baseline and alternative lengths differ")
    d = int(divergence_week)
    if d < 0 or d > len(baseline):
        raise ValidationError(f"divergence_week {d} outside [0, {len(baseline)}]")
    for k in range(d):
        if baseline[k].dims != alternative[k].dims:
            raise ValidationError(
                f"action sequences differ at week {k}, before divergence week {d}")
    vb = _check_vaccination(vaccination_baseline, len(baseline))
    va = _check_vaccination(vaccination_alternative, len(alternative))
    if vb[:d] != va[:d]:
        raise ValidationError(
            f"vaccination schedules differ before divergence week {d}")

    rng = RngStream(seed=int(seed)).child("counterfactual")
    res_base = rollout(start, baseline, params, regime, rng,
                       vaccination=vb, icu_capacity=icu_capacity)
    res_alt = rollout(start, alternative, params, regime, rng,
                      vaccination=va, icu_capacity=icu_capacity)
    return res_base, res_alt


@dataclass(frozen=True)
class RankedCandidate:
    index: int
    score: float
    violating: bool
    result: RolloutResult


def evaluate(results, reward_spec) -> list[RankedCandidate]:
    """Rank candidate rollouts by scalarized metrics.

    reward_spec must expose score(metrics) -> float. Candidates with ICU
    violations rank below every violation-free candidate regardless of
    score; ties break by candidate index.
    """
    results = list(results)
    if not results:
        raise ValidationError("evaluate needs at least one rollout")
    ranked = []
    for i, res in enumerate(results):
        ranked.append(RankedCandidate(
            index=i,
            score=float(reward_spec.score(res.metrics)),
            violating=res.metrics.icu_violation_weeks > 0,
            result=res))
    ranked.sort(key=lambda c: (c.violating, -c.score, c.index))
    return ranked


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

FAN_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
FAN_CHANNELS = ("hosp", "cases", "census")


def write_fan_chart_csv(path, results, channel: str = "hosp") -> None:
    """Per-week quantiles of one channel across a set of rollouts."""
    if channel not in FAN_CHANNELS:
        raise ValidationError(f"channel must be one of {FAN_CHANNELS}")
    results = list(results)
    if not results:
        raise ValidationError("fan chart needs at least one rollout")
    horizons = {r.horizon for r in results}
    if len(horizons) != 1:
        raise ValidationError("fan chart rollouts must share a horizon")

    def series(r):
        if channel == "hosp":
            return r.hosp_series_per_100k()
        if channel == "census":
            return r.census_series_per_100k()
        return [o.reported_cases_per_100k for o in r.observations]

    mat = np.array([series(r) for r in results])  # (K, H)
    header = ["week", "mean"] + [f"q{int(q * 100):02d}" for q in FAN_QUANTILES]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for k in range(mat.shape[1]):
            col = mat[:, k]
            row = [k + 1, repr(float(col.mean()))]
            row += [repr(float(np.quantile(col, q))) for q in FAN_QUANTILES]
            wr.writerow(row)
