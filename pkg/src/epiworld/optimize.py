"""Policy improvement on top of world-model rollouts.

Three optimizers, all derivative-free with respect to the simulator and all
bit-reproducible given seeds:

  cem_plan          cross-entropy method over per-(week, dim) categorical
                    action distributions; returns the best-ever sequence
  grpo_step         group-relative gradient ascent on Softmax policy
                    logits: advantages are group-standardized returns, the
                    gradient is the exact categorical score function
  iterate_feedback  greedy hill climb on Threshold rule parameters (tau and
                    level), the scripted analog of refine-from-feedback

Rewards scalarize OutcomeMetrics; the default is the negative end-of-horizon
hospitalization admissions rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ACTION_MAX_LEVEL,
    N_ACTION_DIMS,
    Action,
    ValidationError,
    derive_stream,
)
from .observation import MisreportingRegime
from .policy import N_LEVELS, PolicySpec, ThresholdRule, softmax_probs
from .rollout import DEFAULT_ICU_CAPACITY, evaluate, rollout


@dataclass(frozen=True)
class RewardSpec:
    """Linear scalarization of OutcomeMetrics plus an ICU penalty."""

    w_cumulative_infections: float = 0.0
    w_peak_hosp: float = 0.0
    w_end_hosp: float = -1.0
    icu_penalty_per_week: float = 0.0

    def __post_init__(self):
        for name in ("w_cumulative_infections", "w_peak_hosp", "w_end_hosp",
                     "icu_penalty_per_week"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    def score(self, metrics) -> float:
        return (self.w_cumulative_infections * metrics.cumulative_infections
                + self.w_peak_hosp * metrics.peak_hosp_per_100k
                + self.w_end_hosp * metrics.end_hosp_per_100k
                - self.icu_penalty_per_week * metrics.icu_violation_weeks)

    def to_json_dict(self) -> dict:
        return {"w_cumulative_infections": self.w_cumulative_infections,
                "w_peak_hosp": self.w_peak_hosp,
                "w_end_hosp": self.w_end_hosp,
                "icu_penalty_per_week": self.icu_penalty_per_week}

    @classmethod
    def from_json_dict(cls, d: dict) -> "RewardSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# Cross-entropy method over action sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CemConfig:
    population: int = 64
    elites: int = 8
    iters: int = 10
    prob_floor: float = 1e-3  # keeps refit distributions strictly positive

    def __post_init__(self):
        if not self.population >= self.elites >= 1:
            raise ValidationError("need population >= elites >= 1")
        if self.iters < 1:
            raise ValidationError("iters must be >= 1")
        if not 0 <= self.prob_floor < 1.0 / N_LEVELS:
            raise ValidationError("prob_floor must lie in [0, 1/levels)")


@dataclass(frozen=True)
class CemResult:
    actions: tuple
    score: float
    trace: tuple  # one dict per iteration

    def to_json_dict(self) -> dict:
        return {"actions": [a.to_json_dict() for a in self.actions],
                "score": self.score, "trace": [dict(e) for e in self.trace]}


def _sample_sequences(probs: np.ndarray, population: int, gen) -> np.ndarray:
    """(population, H, 13) level draws from per-cell categoricals."""
    H = probs.shape[0]
    cum = np.cumsum(probs, axis=2)             # (H, 13, 5)
    u = gen.random((population, H, N_ACTION_DIMS))
    # searchsorted per cell via comparison: level = #levels with cum < u
    levels = (u[..., None] > cum[None, ...]).sum(axis=3)
    return np.minimum(levels, ACTION_MAX_LEVEL)


def cem_plan(start, H: int, config: CemConfig, reward_spec: RewardSpec,
             params, seed: int, regime: MisreportingRegime | None = None,
             vaccination=None, icu_capacity: float = DEFAULT_ICU_CAPACITY) -> CemResult:
    """Plan an H-week action sequence by cross-entropy search.

    All candidates within an iteration share one rollout stream (common
    random numbers), so ranking reflects actions rather than luck.
    """
    if H < 0:
        raise ValidationError("H must be nonnegative")
    if H == 0:
        return CemResult(actions=(), score=0.0, trace=())
    regime = regime or MisreportingRegime.none()
    root = derive_stream(seed).child("cem")
    probs = np.full((H, N_ACTION_DIMS, N_LEVELS), 1.0 / N_LEVELS)

    best_key = None
    best_actions = None
    best_score = -math.inf
    trace = []
    for it in range(config.iters):
        gen = root.child("sample", it).generator()
        levels = _sample_sequences(probs, config.population, gen)
        candidates = [
            tuple(Action(dims=tuple(int(v) for v in levels[i, h]), week_index=h)
                  for h in range(H))
            for i in range(config.population)
        ]
        roll_rng = root.child("roll", it)
        results = [rollout(start, seq, params, regime, roll_rng,
                           vaccination=vaccination, icu_capacity=icu_capacity)
                   for seq in candidates]
        ranked = evaluate(results, reward_spec)

        elites = ranked[:config.elites]
        for cand in elites:
            key = (cand.violating, -cand.score)
            if best_key is None or key < best_key:
                best_key = key
                best_actions = candidates[cand.index]
                best_score = cand.score

        # refit each (week, dim) categorical to elite frequencies
        elite_levels = np.array([levels[c.index] for c in elites])  # (E, H, 13)
        counts = np.zeros_like(probs)
        for lvl in range(N_LEVELS):
            counts[:, :, lvl] = (elite_levels == lvl).sum(axis=0)
        probs = counts / counts.sum(axis=2, keepdims=True)
        if config.prob_floor > 0:
            probs = np.maximum(probs, config.prob_floor)
            probs = probs / probs.sum(axis=2, keepdims=True)

        trace.append({
            "iter": it,
            "best_ever_score": float(best_score),
            "mean_elite_score": float(np.mean([c.score for c in elites])),
            "mean_pop_score": float(np.mean([c.score for c in ranked])),
            "elite_violations": int(sum(c.violating for c in elites)),
        })

    return CemResult(actions=best_actions, score=float(best_score), trace=tuple(trace))


# ---------------------------------------------------------------------------
# Group-relative gradient on Softmax policies
# ---------------------------------------------------------------------------

ADVANTAGE_EPS = 1e-8


@dataclass(frozen=True)
class GroupMember:
    """One sampled trajectory: the infos seen, actions taken, and return."""

    infos: tuple
    actions: tuple
    reward: float

    def __post_init__(self):
        if len(self.infos) != len(self.actions):
            raise ValidationError("infos and actions lengths differ")
        if not self.actions:
            raise ValidationError("group member has no actions")


def grpo_advantages(rewards, eps: float = ADVANTAGE_EPS) -> np.ndarray:
    """Group-standardized returns: (R - mean) / (std + eps)."""
    r = np.asarray(list(rewards), dtype=np.float64)
    if r.size < 2:
        raise ValidationError("group statistics need G >= 2")
    return (r - r.mean()) / (r.std() + eps)


def grpo_surrogate(spec: PolicySpec, members, advantages) -> float:
    """sum_i A_i * sum_t log pi(a_{i,t} | info_{i,t}); gradient target."""
    total = 0.0
    for member, adv in zip(members, advantages):
        for info, action in zip(member.infos, member.actions):
            probs = softmax_probs(spec, info)
            lp = 0.0
            for d in range(N_ACTION_DIMS):
                lp += math.log(probs[d, action.dims[d]])
            total += adv * lp
    return float(total)


def grpo_gradient(spec: PolicySpec, members, advantages) -> np.ndarray:
    """Exact gradient of grpo_surrogate with respect to the logit weights.

    For one categorical draw, d log pi(a_d) / d W[d, l, f]
    = (1[l = a_d] - pi_d[l]) * feat[f] / temperature.
    """
    grad = np.zeros_like(spec.weights)
    for member, adv in zip(members, advantages):
        for info, action in zip(member.infos, member.actions):
            probs = softmax_probs(spec, info)          # (13, 5)
            feat = info.features()                     # (F,)
            onehot = np.zeros((N_ACTION_DIMS, N_LEVELS))
            onehot[np.arange(N_ACTION_DIMS), list(action.dims)] = 1.0
            grad += adv * (onehot - probs)[:, :, None] * feat[None, None, :] \
                / spec.temperature
    return grad


def grpo_step(spec: PolicySpec, members, learning_rate: float) -> PolicySpec:
    """One group-relative update of a Softmax policy's logit weights."""
    if spec.kind != "softmax":
        raise ValidationError("grpo_step requires a softmax policy")
    members = list(members)
    if len(members) < 2:
        raise ValidationError("group statistics need G >= 2")
    adv = grpo_advantages([m.reward for m in members])
    grad = grpo_gradient(spec, members, adv)
    new_w = spec.weights + learning_rate * grad
    return PolicySpec.softmax(new_w, temperature=spec.temperature)


# ---------------------------------------------------------------------------
# Iterative feedback on Threshold policies
# ---------------------------------------------------------------------------


def iterate_feedback(spec: PolicySpec, history, rule_budget: int, score_fn) -> PolicySpec:
    """Greedy threshold refinement: try rule edits, keep strict improvements.

    score_fn(spec) -> float must be deterministic (fix its seed inside).
    history is a non-empty list of {"spec", "score"} records of previous
    evaluations; trials made here are appended to it. At most rule_budget
    candidate edits are scored; the returned spec never scores below the
    input spec under the same score_fn.
    """
    if spec.kind != "threshold":
        raise ValidationError("iterate_feedback requires a threshold policy")
    if not history:
        raise ValidationError("history must be non-empty")
    if rule_budget < 0:
        raise ValidationError("rule_budget must be nonnegative")

    best_spec = spec
    best_score = None
    for rec in history:
        if rec["spec"] == spec:
            best_score = rec["score"]
    if best_score is None:
        best_score = float(score_fn(spec))
        history.append({"spec": spec, "score": best_score})

    trials = 0
    improved = True
    while improved and trials < rule_budget:
        improved = False
        for ridx, rule in enumerate(best_spec.rules):
            delta = 0.1 * max(abs(rule.tau), 0.5)
            edits = [
                {"tau": rule.tau - delta},
                {"tau": rule.tau + delta},
                {"level": rule.level - 1},
                {"level": rule.level + 1},
            ]
            for edit in edits:
                if trials >= rule_budget:
                    break
                level = edit.get("level", rule.level)
                if not 0 <= level <= ACTION_MAX_LEVEL:
                    continue
                new_rule = ThresholdRule(signal=rule.signal,
                                         tau=float(edit.get("tau", rule.tau)),
                                         dims=rule.dims, level=int(level))
                rules = list(best_spec.rules)
                rules[ridx] = new_rule
                cand = PolicySpec.threshold(tuple(rules), best_spec.base_levels)
                score = float(score_fn(cand))
                history.append({"spec": cand, "score": score})
                trials += 1
                if score > best_score:
                    best_spec, best_score = cand, score
                    improved = True
            if trials >= rule_budget:
                break
    return best_spec


def write_optlog_jsonl(path, entries) -> None:
    """One JSON object per line; entries must be JSON-ready dicts."""
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
