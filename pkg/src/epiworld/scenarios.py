"""Case-study harness and data plumbing.

Binds the engine pieces into reproducible experiments:

  run_case_misreporting   closed-loop control where the controller reacts
                          to the survey channel it is shown; compares how
                          long each misreporting regime delays suppression
  run_case_backfill       reporting-delay stabilization times under
                          different revision maturity profiles
  run_case_counterfactual paired rollouts (earlier vaccination + stricter
                          masking after a divergence week) under common
                          random numbers, with a peak-comparison verdict
  run_case_policy_eval    propose -> rollout -> evaluate loop scoring a
                          policy against a replayed schedule on synthetic
                          regions (alignment + hospitalization reduction)

plus synthetic multi-region dataset generation and ordinal-indicator CSV
ingestion. Every run is fully determined by (config, seeds).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ACTION_MAX_LEVEL,
    N_ACTION_DIMS,
    Action,
    LatentState,
    ModelParams,
    ValidationError,
    derive_stream,
    make_state,
)
from .dynamics import effective_R, step
from .filtering import PriorConfig
from .observation import (
    MisreportingRegime,
    RevisionTriangle,
    observe,
    stabilization_time,
)
from .policy import PolicyInfo, PolicySpec, alignment, propose
from .rollout import (
    DEFAULT_ICU_CAPACITY,
    RolloutResult,
    counterfactual_compare,
    rollout,
)

DEFAULT_PROFILES = {
    "fast": (0.9, 1.0),
    "slow": (0.3, 0.6, 0.9, 1.0),
}

STABILIZATION_TOL = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to rerun one experiment."""

    name: str = "scenario"
    params: ModelParams = ModelParams()
    regime: MisreportingRegime = field(default_factory=MisreportingRegime.none)
    horizon: int = 26
    prior: PriorConfig = field(default_factory=PriorConfig)
    policy: PolicySpec | None = None
    actions: tuple | None = None
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    vaccination: tuple | None = None
    seeds: tuple = (7,)
    icu_capacity: float = DEFAULT_ICU_CAPACITY
    divergence_week: int = 0
    cf_mask_level: int = ACTION_MAX_LEVEL
    cf_vacc_advance: int = 0

    def __post_init__(self):
        if self.horizon < 0:
            raise ValidationError("horizon must be nonnegative")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValidationError("seeds must be non-empty")
        object.__setattr__(self, "seeds", seeds)
        if self.actions is not None:
            acts = tuple(self.actions)
            if len(acts) != self.horizon:
                raise ValidationError(
                    f"action schedule length {len(acts)} != horizon {self.horizon}")
            if not all(isinstance(a, Action) for a in acts):
                raise ValidationError("action schedule entries must be Actions")
            object.__setattr__(self, "actions", acts)
        if self.vaccination is not None:
            vacc = tuple(float(v) for v in self.vaccination)
            if len(vacc) != self.horizon:
                raise ValidationError(
                    f"vaccination length {len(vacc)} != horizon {self.horizon}")
            if any(v < 0 for v in vacc):
                raise ValidationError("vaccination fractions must be nonnegative")
            object.__setattr__(self, "vaccination", vacc)
        profiles = {str(k): tuple(float(c) for c in v) for k, v in self.profiles.items()}
        object.__setattr__(self, "profiles", profiles)
        if not 0 <= self.divergence_week:
            raise ValidationError("divergence_week must be nonnegative")
        if not 0 <= self.cf_mask_level <= ACTION_MAX_LEVEL:
            raise ValidationError("cf_mask_level outside 0..4")
        if self.cf_vacc_advance < 0:
            raise ValidationError("cf_vacc_advance must be nonnegative")
        if self.icu_capacity <= 0:
            raise ValidationError("icu_capacity must be positive")

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params.to_json_dict(),
            "regime": self.regime.to_json_dict(),
            "horizon": self.horizon,
            "prior": self.prior.to_json_dict(),
            "policy": self.policy.to_json_dict() if self.policy else None,
            "actions": [a.to_json_dict() for a in self.actions] if self.actions else None,
            "profiles": {k: list(v) for k, v in self.profiles.items()},
            "vaccination": list(self.vaccination) if self.vaccination else None,
            "seeds": list(self.seeds),
            "icu_capacity": self.icu_capacity,
            "divergence_week": self.divergence_week,
            "cf_mask_level": self.cf_mask_level,
            "cf_vacc_advance": self.cf_vacc_advance,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScenarioConfig":
        kw = dict(d)
        kw["params"] = ModelParams.from_json_dict(kw.get("params", {}))
        kw["regime"] = MisreportingRegime.from_json_dict(
            kw.get("regime", {"tag": "none", "fr": 0.0, "delta": 0.0}))
        kw["prior"] = PriorConfig.from_json_dict(kw.get("prior", {}))
        if kw.get("policy"):
            kw["policy"] = PolicySpec.from_json_dict(kw["policy"])
        if kw.get("actions"):
            kw["actions"] = tuple(Action.from_json_dict(a) for a in kw["actions"])
        if kw.get("vaccination"):
            kw["vaccination"] = tuple(kw["vaccination"])
        kw["seeds"] = tuple(kw.get("seeds", (7,)))
        return cls(**kw)


def initial_state(cfg: ScenarioConfig) -> LatentState:
    """Ground-truth start state: the midpoint of the prior box."""
    p = cfg.prior

    def mid(pair):
        return 0.5 * (pair[0] + pair[1])

    return make_state(
        I=mid(p.i_range), E=mid(p.e_range), R=p.r_init, Hosp=p.hosp_init,
        hosp_lag=cfg.params.hosp_lag, w=p.w_init, mixing_scale=p.mixing_scale,
        b=mid(p.b_range), m=mid(p.m_range), season_phase=p.season_phase)


# ---------------------------------------------------------------------------
# Closed-loop simulation shared by the misreporting case
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedLoopRun:
    actions: tuple
    states: tuple
    observations: tuple
    effective_R_series: tuple
    weeks_to_suppression: int | None  # first week with effective_R < 1


def run_closed_loop(cfg: ScenarioConfig, regime: MisreportingRegime,
                    seed: int) -> ClosedLoopRun:
    """Simulate horizon weeks with the policy reacting to observed signals."""
    if cfg.policy is None:
        raise ValidationError("closed loop requires a policy")
    root = derive_stream(seed).child("loop")
    state = initial_state(cfg)
    vacc = cfg.vaccination or (0.0,) * cfg.horizon

    actions, states, observations, r_series = [], [], [], []
    last_obs = observe(state, Action.uniform(0), regime, cfg.params,
                       root.child("obs", 0), week_index=0)
    suppressed_at = None
    for k in range(1, cfg.horizon + 1):
        info = PolicyInfo(I_mean=state.I,
                          effective_R=effective_R(state, Action.uniform(0), cfg.params),
                          survey_compliance=last_obs.survey_compliance,
                          cases_per_100k=last_obs.reported_cases_per_100k)
        a = propose(cfg.policy, info, k - 1, root.child("policy", k))
        r_k = effective_R(state, a, cfg.params)
        state = step(state, a, cfg.params, root.child("week", k),
                     vacc_fraction=vacc[k - 1])
        last_obs = observe(state, a, regime, cfg.params, root.child("obs", k),
                           week_index=k)
        actions.append(a)
        states.append(state)
        observations.append(last_obs)
        r_series.append(r_k)
        if suppressed_at is None and r_k < 1.0:
            suppressed_at = k

    return ClosedLoopRun(actions=tuple(actions), states=tuple(states),
                         observations=tuple(observations),
                         effective_R_series=tuple(r_series),
                         weeks_to_suppression=suppressed_at)


def run_case_misreporting(base: ScenarioConfig) -> dict:
    """Weeks until effective_R < 1 under none / mixed / pure misreporting.

    All regimes share the same seeds and stream labels, so paths differ only
    through the controller's view of compliance. A run that never crosses
    the threshold records "never".
    """
    if base.policy is None or base.policy.kind != "threshold":
        raise ValidationError("misreporting case requires a threshold policy")
    if not any(r.signal == "survey_compliance" for r in base.policy.rules):
        raise ValidationError("policy must react to survey_compliance")
    delta = base.regime.delta
    mixed_fr = base.regime.fr if base.regime.tag == "mixed" else 0.5
    regimes = {
        "none": MisreportingRegime.none(),
        "mixed": MisreportingRegime.mixed(fr=mixed_fr, delta=delta),
        "pure": MisreportingRegime.pure(delta=delta),
    }
    out = {"case": "misreporting", "config": base.to_json_dict(), "regimes": {}}
    for tag, regime in regimes.items():
        per_seed = []
        for seed in base.seeds:
            run = run_closed_loop(base, regime, seed)
            per_seed.append(run.weeks_to_suppression)
        finite = [v for v in per_seed if v is not None]
        out["regimes"][tag] = {
            "per_seed": ["never" if v is None else v for v in per_seed],
            "median": float(np.median(finite)) if len(finite) == len(per_seed) else "never",
        }
    return out


# ---------------------------------------------------------------------------
# Backfill case
# ---------------------------------------------------------------------------


def run_case_backfill(base: ScenarioConfig, profiles: dict | None = None,
                      tol: float = STABILIZATION_TOL) -> dict:
    """Stabilization times of simulated final counts per revision profile."""
    profiles = profiles if profiles is not None else base.profiles
    if not profiles:
        raise ValidationError("backfill case needs at least one profile")
    actions = base.actions or tuple(
        Action.uniform(1, week_index=k) for k in range(base.horizon))
    res = rollout(initial_state(base), actions, base.params, base.regime,
                  derive_stream(base.seeds[0]).child("backfill"),
                  vaccination=base.vaccination, icu_capacity=base.icu_capacity)
    finals = [int(np.rint(o.reported_cases_per_100k)) for o in res.observations]
    out = {"case": "backfill", "config": base.to_json_dict(), "tol": tol,
           "finals": finals, "profiles": {}}
    for name, prof in profiles.items():
        tri = RevisionTriangle.build(finals, prof)
        times = [stabilization_time(tri, t, tol) for t in range(tri.n_weeks)]
        out["profiles"][name] = {
            "profile": list(prof),
            "times": times,
            "median": float(np.median(times)) if times else 0.0,
        }
    return out


# ---------------------------------------------------------------------------
# Counterfactual case
# ---------------------------------------------------------------------------

MASK_DIM = 12  # facial coverings lever


def counterfactual_schedules(base: ScenarioConfig):
    """Baseline vs earlier-vaccination + stricter-masking alternative."""
    if base.actions is None:
        raise ValidationError("counterfactual case requires an action schedule")
    d = base.divergence_week
    baseline = base.actions
    alt = []
    for k, a in enumerate(baseline):
        if k >= d:
            dims = list(a.dims)
            dims[MASK_DIM] = max(dims[MASK_DIM], base.cf_mask_level)
            alt.append(Action(dims=tuple(dims), week_index=a.week_index))
        else:
            alt.append(a)
    vb = list(base.vaccination or (0.0,) * base.horizon)
    va = list(vb)
    if base.cf_vacc_advance > 0:
        starts = [k for k, v in enumerate(vb) if v > 0]
        if starts:
            v0 = starts[0]
            new_start = max(d, v0 - base.cf_vacc_advance)
            rate = vb[v0]
            for k in range(new_start, len(va)):
                va[k] = max(va[k], rate)
    return baseline, tuple(alt), tuple(vb), tuple(va)


def counterfactual_verdict(res_base: RolloutResult, res_alt: RolloutResult,
                           divergence_week: int) -> dict:
    """Peak comparison: does the alternative flatten and delay admissions?"""
    diverged = any(a.dims != b.dims for a, b in zip(res_base.actions, res_alt.actions))
    mb, ma = res_base.metrics, res_alt.metrics
    return {
        "no_divergence": not diverged,
        "lower_peak": ma.peak_hosp_per_100k < mb.peak_hosp_per_100k,
        "non_earlier_peak": ma.peak_week >= mb.peak_week,
        "verdict": (not diverged) or (
            ma.peak_hosp_per_100k < mb.peak_hosp_per_100k
            and ma.peak_week >= mb.peak_week),
        "baseline_peak": mb.peak_hosp_per_100k,
        "alternative_peak": ma.peak_hosp_per_100k,
        "baseline_peak_week": mb.peak_week,
        "alternative_peak_week": ma.peak_week,
        "divergence_week": divergence_week,
    }


def run_case_counterfactual(base: ScenarioConfig):
    """Paired rollout under common random numbers plus the peak verdict."""
    baseline, alt, vb, va = counterfactual_schedules(base)
    res_base, res_alt = counterfactual_compare(
        initial_state(base), baseline, alt, base.divergence_week,
        base.params, base.regime, base.seeds[0],
        vaccination_baseline=vb, vaccination_alternative=va,
        icu_capacity=base.icu_capacity)
    verdict = counterfactual_verdict(res_base, res_alt, base.divergence_week)
    verdict["config"] = base.to_json_dict()
    verdict["case"] = "counterfactual"
    return res_base, res_alt, verdict


# ---------------------------------------------------------------------------
# Policy-eval scenario (the propose -> rollout -> evaluate loop)
# ---------------------------------------------------------------------------


def run_case_policy_eval(base: ScenarioConfig, n_regions: int = 4,
                         eval_horizon: int = 6) -> dict:
    """Score base.policy against replayed schedules on synthetic regions.

    For each region: generate a synthetic history, have the policy propose
    actions along it, measure alignment against the realized schedule, and
    measure hospitalization reduction over a final eval_horizon-week
    rollout window under the policy.
    """
    if base.policy is None:
        raise ValidationError("policy-eval case requires a policy")
    data = gen_synthetic(n_regions, base.horizon, base.seeds[0],
                         base_params=base.params)
    per_region = []
    for region in data.regions:
        proposed = []
        for k in range(len(region.actions)):
            state = region.states[k]
            obs = region.observations[k]
            info = PolicyInfo(
                I_mean=state.I,
                effective_R=effective_R(state, region.actions[k], region.params),
                survey_compliance=obs.survey_compliance,
                cases_per_100k=obs.reported_cases_per_100k)
            proposed.append(propose(base.policy, info, k,
                                    derive_stream(base.seeds[0]).child(
                                        "eval", region.name, k)))
        align = alignment(proposed, region.actions)

        start = region.states[-1]
        horizon_actions = tuple(
            Action(dims=proposed[-1].dims, week_index=k) for k in range(eval_horizon))
        res = rollout(start, horizon_actions, region.params, base.regime,
                      derive_stream(base.seeds[0]).child("eval-roll", region.name),
                      icu_capacity=base.icu_capacity)
        series = res.hosp_series_per_100k()
        start_val = series[0] if series else 0.0
        reduction = (100.0 * (series[0] - series[-1]) / series[0]
                     if series and start_val > 0 else None)
        per_region.append({
            "region": region.name,
            "alignment": align,
            "hosp_reduction": reduction,
            "metrics": res.metrics.to_json_dict(),
        })
    valid_reductions = [r["hosp_reduction"] for r in per_region
                        if r["hosp_reduction"] is not None]
    return {
        "case": "policy-eval",
        "config": base.to_json_dict(),
        "regions": per_region,
        "mean_alignment": float(np.mean([r["alignment"] for r in per_region])),
        "mean_hosp_reduction": (float(np.mean(valid_reductions))
                                if valid_reductions else None),
    }


# ---------------------------------------------------------------------------
# Synthetic data generation
# ---------------------------------------------------------------------------

REGION_PARAM_RANGES = {
    "beta0": (1.3, 2.0),
    "kappa": (0.4, 0.8),
    "rho0": (0.15, 0.35),
    "lambda_policy": (0.1, 0.25),
}


@dataclass(frozen=True)
class RegionData:
    name: str
    params: ModelParams
    actions: tuple
    states: tuple
    observations: tuple


@dataclass(frozen=True)
class SyntheticDataset:
    regions: tuple
    seed: int


def gen_synthetic(n_regions: int, T: int, seed: int,
                  base_params: ModelParams | None = None,
                  param_ranges: dict | None = None,
                  regime: MisreportingRegime | None = None) -> SyntheticDataset:
    """Heterogeneous multi-region histories with ground-truth latents."""
    if n_regions < 1 or T < 1:
        raise ValidationError("need n_regions >= 1 and T >= 1")
    base_params = base_params or ModelParams()
    ranges = param_ranges or REGION_PARAM_RANGES
    regime = regime or MisreportingRegime.none()
    root = derive_stream(seed).child("synthetic")

    regions = []
    for r in range(n_regions):
        rng = root.child("region", r)
        gen = rng.child("params").generator()
        overrides = {name: float(gen.uniform(lo, hi))
                     for name, (lo, hi) in ranges.items()}
        params = base_params.with_overrides(**overrides)

        agen = rng.child("actions").generator()
        levels = np.zeros(N_ACTION_DIMS, dtype=int)
        actions = []
        for k in range(T):
            moves = agen.integers(-1, 2, size=N_ACTION_DIMS)
            gate = agen.random(N_ACTION_DIMS) < 0.3
            levels = np.clip(levels + np.where(gate, moves, 0), 0, ACTION_MAX_LEVEL)
            actions.append(Action(dims=tuple(int(v) for v in levels), week_index=k))

        i0 = float(rng.child("init").generator().uniform(5e-4, 5e-3))
        state = make_state(I=i0, hosp_lag=params.hosp_lag)
        states, observations = [], []
        for k, a in enumerate(actions, start=1):
            state = step(state, a, params, rng.child("week", k))
            states.append(state)
            observations.append(observe(state, a, regime, params,
                                        rng.child("obs", k), week_index=k))
        regions.append(RegionData(name=f"region{r:02d}", params=params,
                                  actions=tuple(actions), states=tuple(states),
                                  observations=tuple(observations)))
    return SyntheticDataset(regions=tuple(regions), seed=int(seed))


# ---------------------------------------------------------------------------
# Ordinal-indicator CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IngestResult:
    actions: dict                 # region -> list[Action] (by week order)
    warnings: tuple
    gaps: dict                    # region -> list of missing week indices


def ingest_oxcgrt(csv_path) -> IngestResult:
    """Load per-region ordinal action sequences from an indicator CSV.

    Expects columns: region, week, then exactly 13 indicator columns.
    Each indicator column is min-max rescaled onto the 0..4 scale over the
    whole file (sub-scales vary between trackers), then rounded. Missing
    weeks inside a region's range are reported, not filled.
    """
    with open(csv_path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise ValidationError("missing header") from None
        rows = list(rd)
    if len(header) < 2 or header[0] != "region" or header[1] != "week":
        raise ValidationError("first columns must be region, week")
    ind_cols = header[2:]
    if len(ind_cols) != N_ACTION_DIMS:
        raise ValidationError(
            f"expected {N_ACTION_DIMS} indicator columns, got {len(ind_cols)}")
    if not rows:
        raise ValidationError("no data rows")

    raw = []
    for ln, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"row {ln}: wrong cell count")
        try:
            week = int(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as e:
            raise ValidationError(f"row {ln}: {e}") from None
        if any(not math.isfinite(v) for v in vals):
            raise ValidationError(f"row {ln}: non-finite indicator value")
        raw.append((row[0], week, vals))

    warnings = []
    mat = np.array([vals for _, _, vals in raw])
    lo = mat.min(axis=0)
    hi = mat.max(axis=0)
    levels = np.zeros_like(mat, dtype=int)
    for j, name in enumerate(ind_cols):
        if hi[j] == lo[j]:
            warnings.append(f"column {name!r} is constant; mapped to level 0")
            continue
        scaled = np.rint(ACTION_MAX_LEVEL * (mat[:, j] - lo[j]) / (hi[j] - lo[j]))
        clipped = np.clip(scaled, 0, ACTION_MAX_LEVEL)
        if np.any(clipped != scaled):
            warnings.append(f"column {name!r}: values clamped to 0..4")
        levels[:, j] = clipped.astype(int)

    by_region: dict[str, dict[int, tuple]] = {}
    for idx, (region, week, _) in enumerate(raw):
        cells = by_region.setdefault(region, {})
        if week in cells:
            raise ValidationError(f"duplicate (region, week) = ({region}, {week})")
        cells[week] = tuple(int(v) for v in levels[idx])

    actions = {}
    gaps = {}
    for region in sorted(by_region):
        cells = by_region[region]
        weeks = sorted(cells)
        missing = [w for w in range(weeks[0], weeks[-1] + 1) if w not in cells]
        if missing:
            gaps[region] = missing
        actions[region] = [Action(dims=cells[w], week_index=w) for w in weeks]
    return IngestResult(actions=actions, warnings=tuple(warnings), gaps=gaps)
