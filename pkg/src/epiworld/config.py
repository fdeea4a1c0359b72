"""TOML configuration loading.

One structured-text schema describes a scenario (parameters, regime, prior,
policy or schedule, vaccination, revision profiles, seeds) plus optional
[calibrate] and [plan] sections for the fitting and planning entry points.
Validation errors name the offending field path (e.g. "params.beta0: must
be nonnegative") and parse errors carry the parser's line/column message.

Shipped presets live in the package's presets/ directory and are addressed
by name.
"""

from __future__ import annotations

import sys
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import (
    ACTION_MAX_LEVEL,
    N_ACTION_DIMS,
    Action,
    ModelParams,
    ValidationError,
    config_hash,
)
from .calibrate import CalibrationConfig
from .filtering import PriorConfig
from .observation import MisreportingRegime
from .optimize import CemConfig, RewardSpec
from .policy import PolicySpec, ThresholdRule
from .scenarios import ScenarioConfig


def load_toml_bytes(data: bytes, source: str = "<config>") -> dict:
    try:
        return tomllib.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as e:
        raise ValidationError(f"{source}: parse error: {e}") from None


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    return load_toml_bytes(data, source=str(path))


def _section(d: dict, key: str) -> dict:
    val = d.get(key, {})
    if not isinstance(val, dict):
        raise ValidationError(f"{key}: expected a table")
    return val


def _reraise(prefix: str, e: Exception):
    raise ValidationError(f"{prefix}: {e}") from None


def _actions_from_section(d: dict, horizon: int):
    if "uniform" in d and "table" in d:
        raise ValidationError("actions: give either uniform or table, not both")
    if "uniform" in d:
        level = int(d["uniform"])
        if not 0 <= level <= ACTION_MAX_LEVEL:
            raise ValidationError(f"actions.uniform: level {level} outside 0..4")
        return tuple(Action.uniform(level, week_index=k) for k in range(horizon))
    if "table" in d:
        rows = d["table"]
        if len(rows) != horizon:
            raise ValidationError(
                f"actions.table: {len(rows)} rows != horizon {horizon}")
        out = []
        for k, row in enumerate(rows):
            try:
                out.append(Action(dims=tuple(int(v) for v in row), week_index=k))
            except (ValidationError, TypeError, ValueError) as e:
                _reraise(f"actions.table[{k}]", e)
        return tuple(out)
    raise ValidationError("actions: needs uniform or table")


def _vaccination_from_section(d: dict, horizon: int):
    if "schedule" in d:
        sched = [float(v) for v in d["schedule"]]
        if len(sched) != horizon:
            raise ValidationError(
                f"vaccination.schedule: {len(sched)} entries != horizon {horizon}")
        return tuple(sched)
    if "start_week" in d or "rate" in d:
        start = int(d.get("start_week", 0))
        rate = float(d.get("rate", 0.0))
        if start < 0:
            raise ValidationError("vaccination.start_week: must be nonnegative")
        if rate < 0:
            raise ValidationError("vaccination.rate: must be nonnegative")
        return tuple(rate if k >= start else 0.0 for k in range(horizon))
    raise ValidationError("vaccination: needs schedule or start_week/rate")


def _policy_from_section(d: dict) -> PolicySpec:
    kind = d.get("kind")
    if kind == "threshold":
        rules = []
        for i, rd in enumerate(d.get("rules", ())):
            try:
                rules.append(ThresholdRule(
                    signal=str(rd["signal"]), tau=float(rd["tau"]),
                    dims=tuple(int(v) for v in rd["dims"]), level=int(rd["level"])))
            except (KeyError, ValidationError, TypeError, ValueError) as e:
                _reraise(f"policy.rules[{i}]", e)
        base = tuple(int(v) for v in d.get("base_levels", (0,) * N_ACTION_DIMS))
        return PolicySpec.threshold(rules, base)
    if kind == "replay":
        rows = d.get("table", ())
        table = []
        for k, row in enumerate(rows):
            try:
                table.append(Action(dims=tuple(int(v) for v in row), week_index=k))
            except (ValidationError, TypeError, ValueError) as e:
                _reraise(f"policy.table[{k}]", e)
        return PolicySpec.replay(table)
    if kind == "softmax":
        import numpy as np

        w = np.array(d.get("weights", ()), dtype=float)
        return PolicySpec.softmax(w, temperature=float(d.get("temperature", 1.0)))
    raise ValidationError(f"policy.kind: unknown kind {kind!r}")


def scenario_from_dict(d: dict, source: str = "<config>") -> ScenarioConfig:
    """Build a validated ScenarioConfig, naming bad fields on failure."""
    horizon = int(d.get("horizon", 26))

    try:
        params = ModelParams.from_json_dict(_section(d, "params"))
    except ValidationError as e:
        _reraise("params", e)
    try:
        reg = _section(d, "regime")
        regime = (MisreportingRegime(tag=str(reg.get("tag", "none")),
                                     fr=float(reg.get("fr", _default_fr(reg))),
                                     delta=float(reg.get("delta", 0.0)))
                  if reg else MisreportingRegime.none())
    except ValidationError as e:
        _reraise("regime", e)
    try:
        prior = PriorConfig.from_json_dict(_section(d, "prior"))
    except (ValidationError, TypeError) as e:
        _reraise("prior", e)

    policy = None
    if "policy" in d:
        try:
            policy = _policy_from_section(_section(d, "policy"))
        except ValidationError as e:
            if str(e).startswith("policy"):
                raise
            _reraise("policy", e)

    actions = None
    if "actions" in d:
        actions = _actions_from_section(_section(d, "actions"), horizon)

    vaccination = None
    if "vaccination" in d:
        vaccination = _vaccination_from_section(_section(d, "vaccination"), horizon)

    profiles = d.get("profiles", None)
    kw = {}
    if profiles is not None:
        if not isinstance(profiles, dict):
            raise ValidationError("profiles: expected a table of arrays")
        kw["profiles"] = {k: tuple(float(c) for c in v) for k, v in profiles.items()}

    try:
        return ScenarioConfig(
            name=str(d.get("name", "scenario")),
            params=params, regime=regime, horizon=horizon, prior=prior,
            policy=policy, actions=actions, vaccination=vaccination,
            seeds=tuple(int(s) for s in d.get("seeds", (7,))),
            icu_capacity=float(d.get("icu_capacity", 30.0)),
            divergence_week=int(d.get("divergence_week", 0)),
            cf_mask_level=int(d.get("cf_mask_level", ACTION_MAX_LEVEL)),
            cf_vacc_advance=int(d.get("cf_vacc_advance", 0)),
            **kw)
    except ValidationError as e:
        _reraise(source, e)


def _default_fr(reg: dict) -> float:
    tag = str(reg.get("tag", "none")).lower()
    return {"none": 0.0, "pure": 1.0}.get(tag, 0.5)


def calibration_from_dict(d: dict, base_params: ModelParams,
                          prior: PriorConfig,
                          regime: MisreportingRegime) -> CalibrationConfig:
    """Build a CalibrationConfig from a [calibrate] table."""
    cal = dict(d)
    free_raw = cal.get("free")
    if not isinstance(free_raw, dict) or not free_raw:
        raise ValidationError("calibrate.free: expected a table of [lo, hi] bounds")
    free = {}
    for name, pair in free_raw.items():
        try:
            free[name] = (float(pair[0]), float(pair[1]))
        except (TypeError, ValueError, IndexError) as e:
            _reraise(f"calibrate.free.{name}", e)
    try:
        return CalibrationConfig(
            free=free, base_params=base_params,
            optimizer=str(cal.get("optimizer", "grid")),
            restarts=int(cal.get("restarts", 1)),
            particles=int(cal.get("particles", 500)),
            beta_kl=float(cal.get("beta_kl", 1.0)),
            grid_points=int(cal.get("grid_points", 21)),
            max_iter=int(cal.get("max_iter", 200)),
            prior=prior, regime=regime,
            resample_threshold=float(cal.get("resample_threshold", 0.5)))
    except ValidationError as e:
        _reraise("calibrate", e)


def plan_from_dict(d: dict):
    """(CemConfig, RewardSpec, horizon) from a [plan] table."""
    try:
        cem = CemConfig(population=int(d.get("population", 64)),
                        elites=int(d.get("elites", 8)),
                        iters=int(d.get("iters", 10)),
                        prob_floor=float(d.get("prob_floor", 1e-3)))
    except ValidationError as e:
        _reraise("plan", e)
    rw = _section(d, "reward")
    try:
        reward = RewardSpec(
            w_cumulative_infections=float(rw.get("w_cumulative_infections", 0.0)),
            w_peak_hosp=float(rw.get("w_peak_hosp", 0.0)),
            w_end_hosp=float(rw.get("w_end_hosp", -1.0)),
            icu_penalty_per_week=float(rw.get("icu_penalty_per_week", 0.0)))
    except ValidationError as e:
        _reraise("plan.reward", e)
    horizon = int(d.get("horizon", 6))
    if horizon < 0:
        raise ValidationError("plan.horizon: must be nonnegative")
    return cem, reward, horizon


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESET_NAMES = ("misreporting", "backfill", "counterfactual", "policy-eval")


def preset_bytes(name: str) -> bytes:
    if name not in PRESET_NAMES:
        raise ValidationError(f"unknown preset {name!r}; have {PRESET_NAMES}")
    ref = resources.files("epiworld").joinpath(f"presets/{name}.toml")
    return ref.read_bytes()


def load_scenario_bytes(data: bytes, source: str = "<config>"):
    """(ScenarioConfig, raw dict, sha256 of the bytes)."""
    d = load_toml_bytes(data, source)
    return scenario_from_dict(d, source), d, config_hash(data)


def load_scenario(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return load_scenario_bytes(data, source=str(path))


def load_preset(name: str):
    return load_scenario_bytes(preset_bytes(name), source=f"preset:{name}")
