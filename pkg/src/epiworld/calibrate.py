"""World-model parameter fitting.

Maximizes the particle-filter log-likelihood of an observed
(observation, action) sequence over a named subset of ModelParams fields.
With the bootstrap proposal the filter's cumulative log-likelihood equals
the sequential variational bound, so this is the model-learning objective;
beta_kl is carried in the config for the general bound but only the
bootstrap instantiation (where the KL term is implicit) is implemented.

The objective is a Monte Carlo estimate, so optimizers are derivative-free
(grid scan or Nelder-Mead restarts) and every evaluation reuses the same
seed-derived streams: common random numbers across candidate parameters
keep the likelihood surface smooth enough to rank candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import EpiworldError, ModelParams, ValidationError, derive_stream
from .filtering import (
    DEFAULT_RESAMPLE_THRESHOLD,
    ObservationImpossibleError,
    PriorConfig,
    filter_step,
    init_belief,
)
from .observation import MisreportingRegime

OPTIMIZERS = ("grid", "nelder-mead")


@dataclass(frozen=True)
class CalibrationConfig:
    """What to fit and how.

    free maps ModelParams field names to (lo, hi) bounds. base_params
    supplies every non-free parameter. beta_kl is accepted for the general
    variational bound but unused by the bootstrap instantiation.
    """

    free: dict
    base_params: ModelParams = ModelParams()
    optimizer: str = "grid"
    restarts: int = 1
    particles: int = 500
    beta_kl: float = 1.0
    grid_points: int = 21
    max_iter: int = 200
    prior: PriorConfig = field(default_factory=PriorConfig)
    regime: MisreportingRegime = field(default_factory=MisreportingRegime.none)
    resample_threshold: float = DEFAULT_RESAMPLE_THRESHOLD

    def __post_init__(self):
        if not self.free:
            raise ValidationError("free parameter set is empty")
        valid_fields = set(ModelParams().to_json_dict())
        clean = {}
        for name, pair in self.free.items():
            if name not in valid_fields:
                raise ValidationError(f"unknown free parameter {name!r}")
            lo, hi = (float(pair[0]), float(pair[1]))
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValidationError(f"bounds for {name} must be finite")
            if lo > hi:
                raise ValidationError(f"bounds for {name} inverted: {lo} > {hi}")
            clean[name] = (lo, hi)
        object.__setattr__(self, "free", clean)
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.particles < 1:
            raise ValidationError("particles must be >= 1")
        if self.grid_points < 1:
            raise ValidationError("grid_points must be >= 1")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.free)

    def to_json_dict(self) -> dict:
        return {
            "free": {k: list(v) for k, v in self.free.items()},
            "base_params": self.base_params.to_json_dict(),
            "optimizer": self.optimizer,
            "restarts": self.restarts,
            "particles": self.particles,
            "beta_kl": self.beta_kl,
            "grid_points": self.grid_points,
            "max_iter": self.max_iter,
            "prior": self.prior.to_json_dict(),
            "regime": self.regime.to_json_dict(),
            "resample_threshold": self.resample_threshold,
        }


def _check_data(data):
    observations, actions = data
    observations = list(observations)
    actions = list(actions)
    if len(observations) != len(actions):
        raise ValidationError(
            f"{len(observations)} observations vs {len(actions)} actions")
    return observations, actions


def objective(data, theta: dict, config: CalibrationConfig, seed: int) -> float:
    """PF log-likelihood of the data under base_params overridden by theta.

    Deterministic in (data, theta, seed). Returns -inf when some
    observation has zero likelihood under every particle.
    """
    observations, actions = _check_data(data)
    for name, value in theta.items():
        if name not in config.free:
            raise ValidationError(f"theta names a non-free parameter {name!r}")
        lo, hi = config.free[name]
        if not lo <= value <= hi:
            raise ValidationError(f"theta[{name!r}]={value} outside bounds [{lo}, {hi}]")
    if not observations:
        return 0.0
    params = config.base_params.with_overrides(**theta)
    root = derive_stream(seed).child("calibrate")
    bel = init_belief(config.prior, config.particles, root.child("init"),
                      hosp_lag=params.hosp_lag)
    try:
        for t, (o, a) in enumerate(zip(observations, actions), start=1):
            bel = filter_step(bel, a, o, params, config.regime,
                              root.child("filt", t),
                              threshold=config.resample_threshold)
    except ObservationImpossibleError:
        return -math.inf
    return float(bel.cum_loglik)


@dataclass(frozen=True)
class FitResult:
    theta: dict
    value: float
    trace: tuple

    def to_json_dict(self) -> dict:
        return {"theta": dict(self.theta), "value": self.value,
                "trace": [dict(e) for e in self.trace]}


def _grid_axes(config: CalibrationConfig):
    axes = []
    for name in config.names:
        lo, hi = config.free[name]
        if lo == hi:
            axes.append(np.array([lo]))
        else:
            axes.append(np.linspace(lo, hi, config.grid_points))
    return axes


def _fit_grid(data, config, seed, trace):
    axes = _grid_axes(config)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    best_theta, best_value = None, -math.inf
    for r in range(config.restarts):
        for row in points:
            theta = {n: float(v) for n, v in zip(config.names, row)}
            value = objective(data, theta, config, seed)
            trace.append({"theta": theta, "value": value, "restart": r})
            if value > best_value:
                best_theta, best_value = theta, value
    return best_theta, best_value


def _fit_nelder_mead(data, config, seed, trace):
    from scipy.optimize import minimize

    names = config.names
    lo = np.array([config.free[n][0] for n in names])
    hi = np.array([config.free[n][1] for n in names])
    span = hi - lo
    best_theta, best_value = None, -math.inf
    start_rng = derive_stream(seed).child("nm-starts").generator()

    for r in range(config.restarts):
        x0 = lo + start_rng.random(len(names)) * span

        def neg_obj(x, _r=r):
            x_clip = np.clip(x, lo, hi)
            theta = {n: float(v) for n, v in zip(names, x_clip)}
            value = objective(data, theta, config, seed)
            trace.append({"theta": theta, "value": value, "restart": _r})
            # keep the simplex inside bounds; penalty only affects the search
            overshoot = float(np.sum((x - x_clip) ** 2))
            if not math.isfinite(value):
                return 1e18 + 1e6 * overshoot
            return -value + 1e6 * overshoot

        minimize(neg_obj, x0, method="Nelder-Mead",
                 options={"maxiter": config.max_iter, "xatol": 1e-4, "fatol": 1e-4})

    for entry in trace:
        if entry["value"] > best_value:
            best_theta, best_value = entry["theta"], entry["value"]
    return best_theta, best_value


def fit(data, config: CalibrationConfig, seed: int) -> FitResult:
    """Best theta across restarts; trace holds every evaluated point."""
    _check_data(data)
    trace: list[dict] = []
    if config.optimizer == "grid":
        best_theta, best_value = _fit_grid(data, config, seed, trace)
    else:
        best_theta, best_value = _fit_nelder_mead(data, config, seed, trace)
    if best_theta is None or not math.isfinite(best_value):
        raise EpiworldError("calibration failed: every evaluation returned -inf")
    return FitResult(theta=dict(best_theta), value=float(best_value),
                     trace=tuple(trace))


def fit_report(result: FitResult, config: CalibrationConfig, seed: int) -> dict:
    """JSON-ready fit summary: estimate, value, trace, config echo, seed."""
    rep = result.to_json_dict()
    rep["config"] = config.to_json_dict()
    rep["seed"] = seed
    return rep
