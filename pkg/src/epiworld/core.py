"""Shared domain types: latent epidemic state, ordinal actions, model
parameters, and splittable counter-based RNG streams.

All quantities are per-capita fractions of a closed population; per-100k
numbers only appear at the observation layer. Weekly discrete time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

N_ACTION_DIMS = 13
ACTION_MAX_LEVEL = 4

# Default names for the 13 anonymous action dims (OxCGRT-style labels).
# Purely cosmetic; all logic addresses dims by index.
DEFAULT_DIM_NAMES = (
    "school_closing",
    "workplace_closing",
    "cancel_events",
    "gathering_restrictions",
    "close_transport",
    "stay_home",
    "internal_movement",
    "intl_travel",
    "income_support",
    "debt_relief",
    "public_info",
    "testing_policy",
    "facial_coverings",
)

MASS_TOL = 1e-9  # population conservation tolerance


class EpiworldError(Exception):
    """Base class for all package errors."""


class ValidationError(EpiworldError):
    """Invalid domain object or configuration value."""


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


def validate_dims(dims) -> list[str]:
    """Validate a raw candidate action vector.

    Returns a list of violation messages; empty list means valid.
    """
    violations = []
    try:
        vals = list(dims)
    except TypeError:
        return ["dims is not a sequence"]
    if len(vals) != N_ACTION_DIMS:
        violations.append(f"wrong arity: expected {N_ACTION_DIMS} dims, got {len(vals)}")
        return violations
    for i, v in enumerate(vals):
        if not (isinstance(v, (int, np.integer)) and not isinstance(v, bool)):
            violations.append(f"dim {i} not an integer: {v!r}")
        elif not 0 <= int(v) <= ACTION_MAX_LEVEL:
            violations.append(f"dim {i} out of range 0..{ACTION_MAX_LEVEL}: {int(v)}")
    return violations


@dataclass(frozen=True)
class Action:
    """One week of interventions: 13 ordinal dims on the 0-4 scale."""

    dims: tuple[int, ...]
    week_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in np.asarray(self.dims).tolist()))
        bad = validate_dims(self.dims)
        if self.week_index < 0:
            bad.append(f"week_index negative: {self.week_index}")
        if bad:
            raise ValidationError("; ".join(bad))

    def to_json_dict(self) -> dict:
        return {"week": int(self.week_index), "dims": [int(v) for v in self.dims]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Action":
        return cls(dims=tuple(d["dims"]), week_index=int(d["week"]))

    @classmethod
    def uniform(cls, level: int, week_index: int = 0) -> "Action":
        return cls(dims=(level,) * N_ACTION_DIMS, week_index=week_index)


def validate_action(a) -> list[str]:
    """Violation list for an Action or a raw dims sequence. Empty = ok.

    Constructed Action objects are valid by construction; this path exists
    for raw vectors arriving from files or the HTTP surface.
    """
    if isinstance(a, Action):
        return validate_dims(a.dims)
    return validate_dims(a)


def stringency(a: Action) -> float:
    """Scalar intervention intensity: mean ordinal level rescaled to [0, 1]."""
    return sum(a.dims) / (N_ACTION_DIMS * ACTION_MAX_LEVEL)


# ---------------------------------------------------------------------------
# Latent state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentState:
    """Hidden weekly epidemic state for one region.

    epi: S, E, I, R, Hosp per-capita compartments plus this week's
         new_infections and hosp_admissions, and the admissions pipeline
         (mass scheduled to enter Hosp k weeks from now, k = 0.. lag-1).
    imm: w, average remaining protection of the R pool.
    net: mixing_scale, scalar stand-in for contact/mobility structure.
    beh: b compliance, f fatigue.
    reg: m transmissibility multiplier, season_phase in [0, 1).
    """

    S: float
    E: float
    I: float
    R: float
    Hosp: float
    new_infections: float = 0.0
    hosp_admissions: float = 0.0
    hosp_pipeline: tuple[float, ...] = ()
    w: float = 1.0
    mixing_scale: float = 1.0
    b: float = 0.0
    f: float = 0.0
    m: float = 1.0
    season_phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hosp_pipeline", tuple(float(v) for v in self.hosp_pipeline))
        self.check()

    def check(self):
        comps = {"S": self.S, "E": self.E, "I": self.I, "R": self.R, "Hosp": self.Hosp}
        for name, v in comps.items():
            if not v >= 0.0:
                raise ValidationError(f"compartment {name} negative: {v}")
        total = self.S + self.E + self.I + self.R + self.Hosp
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"population mass {total!r} outside 1 +/- {MASS_TOL}")
        for name in ("new_infections", "hosp_admissions"):
            if getattr(self, name) < 0.0:
                raise ValidationError(f"{name} negative")
        if any(v < 0.0 for v in self.hosp_pipeline):
            raise ValidationError("hosp_pipeline entry negative")
        for name in ("w", "b", "f"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} outside [0, 1]: {v}")
        if not 0.0 < self.mixing_scale <= 2.0:
            raise ValidationError(f"mixing_scale outside (0, 2]: {self.mixing_scale}")
        if not self.m > 0.0:
            raise ValidationError(f"m not positive: {self.m}")
        if not 0.0 <= self.season_phase < 1.0:
            raise ValidationError(f"season_phase outside [0, 1): {self.season_phase}")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["hosp_pipeline"] = list(self.hosp_pipeline)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "LatentState":
        kw = dict(d)
        kw["hosp_pipeline"] = tuple(kw.get("hosp_pipeline", ()))
        return cls(**kw)


def make_state(I=1e-3, E=0.0, R=0.0, Hosp=0.0, hosp_lag=0, **kw) -> LatentState:
    """Build a valid state with S as the remainder of the population."""
    S = 1.0 - (E + I + R + Hosp)
    return LatentState(S=S, E=E, I=I, R=R, Hosp=Hosp,
                       hosp_pipeline=(0.0,) * hosp_lag, **kw)


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Transition + observation kernel parameters. All rates per week."""

    beta0: float = 1.6            # baseline transmission rate
    sigma: float = 0.8            # E -> I rate
    gamma: float = 0.6            # I -> out rate
    ihr: float = 0.02             # infection-hospitalization ratio
    hosp_lag: int = 2             # infection -> admission delay, weeks
    hosp_stay: float = 1.5        # mean weeks in Hosp
    kappa: float = 0.6            # max behavioral transmission reduction
    waning_rate: float = 0.01     # R -> S waning scale; also protection decay
    lambda_policy: float = 0.15   # compliance gain per unit stringency
    lambda_risk: float = 0.3      # compliance gain per unit perceived risk
    lambda_fatigue: float = 0.05  # compliance loss per unit fatigue
    risk_scale: float = 0.02      # I level at which perceived risk saturates
    fatigue_gain: float = 0.05    # fatigue accrual per unit stringency
    fatigue_decay: float = 0.02   # fatigue relief per week
    regime_jump_prob: float = 0.02
    regime_jump_loc: float = 0.0      # log-scale jump location
    regime_jump_scale: float = 0.15   # log-scale jump spread
    season_amplitude: float = 0.0     # sinusoidal modulation of beta0
    season_period_weeks: float = 52.0
    rho0: float = 0.25            # baseline case ascertainment
    testing_gain: float = 0.5     # ascertainment lift per unit testing level
    testing_dim: int = 11         # which action dim is the testing lever
    case_noise_sigma: float = 0.0     # lognormal sd, reported-case channel
    hosp_noise_sigma: float = 0.0     # lognormal sd, hospitalization channel
    survey_noise_sigma: float = 0.0   # truncated-normal sd, survey channel
    n_sim: float = 1e6            # binomial sampling grain (individuals)
    deterministic: bool = False   # expectation propagation, noise and jumps off

    def __post_init__(self):
        nonneg = ("beta0", "sigma", "gamma", "hosp_stay", "waning_rate",
                  "lambda_policy", "lambda_risk", "lambda_fatigue", "risk_scale",
                  "fatigue_gain", "fatigue_decay", "regime_jump_scale",
                  "testing_gain", "case_noise_sigma",
                  "hosp_noise_sigma", "survey_noise_sigma")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        for name in ("ihr", "kappa", "regime_jump_prob", "season_amplitude"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.rho0 <= 1.0:
            raise ValidationError("rho0 must lie in (0, 1]")
        if not (isinstance(self.hosp_lag, (int, np.integer)) and self.hosp_lag >= 0):
            raise ValidationError("hosp_lag must be a nonnegative integer")
        if not 0 <= self.testing_dim < N_ACTION_DIMS:
            raise ValidationError("testing_dim out of range")
        if self.season_period_weeks <= 0:
            raise ValidationError("season_period_weeks must be positive")
        if self.n_sim <= 0:
            raise ValidationError("n_sim must be positive")

    def with_overrides(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown ModelParams fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

_U64 = np.uint64


def _splitmix64(z: int) -> int:
    """Single splitmix64 round; good 64-bit mixing for key derivation."""
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise ValidationError(f"stream label must be int or str, got {type(label).__name__}")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    The pair fully determines the generated sequence, and children derived
    with distinct labels are statistically independent, so parallel or
    re-ordered execution cannot change results.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                        self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=_U64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels) -> "RngStream":
        """Derive an independent substream from hashable labels."""
        sid = self.stream_id & 0xFFFFFFFFFFFFFFFF
        for lab in labels:
            sid = _splitmix64(sid ^ _label_to_int(lab))
        return RngStream(seed=self.seed, stream_id=sid)


def derive_stream(seed: int, stream_id: int = 0) -> RngStream:
    return RngStream(seed=int(seed), stream_id=int(stream_id))


# ---------------------------------------------------------------------------
# Serialization helpers shared by CLI / service outputs
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    """Stable JSON encoding used for artifacts and hashing."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def config_hash(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()
