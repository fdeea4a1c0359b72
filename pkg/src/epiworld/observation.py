"""Policy-dependent observation layer.

Three surveillance channels derived from the latent state: reported cases
(ascertainment scales with the testing action dim, so measurement is
endogenous to policy), lagged hospitalization admissions, and a behavioral
survey subject to strategic over-reporting of compliance. Reporting delays
live in RevisionTriangle: early counts for an event week are a fraction of
the final "resting" count and mature along a profile c[k].

Counts are expressed per 100k population. Noise is multiplicative lognormal
on count channels and truncated-normal on the survey channel; all sigmas
default to 0 (noise-free).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .core import (
    ACTION_MAX_LEVEL,
    Action,
    LatentState,
    ModelParams,
    RngStream,
    ValidationError,
)

REPORT_SCALE = 1e5        # per-capita fraction -> per-100k counts
COUNT_FLOOR = 1e-6        # keeps log() finite on zero counts
DEGENERATE_TOL = 1e-9     # match tolerance for zero-noise point-mass densities

OBS_CSV_FIELDS = ("week", "reported_cases_per_100k", "hosp_per_100k", "survey_compliance")
TRIANGLE_CSV_FIELDS = ("event_week", "lag", "count")


@dataclass(frozen=True)
class Observation:
    """One week's surveillance bundle."""

    week_index: int
    reported_cases_per_100k: float
    hosp_per_100k: float
    survey_compliance: float

    def __post_init__(self):
        if self.reported_cases_per_100k < 0 or self.hosp_per_100k < 0:
            raise ValidationError("observation counts must be nonnegative")
        if not 0.0 <= self.survey_compliance <= 1.0:
            raise ValidationError(
                f"survey_compliance outside [0, 1]: {self.survey_compliance}")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["week"] = d.pop("week_index")
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "Observation":
        return cls(week_index=int(d["week"]),
                   reported_cases_per_100k=float(d["reported_cases_per_100k"]),
                   hosp_per_100k=float(d["hosp_per_100k"]),
                   survey_compliance=float(d["survey_compliance"]))


@dataclass(frozen=True)
class MisreportingRegime:
    """Strategic compliance over-reporting regime.

    A fraction fr of respondents inflates their reported compliance by
    delta (capped at 1); the rest answer truthfully. "none" reports truth,
    "pure" inflates everyone.
    """

    tag: str
    fr: float
    delta: float

    def __post_init__(self):
        tag = self.tag.lower()
        object.__setattr__(self, "tag", tag)
        if tag not in ("none", "mixed", "pure"):
            raise ValidationError(f"regime tag must be none|mixed|pure, got {self.tag!r}")
        if not 0.0 <= self.fr <= 1.0:
            raise ValidationError(f"fr outside [0, 1]: {self.fr}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValidationError(f"delta outside [0, 1]: {self.delta}")
        if tag == "none" and self.fr != 0.0:
            raise ValidationError("regime 'none' requires fr = 0")
        if tag == "pure" and self.fr != 1.0:
            raise ValidationError("regime 'pure' requires fr = 1")

    @classmethod
    def none(cls) -> "MisreportingRegime":
        return cls(tag="none", fr=0.0, delta=0.0)

    @classmethod
    def mixed(cls, fr: float = 0.5, delta: float = 0.2) -> "MisreportingRegime":
        return cls(tag="mixed", fr=fr, delta=delta)

    @classmethod
    def pure(cls, delta: float = 0.78) -> "MisreportingRegime":
        return cls(tag="pure", fr=1.0, delta=delta)

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "MisreportingRegime":
        return cls(tag=str(d["tag"]), fr=float(d["fr"]), delta=float(d["delta"]))


def misreport_survey(b: float, regime: MisreportingRegime) -> float:
    """Reported compliance: truthful share plus inflated share, capped at 1."""
    if not 0.0 <= b <= 1.0:
        raise ValidationError(f"true compliance outside [0, 1]: {b}")
    return (1.0 - regime.fr) * b + regime.fr * min(1.0, b + regime.delta)


def ascertainment(a_prev: Action, params: ModelParams) -> float:
    """Case detection probability under last week's testing level."""
    level = a_prev.dims[params.testing_dim] / ACTION_MAX_LEVEL
    return min(1.0, max(0.0, params.rho0 * (1.0 + params.testing_gain * level)))


def _truncnorm01_sample(loc: float, sigma: float, gen: np.random.Generator) -> float:
    """Inverse-CDF draw from Normal(loc, sigma) truncated to [0, 1]."""
    from scipy.special import ndtr, ndtri

    lo = ndtr((0.0 - loc) / sigma)
    hi = ndtr((1.0 - loc) / sigma)
    u = gen.random()
    x = loc + sigma * ndtri(lo + u * (hi - lo))
    return float(min(1.0, max(0.0, x)))


def observe(x: LatentState, a_prev: Action, regime: MisreportingRegime,
            params: ModelParams, rng=None, week_index: int = 0) -> Observation:
    """Emit one week's Observation from a latent state.

    rng (RngStream or Generator) is only consumed when a noise sigma is
    positive and deterministic mode is off. Draw order: case noise, hosp
    noise, survey noise.
    """
    rho = ascertainment(a_prev, params)
    cases = x.new_infections * rho * REPORT_SCALE
    hosp = x.hosp_admissions * REPORT_SCALE
    survey = misreport_survey(x.b, regime)

    noisy = not params.deterministic and (
        params.case_noise_sigma > 0 or params.hosp_noise_sigma > 0
        or params.survey_noise_sigma > 0)
    if noisy:
        if isinstance(rng, RngStream):
            gen = rng.generator()
        elif isinstance(rng, np.random.Generator):
            gen = rng
        else:
            raise ValidationError("noisy observation requires an rng")
        if params.case_noise_sigma > 0:
            cases *= math.exp(params.case_noise_sigma * gen.standard_normal())
        if params.hosp_noise_sigma > 0:
            hosp *= math.exp(params.hosp_noise_sigma * gen.standard_normal())
        if params.survey_noise_sigma > 0:
            survey = _truncnorm01_sample(survey, params.survey_noise_sigma, gen)

    return Observation(week_index=week_index,
                       reported_cases_per_100k=float(cases),
                       hosp_per_100k=float(hosp),
                       survey_compliance=float(survey))


# ---------------------------------------------------------------------------
# Channel log-densities (vectorized over a particle batch)
# ---------------------------------------------------------------------------


def _degenerate_log(match: np.ndarray) -> np.ndarray:
    return np.where(match, 0.0, -np.inf)


def count_channel_logpdf(obs_value: float, pred: np.ndarray, sigma: float) -> np.ndarray:
    """Lognormal log-density of an observed count given per-particle predictions.

    sigma = 0 degenerates to a point mass: 0 where log-scale prediction
    matches the observation within DEGENERATE_TOL, -inf elsewhere.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if sigma > 0:
        return kernels.lognormal_logpdf(float(obs_value), pred, float(sigma), COUNT_FLOOR)
    d = np.abs(np.log(obs_value + COUNT_FLOOR) - np.log(pred + COUNT_FLOOR))
    return _degenerate_log(d <= DEGENERATE_TOL)


def survey_channel_logpdf(obs_value: float, pred_b: np.ndarray, sigma: float) -> np.ndarray:
    """Truncated-normal-on-[0,1] log-density of the survey channel."""
    pred_b = np.asarray(pred_b, dtype=np.float64)
    if sigma > 0:
        return kernels.truncnorm01_logpdf(float(obs_value), pred_b, float(sigma))
    return _degenerate_log(np.abs(obs_value - pred_b) <= DEGENERATE_TOL)


# ---------------------------------------------------------------------------
# Reporting-delay revision triangles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RevisionTriangle:
    """Counts r[t][k] for event week t as known at reporting lag k.

    Column k = K_max holds the final ("resting") count. profile is the
    maturity curve c[k] used to build the triangle; triangles ingested from
    CSV carry profile = None because the curve is not recoverable from
    counts alone.
    """

    counts: tuple[tuple[int, ...], ...]
    profile: tuple[float, ...] | None = None

    def __post_init__(self):
        counts = tuple(tuple(int(v) for v in row) for row in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise ValidationError("triangle has no event weeks")
        width = len(counts[0])
        if width == 0:
            raise ValidationError("triangle has no lag columns")
        for t, row in enumerate(counts):
            if len(row) != width:
                raise ValidationError(f"ragged triangle at event week {t}")
            if any(v < 0 for v in row):
                raise ValidationError(f"negative count at event week {t}")
        if self.profile is not None:
            prof = tuple(float(c) for c in self.profile)
            object.__setattr__(self, "profile", prof)
            if len(prof) != width:
                raise ValidationError("profile length != number of lag columns")
            if any(not 0.0 < c <= 1.0 for c in prof):
                raise ValidationError("profile values must lie in (0, 1]")
            if any(b < a for a, b in zip(prof, prof[1:])):
                raise ValidationError("profile must be non-decreasing")
            if prof[-1] != 1.0:
                raise ValidationError("profile must end at 1.0")

    @property
    def k_max(self) -> int:
        return len(self.counts[0]) - 1

    @property
    def n_weeks(self) -> int:
        return len(self.counts)

    def final(self, t: int) -> int:
        return self.counts[t][self.k_max]

    @classmethod
    def build(cls, finals, profile) -> "RevisionTriangle":
        """Noise-free triangle: r[t][k] = round(final[t] * c[k])."""
        prof = tuple(float(c) for c in profile)
        rows = []
        for f in finals:
            if f < 0:
                raise ValidationError("final counts must be nonnegative")
            rows.append(tuple(int(np.rint(float(f) * c)) for c in prof))
        return cls(counts=tuple(rows), profile=prof)


def report_as_of(tri: RevisionTriangle, event_week: int, as_of_week: int) -> int:
    """The count for event_week as known at as_of_week."""
    if not 0 <= event_week < tri.n_weeks:
        raise ValidationError(f"event_week {event_week} outside triangle")
    if as_of_week < event_week:
        raise ValidationError(
            f"as_of_week {as_of_week} precedes event_week {event_week} (future knowledge)")
    lag = min(as_of_week - event_week, tri.k_max)
    return tri.counts[event_week][lag]


def stabilization_time(tri: RevisionTriangle, event_week: int, tol: float) -> int:
    """Smallest lag k with every later report within tol of the resting count.

    Zero resting counts stabilize at 0 by convention.
    """
    if not 0.0 < tol <= 1.0:
        raise ValidationError(f"tol must lie in (0, 1], got {tol}")
    if not 0 <= event_week < tri.n_weeks:
        raise ValidationError(f"event_week {event_week} outside triangle")
    row = tri.counts[event_week]
    final = row[tri.k_max]
    if final == 0:
        return 0
    k_star = tri.k_max
    for k in range(tri.k_max, -1, -1):
        if abs(row[k] - final) <= tol * final:
            k_star = k
        else:
            break
    return k_star


# ---------------------------------------------------------------------------
# CSV codecs (deterministic byte-for-byte formatting)
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_observations_csv(path, observations) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(OBS_CSV_FIELDS)
        for o in observations:
            wr.writerow([o.week_index, _fmt(o.reported_cases_per_100k),
                         _fmt(o.hosp_per_100k), _fmt(o.survey_compliance)])


def _skip_comments(fh):
    return (line for line in fh if not line.startswith("#"))


def read_observations_csv(path) -> list[Observation]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(_skip_comments(fh))
        missing = set(OBS_CSV_FIELDS) - set(rd.fieldnames or ())
        if missing:
            raise ValidationError(f"observations CSV missing columns: {sorted(missing)}")
        for row in rd:
            out.append(Observation(
                week_index=int(row["week"]),
                reported_cases_per_100k=float(row["reported_cases_per_100k"]),
                hosp_per_100k=float(row["hosp_per_100k"]),
                survey_compliance=float(row["survey_compliance"])))
    return out


def write_triangle_csv(path, tri: RevisionTriangle) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRIANGLE_CSV_FIELDS)
        for t, row in enumerate(tri.counts):
            for k, v in enumerate(row):
                wr.writerow([t, k, v])


def read_triangle_csv(path) -> RevisionTriangle:
    cells: dict[tuple[int, int], int] = {}
    with open(path, newline="") as fh:
        rd = csv.DictReader(_skip_comments(fh))
        missing = set(TRIANGLE_CSV_FIELDS) - set(rd.fieldnames or ())
        if missing:
            raise ValidationError(f"triangle CSV missing columns: {sorted(missing)}")
        for row in rd:
            key = (int(row["event_week"]), int(row["lag"]))
            if key in cells:
                raise ValidationError(f"duplicate triangle cell {key}")
            cells[key] = int(row["count"])
    if not cells:
        raise ValidationError("triangle CSV has no rows")
    n_weeks = max(t for t, _ in cells) + 1
    width = max(k for _, k in cells) + 1
    rows = []
    for t in range(n_weeks):
        row = []
        for k in range(width):
            if (t, k) not in cells:
                raise ValidationError(f"missing triangle cell ({t}, {k})")
            row.append(cells[(t, k)])
        rows.append(tuple(row))
    return RevisionTriangle(counts=tuple(rows), profile=None)
