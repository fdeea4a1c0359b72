"""HTTP API for interactive sessions.

A session wraps one hidden ground-truth simulator plus the analyst's
particle-filter belief. POST /sessions creates it; POST /step commits one
week (action in, observation + belief summary out); POST /rollouts scores
candidate action sequences from the current belief without touching
session state. The truth simulator can run under different parameters
than the analyst's model (twin_params) to demonstrate misspecification.

Every response carries the config hash and the seed-ledger entries of the
streams consumed, so a session is replayable from (config, seed) alone.
All state is in-memory; GET /sessions/{id}/export dumps a session for
external persistence.
"""

from __future__ import annotations

import dataclasses
import hashlib
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .core import (
    Action,
    ModelParams,
    ValidationError,
    canonical_json,
    config_hash,
    derive_stream,
    validate_dims,
)
from .dynamics import step
from .filtering import Belief, belief_summary, filter_step, init_belief
from .observation import observe
from .optimize import RewardSpec
from .rollout import FAN_QUANTILES, rollout
from .scenarios import ScenarioConfig, initial_state

DEFAULT_PARTICLES = 256
DEFAULT_SAMPLES = 30
FAN_CHANNELS = ("hosp", "cases", "census")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details=()):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = list(details)


@dataclass
class Session:
    """One live world: hidden truth, analyst belief, committed history."""

    id: str
    cfg: ScenarioConfig
    truth_params: ModelParams
    seed: int
    debug: bool
    particles: int
    truth_state: object = None
    belief: Belief | None = None
    cursor: int = 0
    actions: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    truth_states: list = field(default_factory=list)
    ledger: list = field(default_factory=list)
    idem: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def root(self):
        return derive_stream(self.seed).child("session")

    @property
    def config_sha(self) -> str:
        return config_hash(canonical_json(self.cfg.to_json_dict()))

    def state_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.cursor).encode())
        h.update(np.ascontiguousarray(self.belief.states).tobytes())
        h.update(np.ascontiguousarray(self.belief.log_weights).tobytes())
        h.update(canonical_json(_latent_dict(self.truth_state)).encode())
        return h.hexdigest()

    def current_summary(self) -> dict:
        a = self.actions[-1] if self.actions else Action.uniform(0)
        return belief_summary(self.belief, a, self.cfg.params)


def _latent_dict(s) -> dict:
    return {"S": s.S, "E": s.E, "I": s.I, "R": s.R, "Hosp": s.Hosp,
            "new_infections": s.new_infections,
            "hosp_admissions": s.hosp_admissions,
            "b": s.b, "f": s.f, "m": s.m, "w": s.w}


def _session_payload(ses: Session) -> dict:
    return {
        "id": ses.id,
        "week": ses.cursor,
        "config_hash": ses.config_sha,
        "state_hash": ses.state_hash(),
        "belief": ses.current_summary(),
        "seed_ledger": list(ses.ledger),
        "twin": ses.truth_params != ses.cfg.params,
        "particles": ses.particles,
    }


def _parse_action(body, week: int) -> Action:
    if not isinstance(body, dict) or "dims" not in body:
        raise ApiError(422, "validation_error", "action must be an object with dims",
                       ["missing field: dims"])
    dims = body["dims"]
    violations = validate_dims(tuple(dims) if isinstance(dims, (list, tuple)) else dims)
    if violations:
        raise ApiError(422, "validation_error", "invalid action", violations)
    got_week = body.get("week", week)
    if got_week != week:
        raise ApiError(422, "validation_error",
                       f"action week {got_week} != expected {week}",
                       [f"expected week {week}"])
    return Action(dims=tuple(int(v) for v in dims), week_index=week)


def _quantile_fan(series: np.ndarray) -> dict:
    """Per-week mean and 5/25/50/75/95 quantiles of (K, H) sample paths."""
    if series.size == 0:
        return {"weeks": [], "mean": [],
                **{f"q{int(q * 100):02d}": [] for q in FAN_QUANTILES}}
    out = {"mean": [float(v) for v in series.mean(axis=0)]}
    for q in FAN_QUANTILES:
        out[f"q{int(q * 100):02d}"] = [float(v) for v in
                                       np.quantile(series, q, axis=0)]
    return out


def create_app() -> FastAPI:
    app = FastAPI(title="epiworld", docs_url=None, redoc_url=None)
    # browser clients are served from their own origin; the API carries no
    # credentials, so a blanket allowance is safe
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    sessions: dict[str, Session] = {}
    store_lock = threading.Lock()

    def get_session(sid: str) -> Session:
        ses = sessions.get(sid)
        if ses is None:
            raise ApiError(404, "not_found", f"unknown session {sid}")
        return ses

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message,
                                     "details": exc.details})

    @app.exception_handler(RequestValidationError)
    async def _req_error(request: Request, exc: RequestValidationError):
        details = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}"
                   for e in exc.errors()]
        return JSONResponse(status_code=422,
                            content={"code": "validation_error",
                                     "message": "invalid request body",
                                     "details": details})

    @app.get("/healthz")
    async def healthz():
        from . import kernels

        return {"status": "ok", "backend": kernels.active_backend()}

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict):
        cfg_dict = body.get("config")
        preset = body.get("preset")
        if cfg_dict is None and preset is None:
            raise ApiError(422, "validation_error",
                           "need config object or preset name",
                           ["missing field: config or preset"])
        try:
            if cfg_dict is not None:
                cfg = ScenarioConfig.from_json_dict(cfg_dict)
            else:
                from .config import load_preset

                cfg = load_preset(str(preset))[0]
            twin = body.get("twin_params") or {}
            truth_params = cfg.params.with_overrides(**twin)
            particles = int(body.get("particles", DEFAULT_PARTICLES))
            if particles < 1:
                raise ValidationError("particles must be >= 1")
            seed = int(body.get("seed", cfg.seeds[0]))
        except (ValidationError, TypeError, KeyError) as e:
            raise ApiError(422, "validation_error", "invalid session config",
                           [str(e)])

        ses = Session(id=uuid.uuid4().hex, cfg=cfg, truth_params=truth_params,
                      seed=seed, debug=bool(body.get("debug", False)),
                      particles=particles)
        ses.truth_state = initial_state(
            dataclasses.replace(cfg, params=truth_params))
        ses.belief = init_belief(cfg.prior, particles,
                                 ses.root.child("belief-init"),
                                 hosp_lag=cfg.params.hosp_lag)
        ses.ledger.append("belief-init")
        with store_lock:
            sessions[ses.id] = ses
        return _session_payload(ses)

    @app.get("/sessions/{sid}")
    async def get_session_view(sid: str):
        ses = get_session(sid)
        with ses.lock:
            payload = _session_payload(ses)
            payload["config"] = ses.cfg.to_json_dict()
            return payload

    @app.post("/sessions/{sid}/step")
    async def step_session(sid: str, body: dict):
        ses = get_session(sid)
        with ses.lock:
            key = body.get("idempotency_key")
            fingerprint = canonical_json(body.get("action"))
            if key is not None and key in ses.idem:
                stored_fp, stored_resp = ses.idem[key]
                if stored_fp == fingerprint:
                    return stored_resp
                raise ApiError(409, "conflict",
                               f"idempotency key {key!r} was used with a "
                               "different request body",
                               ["stale idempotency key"])
            week = ses.cursor + 1
            a = _parse_action(body.get("action"), week)

            if ses.cursor >= ses.cfg.horizon:
                raise ApiError(409, "conflict",
                               f"session horizon {ses.cfg.horizon} reached")
            vacc = ses.cfg.vaccination[week - 1] if ses.cfg.vaccination else 0.0
            truth = step(ses.truth_state, a, ses.truth_params,
                         ses.root.child("truth", week), vacc_fraction=vacc)
            obs = observe(truth, a, ses.cfg.regime, ses.truth_params,
                          ses.root.child("obs", week), week_index=week)
            belief = filter_step(ses.belief, a, obs, ses.cfg.params,
                                 ses.cfg.regime, ses.root.child("filter", week))

            ses.truth_state = truth
            ses.belief = belief
            ses.cursor = week
            ses.actions.append(a)
            ses.observations.append(obs)
            ses.truth_states.append(truth)
            used = [f"truth/{week}", f"obs/{week}", f"filter/{week}"]
            ses.ledger.extend(used)
            summary = ses.current_summary()
            ses.summaries.append(summary)

            resp = {
                "id": ses.id,
                "week": ses.cursor,
                "observation": obs.to_json_dict(),
                "belief": summary,
                "config_hash": ses.config_sha,
                "state_hash": ses.state_hash(),
                "streams_used": used,
                "seed_ledger": list(ses.ledger),
            }
            if ses.debug:
                resp["truth"] = _latent_dict(truth)
            if key is not None:
                ses.idem[key] = (fingerprint, resp)
            return resp

    @app.post("/sessions/{sid}/rollouts")
    async def rollout_candidates(sid: str, body: dict):
        ses = get_session(sid)
        with ses.lock:
            before = ses.state_hash()
            raw = body.get("candidates")
            if not isinstance(raw, list) or not raw:
                raise ApiError(422, "validation_error",
                               "candidates must be a non-empty list",
                               ["missing field: candidates"])
            samples = int(body.get("samples", DEFAULT_SAMPLES))
            if samples < 1:
                raise ApiError(422, "validation_error", "samples must be >= 1",
                               ["samples < 1"])
            try:
                reward = RewardSpec.from_json_dict(body["reward"]) \
                    if "reward" in body else RewardSpec()
            except (ValidationError, TypeError, KeyError) as e:
                raise ApiError(422, "validation_error", "invalid reward spec",
                               [str(e)])

            candidates = []
            for ci, seq in enumerate(raw):
                if not isinstance(seq, list):
                    raise ApiError(422, "validation_error",
                                   f"candidate {ci} must be a list of actions",
                                   [f"candidate {ci}: not a list"])
                acts = []
                for t, ab in enumerate(seq):
                    week = ses.cursor + t + 1
                    try:
                        acts.append(_parse_action(ab, week))
                    except ApiError as e:
                        raise ApiError(422, "validation_error",
                                       f"candidate {ci}, action {t}: {e.message}",
                                       e.details)
                candidates.append(tuple(acts))

            results = []
            for ci, acts in enumerate(candidates):
                H = len(acts)
                vacc = None
                if ses.cfg.vaccination and H:
                    tail = list(ses.cfg.vaccination[ses.cursor:ses.cursor + H])
                    vacc = tail + [0.0] * (H - len(tail))
                paths = []
                for s in range(samples):
                    rng = ses.root.child("rollouts", ses.cursor, ci, s)
                    paths.append(rollout(ses.belief, acts, ses.cfg.params,
                                         ses.cfg.regime, rng, vaccination=vacc,
                                         icu_capacity=ses.cfg.icu_capacity))
                hosp = np.array([p.hosp_series_per_100k() for p in paths])
                cases = np.array([[o.reported_cases_per_100k
                                   for o in p.observations] for p in paths])
                census = np.array([p.census_series_per_100k() for p in paths])
                mean_metrics = {
                    name: float(np.mean([getattr(p.metrics, name) for p in paths]))
                    for name in ("cumulative_infections", "peak_hosp_per_100k",
                                 "peak_week", "icu_violation_weeks",
                                 "end_hosp_per_100k")}
                score = float(np.mean([reward.score(p.metrics) for p in paths]))
                violating = mean_metrics["icu_violation_weeks"] > 0
                results.append({
                    "index": ci,
                    "weeks": [ses.cursor + t + 1 for t in range(H)],
                    "fan": {"hosp": _quantile_fan(hosp),
                            "cases": _quantile_fan(cases),
                            "census": _quantile_fan(census)},
                    "metrics_mean": mean_metrics,
                    "score": score,
                    "violating": violating,
                })

            order = sorted(range(len(results)),
                           key=lambda i: (results[i]["violating"],
                                          -results[i]["score"], i))
            for rank, i in enumerate(order, start=1):
                results[i]["rank"] = rank

            after = ses.state_hash()
            if after != before:
                raise ApiError(500, "internal_error",
                               "rollout mutated session state")
            return {
                "candidates": results,
                "samples": samples,
                "week": ses.cursor,
                "config_hash": ses.config_sha,
                "state_hash": after,
                "seed_ledger": list(ses.ledger),
            }

    @app.get("/sessions/{sid}/history")
    async def history(sid: str):
        ses = get_session(sid)
        with ses.lock:
            weeks = []
            for i in range(ses.cursor):
                row = {
                    "week": i + 1,
                    "action": ses.actions[i].to_json_dict(),
                    "observation": ses.observations[i].to_json_dict(),
                    "belief": ses.summaries[i],
                }
                if ses.debug:
                    row["truth"] = _latent_dict(ses.truth_states[i])
                weeks.append(row)
            return {"id": ses.id, "weeks": weeks,
                    "config_hash": ses.config_sha,
                    "seed_ledger": list(ses.ledger)}

    @app.get("/sessions/{sid}/export")
    async def export(sid: str):
        ses = get_session(sid)
        with ses.lock:
            doc = {
                "id": ses.id,
                "seed": ses.seed,
                "week": ses.cursor,
                "config": ses.cfg.to_json_dict(),
                "config_hash": ses.config_sha,
                "actions": [a.to_json_dict() for a in ses.actions],
                "observations": [o.to_json_dict() for o in ses.observations],
                "beliefs": list(ses.summaries),
                "seed_ledger": list(ses.ledger),
                "particles": ses.particles,
            }
            if ses.debug:
                doc["truth"] = [_latent_dict(s) for s in ses.truth_states]
                doc["twin_params"] = ses.truth_params.to_json_dict()
            return doc

    return app

