"""Batch command-line entry point.

Subcommands: simulate, filter, calibrate, plan, case, ingest, serve. Each
batch subcommand reads one TOML config (or a named preset), derives all
randomness from --seed, and writes its artifacts only under --out. Every
artifact embeds the config's sha256 and the seed, so identical invocations
produce byte-identical outputs and any artifact can be traced back to its
inputs. EPIWORLD_THREADS caps kernel parallelism (see epiworld.kernels).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .calibrate import fit, fit_report
from .config import (
    PRESET_NAMES,
    calibration_from_dict,
    load_preset,
    load_scenario,
    plan_from_dict,
)
from .core import (
    Action,
    EpiworldError,
    ValidationError,
    canonical_json,
    config_hash,
    derive_stream,
)
from .filtering import (
    BELIEF_CSV_FIELDS,
    belief_summary,
    ess,
    filter_step,
    init_belief,
)
from .observation import OBS_CSV_FIELDS
from .optimize import cem_plan
from .rollout import rollout
from .scenarios import (
    ScenarioConfig,
    ingest_oxcgrt,
    initial_state,
    run_case_backfill,
    run_case_counterfactual,
    run_case_misreporting,
    run_case_policy_eval,
)

TRAJECTORY_CSV_FIELDS = (
    "week", "S", "E", "I", "R", "Hosp", "new_infections", "hosp_admissions",
    "b", "f", "m", "w", "admissions_per_100k", "census_per_100k")


# ---------------------------------------------------------------------------
# Artifact writers (deterministic formatting, provenance embedded)
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, fields, rows, provenance: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={provenance['config_sha256']}"
                 f" seed={provenance['seed']}\n")
        wr = csv.writer(fh)
        wr.writerow(fields)
        for row in rows:
            wr.writerow([_fmt(v) if isinstance(v, (int, float, np.floating, np.integer))
                         else str(v) for v in row])


def _write_json(path: Path, payload: dict, provenance: dict) -> None:
    doc = dict(payload)
    doc["provenance"] = provenance
    with open(path, "w") as fh:
        fh.write(canonical_json(doc))
        fh.write("\n")


def _write_jsonl(path: Path, entries, provenance: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"provenance": provenance}, sort_keys=True))
        fh.write("\n")
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True, allow_nan=False))
            fh.write("\n")


def _trajectory_rows(result):
    rows = []
    for s, o in zip(result.states, result.observations):
        rows.append((o.week_index, s.S, s.E, s.I, s.R, s.Hosp,
                     s.new_infections, s.hosp_admissions, s.b, s.f, s.m, s.w,
                     s.hosp_admissions * 1e5, s.Hosp * 1e5))
    return rows


def _obs_rows(observations):
    return [(o.week_index, o.reported_cases_per_100k, o.hosp_per_100k,
             o.survey_compliance) for o in observations]


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _load_config(args) -> tuple[ScenarioConfig, dict, str]:
    """(scenario, raw toml dict, sha256) from --config or --preset."""
    if getattr(args, "config", None):
        cfg, raw, sha = load_scenario(args.config)
    elif getattr(args, "preset", None):
        cfg, raw, sha = load_preset(args.preset)
    else:
        raise ValidationError("need --config PATH or --preset NAME")
    if getattr(args, "deterministic", False):
        cfg = dataclasses.replace(
            cfg, params=cfg.params.with_overrides(deterministic=True))
    return cfg, raw, sha


def _resolve_seed(args, cfg: ScenarioConfig) -> int:
    return int(args.seed) if args.seed is not None else cfg.seeds[0]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule(cfg: ScenarioConfig):
    if cfg.actions is not None:
        return cfg.actions
    return tuple(Action.uniform(1, week_index=k) for k in range(cfg.horizon))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg, _, sha = _load_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    prov = {"config_sha256": sha, "seed": seed}

    res = rollout(initial_state(cfg), _schedule(cfg), cfg.params, cfg.regime,
                  derive_stream(seed).child("simulate"),
                  vaccination=cfg.vaccination, icu_capacity=cfg.icu_capacity)
    _write_csv(out / "trajectory.csv", TRAJECTORY_CSV_FIELDS,
               _trajectory_rows(res), prov)
    _write_csv(out / "observations.csv", OBS_CSV_FIELDS,
               _obs_rows(res.observations), prov)
    _write_json(out / "metrics.json",
                {"metrics": res.metrics.to_json_dict(),
                 "config": cfg.to_json_dict()}, prov)
    return 0


def _cmd_filter(args) -> int:
    cfg, _, sha = _load_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    prov = {"config_sha256": sha, "seed": seed}
    root = derive_stream(seed)
    actions = _schedule(cfg)

    truth = rollout(initial_state(cfg), actions, cfg.params, cfg.regime,
                    root.child("truth"), vaccination=cfg.vaccination,
                    icu_capacity=cfg.icu_capacity)
    _write_csv(out / "truth.csv", TRAJECTORY_CSV_FIELDS,
               _trajectory_rows(truth), prov)
    _write_csv(out / "observations.csv", OBS_CSV_FIELDS,
               _obs_rows(truth.observations), prov)

    bel = init_belief(cfg.prior, args.particles, root.child("belief-init"),
                      hosp_lag=cfg.params.hosp_lag)
    rows = []
    for a, o in zip(actions, truth.observations):
        bel = filter_step(bel, a, o, cfg.params, cfg.regime,
                          root.child("filter", o.week_index))
        rows.append(belief_summary(bel, a, cfg.params))
    _write_csv(out / "belief.csv", BELIEF_CSV_FIELDS,
               [[r[k] for k in BELIEF_CSV_FIELDS] for r in rows], prov)
    _write_json(out / "filter.json",
                {"cum_loglik": bel.cum_loglik, "final_ess": ess(bel),
                 "particles": args.particles, "weeks": len(rows),
                 "config": cfg.to_json_dict()}, prov)
    return 0


def _cmd_calibrate(args) -> int:
    cfg, raw, sha = _load_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    prov = {"config_sha256": sha, "seed": seed}
    if "calibrate" not in raw:
        raise ValidationError("config needs a [calibrate] table")
    cal = calibration_from_dict(raw["calibrate"], cfg.params, cfg.prior,
                                cfg.regime)

    actions = _schedule(cfg)
    truth = rollout(initial_state(cfg), actions, cfg.params, cfg.regime,
                    derive_stream(seed).child("truth"),
                    vaccination=cfg.vaccination, icu_capacity=cfg.icu_capacity)
    result = fit((truth.observations, actions), cal, seed)

    names = sorted(cal.free)
    _write_csv(out / "trace.csv", ["index", "restart", *names, "value"],
               [(i, e["restart"], *[e["theta"][n] for n in names], e["value"])
                for i, e in enumerate(result.trace)], prov)
    _write_json(out / "fit.json",
                {"report": fit_report(result, cal, seed),
                 "true_params": {n: getattr(cfg.params, n) for n in names},
                 "config": cfg.to_json_dict()}, prov)
    return 0


def _cmd_plan(args) -> int:
    cfg, raw, sha = _load_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    prov = {"config_sha256": sha, "seed": seed}
    cem_cfg, reward, horizon = plan_from_dict(raw.get("plan", {}))

    result = cem_plan(initial_state(cfg), horizon, cem_cfg, reward,
                      cfg.params, seed, regime=cfg.regime,
                      vaccination=(cfg.vaccination[:horizon]
                                   if cfg.vaccination else None),
                      icu_capacity=cfg.icu_capacity)
    _write_json(out / "plan.json",
                {"plan": result.to_json_dict(), "reward": reward.to_json_dict(),
                 "config": cfg.to_json_dict()}, prov)
    _write_jsonl(out / "optlog.jsonl", result.trace, prov)
    return 0


_CASE_RUNNERS = {
    "misreporting": run_case_misreporting,
    "backfill": run_case_backfill,
    "counterfactual": run_case_counterfactual,
    "policy-eval": run_case_policy_eval,
}


def _cmd_case(args) -> int:
    if args.name not in _CASE_RUNNERS:
        raise ValidationError(
            f"unknown case {args.name!r}; have {sorted(_CASE_RUNNERS)}")
    if not getattr(args, "config", None) and not getattr(args, "preset", None):
        args.preset = args.name
    cfg, _, sha = _load_config(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(int(args.seed),) + cfg.seeds[1:])
    seed = cfg.seeds[0]
    out = _out_dir(args)
    prov = {"config_sha256": sha, "seed": seed}

    if args.name == "misreporting":
        doc = run_case_misreporting(cfg)
        rows = [(tag, s, row["per_seed"][i])
                for tag, row in doc["regimes"].items()
                for i, s in enumerate(cfg.seeds)]
        _write_csv(out / "table.csv", ("regime", "seed", "weeks_to_suppression"),
                   rows, prov)
    elif args.name == "backfill":
        doc = run_case_backfill(cfg)
        rows = [(name, t, row["times"][t])
                for name, row in doc["profiles"].items()
                for t in range(len(row["times"]))]
        _write_csv(out / "table.csv",
                   ("profile", "event_week", "stabilization_time"), rows, prov)
    elif args.name == "counterfactual":
        res_base, res_alt, doc = run_case_counterfactual(cfg)
        rows = [(k, arm, v)
                for arm, res in (("baseline", res_base), ("alternative", res_alt))
                for k, v in enumerate(res.hosp_series_per_100k(), start=1)]
        _write_csv(out / "trajectories.csv",
                   ("week", "arm", "admissions_per_100k"), rows, prov)
    else:
        doc = run_case_policy_eval(cfg)
        rows = [(r["region"], r["alignment"],
                 "" if r["hosp_reduction"] is None else r["hosp_reduction"])
                for r in doc["regions"]]
        _write_csv(out / "table.csv",
                   ("region", "alignment_pct", "hosp_reduction_pct"), rows, prov)

    _write_json(out / "case.json", doc, prov)
    return 0


def _cmd_ingest(args) -> int:
    out = _out_dir(args)
    with open(args.csv, "rb") as fh:
        sha = config_hash(fh.read())
    prov = {"config_sha256": sha, "seed": 0}
    result = ingest_oxcgrt(args.csv)
    _write_json(out / "ingest.json",
                {"actions": {region: [list(a.dims) for a in acts]
                             for region, acts in sorted(result.actions.items())},
                 "weeks": {region: [a.week_index for a in acts]
                           for region, acts in sorted(result.actions.items())},
                 "warnings": list(result.warnings),
                 "gaps": {k: list(v) for k, v in sorted(result.gaps.items())}},
                prov)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="epiworld",
        description="Epidemic world-model engine: simulate, filter, "
                    "calibrate, plan, run case studies, ingest action data, "
                    "or serve the HTTP API.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, preset_ok=True):
        sp.add_argument("--config", help="scenario TOML path")
        if preset_ok:
            sp.add_argument("--preset", choices=PRESET_NAMES,
                            help="named built-in scenario")
        sp.add_argument("--seed", type=int, default=None,
                        help="root seed (default: first seed in config)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--deterministic", action="store_true",
                        help="force expectation dynamics, no noise or jumps")

    sp = sub.add_parser("simulate", help="open-loop rollout of a scenario")
    add_common(sp)
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("filter", help="simulate truth, then track it with "
                                       "a particle filter")
    add_common(sp)
    sp.add_argument("--particles", type=int, default=500)
    sp.set_defaults(fn=_cmd_filter)

    sp = sub.add_parser("calibrate", help="fit free parameters to synthetic "
                                          "data from the scenario")
    add_common(sp)
    sp.set_defaults(fn=_cmd_calibrate)

    sp = sub.add_parser("plan", help="cross-entropy action planning")
    add_common(sp)
    sp.set_defaults(fn=_cmd_plan)

    sp = sub.add_parser("case", help="run a named case study")
    sp.add_argument("--name", required=True, choices=sorted(_CASE_RUNNERS))
    add_common(sp)
    sp.set_defaults(fn=_cmd_case)

    sp = sub.add_parser("ingest", help="normalize an ordinal-indicator CSV "
                                       "into action sequences")
    sp.add_argument("--csv", required=True, help="input indicator CSV")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=_cmd_ingest)

    sp = sub.add_parser("serve", help="run the HTTP API")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(fn=_cmd_serve)

    return p


def _emit_error(args, code: str, message: str) -> None:
    doc = {"code": code, "message": message, "details": []}
    body = canonical_json(doc) + "\n"
    sys.stderr.write(body)
    out = getattr(args, "out", None)
    if out:
        try:
            path = Path(out)
            path.mkdir(parents=True, exist_ok=True)
            (path / "error.json").write_text(body)
        except OSError:
            pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        _emit_error(args, "validation_error", str(e))
        return 1
    except FileNotFoundError as e:
        _emit_error(args, "not_found", str(e))
        return 1
    except EpiworldError as e:
        _emit_error(args, "error", str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
