"""Acceptance gate: one end-to-end check per shipped guarantee.

Each test exercises a full workflow at its stated tolerance and runtime
budget and prints a single PASS/FAIL line with the measured values
(visible under pytest -s). The checks are deliberately redundant with the
unit suites: this file is the contract, the unit files are the diagnosis.
"""

import dataclasses
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

import test_cli as cli_fixtures
import test_dynamics as dyn
import toy_hmm
from epiworld import cli
from epiworld.calibrate import CalibrationConfig, fit
from epiworld.config import load_preset
from epiworld.core import Action, ModelParams, derive_stream, make_state
from epiworld.dynamics import step
from epiworld.filtering import PriorConfig
from epiworld.observation import (MisreportingRegime, RevisionTriangle,
                                  report_as_of)
from epiworld.optimize import (CemConfig, GroupMember, RewardSpec, cem_plan,
                               grpo_advantages, grpo_gradient, grpo_step,
                               grpo_surrogate)
from epiworld.policy import PolicySpec, alignment, hosp_reduction
from epiworld.rollout import rollout
from epiworld.scenarios import (ScenarioConfig, run_case_backfill,
                                run_case_counterfactual,
                                run_case_misreporting)
from epiworld.service import create_app
from test_optimize import make_members, softmax_weights


def gate(name: str, ok: bool, detail: str):
    print(f"[ACCEPTANCE] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_01_conservation():
    budget = 10.0
    t0 = time.perf_counter()
    gen = np.random.default_rng(20240817)
    worst = 0.0
    for _ in range(10_000):
        params = dyn.random_params(gen)
        state = dyn.random_state(gen, params.hosp_lag)
        out = step(state, dyn.random_action(gen), params,
                   derive_stream(int(gen.integers(1 << 30))))
        before = state.S + state.E + state.I + state.R + state.Hosp
        after = out.S + out.E + out.I + out.R + out.Hosp
        worst = max(worst, abs(after - before))
    dt = time.perf_counter() - t0
    gate("conservation",
         worst <= 1e-9 and dt < budget,
         f"max mass drift {worst:.3e} <= 1e-09 over 10000 randomized steps "
         f"({dt:.2f}s < {budget:.0f}s)")


def test_02_filter_matches_exact_forward():
    budget = 60.0
    t0 = time.perf_counter()
    diffs = []
    for seed in range(5):
        ys = toy_hmm.simulate(20, seed=3100 + seed)
        exact = toy_hmm.exact_loglik(ys)
        pf = toy_hmm.pf_loglik(ys, P=10_000, rng=derive_stream(4100 + seed))
        diffs.append(abs(pf - exact))
    dt = time.perf_counter() - t0
    gate("filter-oracle",
         max(diffs) <= 0.05 and dt < budget,
         f"PF loglik (P=10000, 20 steps) vs exact forward: per-seed |diff| "
         f"{['%.4f' % d for d in diffs]}, max {max(diffs):.4f} <= 0.05 "
         f"({dt:.2f}s < {budget:.0f}s)")


def test_03_calibration_recovers_transmission_rate():
    budget = 300.0
    t0 = time.perf_counter()
    truth = ModelParams(beta0=1.4, regime_jump_prob=0.0,
                        case_noise_sigma=0.1, hosp_noise_sigma=0.1,
                        survey_noise_sigma=0.1)
    horizon = 40
    actions = tuple(Action.uniform(1, week_index=k) for k in range(horizon))
    start = make_state(I=2e-3, hosp_lag=truth.hosp_lag)
    res = rollout(start, actions, truth, MisreportingRegime.none(),
                  derive_stream(4242).child("truth-data"))
    config = CalibrationConfig(free={"beta0": (1.0, 1.8)}, base_params=truth,
                               prior=PriorConfig(i_range=(2e-3, 2e-3)),
                               particles=500, grid_points=21)
    est = fit((res.observations, actions), config, seed=99).theta["beta0"]
    dt = time.perf_counter() - t0
    gate("calibration",
         abs(est - 1.4) <= 0.15 and dt < budget,
         f"beta0 estimate {est:.4f} vs truth 1.4000, |err| {abs(est - 1.4):.4f} "
         f"<= 0.15 (T=40, obs noise 0.1; {dt:.2f}s < {budget:.0f}s)")


def test_04_misreporting_delays_suppression():
    budget = 30.0
    t0 = time.perf_counter()
    cfg, _, _ = load_preset("misreporting")
    det_cfg = dataclasses.replace(
        cfg, seeds=(cfg.seeds[0],),
        params=cfg.params.with_overrides(
            deterministic=True, case_noise_sigma=0.0, hosp_noise_sigma=0.0,
            survey_noise_sigma=0.0))
    det = run_case_misreporting(det_cfg)
    dw = {t: det["regimes"][t]["per_seed"][0]
          for t in ("none", "mixed", "pure")}
    det_ok = (all(isinstance(v, int) for v in dw.values())
              and dw["none"] <= dw["mixed"] <= dw["pure"]
              and dw["pure"] > dw["none"])

    stoch = run_case_misreporting(cfg)
    per = {t: stoch["regimes"][t]["per_seed"]
           for t in ("none", "mixed", "pure")}
    ok_seeds = sum(
        1 for n, m, p in zip(per["none"], per["mixed"], per["pure"])
        if all(isinstance(v, int) for v in (n, m, p))
        and n <= m <= p and p > n)
    dt = time.perf_counter() - t0
    gate("misreporting",
         det_ok and ok_seeds >= 4 and dt < budget,
         f"weeks to effective_R<1, deterministic none/mixed/pure = "
         f"{dw['none']}/{dw['mixed']}/{dw['pure']} (ordered, pure strictly "
         f"later); stochastic ordering holds on {ok_seeds}/5 seeds >= 4 "
         f"({dt:.2f}s < {budget:.0f}s)")


def test_05_backfill_stabilization():
    budget = 10.0
    t0 = time.perf_counter()
    cfg, _, _ = load_preset("backfill")
    res = run_case_backfill(cfg)
    med_fast = res["profiles"]["fast"]["median"]
    med_slow = res["profiles"]["slow"]["median"]
    resting_exact = True
    for name in res["profiles"]:
        tri = RevisionTriangle.build(res["finals"],
                                     res["profiles"][name]["profile"])
        for t in range(tri.n_weeks):
            for extra in (0, 3):
                if report_as_of(tri, t, t + tri.k_max + extra) != tri.final(t):
                    resting_exact = False
    dt = time.perf_counter() - t0
    gate("backfill",
         med_fast < med_slow and resting_exact and dt < budget,
         f"median stabilization lag fast {med_fast} < slow {med_slow}; "
         f"report_as_of at lag >= K_max equals resting count for every week "
         f"of both profiles: {resting_exact} ({dt:.2f}s < {budget:.0f}s)")


def test_06_counterfactual_paired_rollouts():
    budget = 10.0
    t0 = time.perf_counter()
    cfg, _, _ = load_preset("counterfactual")
    res_base, res_alt, verdict = run_case_counterfactual(cfg)
    d = cfg.divergence_week
    prefix_identical = (
        all(res_base.states[k] == res_alt.states[k] for k in range(d))
        and all(res_base.observations[k] == res_alt.observations[k]
                for k in range(d)))
    lower = verdict["alternative_peak"] < verdict["baseline_peak"]
    non_earlier = verdict["alternative_peak_week"] >= verdict["baseline_peak_week"]
    dt = time.perf_counter() - t0
    gate("counterfactual",
         prefix_identical and lower and non_earlier and dt < budget,
         f"pre-divergence weeks bit-identical: {prefix_identical}; peak hosp "
         f"{verdict['baseline_peak']:.2f} -> {verdict['alternative_peak']:.2f} "
         f"(strictly lower: {lower}); peak week "
         f"{verdict['baseline_peak_week']} -> {verdict['alternative_peak_week']} "
         f"(not earlier: {non_earlier}) ({dt:.2f}s < {budget:.0f}s)")


def test_07_outcome_metric_checks():
    plan_a = tuple(Action.uniform(1, week_index=k) for k in range(4))
    plan_b = tuple(Action(dims=tuple(4 - d for d in a.dims), week_index=a.week_index)
                   for a in plan_a)
    align_same = alignment(plan_a, plan_a)
    align_comp = alignment(plan_a, plan_b)
    hr = hosp_reduction([9.09, 7.0, 5.67])
    ok = (align_same == 100.0 and align_comp == 0.0
          and abs(hr - 37.62) <= 0.01)
    gate("metric-checks",
         ok,
         f"alignment(identical) {align_same} == 100, alignment(complements) "
         f"{align_comp} == 0; hosp_reduction(9.09 -> 5.67) {hr:.4f} within "
         f"0.01 of 37.62")


def test_08_group_gradient_matches_finite_differences():
    spec = PolicySpec.softmax(softmax_weights(seed=1, scale=0.5),
                              temperature=0.8)
    members = make_members(seed=2, G=4, T=2)
    adv = grpo_advantages([m.reward for m in members])
    grad = grpo_gradient(spec, members, adv)
    h = 1e-6
    fd = np.zeros_like(grad)
    base = np.array(spec.weights)
    for idx in np.ndindex(base.shape):
        wp, wm = base.copy(), base.copy()
        wp[idx] += h
        wm[idx] -= h
        up = grpo_surrogate(PolicySpec.softmax(wp, temperature=0.8),
                            members, adv)
        dn = grpo_surrogate(PolicySpec.softmax(wm, temperature=0.8),
                            members, adv)
        fd[idx] = (up - dn) / (2 * h)
    gap = float(np.max(np.abs(grad - fd)))

    flat = [GroupMember(m.infos, m.actions, 5.0) for m in members]
    out = grpo_step(spec, flat, learning_rate=0.5)
    drift = float(np.max(np.abs(out.weights - spec.weights)))
    gate("group-gradient",
         gap <= 1e-5 and drift == 0.0,
         f"analytic vs central-FD max |diff| {gap:.2e} <= 1e-05 over all "
         f"{base.size} weights; update with all-equal rewards moves weights "
         f"by {drift}")


def test_09_cem_finds_known_optimum():
    t0 = time.perf_counter()
    p = ModelParams(deterministic=True, regime_jump_prob=0.0,
                    case_noise_sigma=0.0, hosp_noise_sigma=0.0,
                    survey_noise_sigma=0.0, beta0=2.5, lambda_policy=0.3,
                    kappa=0.9)
    start = make_state(I=2e-3, hosp_lag=p.hosp_lag)
    target = (Action.uniform(4, week_index=0),)
    hits = 0
    monotone = True
    for seed in range(20):
        res = cem_plan(start, 1,
                       CemConfig(population=128, elites=16, iters=10),
                       RewardSpec(w_cumulative_infections=-1.0,
                                  w_end_hosp=0.0),
                       p, seed=seed)
        hits += res.actions == target
        scores = [e["best_ever_score"] for e in res.trace]
        monotone = monotone and scores == sorted(scores)
    dt = time.perf_counter() - t0
    gate("cem-optimum",
         hits >= 18 and monotone,
         f"all-maximal single-week plan recovered within 10 iterations on "
         f"{hits}/20 seeds >= 18; best-ever trace non-decreasing in every "
         f"run: {monotone} ({dt:.2f}s)")


def test_10_cli_reruns_byte_identical(tmp_path):
    t0 = time.perf_counter()
    noisy = cli_fixtures.write_config(tmp_path, cli_fixtures.NOISY_SCENARIO)
    cal = cli_fixtures.write_config(tmp_path, cli_fixtures.CALIBRATE_SCENARIO,
                                    name="cal.toml")
    plan = cli_fixtures.write_config(tmp_path, cli_fixtures.PLAN_SCENARIO,
                                     name="plan.toml")
    csv_path = tmp_path / "indicators.csv"
    csv_path.write_text(cli_fixtures.INGEST_CSV)
    runs = {
        "simulate": ["simulate", "--config", str(noisy)],
        "filter": ["filter", "--config", str(noisy), "--particles", "200"],
        "calibrate": ["calibrate", "--config", str(cal)],
        "plan": ["plan", "--config", str(plan)],
        "case": ["case", "--name", "backfill"],
        "ingest": ["ingest", "--csv", str(csv_path)],
    }
    stable = []
    for name, argv in runs.items():
        a, b = cli_fixtures.run_twice(
            tmp_path / name, lambda out, argv=argv: argv + ["--out", str(out)])
        assert a, f"{name} produced no artifacts"
        stable.append(a == b)
    dt = time.perf_counter() - t0
    gate("cli-determinism",
         all(stable),
         f"rerun with identical config+seed byte-identical for "
         f"{sum(stable)}/{len(runs)} subcommands "
         f"({', '.join(runs)}) ({dt:.2f}s)")


def test_11_service_invariants():
    t0 = time.perf_counter()
    params = ModelParams(beta0=1.7, regime_jump_prob=0.0,
                         case_noise_sigma=0.1, hosp_noise_sigma=0.1,
                         survey_noise_sigma=0.05)
    cfg = ScenarioConfig(name="accept", params=params, horizon=4,
                         prior=PriorConfig(i_range=(1e-3, 4e-3)),
                         seeds=(3,)).to_json_dict()
    body = {"config": cfg, "particles": 64, "seed": 5}
    with TestClient(create_app()) as client:
        a = client.post("/sessions", json=body).json()
        b = client.post("/sessions", json=body).json()
        step_body = {"action": {"dims": [2] * 13}, "idempotency_key": "k1"}
        r1 = client.post(f"/sessions/{a['id']}/step", json=step_body)
        # isolation: advancing a leaves b untouched
        b_after = client.get(f"/sessions/{b['id']}").json()
        isolated = (b_after["week"] == 0
                    and b_after["state_hash"] == b["state_hash"])
        # idempotent replay: same key + body returns the stored response
        r2 = client.post(f"/sessions/{a['id']}/step", json=step_body)
        replay = (r1.status_code == r2.status_code == 200
                  and r1.content == r2.content
                  and client.get(f"/sessions/{a['id']}").json()["week"] == 1)
        conflict = client.post(
            f"/sessions/{a['id']}/step",
            json={"action": {"dims": [3] * 13}, "idempotency_key": "k1"})
        # read-only scoring: state hash identical before and after
        roll_body = {"candidates": [[{"dims": [0] * 13}],
                                    [{"dims": [4] * 13}]], "samples": 5}
        before = client.get(f"/sessions/{b['id']}").json()["state_hash"]
        roll = client.post(f"/sessions/{b['id']}/rollouts", json=roll_body)
        after = client.get(f"/sessions/{b['id']}").json()["state_hash"]
        read_only = (roll.status_code == 200
                     and roll.json()["state_hash"] == before
                     and after == before)
    dt = time.perf_counter() - t0
    gate("service",
         isolated and replay and conflict.status_code == 409 and read_only,
         f"sessions isolated: {isolated}; step replay with same idempotency "
         f"key byte-equal (and 409 on body change): "
         f"{replay and conflict.status_code == 409}; rollout scoring leaves "
         f"state hash unchanged: {read_only} ({dt:.2f}s)")
