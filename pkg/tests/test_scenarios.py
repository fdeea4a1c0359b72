"""Case-study harness: closed-loop misreporting, backfill stabilization,
paired counterfactuals, synthetic data, and indicator ingestion."""

import numpy as np
import pytest

from epiworld.core import Action, ValidationError, derive_stream
from epiworld.filtering import PriorConfig
from epiworld.observation import MisreportingRegime, observe
from epiworld.policy import PolicySpec, ThresholdRule
from epiworld.scenarios import (ScenarioConfig, counterfactual_schedules,
                                counterfactual_verdict, gen_synthetic,
                                ingest_oxcgrt, initial_state,
                                run_case_backfill, run_case_counterfactual,
                                run_case_misreporting, run_case_policy_eval,
                                run_closed_loop)

POINT_PRIOR = PriorConfig(i_range=(2e-3, 2e-3))


def suppression_policy(tau=0.35, level=3):
    """Tighten when observed compliance drops below tau."""
    return PolicySpec.threshold(
        [ThresholdRule("survey_compliance", tau, tuple(range(13)), level)])


def det_config(det_params, **kw):
    p = det_params.with_overrides(beta0=2.0, kappa=0.8, lambda_policy=0.25)
    defaults = dict(params=p, prior=POINT_PRIOR, horizon=12,
                    policy=suppression_policy(), seeds=(7,))
    defaults.update(kw)
    return ScenarioConfig(**defaults)


class TestScenarioConfig:
    def test_validation(self, det_params):
        with pytest.raises(ValidationError):
            ScenarioConfig(horizon=-1)
        with pytest.raises(ValidationError):
            ScenarioConfig(seeds=())
        with pytest.raises(ValidationError):
            ScenarioConfig(horizon=3, actions=(Action.uniform(0),))
        with pytest.raises(ValidationError):
            ScenarioConfig(horizon=2, vaccination=(0.01,))
        with pytest.raises(ValidationError):
            ScenarioConfig(cf_mask_level=7)
        with pytest.raises(ValidationError):
            ScenarioConfig(icu_capacity=0.0)

    def test_json_round_trip(self, det_params):
        cfg = ScenarioConfig(
            name="round-trip", params=det_params,
            regime=MisreportingRegime.mixed(fr=0.4, delta=0.2),
            horizon=3, prior=POINT_PRIOR, policy=suppression_policy(),
            actions=tuple(Action.uniform(1, week_index=k) for k in range(3)),
            vaccination=(0.0, 0.01, 0.0), seeds=(1, 2),
            divergence_week=1, cf_mask_level=4, cf_vacc_advance=2)
        back = ScenarioConfig.from_json_dict(cfg.to_json_dict())
        assert back == cfg


class TestInitialState:
    def test_midpoint_of_prior_box(self, det_params):
        prior = PriorConfig(i_range=(1e-3, 3e-3), e_range=(0.0, 0.002),
                            b_range=(0.1, 0.3), m_range=(0.8, 1.2),
                            r_init=0.05, hosp_init=1e-4)
        cfg = ScenarioConfig(params=det_params, prior=prior)
        s = initial_state(cfg)
        assert s.I == pytest.approx(2e-3)
        assert s.E == pytest.approx(1e-3)
        assert s.b == pytest.approx(0.2)
        assert s.m == pytest.approx(1.0)
        assert s.R == 0.05 and s.Hosp == 1e-4
        assert len(s.hosp_pipeline) == det_params.hosp_lag


class TestClosedLoop:
    def test_requires_policy(self, det_params):
        cfg = det_config(det_params, policy=None)
        with pytest.raises(ValidationError):
            run_closed_loop(cfg, MisreportingRegime.none(), 7)

    def test_seed_reproducible(self, stoch_params):
        cfg = det_config(stoch_params, params=stoch_params, horizon=6)
        a = run_closed_loop(cfg, MisreportingRegime.none(), 11)
        b = run_closed_loop(cfg, MisreportingRegime.none(), 11)
        assert a == b

    def test_suppression_week_is_first_subcritical(self, det_params):
        cfg = det_config(det_params)
        run = run_closed_loop(cfg, MisreportingRegime.none(), 7)
        rs = run.effective_R_series
        assert len(rs) == cfg.horizon
        if run.weeks_to_suppression is not None:
            k = run.weeks_to_suppression
            assert rs[k - 1] < 1.0
            assert all(r >= 1.0 for r in rs[:k - 1])
        assert len(run.actions) == len(run.states) == len(run.observations)


class TestMisreportingCase:
    def test_requires_reactive_threshold_policy(self, det_params):
        cfg = det_config(det_params, policy=PolicySpec.replay(
            [Action.uniform(0, week_index=k) for k in range(12)]))
        with pytest.raises(ValidationError):
            run_case_misreporting(cfg)
        unrelated = PolicySpec.threshold(
            [ThresholdRule("effective_R", 1.0, (0,), 2)])
        with pytest.raises(ValidationError):
            run_case_misreporting(det_config(det_params, policy=unrelated))

    def test_none_equals_mixed_fr_zero(self, det_params):
        cfg = det_config(det_params)
        a = run_closed_loop(cfg, MisreportingRegime.none(), 7)
        b = run_closed_loop(cfg, MisreportingRegime.mixed(fr=0.0, delta=0.3), 7)
        assert a == b

    def test_delta_zero_regimes_identical(self, det_params):
        cfg = det_config(det_params,
                         regime=MisreportingRegime.mixed(fr=0.5, delta=0.0))
        out = run_case_misreporting(cfg)
        per = {tag: out["regimes"][tag]["per_seed"] for tag in out["regimes"]}
        assert per["none"] == per["mixed"] == per["pure"]

    def test_inflation_delays_suppression(self, det_params):
        # controller tightens while reported compliance sits below tau, so
        # inflated reports stall it below the suppression point: the honest
        # channel suppresses by policy, inflated ones wait for burnout
        import dataclasses

        from epiworld.config import load_preset

        cfg, _, _ = load_preset("misreporting")
        det = dataclasses.replace(
            cfg, params=cfg.params.with_overrides(deterministic=True,
                                                  case_noise_sigma=0.0,
                                                  hosp_noise_sigma=0.0,
                                                  survey_noise_sigma=0.0),
            seeds=(7,))
        out = run_case_misreporting(det)

        def weeks(tag):
            return [99 if v == "never" else v
                    for v in out["regimes"][tag]["per_seed"]]

        assert all(n < m < p for n, m, p in
                   zip(weeks("none"), weeks("mixed"), weeks("pure")))


class TestBackfillCase:
    def test_fast_profile_stabilizes_sooner(self, det_params):
        cfg = det_config(det_params, policy=None)
        out = run_case_backfill(cfg)
        assert out["profiles"]["fast"]["median"] < \
            out["profiles"]["slow"]["median"]
        assert all(len(out["profiles"][k]["times"]) == len(out["finals"])
                   for k in out["profiles"])

    def test_default_profile_medians(self, det_params):
        # 10% undercount at first report resolves one step later for the
        # fast profile, three steps later for the slow one
        cfg = det_config(det_params, policy=None)
        out = run_case_backfill(cfg)
        assert all(f > 0 for f in out["finals"])
        assert out["profiles"]["fast"]["median"] == 1.0
        assert out["profiles"]["slow"]["median"] == 3.0

    def test_no_delay_profile_is_instant(self, det_params):
        cfg = det_config(det_params, policy=None)
        out = run_case_backfill(cfg, profiles={"instant": (1.0,)})
        assert out["profiles"]["instant"]["times"] == [0] * len(out["finals"])

    def test_loose_tolerance_is_instant(self, det_params):
        cfg = det_config(det_params, policy=None)
        out = run_case_backfill(cfg, tol=1.0)
        assert out["profiles"]["slow"]["median"] == 0.0

    def test_disease_free_counts_are_zero(self, det_params):
        prior = PriorConfig(i_range=(0.0, 0.0))
        cfg = det_config(det_params, policy=None, prior=prior)
        out = run_case_backfill(cfg)
        assert out["finals"] == [0] * cfg.horizon
        assert out["profiles"]["slow"]["median"] == 0.0

    def test_needs_profiles(self, det_params):
        cfg = det_config(det_params, policy=None)
        with pytest.raises(ValidationError):
            run_case_backfill(cfg, profiles={})


class TestCounterfactualSchedules:
    def base(self, det_params, **kw):
        acts = tuple(Action.uniform(1, week_index=k) for k in range(8))
        defaults = dict(params=det_params, prior=POINT_PRIOR, horizon=8,
                        actions=acts, divergence_week=3, cf_mask_level=4)
        defaults.update(kw)
        return ScenarioConfig(**defaults)

    def test_requires_schedule(self, det_params):
        cfg = ScenarioConfig(params=det_params, horizon=4, divergence_week=1)
        with pytest.raises(ValidationError):
            counterfactual_schedules(cfg)

    def test_mask_raised_from_divergence_week(self, det_params):
        cfg = self.base(det_params)
        baseline, alt, vb, va = counterfactual_schedules(cfg)
        assert baseline == cfg.actions
        for k, (b, a) in enumerate(zip(baseline, alt)):
            if k < 3:
                assert a == b
            else:
                assert a.dims[12] == 4
                assert a.dims[:12] == b.dims[:12]
        assert vb == va == (0.0,) * 8

    def test_existing_higher_mask_level_kept(self, det_params):
        acts = tuple(Action.uniform(4, week_index=k) for k in range(8))
        cfg = self.base(det_params, actions=acts, cf_mask_level=2)
        _, alt, _, _ = counterfactual_schedules(cfg)
        assert all(a.dims[12] == 4 for a in alt)

    def test_vaccination_advanced_and_filled(self, det_params):
        vacc = (0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.02, 0.0)
        cfg = self.base(det_params, vaccination=vacc, cf_vacc_advance=3,
                        divergence_week=1)
        _, _, vb, va = counterfactual_schedules(cfg)
        assert vb == vacc
        # start advances from week 5 to max(d=1, 5-3) = 2, rate filled forward
        assert va == (0.0, 0.0, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02)

    def test_advance_capped_at_divergence_week(self, det_params):
        vacc = (0.0, 0.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0)
        cfg = self.base(det_params, vaccination=vacc, cf_vacc_advance=9,
                        divergence_week=2)
        _, _, _, va = counterfactual_schedules(cfg)
        assert va[0] == va[1] == 0.0
        assert all(v == 0.01 for v in va[2:])


class TestCounterfactualCase:
    def epidemic_config(self, det_params, **kw):
        p = det_params.with_overrides(beta0=2.0, kappa=0.9, lambda_policy=0.25)
        acts = tuple(Action.uniform(0, week_index=k) for k in range(20))
        defaults = dict(params=p, prior=POINT_PRIOR, horizon=20, actions=acts,
                        divergence_week=2, cf_mask_level=4, seeds=(5,))
        defaults.update(kw)
        return ScenarioConfig(**defaults)

    def test_masking_flattens_peak(self, det_params):
        cfg = self.epidemic_config(det_params)
        res_base, res_alt, verdict = run_case_counterfactual(cfg)
        assert res_base.states[:2] == res_alt.states[:2]
        assert not verdict["no_divergence"]
        assert verdict["lower_peak"]
        assert verdict["non_earlier_peak"]
        assert verdict["verdict"]
        assert verdict["alternative_peak"] < verdict["baseline_peak"]

    def test_identical_schedules_no_divergence(self, det_params):
        cfg = self.epidemic_config(det_params, cf_mask_level=0)
        res_base, res_alt, verdict = run_case_counterfactual(cfg)
        assert verdict["no_divergence"]
        assert verdict["verdict"]
        assert res_base.states == res_alt.states

    def test_verdict_consistent_with_metrics(self, det_params):
        cfg = self.epidemic_config(det_params)
        res_base, res_alt, _ = run_case_counterfactual(cfg)
        v = counterfactual_verdict(res_base, res_alt, 2)
        assert v["lower_peak"] == (v["alternative_peak"] < v["baseline_peak"])
        assert v["non_earlier_peak"] == \
            (v["alternative_peak_week"] >= v["baseline_peak_week"])
        swapped = counterfactual_verdict(res_alt, res_base, 2)
        assert swapped["lower_peak"] != v["lower_peak"]


class TestPolicyEvalCase:
    def test_requires_policy(self, det_params):
        cfg = det_config(det_params, policy=None, horizon=4)
        with pytest.raises(ValidationError):
            run_case_policy_eval(cfg)

    def test_replay_of_realized_schedule_aligns_fully(self, det_params):
        # evaluating each region against its own realized actions via a
        # replay policy is a perfect-alignment fixed point
        cfg = det_config(det_params, horizon=4)
        data = gen_synthetic(1, 4, cfg.seeds[0], base_params=cfg.params)
        replay = PolicySpec.replay(data.regions[0].actions)
        out = run_case_policy_eval(det_config(det_params, horizon=4,
                                              policy=replay), n_regions=1)
        assert out["regions"][0]["alignment"] == 100.0
        assert out["mean_alignment"] == 100.0

    def test_report_shape(self, det_params):
        cfg = det_config(det_params, horizon=4,
                         policy=suppression_policy(tau=0.0))
        out = run_case_policy_eval(cfg, n_regions=2, eval_horizon=3)
        assert len(out["regions"]) == 2
        for rec in out["regions"]:
            assert 0.0 <= rec["alignment"] <= 100.0
            assert set(rec) == {"region", "alignment", "hosp_reduction",
                                "metrics"}


class TestGenSynthetic:
    def test_shapes_and_names(self, det_params):
        data = gen_synthetic(1, 1, 3, base_params=det_params)
        assert len(data.regions) == 1
        region = data.regions[0]
        assert region.name == "region00"
        assert len(region.actions) == len(region.states) == 1
        assert len(region.observations) == 1
        assert region.observations[0].week_index == 1

    def test_seed_deterministic(self, det_params):
        a = gen_synthetic(2, 5, 9, base_params=det_params)
        b = gen_synthetic(2, 5, 9, base_params=det_params)
        assert a == b
        c = gen_synthetic(2, 5, 10, base_params=det_params)
        assert a != c

    def test_region_params_within_ranges(self, det_params):
        data = gen_synthetic(6, 2, 21, base_params=det_params)
        for region in data.regions:
            assert 1.3 <= region.params.beta0 <= 2.0
            assert 0.4 <= region.params.kappa <= 0.8
            assert 0.15 <= region.params.rho0 <= 0.35
            assert 0.1 <= region.params.lambda_policy <= 0.25

    def test_observations_regenerable_when_noise_free(self, det_params):
        data = gen_synthetic(2, 4, 13, base_params=det_params)
        regime = MisreportingRegime.none()
        for region in data.regions:
            for k, obs in enumerate(region.observations):
                redo = observe(region.states[k], region.actions[k], regime,
                               region.params, derive_stream(0),
                               week_index=k + 1)
                assert redo == obs

    def test_validation(self, det_params):
        with pytest.raises(ValidationError):
            gen_synthetic(0, 4, 1)
        with pytest.raises(ValidationError):
            gen_synthetic(1, 0, 1)


class TestIngest:
    HEADER = "region,week," + ",".join(f"ind{j:02d}" for j in range(13))

    def write(self, tmp_path, lines):
        path = tmp_path / "indicators.csv"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValidationError, match="missing header"):
            ingest_oxcgrt(path)

    def test_header_requirements(self, tmp_path):
        with pytest.raises(ValidationError, match="region, week"):
            ingest_oxcgrt(self.write(tmp_path, ["week,region,a"]))
        with pytest.raises(ValidationError, match="13 indicator"):
            ingest_oxcgrt(self.write(tmp_path, ["region,week,a,b", "x,1,0,1"]))

    def test_two_regions_min_max_scaling(self, tmp_path):
        rows = [self.HEADER]
        for week, v in [(1, 0), (2, 1), (3, 2)]:
            rows.append(f"alpha,{week}," + ",".join(str(v) for _ in range(13)))
        rows.append("beta,1," + ",".join("2" for _ in range(13)))
        out = ingest_oxcgrt(self.write(tmp_path, rows))
        assert sorted(out.actions) == ["alpha", "beta"]
        # raw 0..2 rescales onto levels {0, 2, 4}
        assert [a.dims[0] for a in out.actions["alpha"]] == [0, 2, 4]
        assert out.actions["beta"][0].dims == (4,) * 13
        assert [a.week_index for a in out.actions["alpha"]] == [1, 2, 3]
        assert out.gaps == {}

    def test_gap_reporting(self, tmp_path):
        rows = [self.HEADER]
        for week in (1, 2, 5):
            rows.append(f"alpha,{week}," + ",".join("1" for _ in range(13)))
        rows.append("alpha,6," + ",".join("3" for _ in range(13)))
        out = ingest_oxcgrt(self.write(tmp_path, rows))
        assert out.gaps == {"alpha": [3, 4]}
        assert [a.week_index for a in out.actions["alpha"]] == [1, 2, 5, 6]

    def test_constant_column_warns_level_zero(self, tmp_path):
        rows = [self.HEADER]
        rows.append("alpha,1,5," + ",".join("0" for _ in range(12)))
        rows.append("alpha,2,5," + ",".join("4" for _ in range(12)))
        out = ingest_oxcgrt(self.write(tmp_path, rows))
        assert any("constant" in w for w in out.warnings)
        assert all(a.dims[0] == 0 for a in out.actions["alpha"])

    def test_row_errors(self, tmp_path):
        with pytest.raises(ValidationError, match="wrong cell count"):
            ingest_oxcgrt(self.write(tmp_path, [self.HEADER, "alpha,1,0"]))
        bad_num = "alpha,1," + ",".join(["0"] * 12) + ",oops"
        with pytest.raises(ValidationError, match="row 2"):
            ingest_oxcgrt(self.write(tmp_path, [self.HEADER, bad_num]))
        nonfinite = "alpha,1," + ",".join(["0"] * 12) + ",nan"
        with pytest.raises(ValidationError, match="non-finite"):
            ingest_oxcgrt(self.write(tmp_path, [self.HEADER, nonfinite]))
        with pytest.raises(ValidationError, match="no data rows"):
            ingest_oxcgrt(self.write(tmp_path, [self.HEADER]))

    def test_duplicate_region_week(self, tmp_path):
        row = "alpha,1," + ",".join("1" for _ in range(13))
        row2 = "alpha,1," + ",".join("2" for _ in range(13))
        with pytest.raises(ValidationError, match="duplicate"):
            ingest_oxcgrt(self.write(tmp_path, [self.HEADER, row, row2]))
