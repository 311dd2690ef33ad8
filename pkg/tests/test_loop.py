import json

import numpy as np
import pytest

from formopt.acquisition import TargetSpec
from formopt.candidates import ParameterSpec
from formopt.loop import (
    CandidateConfig,
    EarlyTermination,
    EndConditions,
    LoopConfig,
    LoopState,
    OptimizationLoop,
    VirtualPressBackend,
    check_early_termination,
    evaluate_end_conditions,
    train_initial_predictor,
)
from formopt.press import PressModel, ProgressSnapshot
from formopt.records import (
    JobMeta,
    PartRegistry,
    ResultStore,
    SimulationRecord,
    TARGET_NAMES,
)
from formopt.surrogate import InsufficientDataError, SurrogateConfig, TrainingSettings


def press_specs():
    return [
        ParameterSpec("p", "continuous", lower=50.0, upper=400.0),
        ParameterSpec("Fr", "continuous", lower=0.05, upper=0.2),
        ParameterSpec("D", "continuous", lower=0.5, upper=2.5),
    ]


FIXED = {"db": 30.0, "dbn": 50.0, "Rp": 340.0}


def quick_config(**kwargs):
    defaults = dict(
        part_id="demo",
        specs=press_specs(),
        surrogate=SurrogateConfig(
            flavor="independent",
            use_input_encoder=False,
            training=TrainingSettings(max_steps=20, seed=0),
        ),
        candidates=CandidateConfig(n_star=40),
        max_iterations=4,
        seed=0,
    )
    defaults.update(kwargs)
    return LoopConfig(**defaults)


def make_loop(tmp_path, config, steps=5):
    store = ResultStore(
        tmp_path / "results.jsonl", registry=PartRegistry(tmp_path / "parts.json")
    )
    model = PressModel(steps=steps)
    return OptimizationLoop(config, store, lambda: VirtualPressBackend(model, FIXED))


class TestCheckEarlyTermination:
    def snap(self, progress, l7):
        targets = {t: 0.0 for t in TARGET_NAMES}
        targets["L7"] = l7
        targets["L4"] = 100.0 - l7
        return ProgressSnapshot(
            progress=progress, targets=targets, walltime_s=0.0, energy_j=0.0
        )

    def test_before_threshold_never_stops(self):
        cfg = EarlyTermination(threshold=0.9, limits={"L7": 1.0})
        assert not check_early_termination(self.snap(0.5, 50.0), cfg)

    def test_at_threshold_with_violation_stops(self):
        cfg = EarlyTermination(threshold=0.9, limits={"L7": 1.0})
        assert check_early_termination(self.snap(0.9, 5.0), cfg)
        assert check_early_termination(self.snap(0.95, 5.0), cfg)

    def test_past_threshold_without_violation_continues(self):
        cfg = EarlyTermination(threshold=0.9, limits={"L7": 10.0})
        assert not check_early_termination(self.snap(0.95, 5.0), cfg)

    def test_no_limits_never_stops(self):
        assert not check_early_termination(self.snap(0.99, 99.0), EarlyTermination())


class TestEvaluateEndConditions:
    def test_flat_ei_window_is_no_improvement(self):
        state = LoopState(ei_sum_history=[3.0, 5.0, 5.0, 5.0, 5.0, 5.0], iteration=6)
        assert evaluate_end_conditions(state, quick_config(max_iterations=99)) == "no_improvement"

    def test_short_history_does_not_trigger(self):
        state = LoopState(ei_sum_history=[5.0, 5.0], iteration=2)
        assert evaluate_end_conditions(state, quick_config(max_iterations=99)) is None

    def test_constant_minimum_window(self):
        state = LoopState(
            ei_sum_history=[9.0, 8.0, 7.0],
            iteration=3,
            best_inputs={"p": 1.0},
            cycles_since_improvement=5,
        )
        assert evaluate_end_conditions(state, quick_config(max_iterations=99)) == "constant_minimum"

    def test_energy_budget(self):
        cfg = quick_config(max_iterations=99, end=EndConditions(energy_budget_j=100.0))
        state = LoopState(ei_sum_history=[1.0], iteration=1, consumed_energy_j=150.0)
        assert evaluate_end_conditions(state, cfg) == "energy_budget"

    def test_max_iterations(self):
        state = LoopState(ei_sum_history=[1.0, 2.0, 3.0, 4.0], iteration=4)
        assert evaluate_end_conditions(state, quick_config(max_iterations=4)) == "max_iterations"

    def test_ordering_no_improvement_beats_budget(self):
        cfg = quick_config(max_iterations=99, end=EndConditions(energy_budget_j=1.0))
        state = LoopState(
            ei_sum_history=[5.0] * 5, iteration=5, consumed_energy_j=10.0
        )
        assert evaluate_end_conditions(state, cfg) == "no_improvement"


class TestLoopBasics:
    def test_first_cycle_is_random(self, tmp_path):
        loop = make_loop(tmp_path, quick_config())
        records = loop.run_cycle()
        assert len(records) == 1
        assert records[0].meta.source == "random"
        assert records[0].meta.iteration == 0
        assert records[0].meta.cycle == 0

    def test_model_based_once_two_rows_exist(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(max_iterations=10))
        loop.run_cycle()
        loop.run_cycle()
        records = loop.run_cycle()
        assert records[0].meta.source == "automated"
        # the two random warm-up cycles log a zero acquisition sum
        assert loop.state.ei_sum_history[:2] == [0.0, 0.0]
        assert loop.state.ei_sum_history[2] >= 0.0

    def test_parallel_accounting(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(p=2, max_iterations=4))
        state = loop.run()
        assert state.stop_reason == "max_iterations"
        assert state.cycle == 2  # max_iterations / p cycles
        assert state.iteration == 4
        assert len(loop.store.query()) == 4

    def test_parallel_picks_are_distinct(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(p=3, max_iterations=9))
        loop.run()
        for cycle in range(3):
            rows = [
                tuple(r.inputs.values())
                for r in loop.store.query()
                if r.meta.cycle == cycle
            ]
            assert len(set(rows)) == len(rows) == 3

    def test_no_lost_jobs(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(max_iterations=6))
        state = loop.run()
        assert len(loop.store.query()) == state.iteration
        assert len(state.ei_sum_history) == state.cycle

    def test_best_value_is_monotone(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(max_iterations=8))
        bests = []
        loop.run(on_cycle=lambda s, _r: bests.append(s.best_value))
        assert all(b <= a + 1e-12 for a, b in zip(bests, bests[1:]))
        assert loop.state.best_inputs is not None

    def test_energy_budget_stops_within_one_cycle(self, tmp_path):
        # each 5-step virtual job consumes 5 * 0.05 s * 200 W = 50 J
        cfg = quick_config(max_iterations=99, end=EndConditions(energy_budget_j=120.0))
        loop = make_loop(tmp_path, cfg)
        state = loop.run()
        assert state.stop_reason == "energy_budget"
        assert state.consumed_energy_j >= 120.0
        assert state.consumed_energy_j < 120.0 + 50.0 + 1e-9

    def test_backend_failure_records_and_stops(self, tmp_path):
        class Exploding:
            capabilities = {"supports_progress": False}

            def run(self, x, watcher=None):
                raise RuntimeError("sim crashed")

        store = ResultStore(tmp_path / "results.jsonl")
        loop = OptimizationLoop(quick_config(), store, lambda: Exploding())
        loop.run_cycle()
        assert loop.state.stop_reason == "backend_failure"
        rec = store.query()[0]
        assert rec.meta.failed and not rec.trainable

    def test_seeded_runs_are_identical(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            d.mkdir()
            loop = make_loop(d, quick_config(max_iterations=6, seed=11))
            loop.run()
            outs.append((d / "results.jsonl").read_bytes())
        assert outs[0] == outs[1]

    def test_different_seeds_diverge(self, tmp_path):
        outs = []
        for seed in (0, 1):
            d = tmp_path / str(seed)
            d.mkdir()
            loop = make_loop(d, quick_config(max_iterations=2, seed=seed))
            loop.run()
            outs.append((d / "results.jsonl").read_bytes())
        assert outs[0] != outs[1]


class TestEarlyTerminationIntegration:
    def test_partial_record_flagged_and_untrainable(self, tmp_path):
        # a tight box around a high-crack corner, on a thin strong blank
        specs = [
            ParameterSpec("p", "continuous", lower=395.0, upper=400.0),
            ParameterSpec("Fr", "continuous", lower=0.19, upper=0.2),
            ParameterSpec("D", "continuous", lower=0.5, upper=0.55),
        ]
        cfg = quick_config(
            specs=specs,
            max_iterations=1,
            early=EarlyTermination(threshold=0.9, limits={"L7": 1.0}),
        )
        store = ResultStore(tmp_path / "results.jsonl")
        model = PressModel(steps=50)
        fixed = {"db": 60.0, "dbn": 50.0, "Rp": 340.0}
        loop = OptimizationLoop(cfg, store, lambda: VirtualPressBackend(model, fixed))
        loop.run()
        rec = store.query()[0]
        assert rec.meta.terminated_early
        assert 0.9 <= rec.meta.progress < 1.0
        assert not rec.trainable
        assert loop.state.best_inputs is None  # partials never become the best


class TestHumanGuided:
    def test_awaits_then_consumes_submission(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(mode="human_guided"))
        assert loop.run_cycle() == []
        assert loop.awaiting_human
        point = {"p": 200.0, "Fr": 0.1, "D": 1.5}
        loop.state.status = "running"
        loop.submit_selection(point)
        records = loop.run_cycle()
        assert records[0].meta.source == "human"
        assert records[0].inputs == point

    def test_validate_point_names_fields(self, tmp_path):
        loop = make_loop(tmp_path, quick_config())
        problems = loop.validate_point({"p": 1e9, "Fr": 0.1, "D": 1.5, "bogus": 1.0})
        assert "p" in problems and "outside" in problems["p"]
        assert problems["bogus"] == "unknown parameter"
        assert "Fr" not in problems

    def test_invalid_submission_rejected(self, tmp_path):
        loop = make_loop(tmp_path, quick_config())
        with pytest.raises(ValueError, match="p"):
            loop.submit_selection({"p": -5.0, "Fr": 0.1, "D": 1.5})


class TestAcquisitionProfile:
    def test_unavailable_before_first_model(self, tmp_path):
        loop = make_loop(tmp_path, quick_config())
        assert loop.acquisition_profile()["available"] is False

    def test_sweeps_and_proposals_after_model_cycle(self, tmp_path):
        loop = make_loop(tmp_path, quick_config(max_iterations=10))
        for _ in range(3):
            loop.run_cycle()
        profile = loop.acquisition_profile(sweep_points=11, top_k=3)
        assert profile["available"]
        assert [s["parameter"] for s in profile["sweeps"]] == ["p", "Fr", "D"]
        assert all(len(s["values"]) == len(s["ei_sum"]) == 11 for s in profile["sweeps"])
        assert len(profile["proposals"]) == 3
        ei = [prop["ei_sum"] for prop in profile["proposals"]]
        assert ei == sorted(ei, reverse=True)
        assert set(profile["proposals"][0]["predicted_mean"]) == set(TARGET_NAMES)


RP_LEVELS = np.array([160.0, 220.0, 280.0, 340.0])


def linear_records(n=40, seed=0):
    """p = 100 + 2*L4; Rp is 160 + L4 snapped to its discrete levels."""
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        l4 = float(rng.uniform(0.0, 100.0))
        targets = {t: 0.0 for t in TARGET_NAMES}
        targets["L4"] = l4
        targets["L1"] = 100.0 - l4
        rp = float(RP_LEVELS[np.argmin(np.abs(RP_LEVELS - (160.0 + l4)))])
        records.append(
            SimulationRecord(
                part_id="demo",
                inputs={"p": 100.0 + 2.0 * l4, "Rp": rp},
                targets=targets,
                meta=JobMeta(),
            )
        )
    return records


class TestInitialPredictor:
    SPECS = [
        ParameterSpec("p", "continuous", lower=50.0, upper=400.0),
        ParameterSpec("Rp", "discrete", add_values=(160.0, 220.0, 280.0, 340.0)),
    ]

    def test_recovers_linear_relationship(self):
        pred = train_initial_predictor(linear_records(), self.SPECS, fixed={"t0": 1.0})
        f_star = {t: 0.0 for t in TARGET_NAMES}
        f_star["L4"] = 50.0
        f_star["L1"] = 50.0
        out = pred.predict({"t0": 1.0}, TargetSpec(f_star=f_star))
        assert out["p"] == pytest.approx(200.0, rel=0.05)

    def test_discrete_output_snaps_to_allowed_value(self):
        pred = train_initial_predictor(linear_records(), self.SPECS, fixed={"t0": 1.0})
        f_star = {t: 0.0 for t in TARGET_NAMES}
        f_star["L4"] = 75.0
        f_star["L1"] = 25.0
        out = pred.predict({"t0": 1.0}, TargetSpec(f_star=f_star))
        # the regressed value sits near 235, between the 220 and 280 levels
        assert out["Rp"] == 220.0

    def test_continuous_output_clipped_to_spec(self):
        pred = train_initial_predictor(linear_records(), self.SPECS, fixed={"t0": 1.0})
        f_star = {t: 0.0 for t in TARGET_NAMES}
        f_star["L4"] = 100.0  # implied p = 300; push beyond with a fake bound
        f_star["L1"] = 0.0
        pred.ranges["p"] = (50.0, 250.0)
        out = pred.predict({"t0": 1.0}, TargetSpec(f_star=f_star))
        assert out["p"] == 250.0

    def test_too_few_records_errors(self):
        with pytest.raises(InsufficientDataError, match="need >= 20"):
            train_initial_predictor(linear_records(n=19), self.SPECS, fixed={})

    def test_untrainable_records_do_not_count(self):
        records = linear_records(n=25)
        for r in records[:10]:
            r.meta.terminated_early = True
            r.meta.progress = 0.9
        with pytest.raises(InsufficientDataError):
            train_initial_predictor(records, self.SPECS, fixed={})
