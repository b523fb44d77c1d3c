import numpy as np
import pytest

from masksynth.costs import sample_trajectories
from masksynth.errors import PolicyModelMismatch, ScenarioFormatError
from masksynth.model import build_mask_mdp
from masksynth.optimizer import SynthesisTrace
from masksynth.policy import ConditioningMode, zero_policy
from masksynth.scenario_io import (
    ScenarioDoc,
    export_batch,
    load_batch_records,
    load_policy,
    load_scenario,
    load_summary,
    load_trace,
    save_policy,
    save_scenario,
    save_summary,
    save_trace,
)
from masksynth.scenarios import default_gridworld_config, illustrative_scenario

from conftest import random_policy

SCENARIO_DIR = "scenarios"


class TestScenarioFiles:
    def test_shipped_files_build(self):
        for name in ("illustrative.toml", "gridworld.toml"):
            doc = load_scenario(f"{SCENARIO_DIR}/{name}")
            spec = doc.build()
            assert spec.n_states >= 7

    def test_flat_roundtrip(self, tmp_path):
        doc = ScenarioDoc(name="illustrative", sensor_scenario=illustrative_scenario())
        path = tmp_path / "scn.toml"
        save_scenario(doc, path)
        back = load_scenario(path)
        a, b = doc.sensor_scenario, back.sensor_scenario
        assert a.states == b.states
        assert np.allclose(a.transition, b.transition)
        assert a.mask_actions == b.mask_actions
        assert a.base_costs == b.base_costs
        assert np.allclose(a.initial_dist, b.initial_dist)
        assert a.secret_states == b.secret_states
        spec_a, spec_b = a.build(), b.build()
        assert np.allclose(spec_a.emission, spec_b.emission)

    def test_gridworld_roundtrip(self, tmp_path):
        cfg = default_gridworld_config(beta=0.75, epsilon=35.0)
        path = tmp_path / "gw.toml"
        save_scenario(ScenarioDoc(name="gw", gridworld=cfg), path)
        back = load_scenario(path).gridworld
        assert back.walls == cfg.walls
        assert back.robot_policy == cfg.robot_policy
        assert back.sensors == cfg.sensors
        assert back.budget == 35.0
        assert np.allclose(
            load_scenario(path).build().transition,
            __import__("masksynth.scenarios", fromlist=["build_gridworld"]).build_gridworld(cfg).transition,
        )

    def test_missing_file(self):
        with pytest.raises(ScenarioFormatError, match="not found"):
            load_scenario("no/such/file.toml")

    def test_toml_error_names_line(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[problem\nhorizon = 2\n")
        with pytest.raises(ScenarioFormatError, match="line 1"):
            load_scenario(path)

    def test_missing_section_named(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[problem]\nhorizon = 2\nbudget = 5.0\n")
        with pytest.raises(ScenarioFormatError, match=r"\[mask_costs\]"):
            load_scenario(path)

    def test_unknown_state_reference_named(self, tmp_path):
        doc = ScenarioDoc(name="x", sensor_scenario=illustrative_scenario())
        path = tmp_path / "scn.toml"
        save_scenario(doc, path)
        text = path.read_text().replace('["s0", "s1", 0.3333333333333333]', '["s0", "zz", 0.3333333333333333]')
        path.write_text(text)
        with pytest.raises(ScenarioFormatError, match="zz"):
            load_scenario(path)

    def test_beta_and_budget_overrides(self):
        doc = load_scenario(f"{SCENARIO_DIR}/gridworld.toml")
        spec = doc.build(beta=0.6, epsilon=12.5, gamma=0.5)
        assert spec.budget == 12.5
        assert spec.discount == 0.5
        assert 0.6 in np.unique(spec.emission)

    def test_nonzero_false_positive_rejected(self, tmp_path):
        doc = ScenarioDoc(name="x", sensor_scenario=illustrative_scenario())
        path = tmp_path / "scn.toml"
        save_scenario(doc, path)
        path.write_text(path.read_text().replace(
            "false_positive_prob = 0.0", "false_positive_prob = 0.1", 1))
        with pytest.raises(ScenarioFormatError, match="false_positive"):
            load_scenario(path)


class TestPolicyFiles:
    @pytest.mark.parametrize("mode", list(ConditioningMode))
    def test_bit_exact_roundtrip(self, tmp_path, illustrative_mdp, mode):
        rng = np.random.default_rng(1)
        pol = random_policy(rng, illustrative_mdp, mode, scale=3.7)
        path = tmp_path / "policy.txt"
        save_policy(pol, illustrative_mdp, path)
        back = load_policy(path, illustrative_mdp)
        assert back.mode == mode
        assert np.array_equal(back.theta, pol.theta)

    def test_model_mismatch_detected(self, tmp_path, illustrative_mdp):
        gw = build_mask_mdp(load_scenario(f"{SCENARIO_DIR}/gridworld.toml").build())
        pol = zero_policy(gw, ConditioningMode.STATE_ONLY)
        path = tmp_path / "policy.txt"
        save_policy(pol, gw, path)
        with pytest.raises(PolicyModelMismatch):
            load_policy(path, illustrative_mdp)

    def test_truncated_file_detected(self, tmp_path, illustrative_mdp):
        pol = zero_policy(illustrative_mdp, ConditioningMode.STATE_ONLY)
        path = tmp_path / "policy.txt"
        save_policy(pol, illustrative_mdp, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(PolicyModelMismatch, match="rows"):
            load_policy(path, illustrative_mdp)


class TestTraceFiles:
    def test_roundtrip_and_header(self, tmp_path):
        trace = SynthesisTrace()
        trace.append(1, 0.25, 10.0, 9.7, 1.0, 0.5, 0.01)
        trace.append(2, 0.5, 12.25, 12.5, 0.75, 0.25, 0.02)
        path = tmp_path / "trace.csv"
        save_trace(trace, path)
        text = path.read_text().splitlines()
        assert text[0] == "iter,entropy,value,lambda,grad_norm,wall_s"
        back = load_trace(path)
        assert back.iterations == [1, 2]
        assert back.entropy == trace.entropy
        assert back.value == trace.value
        assert back.lam == trace.lam

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("nope\n1,2,3,4,5,6\n")
        with pytest.raises(ScenarioFormatError):
            load_trace(path)


def test_summary_roundtrip(tmp_path):
    path = tmp_path / "summary.txt"
    save_summary(path, scenario="x", entropy_bits=0.71, expected_cost=42.0, iterations=10)
    back = load_summary(path)
    assert back["scenario"] == "x"
    assert back["entropy_bits"] == pytest.approx(0.71)
    assert back["iterations"] == 10


def test_batch_export_roundtrip(tmp_path, illustrative_mdp):
    pol = zero_policy(illustrative_mdp)
    batch = sample_trajectories(illustrative_mdp, pol, 7, seed=0)
    path = tmp_path / "batch.jsonl"
    export_batch(batch, path)
    records = load_batch_records(path)
    assert len(records) == 7
    assert records[3]["states"] == batch.states[3].tolist()
    assert records[3]["costs"] == batch.costs[3].tolist()
