import json

import numpy as np
import pytest

from adalab.bounds import composed_epsilon
from adalab.harness import (
    STREAMS,
    ExperimentConfig,
    derive_entropy,
    derive_rng,
    derive_seedseq,
    evaluate_assertions,
    load_config,
    run_experiment,
    write_outputs,
)


def attack_config(**over):
    base = dict(
        kind="attack",
        trials=3,
        seed=5,
        params={"eps": 0.25, "gamma": 0.01, "n": 16, "k": 5},
    )
    base.update(over)
    return ExperimentConfig(**base)


class TestSeedDerivation:
    def test_deterministic_and_stream_separated(self):
        states = {}
        for stream in STREAMS:
            seq = derive_seedseq(42, 3, stream)
            again = derive_seedseq(42, 3, stream)
            assert np.array_equal(seq.generate_state(4), again.generate_state(4))
            states[stream] = tuple(seq.generate_state(4))
        assert len(set(states.values())) == len(STREAMS)

    def test_trials_do_not_collide(self):
        a = derive_seedseq(42, 0, "sample_draw").generate_state(4)
        b = derive_seedseq(42, 1, "sample_draw").generate_state(4)
        assert not np.array_equal(a, b)

    def test_rng_and_entropy(self):
        x = derive_rng(7, 0, "mech_noise_real").standard_normal(3)
        y = derive_rng(7, 0, "mech_noise_real").standard_normal(3)
        np.testing.assert_array_equal(x, y)
        e = derive_entropy(7, 0, "mech_noise_oracle")
        assert isinstance(e, int) and 0 <= e < 2**256
        assert e == derive_entropy(7, 0, "mech_noise_oracle")

    def test_unknown_stream(self):
        with pytest.raises(ValueError, match="unknown stream"):
            derive_seedseq(1, 0, "nope")


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="unknown experiment kind"):
            ExperimentConfig(kind="nope")
        with pytest.raises(ValueError, match="trials"):
            ExperimentConfig(kind="attack", trials=0)
        with pytest.raises(ValueError, match="seed"):
            ExperimentConfig(kind="attack", seed=-1)
        with pytest.raises(ValueError, match="params"):
            ExperimentConfig(kind="attack", params=[1])
        with pytest.raises(ValueError, match="assertions"):
            ExperimentConfig(kind="attack", assertions={})

    def test_load_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(
            json.dumps({"kind": "simple_attack", "trials": 2, "params": {"gamma": 0.2, "n": 10}})
        )
        cfg = load_config(str(path))
        assert cfg.kind == "simple_attack" and cfg.trials == 2
        assert cfg.params == {"gamma": 0.2, "n": 10}

    def test_load_config_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"kind": "attack", "foo": 1}))
        with pytest.raises(ValueError, match=r"unknown config keys: \['foo'\]"):
            load_config(str(path))

    def test_load_config_rejects_non_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(ValueError, match="JSON object"):
            load_config(str(path))


class TestRunExperimentKinds:
    def test_attack_records_and_summary(self):
        result = run_experiment(attack_config())
        assert [r["trial"] for r in result.records] == [0, 1, 2]
        for r in result.records:
            assert set(r) == {
                "trial", "j_s", "j_star", "success", "final_deviation", "sample_deviation"
            }
            assert 0 <= r["j_s"] < 100
        s = result.summary
        assert s["kind"] == "attack" and s["k"] == 5
        assert 0.0 <= s["success_rate"] <= 1.0
        assert "constant" in s["params"]

    def test_attack_hybrid_reports_switching(self):
        cfg = attack_config(
            params={
                "eps": 0.25, "gamma": 0.01, "n": 16, "k": 5,
                "mechanism": "hybrid", "epsilon_switch": 0.25,
            }
        )
        result = run_experiment(cfg)
        assert all("switched" in r and "switch_round" in r for r in result.records)
        assert "switch_rate" in result.summary

    def test_attack_k_defaults_from_calibration(self):
        cfg = attack_config(trials=1, params={"eps": 0.25, "gamma": 0.01, "n": 16})
        result = run_experiment(cfg)
        # laplace scale 0.1 has variance 0.02: the calibrated constant is 1.61
        assert result.summary["params"]["constant"] == pytest.approx(1.61)
        assert result.summary["k"] == 178

    def test_simple_attack_noiseless_is_exact(self):
        cfg = ExperimentConfig(
            kind="simple_attack",
            trials=4,
            seed=2,
            params={"gamma": 0.2, "n": 10, "noise_scale": 0.0},
        )
        result = run_experiment(cfg)
        s = result.summary
        assert s["identification_rate"] == 1.0
        assert s["min_worst_deviation"] == 0.8
        assert s["rounds"] == 5
        assert all(r["identified"] for r in result.records)

    def test_positive_accuracy_zero_rounds(self):
        cfg = ExperimentConfig(
            kind="positive_accuracy",
            trials=2,
            seed=3,
            params={"eps": 0.25, "gamma": 0.01, "alpha": 0.3, "beta": 0.1, "n": 16, "k": 0},
        )
        result = run_experiment(cfg)
        assert result.summary["accuracy_rate"] == 1.0
        assert result.summary["switch_rate"] == 0.0
        assert all(r["rounds"] == 0 for r in result.records)

    def test_positive_accuracy_resolves_rounds(self):
        cfg = ExperimentConfig(
            kind="positive_accuracy",
            trials=2,
            seed=3,
            params={"eps": 0.005, "gamma": 0.05, "alpha": 0.9, "beta": 0.9, "n": 400},
        )
        result = run_experiment(cfg)
        assert result.summary["k"] == 4
        assert result.summary["noise_scale"] == pytest.approx(0.9 / (2 * np.log(200)))
        for r in result.records:
            assert r["rounds"] == 4
            assert isinstance(r["accurate"], bool)

    def test_coupling_switches_exactly_at_bad_round(self):
        cfg = ExperimentConfig(
            kind="coupling",
            trials=5,
            seed=11,
            params={"k": 6, "bad_round": 2, "epsilon_switch": 0.25},
        )
        result = run_experiment(cfg)
        s = result.summary
        assert s["switch_round_match_rate"] == 1.0
        assert s["prefix_identical_rate"] == 1.0
        assert s["expected_switch_round"] == 2
        for r in result.records:
            assert r["switch_round"] == 2
            assert r["equal_rounds"] >= 2

    def test_llr_summary(self):
        cfg = ExperimentConfig(
            kind="llr",
            trials=30,
            seed=4,
            params={"eps": 0.0625, "k": 3, "rho": 0.05, "n": 8, "noise_scale": 0.3125},
        )
        result = run_experiment(cfg)
        s = result.summary
        assert s["k"] == 3 and s["trials"] == 30
        assert s["threshold"] == composed_epsilon(3, 0.0625, 0.3125, 0.05)
        assert len(result.records) == 1

    def test_divergence_real_vs_oracle(self):
        cfg = ExperimentConfig(
            kind="divergence",
            seed=0,
            params={"mech_a": "real", "mech_b": "oracle", "n": 4, "ones": 2},
        )
        s = run_experiment(cfg).summary
        # empirical 0.5 vs true 0.25 under laplace scale 0.1
        assert s["max_divergence_ab"] == pytest.approx(2.5, rel=1e-7)
        same = run_experiment(
            ExperimentConfig(
                kind="divergence",
                seed=0,
                params={"mech_a": "real", "mech_b": "real", "n": 4, "ones": 2},
            )
        ).summary
        assert same["max_divergence_ab"] == 0.0 and same["kl_ab"] == 0.0

    def test_bounds_table(self):
        cfg = ExperimentConfig(
            kind="bounds_table",
            params={"mode": "negative", "eps_values": [0.25], "gamma": 0.01, "beta": 0.1},
        )
        result = run_experiment(cfg)
        assert result.summary["rows"] == 1
        assert result.records[0]["breaking_rounds"] == 72
        with pytest.raises(ValueError, match="needs params"):
            run_experiment(
                ExperimentConfig(
                    kind="bounds_table",
                    params={"mode": "positive", "eps_values": [0.01], "gamma": 1e-6, "beta": 0.1},
                )
            )
        with pytest.raises(ValueError, match="'negative' or 'positive'"):
            run_experiment(
                ExperimentConfig(
                    kind="bounds_table",
                    params={"mode": "sideways", "eps_values": [0.01], "gamma": 1e-6, "beta": 0.1},
                )
            )

    def test_missing_params_named_in_error(self):
        with pytest.raises(ValueError, match=r"attack experiment needs params \['n'\]"):
            run_experiment(
                ExperimentConfig(kind="attack", params={"eps": 0.25, "gamma": 0.01})
            )


class TestParallelism:
    def test_thread_pool_matches_serial(self):
        serial = run_experiment(attack_config(trials=4, threads=1))
        pooled = run_experiment(attack_config(trials=4, threads=2))
        assert pooled.records == serial.records
        assert pooled.summary["success_rate"] == serial.summary["success_rate"]

    def test_env_var_thread_count(self, monkeypatch):
        serial = run_experiment(attack_config(trials=4))
        monkeypatch.setenv("ADALAB_THREADS", "2")
        pooled = run_experiment(attack_config(trials=4))
        assert pooled.records == serial.records


class TestOutputs:
    def test_write_outputs(self, tmp_path):
        result = run_experiment(
            ExperimentConfig(
                kind="simple_attack",
                trials=3,
                seed=2,
                params={"gamma": 0.2, "n": 10, "noise_scale": 0.0},
            )
        )
        paths = write_outputs(result, str(tmp_path / "runs" / "demo"))
        lines = open(paths["jsonl"]).read().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["trial"] == 0
        header = open(paths["csv"]).readline().strip().split(",")
        assert header == [
            "trial", "held_block", "breaking_query_index", "identified", "worst_deviation"
        ]
        summary = json.loads(open(paths["summary"]).read())
        assert summary["kind"] == "simple_attack"
        assert summary["identification_rate"] == 1.0


class TestAssertions:
    def test_pass_and_fail(self):
        summary = {"success_rate": 0.9, "nested": {"k": 72}}
        ok = [
            {"metric": "success_rate", "op": "ge", "value": 0.5},
            {"metric": "nested.k", "op": "eq", "value": 72},
        ]
        assert evaluate_assertions(summary, ok) == []
        bad = evaluate_assertions(summary, [{"metric": "success_rate", "op": "ge", "value": 0.95}])
        assert len(bad) == 1 and "not ge" in bad[0]

    def test_malformed_and_missing(self):
        summary = {"x": 1}
        out = evaluate_assertions(
            summary,
            [
                {"metric": "x"},
                {"metric": "x", "op": "between", "value": 1},
                {"metric": "y", "op": "ge", "value": 0},
                "not a dict",
            ],
        )
        assert len(out) == 4
        assert "malformed" in out[0]
        assert "unknown op" in out[1]
        assert "not found" in out[2]
        assert "malformed" in out[3]
