import json

import pytest

from adalab.cli import main
from adalab.core import (
    FiniteDistribution,
    Query,
    Sample,
    distribution_to_dict,
    dump_json,
    query_to_dict,
)

SIMPLE = ["simple-attack", "--gamma", "0.2", "--n", "10", "--b", "0", "--trials", "2", "--seed", "3"]


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestExitCodes:
    def test_help_is_success(self, capsys):
        assert main(["--help"]) == 0
        capsys.readouterr()
        assert main(["attack", "--help"]) == 0

    def test_missing_subcommand_is_usage_error(self, capsys):
        assert main([]) == 1

    def test_malformed_assertion_is_usage_error(self, capsys):
        assert main(SIMPLE + ["--assert", "identification_rate>0.9"]) == 1
        assert main(SIMPLE + ["--assert", "identification_rate:ge:high"]) == 1

    def test_missing_params_exit_one(self, capsys):
        code, _, err = run(capsys, ["attack", "--trials", "1"])
        assert code == 1
        assert "error:" in err and "needs params" in err


class TestExperimentCommands:
    def test_simple_attack_prints_summary(self, capsys):
        code, out, _ = run(capsys, SIMPLE)
        assert code == 0
        summary = json.loads(out)
        assert summary["identification_rate"] == 1.0
        assert summary["kind"] == "simple_attack"
        assert summary["trials"] == 2

    def test_assertions_gate_exit_code(self, capsys):
        code, _, _ = run(capsys, SIMPLE + ["--assert", "identification_rate:ge:1.0"])
        assert code == 0
        code, out, err = run(capsys, SIMPLE + ["--assert", "identification_rate:gt:1.0"])
        assert code == 2
        assert "assertion failed" in err
        assert json.loads(out)["identification_rate"] == 1.0

    def test_out_writes_files(self, capsys, tmp_path):
        prefix = tmp_path / "demo"
        code, _, err = run(capsys, SIMPLE + ["--out", str(prefix)])
        assert code == 0
        assert "wrote" in err
        for suffix in (".jsonl", ".csv", ".summary.json"):
            assert (tmp_path / f"demo{suffix}").exists()
        lines = (tmp_path / "demo.jsonl").read_text().splitlines()
        assert len(lines) == 2

    def test_config_file_with_flag_override(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        dump_json(
            {
                "kind": "simple_attack",
                "trials": 5,
                "seed": 3,
                "params": {"gamma": 0.2, "n": 10, "noise_scale": 0.0},
            },
            str(cfg),
        )
        code, out, _ = run(capsys, ["simple-attack", "--config", str(cfg), "--trials", "2"])
        assert code == 0
        summary = json.loads(out)
        assert summary["trials"] == 2 and summary["seed"] == 3

    def test_config_kind_mismatch(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        dump_json({"kind": "attack", "params": {}}, str(cfg))
        code, _, err = run(capsys, ["simple-attack", "--config", str(cfg)])
        assert code == 1
        assert "config is for kind" in err

    def test_bounds_table(self, capsys):
        code, out, _ = run(
            capsys,
            [
                "bounds", "--mode", "negative", "--eps-values", "0.25", "0.01",
                "--gamma", "0.01", "--beta", "0.1",
            ],
        )
        assert code == 0
        assert json.loads(out)["rows"] == 2

    def test_llr_smoke(self, capsys):
        code, out, _ = run(
            capsys,
            [
                "llr", "--eps", "0.0625", "--k", "2", "--rho", "0.05", "--n", "8",
                "--b", "0.3125", "--trials", "10", "--seed", "1",
            ],
        )
        assert code == 0
        summary = json.loads(out)
        assert "threshold" in summary and summary["k"] == 2


class TestCheckConcentration:
    BUILT = ["check-concentration", "--eps", "0.25", "--gamma", "0.01", "--n", "16"]

    def test_built_instance_holds(self, capsys):
        code, out, _ = run(capsys, self.BUILT)
        assert code == 0
        report = json.loads(out)
        assert report["holds"] is True
        assert report["deviation_mass"] == pytest.approx(0.01)
        assert report["max_deviation"] == pytest.approx(0.99)
        assert report["hoeffding_gamma"] == pytest.approx(2 * 2.718281828459045**-2)

    def test_require_holds_failure_exits_two(self, capsys):
        code, out, err = run(capsys, self.BUILT + ["--threshold", "0.005", "--require-holds"])
        assert code == 2
        assert json.loads(out)["holds"] is False
        assert "exceeds gamma" in err

    def test_require_holds_success_exits_zero(self, capsys):
        assert main(self.BUILT + ["--require-holds"]) == 0

    def test_query_and_dist_files(self, capsys, tmp_path):
        qpath, dpath = tmp_path / "q.json", tmp_path / "d.json"
        dump_json(query_to_dict(Query(0.0, {1: 1.0})), str(qpath))
        dist = FiniteDistribution((Sample((0, 0)), Sample((1, 1))), (0.5, 0.5))
        dump_json(distribution_to_dict(dist), str(dpath))
        code, out, _ = run(
            capsys,
            [
                "check-concentration", "--query-file", str(qpath), "--dist-file", str(dpath),
                "--threshold", "0.6",
            ],
        )
        assert code == 0
        report = json.loads(out)
        # both samples sit exactly 0.5 from the true mean, under the threshold
        assert report["deviation_mass"] == 0.0
        assert report["max_deviation"] == pytest.approx(0.5)

    def test_file_flags_must_pair(self, capsys, tmp_path):
        qpath = tmp_path / "q.json"
        dump_json(query_to_dict(Query(0.5)), str(qpath))
        code, _, err = run(capsys, ["check-concentration", "--query-file", str(qpath)])
        assert code == 1
        assert "must be given together" in err
        code, _, err = run(capsys, ["check-concentration", "--eps", "0.25"])
        assert code == 1
        assert "--gamma is required" in err
