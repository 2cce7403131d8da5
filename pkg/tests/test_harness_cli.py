import json
from pathlib import Path

import numpy as np
import pytest

from fdalab.cli import main
from fdalab.errors import ConfigError
from fdalab.harness import (
    ExperimentConfig,
    config_from_dict,
    config_hash,
    derive_rng,
    load_config,
    median_rows,
    run_downstream_study,
    run_observation_study,
    run_recon_study,
    sort_rows,
    write_study_tables,
)

SMALL = {
    "scenes": ["S1", "S4"],
    "references": ["R0", "R2"],
    "patterns": ["C1", "C3"],
    "delta_f_list": [1e5],
    "lambda_list": [1e-3, 1e-1],
    "l_cov": 48,
    "l_recon": 120,
    "master_seed": 11,
}


@pytest.fixture(scope="module")
def small_cfg():
    return config_from_dict(dict(SMALL))


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_bad_lambda_list_names_key(self):
        with pytest.raises(ConfigError, match="lambda_list"):
            config_from_dict({"lambda_list": [0.1, -1.0]})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="lambda_grid"):
            config_from_dict({"lambda_grid": [0.1]})

    def test_unknown_scene_named(self):
        with pytest.raises(ConfigError, match="scenes"):
            config_from_dict({"scenes": ["S1", "S7"]})

    def test_load_from_file_with_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(SMALL))
        cfg = load_config(path, master_seed=99)
        assert cfg.master_seed == 99
        assert cfg.scenes == ("S1", "S4")

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/no/such/config.json")

    def test_hash_stable_under_key_order(self):
        a = config_from_dict({"l_cov": 10, "l_recon": 120})
        b = config_from_dict({"l_recon": 120, "l_cov": 10})
        assert config_hash(a) == config_hash(b)


class TestDeriveRng:
    def test_deterministic(self):
        a = derive_rng(3, "observe", "S1", 0).standard_normal(5)
        b = derive_rng(3, "observe", "S1", 0).standard_normal(5)
        assert np.array_equal(a, b)

    def test_distinct_contexts_decorrelate(self):
        a = derive_rng(3, "observe", "S1", 0).standard_normal(5)
        b = derive_rng(3, "observe", "S1", 1).standard_normal(5)
        c = derive_rng(4, "observe", "S1", 0).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestObservationStudy:
    @pytest.fixture(scope="class")
    def rows(self, small_cfg):
        return run_observation_study(small_cfg)

    def test_row_count_is_axis_product(self, rows, small_cfg):
        expected = len(small_cfg.scenes) * len(small_cfg.references)
        expected *= len(small_cfg.delta_f_list)
        assert len(rows) == expected
        keys = {(r["scene"], r["reference"], r["delta_f"]) for r in rows}
        assert len(keys) == expected

    def test_matched_reference_rows_close_to_zero(self, rows):
        for row in rows:
            if row["reference"] == "R0":
                assert row["residual_norm"] == 0.0
                assert row["response_norm"] == 0.0
                assert row["freq_block_discrepancy"] is None
                assert row["cov_trace"] > 0  # stochastic part still drives covariance

    def test_generic_mismatch_dominates(self, rows):
        by_key = {(r["scene"], r["reference"]): r for r in rows}
        for scene in ("S1", "S4"):
            assert (
                by_key[(scene, "R2")]["response_norm"]
                > by_key[(scene, "R0")]["response_norm"]
            )

    def test_rerun_reproduces_rows(self, rows, small_cfg):
        assert run_observation_study(small_cfg) == rows


class TestReconStudy:
    @pytest.fixture(scope="class")
    def tables(self, small_cfg):
        return run_recon_study(small_cfg)

    def test_row_counts(self, tables, small_cfg):
        cells = len(small_cfg.scenes) * len(small_cfg.references)
        assert len(tables["recon_lambda"]) == cells * len(small_cfg.lambda_list)
        assert len(tables["recon_crossfreq"]) == cells * len(small_cfg.lambda_list)
        assert len(tables["recon_coding"]) == cells * len(small_cfg.patterns)

    def test_receiver_norm_nonincreasing_per_case(self, tables):
        for scene in ("S1", "S4"):
            for ref in ("R0", "R2"):
                norms = [
                    r["receiver_norm"]
                    for r in tables["recon_lambda"]
                    if r["scene"] == scene and r["reference"] == ref
                ]
                assert norms == sorted(norms, reverse=True)

    def test_route_agreement_logged_and_tight(self, tables):
        for row in tables["recon_lambda"]:
            assert row["route_agreement_max"] <= 1e-10

    def test_matched_reference_has_null_coherence(self, tables):
        for row in tables["recon_coding"]:
            if row["reference"] == "R0":
                assert row["rho_path"] is None
            else:
                assert 0.0 <= row["rho_path"] <= 1.0 + 1e-12


class TestDownstreamStudy:
    @pytest.fixture(scope="class")
    def tables(self, small_cfg):
        return run_downstream_study(small_cfg)

    def test_kinds_share_key_tuples(self, tables):
        keys = {}
        for row in tables["downstream_covmodel"]:
            key = (row["scene"], row["reference"])
            keys.setdefault(key, []).append(row["cov_model"])
        for kinds in keys.values():
            assert sorted(kinds) == ["block-diagonal", "diagonal", "full"]

    def test_matched_reference_point_rows(self, tables):
        by_key = {
            (r["scene"], r["reference"], r["template"]): r
            for r in tables["downstream_ideal"]
        }
        for scene in ("S1", "S4"):
            matched = by_key[(scene, "R0", "point")]
            mismatched = by_key[(scene, "R2", "point")]
            assert matched["eps_loc"] == 0.0
            assert matched["nmse"] < mismatched["nmse"]


class TestEmission:
    def test_median_rows_even_count(self):
        rows = [
            {"lambda": 0.1, "scene": "S1", "reference": "R1", "metric": 1.0},
            {"lambda": 0.1, "scene": "S1", "reference": "R1", "metric": 2.0},
            {"lambda": 0.1, "scene": "S1", "reference": "R1", "metric": 4.0},
            {"lambda": 0.1, "scene": "S1", "reference": "R1", "metric": 8.0},
        ]
        med = median_rows(rows, ("lambda",), ("metric",))
        assert med[0]["group_axis"] == "pooled"
        assert med[0]["metric"] == pytest.approx(3.0)

    def test_sort_rows_is_stable_and_total(self):
        rows = [
            {"scene": "S2", "reference": "R1", "pattern": "C1", "delta_f": 1e5,
             "lambda": None, "seed": 0},
            {"scene": "S1", "reference": "R1", "pattern": "C1", "delta_f": 1e5,
             "lambda": None, "seed": 0},
        ]
        assert sort_rows(rows)[0]["scene"] == "S1"

    def test_write_csv_and_json(self, tmp_path, small_cfg):
        rows = run_observation_study(small_cfg)
        paths_csv = write_study_tables({"observe": rows}, tmp_path / "c", fmt="csv")
        paths_json = write_study_tables({"observe": rows}, tmp_path / "j", fmt="json")
        text = paths_csv[0].read_text()
        assert text.splitlines()[0].startswith("scene,reference,pattern,delta_f")
        payload = json.loads(paths_json[0].read_text())
        assert len(payload) == len(rows)
        # null metrics stay explicit
        assert any(entry["freq_block_discrepancy"] is None for entry in payload)


class TestCli:
    def test_show_scenes(self, capsys):
        assert main(["show-scenes"]) == 0
        out = capsys.readouterr().out
        for tag in ("S1", "S2", "S3", "S4", "S5"):
            assert tag in out

    def test_validate_config_ok(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(SMALL))
        assert main(["validate-config", "--config", str(path)]) == 0

    def test_validate_config_bad_lambda(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**SMALL, "lambda_list": [0.0]}))
        assert main(["validate-config", "--config", str(path)]) == 2
        assert "lambda_list" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, capsys):
        assert main(["observe", "--bogus"]) == 2

    def test_unknown_command_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_observe_writes_tables_and_manifest(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**SMALL, "l_cov": 16}))
        out_dir = tmp_path / "out"
        code = main(["observe", "--config", str(path), "--out", str(out_dir)])
        assert code == 0
        assert (out_dir / "observe.csv").exists()
        manifest = json.loads((out_dir / "run_manifest.json").read_text())
        assert manifest["master_seed"] == 11
        assert manifest["row_counts"]["observe"] == 4
        assert "config_hash" in manifest

    def test_seed_override_changes_manifest(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**SMALL, "l_cov": 16}))
        out_dir = tmp_path / "out2"
        main(["observe", "--config", str(path), "--out", str(out_dir), "--seed", "77"])
        manifest = json.loads((out_dir / "run_manifest.json").read_text())
        assert manifest["master_seed"] == 77
