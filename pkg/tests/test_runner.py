"""Grid orchestration: spec validation and round trips, record layout and
determinism, resume and crash isolation, comparisons, table emission, and
the command-line wiring."""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import pytest

import inductive_bench
from inductive_bench.cli import _parse_seed_list, main as cli_main
from inductive_bench.errors import ConfigError
from inductive_bench.runner import (Comparison, Condition, ExperimentSpec,
                                    build_paper_spec, compare, config_hash,
                                    emit_tables, load_records, load_spec,
                                    run, run_comparisons, save_spec,
                                    spec_from_dict)

from conftest import make_dataset, write_csv_tree

SCHEMA_PATH = Path(inductive_bench.__file__).parent / "resources" / "run_record.schema.json"


def _strip_wall(records):
    return json.dumps(
        [{k: v for k, v in r.items() if k != "wall_time_s"} for r in records],
        sort_keys=True)


def _grid_spec(outdir: str) -> ExperimentSpec:
    return ExperimentSpec(
        name="unit_grid",
        conditions=[
            Condition(name="mlp_fast", model="mlp", epochs=2, patience=2),
            Condition(name="rf_small", model="rf"),
            Condition(name="hyb", model="hybrid_rf", embedding="sage",
                      epochs=2, patience=2),
            Condition(name="hyb_emb", model="hybrid_rf", embedding="sage",
                      include_raw=False, epochs=2, patience=2),
            Condition(name="sage_cal", model="sage", epochs=2, patience=2,
                      calibrate=True),
        ],
        seeds=(0, 1),
        comparisons=[
            Comparison("rf_vs_mlp", "rf_small", "mlp_fast"),
            Comparison("hyb_pair", "hyb", "hyb_emb", kind="paired"),
        ],
        output_dir=outdir,
        bootstrap_B=50,
    )


@pytest.fixture(scope="module")
def grid(small_bundle, tmp_path_factory):
    outdir = tmp_path_factory.mktemp("grid")
    spec = _grid_spec(str(outdir))
    records = run(spec, jobs=1, bundle=small_bundle)
    reports = run_comparisons(spec, records)
    return spec, records, reports, outdir


class TestConditionValidation:
    def test_rejects_bad_values(self):
        good = dict(name="c", model="rf")
        with pytest.raises(ConfigError):
            Condition(name="has space", model="rf")
        with pytest.raises(ConfigError):
            Condition(**{**good, "model": "xgboost"})
        with pytest.raises(ConfigError):
            Condition(**{**good, "model": "sage", "loss": "ce"})
        with pytest.raises(ConfigError):
            Condition(**{**good, "model": "sage", "graph": "ring"})
        with pytest.raises(ConfigError):
            Condition(**{**good, "model": "sage", "protocol": "oracle"})
        with pytest.raises(ConfigError):
            Condition(**{**good, "fit_scope": "test_only"})
        with pytest.raises(ConfigError):
            Condition(**{**good, "model": "sage", "epochs": 0})

    def test_hybrid_embedding_rules(self):
        with pytest.raises(ConfigError):
            Condition(name="h", model="hybrid_rf")  # embedding required
        with pytest.raises(ConfigError):
            Condition(name="h", model="hybrid_rf", embedding="gcn")
        with pytest.raises(ConfigError):
            Condition(name="m", model="mlp", embedding="sage")
        Condition(name="h", model="hybrid_rf", embedding="edgeless_sage")

    def test_calibration_only_for_graph_models(self):
        with pytest.raises(ConfigError):
            Condition(name="r", model="rf", calibrate=True)
        Condition(name="g", model="gat", calibrate=True)

    def test_head_class_resolution(self):
        assert Condition(name="s", model="sage").resolved_head_classes() == 3
        assert Condition(name="h", model="hybrid_rf",
                         embedding="sage").resolved_head_classes() == 2
        assert Condition(name="s", model="sage",
                         head_classes=2).resolved_head_classes() == 2


class TestConfigHash:
    def test_name_excluded_from_hash(self):
        a = Condition(name="first", model="sage")
        b = Condition(name="second", model="sage")
        assert config_hash(a) == config_hash(b)

    def test_config_changes_move_the_hash(self):
        a = Condition(name="c", model="sage")
        b = Condition(name="c", model="sage", loss="plain_ce")
        c = Condition(name="c", model="sage", epochs=100)
        assert len({config_hash(a), config_hash(b), config_hash(c)}) == 3

    def test_hash_shape(self):
        h = config_hash(Condition(name="c", model="rf"))
        assert re.fullmatch(r"[0-9a-f]{64}", h)


class TestSpecValidation:
    def _base(self, **kw):
        args = dict(name="s", conditions=[Condition(name="c", model="rf")],
                    seeds=(0, 1))
        args.update(kw)
        return ExperimentSpec(**args)

    def test_valid_spec_passes(self):
        self._base().validate()

    def test_duplicate_condition_names(self):
        spec = self._base(conditions=[Condition(name="c", model="rf"),
                                      Condition(name="c", model="logreg")])
        with pytest.raises(ConfigError, match="duplicate"):
            spec.validate()

    def test_empty_grid_axes(self):
        with pytest.raises(ConfigError):
            self._base(conditions=[]).validate()
        with pytest.raises(ConfigError):
            self._base(seeds=()).validate()
        with pytest.raises(ConfigError):
            self._base(seeds=(0, 0)).validate()

    def test_comparison_must_reference_declared_conditions(self):
        spec = self._base(comparisons=[Comparison("x", "c", "ghost")])
        with pytest.raises(ConfigError, match="ghost"):
            spec.validate()

    def test_bad_bootstrap_and_name(self):
        with pytest.raises(ConfigError):
            self._base(bootstrap_B=0).validate()
        with pytest.raises(ConfigError):
            self._base(name="bad name").validate()

    def test_unknown_comparison_kind(self):
        with pytest.raises(ConfigError):
            Comparison("x", "a", "b", kind="anova")


class TestSpecIO:
    def test_round_trip(self, tmp_path):
        spec = _grid_spec(str(tmp_path / "out"))
        path = tmp_path / "spec.json"
        save_spec(spec, path)
        back = load_spec(path)
        assert back.to_dict() == spec.to_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_spec(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_spec(path)

    def test_unknown_condition_field(self):
        raw = {"name": "s", "seeds": [0, 1],
               "conditions": [{"name": "c", "model": "rf", "bogus": 1}]}
        with pytest.raises(ConfigError, match="conditions"):
            spec_from_dict(raw)

    def test_non_object_root(self):
        with pytest.raises(ConfigError):
            spec_from_dict([1, 2, 3])

    def test_paper_spec_is_valid_and_complete(self):
        spec = build_paper_spec()
        spec.validate()
        names = {c.name for c in spec.conditions}
        assert len(names) == 16
        assert len(spec.comparisons) == 11
        assert spec.seeds == tuple(range(10))

    def test_shipped_paper_spec_matches_builder(self):
        shipped = load_spec(Path(inductive_bench.__file__).parent
                            / "resources" / "paper_spec.json")
        assert shipped.to_dict() == build_paper_spec().to_dict()


class TestGridRun:
    def test_all_cells_ok(self, grid):
        spec, records, _, _ = grid
        assert len(records) == len(spec.conditions) * len(spec.seeds)
        assert all(r["status"] == "ok" for r in records)
        assert all(r["error"] is None for r in records)

    def test_record_files_named_by_cell(self, grid):
        spec, _, _, outdir = grid
        for c in spec.conditions:
            for s in spec.seeds:
                assert (outdir / "records" / f"{c.name}__seed{s}.json").exists()

    def test_records_validate_against_schema(self, grid):
        jsonschema = pytest.importorskip("jsonschema")
        _, _, _, outdir = grid
        schema = json.loads(SCHEMA_PATH.read_text())
        for rec in load_records(outdir):
            jsonschema.validate(rec, schema)

    def test_decision_rules_by_model_family(self, grid):
        _, records, _, _ = grid
        by = {(r["condition"], r["seed"]): r for r in records}
        rf = by[("rf_small", 0)]
        assert rf["metrics"]["rule"] == "threshold"
        assert rf["metrics"]["threshold"] == 0.5
        mlp = by[("mlp_fast", 0)]
        assert mlp["metrics"]["rule"] == "argmax"
        assert mlp["metrics"]["threshold"] is None

    def test_gnn_records_carry_training_and_audit(self, grid):
        _, records, _, _ = grid
        rec = next(r for r in records if r["condition"] == "mlp_fast")
        assert rec["training"]["epochs_run"] >= 1
        assert rec["training"]["param_count"] > 0
        assert rec["audit"]["passed"] is True
        rf = next(r for r in records if r["condition"] == "rf_small")
        assert rf["training"] is None
        assert rf["audit"] is None

    def test_weighted_cells_record_class_weights(self, grid):
        _, records, _, _ = grid
        rec = next(r for r in records if r["condition"] == "mlp_fast")
        cw = rec["training"]["class_weights"]
        assert len(cw["computed"]) == 3
        assert cw["reference"] == {"illicit": 2.08, "licit": 0.48}
        assert sum(cw["counts"]) > 0

    def test_importance_absent_below_local_boundary(self, grid):
        # the synthetic bundle has 12 columns, under the 94-column boundary
        _, records, _, _ = grid
        rf = next(r for r in records if r["condition"] == "rf_small")
        assert rf["importance"] is None

    def test_calibration_only_where_requested(self, grid):
        _, records, _, _ = grid
        cal = next(r for r in records if r["condition"] == "sage_cal")
        assert cal["calibration"] is not None
        assert cal["calibration"]["delta_f1_at_fixed_threshold"] == 0.0
        assert 0.05 <= cal["calibration"]["temperature"] <= 10.0
        plain = next(r for r in records if r["condition"] == "mlp_fast")
        assert plain["calibration"] is None

    def test_metric_payload_shape(self, grid):
        _, records, _, _ = grid
        rec = records[0]
        m = rec["metrics"]
        assert set(m) >= {"f1", "precision", "recall", "auc_roc",
                          "average_precision", "tp", "fp", "fn", "tn"}
        assert rec["f1_ci"][0] <= rec["f1_ci"][1]
        assert set(rec["cost"]) == {"1", "5", "10", "100"}
        assert "early_mean" in rec["per_step"]
        assert all(k.isdigit() for k in rec["per_step"]["per_step"])

    def test_hybrid_cells_share_encoder_checkpoints(self, grid):
        # hyb and hyb_emb differ only in feature assembly, so per seed they
        # must reuse one cached encoder: 2 seeds -> 2 checkpoint files.
        _, _, _, outdir = grid
        assert len(list((outdir / "encoders").glob("*.npz"))) == 2

    def test_hybrid_embedding_dim_recorded(self, grid):
        _, records, _, _ = grid
        hyb = next(r for r in records if r["condition"] == "hyb")
        assert hyb["embedding_dim"] == 256

    def test_drift_series_written(self, grid):
        _, _, _, outdir = grid
        lines = (outdir / "drift_series.csv").read_text().splitlines()
        assert lines[0] == "step,n_rows,mmd,l2_mean_drift,illicit_rate_labeled"
        assert len(lines) == 7  # test steps 35..40 in the synthetic universe

    def test_rerun_reuses_existing_records(self, grid, small_bundle):
        spec, records, _, outdir = grid
        path = outdir / "records" / "rf_small__seed0.json"
        tampered = json.loads(path.read_text())
        tampered["metrics"]["f1"] = 123.456  # sentinel: a recompute would erase it
        path.write_text(json.dumps(tampered))
        again = run(spec, jobs=1, bundle=small_bundle)
        rf0 = next(r for r in again
                   if r["condition"] == "rf_small" and r["seed"] == 0)
        assert rf0["metrics"]["f1"] == 123.456
        path.write_text(json.dumps(
            next(r for r in records
                 if r["condition"] == "rf_small" and r["seed"] == 0),
            indent=2, sort_keys=True) + "\n")

    def test_fresh_recompute_is_bit_identical(self, grid, small_bundle,
                                              tmp_path_factory):
        spec, records, _, _ = grid
        outdir2 = tmp_path_factory.mktemp("grid2")
        spec2 = ExperimentSpec(
            name=spec.name, conditions=spec.conditions, seeds=spec.seeds,
            comparisons=spec.comparisons, output_dir=str(outdir2),
            bootstrap_B=spec.bootstrap_B)
        records2 = run(spec2, jobs=2, bundle=small_bundle)
        assert _strip_wall(records) == _strip_wall(records2)

    def test_jobs_must_be_positive(self, grid, small_bundle):
        spec, _, _, _ = grid
        with pytest.raises(ConfigError):
            run(spec, jobs=0, bundle=small_bundle)

    def test_failed_cell_is_isolated(self, small_bundle, tmp_path):
        # the bundle carries no full_population scaling, so that cell dies
        # while its neighbor completes
        spec = ExperimentSpec(
            name="crashy",
            conditions=[
                Condition(name="ok_rf", model="rf"),
                Condition(name="bad_scope", model="rf",
                          fit_scope="full_population"),
            ],
            seeds=(0,), output_dir=str(tmp_path / "out"), bootstrap_B=20)
        records = run(spec, jobs=1, bundle=small_bundle)
        by = {r["condition"]: r for r in records}
        assert by["ok_rf"]["status"] == "ok"
        assert by["bad_scope"]["status"] == "failed"
        assert "full_population" in by["bad_scope"]["error"]
        assert by["bad_scope"]["metrics"] is None
        on_disk = json.loads(
            (tmp_path / "out" / "records" / "bad_scope__seed0.json").read_text())
        assert on_disk["status"] == "failed"


class TestComparisons:
    def test_reports_computed(self, grid):
        _, _, reports, outdir = grid
        assert len(reports) == 2
        by = {e["comparison"]["name"]: e for e in reports}
        assert by["rf_vs_mlp"]["report"]["kind"] == "welch"
        assert by["hyb_pair"]["report"]["kind"] == "paired"
        assert by["rf_vs_mlp"]["error"] is None
        assert json.loads((outdir / "comparisons.json").read_text()) == reports

    def test_paired_requires_matching_seed_sets(self, grid):
        _, records, _, _ = grid
        partial = [r for r in records
                   if not (r["condition"] == "hyb_emb" and r["seed"] == 1)]
        with pytest.raises(ConfigError, match="mismatched seed sets"):
            compare(partial, Comparison("p", "hyb", "hyb_emb", kind="paired"))

    def test_failed_comparison_is_captured_not_raised(self, grid, small_bundle,
                                                      tmp_path):
        spec = ExperimentSpec(
            name="cmp", conditions=[
                Condition(name="ok_rf", model="rf"),
                Condition(name="bad_scope", model="rf",
                          fit_scope="full_population")],
            seeds=(0, 1), comparisons=[
                Comparison("w", "ok_rf", "bad_scope")],
            output_dir=str(tmp_path / "out"), bootstrap_B=20)
        records = run(spec, jobs=1, bundle=small_bundle)
        reports = run_comparisons(spec, records)
        assert reports[0]["report"] is None
        assert reports[0]["error"]  # empty seed vector from the failed cells


class TestEmitTables:
    def test_manifest_and_files(self, grid, tmp_path):
        _, records, reports, outdir = grid
        tables = tmp_path / "tables"
        manifest = emit_tables(load_records(outdir), reports, tables,
                               drift_csv=outdir / "drift_series.csv")
        expected = {f"{stem}.csv" for stem in (
            "table5_main", "table6_classical", "table7_per_step_sage",
            "table8_ablation", "table9_protocol_gap", "table10_hybrid",
            "table11_comparisons", "table12_calibration", "table13_cost",
            "fig2_per_step_f1", "fig4_temporal_drift", "fig5_ablation_per_step",
            "fig6_distribution_shift", "ap_by_period", "summary",
        )}
        assert set(manifest["files"]) == expected
        for name in expected:
            assert (tables / name).exists()
        assert (tables / "manifest.json").exists()
        assert all("paper_anchor" in v for v in manifest["files"].values())

    def test_absent_conditions_emit_na(self, grid, tmp_path):
        _, records, reports, outdir = grid
        tables = tmp_path / "tables_na"
        emit_tables(load_records(outdir), reports, tables,
                    drift_csv=outdir / "drift_series.csv")
        # the small grid runs none of the four encoder benchmark conditions
        text = (tables / "table5_main.csv").read_text()
        assert "NA" in text

    def test_summary_covers_every_condition(self, grid, tmp_path):
        spec, records, reports, outdir = grid
        tables = tmp_path / "tables_sum"
        emit_tables(load_records(outdir), reports, tables,
                    drift_csv=outdir / "drift_series.csv")
        text = (tables / "summary.csv").read_text()
        for c in spec.conditions:
            assert c.name in text

    def test_load_records_requires_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            load_records(tmp_path / "missing")


class TestSeedListParsing:
    def test_forms(self):
        assert _parse_seed_list("0,1,2") == (0, 1, 2)
        assert _parse_seed_list("0..3") == (0, 1, 2, 3)
        assert _parse_seed_list("5..5") == (5,)

    def test_errors(self):
        with pytest.raises(ConfigError):
            _parse_seed_list("3..1")
        with pytest.raises(ConfigError):
            _parse_seed_list("a,b")
        with pytest.raises(ConfigError):
            _parse_seed_list("1..x")


class TestCLI:
    def _csv_root(self, tmp_path):
        root = tmp_path / "data"
        root.mkdir()
        n = 80
        steps = np.repeat(np.arange(31, 41), 8)
        block = ["1", "2", "2", "unknown", "1", "2", "unknown", "2"]
        write_csv_tree(root, n=n, timesteps=steps, classes=block * 10)
        return root

    def test_run_compare_report_round_trip(self, tmp_path, capsys):
        root = self._csv_root(tmp_path)
        out = tmp_path / "out"
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "name": "cli_demo",
            "seeds": [0, 1],
            "bootstrap_B": 30,
            "conditions": [
                {"name": "rf_a", "model": "rf"},
                {"name": "lr_b", "model": "logreg"},
            ],
            "comparisons": [
                {"name": "rf_vs_lr", "condition_a": "rf_a",
                 "condition_b": "lr_b"},
            ],
        }))
        assert cli_main(["run", str(spec_path), "--output-dir", str(out),
                         "--data-root", str(root)]) == 0
        assert (out / "records" / "rf_a__seed0.json").exists()
        assert (out / "spec.json").exists()
        # real 165-column data crosses the local/aggregate boundary
        rec = json.loads((out / "records" / "rf_a__seed0.json").read_text())
        assert rec["importance"] is not None
        assert rec["importance"]["local_share"] + \
            rec["importance"]["aggregate_share"] == pytest.approx(1.0)

        assert cli_main(["compare", str(spec_path),
                         "--output-dir", str(out)]) == 0
        assert (out / "comparisons.json").exists()

        assert cli_main(["report", str(out)]) == 0
        assert (out / "tables" / "summary.csv").exists()
        captured = capsys.readouterr()
        assert "wrote" in captured.out

    def test_seed_list_override(self, tmp_path):
        root = self._csv_root(tmp_path)
        out = tmp_path / "out_seeds"
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "name": "cli_seeds", "seeds": [0, 1, 2], "bootstrap_B": 20,
            "conditions": [{"name": "lr", "model": "logreg"}]}))
        assert cli_main(["run", str(spec_path), "--output-dir", str(out),
                         "--data-root", str(root), "--seed-list", "7"]) == 0
        assert (out / "records" / "lr__seed7.json").exists()
        assert not (out / "records" / "lr__seed0.json").exists()

    def test_missing_spec_is_usage_error(self, tmp_path):
        assert cli_main(["run", str(tmp_path / "ghost.json")]) == 1

    def test_malformed_spec_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert cli_main(["run", str(bad)]) == 1

    def test_invalid_condition_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad_model.json"
        bad.write_text(json.dumps({
            "name": "x", "seeds": [0],
            "conditions": [{"name": "c", "model": "transformer"}]}))
        assert cli_main(["run", str(bad)]) == 1

    def test_ingest_summary(self, tmp_path, capsys):
        root = self._csv_root(tmp_path)
        assert cli_main(["ingest", "--data-root", str(root)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n_nodes"] == 80
        assert summary["n_features"] == 165

    def test_build_graphs(self, tmp_path):
        root = self._csv_root(tmp_path)
        out = tmp_path / "graphs"
        assert cli_main(["build-graphs", "--data-root", str(root),
                         "--variants", "original,empty", "--out",
                         str(out)]) == 0
        assert (out / "original.edges.csv").exists()
        assert (out / "original.edges.csv.meta.json").exists()
        assert (out / "empty.edges.csv").exists()

    def test_unknown_variant_is_usage_error(self, tmp_path):
        root = self._csv_root(tmp_path)
        assert cli_main(["build-graphs", "--data-root", str(root),
                         "--variants", "moebius"]) == 1

    def test_audit_round_trip(self, tmp_path, capsys):
        from inductive_bench.graphs import build_original
        from inductive_bench.ingest import make_splits, standardize
        from inductive_bench.models import (GraphEncoderClassifier,
                                            save_checkpoint)
        ds = make_dataset(n=60)
        scaled, scaler = standardize(ds, "train_only")
        clf = GraphEncoderClassifier(kind="mlp", epochs=2, patience=2, seed=0)
        clf.fit(scaled, build_original(scaled), make_splits(scaled), scaler)
        ckpt = tmp_path / "enc.npz"
        save_checkpoint(clf.model_, ckpt)
        assert cli_main(["audit", str(ckpt)]) == 0
        out = capsys.readouterr().out
        assert "passed: True" in out

    def test_audit_rejects_non_checkpoint(self, tmp_path, capsys):
        bogus = tmp_path / "record.json"
        bogus.write_text('{"status": "ok"}')
        assert cli_main(["audit", str(bogus)]) == 1
        assert "not a model checkpoint" in capsys.readouterr().err
