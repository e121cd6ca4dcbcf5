import csv
import hashlib
import json

import pytest

from delayfeed.cli import (
    aggregate_reports,
    config_from_dict,
    default_config,
    load_config,
    main,
)

SMALL = {
    "schema_version": "v1",
    "stream": {
        "total_clicks": 800,
        "campaign_count": 5,
        "duration_days": 50,
        "attribution_window_days": 20,
    },
    "bucketing": {"boundaries_days": [1, 5]},
    "regressor": {"embedding_dim": 2, "hidden_layer_sizes": [4],
                  "hash_buckets_per_field": 64},
    "seeds": [1],
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def file_digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestConfig:
    def test_defaults(self):
        cfg = default_config()
        assert cfg.stream.total_clicks == 200_000
        assert cfg.stream.campaign_count == 50
        assert len(cfg.bucketing.boundaries) == 4
        assert cfg.digest

    def test_digest_stable_and_sensitive(self):
        a = config_from_dict(dict(SMALL))
        b = config_from_dict(dict(SMALL))
        assert a.digest == b.digest
        changed = dict(SMALL, stream=dict(SMALL["stream"], total_clicks=801))
        assert config_from_dict(changed).digest != a.digest

    def test_rejects_bucketing_boundary_at_window(self, tmp_path):
        bad = dict(SMALL, bucketing={"boundaries_days": [1, 20]})
        with pytest.raises(ValueError):
            config_from_dict(bad)

    def test_load_config(self, config_path):
        cfg = load_config(config_path)
        assert cfg.stream.total_clicks == 800


class TestGen:
    def test_gen_deterministic(self, config_path, tmp_path, capsys):
        out1, out2 = tmp_path / "g1", tmp_path / "g2"
        assert main(["gen", "--config", config_path, "--out", str(out1)]) == 0
        assert main(["gen", "--config", config_path, "--out", str(out2)]) == 0
        assert file_digest(out1 / "stream.ndjson") == file_digest(out2 / "stream.ndjson")
        assert file_digest(out1 / "ground_truth.ndjson") == file_digest(
            out2 / "ground_truth.ndjson"
        )

    def test_gen_summary_campaign_count(self, config_path, tmp_path, capsys):
        main(["gen", "--config", config_path, "--out", str(tmp_path / "g")])
        out = capsys.readouterr().out
        assert "campaigns: 5" in out
        assert "clicks: 800" in out

    def test_gen_invalid_config_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(dict(SMALL, bucketing={"boundaries_days": [1, 25]})))
        rc = main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert rc != 0


class TestRun:
    def test_run_single_variant_m3(self, config_path, tmp_path):
        out = tmp_path / "r"
        rc = main([
            "run", "--config", config_path, "--variant", "M3",
            "--seed", "1", "--out", str(out),
        ])
        assert rc == 0
        report = json.loads((out / "report_seed1.json").read_text())
        assert report["variants"]["M3"]["slices"]["ALL"]["pll_vs_M3_pct"] == 0.0
        assert report["config_digest"]
        assert report["artifact_version"]
        assert (out / "report_seed1.csv").exists()

    def test_run_all_has_eight_variants(self, config_path, tmp_path):
        out = tmp_path / "r"
        rc = main([
            "run", "--config", config_path, "--variant", "all",
            "--seed", "1", "--out", str(out),
        ])
        assert rc == 0
        report = json.loads((out / "report_seed1.json").read_text())
        assert len(report["variants"]) == 8
        assert set(report["variants"]) == {
            "M1", "M2_7d", "M2_15d", "M3", "M4", "M5", "Proposed", "Oracle"
        }

    def test_rerun_byte_identical(self, config_path, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main([
                "run", "--config", config_path, "--variant", "M1",
                "--seed", "1", "--out", str(out),
            ])
            outs.append(file_digest(out / "report_seed1.json"))
        assert outs[0] == outs[1]

    def test_unknown_variant_lists_valid_names(self, config_path, tmp_path, capsys):
        rc = main([
            "run", "--config", config_path, "--variant", "M99",
            "--out", str(tmp_path / "r"),
        ])
        assert rc == 2
        err = capsys.readouterr().err
        assert "M99" in err and "Proposed" in err

    def test_multi_seed_aggregate(self, config_path, tmp_path):
        out = tmp_path / "r"
        rc = main([
            "run", "--config", config_path, "--variant", "M1",
            "--seed", "1,2", "--out", str(out),
        ])
        assert rc == 0
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["seeds"] == [1, 2]
        entry = agg["variants"]["M1"]["slices"]["ALL"]["pll"]
        assert "mean" in entry and "stdev" in entry

    def test_aggregate_refuses_mismatched_digests(self):
        a = {"config_digest": "x", "seed": 1, "variants": {}}
        b = {"config_digest": "y", "seed": 2, "variants": {}}
        with pytest.raises(ValueError):
            aggregate_reports([a, b])


class TestPlotdata:
    def test_plotdata_columns(self, config_path, tmp_path):
        out = tmp_path / "r"
        main([
            "run", "--config", config_path, "--variant", "all",
            "--seed", "1", "--out", str(out),
        ])
        assert main(["plotdata", "--reports", str(out)]) == 0
        with open(out / "report_seed1_timeseries.csv") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        # day column plus 2 metric columns per variant
        assert header[0] == "day"
        assert len(header) - 1 == 8 * 2
        assert len(rows) > 1
        with open(out / "pll_improvement.csv") as fh:
            bars = list(csv.reader(fh))
        assert bars[0] == ["variant", "slice", "seed", "pll", "pll_vs_M3_pct"]
        assert any(r[0] == "Proposed" for r in bars[1:])

    def test_oracle_bias_series_near_one_on_stationary_stream(self, tmp_path):
        config = dict(
            SMALL,
            stream={"total_clicks": 12000, "campaign_count": 5,
                    "duration_days": 60, "attribution_window_days": 20,
                    "drift_magnitude": 0.0, "cold_start_fraction": 0.0},
        )
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "r"
        main(["run", "--config", str(cfg_path), "--variant", "Oracle",
              "--seed", "1", "--out", str(out)])
        main(["plotdata", "--reports", str(out)])
        with open(out / "report_seed1_timeseries.csv") as fh:
            rows = list(csv.DictReader(fh))
        tail = [float(r["Oracle_bias"]) for r in rows[len(rows) // 2:]]
        assert all(0.85 < b < 1.15 for b in tail)

    def test_plotdata_missing_reports_exit(self, tmp_path, capsys):
        rc = main(["plotdata", "--reports", str(tmp_path)])
        assert rc == 2
        assert "report_seed" in capsys.readouterr().err

    def test_plotdata_empty_timeseries_header_only(self, tmp_path):
        report = {
            "config_digest": "x",
            "seed": 1,
            "variants": {"M3": {"slices": {}, "timeseries": []}},
        }
        (tmp_path / "report_seed1.json").write_text(json.dumps(report))
        assert main(["plotdata", "--reports", str(tmp_path)]) == 0
        with open(tmp_path / "report_seed1_timeseries.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows == [["day", "M3_pll", "M3_bias"]]
