"""Tests for the run-config loader and the command-line surface."""

import hashlib
import json
import os

import numpy as np
import pytest

from polyspeech.cli import main
from polyspeech.checkpoint import load_checkpoint
from polyspeech.errors import ConfigError
from polyspeech.runconfig import (
    code_version,
    default_run_config,
    echo_run_config,
    load_run_config,
)


@pytest.fixture(autouse=True)
def runs_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("POLYSPEECH_RUNS", str(root))
    return root


def small_config(tmp_path, **trainer_overrides) -> str:
    """A config small enough for test-speed training."""
    cfg = {
        "corpus": {
            "num_languages": 3,
            "feature_dim": 8,
            "frames_range": [24, 32],
            "utterances_per_hour": 10.0,
            "seed": 2,
        },
        "encoder": {
            "input_dim": 8,
            "conv_channels": [4, 4],
            "model_dim": 16,
            "num_blocks": 2,
            "num_heads": 2,
            "ffn_dim": 32,
            "conv_kernel_size": 3,
            "projection_dim": 8,
            "quantizer_groups": 2,
            "quantizer_entries": 6,
            "dropout": 0.0,
            "layerdrop": 0.0,
            "max_positions": 64,
        },
        "model": {"tap_layer": 1, "disc_hidden": 8, "adapter_bottleneck": 4,
                  "k_scale": 2, "k_bias": 2},
        "trainer": dict(
            {
                "total_steps": 4, "warmup_steps": 1, "batch_size": 2,
                "num_distractors": 4, "mask_start_probability": 0.3,
                "mask_span": 3, "checkpoint_every": 4, "seed": 5,
            },
            **trainer_overrides,
        ),
        "probe": {"steps": 30},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


# -- run config loader ---------------------------------------------------------------


class TestRunConfig:
    def test_defaults_build_a_coherent_run(self):
        rc = load_run_config()
        assert rc.model.num_languages == len(rc.corpus.languages) == 4
        assert rc.model.encoder.input_dim == rc.corpus.feature_dim
        assert rc.trainer.total_steps == 3000

    def test_file_values_override_defaults(self, tmp_path):
        rc = load_run_config(small_config(tmp_path))
        assert rc.trainer.total_steps == 4
        assert rc.model.encoder.model_dim == 16
        assert len(rc.corpus.languages) == 3

    def test_flag_overrides_beat_the_file(self, tmp_path):
        rc = load_run_config(small_config(tmp_path),
                             {"model.variant": "la", "trainer.seed": 99})
        assert rc.model.variant == "la"
        assert rc.trainer.seed == 99

    def test_none_overrides_are_ignored(self, tmp_path):
        rc = load_run_config(small_config(tmp_path), {"trainer.seed": None})
        assert rc.trainer.seed == 5

    def test_unknown_section_is_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"optimizer": {}}')
        with pytest.raises(ConfigError, match="optimizer"):
            load_run_config(str(path))

    def test_unknown_key_is_rejected_with_its_name(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"trainer": {"total_steps": 10, "learning_rate": 0.1}}')
        with pytest.raises(ConfigError, match="learning_rate"):
            load_run_config(str(path))

    def test_malformed_json_reports_a_diagnostic(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"trainer": ')
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_run_config(str(path))

    def test_feature_dim_must_match_encoder_input(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"corpus": {"feature_dim": 12}}')
        with pytest.raises(ConfigError, match="input_dim"):
            load_run_config(str(path))

    def test_explicit_languages_override_the_count(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "corpus": {
                "feature_dim": 16,
                "languages": [
                    {"name": "aa", "hours": 1.0, "seed": 1},
                    {"name": "bb", "hours": 2.0, "seed": 2},
                ],
            }
        }))
        rc = load_run_config(str(path))
        assert [l.name for l in rc.corpus.languages] == ["aa", "bb"]
        assert rc.model.num_languages == 2

    def test_contradictory_language_count_is_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "corpus": {
                "num_languages": 3,
                "languages": [{"name": "aa", "hours": 1.0, "seed": 1}],
            }
        }))
        with pytest.raises(ConfigError, match="contradicts"):
            load_run_config(str(path))

    def test_language_entries_are_key_checked(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "corpus": {"languages": [{"name": "aa", "hours": 1.0, "seed": 1,
                                      "dialect": "x"}]}
        }))
        with pytest.raises(ConfigError, match="dialect"):
            load_run_config(str(path))

    def test_sampling_threshold_accepts_inf_and_null(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"trainer": {"sampling_threshold": "inf"}}')
        rc = load_run_config(str(path))
        assert rc.trainer.sampling_threshold == float("inf")
        assert rc.resolved["trainer"]["sampling_threshold"] == "inf"
        path.write_text('{"trainer": {"sampling_threshold": null}}')
        assert load_run_config(str(path)).trainer.sampling_threshold is None

    def test_echo_is_fully_resolved_and_seeded(self, tmp_path):
        rc = load_run_config(small_config(tmp_path))
        out = tmp_path / "run"
        path = echo_run_config(rc, str(out), "pretrain")
        payload = json.load(open(path))
        assert payload["code_version"] == code_version()
        assert payload["command"] == "pretrain"
        langs = payload["config"]["corpus"]["languages"]
        assert len(langs) == 3 and all("seed" in l for l in langs)
        assert payload["config"]["trainer"]["seed"] == 5
        assert payload["config"]["probe"]["seed"] == 0

    def test_default_sections_cover_all_modules(self):
        assert set(default_run_config()) == {"corpus", "encoder", "model",
                                             "trainer", "probe"}


# -- CLI ------------------------------------------------------------------------------


class TestGenerate:
    def test_writes_a_corpus_and_echoes_the_config(self, tmp_path, runs_root, capsys):
        assert main(["generate", "--config", small_config(tmp_path)]) == 0
        out = runs_root / "corpus"
        assert (out / "manifest.jsonl").exists()
        assert (out / "run_config.json").exists()
        assert "corpus written" in capsys.readouterr().out

    def test_rerun_with_same_seed_is_byte_identical(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        digests = []
        for d in ("a", "b"):
            out = tmp_path / d
            assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
            h = hashlib.sha256()
            for sub in sorted(os.listdir(out / "feats")):
                h.update(open(out / "feats" / sub, "rb").read())
            h.update(open(out / "manifest.jsonl", "rb").read())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]

    def test_malformed_config_exits_2_with_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["generate", "--config", str(bad)]) == 2
        assert "not valid JSON" in capsys.readouterr().err


class TestPretrainCli:
    def test_trains_and_checkpoints(self, tmp_path, runs_root, capsys):
        cfg = small_config(tmp_path)
        assert main(["generate", "--config", cfg]) == 0
        corpus_dir = str(runs_root / "corpus")
        assert main(["pretrain", "--config", cfg, "--variant", "xlsr",
                     "--corpus", corpus_dir]) == 0
        run_dir = runs_root / "pretrain-xlsr"
        assert (run_dir / "checkpoint.bin").exists()
        assert (run_dir / "metrics.jsonl").exists()
        assert "finished 4 steps" in capsys.readouterr().out

    def test_baseline_checkpoint_has_no_conditioning_params(self, tmp_path, runs_root):
        cfg = small_config(tmp_path)
        main(["generate", "--config", cfg])
        main(["pretrain", "--config", cfg, "--variant", "xlsr",
              "--corpus", str(runs_root / "corpus")])
        params = load_checkpoint(str(runs_root / "pretrain-xlsr/checkpoint.bin"))["params"]
        assert not [n for n in params if n.startswith("langcond.")]

    def test_flags_are_recorded_in_the_echo(self, tmp_path, runs_root):
        cfg = small_config(tmp_path)
        main(["generate", "--config", cfg])
        assert main(["pretrain", "--config", cfg, "--variant", "la",
                     "--corpus", str(runs_root / "corpus"),
                     "--tap-layer", "2", "--lambda", "0.01"]) == 0
        echo = json.load(open(runs_root / "pretrain-la/run_config.json"))
        assert echo["config"]["model"]["variant"] == "la"
        assert echo["config"]["model"]["tap_layer"] == 2
        assert echo["config"]["trainer"]["lambda_adv"] == 0.01

    def test_factor_rank_flags_are_recorded(self, tmp_path, runs_root):
        cfg = small_config(tmp_path)
        main(["generate", "--config", cfg])
        assert main(["pretrain", "--config", cfg, "--variant", "lsaw",
                     "--corpus", str(runs_root / "corpus"),
                     "--k-scale", "2", "--k-bias", "2"]) == 0
        echo = json.load(open(runs_root / "pretrain-lsaw/run_config.json"))
        assert echo["config"]["model"]["k_scale"] == 2
        assert echo["config"]["model"]["k_bias"] == 2

    def test_unknown_variant_is_a_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["pretrain", "--variant", "bert", "--corpus", "x"])
        assert exc.value.code == 2

    def test_missing_corpus_fails_nonzero(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        rcode = main(["pretrain", "--config", cfg, "--variant", "xlsr",
                      "--corpus", str(tmp_path / "nowhere")])
        assert rcode != 0


class TestProbeReportCli:
    @pytest.fixture()
    def finished_runs(self, tmp_path, runs_root):
        cfg = small_config(tmp_path)
        main(["generate", "--config", cfg])
        corpus_dir = str(runs_root / "corpus")
        for variant in ("xlsr", "le"):
            main(["pretrain", "--config", cfg, "--variant", variant,
                  "--corpus", corpus_dir])
        return cfg, corpus_dir

    def test_probe_writes_metrics(self, finished_runs, runs_root, capsys):
        cfg, corpus_dir = finished_runs
        assert main(["probe", "--config", cfg,
                     "--checkpoint", str(runs_root / "pretrain-xlsr/checkpoint.bin"),
                     "--corpus", corpus_dir]) == 0
        payload = json.load(open(runs_root / "probe/probe.json"))
        assert payload["variant"] == "xlsr"
        assert 0.0 <= payload["language_probe"]["accuracy"] <= 1.0
        out = capsys.readouterr().out
        assert "language probe accuracy" in out

    def test_probe_missing_checkpoint_fails_nonzero(self, finished_runs, capsys):
        cfg, corpus_dir = finished_runs
        assert main(["probe", "--config", cfg, "--checkpoint", "/nope.bin",
                     "--corpus", corpus_dir]) == 1

    def test_report_prints_and_writes_the_table(self, finished_runs, runs_root, capsys):
        cfg, corpus_dir = finished_runs
        assert main(["report", "--config", cfg, "--corpus", corpus_dir,
                     "--runs", str(runs_root / "pretrain-xlsr"),
                     str(runs_root / "pretrain-le")]) == 0
        out = capsys.readouterr().out
        assert "variant,params_increase_pct" in out
        csv_lines = open(runs_root / "report/comparison.csv").read().strip().split("\n")
        assert len(csv_lines) == 3

    def test_report_needs_two_runs(self, finished_runs, runs_root, capsys):
        cfg, corpus_dir = finished_runs
        assert main(["report", "--config", cfg, "--corpus", corpus_dir,
                     "--runs", str(runs_root / "pretrain-xlsr")]) == 2


class TestVerifyCli:
    def test_clean_build_passes_with_exit_0(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "6/6 checks passed" in out
        assert "max rel err per loss" in out

    def test_injected_fault_exits_1_naming_the_check(self, capsys):
        from polyspeech.verify import injected_fault

        with injected_fault("adam_eps_inside_root"):
            assert main(["verify"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] adam_oracle" in out


class TestParamsCli:
    def test_desk_scale_table(self, capsys):
        assert main(["params"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out[0].startswith("variant")
        assert len(out) == 6
        assert out[1].startswith("xlsr")

    def test_full_scale_ordering(self, capsys):
        assert main(["params", "--full-scale"]) == 0
        rows = {line.split()[0]: line.split() for line in
                capsys.readouterr().out.strip().split("\n")[1:]}
        added = {v: int(rows[v][2]) for v in ("le", "la", "lsaw", "lsa")}
        assert added["le"] < added["la"] < added["lsaw"] < added["lsa"]
