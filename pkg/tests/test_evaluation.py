"""Tests for the linear probes and the variant comparison report."""

import hashlib
import os

import numpy as np
import pytest

from polyspeech.data import Corpus, LanguageSpec, SyntheticCorpusSpec, generate_corpus
from polyspeech.encoder import EncoderConfig
from polyspeech.errors import ConfigError, ContractError
from polyspeech.evaluation import (
    COMPARISON_COLUMNS,
    ProbeConfig,
    compare_variants,
    fit_softmax_probe,
    frame_probe,
    language_probe,
    probe_accuracy,
    raw_frame_probe,
    raw_frame_representations,
    raw_language_probe,
    tap_representations,
)
from polyspeech.model import Model, ModelConfig
from polyspeech.trainer import TrainConfig, run_pretraining


def tiny_encoder() -> EncoderConfig:
    return EncoderConfig(
        input_dim=8,
        conv_channels=(4, 4),
        model_dim=16,
        num_blocks=2,
        num_heads=2,
        ffn_dim=32,
        conv_kernel_size=3,
        projection_dim=8,
        quantizer_groups=2,
        quantizer_entries=6,
        dropout=0.0,
        layerdrop=0.0,
        max_positions=64,
    )


def tiny_model_cfg(variant: str = "xlsr") -> ModelConfig:
    return ModelConfig(
        encoder=tiny_encoder(),
        variant=variant,
        num_languages=3,
        tap_layer=1,
        disc_hidden=8,
        le_layer=0,
        adapter_bottleneck=4,
        k_scale=2,
        k_bias=2,
    )


@pytest.fixture(scope="module")
def corpus(tmp_path_factory) -> Corpus:
    # Equal hours keep the language chance floor at 1/3.
    langs = tuple(
        LanguageSpec(name=f"lang{i:02d}", hours=0.3, seed=300 + i, num_states=4)
        for i in range(3)
    )
    spec = SyntheticCorpusSpec(
        languages=langs,
        feature_dim=8,
        frames_range=(24, 32),
        utterances_per_hour=20.0,
        seed=21,
    )
    root = str(tmp_path_factory.mktemp("eval_corpus"))
    generate_corpus(spec, root)
    return Corpus(root)


def param_checksum(model: Model) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params()):
        h.update(model.params()[name].data.tobytes())
    return h.hexdigest()


# -- the bare probe ----------------------------------------------------------------


class TestSoftmaxProbe:
    def test_separates_linearly_separable_clusters(self):
        rng = np.random.default_rng(0)
        centers = np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]])
        y = rng.integers(0, 3, size=600)
        x = centers[y] + rng.standard_normal((600, 2))
        res = probe_accuracy(x, y, 3, ProbeConfig(seed=1))
        assert res.accuracy > 0.95
        assert res.num_train + res.num_test == 600

    def test_shuffled_labels_fall_to_chance(self):
        rng = np.random.default_rng(0)
        centers = np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]])
        y = rng.integers(0, 3, size=600)
        x = centers[y] + rng.standard_normal((600, 2))
        res = probe_accuracy(x, y, 3, ProbeConfig(seed=1, shuffle_labels=True))
        assert res.accuracy < res.majority_share + 0.1

    def test_deterministic_given_the_seed(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((100, 4))
        y = rng.integers(0, 2, size=100)
        a = probe_accuracy(x, y, 2, ProbeConfig(seed=5))
        b = probe_accuracy(x, y, 2, ProbeConfig(seed=5))
        assert a == b

    def test_fit_returns_usable_weights(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [0.1, 1.0]])
        y = np.array([0, 1, 0, 1])
        w, b = fit_softmax_probe(x, y, 2, ProbeConfig(steps=500))
        assert ((x @ w + b).argmax(axis=1) == y).all()

    def test_rejects_bad_shapes_and_labels(self):
        with pytest.raises(ContractError):
            probe_accuracy(np.zeros((4, 2, 1)), np.zeros(4, dtype=int), 2, ProbeConfig())
        with pytest.raises(ContractError):
            probe_accuracy(np.zeros((4, 2)), np.array([0, 1, 2, 3]), 2, ProbeConfig())
        with pytest.raises(ContractError):
            probe_accuracy(np.zeros((1, 2)), np.zeros(1, dtype=int), 2, ProbeConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ProbeConfig(train_fraction=1.0)
        with pytest.raises(ConfigError):
            ProbeConfig(steps=0)
        with pytest.raises(ConfigError):
            ProbeConfig(learning_rate=0.0)


# -- representation extraction -------------------------------------------------------


class TestRepresentations:
    def test_tap_vectors_align_with_reduced_labels(self, corpus):
        model = Model(tiny_model_cfg(), seed=0)
        x, langs, states = tap_representations(model, corpus, tap_layer=1)
        assert x.shape[1] == model.cfg.encoder.model_dim
        assert x.shape[0] == langs.shape[0] == states.shape[0]
        assert set(np.unique(langs)) == {0, 1, 2}

    def test_subsampling_is_seeded_and_smaller(self, corpus):
        model = Model(tiny_model_cfg(), seed=0)
        cfg = ProbeConfig(max_utterances=4, seed=9)
        a = tap_representations(model, corpus, 1, cfg)
        b = tap_representations(model, corpus, 1, cfg)
        np.testing.assert_array_equal(a[0], b[0])
        full = tap_representations(model, corpus, 1)
        assert a[0].shape[0] < full[0].shape[0]

    def test_raw_frames_cover_the_whole_corpus(self, corpus):
        x, langs, states = raw_frame_representations(corpus)
        total = sum(rec["frames"] for rec in corpus.records)
        assert x.shape == (total, corpus.feature_dim)
        assert states.shape == (total,)

    def test_feature_dim_mismatch_is_rejected(self, corpus):
        cfg = tiny_model_cfg()
        enc = EncoderConfig(
            input_dim=12, conv_channels=(4, 4), model_dim=16, num_blocks=2,
            num_heads=2, ffn_dim=32, conv_kernel_size=3, projection_dim=8,
            quantizer_groups=2, quantizer_entries=6, dropout=0.0,
            layerdrop=0.0, max_positions=64,
        )
        model = Model(ModelConfig(encoder=enc, variant="xlsr", num_languages=3), seed=0)
        with pytest.raises(ConfigError):
            tap_representations(model, corpus, 1)


# -- probe front ends ---------------------------------------------------------------


class TestProbes:
    def test_raw_frame_probe_reads_the_synthetic_states(self, corpus):
        res = raw_frame_probe(corpus)
        assert res.macro > 0.8
        assert set(res.per_language) == {"lang00", "lang01", "lang02"}
        assert res.macro == pytest.approx(
            np.mean(list(res.per_language.values())), abs=1e-12
        )

    def test_raw_language_probe_beats_chance(self, corpus):
        res = raw_language_probe(corpus)
        assert res.accuracy > res.majority_share + 0.1

    def test_shuffled_language_probe_sits_at_chance(self, corpus):
        res = raw_language_probe(corpus, ProbeConfig(shuffle_labels=True))
        assert abs(res.accuracy - res.majority_share) < 0.1

    def test_language_probe_runs_on_model_taps(self, corpus):
        model = Model(tiny_model_cfg(), seed=0)
        res = language_probe(model, corpus)
        assert res.tap_layer == model.cfg.tap_layer
        assert 0.0 <= res.accuracy <= 1.0

    def test_frame_probe_macro_is_the_mean(self, corpus):
        model = Model(tiny_model_cfg(), seed=0)
        res = frame_probe(model, corpus, ProbeConfig(steps=50))
        assert res.macro == pytest.approx(
            np.mean(list(res.per_language.values())), abs=1e-12
        )

    def test_probing_never_mutates_the_encoder(self, corpus):
        model = Model(tiny_model_cfg("le"), seed=0)
        before = param_checksum(model)
        language_probe(model, corpus, ProbeConfig(steps=20))
        frame_probe(model, corpus, ProbeConfig(steps=20))
        assert param_checksum(model) == before

    def test_explicit_tap_layer_overrides_the_config(self, corpus):
        model = Model(tiny_model_cfg(), seed=0)
        r0 = language_probe(model, corpus, ProbeConfig(steps=30), tap_layer=0)
        r2 = language_probe(model, corpus, ProbeConfig(steps=30), tap_layer=2)
        assert r0.tap_layer == 0 and r2.tap_layer == 2


# -- comparison report ---------------------------------------------------------------


@pytest.fixture(scope="module")
def two_runs(corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = TrainConfig(
        total_steps=3, warmup_steps=1, peak_lr=1e-3, batch_size=2, seed=3,
        num_distractors=4, mask_start_probability=0.3, mask_span=3,
        checkpoint_every=3,
    )
    dirs = []
    for variant in ("xlsr", "la"):
        d = str(root / variant)
        run_pretraining(tiny_model_cfg(variant), cfg, corpus, d)
        dirs.append(d)
    return dirs


class TestCompareVariants:
    def test_report_has_the_expected_table(self, corpus, two_runs, tmp_path):
        probe_cfg = ProbeConfig(steps=30)
        result = compare_variants(two_runs, corpus, str(tmp_path / "report"), probe_cfg)
        lines = open(result.csv_path).read().strip().split("\n")
        assert lines[0] == ",".join(COMPARISON_COLUMNS)
        assert len(lines) == 3
        assert lines[1].startswith("xlsr,0.000000,")
        assert lines[2].startswith("la,")
        la_pct = float(lines[2].split(",")[1])
        assert la_pct > 0.0

    def test_summary_links_variants_to_the_baseline(self, corpus, two_runs, tmp_path):
        import json

        result = compare_variants(two_runs, corpus, str(tmp_path / "report"),
                                  ProbeConfig(steps=30))
        summary = json.load(open(result.summary_path))
        assert {r["variant"] for r in summary["rows"]} == {"xlsr", "la"}
        assert "la" in summary["vs_baseline"]
        assert "lang_probe_delta" in summary["vs_baseline"]["la"]

    def test_regeneration_is_byte_identical(self, corpus, two_runs, tmp_path):
        probe_cfg = ProbeConfig(steps=30)
        a = compare_variants(two_runs, corpus, str(tmp_path / "a"), probe_cfg)
        b = compare_variants(two_runs, corpus, str(tmp_path / "b"), probe_cfg)
        assert open(a.csv_path, "rb").read() == open(b.csv_path, "rb").read()
        assert open(a.summary_path, "rb").read() == open(b.summary_path, "rb").read()

    def test_fewer_than_two_runs_is_rejected(self, corpus, two_runs, tmp_path):
        with pytest.raises(ConfigError):
            compare_variants(two_runs[:1], corpus, str(tmp_path / "r"))

    def test_unfinished_run_directory_is_rejected(self, corpus, two_runs, tmp_path):
        empty = tmp_path / "empty_run"
        empty.mkdir()
        with pytest.raises(ConfigError, match="missing"):
            compare_variants([two_runs[0], str(empty)], corpus, str(tmp_path / "r"))
