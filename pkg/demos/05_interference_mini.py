"""Adversarial language invariance, miniature edition.

Trains the plain backbone and the adversarial variant side by side on
the same corpus, then probes a mid-stack tap for language identity.
The adversarial branch should make the probe's job harder without
hurting the contrastive objective.

This is a scaled-down illustration (a few hundred steps); the full
experiment lives in tests/test_acceptance.py and runs 3000 steps per
variant from configs/interference.json.
"""

import dataclasses
import os
import tempfile

from polyspeech.checkpoint import restore_model
from polyspeech.data import Corpus, generate_corpus
from polyspeech.evaluation import language_probe, raw_language_probe
from polyspeech.runconfig import load_run_config
from polyspeech.trainer import read_metrics, run_pretraining

HERE = os.path.dirname(os.path.abspath(__file__))
rc = load_run_config(os.path.join(HERE, "..", "configs", "interference.json"))
train_cfg = dataclasses.replace(rc.trainer, total_steps=600,
                                checkpoint_every=600)

with tempfile.TemporaryDirectory() as root:
    corpus_dir = os.path.join(root, "corpus")
    generate_corpus(rc.corpus, corpus_dir)
    corpus = Corpus(corpus_dir)
    raw = raw_language_probe(corpus, rc.probe)
    print(f"corpus: {len(corpus)} utterances, "
          f"raw frame-level language probe {raw.accuracy:.3f}")

    results = {}
    for variant in ("xlsr", "la"):
        model_cfg = dataclasses.replace(rc.model, variant=variant)
        out = os.path.join(root, variant)
        print(f"\ntraining {variant} for {train_cfg.total_steps} steps ...")
        res = run_pretraining(model_cfg, train_cfg, corpus, out)
        model, _ = restore_model(res.checkpoint_path)
        probe = language_probe(model, corpus, rc.probe, tap_layer=4)
        final = read_metrics(res.metrics_path)[-1]
        results[variant] = (probe.accuracy, final["loss_contrastive"])
        print(f"  tap-4 language probe {probe.accuracy:.4f}, "
              f"contrastive {final['loss_contrastive']:.4f}")

    (acc_x, con_x), (acc_a, con_a) = results["xlsr"], results["la"]
    print(f"\nprobe drop from adversarial training: {acc_x - acc_a:+.4f}")
    print(f"contrastive ratio la/xlsr: {con_a / con_x:.4f}")
    print("(short runs are noisy; the 3000-step setting is the one that "
          "carries the claim)")
