"""Frozen-encoder linear probes and cross-variant comparison reports.

The probe is a softmax regression trained with full-batch gradient
descent in float64. Every split and control is seeded, so a probe run
is a pure function of (weights, corpus, config) and two invocations
produce identical files. Probing never touches encoder weights.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import restore_model
from .data import Corpus, reduce_states
from .errors import ConfigError, ContractError
from .langcond import overhead_report
from .model import Model, baseline_config, model_param_shapes
from .trainer import read_metrics

__all__ = [
    "ProbeConfig",
    "ProbeResult",
    "LanguageProbeResult",
    "FrameProbeResult",
    "fit_softmax_probe",
    "probe_accuracy",
    "tap_representations",
    "raw_frame_representations",
    "language_probe",
    "frame_probe",
    "raw_language_probe",
    "raw_frame_probe",
    "ComparisonResult",
    "compare_variants",
    "COMPARISON_COLUMNS",
]


@dataclass(frozen=True)
class ProbeConfig:
    """Settings for one linear probe fit."""

    steps: int = 300
    learning_rate: float = 0.5
    weight_decay: float = 1e-4
    train_fraction: float = 0.8
    seed: int = 0
    max_utterances: int | None = None
    shuffle_labels: bool = False  # control run: destroys the label signal

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must lie strictly between 0 and 1, got "
                f"{self.train_fraction}"
            )
        if self.max_utterances is not None and self.max_utterances < 1:
            raise ConfigError(f"max_utterances must be positive, got {self.max_utterances}")


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float  # held-out
    train_accuracy: float
    majority_share: float  # best constant predictor, the chance floor
    num_train: int
    num_test: int
    num_classes: int


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_softmax_probe(
    x: np.ndarray, y: np.ndarray, num_classes: int, cfg: ProbeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent on multinomial logistic regression.

    Returns (weights [D, C], bias [C]). x must already be standardized.
    """
    n, d = x.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    for _ in range(cfg.steps):
        p = _softmax_rows(x @ w + b)
        err = (p - onehot) / n
        w -= cfg.learning_rate * (x.T @ err + cfg.weight_decay * w)
        b -= cfg.learning_rate * err.sum(axis=0)
    return w, b


def probe_accuracy(
    x: np.ndarray, y: np.ndarray, num_classes: int, cfg: ProbeConfig
) -> ProbeResult:
    """Split, standardize on the train side, fit, score held-out frames."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ContractError(f"need x [N, D] and y [N], got {x.shape} and {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise ContractError(f"need at least 2 frames to split, got {n}")
    if y.min() < 0 or y.max() >= num_classes:
        raise ContractError("labels outside [0, num_classes)")

    if cfg.shuffle_labels:
        y = np.random.default_rng([cfg.seed, 97]).permutation(y)

    perm = np.random.default_rng([cfg.seed, 41]).permutation(n)
    n_train = min(max(int(round(cfg.train_fraction * n)), 1), n - 1)
    train, test = perm[:n_train], perm[n_train:]

    mu = x[train].mean(axis=0)
    sigma = np.maximum(x[train].std(axis=0), 1e-8)
    xs = (x - mu) / sigma

    w, b = fit_softmax_probe(xs[train], y[train], num_classes, cfg)
    pred_train = (xs[train] @ w + b).argmax(axis=1)
    pred_test = (xs[test] @ w + b).argmax(axis=1)
    counts = np.bincount(y, minlength=num_classes)
    return ProbeResult(
        accuracy=float((pred_test == y[test]).mean()),
        train_accuracy=float((pred_train == y[train]).mean()),
        majority_share=float(counts.max() / n),
        num_train=int(n_train),
        num_test=int(n - n_train),
        num_classes=int(num_classes),
    )


# -- representation extraction ---------------------------------------------------


def _select_utterances(corpus: Corpus, cfg: ProbeConfig) -> list[int]:
    indices = list(range(len(corpus)))
    if cfg.max_utterances is not None and cfg.max_utterances < len(indices):
        rng = np.random.default_rng([cfg.seed, 59])
        picked = rng.choice(len(indices), size=cfg.max_utterances, replace=False)
        indices = sorted(int(i) for i in picked)
    return indices


def tap_representations(
    model: Model, corpus: Corpus, tap_layer: int, cfg: ProbeConfig = ProbeConfig()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frozen activations at a tap for every (sub)sampled utterance.

    Returns (vectors [N, D], language_ids [N], state_labels [N]) where N
    counts reduced frames. State labels follow the downsampled timeline.
    """
    if corpus.feature_dim != model.cfg.encoder.input_dim:
        raise ConfigError(
            f"corpus feature_dim {corpus.feature_dim} does not match model "
            f"input_dim {model.cfg.encoder.input_dim}"
        )
    xs, langs, states = [], [], []
    for i in _select_utterances(corpus, cfg):
        rec = corpus.records[i]
        feats = corpus.features(i)
        lang_id = np.array([rec["language_id"]])
        taps = model.tap_features(feats[None], lang_id, tap_layer)[0]
        labels = reduce_states(corpus.states(i)[None])[0]
        if taps.shape[0] != labels.shape[0]:
            raise ContractError(
                f"{rec['id']}: tap length {taps.shape[0]} != reduced label "
                f"length {labels.shape[0]}"
            )
        xs.append(taps)
        langs.append(np.full(taps.shape[0], rec["language_id"], dtype=np.int64))
        states.append(labels)
    return np.concatenate(xs), np.concatenate(langs), np.concatenate(states)


def raw_frame_representations(
    corpus: Corpus, cfg: ProbeConfig = ProbeConfig()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw feature frames with language and state labels, no encoder."""
    xs, langs, states = [], [], []
    for i in _select_utterances(corpus, cfg):
        rec = corpus.records[i]
        feats = corpus.features(i)
        xs.append(feats)
        langs.append(np.full(feats.shape[0], rec["language_id"], dtype=np.int64))
        states.append(corpus.states(i))
    return np.concatenate(xs), np.concatenate(langs), np.concatenate(states)


# -- probe front ends -------------------------------------------------------------


@dataclass(frozen=True)
class LanguageProbeResult:
    accuracy: float
    train_accuracy: float
    majority_share: float
    tap_layer: int | None  # None for raw-feature probes
    num_frames: int


@dataclass(frozen=True)
class FrameProbeResult:
    per_language: dict  # language name -> held-out state accuracy
    macro: float  # unweighted mean over languages
    tap_layer: int | None
    num_frames: int


def _language_result(x, langs, num_languages, cfg, tap_layer) -> LanguageProbeResult:
    res = probe_accuracy(x, langs, num_languages, cfg)
    return LanguageProbeResult(
        accuracy=res.accuracy,
        train_accuracy=res.train_accuracy,
        majority_share=res.majority_share,
        tap_layer=tap_layer,
        num_frames=x.shape[0],
    )


def _frame_result(x, langs, states, corpus, cfg, tap_layer) -> FrameProbeResult:
    per_language = {}
    for m, lang in enumerate(corpus.meta["languages"]):
        sel = langs == m
        if not sel.any():
            raise ContractError(f"no frames for language {lang['name']}")
        res = probe_accuracy(x[sel], states[sel], int(lang["num_states"]), cfg)
        per_language[lang["name"]] = res.accuracy
    macro = float(np.mean(list(per_language.values())))
    return FrameProbeResult(
        per_language=per_language,
        macro=macro,
        tap_layer=tap_layer,
        num_frames=x.shape[0],
    )


def language_probe(
    model: Model, corpus: Corpus, cfg: ProbeConfig = ProbeConfig(),
    tap_layer: int | None = None,
) -> LanguageProbeResult:
    """How well a linear readout recovers the language at a tap."""
    tap = model.cfg.tap_layer if tap_layer is None else tap_layer
    x, langs, _ = tap_representations(model, corpus, tap, cfg)
    return _language_result(x, langs, corpus.num_languages, cfg, tap)


def frame_probe(
    model: Model, corpus: Corpus, cfg: ProbeConfig = ProbeConfig(),
    tap_layer: int | None = None,
) -> FrameProbeResult:
    """Per-language hidden-state recovery at a tap, plus the macro mean."""
    tap = model.cfg.tap_layer if tap_layer is None else tap_layer
    x, langs, states = tap_representations(model, corpus, tap, cfg)
    return _frame_result(x, langs, states, corpus, cfg, tap)


def raw_language_probe(corpus: Corpus, cfg: ProbeConfig = ProbeConfig()) -> LanguageProbeResult:
    x, langs, _ = raw_frame_representations(corpus, cfg)
    return _language_result(x, langs, corpus.num_languages, cfg, None)


def raw_frame_probe(corpus: Corpus, cfg: ProbeConfig = ProbeConfig()) -> FrameProbeResult:
    x, langs, states = raw_frame_representations(corpus, cfg)
    return _frame_result(x, langs, states, corpus, cfg, None)


# -- cross-variant report ----------------------------------------------------------


COMPARISON_COLUMNS = (
    "variant",
    "params_increase_pct",
    "lang_probe_acc",
    "frame_probe_macro",
    "final_contrastive",
    "codebook_perplexity",
)


@dataclass(frozen=True)
class ComparisonResult:
    csv_path: str
    summary_path: str
    rows: list


def _added_percent(model: Model) -> float:
    if model.cfg.variant == "xlsr":
        return 0.0
    variant_shapes = model_param_shapes(model.cfg)
    base_shapes = model_param_shapes(baseline_config(model.cfg))
    return overhead_report(base_shapes, variant_shapes)["added_percent"]


def compare_variants(
    run_dirs: list[str],
    corpus: Corpus,
    out_dir: str,
    cfg: ProbeConfig = ProbeConfig(),
) -> ComparisonResult:
    """Probe each run's final checkpoint and tabulate the results.

    Each run directory must hold checkpoint.bin and metrics.jsonl as
    written by the pretraining loop. Rows keep the caller's order, and
    re-running with the same inputs reproduces both files byte for byte.
    """
    if len(run_dirs) < 2:
        raise ConfigError(f"need at least 2 runs to compare, got {len(run_dirs)}")
    rows = []
    for run_dir in run_dirs:
        ckpt_path = os.path.join(run_dir, "checkpoint.bin")
        metrics_path = os.path.join(run_dir, "metrics.jsonl")
        for path in (ckpt_path, metrics_path):
            if not os.path.exists(path):
                raise ConfigError(f"{run_dir} is not a finished run: missing {path}")
        model, _ = restore_model(ckpt_path)
        records = read_metrics(metrics_path)
        if not records:
            raise ConfigError(f"{metrics_path} holds no records")
        last = records[-1]
        rows.append({
            "variant": model.cfg.variant,
            "params_increase_pct": _added_percent(model),
            "lang_probe_acc": language_probe(model, corpus, cfg).accuracy,
            "frame_probe_macro": frame_probe(model, corpus, cfg).macro,
            "final_contrastive": float(last["loss_contrastive"]),
            "codebook_perplexity": float(last["codebook_perplexity"]),
        })

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "comparison.csv")
    lines = [",".join(COMPARISON_COLUMNS)]
    for row in rows:
        lines.append(",".join(
            row["variant"] if col == "variant" else f"{row[col]:.6f}"
            for col in COMPARISON_COLUMNS
        ))
    with open(csv_path, "w") as f:
        f.write("\n".join(lines) + "\n")

    summary = {"probe_config": asdict(cfg), "rows": rows}
    baseline_rows = [r for r in rows if r["variant"] == "xlsr"]
    if baseline_rows:
        base = baseline_rows[0]
        summary["vs_baseline"] = {
            r["variant"]: {
                "lang_probe_delta": r["lang_probe_acc"] - base["lang_probe_acc"],
                "frame_probe_delta": r["frame_probe_macro"] - base["frame_probe_macro"],
                "contrastive_ratio": (
                    r["final_contrastive"] / base["final_contrastive"]
                    if base["final_contrastive"] != 0 else float("inf")
                ),
            }
            for r in rows if r["variant"] != "xlsr"
        }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return ComparisonResult(csv_path=csv_path, summary_path=summary_path, rows=rows)
