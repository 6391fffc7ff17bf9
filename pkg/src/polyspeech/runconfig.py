"""Run configuration: one JSON file describing a full experiment.

Sections mirror the module configs one to one:

    corpus   synthetic corpus builder (languages, feature_dim, seed, ...)
    encoder  EncoderConfig fields
    model    variant and conditioning knobs (ModelConfig minus encoder)
    trainer  TrainConfig fields
    probe    ProbeConfig fields

Unknown sections or keys are rejected outright. Command-line overrides
("section.key" -> value) are applied on top of the file, and the fully
resolved merge, with every seed explicit, is what gets echoed into the
run directory next to a code-version string.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os

from . import __version__
from .data import LanguageSpec, SyntheticCorpusSpec, desk_corpus_spec
from .encoder import EncoderConfig
from .errors import ConfigError
from .evaluation import ProbeConfig
from .model import ModelConfig
from .trainer import TrainConfig

__all__ = [
    "RunConfig",
    "SECTIONS",
    "default_run_config",
    "load_run_config",
    "echo_run_config",
    "code_version",
]

SECTIONS = ("corpus", "encoder", "model", "trainer", "probe")

_MODEL_KEYS = (
    "variant", "tap_layer", "disc_hidden", "le_layer",
    "adapter_bottleneck", "k_scale", "k_bias",
)
_CORPUS_KEYS = (
    "num_languages", "languages", "feature_dim", "frames_range",
    "utterances_per_hour", "language_offset_scale", "seed",
)
_LANGUAGE_KEYS = tuple(f.name for f in dataclasses.fields(LanguageSpec))
_REQUIRED_LANGUAGE_KEYS = ("name", "hours", "seed")


def _field_names(cls) -> tuple:
    return tuple(f.name for f in dataclasses.fields(cls))


def _check_keys(where: str, given, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {where}: {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def code_version() -> str:
    return f"polyspeech-{__version__}"


def default_run_config() -> dict:
    """The desk-scale profile, fully spelled out."""
    return {
        "corpus": {
            "num_languages": 4,
            "feature_dim": 16,
            "frames_range": [96, 144],
            "utterances_per_hour": 20.0,
            "language_offset_scale": 3.0,
            "seed": 0,
        },
        "encoder": dataclasses.asdict(EncoderConfig()),
        "model": {
            "variant": "xlsr",
            "tap_layer": 2,
            "disc_hidden": 512,
            "le_layer": 0,
            "adapter_bottleneck": 256,
            "k_scale": 8,
            "k_bias": 8,
        },
        "trainer": dataclasses.asdict(TrainConfig()),
        "probe": dataclasses.asdict(ProbeConfig()),
    }


@dataclasses.dataclass(frozen=True)
class RunConfig:
    corpus: SyntheticCorpusSpec
    model: ModelConfig  # carries the encoder and the corpus language count
    trainer: TrainConfig
    probe: ProbeConfig
    resolved: dict  # JSON-ready merge the dataclasses were built from


def _merge_file(merged: dict, path: str) -> None:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object of sections")
    _check_keys(path, data, SECTIONS)
    for section, values in data.items():
        if not isinstance(values, dict):
            raise ConfigError(f"section [{section}] must be an object")
        if section == "corpus" and "languages" in values and "num_languages" not in values:
            # an explicit roster replaces the inherited count rather than fighting it
            merged[section].pop("num_languages", None)
        merged[section].update(values)


def _apply_overrides(merged: dict, overrides: dict) -> None:
    for dotted, value in overrides.items():
        if value is None:
            continue  # unset command-line flag
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"override {dotted!r}: no section [{section}]")
        merged[section][key] = value


def _validate_keys(merged: dict) -> None:
    _check_keys("[corpus]", merged["corpus"], _CORPUS_KEYS)
    _check_keys("[encoder]", merged["encoder"], _field_names(EncoderConfig))
    _check_keys("[model]", merged["model"], _MODEL_KEYS)
    _check_keys("[trainer]", merged["trainer"], _field_names(TrainConfig))
    _check_keys("[probe]", merged["probe"], _field_names(ProbeConfig))


def _build_corpus(sec: dict) -> SyntheticCorpusSpec:
    sec = dict(sec)
    languages = sec.pop("languages", None)
    num_languages = sec.pop("num_languages", None)
    seed = sec.get("seed", 0)
    if languages is not None:
        if not isinstance(languages, list) or not languages:
            raise ConfigError("[corpus] languages must be a non-empty list")
        specs = []
        for i, entry in enumerate(languages):
            where = f"[corpus] languages[{i}]"
            if not isinstance(entry, dict):
                raise ConfigError(f"{where} must be an object")
            _check_keys(where, entry, _LANGUAGE_KEYS)
            missing = [k for k in _REQUIRED_LANGUAGE_KEYS if k not in entry]
            if missing:
                raise ConfigError(f"{where} is missing {', '.join(missing)}")
            specs.append(LanguageSpec(**entry))
        if num_languages is not None and num_languages != len(specs):
            raise ConfigError(
                f"[corpus] num_languages {num_languages} contradicts the "
                f"{len(specs)} listed languages"
            )
        langs = tuple(specs)
    else:
        langs = desk_corpus_spec(num_languages or 4, seed).languages
    if "frames_range" in sec:
        sec["frames_range"] = tuple(sec["frames_range"])
    return SyntheticCorpusSpec(languages=langs, **sec)


def _build_trainer(sec: dict) -> TrainConfig:
    sec = dict(sec)
    if isinstance(sec.get("sampling_threshold"), str):
        if sec["sampling_threshold"].lower() != "inf":
            raise ConfigError(
                f"[trainer] sampling_threshold must be a number, null, or "
                f"\"inf\", got {sec['sampling_threshold']!r}"
            )
        sec["sampling_threshold"] = math.inf
    return TrainConfig(**sec)


def _to_jsonable(value):
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- file <- overrides, validated and built into configs."""
    merged = default_run_config()
    if path is not None:
        _merge_file(merged, path)
    if overrides:
        _apply_overrides(merged, overrides)
    _validate_keys(merged)

    try:
        corpus = _build_corpus(merged["corpus"])
        enc_sec = dict(merged["encoder"])
        enc_sec["conv_channels"] = tuple(enc_sec["conv_channels"])
        encoder = EncoderConfig(**enc_sec)
        model = ModelConfig(
            encoder=encoder,
            num_languages=len(corpus.languages),
            **merged["model"],
        )
        trainer = _build_trainer(merged["trainer"])
        probe = ProbeConfig(**merged["probe"])
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}") from e

    if encoder.input_dim != corpus.feature_dim:
        raise ConfigError(
            f"[encoder] input_dim {encoder.input_dim} must equal [corpus] "
            f"feature_dim {corpus.feature_dim}"
        )

    resolved = {
        "corpus": {
            "languages": [dataclasses.asdict(l) for l in corpus.languages],
            "feature_dim": corpus.feature_dim,
            "frames_range": list(corpus.frames_range),
            "utterances_per_hour": corpus.utterances_per_hour,
            "language_offset_scale": corpus.language_offset_scale,
            "seed": corpus.seed,
        },
        "encoder": _to_jsonable(dataclasses.asdict(encoder)),
        "model": {k: getattr(model, k) for k in _MODEL_KEYS},
        "trainer": _to_jsonable(dataclasses.asdict(trainer)),
        "probe": _to_jsonable(dataclasses.asdict(probe)),
    }
    return RunConfig(corpus=corpus, model=model, trainer=trainer, probe=probe,
                     resolved=resolved)


def echo_run_config(rc: RunConfig, out_dir: str, command: str) -> str:
    """Write the resolved config next to the run outputs; returns the path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_config.json")
    payload = {
        "code_version": code_version(),
        "command": command,
        "config": rc.resolved,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
