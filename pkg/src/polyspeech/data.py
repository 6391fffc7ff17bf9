"""Synthetic multilingual corpus, balanced sampling, and span masking.

Each language is a hidden-state Markov chain with Gaussian emissions.
All languages share one set of state mean vectors (the content), and
each language adds its own constant offset along a direction orthogonal
to the content span (the identity). That split makes cross-language
similarity controllable: languages are linearly separable in raw
feature space by construction, yet an encoder can in principle discard
the identity component without losing the content. State sequences
double as frame labels for downstream probes.

On-disk layout under a corpus directory:
  corpus.json       generation spec echo plus per-language bookkeeping
  manifest.jsonl    one record per utterance: id, language, language_id,
                    frames, path, states_path
  feats/<id>.bin    header <u32 T><u32 F>, then T*F little-endian f32,
                    row-major
  states/<id>.bin   header <u32 T>, then T little-endian i32
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    hours: float
    seed: int
    num_states: int = 5
    self_loop: float = 0.7
    mean_scale: float = 1.0
    emission_std: float = 1.0

    def __post_init__(self):
        if self.hours <= 0:
            raise ConfigError(f"hours must be positive, got {self.hours} for {self.name}")
        if self.num_states < 2:
            raise ConfigError(f"num_states must be >= 2, got {self.num_states}")
        if not 0.0 <= self.self_loop < 1.0:
            raise ConfigError(f"self_loop must be in [0, 1), got {self.self_loop}")
        if self.emission_std <= 0:
            raise ConfigError(f"emission_std must be positive, got {self.emission_std}")


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    languages: tuple
    feature_dim: int = 40
    frames_range: tuple = (96, 144)
    utterances_per_hour: float = 20.0
    language_offset_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        names = [l.name for l in self.languages]
        if len(set(names)) != len(names):
            raise ConfigError(f"language names must be unique, got {names}")
        if not self.languages:
            raise ConfigError("need at least one language")
        lo, hi = self.frames_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad frames_range {self.frames_range}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.language_offset_scale < 0:
            raise ConfigError(
                f"language_offset_scale must be >= 0, got {self.language_offset_scale}"
            )
        # identity directions are drawn orthogonal to the content span
        needed = max(l.num_states for l in self.languages) + len(self.languages)
        if self.feature_dim < needed:
            raise ConfigError(
                f"feature_dim {self.feature_dim} too small: need >= "
                f"{needed} (max states + languages) for orthogonal offsets"
            )

    def utterance_count(self, lang: LanguageSpec) -> int:
        return max(2, int(math.floor(lang.hours * self.utterances_per_hour + 0.5)))


def desk_corpus_spec(num_languages: int = 4, seed: int = 0) -> SyntheticCorpusSpec:
    """Default small corpus: imbalanced hours so sampling temperature matters."""
    hours = [8.0 / (2**i) for i in range(num_languages)]  # 8, 4, 2, 1, ...
    langs = tuple(
        LanguageSpec(name=f"lang{i:02d}", hours=hours[i], seed=seed * 1000 + i)
        for i in range(num_languages)
    )
    return SyntheticCorpusSpec(languages=langs, seed=seed)


# -- binary file formats -------------------------------------------------------


def write_features(path: str, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype=np.float32)
    if feats.ndim != 2:
        raise ContractError(f"features must be [T, F], got shape {feats.shape}")
    with open(path, "wb") as f:
        np.asarray(feats.shape, dtype="<u4").tofile(f)
        np.ascontiguousarray(feats, dtype="<f4").tofile(f)


def read_features(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = np.fromfile(f, dtype="<u4", count=2)
        if header.size != 2:
            raise DataError(f"truncated feature header in {path}")
        t, d = int(header[0]), int(header[1])
        data = np.fromfile(f, dtype="<f4", count=t * d)
    if data.size != t * d:
        raise DataError(f"truncated feature payload in {path}: "
                        f"expected {t * d} values, got {data.size}")
    return data.reshape(t, d)


def write_states(path: str, states: np.ndarray) -> None:
    states = np.asarray(states, dtype=np.int32)
    if states.ndim != 1:
        raise ContractError(f"states must be [T], got shape {states.shape}")
    with open(path, "wb") as f:
        np.asarray([states.size], dtype="<u4").tofile(f)
        np.ascontiguousarray(states, dtype="<i4").tofile(f)


def read_states(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = np.fromfile(f, dtype="<u4", count=1)
        if header.size != 1:
            raise DataError(f"truncated states header in {path}")
        t = int(header[0])
        data = np.fromfile(f, dtype="<i4", count=t)
    if data.size != t:
        raise DataError(f"truncated states payload in {path}")
    return data


# -- generation ----------------------------------------------------------------


def _emit_utterance(
    lang: LanguageSpec, feature_dim: int, frames: int, rng: np.random.Generator,
    means: np.ndarray, transition: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    states = np.empty(frames, dtype=np.int64)
    states[0] = rng.integers(lang.num_states)
    for t in range(1, frames):
        states[t] = rng.choice(lang.num_states, p=transition[states[t - 1]])
    noise = rng.standard_normal((frames, feature_dim)) * lang.emission_std
    return means[states] + noise, states


def _corpus_processes(spec: SyntheticCorpusSpec) -> list:
    """Per-language (means, transition) built from the shared content template.

    Shared state means come from the corpus seed; language m's emission
    means are those means (scaled per language) plus an offset along the
    m-th of a set of orthonormal directions orthogonal to the content
    span, so the identity component is exactly separable from content.
    """
    max_states = max(l.num_states for l in spec.languages)
    rng = np.random.default_rng([spec.seed, 23])
    shared = rng.standard_normal((max_states, spec.feature_dim))
    raw = rng.standard_normal((len(spec.languages), spec.feature_dim))
    q, _ = np.linalg.qr(np.vstack([shared, raw]).T)
    offsets = q[:, max_states:max_states + len(spec.languages)].T

    out = []
    for i, lang in enumerate(spec.languages):
        means = (shared[: lang.num_states] * lang.mean_scale
                 + offsets[i] * spec.language_offset_scale)
        off = (1.0 - lang.self_loop) / (lang.num_states - 1)
        transition = np.full((lang.num_states, lang.num_states), off)
        np.fill_diagonal(transition, lang.self_loop)
        out.append((means, transition))
    return out


def generate_corpus(spec: SyntheticCorpusSpec, out_dir: str) -> str:
    """Write the corpus to ``out_dir`` and return the manifest path."""
    os.makedirs(os.path.join(out_dir, "feats"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "states"), exist_ok=True)
    records = []
    lo, hi = spec.frames_range
    processes = _corpus_processes(spec)
    for lang_id, lang in enumerate(spec.languages):
        means, transition = processes[lang_id]
        n = spec.utterance_count(lang)
        for u in range(n):
            rng = np.random.default_rng([spec.seed, lang.seed, u])
            frames = int(rng.integers(lo, hi + 1))
            feats, states = _emit_utterance(
                lang, spec.feature_dim, frames, rng, means, transition
            )
            uid = f"{lang.name}_{u:05d}"
            fpath = os.path.join("feats", f"{uid}.bin")
            spath = os.path.join("states", f"{uid}.bin")
            write_features(os.path.join(out_dir, fpath), feats)
            write_states(os.path.join(out_dir, spath), states)
            records.append({
                "id": uid,
                "language": lang.name,
                "language_id": lang_id,
                "frames": frames,
                "path": fpath,
                "states_path": spath,
            })
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    meta = {
        "feature_dim": spec.feature_dim,
        "frames_range": list(spec.frames_range),
        "seed": spec.seed,
        "utterances_per_hour": spec.utterances_per_hour,
        "languages": [asdict(l) for l in spec.languages],
        "utterance_counts": {l.name: spec.utterance_count(l) for l in spec.languages},
        "num_states": {l.name: l.num_states for l in spec.languages},
    }
    with open(os.path.join(out_dir, "corpus.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return manifest_path


# -- loading -------------------------------------------------------------------


class Corpus:
    """Read-only view of a generated corpus directory."""

    def __init__(self, root: str):
        self.root = root
        meta_path = os.path.join(root, "corpus.json")
        manifest_path = os.path.join(root, "manifest.jsonl")
        if not os.path.exists(meta_path) or not os.path.exists(manifest_path):
            raise DataError(f"{root} is not a corpus directory (missing metadata)")
        with open(meta_path) as f:
            self.meta = json.load(f)
        self.records: list[dict] = []
        with open(manifest_path) as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    self.records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DataError(f"manifest line {line_no} is not valid: {e}") from e
        if not self.records:
            raise DataError(f"manifest in {root} lists no utterances")
        self.feature_dim = int(self.meta["feature_dim"])
        self.num_languages = len(self.meta["languages"])
        self.hours = np.array([l["hours"] for l in self.meta["languages"]])
        self.by_language: list[list[int]] = [[] for _ in range(self.num_languages)]
        for i, rec in enumerate(self.records):
            self.by_language[rec["language_id"]].append(i)

    def __len__(self):
        return len(self.records)

    def features(self, index: int) -> np.ndarray:
        rec = self.records[index]
        feats = read_features(os.path.join(self.root, rec["path"]))
        if feats.shape != (rec["frames"], self.feature_dim):
            raise DataError(
                f"{rec['id']}: file shape {feats.shape} disagrees with manifest "
                f"({rec['frames']}, {self.feature_dim})"
            )
        return feats

    def states(self, index: int) -> np.ndarray:
        rec = self.records[index]
        s = read_states(os.path.join(self.root, rec["states_path"]))
        if s.size != rec["frames"]:
            raise DataError(f"{rec['id']}: states length {s.size} != frames {rec['frames']}")
        return s


# -- sampling ------------------------------------------------------------------


def language_sampling_probs(
    hours, alpha: float = 0.5, threshold: float | None = None
) -> np.ndarray:
    """Language pick probabilities with low-resource upsampling.

    Languages at or below ``threshold`` hours contribute hours**alpha,
    the rest contribute hours unchanged; the vector is normalized.
    threshold=None uses the median; threshold=inf tempers every language.
    """
    hours = np.asarray(hours, dtype=np.float64)
    if hours.ndim != 1 or hours.size == 0:
        raise ContractError(f"hours must be a non-empty vector, got shape {hours.shape}")
    if (hours <= 0).any():
        raise ContractError("hours must all be positive")
    if not 0.0 < alpha <= 1.0:
        raise ContractError(f"alpha must be in (0, 1], got {alpha}")
    if threshold is None:
        threshold = float(np.median(hours))
    low = hours <= threshold
    w = np.where(low, hours**alpha, hours)
    return w / w.sum()


@dataclass(frozen=True)
class MaskingConfig:
    start_probability: float = 0.065
    span: int = 10

    def __post_init__(self):
        if not 0.0 < self.start_probability < 1.0:
            raise ConfigError(
                f"start_probability must be in (0, 1), got {self.start_probability}"
            )
        if self.span < 1:
            raise ConfigError(f"span must be >= 1, got {self.span}")


def sample_mask(length: int, cfg: MaskingConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask [length]: union of fixed-width spans.

    round-half-up(p * length) start indices (at least 1, at most length)
    are drawn uniformly without replacement from [0, length); each start
    masks [i, min(i + span, length)). Spans may overlap.
    """
    if length < 1:
        raise ContractError(f"length must be >= 1, got {length}")
    num_starts = int(math.floor(cfg.start_probability * length + 0.5))
    num_starts = min(max(num_starts, 1), length)
    starts = rng.choice(length, size=num_starts, replace=False)
    mask = np.zeros(length, dtype=bool)
    for s in starts:
        mask[s : s + cfg.span] = True
    return mask


def sample_masks(
    batch: int, length: int, cfg: MaskingConfig, rng: np.random.Generator
) -> np.ndarray:
    return np.stack([sample_mask(length, cfg, rng) for _ in range(batch)])


# -- batching ------------------------------------------------------------------


@dataclass
class Batch:
    features: np.ndarray  # [B, T, F] float64
    lang_ids: np.ndarray  # [B] int
    states: np.ndarray  # [B, T] int, generator hidden states per raw frame
    utterance_ids: list = field(default_factory=list)


def batch_at(
    corpus: Corpus,
    probs: np.ndarray,
    batch_size: int,
    seed: int,
    step: int,
) -> Batch:
    """The batch for a given step, a pure function of (corpus, seed, step).

    Per slot: draw a language from probs, then an utterance uniformly
    within that language. All utterances are cropped to the shortest
    length in the batch, each at a seeded random offset.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (corpus.num_languages,):
        raise ContractError(
            f"probs shape {probs.shape} != num_languages {corpus.num_languages}"
        )
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    for lang_id in np.flatnonzero(probs > 0):
        if not corpus.by_language[lang_id]:
            raise DataError(
                f"language {lang_id} has sampling probability > 0 but no utterances"
            )
    rng = np.random.default_rng([seed, 1013, step])
    langs = rng.choice(corpus.num_languages, size=batch_size, p=probs)
    chosen = [
        corpus.by_language[m][rng.integers(len(corpus.by_language[m]))] for m in langs
    ]
    feats = [corpus.features(i) for i in chosen]
    states = [corpus.states(i) for i in chosen]
    t_min = min(f.shape[0] for f in feats)
    out_f = np.empty((batch_size, t_min, corpus.feature_dim))
    out_s = np.empty((batch_size, t_min), dtype=np.int64)
    for b, (f, s) in enumerate(zip(feats, states)):
        off = int(rng.integers(0, f.shape[0] - t_min + 1))
        out_f[b] = f[off : off + t_min].astype(np.float64)
        out_s[b] = s[off : off + t_min]
    return Batch(
        features=out_f,
        lang_ids=np.array([corpus.records[i]["language_id"] for i in chosen]),
        states=out_s,
        utterance_ids=[corpus.records[i]["id"] for i in chosen],
    )


def make_batches(corpus: Corpus, probs, batch_size: int, seed: int, num_steps: int):
    """Iterator over ``num_steps`` deterministic batches."""
    for step in range(num_steps):
        yield batch_at(corpus, probs, batch_size, seed, step)


def reduce_states(states: np.ndarray, factor: int = 4) -> np.ndarray:
    """Frame labels for the 4x-downsampled timeline.

    Reduced frame t' takes the raw label at factor * t', clipped to the
    final raw frame, matching the conv frontend's ceil-mode lengths.
    """
    if states.ndim != 2:
        raise ContractError(f"states must be [B, T], got shape {states.shape}")
    T = states.shape[1]
    out_len = -(-T // factor)
    idx = np.minimum(np.arange(out_len) * factor, T - 1)
    return states[:, idx]
