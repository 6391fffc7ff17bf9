"""Loss functions for contrastive pre-training and language conditioning.

The functions here are pure graph builders: they take taped tensors plus
plain-numpy side information (masks, labels, sampled indices) and return
scalar Tensors. Anything stochastic takes an explicit generator so a
training step is a deterministic function of (state, seed).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .numerics import Tensor, custom_op, exp, log, sqrt

COSINE_NORM_FLOOR = 1e-8


def _clamp_min(t: Tensor, floor: float) -> Tensor:
    out = np.maximum(t.data, floor)
    live = (t.data > floor).astype(t.data.dtype)
    return custom_op([t], out, lambda g: (g * live,), "clamp_min")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine over the last axis, broadcasting leading axes.

    Exact for unit vectors: the norm product is clamped at a tiny floor
    rather than shifted, so cos(u, u) == 1.0 to machine precision.
    Zero-norm inputs are a caller bug and raise.
    """
    na = sqrt((a * a).sum(axis=-1, keepdims=True))
    nb = sqrt((b * b).sum(axis=-1, keepdims=True))
    if (na.data == 0.0).any() or (nb.data == 0.0).any():
        raise ContractError("cosine_similarity got a zero-norm vector")
    dot = (a * b).sum(axis=-1)
    denom = _clamp_min((na * nb).reshape(dot.shape), COSINE_NORM_FLOOR)
    return dot / denom


def _logsumexp(z: Tensor, axis: int = -1) -> Tensor:
    # constant max-shift keeps exp in range without touching gradients
    m = z.data.max(axis=axis, keepdims=True)
    shifted = z - Tensor(m)
    return log(exp(shifted).sum(axis=axis)) + Tensor(np.squeeze(m, axis=axis))


def sample_distractors(
    mask: np.ndarray, num_distractors: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate index sets for every masked frame.

    Returns (anchor_idx [N], cand_idx [N, K+1]) as indices into the
    flattened [B*T] frame axis. Column 0 of cand_idx is the anchor itself
    (the positive); the remaining K columns are drawn uniformly, with
    replacement, from the *other* masked frames of the same sequence.
    """
    if mask.ndim != 2:
        raise ContractError(f"mask must be [B, T], got shape {mask.shape}")
    if num_distractors < 1:
        raise ContractError(f"num_distractors must be >= 1, got {num_distractors}")
    B, T = mask.shape
    anchors, cands = [], []
    for b in range(B):
        mpos = np.flatnonzero(mask[b])
        m = mpos.size
        if m < 2:
            raise ContractError(
                f"sequence {b} has {m} masked frame(s); need >= 2 to draw distractors"
            )
        draws = rng.integers(0, m - 1, size=(m, num_distractors))
        for j in range(m):
            others = draws[j] + (draws[j] >= j)  # skip own rank
            row = np.concatenate(([mpos[j]], mpos[others])) + b * T
            anchors.append(mpos[j] + b * T)
            cands.append(row)
    return np.asarray(anchors), np.stack(cands)


def contrastive_loss(
    context: Tensor,
    targets: Tensor,
    mask: np.ndarray,
    num_distractors: int,
    temperature: float,
    rng: np.random.Generator,
) -> tuple[Tensor, float]:
    """Identify each masked frame's quantized target among distractors.

    context, targets: [B, T, D]; mask: bool [B, T]. For every masked
    frame the positive is its own target and K distractors are other
    masked frames' targets from the same sequence. Cosine scores are
    scaled by 1/temperature and the positive is scored against the set
    {positive} union distractors. Returns (mean loss, retrieval accuracy);
    accuracy is the fraction of masked frames whose positive outscores
    every distractor.
    """
    if temperature <= 0.0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if context.shape != targets.shape:
        raise ContractError(
            f"context {context.shape} and targets {targets.shape} must match"
        )
    B, T, D = context.shape
    anchor_idx, cand_idx = sample_distractors(mask, num_distractors, rng)
    c = context.reshape((B * T, D))[anchor_idx]  # [N, D]
    q = targets.reshape((B * T, D))[cand_idx]  # [N, K+1, D]
    sims = cosine_similarity(c.reshape((-1, 1, D)), q)  # [N, K+1]
    z = sims * (1.0 / temperature)
    loss = (_logsumexp(z) - z[:, 0]).mean()
    accuracy = float((sims.data[:, 0] >= sims.data[:, 1:].max(axis=1)).mean())
    return loss, accuracy


def _xlogx(p: Tensor) -> Tensor:
    # p*log(p) with the 0*log(0) = 0 limit, so underflowed probs are safe
    pos = p.data > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(pos, p.data * np.log(p.data), 0.0)
        dgrad = np.where(pos, np.log(p.data) + 1.0, 0.0)
    return custom_op([p], out, lambda g: (g * dgrad,), "xlogx")


def diversity_loss(soft_probs: Tensor) -> Tensor:
    """Push average codeword usage toward uniform.

    soft_probs: [N, G, V] per-frame assignment distributions. Per group,
    the batch-averaged distribution p_bar has entropy H; the penalty is
    mean_g (1 - exp(H_g) / V): 0 when usage is uniform, approaching
    1 - 1/V when a single codeword absorbs everything.
    """
    if soft_probs.ndim != 3:
        raise ContractError(
            f"soft_probs must be [N, G, V], got shape {soft_probs.shape}"
        )
    V = soft_probs.shape[-1]
    p_bar = soft_probs.mean(axis=0)  # [G, V]
    entropy = -_xlogx(p_bar).sum(axis=-1)  # [G]
    return (1.0 - exp(entropy) * (1.0 / V)).mean()


def gradient_reversal(x: Tensor, scale: float = 1.0) -> Tensor:
    """Identity in the forward pass; multiplies the gradient by -scale."""
    return custom_op([x], x.data, lambda g: (-scale * g,), "gradient_reversal")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, float]:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    logits: [N, M]; labels: int [N]. Returns (loss, accuracy).
    """
    if logits.ndim != 2:
        raise ContractError(f"logits must be [N, M], got shape {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ContractError(
            f"labels shape {labels.shape} does not match logits rows {logits.shape[0]}"
        )
    M = logits.shape[1]
    if labels.min() < 0 or labels.max() >= M:
        raise ContractError(f"labels must lie in [0, {M}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    picked = logits[np.arange(labels.size), labels]
    loss = (_logsumexp(logits) - picked).mean()
    accuracy = float((logits.data.argmax(axis=1) == labels).mean())
    return loss, accuracy


def orthogonality_loss(embeddings: Tensor) -> Tensor:
    """Squared Frobenius distance of the Gram matrix from identity.

    embeddings: [M, d]. Zero exactly when rows are orthonormal; grows as
    rows align or change length. For M duplicated unit rows the pairwise
    off-diagonal ones contribute M*(M-1) in total.
    """
    if embeddings.ndim != 2:
        raise ContractError(
            f"embeddings must be [M, d], got shape {embeddings.shape}"
        )
    M = embeddings.shape[0]
    gram = embeddings @ embeddings.transpose((1, 0))
    dev = gram - Tensor(np.eye(M))
    return (dev * dev).sum()
