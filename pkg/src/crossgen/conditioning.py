"""Multi-prompt conditioning: uniform non-empty subset selection over the
available prompt modalities and convex combination of their shared
embeddings into a single conditioning vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridging import SharedEmbedding


@dataclass
class ConditioningVector:
    """Convex combination of shared embeddings plus its provenance."""
    omega: np.ndarray
    subset: tuple[str, ...]
    weights: np.ndarray


class SubsetSampler:
    """Draws uniformly among the 2^k - 1 non-empty subsets of k modalities."""

    def __init__(self, available, rng: np.random.Generator,
                 weight_mode: str = "uniform"):
        self.available = tuple(available)
        if not self.available:
            raise ValueError("subset sampler needs at least one available modality")
        if weight_mode not in ("uniform", "dirichlet"):
            raise ValueError(f"unknown weight mode {weight_mode!r}")
        self.rng = rng
        self.weight_mode = weight_mode

    def sample_subset(self) -> tuple[str, ...]:
        k = len(self.available)
        mask = int(self.rng.integers(1, 2 ** k))
        return tuple(m for i, m in enumerate(self.available) if (mask >> i) & 1)

    def sample_weights(self, size: int) -> np.ndarray:
        if self.weight_mode == "dirichlet":
            return self.rng.dirichlet(np.ones(size))
        return np.full(size, 1.0 / size)


def sample_subset(sampler: SubsetSampler) -> tuple[str, ...]:
    return sampler.sample_subset()


def combine(embeddings, weights=None) -> ConditioningVector:
    """omega = sum_j alpha_j h_j with alpha on the probability simplex.

    ``embeddings`` is a non-empty sequence of SharedEmbedding; weights
    default to uniform over the subset.
    """
    embs = list(embeddings)
    if not embs:
        raise ValueError("combine requires a non-empty subset")
    vectors = np.stack([e.vector for e in embs])
    subset = tuple(e.modality for e in embs)
    if weights is None:
        w = np.full(len(embs), 1.0 / len(embs))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(embs),):
            raise ValueError(f"got {w.shape[0] if w.ndim else 0} weights for {len(embs)} embeddings")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    omega = w @ vectors
    return ConditioningVector(omega=omega, subset=subset, weights=w)


def draw_conditioning(sampler: SubsetSampler, encoders, record,
                      target: str) -> ConditioningVector:
    """Sample a subset, encode its members and combine them."""
    from .toydata import payload
    if target in sampler.available:
        raise ValueError(f"target {target!r} cannot also be a conditioning modality")
    subset = sampler.sample_subset()
    embs = [encoders.encode(m, payload(record, m)) for m in subset]
    return combine(embs, sampler.sample_weights(len(embs)))


def draw_conditioning_batch(sampler: SubsetSampler, encoders, records,
                            target: str):
    """Vectorized variant: encode each available modality once for the whole
    batch, then sample a subset and weights per record.

    Returns (omega matrix of shape (B, d), list of ConditioningVector).
    """
    from .bridging import _payload_batch
    if target in sampler.available:
        raise ValueError(f"target {target!r} cannot also be a conditioning modality")
    if not records:
        raise ValueError("empty batch")
    embs = {m: encoders.encode_batch(m, _payload_batch(records, m))
            for m in sampler.available}
    vectors = []
    provenance = []
    for i in range(len(records)):
        subset = sampler.sample_subset()
        members = [SharedEmbedding(embs[m][i], m) for m in subset]
        cv = combine(members, sampler.sample_weights(len(subset)))
        vectors.append(cv.omega)
        provenance.append(cv)
    return np.stack(vectors), provenance
