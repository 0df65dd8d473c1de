"""Convex blending of the query vector with its pooled metadata vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import DimensionError
from .setenc import MetadataRep

FALLBACK_TO_QUERY = "fallback_to_query"
BLEND_WITH_ZERO = "blend_with_zero"


@dataclass(frozen=True)
class BlendConfig:
    lam: float = 0.7
    empty_metadata_policy: str = FALLBACK_TO_QUERY

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.empty_metadata_policy not in (FALLBACK_TO_QUERY, BLEND_WITH_ZERO):
            raise ValueError(f"unknown policy {self.empty_metadata_policy!r}")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "empty_metadata_policy": self.empty_metadata_policy}

    @staticmethod
    def from_dict(obj: dict) -> "BlendConfig":
        return BlendConfig(
            lam=float(obj.get("lambda", 0.7)),
            empty_metadata_policy=obj.get("empty_metadata_policy", FALLBACK_TO_QUERY),
        )


def blend_vectors(q: np.ndarray, q_prime: np.ndarray, lam: float) -> np.ndarray:
    """lam * q + (1 - lam) * q_prime, with exact identities at the endpoints."""
    if q.shape != q_prime.shape:
        raise DimensionError(f"shape mismatch: {q.shape} vs {q_prime.shape}")
    if lam == 1.0:
        return q.copy()
    if lam == 0.0:
        return q_prime.copy()
    return lam * q + (1.0 - lam) * q_prime


def blend(q: np.ndarray, meta: MetadataRep, cfg: BlendConfig) -> np.ndarray:
    """Reformulated query vector; empty metadata follows the configured policy.

    Falling back to the unscaled query (the default) keeps empty-metadata
    queries on the same score scale as unaugmented retrieval, instead of
    silently cooling their logits by a factor of lambda.
    """
    if meta.empty and cfg.empty_metadata_policy == FALLBACK_TO_QUERY:
        return q.copy()
    return blend_vectors(q, meta.q_prime, cfg.lam)
