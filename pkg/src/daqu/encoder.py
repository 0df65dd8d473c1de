"""Text to dense vectors: hashed bag-of-tokens features under a linear map.

The featurizer lowercases, splits on non-alphanumeric runs (tokens are ASCII
[a-z0-9] runs; the fixed rule keeps featurization bit-identical across
platforms), hashes each token with 64-bit FNV-1a into a fixed bucket space,
and weights buckets by term frequency over the first ``max_tokens`` tokens.

Three independent parameter blocks share this machinery: one each for
queries, documents, and metadata attributes. A provider backed by a
JSON-Lines file of precomputed vectors can stand in for the trainable
encoder when embeddings come from elsewhere.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DimensionError(ValueError):
    """Vector or matrix shapes that do not line up."""


class FormatError(ValueError):
    """A malformed embedding file."""


class DimensionMismatchError(FormatError):
    """Mixed vector lengths within one embedding file."""


class UnknownIdError(KeyError):
    """Lookup of an id the embedding provider has never seen."""


_TOKEN_RE = re.compile(r"[a-z0-9]+")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a; the single deterministic hash used everywhere."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class FeaturizerConfig:
    hash_buckets: int = 1 << 15
    max_tokens: int = 256

    def __post_init__(self):
        if self.hash_buckets < 2:
            raise ValueError("hash_buckets must be at least 2")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")

    def to_dict(self) -> dict:
        return {"hash_buckets": self.hash_buckets, "max_tokens": self.max_tokens}

    @staticmethod
    def from_dict(obj: dict) -> "FeaturizerConfig":
        return FeaturizerConfig(
            hash_buckets=int(obj.get("hash_buckets", 1 << 15)),
            max_tokens=int(obj.get("max_tokens", 256)),
        )


@dataclass(frozen=True)
class SparseFeatures:
    """tf-weighted hashed features; indices ascending, weights sum to 1 or 0."""

    indices: np.ndarray  # int64, strictly ascending
    values: np.ndarray  # float64

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])


_EMPTY_FEATURES = SparseFeatures(
    indices=np.empty(0, dtype=np.int64), values=np.empty(0, dtype=np.float64)
)


def featurize(cfg: FeaturizerConfig, text: str) -> SparseFeatures:
    """Hashed term-frequency vector over the first ``max_tokens`` tokens."""
    tokens = tokenize(text)[: cfg.max_tokens]
    if not tokens:
        return _EMPTY_FEATURES
    counts: dict[int, int] = {}
    for tok in tokens:
        bucket = fnv1a_64(tok.encode("utf-8")) % cfg.hash_buckets
        counts[bucket] = counts.get(bucket, 0) + 1
    total = float(len(tokens))
    buckets = sorted(counts)
    indices = np.asarray(buckets, dtype=np.int64)
    values = np.asarray([counts[b] / total for b in buckets], dtype=np.float64)
    return SparseFeatures(indices=indices, values=values)


ROLES = ("query", "document", "attribute")


@dataclass
class EncoderParams:
    """One trainable linear block mapping hashed features to dense vectors."""

    weight: np.ndarray  # (dim, hash_buckets) float64
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.weight.ndim != 2:
            raise DimensionError("weight must be a 2-D matrix")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("weight contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def hash_buckets(self) -> int:
        return int(self.weight.shape[1])


def init_params(dim: int, cfg: FeaturizerConfig, role: str, seed: int) -> EncoderParams:
    """Seeded uniform init in (-1/sqrt(V), +1/sqrt(V)); one rng per block."""
    rng = np.random.Generator(np.random.PCG64(seed))
    scale = 1.0 / np.sqrt(cfg.hash_buckets)
    weight = rng.uniform(-scale, scale, size=(dim, cfg.hash_buckets))
    return EncoderParams(weight=weight, role=role)


def encode_features(params: EncoderParams, feats: SparseFeatures) -> np.ndarray:
    if feats.nnz == 0:
        return np.zeros(params.dim, dtype=np.float64)
    if feats.indices.max() >= params.hash_buckets:
        raise DimensionError("feature index exceeds the parameter bucket count")
    return params.weight[:, feats.indices] @ feats.values


def encode(params: EncoderParams, cfg: FeaturizerConfig, text: str) -> np.ndarray:
    """W · featurize(text); linear in the hashed features."""
    if params.hash_buckets != cfg.hash_buckets:
        raise DimensionError(
            f"params expect {params.hash_buckets} buckets, featurizer has {cfg.hash_buckets}"
        )
    return encode_features(params, featurize(cfg, text))


def similarity(u: np.ndarray, v: np.ndarray, metric: str = "dot") -> float:
    """Dot product (training and default metric) or inference-only cosine."""
    if u.shape != v.shape:
        raise DimensionError(f"shape mismatch: {u.shape} vs {v.shape}")
    if metric == "dot":
        return float(u @ v)
    if metric == "cosine":
        nu = float(np.linalg.norm(u))
        nv = float(np.linalg.norm(v))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return float(u @ v) / (nu * nv)
    raise ValueError(f"unknown metric {metric!r}")


class EmbeddingProvider:
    """Precomputed text-id -> vector lookups loaded from JSON-Lines."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self._vectors = vectors
        self.dim = dim

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, text_id: str) -> bool:
        return text_id in self._vectors

    def lookup(self, text_id: str) -> np.ndarray:
        try:
            return self._vectors[text_id]
        except KeyError:
            raise UnknownIdError(text_id) from None


def load_embedding_provider(path: str | Path) -> EmbeddingProvider:
    """Read {"id": ..., "vec": [...]} lines; all vectors must share one length."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "vec" not in obj:
                raise FormatError(f"{path}:{lineno}: expected an object with id and vec")
            vec = np.asarray(obj["vec"], dtype=np.float64)
            if vec.ndim != 1:
                raise FormatError(f"{path}:{lineno}: vec must be a flat list")
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"{path}:{lineno}: vec has non-finite entries")
            if dim is None:
                dim = int(vec.shape[0])
            elif vec.shape[0] != dim:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: vector length {vec.shape[0]} != {dim}"
                )
            vectors[str(obj["id"])] = vec
    return EmbeddingProvider(vectors, dim=dim if dim is not None else 0)
