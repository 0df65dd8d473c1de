"""Hierarchical set encoding of extracted metadata.

Every attribute value is encoded individually, attributes of one category are
mean-pooled into a category vector, and category vectors are mean-pooled into
the single metadata vector. Pooling always runs over a canonical ordering
(categories by name, attributes by source row), which makes the result
bit-identical under any permutation of the input.

Training throttles cost per category: a few sampled attributes carry
gradients, a larger sample contributes to the forward value only, and the
rest are dropped. Inference uses every attribute (optionally capped for
latency experiments).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, FeaturizerConfig, encode_features, featurize, fnv1a_64
from .metaview import AttributeSet, AttrItem


class EmptyColumnError(ValueError):
    """Mean pooling over zero vectors is undefined."""


class ModeError(ValueError):
    """A gradient operation on a representation built in inference mode."""


MODE_TRAIN = "train"
MODE_INFERENCE = "inference"


@dataclass(frozen=True)
class SamplingPolicy:
    """How many attributes per category participate, and with what role.

    ``grad_k`` attributes per category receive parameter gradients and
    ``nograd_m`` more contribute to the forward value only. Inference mode
    ignores both and uses all attributes; ``infer_cap`` optionally keeps just
    the first N per category (in canonical order) for latency studies.
    """

    mode: str = MODE_INFERENCE
    grad_k: int = 3
    nograd_m: int = 30
    seed: int = 0
    infer_cap: int | None = None

    def __post_init__(self):
        if self.mode not in (MODE_TRAIN, MODE_INFERENCE):
            raise ValueError(f"mode must be train or inference, got {self.mode!r}")
        if self.grad_k < 0 or self.nograd_m < 0:
            raise ValueError("grad_k and nograd_m must be non-negative")
        if self.infer_cap is not None and self.infer_cap < 1:
            raise ValueError("infer_cap must be positive when set")


@dataclass
class ColumnRep:
    """One pooled category: its vector plus which attributes fed it."""

    name: str
    vector: np.ndarray
    used: list[AttrItem]  # canonical order; the attributes actually pooled
    grad_active: list[int]  # indices into ``used`` that carry gradients

    @property
    def used_count(self) -> int:
        return len(self.used)


@dataclass
class MetadataRep:
    q_prime: np.ndarray
    columns: list[ColumnRep]  # non-empty categories, sorted by name
    empty: bool
    mode: str


def pool_column(vectors: list[np.ndarray]) -> np.ndarray:
    """Componentwise arithmetic mean, summed in the given-list order."""
    if not vectors:
        raise EmptyColumnError("cannot pool an empty column")
    dim = vectors[0].shape
    acc = np.zeros(dim, dtype=np.float64)
    for v in vectors:
        if v.shape != dim:
            raise ValueError(f"pool dimensions differ: {v.shape} vs {dim}")
        acc += v
    return acc / len(vectors)


def canonical_categories(attrs: AttributeSet) -> list[tuple[str, list[AttrItem]]]:
    """Categories sorted by name, attributes sorted by source row then value."""
    out = []
    for cat in sorted(attrs.categories, key=lambda c: c.name):
        items = sorted(cat.items, key=lambda it: (it.source[0], it.source[1], it.value))
        out.append((cat.name, items))
    return out


def sampling_seed(policy_seed: int, query_id: str, epoch: int = 0) -> int:
    """Per-query sampling stream: global seed mixed with the query id and epoch."""
    mix = fnv1a_64(query_id.encode("utf-8")) ^ (policy_seed & ((1 << 64) - 1))
    return (mix + 0x9E3779B97F4A7C15 * epoch) & ((1 << 64) - 1)


def select_attributes(
    n: int, policy: SamplingPolicy, query_id: str, epoch: int = 0
) -> tuple[list[int], list[int]]:
    """Pick (used indices, active positions within used) for one category.

    Train mode samples ``min(grad_k, n)`` gradient-active attributes without
    replacement, then up to ``nograd_m`` further forward-only ones. Selected
    indices are re-sorted so pooling keeps the canonical order.
    """
    if policy.mode == MODE_INFERENCE:
        used = list(range(n if policy.infer_cap is None else min(n, policy.infer_cap)))
        return used, []
    rng = np.random.Generator(np.random.PCG64(sampling_seed(policy.seed, query_id, epoch)))
    k = min(policy.grad_k, n)
    active = rng.choice(n, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    active_set = set(int(i) for i in active)
    remaining = [i for i in range(n) if i not in active_set]
    m = min(policy.nograd_m, len(remaining))
    if m:
        extra = rng.choice(len(remaining), size=m, replace=False)
        inactive_set = {remaining[int(i)] for i in extra}
    else:
        inactive_set = set()
    used = sorted(active_set | inactive_set)
    active_positions = [pos for pos, idx in enumerate(used) if idx in active_set]
    return used, active_positions


def encode_metadata(
    attrs: AttributeSet,
    params: EncoderParams,
    cfg: FeaturizerConfig,
    policy: SamplingPolicy,
    query_id: str = "",
    epoch: int = 0,
) -> MetadataRep:
    """Two-level pooled metadata vector for one query's attribute set.

    Empty categories are skipped; if every category is empty the result is
    flagged ``empty`` with a zero vector, and the blending stage decides what
    that means for the final query representation.
    """
    dim = params.dim
    columns: list[ColumnRep] = []
    for name, items in canonical_categories(attrs):
        if not items:
            continue
        used_idx, active_positions = select_attributes(len(items), policy, f"{query_id}/{name}", epoch)
        used = [items[i] for i in used_idx]
        vectors = [encode_features(params, featurize(cfg, it.value)) for it in used]
        columns.append(
            ColumnRep(
                name=name,
                vector=pool_column(vectors),
                used=used,
                grad_active=active_positions,
            )
        )
    if not columns:
        return MetadataRep(
            q_prime=np.zeros(dim, dtype=np.float64), columns=[], empty=True, mode=policy.mode
        )
    q_prime = pool_column([col.vector for col in columns])
    return MetadataRep(q_prime=q_prime, columns=columns, empty=False, mode=policy.mode)


def metadata_backprop(
    rep: MetadataRep, upstream_grad: np.ndarray
) -> dict[str, list[tuple[int, np.ndarray]]]:
    """Gradients of the pooled vector w.r.t. each gradient-active encoding.

    Chain rule through the two means: an active attribute in a category with
    ``c`` used attributes, among ``C`` non-empty categories, receives
    upstream / (c * C). Forward-only attributes get nothing back.
    """
    if rep.mode != MODE_TRAIN:
        raise ModeError("backprop requires a representation built in train mode")
    if rep.empty:
        return {}
    n_categories = len(rep.columns)
    grads: dict[str, list[tuple[int, np.ndarray]]] = {}
    for col in rep.columns:
        if not col.grad_active:
            continue
        factor = 1.0 / (col.used_count * n_categories)
        grads[col.name] = [(pos, upstream_grad * factor) for pos in col.grad_active]
    return grads
