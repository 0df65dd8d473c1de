"""Contrastive training of the three encoder blocks with in-batch negatives.

Each batch example contributes one positive document; every other example's
positive serves as its negatives. The loss is the softmax cross-entropy of
the positive score against the full score row. Gradients are computed
analytically (the model is linear in hashed features, so backprop is a chain
of outer products) and applied with an in-repo decoupled-weight-decay
adaptive-moment optimizer.

Metadata attributes follow the two-stage split: per category, a small sample
carries gradients and a larger sample is forward-only. Forward-only
contributions are treated as constants of the step (stop-gradient), which is
also how the finite-difference checks probe them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import BlendConfig, FALLBACK_TO_QUERY, blend_vectors
from .encoder import (
    EncoderParams,
    FeaturizerConfig,
    SparseFeatures,
    encode_features,
    featurize,
    init_params,
)
from .metaview import CategorySpec, extract_attributes, validate_specs
from .relstore import Database
from .setenc import (
    MODE_TRAIN,
    SamplingPolicy,
    canonical_categories,
    select_attributes,
)
from . import storage

ROLE_NAMES = ("query", "document", "attribute")


class BatchTooSmallError(ValueError):
    """In-batch negatives need at least two examples."""


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 16
    # Tuned for the hashed-linear reference encoder; transformer fine-tuning
    # conventionally sits near 2e-5 instead.
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    lam: float = 0.7
    grad_k: int = 3
    nograd_m: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("rates must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass(frozen=True)
class TrainExample:
    query_table: str
    query_row_id: str
    query_text_field: str
    positive_id: str

    @property
    def qid(self) -> str:
        return self.query_row_id


def contrastive_loss(pos_score: float, neg_scores: list[float]) -> float:
    """-log softmax of the positive among positive + negatives, max-shifted."""
    scores = np.asarray([pos_score, *neg_scores], dtype=np.float64)
    shift = scores.max()
    lse = shift + np.log(np.exp(scores - shift).sum())
    return float(lse - pos_score)


class AdamW:
    """Decoupled-weight-decay adaptive moments over named parameter blocks.

    A block whose gradient is absent (or exactly zero) in a step is skipped
    entirely: no moment update, no decay, no step-count advance. This keeps
    non-participating blocks bit-identical, which the stop-gradient contract
    relies on. State is float64 throughout; the hot loop runs in-place on a
    preallocated scratch buffer because these blocks are large.
    """

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}
        self._scratch: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None]) -> None:
        for name, grad in grads.items():
            if grad is None or not grad.any():
                continue
            w = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
                self.t[name] = 0
                self._scratch[name] = np.empty_like(w)
            self.t[name] += 1
            t = self.t[name]
            m, v, buf = self.m[name], self.v[name], self._scratch[name]

            m *= self.beta1
            np.multiply(grad, 1.0 - self.beta1, out=buf)
            m += buf
            v *= self.beta2
            np.multiply(grad, grad, out=buf)
            buf *= 1.0 - self.beta2
            v += buf

            # buf becomes sqrt(v_hat) + eps, then the moment step itself.
            np.sqrt(v, out=buf)
            buf /= np.sqrt(1.0 - self.beta2**t)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr / (1.0 - self.beta1**t)
            w *= 1.0 - self.lr * self.weight_decay
            w -= buf


@dataclass
class ModelParams:
    query: EncoderParams
    document: EncoderParams
    attribute: EncoderParams

    def weights(self) -> dict[str, np.ndarray]:
        return {
            "query": self.query.weight,
            "document": self.document.weight,
            "attribute": self.attribute.weight,
        }

    @property
    def dim(self) -> int:
        return self.query.dim


def init_model(dim: int, cfg: FeaturizerConfig, seed: int) -> ModelParams:
    streams = np.random.SeedSequence(seed).generate_state(3)
    return ModelParams(
        query=init_params(dim, cfg, "query", int(streams[0])),
        document=init_params(dim, cfg, "document", int(streams[1])),
        attribute=init_params(dim, cfg, "attribute", int(streams[2])),
    )


@dataclass
class PreparedCategory:
    name: str
    feats: list[SparseFeatures]  # used attributes, canonical order
    active: list[int]  # positions within ``feats`` that carry gradients


@dataclass
class PreparedExample:
    qid: str
    query_feats: SparseFeatures
    doc_feats: SparseFeatures
    categories: list[PreparedCategory]

    @property
    def meta_empty(self) -> bool:
        return not self.categories


@dataclass
class PreparedBatch:
    """A batch with extraction and attribute sampling already resolved.

    The same prepared batch can be re-scored under perturbed parameters,
    which is what the finite-difference oracle does.
    """

    examples: list[PreparedExample]


def prepare_batch(
    batch: list[TrainExample],
    db: Database,
    specs: list[CategorySpec],
    feat_cfg: FeaturizerConfig,
    corpus: dict[str, str],
    cfg: TrainConfig,
    epoch: int = 0,
) -> PreparedBatch:
    if len(batch) < 2:
        raise BatchTooSmallError(f"need at least 2 examples, got {len(batch)}")
    policy = SamplingPolicy(mode=MODE_TRAIN, grad_k=cfg.grad_k, nograd_m=cfg.nograd_m,
                            seed=cfg.seed)
    examples = []
    for ex in batch:
        row = db.row(ex.query_table, ex.query_row_id)
        query_text = row.attr_values.get(ex.query_text_field, "")
        attrs = extract_attributes(db, (ex.query_table, ex.query_row_id), specs)
        categories = []
        for name, items in canonical_categories(attrs):
            if not items:
                continue
            used_idx, active = select_attributes(len(items), policy, f"{ex.qid}/{name}", epoch)
            feats = [featurize(feat_cfg, items[i].value) for i in used_idx]
            categories.append(PreparedCategory(name=name, feats=feats, active=active))
        examples.append(
            PreparedExample(
                qid=ex.qid,
                query_feats=featurize(feat_cfg, query_text),
                doc_feats=featurize(feat_cfg, corpus[ex.positive_id]),
                categories=categories,
            )
        )
    return PreparedBatch(examples)


def inactive_sums(attribute_params: EncoderParams, prepared: PreparedBatch) -> list[list[np.ndarray]]:
    """Per example and category, the summed encodings of forward-only attributes.

    These sums are the stop-gradient constants of a step: the forward pass
    adds them in, but no gradient flows back through them.
    """
    out = []
    for ex in prepared.examples:
        sums = []
        for cat in ex.categories:
            active = set(cat.active)
            acc = np.zeros(attribute_params.dim, dtype=np.float64)
            for pos, feats in enumerate(cat.feats):
                if pos not in active:
                    acc += encode_features(attribute_params, feats)
            sums.append(acc)
        out.append(sums)
    return out


def _example_queries(
    params: ModelParams,
    prepared: PreparedBatch,
    blend: BlendConfig,
    frozen: list[list[np.ndarray]],
) -> np.ndarray:
    """Blended query vectors, stacked (B x D)."""
    rows = []
    for ex, ex_frozen in zip(prepared.examples, frozen):
        q = encode_features(params.query, ex.query_feats)
        if ex.meta_empty:
            if blend.empty_metadata_policy == FALLBACK_TO_QUERY:
                rows.append(q)
            else:
                rows.append(blend_vectors(q, np.zeros_like(q), blend.lam))
            continue
        column_vecs = []
        for cat, const in zip(ex.categories, ex_frozen):
            acc = const.copy()
            for pos in cat.active:
                acc += encode_features(params.attribute, cat.feats[pos])
            column_vecs.append(acc / len(cat.feats))
        q_prime = np.mean(column_vecs, axis=0)
        rows.append(blend_vectors(q, q_prime, blend.lam))
    return np.stack(rows)


def batch_loss(
    params: ModelParams,
    prepared: PreparedBatch,
    blend: BlendConfig,
    frozen: list[list[np.ndarray]] | None = None,
) -> float:
    """Mean contrastive loss of a prepared batch under the given parameters."""
    if frozen is None:
        frozen = inactive_sums(params.attribute, prepared)
    q_tilde = _example_queries(params, prepared, blend, frozen)
    docs = np.stack([encode_features(params.document, ex.doc_feats) for ex in prepared.examples])
    scores = q_tilde @ docs.T
    shift = scores.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(scores - shift).sum(axis=1))
    return float(np.mean(lse - np.diagonal(scores)))


def batch_loss_and_grads(
    params: ModelParams,
    prepared: PreparedBatch,
    blend: BlendConfig,
    frozen: list[list[np.ndarray]] | None = None,
    grad_out: dict[str, np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray | None]]:
    """Loss plus analytic gradients for all three blocks.

    The gradient w.r.t. the attribute block flows only through gradient-active
    attributes; forward-only ones sit behind the frozen constants. A block
    that receives no contribution at all maps to None. ``grad_out`` lets the
    caller reuse accumulation buffers across steps.
    """
    if frozen is None:
        frozen = inactive_sums(params.attribute, prepared)
    examples = prepared.examples
    n = len(examples)
    q_tilde = _example_queries(params, prepared, blend, frozen)
    docs = np.stack([encode_features(params.document, ex.doc_feats) for ex in examples])
    scores = q_tilde @ docs.T
    shift = scores.max(axis=1, keepdims=True)
    exp_shifted = np.exp(scores - shift)
    lse = shift[:, 0] + np.log(exp_shifted.sum(axis=1))
    loss = float(np.mean(lse - np.diagonal(scores)))

    probs = exp_shifted / exp_shifted.sum(axis=1, keepdims=True)
    dscores = (probs - np.eye(n)) / n
    dq_tilde = dscores @ docs
    ddocs = dscores.T @ q_tilde

    if grad_out is None:
        grad_out = {name: np.zeros_like(w) for name, w in params.weights().items()}
    else:
        for buf in grad_out.values():
            buf.fill(0.0)
    touched = {name: False for name in grad_out}
    lam = blend.lam
    for i, ex in enumerate(examples):
        if ex.meta_empty and blend.empty_metadata_policy == FALLBACK_TO_QUERY:
            dq = dq_tilde[i]
        else:
            dq = lam * dq_tilde[i]
        if ex.query_feats.nnz:
            grad_out["query"][:, ex.query_feats.indices] += np.outer(dq, ex.query_feats.values)
            touched["query"] = True
        if ex.doc_feats.nnz:
            grad_out["document"][:, ex.doc_feats.indices] += np.outer(ddocs[i], ex.doc_feats.values)
            touched["document"] = True
        if ex.meta_empty:
            continue
        dq_prime = (1.0 - lam) * dq_tilde[i] / len(ex.categories)
        for cat in ex.categories:
            dvec = dq_prime / len(cat.feats)
            for pos in cat.active:
                feats = cat.feats[pos]
                if feats.nnz:
                    grad_out["attribute"][:, feats.indices] += np.outer(dvec, feats.values)
                    touched["attribute"] = True
    grads = {name: (buf if touched[name] else None) for name, buf in grad_out.items()}
    return loss, grads


def train_step(
    batch: list[TrainExample],
    params: ModelParams,
    optimizer: AdamW,
    db: Database,
    specs: list[CategorySpec],
    feat_cfg: FeaturizerConfig,
    corpus: dict[str, str],
    cfg: TrainConfig,
    blend: BlendConfig,
    epoch: int = 0,
    grad_out: dict[str, np.ndarray] | None = None,
) -> float:
    """One prepared-forward-update cycle; returns the pre-update batch loss."""
    prepared = prepare_batch(batch, db, specs, feat_cfg, corpus, cfg, epoch)
    loss, grads = batch_loss_and_grads(params, prepared, blend, grad_out=grad_out)
    optimizer.step(params.weights(), grads)
    return loss


@dataclass
class Checkpoint:
    feat_cfg: FeaturizerConfig
    dim: int
    weights: dict[str, np.ndarray]  # float64 in memory; float32 on disk
    blend: BlendConfig
    specs_digest: str
    seed: int
    epoch: int

    def params(self) -> ModelParams:
        return ModelParams(
            query=EncoderParams(self.weights["query"], "query"),
            document=EncoderParams(self.weights["document"], "document"),
            attribute=EncoderParams(self.weights["attribute"], "attribute"),
        )

    def model_digest(self) -> str:
        return storage.digest({"featurizer": self.feat_cfg.to_dict(), "dim": self.dim})


def specs_digest(specs: list[CategorySpec]) -> str:
    return storage.digest([s.to_dict() for s in specs])


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    matrices = {name: w.astype(np.float32) for name, w in ckpt.weights.items()}
    header = {
        "kind": "checkpoint",
        "featurizer": ckpt.feat_cfg.to_dict(),
        "dim": ckpt.dim,
        "blend": ckpt.blend.to_dict(),
        "specs_digest": ckpt.specs_digest,
        "model_digest": ckpt.model_digest(),
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "matrices": storage.matrix_entries(matrices),
    }
    storage.write_container(path, header, matrices)


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, matrices = storage.read_container(path)
    if header.get("kind") != "checkpoint":
        raise storage.ArtifactError(f"{path}: not a checkpoint")
    feat_cfg = FeaturizerConfig.from_dict(header["featurizer"])
    weights = {name: matrices[name].astype(np.float64) for name in ROLE_NAMES}
    return Checkpoint(
        feat_cfg=feat_cfg,
        dim=int(header["dim"]),
        weights=weights,
        blend=BlendConfig.from_dict(header["blend"]),
        specs_digest=header["specs_digest"],
        seed=int(header["seed"]),
        epoch=int(header["epoch"]),
    )


def train(
    db: Database,
    dataset: list[TrainExample],
    corpus: dict[str, str],
    specs: list[CategorySpec],
    cfg: TrainConfig,
    feat_cfg: FeaturizerConfig,
    dim: int,
    blend: BlendConfig | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Full training run; returns the checkpoint and a per-step loss log.

    Everything that involves randomness (init, shuffling, attribute sampling)
    derives from cfg.seed, so identical configs give bit-identical results.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    reports = validate_specs(db, specs)
    bad = [r for r in reports if not r.ok]
    if bad:
        raise ValueError(f"invalid category specs: {[r.errors for r in bad]}")
    if blend is None:
        blend = BlendConfig(lam=cfg.lam)

    params = init_model(dim, feat_cfg, cfg.seed)
    optimizer = AdamW(cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xD5])))
    grad_out = {name: np.zeros_like(w) for name, w in params.weights().items()}

    log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(dataset))
        step = 0
        for start in range(0, len(dataset), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            if len(batch) < 2:
                continue
            loss = train_step(batch, params, optimizer, db, specs, feat_cfg, corpus,
                              cfg, blend, epoch, grad_out=grad_out)
            log.append({"epoch": epoch, "step": step, "loss": loss})
            step += 1

    ckpt = Checkpoint(
        feat_cfg=feat_cfg,
        dim=dim,
        weights=params.weights(),
        blend=blend,
        specs_digest=specs_digest(specs),
        seed=cfg.seed,
        epoch=cfg.epochs,
    )
    return ckpt, log
