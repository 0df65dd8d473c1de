"""Retrieval metrics and the runner for the expansion baselines.

Metrics operate on a run (query id -> ranked hits) against qrels (query id ->
relevant doc ids). A query present in the qrels but missing from the run
scores zero, mirroring common trec-eval usage; ``strict=True`` turns that
into an error instead. Reports carry per-query breakdowns so means can be
audited exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import BlendConfig, blend
from .encoder import EncoderParams, FeaturizerConfig, encode, tokenize
from .index import DenseIndex, SearchResult, build_bm25, search_bm25, search_dense
from .metaview import AttributeSet, CategorySpec, extract_attributes
from .relstore import Database
from .setenc import MODE_INFERENCE, SamplingPolicy, encode_metadata

MODES = ("none", "naive", "bm25_select", "daqu")


class MissingQueryError(KeyError):
    """A qrels query that the run does not cover (strict mode only)."""


Run = dict[str, SearchResult]
QRels = dict[str, set[str]]


def read_qrels(path: str | Path) -> QRels:
    """TREC qrels: ``<qid> 0 <docid> <rel>``; rel > 0 marks relevance."""
    qrels: QRels = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"bad qrels line: {line.rstrip()!r}")
            qid, _, doc_id, rel = parts
            if int(rel) > 0:
                qrels.setdefault(qid, set()).add(doc_id)
    return qrels


def read_trec_run(path: str | Path) -> Run:
    run: dict[str, list[tuple[str, float]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"bad run line: {line.rstrip()!r}")
            qid, _, doc_id, _, score, _ = parts
            run.setdefault(qid, []).append((doc_id, float(score)))
    return {qid: SearchResult(hits) for qid, hits in run.items()}


def _ranked_ids(run: Run, qid: str, strict: bool) -> list[str]:
    if qid not in run:
        if strict:
            raise MissingQueryError(qid)
        return []
    return run[qid].ids()


def acc_at_k(run: Run, qrels: QRels, k: int, strict: bool = False) -> float:
    """Fraction of queries whose top-k contains at least one relevant doc."""
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = [
        1.0 if set(_ranked_ids(run, qid, strict)[:k]) & relevant else 0.0
        for qid, relevant in sorted(qrels.items())
    ]
    return float(np.mean(hits)) if hits else 0.0


def recall_at_k(run: Run, qrels: QRels, k: int, strict: bool = False) -> float:
    """Mean fraction of each query's relevant docs present in its top-k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    vals = [
        len(set(_ranked_ids(run, qid, strict)[:k]) & relevant) / len(relevant)
        for qid, relevant in sorted(qrels.items())
    ]
    return float(np.mean(vals)) if vals else 0.0


def mrr(run: Run, qrels: QRels, strict: bool = False) -> float:
    """Mean reciprocal rank of the first relevant doc; 0 if none retrieved."""
    vals = []
    for qid, relevant in sorted(qrels.items()):
        rr = 0.0
        for rank, doc_id in enumerate(_ranked_ids(run, qid, strict), start=1):
            if doc_id in relevant:
                rr = 1.0 / rank
                break
        vals.append(rr)
    return float(np.mean(vals)) if vals else 0.0


def mean_average_precision(run: Run, qrels: QRels, strict: bool = False) -> float:
    """Mean over queries of precision averaged at each relevant hit."""
    vals = []
    for qid, relevant in sorted(qrels.items()):
        hits = 0
        precision_sum = 0.0
        for rank, doc_id in enumerate(_ranked_ids(run, qid, strict), start=1):
            if doc_id in relevant:
                hits += 1
                precision_sum += hits / rank
        vals.append(precision_sum / len(relevant))
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class MetricReport:
    means: dict[str, float]
    per_query: dict[str, dict[str, float]]
    query_count: int
    missing_from_run: int

    def to_dict(self) -> dict:
        return {
            "means": self.means,
            "per_query": self.per_query,
            "query_count": self.query_count,
            "missing_from_run": self.missing_from_run,
        }

    def to_table(self) -> str:
        names = sorted(self.means)
        width = max((len(n) for n in names), default=6) + 2
        lines = [f"{'metric':<{width}}{'mean':>12}"]
        lines += [f"{name:<{width}}{self.means[name]:>12.6f}" for name in names]
        lines.append(f"{'queries':<{width}}{self.query_count:>12d}")
        if self.missing_from_run:
            lines.append(f"{'missing':<{width}}{self.missing_from_run:>12d}")
        return "\n".join(lines)


def evaluate(run: Run, qrels: QRels, k_list: list[int],
             metrics: list[str] | None = None) -> MetricReport:
    """Per-query metric table plus means; missing queries score 0 and are counted."""
    metrics = metrics or ["acc", "recall", "mrr", "map"]
    per_query: dict[str, dict[str, float]] = {}
    for qid, relevant in sorted(qrels.items()):
        single_run = {qid: run[qid]} if qid in run else {}
        single_qrels = {qid: relevant}
        row: dict[str, float] = {}
        for metric in metrics:
            if metric == "acc":
                for k in k_list:
                    row[f"acc@{k}"] = acc_at_k(single_run, single_qrels, k)
            elif metric == "recall":
                for k in k_list:
                    row[f"recall@{k}"] = recall_at_k(single_run, single_qrels, k)
            elif metric == "mrr":
                row["mrr"] = mrr(single_run, single_qrels)
            elif metric == "map":
                row["map"] = mean_average_precision(single_run, single_qrels)
            else:
                raise ValueError(f"unknown metric {metric!r}")
        per_query[qid] = row
    names = sorted({name for row in per_query.values() for name in row})
    means = {
        name: float(np.mean([row[name] for row in per_query.values()])) if per_query else 0.0
        for name in names
    }
    missing = sum(1 for qid in qrels if qid not in run)
    return MetricReport(means=means, per_query=per_query,
                        query_count=len(qrels), missing_from_run=missing)


@dataclass(frozen=True)
class Query:
    qid: str
    table: str
    row_id: str
    text: str


def bm25_select_terms(query_text: str, attrs: AttributeSet, budget: int) -> list[str]:
    """Attribute texts most lexically relevant to the query, best first.

    A transient BM25 index over the query's own attribute pool scores each
    text; selection walks descending score (ties in canonical extraction
    order) and stops once the token budget is spent. Texts scoring zero are
    never selected.
    """
    texts = attrs.texts()
    if not texts or budget <= 0:
        return []
    pool = {f"{i:06d}": text for i, text in enumerate(texts)}
    idx = build_bm25(pool)
    result = search_bm25(idx, query_text, k=len(texts))
    selected: list[str] = []
    used = 0
    for doc_id, score in result.hits:
        if score <= 0.0 or used >= budget:
            break
        text = pool[doc_id]
        selected.append(text)
        used += len(tokenize(text))
    return selected


def expanded_query_text(mode: str, query_text: str, attrs: AttributeSet,
                        budget: int) -> str:
    """Query text for the text-expansion baselines (the encoder truncates)."""
    if mode == "naive":
        extra = attrs.texts()
    elif mode == "bm25_select":
        extra = bm25_select_terms(query_text, attrs, budget)
    else:
        raise ValueError(f"not a text-expansion mode: {mode!r}")
    return " ".join([query_text, *extra]) if extra else query_text


def query_vector(
    mode: str,
    query: Query,
    db: Database,
    specs: list[CategorySpec],
    query_params: EncoderParams,
    attr_params: EncoderParams,
    feat_cfg: FeaturizerConfig,
    blend_cfg: BlendConfig,
    infer_cap: int | None = None,
) -> np.ndarray:
    """The query's dense vector under one augmentation mode.

    none encodes the raw text; naive and bm25_select expand the text before
    encoding; daqu blends the text encoding with the pooled metadata vector
    built from all (or the first ``infer_cap`` per category) attributes.
    """
    if mode == "none":
        return encode(query_params, feat_cfg, query.text)
    if mode in ("naive", "bm25_select"):
        attrs = extract_attributes(db, (query.table, query.row_id), specs)
        text = expanded_query_text(mode, query.text, attrs, feat_cfg.max_tokens)
        return encode(query_params, feat_cfg, text)
    if mode == "daqu":
        attrs = extract_attributes(db, (query.table, query.row_id), specs)
        policy = SamplingPolicy(mode=MODE_INFERENCE, infer_cap=infer_cap)
        meta = encode_metadata(attrs, attr_params, feat_cfg, policy, query_id=query.qid)
        return blend(encode(query_params, feat_cfg, query.text), meta, blend_cfg)
    raise ValueError(f"unknown mode {mode!r}")


def run_query(
    mode: str,
    query: Query,
    db: Database,
    specs: list[CategorySpec],
    query_params: EncoderParams,
    attr_params: EncoderParams,
    feat_cfg: FeaturizerConfig,
    blend_cfg: BlendConfig,
    dense_index: DenseIndex,
    k: int,
    infer_cap: int | None = None,
) -> SearchResult:
    """One query through the chosen augmentation mode, then dense search."""
    vec = query_vector(mode, query, db, specs, query_params, attr_params, feat_cfg,
                       blend_cfg, infer_cap)
    return search_dense(dense_index, vec, k)


def run_system(
    mode: str,
    queries: list[Query],
    db: Database,
    specs: list[CategorySpec],
    query_params: EncoderParams,
    attr_params: EncoderParams,
    feat_cfg: FeaturizerConfig,
    blend_cfg: BlendConfig,
    dense_index: DenseIndex,
    k: int,
    infer_cap: int | None = None,
) -> Run:
    """Rank every query under one mode; see run_query for the mode semantics."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return {
        q.qid: run_query(mode, q, db, specs, query_params, attr_params, feat_cfg,
                         blend_cfg, dense_index, k, infer_cap)
        for q in queries
    }
