"""Exhaustive dense top-k search and an Okapi BM25 inverted index.

Both indexes are exact: dense search scores every document, BM25 scores every
document with at least one matching posting. Ties always break by ascending
document id, so results are fully deterministic. No approximation, no
compression, no incremental updates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import DimensionError, EncoderParams, FeaturizerConfig, encode, tokenize
from . import storage

BM25_K1 = 0.9
BM25_B = 0.4


@dataclass
class SearchResult:
    """Ranked (doc id, score) pairs, scores non-increasing, ties id-ascending."""

    hits: list[tuple[str, float]]

    def ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


@dataclass
class DenseIndex:
    doc_ids: list[str]  # canonical ascending order
    matrix: np.ndarray  # (N, D) float64
    metric: str = "dot"
    norms: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.metric not in ("dot", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if len(self.doc_ids) != self.matrix.shape[0]:
            raise DimensionError("one embedding per doc id required")
        self.norms = np.linalg.norm(self.matrix, axis=1)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


def build_dense(
    corpus: dict[str, str],
    params: EncoderParams,
    cfg: FeaturizerConfig,
    metric: str = "dot",
) -> DenseIndex:
    """Encode every document; row order is doc id ascending."""
    doc_ids = sorted(corpus)
    if doc_ids:
        matrix = np.stack([encode(params, cfg, corpus[d]) for d in doc_ids])
    else:
        matrix = np.zeros((0, params.dim), dtype=np.float64)
    return DenseIndex(doc_ids=doc_ids, matrix=matrix, metric=metric)


def _top_k(scores: np.ndarray, doc_ids: list[str], k: int) -> SearchResult:
    n = scores.shape[0]
    if n == 0:
        return SearchResult([])
    # lexsort: secondary key first. Ordinals ascend with doc id by construction.
    order = np.lexsort((np.arange(n), -scores))[: min(k, n)]
    return SearchResult([(doc_ids[int(i)], float(scores[int(i)])) for i in order])


def search_dense(index: DenseIndex, query: np.ndarray, k: int) -> SearchResult:
    """Exact top-k over all documents under the index metric."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if query.shape != (index.dim,):
        raise DimensionError(f"query has shape {query.shape}, index dim is {index.dim}")
    if index.matrix.shape[0] == 0:
        return SearchResult([])
    scores = index.matrix @ query
    if index.metric == "cosine":
        qnorm = float(np.linalg.norm(query))
        denom = index.norms * qnorm
        scores = np.where(denom > 0.0, scores / np.where(denom == 0.0, 1.0, denom), 0.0)
    return _top_k(scores, index.doc_ids, k)


def batch_search_dense(
    index: DenseIndex, queries: list[np.ndarray], k: int, threads: int = 1
) -> list[SearchResult]:
    """Independent searches, optionally fanned out over a thread pool."""
    if threads <= 1 or len(queries) <= 1:
        return [search_dense(index, q, k) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: search_dense(index, q, k), queries))


@dataclass
class SparseIndex:
    postings: dict[str, list[tuple[int, int]]]  # term -> [(ordinal, tf)], ordinal asc
    doc_ids: list[str]
    doc_lengths: np.ndarray  # int64 token counts
    avg_doc_length: float
    k1: float = BM25_K1
    b: float = BM25_B

    @property
    def size(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.size - df + 0.5) / (df + 0.5))


def build_bm25(corpus: dict[str, str], k1: float = BM25_K1, b: float = BM25_B) -> SparseIndex:
    """Inverted index over the shared tokenizer; doc order is id ascending."""
    doc_ids = sorted(corpus)
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = np.zeros(len(doc_ids), dtype=np.int64)
    for ordinal, doc_id in enumerate(doc_ids):
        tokens = tokenize(corpus[doc_id])
        lengths[ordinal] = len(tokens)
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term in sorted(counts):
            postings.setdefault(term, []).append((ordinal, counts[term]))
    avg = float(lengths.mean()) if len(doc_ids) else 0.0
    return SparseIndex(postings=postings, doc_ids=doc_ids, doc_lengths=lengths,
                       avg_doc_length=avg, k1=k1, b=b)


def bm25_score(index: SparseIndex, query_tokens: list[str], ordinal: int) -> float:
    """Okapi score of one document; repeated query terms count with multiplicity."""
    if not 0 <= ordinal < index.size:
        raise IndexError(f"no document ordinal {ordinal}")
    length = float(index.doc_lengths[ordinal])
    norm = 1.0 - index.b + index.b * (length / index.avg_doc_length) if index.avg_doc_length else 1.0
    score = 0.0
    for term in query_tokens:
        tf = 0
        for doc, freq in index.postings.get(term, ()):
            if doc == ordinal:
                tf = freq
                break
            if doc > ordinal:
                break
        if tf == 0:
            continue
        score += index.idf(term) * (tf * (index.k1 + 1.0)) / (tf + index.k1 * norm)
    return score


def search_bm25(index: SparseIndex, query_text: str, k: int) -> SearchResult:
    """Top-k over documents sharing at least one term with the query."""
    if k < 1:
        raise ValueError("k must be at least 1")
    query_tokens = tokenize(query_text)
    if not query_tokens or index.size == 0:
        return SearchResult([])
    accum: dict[int, float] = {}
    counts: dict[str, int] = {}
    for tok in query_tokens:
        counts[tok] = counts.get(tok, 0) + 1
    for term, qtf in counts.items():
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for ordinal, tf in plist:
            length = float(index.doc_lengths[ordinal])
            norm = (1.0 - index.b + index.b * (length / index.avg_doc_length)
                    if index.avg_doc_length else 1.0)
            contrib = idf * (tf * (index.k1 + 1.0)) / (tf + index.k1 * norm)
            accum[ordinal] = accum.get(ordinal, 0.0) + qtf * contrib
    if not accum:
        return SearchResult([])
    ordinals = np.asarray(sorted(accum), dtype=np.int64)
    scores = np.asarray([accum[int(o)] for o in ordinals], dtype=np.float64)
    order = np.lexsort((ordinals, -scores))[: min(k, len(ordinals))]
    return SearchResult(
        [(index.doc_ids[int(ordinals[i])], float(scores[i])) for i in order]
    )


def save_dense_index(index: DenseIndex, path: str | Path, model_digest: str) -> None:
    matrices = {"embeddings": index.matrix.astype(np.float32)}
    header = {
        "kind": "dense_index",
        "metric": index.metric,
        "dim": index.dim,
        "doc_ids": index.doc_ids,
        "model_digest": model_digest,
        "matrices": storage.matrix_entries(matrices),
    }
    storage.write_container(path, header, matrices)


def load_dense_index(path: str | Path) -> tuple[DenseIndex, str]:
    """Returns the index and the model digest it was built under."""
    header, matrices = storage.read_container(path)
    if header.get("kind") != "dense_index":
        raise storage.ArtifactError(f"{path}: not a dense index")
    index = DenseIndex(
        doc_ids=list(header["doc_ids"]),
        matrix=matrices["embeddings"].astype(np.float64),
        metric=header.get("metric", "dot"),
    )
    return index, header.get("model_digest", "")


def write_trec_run(path: str | Path, run: dict[str, SearchResult], tag: str) -> None:
    """Standard six-column ranked output, queries in sorted id order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid in sorted(run):
            for rank, (doc_id, score) in enumerate(run[qid].hits, start=1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {score:.6f} {tag}\n")
