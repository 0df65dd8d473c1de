"""Independent reference implementations used only to cross-check the package.

Everything here is deliberately written the slow, obvious way (nested loops,
full enumeration, quadratic scans) and shares no logic with the code under
test beyond the tokenizer contract.
"""

from __future__ import annotations

import math

import numpy as np

from daqu.relstore import Database
from daqu.metaview import CategorySpec


def join_rows_oracle(db: Database, table: str, row_id: str, link, direction: str):
    """Nested-loop join over raw rows, no indexes."""
    row = db.tables[table].by_id[row_id]
    if direction == "forward":
        value = row.fk_values.get(link.source.column)
        return [
            r for r in db.tables[link.target.table].rows if value is not None and r.id == value
        ]
    matches = [
        r
        for r in db.tables[link.source.table].rows
        if r.fk_values.get(link.source.column) == row.id
    ]
    return sorted(matches, key=lambda r: r.id)


def extract_oracle(db: Database, query_row: tuple[str, str], spec: CategorySpec):
    """Path enumeration with explicit recursion; returns [(source, value)]."""
    table, row_id = query_row
    qrow = db.tables[table].by_id[row_id]

    def expand(current_table, row, hops):
        if not hops:
            return [(current_table, row)]
        hop, rest = hops[0], hops[1:]
        link = db.links.by_name[hop.link]
        out = []
        if hop.direction == "forward":
            value = row.fk_values.get(link.source.column)
            for r in db.tables[link.target.table].rows:
                if value is not None and r.id == value:
                    out.extend(expand(link.target.table, r, rest))
        else:
            for r in sorted(db.tables[link.source.table].rows, key=lambda r: r.id):
                if r.fk_values.get(link.source.column) == row.id:
                    out.extend(expand(link.source.table, r, rest))
        return out

    terminal = expand(table, qrow, list(spec.hops))
    seen = set()
    items = []
    for term_table, row in terminal:
        if row.id in seen:
            continue
        seen.add(row.id)
        if spec.exclude_query_row and term_table == table and row.id == row_id:
            continue
        if spec.temporal_filter == "strictly_before_query_timestamp":
            if row.timestamp is None or qrow.timestamp is None:
                raise AssertionError("oracle inputs must be fully timestamped")
            if row.timestamp >= qrow.timestamp:
                continue
        value = row.attr_values.get(spec.target_attribute)
        if value is None:
            continue
        items.append(((term_table, row.id), value))
    return items


def mean_oracle(vectors):
    """Extended-precision componentwise mean."""
    acc = [math.fsum(float(v[i]) for v in vectors) for i in range(len(vectors[0]))]
    return np.asarray([a / len(vectors) for a in acc])


def full_sort_search_oracle(doc_ids, matrix, query, k):
    scored = sorted(
        ((float(matrix[i] @ query), doc_ids[i]) for i in range(len(doc_ids))),
        key=lambda pair: (-pair[0], pair[1]),
    )
    return [(doc_id, score) for score, doc_id in scored[:k]]


def bm25_doc_score_oracle(doc_tokens, all_docs_tokens, query_tokens, k1=0.9, b=0.4):
    """Direct formula evaluation against raw token lists."""
    n = len(all_docs_tokens)
    avgdl = sum(len(t) for t in all_docs_tokens) / n
    score = 0.0
    for term in query_tokens:
        tf = doc_tokens.count(term)
        if tf == 0:
            continue
        df = sum(1 for toks in all_docs_tokens if term in toks)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        denom = tf + k1 * (1.0 - b + b * len(doc_tokens) / avgdl)
        score += idf * tf * (k1 + 1.0) / denom
    return score


def acc_at_k_oracle(run_ids, relevant, k):
    return 1.0 if any(d in relevant for d in run_ids[:k]) else 0.0


def recall_at_k_oracle(run_ids, relevant, k):
    return sum(1 for d in relevant if d in run_ids[:k]) / len(relevant)


def reciprocal_rank_oracle(run_ids, relevant):
    for i, d in enumerate(run_ids):
        if d in relevant:
            return 1.0 / (i + 1)
    return 0.0


def average_precision_oracle(run_ids, relevant):
    hits = 0
    total = 0.0
    for i, d in enumerate(run_ids):
        if d in relevant:
            hits += 1
            total += hits / (i + 1)
    return total / len(relevant)


def numeric_gradient(loss_fn, weight: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences, one entry at a time."""
    grad = np.zeros_like(weight)
    it = np.nditer(weight, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        original = weight[idx]
        weight[idx] = original + eps
        up = loss_fn()
        weight[idx] = original - eps
        down = loss_fn()
        weight[idx] = original
        grad[idx] = (up - down) / (2.0 * eps)
        it.iternext()
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom
