"""Seeded generator of a question-answering-forum-shaped relational database.

Four tables (users, posts, comments, votes) mimic a Q&A site at desk scale.
Every question carries a small set of rare "signal" tokens that its answer
posts repeat; the relevance judgments mark exactly those answers. The
``signal_split`` knob moves each signal token, independently, out of the
question body and into metadata reachable only through link traversal: the
question's own tags, comments attached to the question, and comments the
asker wrote earlier. At signal_split=1 the question body carries no signal
at all, so any purely lexical matcher on the body is blind to it.

Signal tokens come from a reserved namespace (``sig...``) disjoint from the
filler vocabulary, which makes placement assertions exact. Train/valid/test
splits partition the *users*, so no asker appears in two splits.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .storage import canonical_json


class ConfigError(ValueError):
    """A generator config that cannot produce a valid dataset."""


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 500
    n_questions: int = 2000
    answers_per_question: tuple[int, int] = (1, 3)
    comments_per_question: tuple[int, int] = (1, 3)
    n_topics: int = 20
    tokens_per_text: tuple[int, int] = (8, 16)
    vocab_size: int = 5000
    signal_split: float = 0.8  # fraction of signal tokens hidden in metadata
    signal_tokens_per_question: int = 6
    seed: int = 1

    def __post_init__(self):
        for name in ("n_users", "n_questions", "n_topics", "vocab_size",
                     "signal_tokens_per_question"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("answers_per_question", "comments_per_question", "tokens_per_text"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must be a 1 <= lo <= hi range")
        if not 0.0 <= self.signal_split <= 1.0:
            raise ConfigError("signal_split must lie in [0, 1]")
        if self.vocab_size < self.n_topics:
            raise ConfigError("vocab_size must cover at least one token per topic")

    @staticmethod
    def from_dict(obj: dict) -> "SynthConfig":
        if "seed" not in obj:
            raise ConfigError("missing required field: seed")
        known = {
            "n_users", "n_questions", "answers_per_question", "comments_per_question",
            "n_topics", "tokens_per_text", "vocab_size", "signal_split",
            "signal_tokens_per_question", "seed",
        }
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown fields: {sorted(unknown)}")
        kwargs = dict(obj)
        for name in ("answers_per_question", "comments_per_question", "tokens_per_text"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return SynthConfig(**kwargs)

    def signal_pool_size(self) -> int:
        # Every pool token recurs across many questions, so token matching is
        # learnable; the pool stays well under typical encoder widths so a
        # rank-limited linear model can represent per-token matching alongside
        # topic structure. Question identity lives in the *combination* of
        # tokens, which uniqueness rejection keeps distinct.
        return max(16, min(32, self.n_questions // 8))


SCHEMA = {
    "tables": [
        {
            "name": "users",
            "primary_key": "UserId",
            "foreign_keys": [],
            "attributes": [{"column": "AboutMe", "kind": "text"}],
        },
        {
            "name": "posts",
            "primary_key": "PostId",
            "foreign_keys": [
                {"column": "OwnerUserId", "ref_table": "users", "ref_column": "UserId"},
                {"column": "ParentId", "ref_table": "posts", "ref_column": "PostId"},
            ],
            "attributes": [
                {"column": "Body", "kind": "text"},
                {"column": "Tags", "kind": "text"},
                {"column": "CreationDate", "kind": "timestamp"},
            ],
        },
        {
            "name": "comments",
            "primary_key": "CommentId",
            "foreign_keys": [
                {"column": "PostId", "ref_table": "posts", "ref_column": "PostId"},
                {"column": "UserId", "ref_table": "users", "ref_column": "UserId"},
            ],
            "attributes": [
                {"column": "Text", "kind": "text"},
                {"column": "CreationDate", "kind": "timestamp"},
            ],
        },
        {
            "name": "votes",
            "primary_key": "VoteId",
            "foreign_keys": [
                {"column": "PostId", "ref_table": "posts", "ref_column": "PostId"},
                {"column": "UserId", "ref_table": "users", "ref_column": "UserId"},
            ],
            "attributes": [{"column": "CreationDate", "kind": "timestamp"}],
        },
    ]
}

CATEGORIES = [
    {
        "name": "own_tags",
        "start_table": "posts",
        "hops": [],
        "target_attribute": "Tags",
        "temporal_filter": "none",
        "exclude_query_row": False,
    },
    {
        "name": "question_comments",
        "start_table": "posts",
        "hops": [{"link": "comments.PostId", "direction": "reverse"}],
        "target_attribute": "Text",
        "temporal_filter": "none",
        "exclude_query_row": False,
    },
    {
        "name": "asker_comments",
        "start_table": "posts",
        "hops": [
            {"link": "posts.OwnerUserId", "direction": "forward"},
            {"link": "comments.UserId", "direction": "reverse"},
        ],
        "target_attribute": "Text",
        "temporal_filter": "strictly_before_query_timestamp",
        "exclude_query_row": False,
    },
    {
        "name": "asker_aboutme",
        "start_table": "posts",
        "hops": [{"link": "posts.OwnerUserId", "direction": "forward"}],
        "target_attribute": "AboutMe",
        "temporal_filter": "none",
        "exclude_query_row": False,
    },
]

SIGNAL_PREFIX = "sig"
_CARRIERS = ("tags", "question_comment", "asker_comment")
_BASE_TS = 1_500_000_000
_QUESTION_TS_STRIDE = 1000


def signal_vocabulary(cfg: SynthConfig) -> set[str]:
    """The reserved tokens that may identify a question."""
    return {f"{SIGNAL_PREFIX}{i}" for i in range(cfg.signal_pool_size())}


@dataclass
class GeneratedData:
    out_dir: Path
    counts: dict[str, int]
    files: dict[str, str]  # name -> sha256
    split_users: dict[str, list[str]]

    def manifest(self) -> dict:
        return {"counts": self.counts, "files": self.files}


def _topic_slices(cfg: SynthConfig) -> list[list[str]]:
    per_topic = cfg.vocab_size // cfg.n_topics
    vocab = [f"w{i}" for i in range(cfg.vocab_size)]
    return [vocab[t * per_topic : (t + 1) * per_topic] for t in range(cfg.n_topics)]


def _sample_text(rng: np.random.Generator, pool: list[str], count: int) -> list[str]:
    idx = rng.integers(0, len(pool), size=count)
    return [pool[int(i)] for i in idx]


def generate(cfg: SynthConfig, out_dir: str | Path) -> GeneratedData:
    """Write the database, splits, qrels, corpus listing, and experiment config.

    Fully deterministic per config: identical configs produce byte-identical
    files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    topics = _topic_slices(cfg)
    signal_pool = [f"{SIGNAL_PREFIX}{i}" for i in range(cfg.signal_pool_size())]
    distinct_sets = math.comb(cfg.signal_pool_size(), cfg.signal_tokens_per_question)
    if cfg.n_questions > distinct_sets // 2:
        raise ConfigError(
            f"{cfg.n_questions} questions need more distinct signal sets than "
            f"the pool supports ({distinct_sets})"
        )

    # Users, their home topic, and the user-level split.
    user_ids = [f"u{i:05d}" for i in range(cfg.n_users)]
    user_topic = {u: int(rng.integers(0, cfg.n_topics)) for u in user_ids}
    users_rows = [
        {"UserId": u, "AboutMe": " ".join(_sample_text(rng, topics[user_topic[u]], 6))}
        for u in user_ids
    ]
    order = rng.permutation(cfg.n_users)
    n_valid = max(1, cfg.n_users // 10) if cfg.n_users >= 3 else 0
    n_test = n_valid
    shuffled = [user_ids[int(i)] for i in order]
    split_users = {
        "test": sorted(shuffled[:n_test]),
        "valid": sorted(shuffled[n_test : n_test + n_valid]),
        "train": sorted(shuffled[n_test + n_valid :]),
    }
    user_split = {u: name for name, users in split_users.items() for u in users}

    posts_rows: list[dict] = []
    comments_rows: list[dict] = []
    votes_rows: list[dict] = []
    qrels: dict[str, dict[str, list[str]]] = {"train": {}, "valid": {}, "test": {}}
    examples: dict[str, list[dict]] = {"train": [], "valid": [], "test": []}
    corpus_ids: list[str] = []

    used_signal_sets: set[frozenset] = set()
    question_ids: list[str] = []
    next_post = 0
    next_comment = 0
    next_vote = 0

    def new_post_id() -> str:
        nonlocal next_post
        pid = f"p{next_post:06d}"
        next_post += 1
        return pid

    for qi in range(cfg.n_questions):
        asker = user_ids[int(rng.integers(0, cfg.n_users))]
        topic = user_topic[asker]
        ts = _BASE_TS + qi * _QUESTION_TS_STRIDE

        # Draw a signal set no other question uses.
        while True:
            pick = rng.choice(cfg.signal_pool_size(), size=cfg.signal_tokens_per_question,
                              replace=False)
            signal = [signal_pool[int(i)] for i in sorted(pick)]
            if frozenset(signal) not in used_signal_sets:
                used_signal_sets.add(frozenset(signal))
                break

        body_tokens: list[str] = []
        carrier_tokens: dict[str, list[str]] = {c: [] for c in _CARRIERS}
        for j, token in enumerate(signal):
            if rng.random() >= cfg.signal_split:
                body_tokens.append(token)
            else:
                carrier_tokens[_CARRIERS[j % len(_CARRIERS)]].append(token)

        lo, hi = cfg.tokens_per_text
        filler = _sample_text(rng, topics[topic], int(rng.integers(lo, hi + 1)))
        body_words = filler + body_tokens
        rng.shuffle(body_words)

        qid = new_post_id()
        question_ids.append(qid)
        posts_rows.append(
            {
                "PostId": qid,
                "OwnerUserId": asker,
                "ParentId": None,
                "Body": " ".join(body_words),
                "Tags": " ".join([f"tag{topic}"] + carrier_tokens["tags"]),
                "CreationDate": str(ts),
            }
        )

        # Comments attached to this question; signal carriers come first.
        n_comments = int(rng.integers(cfg.comments_per_question[0],
                                      cfg.comments_per_question[1] + 1))
        n_comments = max(n_comments, len(carrier_tokens["question_comment"]))
        for ci in range(n_comments):
            words = _sample_text(rng, topics[topic], 4)
            if ci < len(carrier_tokens["question_comment"]):
                words.append(carrier_tokens["question_comment"][ci])
            comments_rows.append(
                {
                    "CommentId": f"c{next_comment:06d}",
                    "PostId": qid,
                    "UserId": user_ids[int(rng.integers(0, cfg.n_users))],
                    "Text": " ".join(words),
                    "CreationDate": str(ts + 1 + ci),
                }
            )
            next_comment += 1

        # Comments the asker wrote shortly before asking, one per hidden token.
        for ci, token in enumerate(carrier_tokens["asker_comment"]):
            target = question_ids[int(rng.integers(0, len(question_ids)))]
            comments_rows.append(
                {
                    "CommentId": f"c{next_comment:06d}",
                    "PostId": target,
                    "UserId": asker,
                    "Text": " ".join(_sample_text(rng, topics[topic], 4) + [token]),
                    "CreationDate": str(ts - 1 - ci),
                }
            )
            next_comment += 1

        # Answers by other users repeat the full signal; they form the corpus.
        n_answers = int(rng.integers(cfg.answers_per_question[0],
                                     cfg.answers_per_question[1] + 1))
        answer_ids = []
        for ai in range(n_answers):
            owner = asker
            while owner == asker and cfg.n_users > 1:
                owner = user_ids[int(rng.integers(0, cfg.n_users))]
            words = _sample_text(rng, topics[topic],
                                 int(rng.integers(lo, hi + 1))) + list(signal)
            rng.shuffle(words)
            aid = new_post_id()
            answer_ids.append(aid)
            posts_rows.append(
                {
                    "PostId": aid,
                    "OwnerUserId": owner,
                    "ParentId": qid,
                    "Body": " ".join(words),
                    "Tags": None,
                    "CreationDate": str(ts + 100 + ai),
                }
            )
        corpus_ids.extend(answer_ids)

        for _ in range(int(rng.integers(0, 3))):
            votes_rows.append(
                {
                    "VoteId": f"v{next_vote:06d}",
                    "PostId": answer_ids[int(rng.integers(0, len(answer_ids)))],
                    "UserId": user_ids[int(rng.integers(0, cfg.n_users))],
                    "CreationDate": str(ts + 200 + next_vote % 17),
                }
            )
            next_vote += 1

        split = user_split[asker]
        qrels[split][qid] = answer_ids
        examples[split].append(
            {"qid": qid, "table": "posts", "row_id": qid,
             "text_field": "Body", "positive": answer_ids[0]}
        )

    files: dict[str, str] = {}

    def write(name: str, content: str) -> None:
        path = out / name
        path.write_text(content, encoding="utf-8")
        files[name] = hashlib.sha256(content.encode("utf-8")).hexdigest()

    def jsonl(rows: list[dict]) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)

    write("schema.json", json.dumps(SCHEMA, indent=2) + "\n")
    write("users.jsonl", jsonl(users_rows))
    write("posts.jsonl", jsonl(posts_rows))
    write("comments.jsonl", jsonl(comments_rows))
    write("votes.jsonl", jsonl(votes_rows))
    for split in ("train", "valid", "test"):
        lines = "".join(
            f"{qid} 0 {doc} 1\n"
            for qid in sorted(qrels[split])
            for doc in qrels[split][qid]
        )
        write(f"qrels.{split}.txt", lines)
        write(f"examples.{split}.jsonl", jsonl(examples[split]))
    write("corpus_ids.txt", "".join(f"{d}\n" for d in sorted(corpus_ids)))
    write("experiment.json", canonical_json(_experiment_config(cfg)) + "\n")

    counts = {
        "users": len(users_rows),
        "posts": len(posts_rows),
        "comments": len(comments_rows),
        "votes": len(votes_rows),
        "questions": cfg.n_questions,
        "corpus_docs": len(corpus_ids),
        "train_examples": len(examples["train"]),
        "valid_examples": len(examples["valid"]),
        "test_examples": len(examples["test"]),
    }
    data = GeneratedData(out_dir=out, counts=counts, files=files, split_users=split_users)
    write("manifest.json", canonical_json(data.manifest()) + "\n")
    return data


def _experiment_config(cfg: SynthConfig) -> dict:
    return {
        "paths": {
            "schema": "schema.json",
            "data_dir": ".",
            "qrels": "qrels.test.txt",
            "queries": "examples.test.jsonl",
            "train_examples": "examples.train.jsonl",
            "corpus_ids": "corpus_ids.txt",
            "corpus_table": "posts",
            "corpus_field": "Body",
            "query_field": "Body",
        },
        "categories": CATEGORIES,
        "featurizer": {"hash_buckets": 16384, "max_tokens": 256},
        "dim": 64,
        # Tuned for the hashed-linear encoder at this scale: the large batch
        # supplies same-topic in-batch negatives and the high rate lets the
        # bilinear scores grow from their tiny initialization.
        "train": {
            "epochs": 16,
            "batch_size": 64,
            "learning_rate": 0.02,
            "weight_decay": 0.1,
            "grad_k": 3,
            "nograd_m": 30,
            "seed": cfg.seed,
        },
        "blend": {"lambda": 0.7, "empty_metadata_policy": "fallback_to_query"},
        "eval": {"k_list": [10, 100], "metrics": ["acc", "recall", "mrr", "map"]},
        "mode": "daqu",
        "seeds": [cfg.seed],
    }
