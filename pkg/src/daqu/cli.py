"""Command-line pipeline: generate, train, index, search, eval, sweep.

Stages communicate through files only: a JSON experiment config names the
data and hyperparameters, checkpoints and dense indexes use the binary
container format, runs and qrels use TREC text formats. Every artifact
embeds the format version and the digests of the configs that produced it,
and stages refuse mismatched inputs before doing any work.

Exit codes: 0 success, 2 config error, 3 data error, 4 artifact/version
mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .augment import BlendConfig
from .encoder import FeaturizerConfig
from .evalkit import (
    MODES,
    Query,
    evaluate,
    query_vector,
    read_qrels,
    read_trec_run,
    run_query,
)
from .index import (
    batch_search_dense,
    build_bm25,
    build_dense,
    load_dense_index,
    save_dense_index,
    search_bm25,
    SearchResult,
    write_trec_run,
)
from .metaview import CategorySpec, specs_from_config, validate_specs
from .relstore import Database, SchemaError, load_database
from .storage import ArtifactError, VersionMismatchError, digest
from .synthgen import SynthConfig, generate
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainExample,
    load_checkpoint,
    save_checkpoint,
    specs_digest,
    train,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERSION = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class ExperimentConfig:
    base_dir: Path
    schema: Path
    data_dir: Path
    qrels: Path
    queries: Path
    train_examples: Path
    corpus_ids: Path | None
    corpus_table: str
    corpus_field: str
    query_field: str
    categories: list[CategorySpec]
    feat_cfg: FeaturizerConfig
    dim: int
    train: dict
    blend: BlendConfig
    k_list: list[int]
    metrics: list[str]
    mode: str
    seeds: list[int]

    def specs_digest(self) -> str:
        return specs_digest(self.categories)

    def model_digest(self) -> str:
        return digest({"featurizer": self.feat_cfg.to_dict(), "dim": self.dim})


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    base = path.parent

    def need(section: dict, key: str, where: str):
        if key not in section:
            raise CliError(EXIT_CONFIG, f"config missing {where}.{key}")
        return section[key]

    try:
        paths = need(doc, "paths", "")
        train_section = dict(need(doc, "train", ""))
        if "epochs" not in train_section:
            raise CliError(EXIT_CONFIG, "config missing train.epochs")
        corpus_ids = paths.get("corpus_ids")
        return ExperimentConfig(
            base_dir=base,
            schema=base / need(paths, "schema", "paths"),
            data_dir=base / paths.get("data_dir", "."),
            qrels=base / need(paths, "qrels", "paths"),
            queries=base / need(paths, "queries", "paths"),
            train_examples=base / need(paths, "train_examples", "paths"),
            corpus_ids=base / corpus_ids if corpus_ids else None,
            corpus_table=need(paths, "corpus_table", "paths"),
            corpus_field=need(paths, "corpus_field", "paths"),
            query_field=need(paths, "query_field", "paths"),
            categories=specs_from_config(doc.get("categories", [])),
            feat_cfg=FeaturizerConfig.from_dict(doc.get("featurizer", {})),
            dim=int(doc.get("dim", 128)),
            train=train_section,
            blend=BlendConfig.from_dict(doc.get("blend", {})),
            k_list=[int(k) for k in doc.get("eval", {}).get("k_list", [10, 100])],
            metrics=list(doc.get("eval", {}).get("metrics", ["acc", "recall", "mrr", "map"])),
            mode=doc.get("mode", "daqu"),
            seeds=[int(s) for s in doc.get("seeds", [train_section.get("seed", 0)])],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError(EXIT_CONFIG, f"bad config {path}: {exc}") from exc


def load_db(cfg: ExperimentConfig) -> Database:
    try:
        db = load_database(cfg.schema, cfg.data_dir)
    except SchemaError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    reports = validate_specs(db, cfg.categories)
    bad = [r for r in reports if not r.ok]
    if bad:
        msgs = "; ".join(e for r in bad for e in r.errors)
        raise CliError(EXIT_CONFIG, f"category specs do not fit the schema: {msgs}")
    return db


def load_corpus(cfg: ExperimentConfig, db: Database) -> dict[str, str]:
    table = db.table(cfg.corpus_table)
    if cfg.corpus_ids is not None:
        try:
            ids = [line.strip() for line in cfg.corpus_ids.read_text(encoding="utf-8").splitlines()
                   if line.strip()]
        except OSError as exc:
            raise CliError(EXIT_DATA, f"cannot read corpus ids: {exc}") from exc
        missing = [i for i in ids if i not in table.by_id]
        if missing:
            raise CliError(EXIT_DATA, f"corpus ids not in {cfg.corpus_table}: {missing[:5]}")
        rows = [table.by_id[i] for i in ids]
    else:
        rows = [r for r in table.rows if cfg.corpus_field in r.attr_values]
    return {r.id: r.attr_values.get(cfg.corpus_field, "") for r in rows}


def load_examples(path: Path) -> list[TrainExample]:
    examples = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read examples {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            examples.append(
                TrainExample(
                    query_table=obj["table"],
                    query_row_id=obj["row_id"],
                    query_text_field=obj.get("text_field", "Body"),
                    positive_id=obj["positive"],
                )
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise CliError(EXIT_DATA, f"{path}:{lineno}: bad example ({exc})") from exc
    return examples


def queries_from_examples(db: Database, examples: list[TrainExample]) -> list[Query]:
    out = []
    for ex in examples:
        row = db.row(ex.query_table, ex.query_row_id)
        out.append(Query(qid=ex.query_row_id, table=ex.query_table, row_id=ex.query_row_id,
                         text=row.attr_values.get(ex.query_text_field, "")))
    return out


def train_config(cfg: ExperimentConfig, seed: int | None = None,
                 nograd_m: int | None = None) -> TrainConfig:
    section = cfg.train
    return TrainConfig(
        epochs=int(section["epochs"]),
        batch_size=int(section.get("batch_size", 16)),
        learning_rate=float(section.get("learning_rate", 1e-3)),
        weight_decay=float(section.get("weight_decay", 0.01)),
        betas=tuple(section.get("betas", (0.9, 0.999))),
        eps=float(section.get("eps", 1e-8)),
        lam=cfg.blend.lam,
        grad_k=int(section.get("grad_k", 3)),
        nograd_m=int(section.get("nograd_m", 30)) if nograd_m is None else nograd_m,
        seed=int(section.get("seed", 0)) if seed is None else seed,
    )


def run_training(cfg: ExperimentConfig, seed: int | None = None,
                 blend: BlendConfig | None = None,
                 nograd_m: int | None = None) -> tuple[Checkpoint, list[dict]]:
    db = load_db(cfg)
    corpus = load_corpus(cfg, db)
    dataset = load_examples(cfg.train_examples)
    missing = [ex.positive_id for ex in dataset if ex.positive_id not in corpus]
    if missing:
        raise CliError(EXIT_DATA, f"positives missing from corpus: {missing[:5]}")
    tcfg = train_config(cfg, seed=seed, nograd_m=nograd_m)
    blend = blend or cfg.blend
    try:
        return train(db, dataset, corpus, cfg.categories, tcfg, cfg.feat_cfg, cfg.dim,
                     blend=blend)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc


def threads_from(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("DAQU_THREADS")
    if env and env.isdigit():
        return max(1, int(env))
    return 1


def _check_digests(cfg: ExperimentConfig, ckpt: Checkpoint, mode: str,
                   index_digest: str | None = None) -> None:
    if ckpt.model_digest() != cfg.model_digest():
        raise CliError(EXIT_VERSION, "checkpoint featurizer/dim digest differs from config")
    if index_digest is not None and index_digest != ckpt.model_digest():
        raise CliError(EXIT_VERSION, "index was built under a different model digest")
    if mode in ("naive", "bm25_select", "daqu") and ckpt.specs_digest != cfg.specs_digest():
        raise CliError(EXIT_VERSION, "checkpoint category specs differ from config")


def cmd_gen_synthetic(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        synth_cfg = SynthConfig.from_dict(doc)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad generator config: {exc}") from exc
    data = generate(synth_cfg, args.out)
    print(json.dumps(data.manifest(), indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    ckpt, log = run_training(cfg)
    save_checkpoint(ckpt, args.out_checkpoint)
    log_path = Path(args.loss_log) if args.loss_log else Path(args.out_checkpoint).with_suffix(".losses.jsonl")
    with log_path.open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    final = log[-1]["loss"] if log else float("nan")
    print(f"trained {ckpt.epoch} epochs, final batch loss {final:.6f}")
    print(f"checkpoint: {args.out_checkpoint}")
    return 0


def cmd_index(args) -> int:
    cfg = load_experiment_config(args.config)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except VersionMismatchError as exc:
        raise CliError(EXIT_VERSION, str(exc)) from exc
    except (ArtifactError, OSError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    _check_digests(cfg, ckpt, mode="none")
    db = load_db(cfg)
    corpus = load_corpus(cfg, db)
    dense = build_dense(corpus, ckpt.params().document, ckpt.feat_cfg)
    save_dense_index(dense, args.out_index, ckpt.model_digest())
    print(f"indexed {len(dense.doc_ids)} documents -> {args.out_index}")
    return 0


def cmd_search(args) -> int:
    if args.k < 1:
        raise CliError(EXIT_CONFIG, "k must be at least 1")
    cfg = load_experiment_config(args.config)
    db = load_db(cfg)
    examples = load_examples(Path(args.queries))
    queries = queries_from_examples(db, examples)

    if args.mode == "bm25":
        corpus = load_corpus(cfg, db)
        sparse = build_bm25(corpus)
        run = {q.qid: search_bm25(sparse, q.text, args.k) for q in queries}
    elif args.mode in MODES:
        if not args.checkpoint or not args.index:
            raise CliError(EXIT_CONFIG, f"mode {args.mode} needs --checkpoint and --index")
        try:
            ckpt = load_checkpoint(args.checkpoint)
            dense, index_digest = load_dense_index(args.index)
        except VersionMismatchError as exc:
            raise CliError(EXIT_VERSION, str(exc)) from exc
        except (ArtifactError, OSError) as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        _check_digests(cfg, ckpt, args.mode, index_digest)
        params = ckpt.params()
        vectors = [
            query_vector(args.mode, q, db, cfg.categories, params.query, params.attribute,
                         ckpt.feat_cfg, ckpt.blend, infer_cap=args.infer_cap)
            for q in queries
        ]
        results = batch_search_dense(dense, vectors, args.k, threads=threads_from(args))
        run = {q.qid: res for q, res in zip(queries, results)}
    else:
        raise CliError(EXIT_CONFIG, f"unknown mode {args.mode!r}")

    write_trec_run(args.out, run, tag=args.mode)
    print(f"searched {len(run)} queries (mode={args.mode}, k={args.k}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    try:
        run = read_trec_run(args.run)
        qrels = read_qrels(args.qrels)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    k_list = [int(k) for k in args.k_list.split(",") if k]
    metrics = [m for m in args.metrics.split(",") if m]
    report = evaluate(run, qrels, k_list, metrics)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def _median_query_latency(queries, per_query_fn, reps: int = 5) -> float:
    """Median over warm repetitions of mean wall-clock per query."""
    for q in queries:
        per_query_fn(q)
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        for q in queries:
            per_query_fn(q)
        times.append((time.perf_counter() - start) / len(queries))
    return statistics.median(times)


def _sweep_once(cfg: ExperimentConfig, db, queries, qrels, ckpt: Checkpoint,
                blend: BlendConfig, k: int, infer_cap: int | None,
                reps: int) -> dict:
    params = ckpt.params()
    dense = build_dense(load_corpus(cfg, db), params.document, ckpt.feat_cfg)

    def daqu_query(q):
        return run_query("daqu", q, db, cfg.categories, params.query, params.attribute,
                         ckpt.feat_cfg, blend, dense, k, infer_cap)

    def none_query(q):
        return run_query("none", q, db, cfg.categories, params.query, params.attribute,
                         ckpt.feat_cfg, blend, dense, k)

    run = {q.qid: daqu_query(q) for q in queries}
    report = evaluate(run, qrels, cfg.k_list, cfg.metrics)
    latency = _median_query_latency(queries, daqu_query, reps)
    baseline = _median_query_latency(queries, none_query, reps)
    return {
        "metrics": report.means,
        "median_query_latency_s": latency,
        "baseline_latency_s": baseline,
        "relative_latency": latency / baseline if baseline > 0 else float("inf"),
    }


def cmd_sweep(args) -> int:
    cfg = load_experiment_config(args.config)
    db = load_db(cfg)
    examples = load_examples(cfg.queries)
    queries = queries_from_examples(db, examples)
    try:
        qrels = read_qrels(cfg.qrels)
    except OSError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    k = args.k or max(cfg.k_list)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError(EXIT_CONFIG, "no sweep values given")

    rows = []
    if args.param == "lambda":
        for raw in values:
            lam = float(raw)
            blend = BlendConfig(lam=lam, empty_metadata_policy=cfg.blend.empty_metadata_policy)
            ckpt, _ = run_training(cfg, blend=blend)
            row = _sweep_once(cfg, db, queries, qrels, ckpt, blend, k, None, args.reps)
            rows.append({"param": "lambda", "value": lam, **row})
    elif args.param == "nograd_m":
        for raw in values:
            m = int(raw)
            ckpt, _ = run_training(cfg, nograd_m=m)
            row = _sweep_once(cfg, db, queries, qrels, ckpt, cfg.blend, k, None, args.reps)
            rows.append({"param": "nograd_m", "value": m, **row})
    elif args.param == "infer_cap":
        ckpt, _ = run_training(cfg)
        for raw in values:
            cap = None if raw == "all" else int(raw)
            row = _sweep_once(cfg, db, queries, qrels, ckpt, cfg.blend, k, cap, args.reps)
            rows.append({"param": "infer_cap", "value": raw, **row})
    else:
        raise CliError(EXIT_CONFIG, f"unknown sweep param {args.param!r}")

    lines = [json.dumps(row, sort_keys=True) for row in rows]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daqu",
        description="Metadata-augmented dense retrieval over relational data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train the dual encoder with metadata")
    p.add_argument("--config", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--loss-log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build the dense document index")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-index", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="rank documents for a query file")
    p.add_argument("--config", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--mode", required=True,
                   choices=[*MODES, "bm25"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--infer-cap", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="acc,recall,mrr,map")
    p.add_argument("--k-list", default="10,100")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the pipeline across parameter values")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=["lambda", "nograd_m", "infer_cap"])
    p.add_argument("--values", required=True)
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except VersionMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION


if __name__ == "__main__":
    sys.exit(main())
