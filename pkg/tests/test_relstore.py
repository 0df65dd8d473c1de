import json

import numpy as np
import pytest

from daqu.relstore import (
    DanglingKeyError,
    DuplicateIdError,
    SchemaError,
    UnknownLinkError,
    UnknownRowError,
    load_database,
    parse_timestamp,
    rows_linked,
)

from conftest import write_toy_database
from oracles import join_rows_oracle


def test_load_toy_database(toy_db):
    assert set(toy_db.tables) == {"users", "posts", "comments"}
    assert len(toy_db.links) == 4
    assert toy_db.row("posts", "p1").attr_values["Tags"] == "pooling sets"
    assert toy_db.row("posts", "p1").timestamp == 100


def test_amazon_style_schema_loads(tmp_path):
    schema = {
        "tables": [
            {
                "name": "product",
                "primary_key": "ProductId",
                "foreign_keys": [],
                "attributes": [{"column": "Description", "kind": "text"}],
            },
            {
                "name": "review",
                "primary_key": "ReviewId",
                "foreign_keys": [
                    {"column": "ProductId", "ref_table": "product", "ref_column": "ProductId"}
                ],
                "attributes": [{"column": "Text", "kind": "text"}],
            },
        ]
    }
    tables = {
        "product": [{"ProductId": "p7", "Description": "a fine product"}],
        "review": [{"ReviewId": "r1", "ProductId": "p7", "Text": "loved it"}],
    }
    schema_file, data_dir = write_toy_database(tmp_path, schema, tables)
    db = load_database(schema_file, data_dir)
    assert [ln.name for ln in db.links] == ["review.ProductId"]
    link = db.links.get("review.ProductId")
    assert [r.id for r in rows_linked(db, ("review", "r1"), link, "forward")] == ["p7"]


def test_single_table_no_links(tmp_path):
    schema = {
        "tables": [
            {"name": "t", "primary_key": "Id", "foreign_keys": [],
             "attributes": [{"column": "X", "kind": "text"}]}
        ]
    }
    schema_file, data_dir = write_toy_database(tmp_path, schema, {"t": [{"Id": "1", "X": "v"}]})
    db = load_database(schema_file, data_dir)
    assert len(db.links) == 0


def test_dangling_fk_rejected(tmp_path):
    tables = {
        "users": [{"UserId": "u1"}],
        "posts": [{"PostId": "p1", "OwnerUserId": "zz", "CreationDate": "5"}],
        "comments": [],
    }
    schema_file, data_dir = write_toy_database(tmp_path, tables=tables)
    with pytest.raises(DanglingKeyError, match="posts:p1"):
        load_database(schema_file, data_dir)


def test_duplicate_id_rejected(tmp_path):
    tables = {"users": [{"UserId": "u1"}, {"UserId": "u1"}], "posts": [], "comments": []}
    schema_file, data_dir = write_toy_database(tmp_path, tables=tables)
    with pytest.raises(DuplicateIdError):
        load_database(schema_file, data_dir)


def test_unknown_column_rejected(tmp_path):
    tables = {"users": [{"UserId": "u1", "Oops": "x"}], "posts": [], "comments": []}
    schema_file, data_dir = write_toy_database(tmp_path, tables=tables)
    with pytest.raises(SchemaError, match="Oops"):
        load_database(schema_file, data_dir)


def test_missing_data_file(tmp_path):
    schema_file, data_dir = write_toy_database(tmp_path, tables={"users": [], "posts": []})
    with pytest.raises(SchemaError, match="comments.jsonl"):
        load_database(schema_file, data_dir)


def test_fk_must_point_at_primary_key(tmp_path):
    schema = {
        "tables": [
            {"name": "a", "primary_key": "Id", "foreign_keys": [],
             "attributes": [{"column": "X", "kind": "text"}]},
            {"name": "b", "primary_key": "Id",
             "foreign_keys": [{"column": "AX", "ref_table": "a", "ref_column": "X"}],
             "attributes": []},
        ]
    }
    schema_file, data_dir = write_toy_database(tmp_path, schema, {"a": [], "b": []})
    with pytest.raises(SchemaError, match="primary key"):
        load_database(schema_file, data_dir)


def test_timestamp_parsing():
    assert parse_timestamp(1234) == 1234
    assert parse_timestamp("1234") == 1234
    assert parse_timestamp("1970-01-01T00:02:03+00:00") == 123
    assert parse_timestamp("1970-01-01T00:02:03Z") == 123
    assert parse_timestamp("1970-01-02") == 86400
    with pytest.raises(SchemaError):
        parse_timestamp("not a time")


def test_forward_link(toy_db):
    link = toy_db.links.get("posts.OwnerUserId")
    rows = rows_linked(toy_db, ("posts", "p1"), link, "forward")
    assert [r.id for r in rows] == ["u1"]


def test_reverse_link_sorted(toy_db):
    link = toy_db.links.get("posts.ParentId")
    rows = rows_linked(toy_db, ("posts", "p1"), link, "reverse")
    assert [r.id for r in rows] == ["p2", "p4"]


def test_absent_fk_forward_empty(toy_db):
    link = toy_db.links.get("posts.ParentId")
    assert rows_linked(toy_db, ("posts", "p1"), link, "forward") == []


def test_unknown_row_and_link(toy_db):
    link = toy_db.links.get("posts.OwnerUserId")
    with pytest.raises(UnknownRowError):
        rows_linked(toy_db, ("posts", "nope"), link, "forward")
    with pytest.raises(UnknownLinkError):
        toy_db.links.get("posts.Nothing")


def test_load_validate_totality(toy_db):
    # every present FK resolves, by exhaustive scan
    for link in toy_db.links:
        source = toy_db.tables[link.source.table]
        target = toy_db.tables[link.target.table]
        for row in source.rows:
            value = row.fk_values.get(link.source.column)
            if value is not None:
                assert value in target.by_id


def _random_database(tmp_path, rng, tag):
    n_tables = int(rng.integers(2, 6))
    schema = {"tables": []}
    tables = {}
    names = [f"t{i}" for i in range(n_tables)]
    for i, name in enumerate(names):
        fks = []
        for j in range(i):  # only link to earlier tables: keys always resolvable
            if rng.random() < 0.5:
                fks.append({"column": f"fk{j}", "ref_table": names[j], "ref_column": "Id"})
        schema["tables"].append(
            {"name": name, "primary_key": "Id",
             "foreign_keys": fks,
             "attributes": [{"column": "Val", "kind": "text"}]}
        )
    for i, name in enumerate(names):
        n_rows = int(rng.integers(1, 51))
        rows = []
        for r in range(n_rows):
            row = {"Id": f"{name}r{r}", "Val": f"v{rng.integers(0, 5)}"}
            for fk in schema["tables"][i]["foreign_keys"]:
                if rng.random() < 0.8:
                    target_rows = tables[fk["ref_table"]]
                    row[fk["column"]] = target_rows[int(rng.integers(0, len(target_rows)))]["Id"]
            rows.append(row)
        tables[name] = rows
    schema_file, data_dir = write_toy_database(tmp_path / tag, schema, tables)
    return load_database(schema_file, data_dir)


def test_join_matches_nested_loop_oracle(tmp_path):
    rng = np.random.default_rng(42)
    for trial in range(10):
        db = _random_database(tmp_path, rng, f"db{trial}")
        for link in db.links:
            for row in db.tables[link.source.table].rows:
                got = rows_linked(db, (link.source.table, row.id), link, "forward")
                want = join_rows_oracle(db, link.source.table, row.id, link, "forward")
                assert [r.id for r in got] == [r.id for r in want]
            for row in db.tables[link.target.table].rows:
                got = rows_linked(db, (link.target.table, row.id), link, "reverse")
                want = join_rows_oracle(db, link.target.table, row.id, link, "reverse")
                assert [r.id for r in got] == [r.id for r in want]


def test_deterministic_load(tmp_path):
    schema_file, data_dir = write_toy_database(tmp_path)
    db1 = load_database(schema_file, data_dir)
    db2 = load_database(schema_file, data_dir)
    for name in db1.tables:
        assert [r.id for r in db1.tables[name].rows] == [r.id for r in db2.tables[name].rows]
        assert db1.tables[name].rows == db2.tables[name].rows
    assert [ln.name for ln in db1.links] == [ln.name for ln in db2.links]
