"""In-memory relational store: schema, ingestion, key validation, link traversal.

A database is a set of named tables, each with a primary-key column, optional
foreign-key columns pointing at other tables' primary keys, and plain attribute
columns (text, plus at most one timestamp column per table). Everything is
immutable after ``load_database`` returns, so readers never need locks.

Key values are opaque strings compared by exact equality; integer ids are
carried as their decimal strings. Absent cells are distinct from empty strings
and simply contribute nothing downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class SchemaError(ValueError):
    """Schema file or row data that does not fit the declared schema."""


class DuplicateIdError(SchemaError):
    """Two rows in one table share a primary-key value."""


class DanglingKeyError(SchemaError):
    """A present foreign-key value resolves to no primary key in the target table."""


class UnknownLinkError(KeyError):
    """A link name that is not part of the database's link set."""


class UnknownRowError(KeyError):
    """A (table, row id) pair that does not exist."""


@dataclass(frozen=True)
class ColumnRef:
    table: str
    column: str

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Link:
    """Directed key relation: a foreign-key column referencing a primary key."""

    source: ColumnRef  # foreign-key side
    target: ColumnRef  # primary-key side

    @property
    def name(self) -> str:
        # Links are addressed by their FK column, unique per schema.
        return str(self.source)


class LinkSet:
    """All key relations of a schema, with forward and reverse lookup."""

    def __init__(self, links: list[Link]):
        self.links: tuple[Link, ...] = tuple(links)
        self.by_name: dict[str, Link] = {ln.name: ln for ln in self.links}
        incoming: dict[str, list[Link]] = {}
        for ln in self.links:
            incoming.setdefault(ln.target.table, []).append(ln)
        self.incoming: dict[str, tuple[Link, ...]] = {
            t: tuple(ls) for t, ls in incoming.items()
        }

    def __len__(self) -> int:
        return len(self.links)

    def __iter__(self):
        return iter(self.links)

    def get(self, name: str) -> Link:
        try:
            return self.by_name[name]
        except KeyError:
            raise UnknownLinkError(name) from None


@dataclass(frozen=True)
class TableSchema:
    name: str
    primary_key: str
    foreign_keys: tuple[tuple[str, ColumnRef], ...]  # (local column, referenced pk)
    attributes: tuple[tuple[str, str], ...]  # (column, kind in {text, timestamp})

    @property
    def timestamp_column(self) -> str | None:
        for col, kind in self.attributes:
            if kind == "timestamp":
                return col
        return None

    def attribute_kind(self, column: str) -> str | None:
        for col, kind in self.attributes:
            if col == column:
                return kind
        return None


@dataclass(frozen=True)
class Row:
    id: str
    fk_values: dict[str, str]  # only present values
    attr_values: dict[str, str]  # only present text values
    timestamp: int | None = None


@dataclass
class Table:
    schema: TableSchema
    rows: list[Row]  # file order
    by_id: dict[str, Row] = field(default_factory=dict)
    # fk column -> key value -> row ids referencing it, ascending
    fk_index: dict[str, dict[str, list[str]]] = field(default_factory=dict)


class Database:
    """Immutable collection of loaded tables plus their validated link set."""

    def __init__(self, tables: dict[str, Table], links: LinkSet):
        self.tables = tables
        self.links = links

    def table(self, name: str) -> Table:
        try:
            return self.tables[name]
        except KeyError:
            raise SchemaError(f"unknown table {name!r}") from None

    def row(self, table: str, row_id: str) -> Row:
        tab = self.table(table)
        try:
            return tab.by_id[row_id]
        except KeyError:
            raise UnknownRowError(f"{table}:{row_id}") from None


def parse_timestamp(value) -> int:
    """Epoch seconds from a raw integer, a decimal string, or ISO-8601 text."""
    if isinstance(value, bool):
        raise SchemaError(f"not a timestamp: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        stripped = value.strip()
        if stripped.lstrip("-").isdigit():
            return int(stripped)
        try:
            dt = datetime.fromisoformat(stripped.replace("Z", "+00:00"))
        except ValueError:
            raise SchemaError(f"not a timestamp: {value!r}") from None
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    raise SchemaError(f"not a timestamp: {value!r}")


def _cell_str(value, where: str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    raise SchemaError(f"{where}: expected string cell, got {type(value).__name__}")


def parse_schema(doc: dict) -> tuple[dict[str, TableSchema], LinkSet]:
    """Validate a parsed schema document and derive its link set."""
    if not isinstance(doc, dict) or not isinstance(doc.get("tables"), list):
        raise SchemaError("schema must be an object with a 'tables' list")

    schemas: dict[str, TableSchema] = {}
    for entry in doc["tables"]:
        name = entry.get("name")
        pk = entry.get("primary_key")
        if not name or not pk:
            raise SchemaError(f"table entry missing name or primary_key: {entry!r}")
        if name in schemas:
            raise SchemaError(f"duplicate table {name!r}")
        fks = tuple(
            (fk["column"], ColumnRef(fk["ref_table"], fk["ref_column"]))
            for fk in entry.get("foreign_keys", [])
        )
        attrs = tuple(
            (a["column"], a["kind"]) for a in entry.get("attributes", [])
        )
        for col, kind in attrs:
            if kind not in ("text", "timestamp"):
                raise SchemaError(f"{name}.{col}: unknown attribute kind {kind!r}")
        ts_cols = [col for col, kind in attrs if kind == "timestamp"]
        if len(ts_cols) > 1:
            raise SchemaError(f"table {name!r} declares {len(ts_cols)} timestamp columns")
        columns = [pk] + [c for c, _ in fks] + [c for c, _ in attrs]
        if len(set(columns)) != len(columns):
            raise SchemaError(f"table {name!r}: key and attribute columns overlap")
        schemas[name] = TableSchema(name, pk, fks, attrs)

    links: list[Link] = []
    for schema in schemas.values():
        for col, ref in schema.foreign_keys:
            if ref.table not in schemas:
                raise SchemaError(f"{schema.name}.{col} references unknown table {ref.table!r}")
            if ref.column != schemas[ref.table].primary_key:
                raise SchemaError(
                    f"{schema.name}.{col} must reference the primary key of "
                    f"{ref.table!r}, not {ref.column!r}"
                )
            links.append(Link(ColumnRef(schema.name, col), ref))
    return schemas, LinkSet(links)


def _parse_row(schema: TableSchema, obj: dict, lineno: int) -> Row:
    where = f"{schema.name}.jsonl:{lineno}"
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: row must be an object")

    known = {schema.primary_key}
    known.update(c for c, _ in schema.foreign_keys)
    known.update(c for c, _ in schema.attributes)
    for key in obj:
        if key not in known:
            raise SchemaError(f"{where}: column {key!r} not in schema")

    pk_value = obj.get(schema.primary_key)
    if pk_value is None:
        raise SchemaError(f"{where}: missing primary key {schema.primary_key!r}")
    row_id = _cell_str(pk_value, where)

    fk_values: dict[str, str] = {}
    for col, _ in schema.foreign_keys:
        value = obj.get(col)
        if value is not None:
            fk_values[col] = _cell_str(value, where)

    attr_values: dict[str, str] = {}
    timestamp: int | None = None
    for col, kind in schema.attributes:
        value = obj.get(col)
        if value is None:
            continue
        if kind == "timestamp":
            timestamp = parse_timestamp(value)
        else:
            attr_values[col] = _cell_str(value, where)

    return Row(id=row_id, fk_values=fk_values, attr_values=attr_values, timestamp=timestamp)


def load_database(schema_file: str | Path, data_dir: str | Path) -> Database:
    """Load schema plus one JSON-Lines file per table and validate all keys.

    Row order is file order, so two loads of the same files produce identical
    databases. Raises SchemaError, DuplicateIdError, or DanglingKeyError.
    """
    schema_file = Path(schema_file)
    data_dir = Path(data_dir)
    try:
        doc = json.loads(schema_file.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read schema {schema_file}: {exc}") from exc
    schemas, links = parse_schema(doc)

    tables: dict[str, Table] = {}
    for name, schema in schemas.items():
        path = data_dir / f"{name}.jsonl"
        if not path.exists():
            raise SchemaError(f"missing data file {path}")
        rows: list[Row] = []
        by_id: dict[str, Row] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{path}:{lineno}: bad JSON ({exc})") from exc
                row = _parse_row(schema, obj, lineno)
                if row.id in by_id:
                    raise DuplicateIdError(f"{name}:{row.id} appears twice")
                by_id[row.id] = row
                rows.append(row)

        fk_index: dict[str, dict[str, list[str]]] = {}
        for col, _ in schema.foreign_keys:
            index: dict[str, list[str]] = {}
            for row in rows:
                value = row.fk_values.get(col)
                if value is not None:
                    index.setdefault(value, []).append(row.id)
            for ids in index.values():
                ids.sort()
            fk_index[col] = index
        tables[name] = Table(schema=schema, rows=rows, by_id=by_id, fk_index=fk_index)

    # Reject dangling references before anything downstream can observe them.
    for link in links:
        source = tables[link.source.table]
        target = tables[link.target.table]
        for row in source.rows:
            value = row.fk_values.get(link.source.column)
            if value is not None and value not in target.by_id:
                raise DanglingKeyError(
                    f"{link.source.table}:{row.id}.{link.source.column}={value!r} "
                    f"has no matching row in {link.target.table}"
                )
    return Database(tables, links)


def rows_linked(
    db: Database,
    from_row: tuple[str, str],
    link: Link | str,
    direction: str,
) -> list[Row]:
    """Rows reachable from ``from_row`` over one link.

    forward: the 0-or-1 target-table row whose primary key equals the source
    row's foreign-key value. reverse: every source-table row whose foreign key
    equals the given row's primary key, ordered by row id ascending.
    """
    if isinstance(link, str):
        link = db.links.get(link)
    elif link.name not in db.links.by_name:
        raise UnknownLinkError(link.name)
    if direction not in ("forward", "reverse"):
        raise ValueError(f"direction must be forward or reverse, got {direction!r}")

    table_name, row_id = from_row
    row = db.row(table_name, row_id)

    if direction == "forward":
        if table_name != link.source.table:
            raise UnknownLinkError(
                f"{link.name} cannot be walked forward from table {table_name!r}"
            )
        value = row.fk_values.get(link.source.column)
        if value is None:
            return []
        return [db.tables[link.target.table].by_id[value]]

    if table_name != link.target.table:
        raise UnknownLinkError(
            f"{link.name} cannot be walked in reverse from table {table_name!r}"
        )
    source = db.tables[link.source.table]
    ids = source.fk_index[link.source.column].get(row.id, [])
    return [source.by_id[i] for i in ids]
