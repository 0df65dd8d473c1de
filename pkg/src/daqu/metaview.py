"""Declarative metadata categories and per-query attribute extraction.

A category names one column of interest reachable from the query row via an
explicit chain of link hops (zero hops = the query row's own columns). Walking
all categories for a query yields its attribute set: per-category ordered
lists of text values, the raw material for metadata encoding and for the
text-expansion baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .relstore import Database, Link, Row, rows_linked

TEMPORAL_NONE = "none"
TEMPORAL_STRICTLY_BEFORE = "strictly_before_query_timestamp"


class SpecTypeError(ValueError):
    """A category spec whose hop chain or target does not fit the schema."""


class MissingTimestampError(ValueError):
    """Temporal filtering requested but a row involved carries no timestamp."""


@dataclass(frozen=True)
class Hop:
    link: str  # "<table>.<column>" of the foreign-key side
    direction: str  # "forward" | "reverse"


@dataclass(frozen=True)
class CategorySpec:
    name: str
    start_table: str
    hops: tuple[Hop, ...]
    target_attribute: str
    temporal_filter: str = TEMPORAL_NONE
    exclude_query_row: bool = False

    @staticmethod
    def from_dict(obj: dict) -> "CategorySpec":
        hops = tuple(Hop(h["link"], h["direction"]) for h in obj.get("hops", []))
        return CategorySpec(
            name=obj["name"],
            start_table=obj["start_table"],
            hops=hops,
            target_attribute=obj["target_attribute"],
            temporal_filter=obj.get("temporal_filter", TEMPORAL_NONE),
            exclude_query_row=bool(obj.get("exclude_query_row", False)),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "start_table": self.start_table,
            "hops": [{"link": h.link, "direction": h.direction} for h in self.hops],
            "target_attribute": self.target_attribute,
            "temporal_filter": self.temporal_filter,
            "exclude_query_row": self.exclude_query_row,
        }


@dataclass(frozen=True)
class AttrItem:
    source: tuple[str, str]  # (table, row id) of the row the value came from
    value: str


@dataclass
class CategoryAttributes:
    name: str
    items: list[AttrItem]


@dataclass
class AttributeSet:
    """Extracted attributes, categories in spec order, items in canonical order."""

    categories: list[CategoryAttributes]

    def texts(self) -> list[str]:
        """All values, category order then within-category order."""
        return [item.value for cat in self.categories for item in cat.items]

    @property
    def empty(self) -> bool:
        return all(not cat.items for cat in self.categories)


@dataclass
class SpecReport:
    spec_name: str
    ok: bool
    errors: list[str] = field(default_factory=list)


def _walk_chain(db: Database, spec: CategorySpec) -> list[tuple[str, str, Link]]:
    """Resolve the hop chain into (source table, dest table, link) steps."""
    steps = []
    table = spec.start_table
    if table not in db.tables:
        raise SpecTypeError(f"{spec.name}: unknown start table {table!r}")
    for i, hop in enumerate(spec.hops):
        link = db.links.by_name.get(hop.link)
        if link is None:
            raise SpecTypeError(f"{spec.name}: hop {i} names unknown link {hop.link!r}")
        if hop.direction == "forward":
            src, dst = link.source.table, link.target.table
        elif hop.direction == "reverse":
            src, dst = link.target.table, link.source.table
        else:
            raise SpecTypeError(f"{spec.name}: hop {i} has bad direction {hop.direction!r}")
        if src != table:
            raise SpecTypeError(
                f"{spec.name}: hop {i} starts at {src!r} but the chain is at {table!r}"
            )
        steps.append((src, dst, link))
        table = dst

    kind = db.tables[table].schema.attribute_kind(spec.target_attribute)
    if kind is None:
        raise SpecTypeError(
            f"{spec.name}: table {table!r} has no attribute {spec.target_attribute!r}"
        )
    if kind != "text":
        raise SpecTypeError(
            f"{spec.name}: target {table}.{spec.target_attribute} is {kind}, not text"
        )
    if spec.temporal_filter not in (TEMPORAL_NONE, TEMPORAL_STRICTLY_BEFORE):
        raise SpecTypeError(
            f"{spec.name}: unknown temporal filter {spec.temporal_filter!r}"
        )
    return steps


def validate_specs(db: Database, specs: list[CategorySpec]) -> list[SpecReport]:
    """Type-check every spec against the schema; one report per spec."""
    reports = []
    for spec in specs:
        try:
            _walk_chain(db, spec)
        except SpecTypeError as exc:
            reports.append(SpecReport(spec.name, ok=False, errors=[str(exc)]))
        else:
            reports.append(SpecReport(spec.name, ok=True))
    return reports


def extract_attributes(
    db: Database,
    query_row: tuple[str, str],
    specs: list[CategorySpec],
) -> AttributeSet:
    """Collect every spec's attribute values for one query row.

    Categories appear in spec order; a category with no surviving value is
    present but empty. Absent cells are dropped, duplicate terminal rows are
    kept once, and the strictly-before filter compares each candidate row's
    timestamp against the query row's.
    """
    table_name, row_id = query_row
    qrow = db.row(table_name, row_id)

    categories: list[CategoryAttributes] = []
    for spec in specs:
        if spec.start_table != table_name:
            raise SpecTypeError(
                f"{spec.name}: starts at {spec.start_table!r} but query row is in {table_name!r}"
            )
        steps = _walk_chain(db, spec)

        frontier: list[Row] = [qrow]
        current = spec.start_table
        for (src, dst, link), hop in zip(steps, spec.hops):
            nxt: list[Row] = []
            for row in frontier:
                nxt.extend(rows_linked(db, (current, row.id), link, hop.direction))
            frontier = nxt
            current = dst

        items: list[AttrItem] = []
        seen: set[str] = set()
        for row in frontier:
            if row.id in seen:
                continue
            seen.add(row.id)
            if spec.exclude_query_row and current == table_name and row.id == row_id:
                continue
            if spec.temporal_filter == TEMPORAL_STRICTLY_BEFORE:
                if qrow.timestamp is None:
                    raise MissingTimestampError(
                        f"{spec.name}: query row {table_name}:{row_id} has no timestamp"
                    )
                if row.timestamp is None:
                    raise MissingTimestampError(
                        f"{spec.name}: row {current}:{row.id} has no timestamp"
                    )
                if not row.timestamp < qrow.timestamp:
                    continue
            value = row.attr_values.get(spec.target_attribute)
            if value is None:
                continue
            items.append(AttrItem(source=(current, row.id), value=value))
        categories.append(CategoryAttributes(name=spec.name, items=items))
    return AttributeSet(categories)


def specs_from_config(entries: list[dict]) -> list[CategorySpec]:
    return [CategorySpec.from_dict(e) for e in entries]
