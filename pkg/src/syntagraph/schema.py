"""Relational schemas: ingestion from Spider-style ``tables.json`` documents
and the intra-schema relations (foreign key, ownership, primary key).

A schema document is a JSON object with the usual Spider fields::

    {"db_id": "ship_1",
     "table_names": ["ship"],
     "column_names": [[-1, "*"], [0, "ship id"], [0, "name"]],
     "column_types": ["text", "number", "text"],
     "primary_keys": [1],
     "foreign_keys": [],
     "cell_values": [null, null, ["Titanic"]]}

A top-level list of such objects (a full ``tables.json``) is accepted when it
holds one database or when ``db_id`` is given. Entries of ``column_names``
whose table index is -1 (the ``*`` pseudo-column) are dropped and the
remaining column ids renumbered; key references are remapped accordingly.
Optional ``table_lemmas`` / ``column_lemmas`` (lists of token lists, aligned
with ``table_names`` / ``column_names``) override the default lemmas.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import ParseError, ValidationError

__all__ = [
    "DataType",
    "Column",
    "Table",
    "Schema",
    "SchemaRelation",
    "load_schema",
    "schema_relations",
    "schema_from_tables",
    "tokenize_name",
]

_SPLIT = re.compile(r"[\s_]+")


class DataType(enum.Enum):
    TEXT = "text"
    NUMBER = "number"
    TIME = "time"
    BOOLEAN = "boolean"
    OTHER = "other"

    @classmethod
    def parse(cls, raw) -> "DataType":
        try:
            return cls(str(raw).strip().lower())
        except ValueError:
            return cls.OTHER


def tokenize_name(name: str) -> tuple[str, ...]:
    """Lowercase a schema item name and split it on whitespace/underscores."""
    return tuple(t for t in _SPLIT.split(name.strip().lower()) if t)


@dataclass(frozen=True)
class Column:
    id: int
    table_id: int
    name_tokens: tuple[str, ...]
    lemmas: tuple[str, ...]
    data_type: DataType = DataType.TEXT
    is_primary: bool = False
    cell_values: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class Table:
    id: int
    name_tokens: tuple[str, ...]
    lemmas: tuple[str, ...]
    column_ids: tuple[int, ...]


@dataclass(frozen=True)
class Schema:
    db_id: str
    tables: tuple[Table, ...]
    columns: tuple[Column, ...]
    foreign_keys: tuple[tuple[int, int], ...] = ()

    def validate(self) -> "Schema":
        """Raise :class:`ValidationError` on the first violated invariant."""
        if not self.tables:
            raise ValidationError(f"schema {self.db_id!r} has no tables")
        for pos, table in enumerate(self.tables):
            if table.id != pos:
                raise ValidationError(f"table {table.id} is out of order (expected id {pos})")
            if not table.name_tokens:
                raise ValidationError(f"table {table.id} has an empty name")
            if not table.column_ids:
                raise ValidationError(f"table {table.id} ({' '.join(table.name_tokens)}) has no columns")
        for pos, col in enumerate(self.columns):
            if col.id != pos:
                raise ValidationError(f"column {col.id} is out of order (expected id {pos})")
            if not 0 <= col.table_id < len(self.tables):
                raise ValidationError(f"column {col.id} references missing table {col.table_id}")
            if not col.name_tokens:
                raise ValidationError(f"column {col.id} has an empty name")
            if col.id not in self.tables[col.table_id].column_ids:
                raise ValidationError(
                    f"column {col.id} claims table {col.table_id} but is not listed by it"
                )
        for table in self.tables:
            for cid in table.column_ids:
                if not 0 <= cid < len(self.columns) or self.columns[cid].table_id != table.id:
                    raise ValidationError(f"table {table.id} lists column {cid} it does not own")
        seen = set()
        for src, dst in self.foreign_keys:
            for end in (src, dst):
                if not 0 <= end < len(self.columns):
                    raise ValidationError(f"foreign key ({src}, {dst}) references missing column {end}")
            if src == dst:
                raise ValidationError(f"foreign key on column {src} points at itself")
            if (src, dst) in seen:
                raise ValidationError(f"duplicate foreign key ({src}, {dst})")
            seen.add((src, dst))
        return self

    def primary_columns(self, table_id: int) -> list[int]:
        return [c for c in self.tables[table_id].column_ids if self.columns[c].is_primary]


@dataclass(frozen=True)
class SchemaRelation:
    """A directed intra-schema edge. ``source``/``target`` are
    ``("table"|"column", id)`` pairs."""

    source: tuple[str, int]
    target: tuple[str, int]
    label: str  # "foreign_key" | "has" | "primary_key"


def _as_lemmas(raw, default: tuple[str, ...], what: str) -> tuple[str, ...]:
    if raw is None:
        return default
    if isinstance(raw, str):
        raw = raw.split()
    if not isinstance(raw, list) or not all(isinstance(t, str) for t in raw):
        raise ParseError(f"{what}: lemmas must be a list of strings")
    return tuple(t.lower() for t in raw)


def _require(doc: dict, key: str, kind):
    if key not in doc:
        raise ParseError(f"schema document lacks field {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise ParseError(f"field {key!r} has type {type(value).__name__}")
    return value


def _flatten_keys(raw) -> list[int]:
    # Spider's newer releases nest composite primary keys as lists.
    out = []
    for item in raw:
        if isinstance(item, list):
            out.extend(_flatten_keys(item))
        elif isinstance(item, int) and not isinstance(item, bool):
            out.append(item)
        else:
            raise ParseError(f"primary key entry {item!r} is not an integer")
    return out


def _from_dict(doc: dict) -> Schema:
    db_id = str(doc.get("db_id", ""))
    table_names = _require(doc, "table_names", list)
    column_names = _require(doc, "column_names", list)
    column_types = doc.get("column_types") or ["text"] * len(column_names)
    primary_keys = _flatten_keys(doc.get("primary_keys") or [])
    foreign_keys = doc.get("foreign_keys") or []
    cell_values = doc.get("cell_values") or [None] * len(column_names)
    table_lemmas = doc.get("table_lemmas") or [None] * len(table_names)
    column_lemmas = doc.get("column_lemmas") or [None] * len(column_names)

    for key, seq in (("column_types", column_types), ("cell_values", cell_values),
                     ("column_lemmas", column_lemmas)):
        if not isinstance(seq, list) or len(seq) != len(column_names):
            raise ParseError(f"field {key!r} must align with column_names ({len(column_names)} entries)")
    if not isinstance(table_lemmas, list) or len(table_lemmas) != len(table_names):
        raise ParseError("field 'table_lemmas' must align with table_names")

    # Drop the "*" pseudo-column(s) and remember how raw ids map to ours.
    remap: dict[int, int] = {}
    kept = []
    for raw_id, entry in enumerate(column_names):
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not isinstance(entry[0], int) or not isinstance(entry[1], str)):
            raise ParseError(f"column_names[{raw_id}] must be a [table_index, name] pair")
        if entry[0] == -1:
            continue
        remap[raw_id] = len(kept)
        kept.append(raw_id)

    def mapped(raw_id, what):
        if not isinstance(raw_id, int) or isinstance(raw_id, bool):
            raise ParseError(f"{what} entry {raw_id!r} is not an integer")
        if raw_id not in remap:
            raise ValidationError(f"{what} references missing column {raw_id}")
        return remap[raw_id]

    pk = {mapped(p, "primary key") for p in primary_keys}

    columns = []
    for new_id, raw_id in enumerate(kept):
        table_id, name = column_names[raw_id]
        tokens = tokenize_name(name)
        values = cell_values[raw_id]
        if values is not None:
            if not isinstance(values, list):
                raise ParseError(f"cell_values[{raw_id}] must be a list or null")
            values = tuple(str(v) for v in values)
        columns.append(Column(
            id=new_id,
            table_id=table_id,
            name_tokens=tokens,
            lemmas=_as_lemmas(column_lemmas[raw_id], tokens, f"column {raw_id}"),
            data_type=DataType.parse(column_types[raw_id]),
            is_primary=new_id in pk,
            cell_values=values,
        ))

    tables = []
    for tid, name in enumerate(table_names):
        if not isinstance(name, str):
            raise ParseError(f"table_names[{tid}] is not a string")
        tokens = tokenize_name(name)
        tables.append(Table(
            id=tid,
            name_tokens=tokens,
            lemmas=_as_lemmas(table_lemmas[tid], tokens, f"table {tid}"),
            column_ids=tuple(c.id for c in columns if c.table_id == tid),
        ))

    fks = []
    for pair in foreign_keys:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ParseError(f"foreign key {pair!r} is not a pair")
        fks.append((mapped(pair[0], "foreign key"), mapped(pair[1], "foreign key")))

    return Schema(db_id=db_id, tables=tuple(tables), columns=tuple(columns),
                  foreign_keys=tuple(fks)).validate()


def load_schema(document: Union[bytes, str], db_id: Optional[str] = None) -> Schema:
    """Parse and validate a schema document.

    Raises :class:`ParseError` for malformed JSON or wrongly typed fields and
    :class:`ValidationError` for dangling references or empty tables.
    """
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"schema document is not valid JSON: {exc}") from None
    if isinstance(doc, list):
        if db_id is not None:
            matches = [d for d in doc if isinstance(d, dict) and d.get("db_id") == db_id]
            if not matches:
                raise ValidationError(f"no database with db_id {db_id!r}")
            doc = matches[0]
        elif len(doc) == 1:
            doc = doc[0]
        else:
            raise ParseError(f"document holds {len(doc)} databases; pass db_id to choose one")
    if not isinstance(doc, dict):
        raise ParseError("schema document must be a JSON object")
    return _from_dict(doc)


def schema_relations(schema: Schema) -> list[SchemaRelation]:
    """Directed schema-structure edges, ordered by table id then column id,
    followed by foreign keys in document order."""
    out = []
    for table in schema.tables:
        for cid in table.column_ids:
            col = schema.columns[cid]
            if col.is_primary:
                out.append(SchemaRelation(("table", table.id), ("column", cid), "primary_key"))
            out.append(SchemaRelation(("table", table.id), ("column", cid), "has"))
    for src, dst in schema.foreign_keys:
        out.append(SchemaRelation(("column", src), ("column", dst), "foreign_key"))
    return out


def schema_from_tables(db_id: str, tables: Sequence[tuple[str, Sequence[str]]],
                       primary: Sequence[int] = (), foreign_keys: Sequence[tuple[int, int]] = (),
                       cell_values: Optional[dict[int, Sequence[str]]] = None) -> Schema:
    """Build a schema from ``[(table_name, [column names...]), ...]`` without a
    document round-trip. Column ids run in table order."""
    cell_values = cell_values or {}
    columns, table_objs = [], []
    for tid, (tname, cnames) in enumerate(tables):
        ids = []
        for cname in cnames:
            cid = len(columns)
            tokens = tokenize_name(cname)
            vals = cell_values.get(cid)
            columns.append(Column(cid, tid, tokens, tokens, DataType.TEXT, cid in set(primary),
                                  tuple(vals) if vals is not None else None))
            ids.append(cid)
        tokens = tokenize_name(tname)
        table_objs.append(Table(tid, tokens, tokens, tuple(ids)))
    return Schema(db_id, tuple(table_objs), tuple(columns), tuple(map(tuple, foreign_keys)))
