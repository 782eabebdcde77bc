"""Question-schema interaction graph.

Nodes are question tokens, then tables, then columns. Every ordered node pair
carries exactly one :class:`RelationLabel`; the label family is fixed by the
kinds of the two endpoints:

=============  ==========================================================
block          labels
=============  ==========================================================
Q -> Q         Forward-Syntax, Backward-Syntax, None-Syntax
Q -> T         None/Partial/Exact-Linking (question side)
Q -> C         None/Partial/Exact/Value-Linking (question side)
T -> C         Primary-Key, Has, default
C -> C         Foreign-Key, its reverse, both directions, default
T -> T         default
=============  ==========================================================

The reverse blocks (T -> Q, C -> Q, C -> T) hold the inverse of the label
across the diagonal, and the diagonal itself is always ``Self``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .question import (
    DependencyParse,
    QuestionToken,
    question_relation_matrix,
)
from .schema import Schema

__all__ = [
    "NodeKind",
    "NodeRef",
    "RelationLabel",
    "LinkLabel",
    "SchemaLinking",
    "SeqItem",
    "FlattenedSequence",
    "InteractionGraph",
    "FORMAT_VERSION",
    "flatten_input",
    "link_relations",
    "build_graph",
    "export_graph",
    "import_graph",
]

FORMAT_VERSION = 1


class NodeKind(enum.Enum):
    QUESTION = "question"
    TABLE = "table"
    COLUMN = "column"


Q, T, C = NodeKind.QUESTION, NodeKind.TABLE, NodeKind.COLUMN


_RANK = {Q: 0, T: 1, C: 2}


@dataclass(frozen=True)
class NodeRef:
    kind: NodeKind
    local_index: int

    def __lt__(self, other: "NodeRef") -> bool:
        return (_RANK[self.kind], self.local_index) < (_RANK[other.kind], other.local_index)


class RelationLabel(enum.IntEnum):
    SELF = 0
    FORWARD_SYNTAX = enum.auto()
    BACKWARD_SYNTAX = enum.auto()
    NONE_SYNTAX = enum.auto()
    QT_NONE = enum.auto()
    QT_PARTIAL = enum.auto()
    QT_EXACT = enum.auto()
    TQ_NONE = enum.auto()
    TQ_PARTIAL = enum.auto()
    TQ_EXACT = enum.auto()
    QC_NONE = enum.auto()
    QC_PARTIAL = enum.auto()
    QC_EXACT = enum.auto()
    QC_VALUE = enum.auto()
    CQ_NONE = enum.auto()
    CQ_PARTIAL = enum.auto()
    CQ_EXACT = enum.auto()
    CQ_VALUE = enum.auto()
    TC_PRIMARY_KEY = enum.auto()
    TC_HAS = enum.auto()
    TC_DEFAULT = enum.auto()
    CT_PRIMARY_KEY = enum.auto()
    CT_HAS = enum.auto()
    CT_DEFAULT = enum.auto()
    CC_FOREIGN_KEY = enum.auto()
    CC_FOREIGN_KEY_REV = enum.auto()
    CC_FOREIGN_KEY_BOTH = enum.auto()
    CC_DEFAULT = enum.auto()
    TT_DEFAULT = enum.auto()

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @property
    def inverse(self) -> "RelationLabel":
        return _INVERSE[self]

    @classmethod
    def from_display(cls, name: str) -> "RelationLabel":
        try:
            return _BY_DISPLAY[name]
        except KeyError:
            raise ValueError(f"unknown relation label {name!r}") from None


R = RelationLabel

_DISPLAY = {
    R.SELF: "Self",
    R.FORWARD_SYNTAX: "Forward-Syntax",
    R.BACKWARD_SYNTAX: "Backward-Syntax",
    R.NONE_SYNTAX: "None-Syntax",
    R.QT_NONE: "Question-Table:None-Linking",
    R.QT_PARTIAL: "Question-Table:Partial-Linking",
    R.QT_EXACT: "Question-Table:Exact-Linking",
    R.TQ_NONE: "Table-Question:None-Linking",
    R.TQ_PARTIAL: "Table-Question:Partial-Linking",
    R.TQ_EXACT: "Table-Question:Exact-Linking",
    R.QC_NONE: "Question-Column:None-Linking",
    R.QC_PARTIAL: "Question-Column:Partial-Linking",
    R.QC_EXACT: "Question-Column:Exact-Linking",
    R.QC_VALUE: "Question-Column:Value-Linking",
    R.CQ_NONE: "Column-Question:None-Linking",
    R.CQ_PARTIAL: "Column-Question:Partial-Linking",
    R.CQ_EXACT: "Column-Question:Exact-Linking",
    R.CQ_VALUE: "Column-Question:Value-Linking",
    R.TC_PRIMARY_KEY: "Primary-Key",
    R.TC_HAS: "Has",
    R.TC_DEFAULT: "Table-Column:Default",
    R.CT_PRIMARY_KEY: "Primary-Key-Of",
    R.CT_HAS: "Belongs-To",
    R.CT_DEFAULT: "Column-Table:Default",
    R.CC_FOREIGN_KEY: "Foreign-Key",
    R.CC_FOREIGN_KEY_REV: "Foreign-Key-Of",
    R.CC_FOREIGN_KEY_BOTH: "Foreign-Key-Both",
    R.CC_DEFAULT: "Column-Column:Default",
    R.TT_DEFAULT: "Table-Table:Default",
}
_BY_DISPLAY = {v: k for k, v in _DISPLAY.items()}

_PAIRS = [
    (R.FORWARD_SYNTAX, R.BACKWARD_SYNTAX),
    (R.QT_NONE, R.TQ_NONE), (R.QT_PARTIAL, R.TQ_PARTIAL), (R.QT_EXACT, R.TQ_EXACT),
    (R.QC_NONE, R.CQ_NONE), (R.QC_PARTIAL, R.CQ_PARTIAL),
    (R.QC_EXACT, R.CQ_EXACT), (R.QC_VALUE, R.CQ_VALUE),
    (R.TC_PRIMARY_KEY, R.CT_PRIMARY_KEY), (R.TC_HAS, R.CT_HAS), (R.TC_DEFAULT, R.CT_DEFAULT),
    (R.CC_FOREIGN_KEY, R.CC_FOREIGN_KEY_REV),
]
_INVERSE = {label: label for label in R}
for _a, _b in _PAIRS:
    _INVERSE[_a], _INVERSE[_b] = _b, _a

#: Which (source kind, target kind) block each label may occupy off the diagonal.
LABEL_BLOCKS: dict[RelationLabel, tuple[NodeKind, NodeKind]] = {
    R.FORWARD_SYNTAX: (Q, Q), R.BACKWARD_SYNTAX: (Q, Q), R.NONE_SYNTAX: (Q, Q),
    R.QT_NONE: (Q, T), R.QT_PARTIAL: (Q, T), R.QT_EXACT: (Q, T),
    R.TQ_NONE: (T, Q), R.TQ_PARTIAL: (T, Q), R.TQ_EXACT: (T, Q),
    R.QC_NONE: (Q, C), R.QC_PARTIAL: (Q, C), R.QC_EXACT: (Q, C), R.QC_VALUE: (Q, C),
    R.CQ_NONE: (C, Q), R.CQ_PARTIAL: (C, Q), R.CQ_EXACT: (C, Q), R.CQ_VALUE: (C, Q),
    R.TC_PRIMARY_KEY: (T, C), R.TC_HAS: (T, C), R.TC_DEFAULT: (T, C),
    R.CT_PRIMARY_KEY: (C, T), R.CT_HAS: (C, T), R.CT_DEFAULT: (C, T),
    R.CC_FOREIGN_KEY: (C, C), R.CC_FOREIGN_KEY_REV: (C, C),
    R.CC_FOREIGN_KEY_BOTH: (C, C), R.CC_DEFAULT: (C, C),
    R.TT_DEFAULT: (T, T),
}

_SYNTAX_TO_LABEL = np.array([R.SELF, R.FORWARD_SYNTAX, R.BACKWARD_SYNTAX, R.NONE_SYNTAX], dtype=np.int16)


class LinkLabel(enum.IntEnum):
    NONE = 0
    PARTIAL = 1
    EXACT = 2
    VALUE = 3


_QT = np.array([R.QT_NONE, R.QT_PARTIAL, R.QT_EXACT], dtype=np.int16)
_QC = np.array([R.QC_NONE, R.QC_PARTIAL, R.QC_EXACT, R.QC_VALUE], dtype=np.int16)
_INVERSE_ARRAY = np.array([_INVERSE[label] for label in R], dtype=np.int16)


@dataclass(frozen=True)
class SeqItem:
    kind: str  # "special" | "marker" | "token"
    text: str


@dataclass(frozen=True)
class FlattenedSequence:
    items: tuple[SeqItem, ...]
    node_spans: dict  # NodeRef -> (start, stop), in graph node order

    def texts(self) -> list[str]:
        return [it.text for it in self.items]


@dataclass(frozen=True)
class SchemaLinking:
    table: np.ndarray   # (n_question, n_table) LinkLabel codes
    column: np.ndarray  # (n_question, n_column) LinkLabel codes


@dataclass(eq=False)
class InteractionGraph:
    nodes: tuple[NodeRef, ...]
    relations: np.ndarray
    node_text: tuple[str, ...] = ()
    sequence: Optional[FlattenedSequence] = None
    db_id: str = ""

    @property
    def n(self) -> int:
        return len(self.nodes)

    def count(self, kind: NodeKind) -> int:
        return sum(1 for node in self.nodes if node.kind is kind)

    def index_of(self, node: NodeRef) -> int:
        return self.nodes.index(node)

    def label(self, i: int, j: int) -> RelationLabel:
        return RelationLabel(int(self.relations[i, j]))

    def find(self, kind: NodeKind, text: str) -> int:
        """Graph index of the first node of ``kind`` whose text is ``text``."""
        for i, (node, t) in enumerate(zip(self.nodes, self.node_text)):
            if node.kind is kind and t == text:
                return i
        raise KeyError(f"no {kind.value} node named {text!r}")

    def validate(self) -> "InteractionGraph":
        n = self.n
        if self.relations.shape != (n, n):
            raise ValidationError(f"relation matrix has shape {self.relations.shape}, expected {(n, n)}")
        if list(self.nodes) != sorted(self.nodes):
            raise ValidationError("nodes are not ordered questions, tables, columns")
        kinds = [node.kind for node in self.nodes]
        for i in range(n):
            for j in range(n):
                label = RelationLabel(int(self.relations[i, j]))
                if i == j:
                    if label is not R.SELF:
                        raise ValidationError(f"diagonal cell {i} holds {label.display}")
                    continue
                if label is R.SELF or LABEL_BLOCKS[label] != (kinds[i], kinds[j]):
                    raise ValidationError(f"cell ({i}, {j}) holds {label.display} outside its block")
                if self.relations[j, i] != label.inverse:
                    raise ValidationError(f"cell ({j}, {i}) is not the inverse of ({i}, {j})")
        return self

    def __eq__(self, other):
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return (self.nodes == other.nodes and self.node_text == other.node_text
                and self.db_id == other.db_id and self.sequence == other.sequence
                and np.array_equal(self.relations, other.relations))


def _node_order(nq: int, schema: Schema) -> list[NodeRef]:
    return ([NodeRef(Q, i) for i in range(nq)]
            + [NodeRef(T, t.id) for t in schema.tables]
            + [NodeRef(C, c.id) for c in schema.columns])


def flatten_input(tokens: Sequence[QuestionToken], schema: Schema) -> FlattenedSequence:
    """Lay out ``[CLS] q... [SEP] (t0 t... (c0 c...)*)* [SEP]``.

    Each schema item is preceded by a type marker (``[table]`` or the column's
    data type) and its span includes that marker.
    """
    if not tokens:
        raise ValueError("cannot flatten an empty question")
    items = [SeqItem("special", "[CLS]")]
    spans = {}
    for i, tok in enumerate(tokens):
        spans[NodeRef(Q, i)] = (len(items), len(items) + 1)
        items.append(SeqItem("token", tok.surface.lower()))
    items.append(SeqItem("special", "[SEP]"))
    for table in schema.tables:
        start = len(items)
        items.append(SeqItem("marker", "[table]"))
        items.extend(SeqItem("token", t) for t in table.name_tokens)
        spans[NodeRef(T, table.id)] = (start, len(items))
        for cid in table.column_ids:
            col = schema.columns[cid]
            start = len(items)
            items.append(SeqItem("marker", f"[{col.data_type.value}]"))
            items.extend(SeqItem("token", t) for t in col.name_tokens)
            spans[NodeRef(C, cid)] = (start, len(items))
    items.append(SeqItem("special", "[SEP]"))
    ordered = {node: spans[node] for node in _node_order(len(tokens), schema) if node in spans}
    return FlattenedSequence(tuple(items), ordered)


def _exact_cover(q_lemmas: list[str], item: tuple[str, ...]) -> np.ndarray:
    covered = np.zeros(len(q_lemmas), dtype=bool)
    m = len(item)
    if m == 0:
        return covered
    for s in range(len(q_lemmas) - m + 1):
        if tuple(q_lemmas[s:s + m]) == item:
            covered[s:s + m] = True
    return covered


def link_relations(tokens: Sequence[QuestionToken], schema: Schema) -> SchemaLinking:
    """Assign one :class:`LinkLabel` to every (question token, schema item) pair.

    Exact: the token sits inside an occurrence of the item's full lemma
    sequence in the question. Partial: the token's lemma equals one of the
    item's lemmas. Value (columns only): the token's lemma or lowercased
    surface equals a whole cell value, case-insensitively. First match wins
    in that order.
    """
    lemmas = [t.lemma for t in tokens]
    surfaces = [t.surface.lower() for t in tokens]
    nq = len(tokens)

    def labels(item_lemmas, values=None):
        out = np.full(nq, LinkLabel.NONE, dtype=np.int8)
        if values:
            vals = {v.lower() for v in values}
            hit = np.array([lemmas[i] in vals or surfaces[i] in vals for i in range(nq)], dtype=bool)
            out[hit] = LinkLabel.VALUE
        words = set(item_lemmas)
        out[np.array([lm in words for lm in lemmas], dtype=bool)] = LinkLabel.PARTIAL
        out[_exact_cover(lemmas, tuple(item_lemmas))] = LinkLabel.EXACT
        return out

    table = np.zeros((nq, len(schema.tables)), dtype=np.int8)
    for t in schema.tables:
        table[:, t.id] = labels(t.lemmas)
    column = np.zeros((nq, len(schema.columns)), dtype=np.int8)
    for c in schema.columns:
        column[:, c.id] = labels(c.lemmas, c.cell_values)
    return SchemaLinking(table, column)


def build_graph(tokens: Sequence[QuestionToken], parse: DependencyParse, schema: Schema) -> InteractionGraph:
    nq, nt, nc = len(tokens), len(schema.tables), len(schema.columns)
    if nq != parse.token_count:
        raise ValidationError(f"question has {nq} tokens but the parse covers {parse.token_count}")
    if nq == 0:
        raise ValidationError("question is empty")
    n = nq + nt + nc
    qs, ts, cs = slice(0, nq), slice(nq, nq + nt), slice(nq + nt, n)
    rel = np.empty((n, n), dtype=np.int16)

    rel[qs, qs] = _SYNTAX_TO_LABEL[question_relation_matrix(parse)]

    linking = link_relations(tokens, schema)
    rel[qs, ts] = _QT[linking.table]
    rel[qs, cs] = _QC[linking.column]

    rel[ts, ts] = R.TT_DEFAULT
    tc = np.full((nt, nc), R.TC_DEFAULT, dtype=np.int16)
    for col in schema.columns:
        tc[col.table_id, col.id] = R.TC_PRIMARY_KEY if col.is_primary else R.TC_HAS
    rel[ts, cs] = tc

    fk = np.zeros((nc, nc), dtype=bool)
    for src, dst in schema.foreign_keys:
        fk[src, dst] = True
    cc = np.full((nc, nc), R.CC_DEFAULT, dtype=np.int16)
    cc[fk] = R.CC_FOREIGN_KEY
    cc[fk.T] = R.CC_FOREIGN_KEY_REV
    cc[fk & fk.T] = R.CC_FOREIGN_KEY_BOTH
    rel[cs, cs] = cc

    # Lower-left blocks mirror the upper-right ones through the inverse map.
    rel[ts, qs] = _INVERSE_ARRAY[rel[qs, ts]].T
    rel[cs, qs] = _INVERSE_ARRAY[rel[qs, cs]].T
    rel[cs, ts] = _INVERSE_ARRAY[rel[ts, cs]].T
    np.fill_diagonal(rel, R.SELF)

    text = ([t.surface for t in tokens]
            + [" ".join(t.name_tokens) for t in schema.tables]
            + [" ".join(c.name_tokens) for c in schema.columns])
    return InteractionGraph(
        nodes=tuple(_node_order(nq, schema)),
        relations=rel,
        node_text=tuple(text),
        sequence=flatten_input(tokens, schema),
        db_id=schema.db_id,
    )


def _node_doc(node: NodeRef, text: str) -> dict:
    return {"kind": node.kind.value, "index": node.local_index, "text": text}


def export_graph(graph: InteractionGraph, manifest: Optional[dict] = None) -> bytes:
    """Serialize to a deterministic UTF-8 JSON document."""
    doc = {
        "format_version": FORMAT_VERSION,
        "db_id": graph.db_id,
        "labels": [label.display for label in RelationLabel],
        "nodes": [_node_doc(node, text) for node, text in zip(graph.nodes, graph.node_text)],
        "relations": [[RelationLabel(int(v)).display for v in row] for row in graph.relations],
    }
    if graph.sequence is not None:
        doc["sequence"] = {
            "items": [[it.kind, it.text] for it in graph.sequence.items],
            "spans": [[node.kind.value, node.local_index, a, b]
                      for node, (a, b) in graph.sequence.node_spans.items()],
        }
    if manifest is not None:
        doc["manifest"] = manifest
    return (json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def import_graph(document: bytes | str) -> InteractionGraph:
    try:
        doc = json.loads(document)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"unsupported graph format_version {doc.get('format_version')!r}")
        nodes = tuple(NodeRef(NodeKind(d["kind"]), d["index"]) for d in doc["nodes"])
        text = tuple(d.get("text", "") for d in doc["nodes"])
        rel = np.array([[RelationLabel.from_display(v) for v in row] for row in doc["relations"]],
                       dtype=np.int16).reshape(len(nodes), -1)
        sequence = None
        if "sequence" in doc:
            items = tuple(SeqItem(k, t) for k, t in doc["sequence"]["items"])
            spans = {NodeRef(NodeKind(k), i): (a, b) for k, i, a, b in doc["sequence"]["spans"]}
            sequence = FlattenedSequence(items, spans)
    except ParseError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed graph document: {exc}") from None
    return InteractionGraph(nodes, rel, text, sequence, doc.get("db_id", "")).validate()
