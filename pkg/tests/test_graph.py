import json
import random

import numpy as np
import pytest

from conftest import load_case, random_instance
from syntagraph.errors import ParseError, ValidationError
from syntagraph.graph import (
    LABEL_BLOCKS,
    LinkLabel,
    NodeKind,
    NodeRef,
    RelationLabel as R,
    build_graph,
    export_graph,
    flatten_input,
    import_graph,
    link_relations,
)
from syntagraph.question import DependencyParse, QuestionToken
from syntagraph.schema import schema_from_tables


def toks(*words, lemmas=None):
    lemmas = lemmas or [w.lower() for w in words]
    return [QuestionToken(i, w, lm) for i, (w, lm) in enumerate(zip(words, lemmas))]


def test_flatten_single_table():
    schema = schema_from_tables("s", [("t1", ["c1"])])
    seq = flatten_input(toks("q1", "q2"), schema)
    assert seq.texts() == ["[CLS]", "q1", "q2", "[SEP]", "[table]", "t1", "[text]", "c1", "[SEP]"]
    assert seq.node_spans == {
        NodeRef(NodeKind.QUESTION, 0): (1, 2),
        NodeRef(NodeKind.QUESTION, 1): (2, 3),
        NodeRef(NodeKind.TABLE, 0): (4, 6),
        NodeRef(NodeKind.COLUMN, 0): (6, 8),
    }


def test_flatten_empty_question():
    with pytest.raises(ValueError):
        flatten_input([], schema_from_tables("s", [("t", ["c"])]))


def test_flatten_spans_disjoint_and_ordered(rng):
    for _ in range(30):
        tokens, _, schema = random_instance(rng)
        seq = flatten_input(tokens, schema)
        spans = list(seq.node_spans.values())
        # brute-force pairwise overlap test
        for a in range(len(spans)):
            for b in range(a + 1, len(spans)):
                (s1, e1), (s2, e2) = spans[a], spans[b]
                assert e1 <= s2 or e2 <= s1
        table_starts = [seq.node_spans[NodeRef(NodeKind.TABLE, t.id)][0] for t in schema.tables]
        assert table_starts == sorted(table_starts)
        for table in schema.tables:
            ts, te = seq.node_spans[NodeRef(NodeKind.TABLE, table.id)]
            assert seq.items[ts].kind == "marker"
            for cid in table.column_ids:
                cs, _ = seq.node_spans[NodeRef(NodeKind.COLUMN, cid)]
                assert cs >= te
        assert seq.items[0].text == "[CLS]" and seq.items[-1].text == "[SEP]"


def brute_force_link(tokens, lemmas_item, values):
    """Scan every question n-gram and every cell value independently."""
    q = [t.lemma for t in tokens]
    out = []
    for i, tok in enumerate(tokens):
        exact = False
        for s in range(len(q)):
            for e in range(s + 1, len(q) + 1):
                if s <= i < e and q[s:e] == list(lemmas_item):
                    exact = True
        if exact:
            out.append(LinkLabel.EXACT)
        elif tok.lemma in lemmas_item:
            out.append(LinkLabel.PARTIAL)
        elif values is not None and any(v.lower() in (tok.lemma, tok.surface.lower()) for v in values):
            out.append(LinkLabel.VALUE)
        else:
            out.append(LinkLabel.NONE)
    return out


def test_link_examples():
    schema = schema_from_tables("s", [("north america region", ["name", "population"]), ("c", ["area"])],
                                cell_values={1: ["3000", "North America"], 2: ["America"]})
    tokens = toks("List", "the", "names", "north", "3000", "America", lemmas=["list", "the", "name", "north", "3000", "america"])
    link = link_relations(tokens, schema)
    assert link.column[2, 0] == LinkLabel.EXACT       # "names" -> column name
    assert link.table[3, 0] == LinkLabel.PARTIAL      # "north" -> "north america region"
    assert link.column[4, 1] == LinkLabel.VALUE       # "3000" is a whole cell value
    assert link.column[5, 1] == LinkLabel.NONE        # "America" is only part of "North America"
    assert link.column[5, 2] == LinkLabel.VALUE


def test_exact_requires_full_span():
    schema = schema_from_tables("s", [("t", ["transcript date"])])
    tokens = toks("the", "date", "of", "transcript")
    assert link_relations(tokens, schema).column[:, 0].tolist() == [0, LinkLabel.PARTIAL, 0, LinkLabel.PARTIAL]
    tokens = toks("transcript", "date", "is")
    assert link_relations(tokens, schema).column[:, 0].tolist() == [LinkLabel.EXACT, LinkLabel.EXACT, 0]


def test_link_matches_brute_force(rng):
    for _ in range(60):
        tokens, _, schema = random_instance(rng)
        link = link_relations(tokens, schema)
        for t in schema.tables:
            assert link.table[:, t.id].tolist() == brute_force_link(tokens, t.lemmas, None)
        for c in schema.columns:
            assert link.column[:, c.id].tolist() == brute_force_link(tokens, c.lemmas, c.cell_values)


def test_smallest_graph():
    schema = schema_from_tables("s", [("t", [])])
    g = build_graph(toks("t"), DependencyParse.from_heads([-1]), schema)
    assert g.relations.shape == (2, 2)
    assert g.label(0, 0) is R.SELF and g.label(1, 1) is R.SELF
    assert g.label(0, 1) is R.QT_EXACT
    assert g.label(1, 0) is R.TQ_EXACT


def test_case3_golden_graph():
    tokens, parse, schema = load_case("case3_transcripts")
    g = build_graph(tokens, parse, schema).validate()
    q = {t.surface: t.index for t in tokens}
    assert g.label(q["Show"], q["list"]) is R.FORWARD_SYNTAX
    assert g.label(q["Show"], q["date"]) is R.FORWARD_SYNTAX
    assert g.label(q["list"], q["id"]) is R.FORWARD_SYNTAX
    assert g.label(q["list"], q["Show"]) is R.BACKWARD_SYNTAX
    assert g.label(q["date"], g.find(NodeKind.COLUMN, "date")) is R.QC_EXACT
    assert g.label(q["id"], g.find(NodeKind.COLUMN, "id")) is R.QC_EXACT
    assert g.label(q["id"], g.find(NodeKind.COLUMN, "transcript id")) is R.QC_PARTIAL
    t = g.find(NodeKind.TABLE, "transcript")
    assert g.label(t, g.find(NodeKind.COLUMN, "id")) is R.TC_PRIMARY_KEY
    assert g.label(t, g.find(NodeKind.COLUMN, "date")) is R.TC_HAS
    fk_src, fk_dst = g.find(NodeKind.COLUMN, "transcript id"), g.find(NodeKind.COLUMN, "id")
    assert g.label(fk_src, fk_dst) is R.CC_FOREIGN_KEY
    assert g.label(fk_dst, fk_src) is R.CC_FOREIGN_KEY_REV


def test_case1_golden_graph():
    tokens, parse, schema = load_case("case1_ship")
    g = build_graph(tokens, parse, schema).validate()
    q = {t.surface: t.index for t in tokens}
    assert g.label(q["name"], q["tonnage"]) is R.FORWARD_SYNTAX
    assert g.label(q["order"], q["names"]) is R.FORWARD_SYNTAX
    assert g.label(q["names"], g.find(NodeKind.COLUMN, "name")) is R.QC_EXACT
    assert g.label(q["tonnage"], g.find(NodeKind.COLUMN, "tonnage")) is R.QC_EXACT


def test_case2_golden_graph():
    tokens, parse, schema = load_case("case2_country")
    g = build_graph(tokens, parse, schema).validate()
    q = {t.surface: t.index for t in tokens}
    assert g.label(q["continent"], q["America"]) is R.FORWARD_SYNTAX
    assert g.label(q["continent"], g.find(NodeKind.COLUMN, "continent")) is R.QC_EXACT
    assert g.label(q["America"], g.find(NodeKind.COLUMN, "continent")) is R.QC_NONE


def test_mutual_foreign_keys():
    schema = schema_from_tables("s", [("a", ["x"]), ("b", ["y"])], foreign_keys=[(0, 1), (1, 0)])
    g = build_graph(toks("q"), DependencyParse.from_heads([-1]), schema)
    assert g.label(3, 4) is R.CC_FOREIGN_KEY_BOTH and g.label(4, 3) is R.CC_FOREIGN_KEY_BOTH


def test_token_parse_mismatch():
    schema = schema_from_tables("s", [("t", ["c"])])
    with pytest.raises(ValidationError):
        build_graph(toks("a", "b"), DependencyParse.from_heads([-1]), schema)


def test_random_graphs_total_pure_closed(rng):
    for _ in range(50):
        tokens, parse, schema = random_instance(rng)
        g = build_graph(tokens, parse, schema)
        kinds = [node.kind for node in g.nodes]
        for i in range(g.n):
            for j in range(g.n):
                label = R(int(g.relations[i, j]))
                if i == j:
                    assert label is R.SELF
                else:
                    assert LABEL_BLOCKS[label] == (kinds[i], kinds[j])
                    assert g.relations[j, i] == label.inverse
        qq = g.relations[:len(tokens), :len(tokens)]
        assert (qq == R.FORWARD_SYNTAX).sum() == len(tokens) - 1


def test_inverse_is_involution():
    for label in R:
        assert label.inverse.inverse is label
        if label is not R.SELF:
            assert LABEL_BLOCKS[label.inverse] == LABEL_BLOCKS[label][::-1]


def test_export_round_trip_and_determinism():
    tokens, parse, schema = load_case("case3_transcripts")
    g = build_graph(tokens, parse, schema)
    doc = export_graph(g)
    assert doc == export_graph(build_graph(tokens, parse, schema))
    assert import_graph(doc) == g
    assert export_graph(import_graph(doc)) == doc


def test_export_dimensions_by_walking_document():
    tokens, parse, schema = load_case("case1_ship")
    g = build_graph(tokens, parse, schema)
    doc = json.loads(export_graph(g))
    n = len(doc["nodes"])
    cells = 0
    for row in doc["relations"]:
        assert len(row) == n
        cells += sum(1 for _ in row)
    assert cells == n * n == g.n ** 2
    assert doc["format_version"] == 1


def test_import_rejects_bad_documents():
    tokens, parse, schema = load_case("case1_ship")
    doc = json.loads(export_graph(build_graph(tokens, parse, schema)))
    with pytest.raises(ParseError):
        import_graph(b"{}")
    bad = dict(doc, format_version=2)
    with pytest.raises(ParseError):
        import_graph(json.dumps(bad))
    doc["relations"][0][1] = "Has"
    with pytest.raises(ValidationError):
        import_graph(json.dumps(doc))
    doc["relations"][0][1] = "Not-A-Label"
    with pytest.raises(ParseError):
        import_graph(json.dumps(doc))
