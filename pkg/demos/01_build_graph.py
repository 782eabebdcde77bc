"""
Building a question-schema graph
================================

Reads one of the test fixtures (a dependency parse plus a Spider-style
schema) and prints a few of the typed edges.
"""
from pathlib import Path

import numpy as np

import syntagraph as sg

fixtures = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

schema = sg.load_schema((fixtures / "case3_transcripts.tables.json").read_bytes())
tokens, parse = sg.load_conllu((fixtures / "case3_transcripts.conllu").read_text())
print(" ".join(t.surface for t in tokens))

g = sg.build_graph(tokens, parse, schema)
print(g.n, "nodes:", g.count(sg.NodeKind.QUESTION), "question,",
      g.count(sg.NodeKind.TABLE), "table,", g.count(sg.NodeKind.COLUMN), "column")

# syntax edges among question tokens
show = g.find(sg.NodeKind.QUESTION, "Show")
for word in ("list", "date", "the"):
    print("Show ->", word, ":", g.label(show, g.find(sg.NodeKind.QUESTION, word)).display)

# schema linking
date_tok = g.find(sg.NodeKind.QUESTION, "date")
print("date -> column date :", g.label(date_tok, g.find(sg.NodeKind.COLUMN, "date")).display)

# label histogram over the whole matrix
labels, counts = np.unique(g.relations, return_counts=True)
for lab, c in zip(labels, counts):
    print(f"{sg.RelationLabel(int(lab)).display:35s} {c}")

# the JSON export round-trips
assert sg.import_graph(sg.export_graph(g)) == g
