"""
Encoding a graph
================

Hash-seeded node features go through a small relation-aware encoder.
"""
from pathlib import Path

import numpy as np

import syntagraph as sg

fixtures = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
schema = sg.load_schema((fixtures / "case1_ship.tables.json").read_bytes())
tokens, parse = sg.load_conllu((fixtures / "case1_ship.conllu").read_text())
g = sg.build_graph(tokens, parse, schema)

config = sg.EncoderConfig(num_layers=2, num_heads=4, model_dim=32, ffn_dim=64, seed=0)
params, tables = sg.init_params(config)
x = sg.embed_nodes(g.sequence, config)
z = sg.encode(g, x, params, tables, config)
print("input", x.shape, "output", z.shape)
print("row norms after encoding:", np.round(np.linalg.norm(z, axis=1)[:5], 3))

# attention of head 0 in layer 0, for the first question token
e = sg.attention_scores(x, g, params, tables, layer=0, head=0)
alpha = np.exp(e[0] - e[0].max())
alpha /= alpha.sum()
top = np.argsort(alpha)[::-1][:5]
for j in top:
    print(f"{g.node_text[j]:20s} {g.label(0, j).display:35s} {alpha[j]:.3f}")

# with relation tables zeroed the labels stop mattering
zero = sg.RelationEmbeddingTables(np.zeros_like(tables.key), np.zeros_like(tables.value))
shuffled = np.random.default_rng(1).permutation(g.relations.ravel()).reshape(g.relations.shape)
a = sg.encode(g.relations, x, params, zero, config)
b = sg.encode(shuffled, x, params, zero, config)
print("labels ignored without relation embeddings:", np.allclose(a, b))
