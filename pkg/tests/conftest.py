import random
from pathlib import Path

import pytest

from syntagraph.question import DependencyParse, QuestionToken, load_conllu
from syntagraph.schema import Column, DataType, Schema, Table, load_schema

FIXTURES = Path(__file__).parent / "fixtures"

VOCAB = ["name", "id", "date", "ship", "order", "area", "country", "student",
         "course", "total", "number", "the", "of", "list", "show", "city"]

# criterion -> (passed, detail); filled by test_acceptance, printed at session end
ACCEPTANCE_RESULTS = {}


def load_case(name):
    schema = load_schema((FIXTURES / f"{name}.tables.json").read_bytes())
    tokens, parse = load_conllu((FIXTURES / f"{name}.conllu").read_text())
    return tokens, parse, schema


def random_heads(n, rng):
    """Head array of a random tree over n tokens (-1 marks the root)."""
    order = list(range(n))
    rng.shuffle(order)
    heads = [-1] * n
    for pos in range(1, n):
        heads[order[pos]] = order[rng.randrange(pos)]
    return heads


def random_question(n, rng):
    tokens = []
    for i in range(n):
        word = rng.choice(VOCAB + ["3000", "Asia"])
        tokens.append(QuestionToken(i, word.capitalize() if rng.random() < 0.2 else word, word.lower()))
    labels = [rng.choice(["nsubj", "obj", "det", "nmod", "amod", "conj", "dep"]) for _ in range(n)]
    return tokens, DependencyParse.from_heads(random_heads(n, rng), labels)


def random_schema(rng, max_tables=4, max_cols=5):
    nt = rng.randint(1, max_tables)
    tables, columns = [], []
    for tid in range(nt):
        ids = []
        for _ in range(rng.randint(1, max_cols)):
            cid = len(columns)
            words = tuple(rng.choice(VOCAB) for _ in range(rng.randint(1, 3)))
            values = None
            if rng.random() < 0.3:
                values = tuple(rng.choice(["3000", "asia", "North America", "blue"]) for _ in range(2))
            columns.append(Column(cid, tid, words, words, DataType.TEXT, rng.random() < 0.3, values))
            ids.append(cid)
        words = tuple(rng.choice(VOCAB) for _ in range(rng.randint(1, 2)))
        tables.append(Table(tid, words, words, tuple(ids)))
    fks = set()
    nc = len(columns)
    for _ in range(rng.randint(0, 3)):
        a, b = rng.randrange(nc), rng.randrange(nc)
        if a != b:
            fks.add((a, b))
    return Schema("random", tuple(tables), tuple(columns), tuple(sorted(fks))).validate()


def random_instance(rng, max_nodes=40):
    """(tokens, parse, schema) with at most ``max_nodes`` graph nodes."""
    while True:
        schema = random_schema(rng)
        budget = max_nodes - len(schema.tables) - len(schema.columns)
        if budget >= 1:
            break
    tokens, parse = random_question(rng.randint(1, min(budget, 15)), rng)
    return tokens, parse, schema


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
