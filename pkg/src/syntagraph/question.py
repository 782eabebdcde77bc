"""Question tokens, dependency parses read from CoNLL-U, and the collapse of
typed dependency edges into three directional syntax relations."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, TreeViolationError, ValidationError

__all__ = [
    "QuestionToken",
    "DependencyParse",
    "SyntaxRelation",
    "load_conllu",
    "first_order_distance",
    "syntax_relation",
    "question_relation_matrix",
]


@dataclass(frozen=True)
class QuestionToken:
    index: int
    surface: str
    lemma: str


class SyntaxRelation(enum.IntEnum):
    # SELF only ever sits on the diagonal; graph assembly replaces it.
    SELF = 0
    FORWARD = 1
    BACKWARD = 2
    NONE = 3


@dataclass(frozen=True)
class DependencyParse:
    """A rooted dependency tree over ``token_count`` tokens.

    ``edges`` holds ``(head, dependent, label)`` triples with 0-based indices;
    the root token is the only one that never appears as a dependent.
    Construction validates the tree and raises :class:`TreeViolationError`.
    """

    token_count: int
    edges: tuple[tuple[int, int, str], ...]

    def __post_init__(self):
        n = self.token_count
        if n < 1:
            raise TreeViolationError("parse has no tokens")
        heads = [-1] * n
        for head, dep, _ in self.edges:
            for idx in (head, dep):
                if not 0 <= idx < n:
                    raise TreeViolationError(f"tree violation: edge ({head}, {dep}) leaves the {n}-token sentence")
            if head == dep:
                raise TreeViolationError(f"tree violation: token {dep} is its own head")
            if heads[dep] != -1:
                raise TreeViolationError(f"tree violation: token {dep} has more than one head")
            heads[dep] = head
        roots = [i for i, h in enumerate(heads) if h == -1]
        if len(roots) != 1:
            raise TreeViolationError(f"tree violation: expected exactly one root, found {len(roots)}")
        # n-1 edges and one root: the parse is a tree iff every token reaches the root.
        for start in range(n):
            seen = set()
            i = start
            while heads[i] != -1:
                if i in seen:
                    raise TreeViolationError(f"tree violation: cycle through token {i}")
                seen.add(i)
                i = heads[i]
        object.__setattr__(self, "_heads", tuple(heads))

    @property
    def heads(self) -> tuple[int, ...]:
        """Head index per token, -1 for the root."""
        return self._heads

    @property
    def root(self) -> int:
        return self._heads.index(-1)

    @classmethod
    def from_heads(cls, heads, labels=None) -> "DependencyParse":
        """Build from a head array (-1 marks the root)."""
        labels = labels or ["dep"] * len(heads)
        edges = tuple((h, d, labels[d]) for d, h in enumerate(heads) if h != -1)
        return cls(len(heads), edges)


def load_conllu(document: str | bytes) -> tuple[list[QuestionToken], DependencyParse]:
    """Read one sentence in CoNLL-U.

    Comment lines, multiword-token ranges (``3-4``) and empty nodes (``3.1``)
    are skipped. HEAD=0 marks the root. Malformed lines raise
    :class:`ParseError`; a non-tree raises :class:`TreeViolationError`.
    """
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"parse document is not UTF-8: {exc}") from None

    rows = []
    finished = False
    for lineno, line in enumerate(document.splitlines(), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if rows:
                finished = True
            continue
        if line.startswith("#"):
            continue
        if finished:
            raise ParseError(f"line {lineno}: document holds more than one sentence")
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            tid = int(tid)
        except ValueError:
            raise ParseError(f"line {lineno}: bad token id {cols[0]!r}") from None
        if tid != len(rows) + 1:
            raise ParseError(f"line {lineno}: token id {tid} out of sequence")
        form, lemma, head, deprel = cols[1], cols[2], cols[6], cols[7]
        if not form:
            raise ParseError(f"line {lineno}: empty FORM")
        try:
            head = int(head)
        except ValueError:
            raise ParseError(f"line {lineno}: HEAD {cols[6]!r} is not an integer") from None
        if deprel in ("", "_"):
            raise ParseError(f"line {lineno}: DEPREL is not populated")
        rows.append((form, lemma, head, deprel))

    if not rows:
        raise ParseError("parse document contains no tokens")

    tokens = []
    edges = []
    for i, (form, lemma, head, deprel) in enumerate(rows):
        lemma = form if lemma in ("", "_") else lemma
        tokens.append(QuestionToken(i, form, lemma.lower()))
        if head < 0 or head > len(rows):
            raise TreeViolationError(
                f"tree violation: token {i + 1} has HEAD={head} but the sentence has {len(rows)} tokens"
            )
        if head != 0:
            edges.append((head - 1, i, deprel))
    return tokens, DependencyParse(len(rows), tuple(edges))


def _check_index(parse: DependencyParse, *idx: int) -> None:
    for i in idx:
        if not 0 <= i < parse.token_count:
            raise IndexError(f"token index {i} out of range for {parse.token_count} tokens")


def first_order_distance(parse: DependencyParse, i: int, j: int) -> int:
    """1 if a dependency edge runs from head ``i`` to dependent ``j``, else 0."""
    _check_index(parse, i, j)
    return int(parse.heads[j] == i)


def syntax_relation(parse: DependencyParse, i: int, j: int) -> SyntaxRelation:
    _check_index(parse, i, j)
    if i == j:
        raise ValueError("syntax_relation is undefined on the diagonal")
    if first_order_distance(parse, i, j):
        return SyntaxRelation.FORWARD
    if first_order_distance(parse, j, i):
        return SyntaxRelation.BACKWARD
    return SyntaxRelation.NONE


def question_relation_matrix(parse: DependencyParse) -> np.ndarray:
    """Dense ``n x n`` array of :class:`SyntaxRelation` codes (int8).

    Dependency labels do not enter the result, only edge direction.
    """
    n = parse.token_count
    out = np.full((n, n), SyntaxRelation.NONE, dtype=np.int8)
    for dep, head in enumerate(parse.heads):
        if head >= 0:
            out[head, dep] = SyntaxRelation.FORWARD
            out[dep, head] = SyntaxRelation.BACKWARD
    np.fill_diagonal(out, SyntaxRelation.SELF)
    return out


def check_tokens_match(tokens: list[QuestionToken], text: str) -> None:
    """Ensure the parse tokens spell out ``text`` (whitespace ignored)."""
    joined = "".join(t.surface for t in tokens)
    flat = "".join(text.split())
    if joined != flat:
        raise ValidationError("question text does not match the parse tokens")
