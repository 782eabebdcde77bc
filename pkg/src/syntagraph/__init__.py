"""Syntax-aware question-schema interaction graphs and a relation-aware
attention encoder with decoupled relation embeddings."""

__version__ = "0.1.0"

from .decoupling import SimilarityReport, dc_grad, dc_loss, decoupling_experiment, similarity_matrix
from .encoder import (
    EncoderConfig,
    EncoderParameters,
    RelationEmbeddingTables,
    attention_scores,
    embed_nodes,
    encode,
    init_params,
    loss_and_gradients,
    relation_matrix,
    rgat_layer,
)
from .errors import NumericalError, ParseError, SyntagraphError, TreeViolationError, ValidationError
from .graph import (
    InteractionGraph,
    NodeKind,
    NodeRef,
    RelationLabel,
    build_graph,
    export_graph,
    flatten_input,
    import_graph,
    link_relations,
)
from .question import (
    DependencyParse,
    QuestionToken,
    SyntaxRelation,
    first_order_distance,
    load_conllu,
    question_relation_matrix,
    syntax_relation,
)
from .schema import Column, Schema, Table, load_schema, schema_relations
