"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 parse/IO error, 3 gradient check
above threshold. Machine-readable results go to stdout as one JSON object,
diagnostics to stderr. Verbosity follows the ``SYNTAGRAPH_LOG`` environment
variable (``DEBUG``, ``INFO``, ``WARNING``...).

Every option except the input/output paths may also come from a
``--config`` file of ``key = value`` lines; flags win over the file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .decoupling import decoupling_experiment, similarity_matrix
from .encoder import (
    EncoderConfig,
    embed_nodes,
    encode,
    gradient_check,
    init_params,
    load_checkpoint,
    relation_matrix,
    save_checkpoint,
)
from .errors import ParseError, SyntagraphError, ValidationError
from .graph import RelationLabel, build_graph, export_graph, import_graph
from .question import check_tokens_match, load_conllu
from .schema import load_schema

log = logging.getLogger("syntagraph")

EXIT_OK, EXIT_VALIDATION, EXIT_PARSE, EXIT_GRADIENT = 0, 1, 2, 3
MANIFEST_VERSION = 1


@dataclass
class RunManifest:
    command: str
    inputs: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    seed: int | None = None
    format_version: int = MANIFEST_VERSION
    tool_version: str = __version__


# (flag, type, default, help) per command; paths are not config-overridable.
_OPTIONS = {
    "build-graph": [],
    "init-params": [
        ("--layers", int, 8, "number of layers"),
        ("--heads", int, 8, "attention heads"),
        ("--d-model", int, 256, "model width"),
        ("--ffn-dim", int, 1024, "feed-forward inner width"),
        ("--dropout", float, 0.1, "dropout rate (training only)"),
        ("--seed", int, 0, "random seed"),
    ],
    "encode": [
        ("--layers", int, None, "use only the first N checkpoint layers"),
        ("--seed", int, None, "node-embedding seed (default: checkpoint seed)"),
    ],
    "grad-check": [
        ("--dims", str, "16,2,2,12", "d_model,heads,layers,nodes"),
        ("--ffn-dim", int, 64, "feed-forward inner width"),
        ("--lambda", float, 0.01, "decoupling weight"),
        ("--coords", int, 20, "coordinates sampled per tensor"),
        ("--step", float, 1e-5, "central-difference step"),
        ("--threshold", float, 1e-4, "maximum tolerated relative error"),
        ("--seed", int, 0, "random seed"),
    ],
    "dc-train": [
        ("--k", int, 32, "number of relation embeddings"),
        ("--d", int, 64, "embedding dimension"),
        ("--steps", int, 2000, "gradient-descent steps"),
        ("--lr", float, 0.1, "learning rate"),
        ("--lambda", float, 1.0, "decoupling weight"),
        ("--seed", int, 0, "random seed"),
    ],
    "sim-matrix": [],
}

_PATHS = {
    "build-graph": [("--schema", True), ("--parse", True), ("--question", True), ("--out", True)],
    "init-params": [("--out", True)],
    "encode": [("--graph", True), ("--params", True), ("--out", True)],
    "grad-check": [("--out", False)],
    "dc-train": [("--out", True)],
    "sim-matrix": [("--params", True), ("--out", True)],
}


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syntagraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _OPTIONS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file with option defaults")
        for flag, required in _PATHS[name]:
            p.add_argument(flag, required=required)
        for flag, typ, default, text in _OPTIONS[name]:
            shown = "" if default is None else f" (default {default})"
            p.add_argument(flag, dest=_dest(flag), type=typ, default=None, help=text + shown)
        if name == "grad-check":
            p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flags over config file over built-in defaults."""
    config = read_config(args.config) if args.config else {}
    known = {_dest(flag) for flag, *_ in _OPTIONS[args.command]}
    unknown = set(config) - known
    if unknown:
        raise ValidationError(f"unknown config keys for {args.command}: {', '.join(sorted(unknown))}")
    opts, overrides = {}, {}
    for flag, typ, default, _ in _OPTIONS[args.command]:
        key = _dest(flag)
        value = getattr(args, key)
        if value is None and key in config:
            try:
                value = typ(config[key])
            except ValueError:
                raise ParseError(f"config key {key!r}: cannot read {config[key]!r} as {typ.__name__}") from None
        if value is not None:
            overrides[key] = value
        opts[key] = default if value is None else value
    opts["_overrides"] = overrides
    return opts


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise ParseError(f"cannot write {path}: {exc.strerror}") from None


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _manifest(args, opts, input_names=()) -> dict:
    inputs = {name: getattr(args, name) for name in input_names}
    return asdict(RunManifest(args.command, inputs, dict(opts["_overrides"]), opts.get("seed")))


def _csv_bytes(manifest: dict, header, rows) -> bytes:
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(manifest, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_build_graph(args, opts) -> int:
    schema = load_schema(_read(args.schema))
    tokens, parse = load_conllu(_read(args.parse))
    try:
        question = _read(args.question).decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError(f"{args.question} is not UTF-8") from None
    check_tokens_match(tokens, question)
    graph = build_graph(tokens, parse, schema)
    manifest = _manifest(args, opts, ("schema", "parse", "question"))
    _write(args.out, export_graph(graph, manifest))
    _emit({"command": "build-graph", "nodes": graph.n, "out": args.out})
    return EXIT_OK


def cmd_init_params(args, opts) -> int:
    config = EncoderConfig(num_layers=opts["layers"], num_heads=opts["heads"], model_dim=opts["d_model"],
                           ffn_dim=opts["ffn_dim"], dropout_rate=opts["dropout"], seed=opts["seed"])
    params, tables = init_params(config)
    _write(args.out, save_checkpoint(config, params, tables, _manifest(args, opts)))
    _emit({"command": "init-params", "config": asdict(config), "out": args.out})
    return EXIT_OK


def cmd_encode(args, opts) -> int:
    graph = import_graph(_read(args.graph))
    config, params, tables = load_checkpoint(_read(args.params))
    if graph.sequence is None:
        raise ValidationError("graph document carries no flattened sequence to embed")
    if opts["layers"] is not None:
        if not 0 <= opts["layers"] <= config.num_layers:
            raise ValidationError(f"--layers must lie in [0, {config.num_layers}]")
        params.layers = params.layers[:opts["layers"]]
        config = replace(config, num_layers=opts["layers"])
    if opts["seed"] is not None:
        config = replace(config, seed=opts["seed"])
    x = embed_nodes(graph.sequence, config)
    z = encode(graph, x, params, tables, config)
    doc = {
        "format_version": MANIFEST_VERSION,
        "manifest": _manifest(args, opts, ("graph", "params")),
        "nodes": [[node.kind.value, node.local_index] for node in graph.nodes],
        "input": x.astype(float).tolist(),
        "output": z.astype(float).tolist(),
    }
    _write(args.out, (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8"))
    _emit({"command": "encode", "nodes": graph.n, "layers": config.num_layers, "out": args.out})
    return EXIT_OK


def cmd_grad_check(args, opts) -> int:
    try:
        d, h, layers, n = (int(v) for v in opts["dims"].split(","))
    except ValueError:
        raise ParseError(f"--dims expects d_model,heads,layers,nodes; got {opts['dims']!r}") from None
    if n < 1:
        raise ValidationError("grad-check needs at least one node")
    config = EncoderConfig(num_layers=layers, num_heads=h, model_dim=d, ffn_dim=opts["ffn_dim"],
                           dropout_rate=0.0, seed=opts["seed"])
    worst, per_tensor = gradient_check(config, n, opts["lambda"], opts["coords"], opts["step"],
                                       opts["seed"], corrupt=args.corrupt_gradient)
    ok = worst < opts["threshold"]
    payload = {
        "command": "grad-check",
        "max_relative_error": worst,
        "threshold": opts["threshold"],
        "passed": ok,
        "per_tensor": per_tensor,
        "manifest": _manifest(args, opts),
    }
    if args.out:
        _write(args.out, (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8"))
    _emit(payload)
    if not ok:
        log.error("gradient check failed: max relative error %.3g >= %.3g", worst, opts["threshold"])
    return EXIT_OK if ok else EXIT_GRADIENT


def _matrix_rows(names, matrix):
    return [[name, *map(_fmt, row)] for name, row in zip(names, matrix)]


def cmd_dc_train(args, opts) -> int:
    outcome = decoupling_experiment(opts["k"], opts["d"], opts["steps"], opts["lr"], opts["lambda"], opts["seed"])
    manifest = _manifest(args, opts)
    _write(args.out, _csv_bytes(manifest, ["step", "dc_loss"],
                                [[i, _fmt(v)] for i, v in enumerate(outcome.loss_trajectory)]))
    out = Path(args.out)
    names = [f"r{i}" for i in range(opts["k"])]
    side = {}
    for arm in ("with_dc", "without_dc"):
        path = out.with_name(f"{out.stem}_{arm}{out.suffix or '.csv'}")
        report = getattr(outcome, arm)
        _write(str(path), _csv_bytes(manifest, ["embedding", *names], _matrix_rows(names, report.matrix)))
        side[arm] = {"max_offdiag_abs": report.max_offdiag_abs,
                     "mean_offdiag_abs": report.mean_offdiag_abs, "matrix": str(path)}
    _emit({"command": "dc-train", "final_dc_loss": float(outcome.loss_trajectory[-1]),
           "out": args.out, **side})
    return EXIT_OK


def cmd_sim_matrix(args, opts) -> int:
    _, _, tables = load_checkpoint(_read(args.params))
    report = similarity_matrix(relation_matrix(tables))
    names = [label.display for label in RelationLabel]
    _write(args.out, _csv_bytes(_manifest(args, opts, ("params",)), ["label", *names],
                                _matrix_rows(names, report.matrix)))
    _emit({"command": "sim-matrix", "max_offdiag_abs": report.max_offdiag_abs,
           "mean_offdiag_abs": report.mean_offdiag_abs, "out": args.out})
    return EXIT_OK


COMMANDS = {
    "build-graph": cmd_build_graph,
    "init-params": cmd_init_params,
    "encode": cmd_encode,
    "grad-check": cmd_grad_check,
    "dc-train": cmd_dc_train,
    "sim-matrix": cmd_sim_matrix,
}


def main(argv=None) -> int:
    level = os.environ.get("SYNTAGRAPH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        opts = _resolve(args)
        log.info("running %s with %s", args.command, opts["_overrides"])
        return COMMANDS[args.command](args, opts)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SyntagraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
