"""Relation-aware multi-head self-attention encoder over an interaction graph.

Each layer computes, per head ``h``::

    e_ij = q_i . (k_j + rK[label_ij]) / sqrt(d_head)
    a_ij = softmax_j(e_ij)
    z_i  = sum_j a_ij (v_j + rV[label_ij])

with ``q = x W_q``, ``k = x W_k``, ``v = x W_v``. Heads are concatenated and
projected by ``W_o``, then the usual post-norm residual/FFN block follows.
Relation tables ``rK`` and ``rV`` (one row per :class:`RelationLabel`) are
shared across heads and layers.

Gradients are derived by hand; :func:`loss_and_gradients` returns them for
every trainable tensor, keyed like :func:`named_tensors`.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import NumericalError, ParseError
from .graph import FlattenedSequence, InteractionGraph, RelationLabel

__all__ = [
    "EncoderConfig",
    "LayerParams",
    "EncoderParameters",
    "RelationEmbeddingTables",
    "init_params",
    "embed_nodes",
    "attention_scores",
    "rgat_layer",
    "encode",
    "loss_and_gradients",
    "named_tensors",
    "relation_matrix",
    "gradient_check",
    "random_relations",
    "save_checkpoint",
    "load_checkpoint",
]

NUM_RELATIONS = len(RelationLabel)
LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 8
    num_heads: int = 8
    model_dim: int = 256
    ffn_dim: int = 1024
    dropout_rate: float = 0.1
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if min(self.num_heads, self.model_dim, self.ffn_dim) <= 0 or self.num_layers < 0:
            raise ValueError("encoder dimensions must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class LayerParams:
    w_q: np.ndarray  # (H, d, d_head)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (d, d)
    w_1: np.ndarray  # (d, ffn)
    b_1: np.ndarray
    w_2: np.ndarray  # (ffn, d)
    b_2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


LAYER_FIELDS = tuple(LayerParams.__dataclass_fields__)


@dataclass
class EncoderParameters:
    layers: list = field(default_factory=list)


@dataclass
class RelationEmbeddingTables:
    key: np.ndarray    # (k, d_head)
    value: np.ndarray  # (k, d_head)


def _xavier(rng, shape, fan_in, fan_out, dtype):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def init_params(config: EncoderConfig) -> tuple[EncoderParameters, RelationEmbeddingTables]:
    """Xavier-uniform weights, zero biases, unit layer-norm gains, and
    relation embeddings uniform in [-0.1, 0.1]; deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    d, H, dh, f = config.model_dim, config.num_heads, config.head_dim, config.ffn_dim
    dt = np.dtype(config.dtype)
    layers = []
    for _ in range(config.num_layers):
        layers.append(LayerParams(
            w_q=_xavier(rng, (H, d, dh), d, dh, dt),
            w_k=_xavier(rng, (H, d, dh), d, dh, dt),
            w_v=_xavier(rng, (H, d, dh), d, dh, dt),
            w_o=_xavier(rng, (d, d), d, d, dt),
            w_1=_xavier(rng, (d, f), d, f, dt),
            b_1=np.zeros(f, dt),
            w_2=_xavier(rng, (f, d), f, d, dt),
            b_2=np.zeros(d, dt),
            ln1_gain=np.ones(d, dt),
            ln1_bias=np.zeros(d, dt),
            ln2_gain=np.ones(d, dt),
            ln2_bias=np.zeros(d, dt),
        ))
    tables = RelationEmbeddingTables(
        key=rng.uniform(-0.1, 0.1, (NUM_RELATIONS, dh)).astype(dt),
        value=rng.uniform(-0.1, 0.1, (NUM_RELATIONS, dh)).astype(dt),
    )
    return EncoderParameters(layers), tables


def named_tensors(params: EncoderParameters, tables: RelationEmbeddingTables) -> dict[str, np.ndarray]:
    """Flat ``name -> array`` view (no copies) over every trainable tensor."""
    out = {}
    for i, layer in enumerate(params.layers):
        for name in LAYER_FIELDS:
            out[f"layers.{i}.{name}"] = getattr(layer, name)
    out["relations.key"] = tables.key
    out["relations.value"] = tables.value
    return out


def relation_matrix(tables: RelationEmbeddingTables) -> np.ndarray:
    """Stack ``[rK ; rV]`` per label as columns: shape ``(2 * d_head, k)``."""
    return np.concatenate([tables.key, tables.value], axis=1).T


def _item_vector(text: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{text}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


def embed_nodes(flattened: FlattenedSequence, config: EncoderConfig) -> np.ndarray:
    """Hash-seeded vector per sequence item, mean-pooled over each node's span."""
    d = config.model_dim
    cache: dict[str, np.ndarray] = {}
    vectors = []
    for item in flattened.items:
        if item.text not in cache:
            cache[item.text] = _item_vector(item.text, d, config.seed)
        vectors.append(cache[item.text])
    items = np.stack(vectors)
    x = np.stack([items[a:b].mean(axis=0) for a, b in flattened.node_spans.values()])
    return x.astype(config.dtype)


def _labels(graph) -> np.ndarray:
    rel = graph.relations if isinstance(graph, InteractionGraph) else graph
    return np.asarray(rel, dtype=np.intp)


def attention_scores(x, graph, params, tables, layer: int, head: int) -> np.ndarray:
    """Pre-softmax scores of one head (every node attends to every node)."""
    rel = _labels(graph)
    n = x.shape[0]
    if rel.shape != (n, n):
        raise ValueError(f"relation matrix shape {rel.shape} does not match {n} nodes")
    lp = params.layers[layer]
    q = x @ lp.w_q[head]
    k = x @ lp.w_k[head]
    rk = tables.key[rel]
    return (q @ k.T + np.einsum("ie,ije->ij", q, rk)) / math.sqrt(q.shape[1])


def _layer_norm(u, gain, bias):
    mu = u.mean(axis=1, keepdims=True)
    var = ((u - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (u - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def _layer_norm_backward(dy, cache, gain):
    xhat, inv = cache
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    du = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return du, dgain, dbias


def _dropout_mask(rng, shape, rate, dtype):
    if rng is None or rate == 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def _layer_forward(x, rel, lp: LayerParams, tables, dropout_rate=0.0, rng=None):
    n, d = x.shape
    H, _, dh = lp.w_q.shape
    q = np.einsum("nd,hde->hne", x, lp.w_q)
    k = np.einsum("nd,hde->hne", x, lp.w_k)
    v = np.einsum("nd,hde->hne", x, lp.w_v)
    rk = tables.key[rel]
    rv = tables.value[rel]
    scale = 1.0 / math.sqrt(dh)
    s = (q @ k.transpose(0, 2, 1) + np.einsum("hie,ije->hij", q, rk)) * scale
    s_max = s.max(axis=2, keepdims=True)
    p = np.exp(s - s_max)
    alpha = p / p.sum(axis=2, keepdims=True)
    zh = alpha @ v + np.einsum("hij,ije->hie", alpha, rv)
    z = zh.transpose(1, 0, 2).reshape(n, d)
    a = z @ lp.w_o
    m1 = _dropout_mask(rng, a.shape, dropout_rate, a.dtype)
    if m1 is not None:
        a = a * m1
    y1, ln1 = _layer_norm(x + a, lp.ln1_gain, lp.ln1_bias)
    hpre = y1 @ lp.w_1 + lp.b_1
    hact = np.maximum(hpre, 0.0)
    f = hact @ lp.w_2 + lp.b_2
    m2 = _dropout_mask(rng, f.shape, dropout_rate, f.dtype)
    if m2 is not None:
        f = f * m2
    y2, ln2 = _layer_norm(y1 + f, lp.ln2_gain, lp.ln2_bias)
    cache = dict(x=x, rel=rel, q=q, k=k, v=v, rk=rk, rv=rv, alpha=alpha, z=z,
                 m1=m1, y1=y1, ln1=ln1, hpre=hpre, hact=hact, m2=m2, ln2=ln2, scale=scale)
    return y2, cache


def _layer_backward(dy2, cache, lp: LayerParams, grad_rk, grad_rv):
    """Backward through one layer; accumulates relation-table gradients in place
    and returns ``(dx, layer_grads)``."""
    g = {}
    du2, g["ln2_gain"], g["ln2_bias"] = _layer_norm_backward(dy2, cache["ln2"], lp.ln2_gain)
    dy1 = du2.copy()
    df = du2 if cache["m2"] is None else du2 * cache["m2"]
    g["w_2"] = cache["hact"].T @ df
    g["b_2"] = df.sum(axis=0)
    dh = (df @ lp.w_2.T) * (cache["hpre"] > 0)
    g["w_1"] = cache["y1"].T @ dh
    g["b_1"] = dh.sum(axis=0)
    dy1 += dh @ lp.w_1.T
    du1, g["ln1_gain"], g["ln1_bias"] = _layer_norm_backward(dy1, cache["ln1"], lp.ln1_gain)
    dx = du1.copy()
    da = du1 if cache["m1"] is None else du1 * cache["m1"]
    g["w_o"] = cache["z"].T @ da
    dz = da @ lp.w_o.T
    n = dz.shape[0]
    H, _, dhd = lp.w_q.shape
    dzh = dz.reshape(n, H, dhd).transpose(1, 0, 2)

    alpha, q, k, v = cache["alpha"], cache["q"], cache["k"], cache["v"]
    rel = cache["rel"]
    dalpha = dzh @ v.transpose(0, 2, 1) + np.einsum("hie,ije->hij", dzh, cache["rv"])
    dv = alpha.transpose(0, 2, 1) @ dzh
    np.add.at(grad_rv, rel, np.einsum("hij,hie->ije", alpha, dzh))
    ds = alpha * (dalpha - (dalpha * alpha).sum(axis=2, keepdims=True)) * cache["scale"]
    dq = ds @ k + np.einsum("hij,ije->hie", ds, cache["rk"])
    dk = ds.transpose(0, 2, 1) @ q
    np.add.at(grad_rk, rel, np.einsum("hij,hie->ije", ds, q))

    x = cache["x"]
    g["w_q"] = np.einsum("nd,hne->hde", x, dq)
    g["w_k"] = np.einsum("nd,hne->hde", x, dk)
    g["w_v"] = np.einsum("nd,hne->hde", x, dv)
    dx += (np.einsum("hne,hde->nd", dq, lp.w_q)
           + np.einsum("hne,hde->nd", dk, lp.w_k)
           + np.einsum("hne,hde->nd", dv, lp.w_v))
    return dx, g


def rgat_layer(x, graph, params, tables, layer: int, *, training: bool = False,
               dropout_rate: float = 0.0, rng=None) -> np.ndarray:
    rel = _labels(graph)
    if rel.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"relation matrix shape {rel.shape} does not match {x.shape[0]} nodes")
    out, _ = _layer_forward(x, rel, params.layers[layer], tables,
                            dropout_rate if training else 0.0, rng if training else None)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"layer {layer} produced non-finite values")
    return out


def _forward(graph, x, params, tables, training, dropout_rate, rng):
    rel = _labels(graph)
    if rel.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"relation matrix shape {rel.shape} does not match {x.shape[0]} nodes")
    if training and rng is None:
        raise ValueError("training mode needs an explicit rng for dropout")
    caches = []
    h = x
    for lp in params.layers:
        h, cache = _layer_forward(h, rel, lp, tables, dropout_rate if training else 0.0,
                                  rng if training else None)
        caches.append(cache)
    if not np.all(np.isfinite(h)):
        raise NumericalError("encoder produced non-finite values")
    return h, caches


def encode(graph, x, params, tables, config: Optional[EncoderConfig] = None, *,
           training: bool = False, rng=None) -> np.ndarray:
    """Apply every layer in ``params`` in order. Eval mode (the default)
    disables dropout and is fully deterministic."""
    rate = config.dropout_rate if config is not None else 0.0
    z, _ = _forward(graph, x, params, tables, training, rate, rng)
    return z


def dc_term(tables: RelationEmbeddingTables) -> tuple[float, np.ndarray, np.ndarray]:
    """Decoupling loss on the stacked relation tables and its gradients
    with respect to ``key`` and ``value``."""
    from .decoupling import dc_grad, dc_loss

    r = relation_matrix(tables)
    grad = dc_grad(r).T
    dh = tables.key.shape[1]
    return dc_loss(r), grad[:, :dh], grad[:, dh:]


def loss_and_gradients(graph, x, params, tables, config: Optional[EncoderConfig] = None,
                       lambda_dc: float = 0.01, *, training: bool = False, rng=None):
    """Surrogate objective ``mean_i ||z_i||^2 + lambda_dc * L_dc(r)``.

    Returns ``(loss, grads)`` where ``grads`` maps every name from
    :func:`named_tensors` to an array of the same shape.
    """
    if lambda_dc < 0:
        raise ValueError("lambda_dc must be non-negative")
    rate = config.dropout_rate if config is not None else 0.0
    z, caches = _forward(graph, x, params, tables, training, rate, rng)
    n = z.shape[0]
    task = float((z ** 2).sum() / n)
    dc, dc_key, dc_value = dc_term(tables)
    loss = task + lambda_dc * dc
    if not math.isfinite(loss):
        raise NumericalError("loss is not finite")

    grads = {}
    grad_rk = np.zeros_like(tables.key)
    grad_rv = np.zeros_like(tables.value)
    dz = 2.0 * z / n
    for i in reversed(range(len(params.layers))):
        dz, layer_grads = _layer_backward(dz, caches[i], params.layers[i], grad_rk, grad_rv)
        for name, value in layer_grads.items():
            grads[f"layers.{i}.{name}"] = value
    grads["relations.key"] = grad_rk + lambda_dc * dc_key
    grads["relations.value"] = grad_rv + lambda_dc * dc_value
    ordered = {name: grads[name] for name in named_tensors(params, tables)}
    return loss, ordered


def random_relations(n: int, rng) -> np.ndarray:
    """Uniformly random relation labels with ``Self`` on the diagonal."""
    rel = rng.integers(1, NUM_RELATIONS, size=(n, n))
    np.fill_diagonal(rel, int(RelationLabel.SELF))
    return rel


def gradient_check(config: EncoderConfig, n_nodes: int, lambda_dc: float = 0.01,
                   coords: int = 20, h: float = 1e-5, seed: int = 0,
                   corrupt: bool = False) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients with central differences on a random instance.

    For each tensor, ``coords`` coordinates are sampled (all of them if the
    tensor is smaller). The per-coordinate error is
    ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)``. Returns the maximum error and
    the per-tensor maxima. ``corrupt`` perturbs the analytic gradient, as a
    negative control.
    """
    rng = np.random.default_rng(seed)
    cfg = replace(config, dtype="float64", seed=seed)
    params, tables = init_params(cfg)
    # Non-trivial biases/gains so their gradients are exercised away from init.
    for lp in params.layers:
        for name in ("b_1", "b_2", "ln1_bias", "ln2_bias"):
            getattr(lp, name)[...] = rng.normal(0, 0.1, getattr(lp, name).shape)
        for name in ("ln1_gain", "ln2_gain"):
            getattr(lp, name)[...] = 1.0 + rng.normal(0, 0.1, getattr(lp, name).shape)
    x = rng.standard_normal((n_nodes, cfg.model_dim))
    rel = random_relations(n_nodes, rng)

    _, grads = loss_and_gradients(rel, x, params, tables, cfg, lambda_dc)
    if corrupt:
        first = next(iter(grads))
        grads[first] = grads[first] * 1.5 + 1e-3

    tensors = named_tensors(params, tables)
    per_tensor = {}
    for name, tensor in tensors.items():
        flat = tensor.reshape(-1)
        picks = (np.arange(flat.size) if flat.size <= coords
                 else rng.choice(flat.size, size=coords, replace=False))
        worst = 0.0
        for idx in picks:
            old = flat[idx]
            flat[idx] = old + h
            up, _ = loss_and_gradients(rel, x, params, tables, cfg, lambda_dc)
            flat[idx] = old - h
            down, _ = loss_and_gradients(rel, x, params, tables, cfg, lambda_dc)
            flat[idx] = old
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, float(err))
        per_tensor[name] = worst
    return max(per_tensor.values(), default=0.0), per_tensor


def save_checkpoint(config: EncoderConfig, params: EncoderParameters,
                    tables: RelationEmbeddingTables, manifest: Optional[dict] = None) -> bytes:
    """Serialize to ``.npz`` bytes with named tensors plus a JSON header."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "labels": [label.display for label in RelationLabel],
    }
    if manifest is not None:
        header["manifest"] = manifest
    arrays = dict(named_tensors(params, tables))
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    # np.savez stamps entries with the wall clock; a fixed date keeps output byte-stable.
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as archive:
        for name, array in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with archive.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def load_checkpoint(document: bytes) -> tuple[EncoderConfig, EncoderParameters, RelationEmbeddingTables]:
    try:
        with np.load(io.BytesIO(document), allow_pickle=False) as data:
            header = json.loads(bytes(data["__header__"]).decode("utf-8"))
            arrays = {name: data[name] for name in data.files if name != "__header__"}
    except Exception as exc:  # numpy raises a zoo of types for bad archives
        raise ParseError(f"unreadable checkpoint: {exc}") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint format_version {header.get('format_version')!r}")
    if header.get("labels") != [label.display for label in RelationLabel]:
        raise ParseError("checkpoint was written for a different relation label set")
    config = EncoderConfig(**header["config"])
    try:
        layers = [LayerParams(**{name: arrays[f"layers.{i}.{name}"] for name in LAYER_FIELDS})
                  for i in range(config.num_layers)]
        tables = RelationEmbeddingTables(arrays["relations.key"], arrays["relations.value"])
    except KeyError as exc:
        raise ParseError(f"checkpoint is missing tensor {exc}") from None
    dh = config.head_dim
    if tables.key.shape != (NUM_RELATIONS, dh) or tables.value.shape != (NUM_RELATIONS, dh):
        raise ParseError("relation tables have the wrong shape")
    shapes = _layer_shapes(config)
    for i, lp in enumerate(layers):
        for name in LAYER_FIELDS:
            if getattr(lp, name).shape != shapes[name]:
                raise ParseError(f"tensor layers.{i}.{name} has shape {getattr(lp, name).shape}")
    return config, EncoderParameters(layers), tables


def _layer_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, H, dh, f = config.model_dim, config.num_heads, config.head_dim, config.ffn_dim
    return {"w_q": (H, d, dh), "w_k": (H, d, dh), "w_v": (H, d, dh), "w_o": (d, d),
            "w_1": (d, f), "b_1": (f,), "w_2": (f, d), "b_2": (d,),
            "ln1_gain": (d,), "ln1_bias": (d,), "ln2_gain": (d,), "ln2_bias": (d,)}
