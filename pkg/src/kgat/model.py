"""The predictive model: text encoding, KG attention pooling, fusion.

The text side is a deliberately small encoder (mean of token embeddings,
or the raw feature vector for tabular data). The graph side pools the
embeddings of entities linked in the example through scaled dot-product
attention, with the text embedding providing the query:

    attention(Q, K, V) = softmax(Q K^T / sqrt(d_k)) V

Both halves are concatenated into one fused vector that feeds a linear
binary classifier; the same fused vector is what the training-time
adversary taps. Checkpoints are single self-describing JSON files with
format tag "KGATv1".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Record
from .gcn import GcnLayerParams
from .graph import EntityMention, KnowledgeGraph
from .numeric import ShapeError, matmul, softmax_rows

CHECKPOINT_FORMAT = "KGATv1"
OOV_ID = 0


@dataclass
class ModelParams:
    """Every learned matrix plus the vocabulary that indexes embeddings.

    ``token_emb`` row 0 is the out-of-vocabulary embedding; it is None
    for feature-vector datasets, where the payload is used directly as
    the text-side embedding. Attention projections are stored (in, out)
    with per-head column blocks of width ``d_k``.
    """

    vocab: dict[str, int]
    token_emb: np.ndarray | None
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    d_k: int
    num_heads: int
    w_cls: np.ndarray
    b_cls: np.ndarray
    gcn_layers: list[GcnLayerParams] = field(default_factory=list)

    @property
    def text_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def kg_out_dim(self) -> int:
        return self.w_v.shape[1]

    @property
    def fused_dim(self) -> int:
        return self.text_dim + self.kg_out_dim


@dataclass(frozen=True)
class FusedEmbedding:
    e_llm: np.ndarray
    e_kg: np.ndarray
    e_integrated: np.ndarray


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray  # (1, 2)
    label: int


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, d_k: int) -> np.ndarray:
    """Scaled dot-product attention over rows of k/v."""
    if d_k <= 0:
        raise ValueError(f"d_k must be positive, got {d_k}")
    if q.shape[1] != d_k or k.shape[1] != d_k:
        raise ShapeError(f"query/key width must equal d_k={d_k}: "
                         f"q {q.shape}, k {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key rows {k.shape[0]} != value rows {v.shape[0]}")
    scores = matmul(q, k.T) / math.sqrt(d_k)
    return matmul(softmax_rows(scores), v)


def text_encode(tokens: list[str], params: ModelParams) -> np.ndarray:
    """Mean of token embeddings; empty input gives the zero vector."""
    if params.token_emb is None:
        raise ValueError("model has no token embeddings (feature-vector payload)")
    if not tokens:
        return np.zeros((1, params.token_emb.shape[1]))
    ids = [params.vocab.get(t, OOV_ID) for t in tokens]
    return params.token_emb[ids].mean(axis=0, keepdims=True)


def kg_pool(mentions: list[EntityMention], node_embeddings: np.ndarray,
            e_llm: np.ndarray, params: ModelParams) -> np.ndarray:
    """Attention-pool linked-entity embeddings, queried by the text side."""
    if not mentions:
        return np.zeros((1, params.kg_out_dim))
    entity = node_embeddings[[m.node_id for m in mentions]]
    outputs = []
    for h in range(params.num_heads):
        cols = slice(h * params.d_k, (h + 1) * params.d_k)
        outputs.append(attention(matmul(e_llm, params.w_q[:, cols]),
                                 matmul(entity, params.w_k[:, cols]),
                                 matmul(entity, params.w_v[:, cols]),
                                 params.d_k))
    return np.concatenate(outputs, axis=1)


def fuse(e_llm: np.ndarray, e_kg: np.ndarray) -> FusedEmbedding:
    """Concatenate the two halves; nothing fancier is intended."""
    return FusedEmbedding(e_llm=e_llm, e_kg=e_kg,
                          e_integrated=np.concatenate([e_llm, e_kg], axis=1))


def split_fused(fused: FusedEmbedding) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of fuse, mostly for tests and debugging."""
    d = fused.e_llm.shape[1]
    return fused.e_integrated[:, :d], fused.e_integrated[:, d:]


def forward(record: Record, g: KnowledgeGraph | None,
            node_embeddings: np.ndarray,
            params: ModelParams) -> tuple[Prediction, FusedEmbedding]:
    """Deterministic forward pass for one record.

    Entity mentions are taken from the record (linking happens at load
    time). Ties in the class probabilities resolve to label 0.
    """
    if record.tokens is not None:
        e_llm = text_encode(record.tokens, params)
    else:
        e_llm = record.features.reshape(1, -1)
        if e_llm.shape[1] != params.text_dim:
            raise ShapeError(f"feature dim {e_llm.shape[1]} != model text dim "
                             f"{params.text_dim}")
    e_kg = kg_pool(record.mentions, node_embeddings, e_llm, params)
    fused = fuse(e_llm, e_kg)
    logits = matmul(fused.e_integrated, params.w_cls) + params.b_cls
    probs = softmax_rows(logits)
    label = 0 if probs[0, 0] >= probs[0, 1] else 1
    return Prediction(probabilities=probs, label=label), fused


# -- initialization --------------------------------------------------------

def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def build_vocab(records: list[Record]) -> dict[str, int]:
    """Sorted token -> id map; id 0 stays reserved for OOV."""
    tokens = sorted({t for r in records if r.tokens for t in r.tokens})
    return {t: i + 1 for i, t in enumerate(tokens)}


def init_model_params(rng: np.random.Generator, *, vocab: dict[str, int] | None,
                      text_dim: int, graph_feature_dim: int, gcn_hidden: int,
                      kg_dim: int, d_k: int, num_heads: int,
                      with_graph: bool) -> ModelParams:
    """Seeded initialization; weights uniform +/- sqrt(6/(fan_in+fan_out))."""
    token_emb = None
    if vocab is not None:
        token_emb = glorot(rng, len(vocab) + 1, text_dim)
    if with_graph:
        gcn_layers = [
            GcnLayerParams(glorot(rng, gcn_hidden, graph_feature_dim), "relu"),
            GcnLayerParams(glorot(rng, kg_dim, gcn_hidden), "linear"),
        ]
    else:
        gcn_layers = []
    proj_width = num_heads * d_k
    fused_dim = text_dim + proj_width
    return ModelParams(
        vocab=vocab or {},
        token_emb=token_emb,
        w_q=glorot(rng, text_dim, proj_width),
        w_k=glorot(rng, kg_dim, proj_width),
        w_v=glorot(rng, kg_dim, proj_width),
        d_k=d_k,
        num_heads=num_heads,
        w_cls=glorot(rng, fused_dim, 2),
        b_cls=np.zeros((1, 2)),
        gcn_layers=gcn_layers,
    )


# -- checkpoint I/O ----------------------------------------------------------

def _encode_matrix(m: np.ndarray) -> dict:
    return {"shape": list(m.shape), "data": m.ravel().tolist()}


def _decode_matrix(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])


def save_checkpoint(path, params: ModelParams,
                    extras: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write a single self-describing JSON checkpoint (format KGATv1)."""
    matrices = {
        "w_q": params.w_q, "w_k": params.w_k, "w_v": params.w_v,
        "w_cls": params.w_cls, "b_cls": params.b_cls,
    }
    if params.token_emb is not None:
        matrices["token_emb"] = params.token_emb
    for i, layer in enumerate(params.gcn_layers):
        matrices[f"gcn_{i}_weight"] = layer.weight
    for name, m in (extras or {}).items():
        matrices[name] = m
    payload = {
        "format": CHECKPOINT_FORMAT,
        "d_k": params.d_k,
        "num_heads": params.num_heads,
        "gcn_activations": [layer.activation for layer in params.gcn_layers],
        "vocab": params.vocab,
        "meta": meta or {},
        "matrices": {k: _encode_matrix(v) for k, v in matrices.items()},
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelParams, dict[str, np.ndarray], dict]:
    """Read a KGATv1 checkpoint back into params, extra matrices, and meta."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: "
                         f"format={payload.get('format')!r}")
    matrices = {k: _decode_matrix(v) for k, v in payload["matrices"].items()}
    gcn_layers = [
        GcnLayerParams(matrices.pop(f"gcn_{i}_weight"), act)
        for i, act in enumerate(payload["gcn_activations"])
    ]
    params = ModelParams(
        vocab=payload["vocab"],
        token_emb=matrices.pop("token_emb", None),
        w_q=matrices.pop("w_q"),
        w_k=matrices.pop("w_k"),
        w_v=matrices.pop("w_v"),
        d_k=payload["d_k"],
        num_heads=payload["num_heads"],
        w_cls=matrices.pop("w_cls"),
        b_cls=matrices.pop("b_cls"),
        gcn_layers=gcn_layers,
    )
    return params, matrices, payload["meta"]
