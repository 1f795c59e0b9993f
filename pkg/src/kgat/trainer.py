"""Adversarial training: minimize task loss, un-learn the group attribute.

The classifier parameters descend L_primary - lam * L_adversary while a
small perceptron (the adversary) simultaneously descends L_adversary,
trying to read the sensitive attribute out of the fused embedding. The
coupling runs through a gradient-reversal op, so one backward pass per
batch yields both players' gradients and both take one Adam step
(simultaneous updates, no inner maximization loop).

Batches are assembled as one tape graph: the text side and both heads
are fully vectorized, the per-example attention pooling loops over the
records that actually have entity mentions. Everything is seeded and
summation orders are fixed, so identical inputs reproduce identical
training histories bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import fairness, model as model_mod
from .counterfactual import SwapLexicon, augment
from .data import Record, train_test_split
from .gcn import encode, encode_on_tape
from .graph import KnowledgeGraph
from .model import (
    ModelParams,
    Prediction,
    build_vocab,
    forward,
    glorot,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
)
from .numeric import AdamState, Slot, Tape, adam_step, backward

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training aborted (bad inputs or a non-finite loss)."""


@dataclass
class TrainerConfig:
    """Training and model-shape knobs; the file format is ``key = value``.

    The default learning rate is the documented fine-tuning value; the
    desk-scale synthetic demos override it to 1e-2 (see the experiment
    command), since 3e-5 barely moves a freshly initialized toy model.
    """

    learning_rate: float = 3e-5
    batch_size: int = 32
    epochs: int = 10
    lam: float = 1.0
    seed: int = 0
    adversary_hidden: int = 16
    adversary_lr_scale: float = 1.0
    text_dim: int = 16
    kg_dim: int = 16
    gcn_hidden: int = 16
    d_k: int = 8
    num_heads: int = 1
    adversary_enabled: bool = True
    augment_eval: bool = False
    attribute_flips: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.adversary_lr_scale <= 0:
            raise ValueError(
                f"adversary_lr_scale must be > 0, got {self.adversary_lr_scale}")


_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; blanks and ``#`` comments are skipped."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def make_config(file_path=None, **overrides) -> TrainerConfig:
    """Defaults, then config-file keys, then non-None keyword overrides."""
    merged: dict[str, object] = {}
    flips: dict[str, str] = {}
    if file_path is not None:
        for key, value in parse_config_file(file_path).items():
            if key.startswith("flip."):
                flips[key[len("flip."):]] = value
            else:
                merged[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "attribute_flips":
            flips.update(value)
        else:
            merged[key] = value
    if "lambda" in merged:  # the file spells the trade-off knob out
        merged["lam"] = merged.pop("lambda")

    kwargs: dict[str, object] = {"attribute_flips": flips}
    by_name = {f.name: f for f in dc_fields(TrainerConfig)}
    for key, value in merged.items():
        if key not in by_name:
            raise ValueError(f"unknown config key '{key}'")
        target = by_name[key].type
        if isinstance(value, str):
            if target == "bool":
                if value.lower() not in _BOOL_WORDS:
                    raise ValueError(f"config key '{key}': not a boolean: {value!r}")
                value = _BOOL_WORDS[value.lower()]
            elif target == "int":
                value = int(value)
            elif target == "float":
                value = float(value)
        kwargs[key] = value
    return TrainerConfig(**kwargs)


@dataclass
class AdversaryParams:
    """Two-layer relu perceptron from fused embedding to attribute logits."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    attr_values: list[str]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss_primary: float
    loss_adversary: float
    loss_combined: float
    train_accuracy: float
    parity_gap: float


@dataclass
class TrainedModel:
    params: ModelParams
    adversary: AdversaryParams | None
    node_embeddings: np.ndarray
    history: list[EpochStats] = field(default_factory=list)


def gradient_reversal(tape: Tape, x: Slot, lam: float) -> Slot:
    """Identity in the forward pass; scales the gradient by -lam going back."""
    return tape.grad_reverse(x, lam)


def combined_loss(l_primary: float, l_adversary: float, lam: float) -> float:
    """The minimax objective value the classifier player descends."""
    if not (np.isfinite(l_primary) and np.isfinite(l_adversary)):
        raise ValueError("combined_loss requires finite losses")
    return l_primary - lam * l_adversary


@dataclass(frozen=True)
class EvalResult:
    record_id: str
    y_true: int
    y_pred: int
    attribute: str
    p_positive: float


def evaluate(model: TrainedModel, dataset: list[Record]) -> list[EvalResult]:
    """Per-record forward passes, order preserved."""
    out = []
    for r in dataset:
        pred, _ = forward(r, None, model.node_embeddings, model.params)
        out.append(EvalResult(record_id=r.id, y_true=r.label, y_pred=pred.label,
                              attribute=r.attribute,
                              p_positive=float(pred.probabilities[0, 1])))
    return out


def _holdout_parity_gap(model: TrainedModel, holdout: list[Record]) -> float:
    results = evaluate(model, holdout)
    audit = [fairness.AuditRecord(y_true=r.y_true, y_pred=r.y_pred,
                                  attribute=r.attribute) for r in results]
    return fairness.demographic_parity(audit).gap


class _Workspace:
    """Precomputed per-record arrays shared by every batch of a run."""

    def __init__(self, records: list[Record], params: ModelParams,
                 attr_index: dict[str, int], with_graph: bool):
        self.labels = np.array([r.label for r in records], dtype=np.intp)
        self.attrs = np.array([attr_index[r.attribute] for r in records],
                              dtype=np.intp)
        self.mention_ids = [
            [m.node_id for m in r.mentions] if with_graph else []
            for r in records]
        if params.token_emb is not None:
            vocab_size = params.token_emb.shape[0]
            self.inputs = np.zeros((len(records), vocab_size))
            for i, r in enumerate(records):
                if not r.tokens:
                    continue
                for t in r.tokens:
                    self.inputs[i, params.vocab.get(t, model_mod.OOV_ID)] += 1.0
                self.inputs[i] /= len(r.tokens)
            self.text_is_embedding = True
        else:
            self.inputs = np.stack([r.features for r in records])
            self.text_is_embedding = False


def _batch_graph(tape: Tape, ws: _Workspace, idx: np.ndarray,
                 theta: dict[str, np.ndarray], phi: dict[str, np.ndarray] | None,
                 g: KnowledgeGraph | None, gcn_acts: list[str], cfg: TrainerConfig):
    """Record one batch's forward pass; returns loss slots and batch logits."""
    p = {name: tape.parameter(value) for name, value in theta.items()}
    a = {name: tape.parameter(value) for name, value in (phi or {}).items()}

    with_graph = g is not None and g.node_count > 0
    if with_graph:
        gcn_slots = [p[f"gcn_{i}"] for i in range(len(gcn_acts))]
        node_embs = encode_on_tape(tape, g, tape.constant(g.features),
                                   gcn_slots, gcn_acts)
        k_proj = tape.matmul(node_embs, p["w_k"])
        v_proj = tape.matmul(node_embs, p["w_v"])

    if ws.text_is_embedding:
        e_llm = tape.matmul(tape.constant(ws.inputs[idx]), p["token_emb"])
    else:
        e_llm = tape.constant(ws.inputs[idx])
    q_proj = tape.matmul(e_llm, p["w_q"])

    kg_width = theta["w_v"].shape[1]
    zero_kg = tape.constant(np.zeros((1, kg_width)))
    scale = 1.0 / np.sqrt(cfg.d_k)
    kg_rows = []
    for row, record_index in enumerate(idx):
        ids = ws.mention_ids[record_index]
        if not ids or not with_graph:
            kg_rows.append(zero_kg)
            continue
        q_i = tape.take_rows(q_proj, [row])
        k_i = tape.take_rows(k_proj, ids)
        v_i = tape.take_rows(v_proj, ids)
        if cfg.num_heads == 1:
            scores = tape.smul(tape.matmul_t(q_i, k_i), scale)
            kg_rows.append(tape.matmul(tape.softmax_rows(scores), v_i))
        else:
            heads = []
            for h in range(cfg.num_heads):
                cols = list(range(h * cfg.d_k, (h + 1) * cfg.d_k))
                scores = tape.smul(
                    tape.matmul_t(tape.take_cols(q_i, cols),
                                  tape.take_cols(k_i, cols)), scale)
                heads.append(tape.matmul(tape.softmax_rows(scores),
                                         tape.take_cols(v_i, cols)))
            kg_rows.append(tape.hconcat(heads))
    e_kg = tape.vstack(kg_rows)

    fused = tape.hconcat([e_llm, e_kg])
    logits = tape.add_rowvec(tape.matmul(fused, p["w_cls"]), p["b_cls"])
    l_primary = tape.cross_entropy(logits, ws.labels[idx])

    if a:
        rev = gradient_reversal(tape, fused, cfg.lam)
        hidden = tape.relu(tape.add_rowvec(tape.matmul(rev, a["adv_w1"]),
                                           a["adv_b1"]))
        adv_logits = tape.add_rowvec(tape.matmul(hidden, a["adv_w2"]),
                                     a["adv_b2"])
        l_adv = tape.cross_entropy(adv_logits, ws.attrs[idx])
        total = tape.add(l_primary, l_adv)
    else:
        l_adv = None
        total = l_primary
    return {**p, **a}, total, l_primary, l_adv, logits


def train(dataset: list[Record], g: KnowledgeGraph | None,
          config: TrainerConfig,
          lexicon: SwapLexicon | None = None) -> tuple[TrainedModel, list[EpochStats]]:
    """Run the full minimax loop; deterministic given (dataset, g, config).

    The dataset is split 80/20 with the config seed; counterfactual
    augmentation (when a lexicon is given) is applied to the training
    split only, unless ``augment_eval`` opts the holdout in too.
    """
    if not dataset:
        raise TrainingError("training dataset is empty")
    kinds = {r.tokens is None for r in dataset}
    if len(kinds) > 1:
        raise TrainingError("dataset mixes token and feature payloads")

    train_recs, holdout = train_test_split(dataset, config.seed)
    if lexicon is not None:
        train_recs = augment(train_recs, lexicon, config.attribute_flips, g)
        if config.augment_eval:
            holdout = augment(holdout, lexicon, config.attribute_flips, g)

    # augmentation can flip attributes into values absent from the input
    attr_values = sorted({r.attribute for r in train_recs}
                         | {r.attribute for r in holdout})
    attr_index = {v: i for i, v in enumerate(attr_values)}

    is_text = train_recs[0].tokens is not None
    vocab = build_vocab(train_recs) if is_text else None
    text_dim = config.text_dim if is_text else train_recs[0].features.shape[0]
    with_graph = g is not None and g.node_count > 0

    seed_root = np.random.SeedSequence(config.seed)
    rng_model, rng_adv, rng_shuffle = (np.random.default_rng(s)
                                       for s in seed_root.spawn(3))

    params = init_model_params(
        rng_model, vocab=vocab, text_dim=text_dim,
        graph_feature_dim=g.feature_dim if with_graph else 0,
        gcn_hidden=config.gcn_hidden, kg_dim=config.kg_dim, d_k=config.d_k,
        num_heads=config.num_heads, with_graph=with_graph)

    theta: dict[str, np.ndarray] = {
        "w_q": params.w_q, "w_k": params.w_k, "w_v": params.w_v,
        "w_cls": params.w_cls, "b_cls": params.b_cls,
    }
    if params.token_emb is not None:
        theta["token_emb"] = params.token_emb
    gcn_acts = [layer.activation for layer in params.gcn_layers]
    for i, layer in enumerate(params.gcn_layers):
        theta[f"gcn_{i}"] = layer.weight

    phi: dict[str, np.ndarray] | None = None
    adversary = None
    if config.adversary_enabled:
        fused_dim = params.fused_dim
        phi = {
            "adv_w1": glorot(rng_adv, fused_dim, config.adversary_hidden),
            "adv_b1": np.zeros((1, config.adversary_hidden)),
            "adv_w2": glorot(rng_adv, config.adversary_hidden, len(attr_values)),
            "adv_b2": np.zeros((1, len(attr_values))),
        }

    # the adversary may run hotter than the classifier so it keeps up
    # with the representation it is trying to read
    opt: dict[str, AdamState] = {
        name: AdamState.for_param(value, lr=config.learning_rate)
        for name, value in theta.items()}
    for name, value in (phi or {}).items():
        opt[name] = AdamState.for_param(
            value, lr=config.learning_rate * config.adversary_lr_scale)

    ws = _Workspace(train_recs, params, attr_index, with_graph)
    n = len(train_recs)
    history: list[EpochStats] = []

    def snapshot() -> TrainedModel:
        synced = ModelParams(
            vocab=params.vocab, token_emb=theta.get("token_emb"),
            w_q=theta["w_q"], w_k=theta["w_k"], w_v=theta["w_v"],
            d_k=params.d_k, num_heads=params.num_heads,
            w_cls=theta["w_cls"], b_cls=theta["b_cls"],
            gcn_layers=[type(layer)(theta[f"gcn_{i}"], layer.activation)
                        for i, layer in enumerate(params.gcn_layers)])
        adv = None
        if phi is not None:
            adv = AdversaryParams(w1=phi["adv_w1"], b1=phi["adv_b1"],
                                  w2=phi["adv_w2"], b2=phi["adv_b2"],
                                  attr_values=attr_values)
        node_embs = (encode(g, synced.gcn_layers) if with_graph
                     else np.zeros((0, config.kg_dim)))
        return TrainedModel(params=synced, adversary=adv,
                            node_embeddings=node_embs, history=history)

    for epoch in range(config.epochs):
        order = rng_shuffle.permutation(n)
        sum_primary = sum_adv = 0.0
        n_correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = Tape()
            slots, total, l_p, l_a, logits = _batch_graph(
                tape, ws, idx, theta, phi, g, gcn_acts, config)
            lp_val = float(tape.value(l_p)[0, 0])
            la_val = float(tape.value(l_a)[0, 0]) if l_a is not None else 0.0
            if not (np.isfinite(lp_val) and np.isfinite(la_val)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            z = tape.value(logits)
            n_correct += int(np.sum((z[:, 1] > z[:, 0]).astype(int)
                                    == ws.labels[idx]))
            sum_primary += lp_val * len(idx)
            sum_adv += la_val * len(idx)

            grads = backward(tape, total)
            for name, slot in slots.items():
                target = theta if name in theta else phi
                target[name], opt[name] = adam_step(target[name], grads[slot],
                                                    opt[name])

        mean_primary = sum_primary / n
        mean_adv = sum_adv / n
        stats = EpochStats(
            epoch=epoch,
            loss_primary=mean_primary,
            loss_adversary=mean_adv,
            loss_combined=combined_loss(mean_primary, mean_adv, config.lam),
            train_accuracy=n_correct / n,
            parity_gap=_holdout_parity_gap(snapshot(), holdout))
        history.append(stats)
        log.info("epoch %d: primary=%.4f adversary=%.4f acc=%.3f gap=%.3f",
                 epoch, stats.loss_primary, stats.loss_adversary,
                 stats.train_accuracy, stats.parity_gap)

    model = snapshot()
    return model, history


# -- persistence -------------------------------------------------------------

def save_model(path, model: TrainedModel) -> None:
    extras = {"node_embeddings": model.node_embeddings}
    meta: dict[str, object] = {"attr_values": []}
    if model.adversary is not None:
        extras.update({"adv_w1": model.adversary.w1, "adv_b1": model.adversary.b1,
                       "adv_w2": model.adversary.w2, "adv_b2": model.adversary.b2})
        meta["attr_values"] = model.adversary.attr_values
    save_checkpoint(path, model.params, extras, meta)


def load_model(path) -> TrainedModel:
    params, extras, meta = load_checkpoint(path)
    adversary = None
    if "adv_w1" in extras:
        adversary = AdversaryParams(
            w1=extras["adv_w1"], b1=extras["adv_b1"], w2=extras["adv_w2"],
            b2=extras["adv_b2"], attr_values=list(meta.get("attr_values", [])))
    return TrainedModel(params=params, adversary=adversary,
                        node_embeddings=extras["node_embeddings"], history=[])


def write_history_csv(history: list[EpochStats], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss_primary", "loss_adversary",
                         "loss_combined", "train_accuracy", "parity_gap"])
        for s in history:
            writer.writerow([s.epoch, repr(s.loss_primary), repr(s.loss_adversary),
                             repr(s.loss_combined), repr(s.train_accuracy),
                             repr(s.parity_gap)])
