"""Multi-objective training loop.

The loss of one pair is a weighted sum: cross entropy of the source and
target component classes (weight 1 each), cross entropy of the relation
over the extended label domain (weight 10, inverse labels included), and
an L2 penalty on the trainable weight matrices (weight 1e-4; biases and
normalization parameters excluded).  Batches sum per-pair losses, so
duplicating a batch row exactly doubles every gradient.

Optimization is Adam (b1=0.9, b2=0.9999) under proportional learning-rate
decay, early-stopped on validation link F1 with a strict-improvement
patience rule; the returned model is the best-epoch snapshot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace, asdict
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .corpus import CorpusSchema, Document
from .embeddings import EmbeddingTable, encode
from .neural import tape
from .neural.model import (
    ArchConfig, Batch, ModelParams, Trace, backward, forward_batch,
    init_params,
)
from .pairing import PairInstance, encode_distance


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    source: float = 1.0
    target: float = 1.0
    relation: float = 10.0
    l2: float = 1e-4

    def __post_init__(self):
        for name in ("source", "target", "relation", "l2"):
            if getattr(self, name) < 0:
                raise TrainingError(f"loss weight {name} must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.9999
    adam_epsilon: float = 1e-8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    decay: float = 0.001  # proportional lr decay constant per epoch
    batch_size: int = 32
    patience: int = 100   # 20 for DrInventor-sized runs
    max_epochs: int = 300
    seed: int = 0
    link_rule: str = "relation_argmax"  # or "p_link_threshold"

    def __post_init__(self):
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")
        if self.link_rule not in ("relation_argmax", "p_link_threshold"):
            raise TrainingError(f"unknown link rule {self.link_rule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 / (1 + decay * epoch); decay 0 keeps the rate constant."""
    if epoch < 0:
        raise TrainingError("epoch must be >= 0")
    return cfg.lr0 / (1.0 + cfg.decay * epoch)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def l2_penalty(params: ModelParams) -> float:
    return float(sum(np.sum(params.arrays[n] ** 2) for n in params.l2_names()))


def multitask_loss(pred, gold: PairInstance, params: ModelParams,
                   schema: CorpusSchema,
                   weights: LossWeights = LossWeights()) -> float:
    """Per-pair loss value from a HeadPrediction (reporting / oracle path;
    training differentiates the graph form below)."""
    comp_idx = {c: i for i, c in enumerate(schema.component_classes)}
    rel_idx = {r: i for i, r in enumerate(schema.extended_relations)}
    ce_src = -np.log(pred.p_source[comp_idx[gold.source_label]])
    ce_tgt = -np.log(pred.p_target[comp_idx[gold.target_label]])
    ce_rel = -np.log(pred.p_relation[rel_idx[gold.relation]])
    return float(weights.source * ce_src + weights.target * ce_tgt
                 + weights.relation * ce_rel + weights.l2 * l2_penalty(params))


@dataclass
class LossParts:
    total: float
    ce_source: float
    ce_target: float
    ce_relation: float
    l2: float


def multitask_loss_graph(trace: Trace, y_src: np.ndarray, y_tgt: np.ndarray,
                         y_rel: np.ndarray,
                         weights: LossWeights = LossWeights()) -> LossParts:
    """Build the summed batch loss on the trace's graph (sets trace.loss).

    The L2 term is part of each pair's loss, so the batch carries it
    ``batch_size`` times; this keeps gradients exactly additive over rows.
    """
    B = trace.batch.size

    def ce(logp, y, n_classes):
        onehot = np.zeros((B, n_classes))
        onehot[np.arange(B), y] = 1.0
        return tape.scale(tape.tsum(tape.mul(logp, tape.constant(onehot))), -1.0)

    cfg = trace.cfg
    ce_s = ce(trace.logp_src, y_src, cfg.n_component_classes)
    ce_t = ce(trace.logp_tgt, y_tgt, cfg.n_component_classes)
    ce_r = ce(trace.logp_rel, y_rel, cfg.n_relation_classes)

    loss = tape.add(
        tape.add(tape.scale(ce_s, weights.source), tape.scale(ce_t, weights.target)),
        tape.scale(ce_r, weights.relation))
    l2_val = 0.0
    if weights.l2 > 0:
        sq = None
        for name in sorted(trace.leaves):
            if name.rsplit(".", 1)[-1] in ("W", "U", "W1", "W2", "w3"):
                leaf = trace.leaves[name]
                term = tape.tsum(tape.mul(leaf, leaf))
                sq = term if sq is None else tape.add(sq, term)
        if sq is not None:
            l2_node = tape.scale(sq, weights.l2 * B)
            l2_val = float(l2_node.data)
            loss = tape.add(loss, l2_node)
    trace.loss = loss
    return LossParts(total=float(loss.data), ce_source=float(ce_s.data),
                     ce_target=float(ce_t.data), ce_relation=float(ce_r.data),
                     l2=l2_val)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(params.arrays[n]) for n in params.trainable_names},
            v={n: np.zeros_like(params.arrays[n]) for n in params.trainable_names},
            t=0)


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray],
              state: AdamState, lr: float, cfg: TrainConfig = TrainConfig()):
    """One bias-corrected Adam update, in place on params and state."""
    state.t += 1
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.adam_epsilon
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name in params.trainable_names:
        g = grads.get(name)
        if g is None:
            continue
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        params.arrays[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# encoded datasets
# ---------------------------------------------------------------------------

@dataclass
class EncodedDataset:
    """Pair dataset lowered to padded id arrays and label indices."""

    pairs: List[PairInstance]
    src_ids: np.ndarray
    src_mask: np.ndarray
    tgt_ids: np.ndarray
    tgt_mask: np.ndarray
    dist: np.ndarray
    y_src: np.ndarray
    y_tgt: np.ndarray
    y_rel: np.ndarray
    is_self: np.ndarray
    gold_link: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch(src_ids=self.src_ids[idx], src_mask=self.src_mask[idx],
                     tgt_ids=self.tgt_ids[idx], tgt_mask=self.tgt_mask[idx],
                     dist=self.dist[idx])


def encode_dataset(docs: Sequence[Document], pairs: Sequence[PairInstance],
                   table: EmbeddingTable, T: int,
                   schema: CorpusSchema) -> EncodedDataset:
    comp_idx = {c: i for i, c in enumerate(schema.component_classes)}
    rel_idx = {r: i for i, r in enumerate(schema.extended_relations)}
    by_doc = {d.doc_id: d for d in docs}
    seq_cache: Dict[tuple, tuple] = {}

    def seq_of(doc_id: str, comp_id: str):
        key = (doc_id, comp_id)
        if key not in seq_cache:
            comp = by_doc[doc_id].component_by_id(comp_id)
            s = encode(comp.tokens, table, T)
            seq_cache[key] = (np.asarray(s.ids), np.asarray(s.mask, dtype=np.float64))
        return seq_cache[key]

    n = len(pairs)
    src_ids = np.zeros((n, T), dtype=np.int64)
    src_mask = np.zeros((n, T))
    tgt_ids = np.zeros((n, T), dtype=np.int64)
    tgt_mask = np.zeros((n, T))
    dist = np.zeros((n, 10))
    y_src = np.zeros(n, dtype=np.int64)
    y_tgt = np.zeros(n, dtype=np.int64)
    y_rel = np.zeros(n, dtype=np.int64)
    is_self = np.zeros(n, dtype=bool)
    gold_link = np.zeros(n, dtype=bool)
    for i, p in enumerate(pairs):
        src_ids[i], src_mask[i] = seq_of(p.doc_id, p.source_id)
        tgt_ids[i], tgt_mask[i] = seq_of(p.doc_id, p.target_id)
        dist[i] = encode_distance(p.distance)
        y_src[i] = comp_idx[p.source_label]
        y_tgt[i] = comp_idx[p.target_label]
        y_rel[i] = rel_idx[p.relation]
        is_self[i] = p.is_self_pair
        gold_link[i] = p.link
    return EncodedDataset(pairs=list(pairs), src_ids=src_ids, src_mask=src_mask,
                          tgt_ids=tgt_ids, tgt_mask=tgt_mask, dist=dist,
                          y_src=y_src, y_tgt=y_tgt, y_rel=y_rel,
                          is_self=is_self, gold_link=gold_link)


# ---------------------------------------------------------------------------
# link prediction rules + validation monitor
# ---------------------------------------------------------------------------

def predict_links(p_rel: np.ndarray, n_forward: int,
                  rule: str = "relation_argmax") -> np.ndarray:
    """Boolean link decisions from relation-head probabilities (N, R)."""
    if rule == "relation_argmax":
        return p_rel.argmax(axis=1) < n_forward
    if rule == "p_link_threshold":
        return p_rel[:, :n_forward].sum(axis=1) > 0.5
    raise TrainingError(f"unknown link rule {rule!r}")


def positive_link_f1(pred: np.ndarray, gold: np.ndarray) -> float:
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def infer_probs(params: ModelParams, ds: EncodedDataset,
                batch_size: int = 64):
    """Infer-mode head probabilities over a dataset.

    -> (p_src, p_tgt, p_rel) stacked arrays."""
    p_src, p_tgt, p_rel = [], [], []
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        preds, _ = forward_batch(params, ds.batch(idx), mode="infer")
        p_src.extend(p.p_source for p in preds)
        p_tgt.extend(p.p_target for p in preds)
        p_rel.extend(p.p_relation for p in preds)
    return np.asarray(p_src), np.asarray(p_tgt), np.asarray(p_rel)


def validation_link_f1(params: ModelParams, valid: EncodedDataset,
                       rule: str) -> float:
    """Positive-class link F1 on the validation pairs, self pairs excluded."""
    _, _, p_rel = infer_probs(params, valid)
    n_forward = (params.cfg.n_relation_classes - 1) // 2
    keep = ~valid.is_self
    pred = predict_links(p_rel[keep], n_forward, rule)
    return positive_link_f1(pred, valid.gold_link[keep])


def head_accuracies(params: ModelParams, ds: EncodedDataset) -> Dict[str, float]:
    """Argmax accuracy of each head over a dataset (infer mode)."""
    p_src, p_tgt, p_rel = infer_probs(params, ds)
    return {
        "source": float(np.mean(p_src.argmax(axis=1) == ds.y_src)),
        "target": float(np.mean(p_tgt.argmax(axis=1) == ds.y_tgt)),
        "relation": float(np.mean(p_rel.argmax(axis=1) == ds.y_rel)),
    }


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_total: float
    ce_source: float
    ce_target: float
    ce_relation: float
    l2: float
    val_link_f1: float


@dataclass
class TrainHistory:
    records: List[EpochRecord]
    best_epoch: int
    stopped_epoch: int

    def to_csv(self, path, config_hash: str = "") -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            if config_hash:
                f.write(f"# config_hash={config_hash}\n")
            f.write(f"# best_epoch={self.best_epoch} "
                    f"stopped_epoch={self.stopped_epoch}\n")
            writer = csv.writer(f)
            writer.writerow(["epoch", "lr", "loss_total", "ce_source",
                             "ce_target", "ce_relation", "l2", "val_link_f1"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.lr), repr(r.loss_total),
                                 repr(r.ce_source), repr(r.ce_target),
                                 repr(r.ce_relation), repr(r.l2),
                                 repr(r.val_link_f1)])


def train(arch: ArchConfig, embedding_matrix: np.ndarray,
          train_ds: EncodedDataset, valid_ds: EncodedDataset,
          cfg: TrainConfig,
          eval_fn: Optional[Callable[[ModelParams, int], float]] = None,
          log_fn: Optional[Callable[[str], None]] = None):
    """-> (ModelParams snapshot at the best epoch, TrainHistory).

    ``eval_fn`` overrides the validation monitor (used by tests to inject
    synthetic histories); by default it is validation link F1.
    """
    if len(train_ds) == 0:
        raise TrainingError("empty training set")
    if eval_fn is None and not np.any(valid_ds.gold_link & ~valid_ds.is_self):
        raise TrainingError(
            "validation set has no positive links; the early-stopping "
            "monitor is undefined")

    seeds = np.random.SeedSequence(cfg.seed).generate_state(3)
    params = init_params(arch, int(seeds[0]), embedding_matrix)
    shuffle_rng = np.random.default_rng(int(seeds[1]))
    dropout_rng = np.random.default_rng(int(seeds[2]))
    state = AdamState.zeros(params)

    if eval_fn is None:
        eval_fn = lambda p, _e: validation_link_f1(p, valid_ds, cfg.link_rule)

    records: List[EpochRecord] = []
    best_f1 = -np.inf
    best_epoch = 0
    best_params = params.copy()
    epochs_since = 0
    stopped_epoch = 0
    n = len(train_ds)

    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        order = shuffle_rng.permutation(n)
        totals = np.zeros(5)  # total, ce_s, ce_t, ce_r, l2
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = train_ds.batch(idx)
            rng_seed = int(dropout_rng.integers(2 ** 62))
            _, trace = forward_batch(params, batch, mode="train",
                                     rng_seed=rng_seed)
            parts = multitask_loss_graph(trace, train_ds.y_src[idx],
                                         train_ds.y_tgt[idx],
                                         train_ds.y_rel[idx],
                                         cfg.loss_weights)
            grads = backward(trace)
            adam_step(params, grads, state, lr, cfg)
            totals += [parts.total, parts.ce_source, parts.ce_target,
                       parts.ce_relation, parts.l2]

        f1 = float(eval_fn(params, epoch))
        records.append(EpochRecord(
            epoch=epoch, lr=lr, loss_total=float(totals[0]),
            ce_source=float(totals[1]), ce_target=float(totals[2]),
            ce_relation=float(totals[3]), l2=float(totals[4]),
            val_link_f1=f1))
        if log_fn:
            log_fn(f"epoch={epoch} lr={lr:.6g} loss={totals[0]:.6g} "
                   f"val_link_f1={f1:.4f}")

        stopped_epoch = epoch
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best_params = params.copy()
            epochs_since = 0
        else:
            epochs_since += 1
            if epochs_since >= cfg.patience:
                break

    history = TrainHistory(records=records, best_epoch=best_epoch,
                           stopped_epoch=stopped_epoch)
    return best_params, history


def train_ensemble(arch: ArchConfig, embedding_matrix: np.ndarray,
                   train_ds: EncodedDataset, valid_ds: EncodedDataset,
                   cfg: TrainConfig, seeds: Sequence[int],
                   jobs: int = 1, log_fn=None):
    """Train one model per seed on the identical training set (no
    bootstrap resampling).  -> list of (params, history) in seed order."""
    if len(set(seeds)) != len(seeds):
        raise TrainingError("ensemble seeds must be distinct")

    def run(seed):
        member_cfg = replace(cfg, seed=int(seed))
        member_log = (lambda msg, s=seed: log_fn(f"[seed {s}] {msg}")) if log_fn else None
        return train(arch, embedding_matrix, train_ds, valid_ds, member_cfg,
                     log_fn=member_log)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, seeds))
    return [run(s) for s in seeds]
