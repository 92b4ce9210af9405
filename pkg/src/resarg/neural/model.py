"""ResArg / ResAttArg computation graphs.

Both variants share: per-side deep embedders (one residual block of four
pre-activated time-distributed dense layers), per-side encoders reducing
the embedding size, a shared bidirectional LSTM, a final residual network
over [source, target, distance], and three softmax heads.  ResArg
average-pools time before the LSTM and keeps its final states; ResAttArg
keeps the full LSTM sequence and applies coarse-grained parallel
co-attention (each side's masked average queries additive attention over
the other side).

Every pre-activation is batch-norm -> dropout -> relu -> dense.  The link
probability is not a separate head: it is the sum of the relation head's
probabilities over the forward relation labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tape
from .tape import Tensor

SIDES = ("src", "tgt")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    variant: str  # "resarg" | "resattarg"
    T: int
    n_component_classes: int
    n_relation_classes: int  # extended domain size, 2*forward + 1
    embed_dim: int = 300
    hidden: int = 50
    pool_factor: int = 10
    final_encoding: int = 20
    bottleneck: int = 5
    dropout_p: float = 0.1
    distance_bits: int = 10
    bn_eps: float = 1e-3
    bn_momentum: float = 0.99

    def __post_init__(self):
        if self.variant not in ("resarg", "resattarg"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("T", "n_component_classes", "n_relation_classes",
                     "embed_dim", "hidden", "pool_factor", "final_encoding",
                     "bottleneck", "distance_bits"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_relation_classes % 2 == 0:
            raise ConfigError("n_relation_classes must be odd (2*forward + 1)")
        if self.hidden % 2 != 0:
            raise ConfigError("hidden must be even (split across LSTM directions)")

    @property
    def lstm_hidden(self) -> int:
        # per-direction size; the concatenated biLSTM output matches `hidden`
        return self.hidden // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# parameter container
# ---------------------------------------------------------------------------

EMBEDDING_NAME = "emb.matrix"
# leaf names that count as weight matrices for L2 regularization
_WEIGHT_LEAVES = {"W", "U", "W1", "W2", "w3"}


def _param_spec(cfg: ArchConfig) -> List[Tuple[str, Tuple[int, ...], bool]]:
    """(name, shape, trainable) for every tensor except the embedding matrix."""
    E, H = cfg.embed_dim, cfg.hidden
    spec: List[Tuple[str, Tuple[int, ...], bool]] = []

    def bn(prefix, n):
        spec.append((f"{prefix}.gamma", (n,), True))
        spec.append((f"{prefix}.beta", (n,), True))
        spec.append((f"{prefix}.running_mean", (n,), False))
        spec.append((f"{prefix}.running_var", (n,), False))

    def dense(prefix, n_in, n_out):
        spec.append((f"{prefix}.W", (n_in, n_out), True))
        spec.append((f"{prefix}.b", (n_out,), True))

    for side in SIDES:
        dims = [E, H, H, H, E]  # four layers: E->H, H->H, H->H, H->E
        for i in range(4):
            bn(f"{side}.deep.bn{i}", dims[i])
            dense(f"{side}.deep.dense{i}", dims[i], dims[i + 1])
        bn(f"{side}.enc.bn", E)
        dense(f"{side}.enc.dense", E, H)

    HL = cfg.lstm_hidden
    for direction in ("fw", "bw"):
        spec.append((f"lstm.{direction}.W", (H, 4 * HL), True))
        spec.append((f"lstm.{direction}.U", (HL, 4 * HL), True))
        spec.append((f"lstm.{direction}.b", (4 * HL,), True))

    if cfg.variant == "resattarg":
        for side in SIDES:
            spec.append((f"att.{side}.W1", (H, H), True))
            spec.append((f"att.{side}.W2", (H, H), True))
            spec.append((f"att.{side}.w3", (H,), True))
            spec.append((f"att.{side}.b", (H,), True))

    concat_dim = 2 * H + cfg.distance_bits
    bn("final.bn", concat_dim)
    dense("final.dense", concat_dim, cfg.final_encoding)
    bn("fblock.bn0", cfg.final_encoding)
    dense("fblock.dense0", cfg.final_encoding, cfg.bottleneck)
    bn("fblock.bn1", cfg.bottleneck)
    dense("fblock.dense1", cfg.bottleneck, cfg.final_encoding)

    dense("head.src", cfg.final_encoding, cfg.n_component_classes)
    dense("head.tgt", cfg.final_encoding, cfg.n_component_classes)
    dense("head.rel", cfg.final_encoding, cfg.n_relation_classes)
    return spec


@dataclass
class ModelParams:
    """Every model tensor by name, including the frozen embedding matrix
    and batch-norm running statistics."""

    cfg: ArchConfig
    arrays: Dict[str, np.ndarray]
    trainable_names: Tuple[str, ...]

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg,
                           {k: v.copy() for k, v in self.arrays.items()},
                           self.trainable_names)

    @property
    def embedding_matrix(self) -> np.ndarray:
        return self.arrays[EMBEDDING_NAME]

    def l2_names(self) -> List[str]:
        return [n for n in self.trainable_names
                if n.rsplit(".", 1)[-1] in _WEIGHT_LEAVES]

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.arrays):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return h.hexdigest()


def init_params(cfg: ArchConfig, seed: int,
                embedding_matrix: Optional[np.ndarray] = None) -> ModelParams:
    """He-normal dense weights over fan-in, zero biases, batch-norm scale 1
    shift 0, LSTM forget-gate bias 1.  Deterministic per seed."""
    rng = np.random.default_rng(seed)
    arrays: Dict[str, np.ndarray] = {}
    trainable: List[str] = []
    HL = cfg.lstm_hidden
    for name, shape, is_trainable in _param_spec(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("W", "W1", "W2"):
            fan_in = shape[0]
            arr = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif leaf == "U":
            arr = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        elif leaf == "w3":
            arr = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        elif leaf == "b" and name.startswith("lstm."):
            arr = np.zeros(shape)
            arr[HL:2 * HL] = 1.0  # forget gate
        elif leaf in ("b", "beta", "running_mean"):
            arr = np.zeros(shape)
        elif leaf in ("gamma", "running_var"):
            arr = np.ones(shape)
        else:
            raise AssertionError(name)
        arrays[name] = arr.astype(np.float64)
        if is_trainable:
            trainable.append(name)
    if embedding_matrix is None:
        embedding_matrix = np.zeros((1, cfg.embed_dim))
    if embedding_matrix.shape[1] != cfg.embed_dim:
        raise ConfigError(
            f"embedding matrix dim {embedding_matrix.shape[1]} != "
            f"embed_dim {cfg.embed_dim}")
    arrays[EMBEDDING_NAME] = np.asarray(embedding_matrix, dtype=np.float64)
    return ModelParams(cfg=cfg, arrays=arrays, trainable_names=tuple(trainable))


def count_params(params: ModelParams) -> Tuple[int, int]:
    """(total, trainable).  Total adds the frozen embedding matrix to the
    trainable tensors; batch-norm running statistics are state, counted in
    neither."""
    trainable = sum(params.arrays[n].size for n in params.trainable_names)
    total = trainable + params.embedding_matrix.size
    return total, trainable


# ---------------------------------------------------------------------------
# batch container
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    src_ids: np.ndarray   # (B, T) int
    src_mask: np.ndarray  # (B, T) float
    tgt_ids: np.ndarray
    tgt_mask: np.ndarray
    dist: np.ndarray      # (B, distance_bits) float

    @property
    def size(self) -> int:
        return self.src_ids.shape[0]

    @classmethod
    def single(cls, src, tgt, dist_bits) -> "Batch":
        return cls(
            src_ids=np.asarray([src.ids], dtype=np.int64),
            src_mask=np.asarray([src.mask], dtype=np.float64),
            tgt_ids=np.asarray([tgt.ids], dtype=np.int64),
            tgt_mask=np.asarray([tgt.mask], dtype=np.float64),
            dist=np.asarray([dist_bits], dtype=np.float64),
        )


# ---------------------------------------------------------------------------
# graph context: leaves, mode flags, stats updates
# ---------------------------------------------------------------------------

class GraphContext:
    """Wraps ModelParams as tape leaves for one forward pass."""

    def __init__(self, params: ModelParams, train: bool,
                 rng: Optional[np.random.Generator],
                 update_stats: bool = True):
        self.params = params
        self.cfg = params.cfg
        self.train = train
        self.rng = rng
        self.update_stats = train and update_stats
        self.leaves: Dict[str, Tensor] = {}

    def leaf(self, name: str) -> Tensor:
        t = self.leaves.get(name)
        if t is None:
            t = Tensor(self.params.arrays[name])
            self.leaves[name] = t
        return t


def batchnorm(ctx: GraphContext, prefix: str, x: Tensor) -> Tensor:
    """Normalize features (last axis) over all other axes.

    Train mode uses batch statistics and folds them into the running
    averages; otherwise the stored running statistics are constants.
    """
    cfg = ctx.cfg
    gamma = ctx.leaf(f"{prefix}.gamma")
    beta = ctx.leaf(f"{prefix}.beta")
    axes = tuple(range(x.data.ndim - 1))
    if ctx.train:
        mu = tape.tmean(x, axis=axes, keepdims=True)
        centered = tape.sub(x, mu)
        var = tape.tmean(tape.mul(centered, centered), axis=axes, keepdims=True)
        if ctx.update_stats:
            m = cfg.bn_momentum
            stats = ctx.params.arrays
            rm, rv = stats[f"{prefix}.running_mean"], stats[f"{prefix}.running_var"]
            if not np.any(rm) and np.all(rv == 1.0):
                # never-updated stats: seed from this batch instead of
                # decaying away the (0, 1) init over ~1/(1-momentum) steps
                m = 0.0
            stats[f"{prefix}.running_mean"] = m * rm + (1.0 - m) * mu.data.reshape(-1)
            stats[f"{prefix}.running_var"] = m * rv + (1.0 - m) * var.data.reshape(-1)
        denom = tape.sqrt(tape.add(var, tape.constant(cfg.bn_eps)))
        norm = tape.div(centered, denom)
    else:
        mean = ctx.params.arrays[f"{prefix}.running_mean"]
        var = ctx.params.arrays[f"{prefix}.running_var"]
        inv = 1.0 / np.sqrt(var + cfg.bn_eps)
        norm = tape.mul(tape.sub(x, tape.constant(mean)), tape.constant(inv))
    return tape.add(tape.mul(norm, gamma), beta)


def dropout(ctx: GraphContext, x: Tensor) -> Tensor:
    """Inverted dropout; inference needs no rescaling."""
    p = ctx.cfg.dropout_p
    if not ctx.train or p <= 0.0:
        return x
    keep = (ctx.rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return tape.mul(x, tape.constant(keep))


def dense(ctx: GraphContext, prefix: str, x: Tensor) -> Tensor:
    W = ctx.leaf(f"{prefix}.W")
    b = ctx.leaf(f"{prefix}.b")
    if x.data.ndim == 3:
        B, T, F = x.shape
        flat = tape.reshape(x, (B * T, F))
        out = tape.add(tape.matmul(flat, W), b)
        return tape.reshape(out, (B, T, W.shape[1]))
    return tape.add(tape.matmul(x, W), b)


def preact_dense(ctx: GraphContext, bn_prefix: str, dense_prefix: str,
                 x: Tensor) -> Tensor:
    return dense(ctx, dense_prefix, tape.relu(dropout(ctx, batchnorm(ctx, bn_prefix, x))))


def deep_embedder(ctx: GraphContext, side: str, x: Tensor) -> Tensor:
    """Residual block of four pre-activated time-distributed dense layers;
    the raw embeddings are added back to the last layer's output."""
    h = x
    for i in range(4):
        h = preact_dense(ctx, f"{side}.deep.bn{i}", f"{side}.deep.dense{i}", h)
    return tape.add(x, h)


def encoder(ctx: GraphContext, side: str, x: Tensor) -> Tensor:
    return preact_dense(ctx, f"{side}.enc.bn", f"{side}.enc.dense", x)


def avg_pool_time(x: Tensor, k: int) -> Tensor:
    """Plain time pooling, window = stride = k, partial last window kept
    and divided by its own width."""
    B, T, F = x.shape
    windows = []
    for start in range(0, T, k):
        stop = min(start + k, T)
        w = tape.tmean(tape.slice_time(x, start, stop), axis=1, keepdims=True)
        windows.append(w)
    return windows[0] if len(windows) == 1 else tape.concat(windows, axis=1)


def lstm_direction(ctx: GraphContext, direction: str, x: Tensor,
                   mask: np.ndarray, reverse: bool):
    """One LSTM direction with masked state updates.

    At masked steps the state is carried through unchanged, so trailing
    padding never perturbs the states and the per-position outputs at
    unmasked positions are padding-invariant.
    """
    H = ctx.cfg.lstm_hidden
    W = ctx.leaf(f"lstm.{direction}.W")
    U = ctx.leaf(f"lstm.{direction}.U")
    b = ctx.leaf(f"lstm.{direction}.b")
    B, T, _ = x.shape
    h = tape.constant(np.zeros((B, H)))
    c = tape.constant(np.zeros((B, H)))
    outputs: List[Optional[Tensor]] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        xt = tape.select_time(x, t)
        z = tape.add(tape.add(tape.matmul(xt, W), tape.matmul(h, U)), b)
        i_g = tape.sigmoid(tape.slice_axis1(z, 0, H))
        f_g = tape.sigmoid(tape.slice_axis1(z, H, 2 * H))
        g_g = tape.tanh(tape.slice_axis1(z, 2 * H, 3 * H))
        o_g = tape.sigmoid(tape.slice_axis1(z, 3 * H, 4 * H))
        c_new = tape.add(tape.mul(f_g, c), tape.mul(i_g, g_g))
        h_new = tape.mul(o_g, tape.tanh(c_new))
        m = mask[:, t:t + 1]  # (B,1)
        if np.all(m == 1.0):
            h, c = h_new, c_new
        else:
            mt = tape.constant(m)
            inv = tape.constant(1.0 - m)
            h = tape.add(tape.mul(mt, h_new), tape.mul(inv, h))
            c = tape.add(tape.mul(mt, c_new), tape.mul(inv, c))
        outputs[t] = h
    return outputs, h


def bilstm(ctx: GraphContext, x: Tensor, mask: np.ndarray):
    """-> (K (B,T,hidden) concatenated per-position outputs, finals (B,hidden))."""
    fw_out, fw_final = lstm_direction(ctx, "fw", x, mask, reverse=False)
    bw_out, bw_final = lstm_direction(ctx, "bw", x, mask, reverse=True)
    B, T, _ = x.shape
    per_t = [tape.reshape(tape.concat([fw_out[t], bw_out[t]], axis=1),
                          (B, 1, ctx.cfg.hidden)) for t in range(T)]
    K = per_t[0] if T == 1 else tape.concat(per_t, axis=1)
    finals = tape.concat([fw_final, bw_final], axis=1)
    return K, finals


def masked_average(K: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of the unmasked rows of K (B,T,F)."""
    counts = mask.sum(axis=1)
    if np.any(counts < 1):
        raise ConfigError("masked_average needs at least one unmasked position")
    weighted = tape.mul(K, tape.constant(mask[:, :, None]))
    total = tape.tsum(weighted, axis=1)
    return tape.mul(total, tape.constant((1.0 / counts)[:, None]))


@dataclass
class AttentionTrace:
    """Per-side attention internals kept for inspection and invariants."""
    keys: np.ndarray    # attended sequence (B, T, hidden)
    g: np.ndarray       # query vectors (B, hidden)
    scores: np.ndarray  # raw additive scores (B, T)
    weights: np.ndarray  # masked softmax weights (B, T)
    context: np.ndarray  # attention-weighted sums (B, hidden)


def attention(ctx: GraphContext, side: str, K: Tensor, g: Tensor,
              mask: np.ndarray):
    """Additive soft attention over K queried by g.

    scores_i = w3 . relu(W1 k_i + W2 g + b); weights are a softmax over the
    unmasked positions only (masked weights are exactly zero); the context
    vector is the weight-averaged sum of K's rows.
    """
    if np.any(mask.sum(axis=1) < 1):
        raise ConfigError("attention needs at least one unmasked position")
    B, T, H = K.shape
    W1 = ctx.leaf(f"att.{side}.W1")
    W2 = ctx.leaf(f"att.{side}.W2")
    w3 = ctx.leaf(f"att.{side}.w3")
    b = ctx.leaf(f"att.{side}.b")
    flat = tape.reshape(K, (B * T, H))
    kin = tape.reshape(tape.matmul(flat, W1), (B, T, H))
    qin = tape.reshape(tape.matmul(g, W2), (B, 1, H))
    hidden = tape.relu(tape.add(tape.add(kin, qin), b))
    scores = tape.tsum(tape.mul(hidden, w3), axis=2)  # (B, T)

    # max-shifted masked softmax; the shift is a constant so the softmax
    # value and gradient are unchanged
    shifted = np.where(mask > 0, scores.data, -np.inf)
    shift = shifted.max(axis=1, keepdims=True)
    z = tape.mul(tape.exp(tape.sub(scores, tape.constant(shift))),
                 tape.constant(mask))
    denom = tape.tsum(z, axis=1, keepdims=True)
    weights = tape.div(z, denom)
    context = tape.tsum(tape.mul(K, tape.reshape(weights, (B, T, 1))), axis=1)
    return weights, context, scores


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------

@dataclass
class HeadPrediction:
    """Per-pair head outputs; p_link is the forward-label probability mass
    of the relation head."""
    p_source: np.ndarray
    p_target: np.ndarray
    p_relation: np.ndarray
    p_link: float


@dataclass
class Trace:
    """Graph handles from a forward pass, consumed by loss/backward."""
    cfg: ArchConfig
    leaves: Dict[str, Tensor]
    logp_src: Tensor
    logp_tgt: Tensor
    logp_rel: Tensor
    batch: Batch
    attention_src: Optional[AttentionTrace] = None
    attention_tgt: Optional[AttentionTrace] = None
    loss: Optional[Tensor] = None


def _log_softmax(logits: Tensor) -> Tensor:
    shift = tape.constant(logits.data.max(axis=1, keepdims=True))
    shifted = tape.sub(logits, shift)
    lse = tape.log(tape.tsum(tape.exp(shifted), axis=1, keepdims=True))
    return tape.sub(shifted, lse)


def forward_batch(params: ModelParams, batch: Batch, mode: str = "infer",
                  rng_seed: int = 0, forward_indices: Optional[Sequence[int]] = None,
                  update_stats: bool = True):
    """Run one batch through the graph.

    -> (list of HeadPrediction, Trace).  Dropout and batch statistics are
    active only in train mode; infer mode is a pure function of
    (params, batch).
    """
    cfg = params.cfg
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown mode {mode!r}")
    train = mode == "train"
    if batch.src_ids.shape[1] != cfg.T or batch.tgt_ids.shape[1] != cfg.T:
        raise ConfigError(
            f"sequence length {batch.src_ids.shape[1]} != config T={cfg.T}")
    if batch.dist.shape[1] != cfg.distance_bits:
        raise ConfigError("distance code width mismatch")
    vocab_rows = params.embedding_matrix.shape[0]
    if batch.src_ids.max(initial=0) >= vocab_rows or \
            batch.tgt_ids.max(initial=0) >= vocab_rows:
        raise ConfigError("token id outside the embedding table")

    ctx = GraphContext(params, train=train,
                       rng=np.random.default_rng(rng_seed) if train else None,
                       update_stats=update_stats)
    E = params.embedding_matrix

    reps = {}
    seqs = {}
    masks = {"src": batch.src_mask, "tgt": batch.tgt_mask}
    ids = {"src": batch.src_ids, "tgt": batch.tgt_ids}
    for side in SIDES:
        x = tape.constant(E[ids[side]])  # frozen lookup
        h = deep_embedder(ctx, side, x)
        h = encoder(ctx, side, h)
        if cfg.variant == "resarg":
            h = avg_pool_time(h, cfg.pool_factor)
            pooled_mask = np.ones(h.shape[:2], dtype=np.float64)
            _, finals = bilstm(ctx, h, pooled_mask)
            reps[side] = finals
        else:
            K, _ = bilstm(ctx, h, masks[side])
            seqs[side] = K

    att_src = att_tgt = None
    if cfg.variant == "resattarg":
        g_src = masked_average(seqs["src"], masks["src"])
        g_tgt = masked_average(seqs["tgt"], masks["tgt"])
        w_s, c_s, e_s = attention(ctx, "src", seqs["src"], g_tgt, masks["src"])
        w_t, c_t, e_t = attention(ctx, "tgt", seqs["tgt"], g_src, masks["tgt"])
        reps["src"], reps["tgt"] = c_s, c_t
        att_src = AttentionTrace(keys=seqs["src"].data, g=g_tgt.data,
                                 scores=e_s.data, weights=w_s.data,
                                 context=c_s.data)
        att_tgt = AttentionTrace(keys=seqs["tgt"].data, g=g_src.data,
                                 scores=e_t.data, weights=w_t.data,
                                 context=c_t.data)

    z = tape.concat([reps["src"], reps["tgt"], tape.constant(batch.dist)], axis=1)
    u = preact_dense(ctx, "final.bn", "final.dense", z)
    t1 = preact_dense(ctx, "fblock.bn0", "fblock.dense0", u)
    t2 = preact_dense(ctx, "fblock.bn1", "fblock.dense1", t1)
    r = tape.add(u, t2)

    logp_src = _log_softmax(dense(ctx, "head.src", r))
    logp_tgt = _log_softmax(dense(ctx, "head.tgt", r))
    logp_rel = _log_softmax(dense(ctx, "head.rel", r))

    if forward_indices is None:
        n_forward = (cfg.n_relation_classes - 1) // 2
        forward_indices = list(range(n_forward))

    p_src = np.exp(logp_src.data)
    p_tgt = np.exp(logp_tgt.data)
    p_rel = np.exp(logp_rel.data)
    preds = [HeadPrediction(
        p_source=p_src[i], p_target=p_tgt[i], p_relation=p_rel[i],
        p_link=float(p_rel[i, list(forward_indices)].sum()))
        for i in range(batch.size)]

    trace = Trace(cfg=cfg, leaves=ctx.leaves, logp_src=logp_src,
                  logp_tgt=logp_tgt, logp_rel=logp_rel, batch=batch,
                  attention_src=att_src, attention_tgt=att_tgt)
    return preds, trace


def forward(params: ModelParams, cfg: ArchConfig, src, tgt, dist_bits,
            mode: str = "infer", rng_seed: int = 0):
    """Single-pair forward.  Train mode returns (HeadPrediction, Trace)."""
    if cfg != params.cfg:
        raise ConfigError("params were built for a different ArchConfig")
    preds, trace = forward_batch(params, Batch.single(src, tgt, dist_bits),
                                 mode=mode, rng_seed=rng_seed)
    if mode == "train":
        return preds[0], trace
    return preds[0]


def backward(trace: Trace, upstream: float = 1.0) -> Dict[str, np.ndarray]:
    """Gradients of the traced loss w.r.t. every trainable tensor."""
    if trace.loss is None:
        raise ConfigError("trace has no loss node; build the loss first")
    tape.backward(trace.loss, seed=upstream)
    out = {}
    for name, leaf in trace.leaves.items():
        if leaf.grad is None:
            out[name] = np.zeros_like(leaf.data)
        else:
            out[name] = leaf.grad
    return out


# ---------------------------------------------------------------------------
# checkpoint I/O: JSON manifest + flat little-endian payload
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, prefix, config_hash: str = "") -> None:
    prefix = Path(prefix)
    names = sorted(params.arrays)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": params.cfg.to_dict(),
        "dtype": "<f8",
        "config_hash": config_hash,
        "tensors": [
            {"name": n, "shape": list(params.arrays[n].shape),
             "trainable": n in set(params.trainable_names)}
            for n in names
        ],
    }
    prefix.with_suffix(".json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    with open(prefix.with_suffix(".bin"), "wb") as f:
        for n in names:
            f.write(np.ascontiguousarray(
                params.arrays[n], dtype="<f8").tobytes())


def load_checkpoint(prefix):
    """-> (ModelParams, config_hash).  Shapes are validated against the
    manifest's ArchConfig."""
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text(encoding="utf-8"))
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {manifest['version']}")
    cfg = ArchConfig.from_dict(manifest["config"])
    expected = {name: tuple(shape) for name, shape, _ in _param_spec(cfg)}
    raw = prefix.with_suffix(".bin").read_bytes()
    needed = sum(int(np.prod(e["shape"])) * 8 for e in manifest["tensors"])
    if needed != len(raw):
        raise ConfigError(f"checkpoint payload is {len(raw)} bytes, manifest "
                          f"describes {needed}")
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name != EMBEDDING_NAME:
            if name not in expected:
                raise ConfigError(f"unexpected tensor {name!r} in checkpoint")
            if expected[name] != shape:
                raise ConfigError(
                    f"tensor {name!r} shape {shape} != expected {expected[name]}")
        elif shape[1] != cfg.embed_dim:
            raise ConfigError("embedding matrix width != embed_dim")
        n_bytes = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(
            raw[offset:offset + n_bytes], dtype="<f8").reshape(shape).copy()
        offset += n_bytes
    if offset != len(raw):
        raise ConfigError("checkpoint payload length mismatch")
    missing = set(expected) - set(arrays)
    if missing or EMBEDDING_NAME not in arrays:
        raise ConfigError(f"checkpoint missing tensors: {sorted(missing)}")
    trainable = tuple(n for n, _, t in _param_spec(cfg) if t)
    params = ModelParams(cfg=cfg, arrays=arrays, trainable_names=trainable)
    return params, manifest.get("config_hash", "")
