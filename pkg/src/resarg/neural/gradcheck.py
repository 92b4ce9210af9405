"""Central-difference verification of every block's analytic gradients.

Each check builds a scalar probe (a fixed random weighting of the block's
outputs, or the composed multitask loss), backpropagates it, then compares
sampled parameter coordinates against central finite differences at
64 bits with dropout off and batch normalization frozen on running
statistics.  The pass bar is max relative error < 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tape
from .model import (
    ArchConfig, Batch, GraphContext, ModelParams, attention, bilstm,
    deep_embedder, encoder, forward_batch, init_params,
)

THRESHOLD = 1e-4


@dataclass
class BlockResult:
    block: str
    max_rel_error: float
    n_coords: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < THRESHOLD


def _relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < 1e-6:
        return 0.0
    return abs(analytic - numeric) / scale


def _check_fn(params: ModelParams, build: Callable[[], tape.Tensor],
              leaves_of: Callable[[], Dict[str, tape.Tensor]],
              names: Sequence[str], rng: np.random.Generator,
              samples_per_tensor: int = 6,
              corrupt: bool = False) -> BlockResult:
    out = build()
    tape.backward(out)
    leaves = leaves_of()
    analytic = {}
    for name in names:
        leaf = leaves.get(name)
        analytic[name] = (np.zeros_like(params.arrays[name])
                          if leaf is None or leaf.grad is None else leaf.grad.copy())
    if corrupt:
        first = names[0]
        analytic[first] = analytic[first] + 0.25

    worst = 0.0
    n_coords = 0
    for name in names:
        arr = params.arrays[name]
        size = arr.size
        picks = rng.choice(size, size=min(samples_per_tensor, size), replace=False)
        flat = arr.reshape(-1)
        for k in picks:
            orig = flat[k]
            a = float(analytic[name].reshape(-1)[k])
            # two step sizes: a relu kink inside the larger window breaks
            # that central difference, not the analytic gradient
            err = np.inf
            for eps_scale in (1e-5, 1e-6):
                eps = eps_scale * max(1.0, abs(orig))
                flat[k] = orig + eps
                f_plus = float(build().data)
                flat[k] = orig - eps
                f_minus = float(build().data)
                flat[k] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                err = min(err, _relative_error(a, numeric))
                if err < THRESHOLD / 10:
                    break
            worst = max(worst, err)
            n_coords += 1
    return BlockResult(block="", max_rel_error=worst, n_coords=n_coords)


def _probe(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def run_gradcheck(variant: str = "resattarg", seed: int = 0, T: int = 12,
                  samples_per_tensor: int = 6,
                  corrupt_block: Optional[str] = None) -> List[BlockResult]:
    """Check each block and the composed loss for one architecture.

    ``corrupt_block`` deliberately offsets that block's analytic gradients
    (negative-control fixture for the failure path).
    """
    rng = np.random.default_rng(seed)
    cfg = ArchConfig(variant=variant, T=T, n_component_classes=3,
                     n_relation_classes=5)
    vocab = rng.normal(size=(40, cfg.embed_dim)) * 0.3
    vocab[0] = 0.0
    params = init_params(cfg, seed=seed + 1, embedding_matrix=vocab)
    # nudge running stats off their init so frozen BN is not a no-op
    for name in params.arrays:
        if name.endswith("running_mean"):
            params.arrays[name] = rng.normal(
                scale=0.05, size=params.arrays[name].shape)
        elif name.endswith("running_var"):
            params.arrays[name] = 1.0 + rng.uniform(
                -0.2, 0.4, size=params.arrays[name].shape)

    B = 2
    emb_in = rng.normal(size=(B, T, cfg.embed_dim))
    enc_in = rng.normal(size=(B, T, cfg.embed_dim))
    seq_in = rng.normal(size=(B, T, cfg.hidden))
    mask = np.ones((B, T))
    mask[0, T - 3:] = 0.0  # exercise masked updates
    mask[1, T - 1:] = 0.0
    query = rng.normal(size=(B, cfg.hidden))

    def ctx():
        return GraphContext(params, train=False, rng=None)

    results: List[BlockResult] = []
    named = {}

    def weighted(out: tape.Tensor, w: np.ndarray) -> tape.Tensor:
        return tape.tsum(tape.mul(out, tape.constant(w)))

    # --- deep embedder -----------------------------------------------------
    w = _probe(rng, (B, T, cfg.embed_dim))
    holder: Dict[str, GraphContext] = {}

    def build_deep():
        holder["ctx"] = ctx()
        return weighted(deep_embedder(holder["ctx"], "src", tape.constant(emb_in)), w)

    named["deep_embedder"] = (build_deep, [n for n in params.trainable_names
                                           if n.startswith("src.deep.")])

    # --- encoder ------------------------------------------------------------
    w_enc = _probe(rng, (B, T, cfg.hidden))

    def build_enc():
        holder["ctx"] = ctx()
        return weighted(encoder(holder["ctx"], "src", tape.constant(enc_in)), w_enc)

    named["encoder"] = (build_enc, [n for n in params.trainable_names
                                    if n.startswith("src.enc.")])

    # --- biLSTM ---------------------------------------------------------------
    w_seq = _probe(rng, (B, T, cfg.hidden))
    w_fin = _probe(rng, (B, cfg.hidden))

    def build_lstm():
        holder["ctx"] = ctx()
        K, finals = bilstm(holder["ctx"], tape.constant(seq_in), mask)
        return tape.add(weighted(K, w_seq), weighted(finals, w_fin))

    named["bilstm"] = (build_lstm, [n for n in params.trainable_names
                                    if n.startswith("lstm.")])

    # --- attention ------------------------------------------------------------
    if variant == "resattarg":
        w_ctx = _probe(rng, (B, cfg.hidden))

        def build_att():
            holder["ctx"] = ctx()
            _, c, _ = attention(holder["ctx"], "src", tape.constant(seq_in),
                                tape.constant(query), mask)
            return weighted(c, w_ctx)

        named["attention"] = (build_att, [n for n in params.trainable_names
                                          if n.startswith("att.src.")])

    # --- final residual network -------------------------------------------
    concat_dim = 2 * cfg.hidden + cfg.distance_bits
    fin_in = rng.normal(size=(B, concat_dim))
    w_out = _probe(rng, (B, cfg.final_encoding))

    def build_final():
        holder["ctx"] = ctx()
        c = holder["ctx"]
        from .model import preact_dense
        u = preact_dense(c, "final.bn", "final.dense", tape.constant(fin_in))
        t1 = preact_dense(c, "fblock.bn0", "fblock.dense0", u)
        t2 = preact_dense(c, "fblock.bn1", "fblock.dense1", t1)
        return weighted(tape.add(u, t2), w_out)

    named["final_residual"] = (build_final,
                               [n for n in params.trainable_names
                                if n.startswith(("final.", "fblock."))])

    # --- heads ----------------------------------------------------------------
    head_in = rng.normal(size=(B, cfg.final_encoding))
    y = rng.integers(0, cfg.n_component_classes, size=B)

    def build_heads():
        holder["ctx"] = ctx()
        c = holder["ctx"]
        from .model import dense, _log_softmax
        logp = _log_softmax(dense(c, "head.src", tape.constant(head_in)))
        onehot = np.zeros((B, cfg.n_component_classes))
        onehot[np.arange(B), y] = 1.0
        return tape.scale(tape.tsum(tape.mul(logp, tape.constant(onehot))), -1.0)

    named["heads"] = (build_heads, [n for n in params.trainable_names
                                    if n.startswith("head.")])

    # --- composed multitask loss -------------------------------------------
    from ..training import LossWeights, multitask_loss_graph

    ids = rng.integers(1, vocab.shape[0], size=(B, T))
    batch = Batch(src_ids=ids, src_mask=mask.copy(),
                  tgt_ids=rng.integers(1, vocab.shape[0], size=(B, T)),
                  tgt_mask=mask[::-1].copy(),
                  dist=rng.integers(0, 2, size=(B, cfg.distance_bits)).astype(float))
    y_src = rng.integers(0, cfg.n_component_classes, size=B)
    y_tgt = rng.integers(0, cfg.n_component_classes, size=B)
    y_rel = rng.integers(0, cfg.n_relation_classes, size=B)

    def build_loss():
        _, trace = forward_batch(params, batch, mode="infer")
        holder["ctx_leaves"] = trace.leaves
        multitask_loss_graph(trace, y_src, y_tgt, y_rel, LossWeights())
        return trace.loss

    def loss_leaves():
        return holder["ctx_leaves"]

    for block, (build, names) in named.items():
        res = _check_fn(params, build,
                        lambda: holder["ctx"].leaves, names, rng,
                        samples_per_tensor=samples_per_tensor,
                        corrupt=(corrupt_block == block))
        res.block = block
        results.append(res)

    res = _check_fn(params, build_loss, loss_leaves,
                    list(params.trainable_names), rng,
                    samples_per_tensor=max(2, samples_per_tensor // 2),
                    corrupt=(corrupt_block == "composed_loss"))
    res.block = "composed_loss"
    results.append(res)
    return results
