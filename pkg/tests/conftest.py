import numpy as np
import pytest

from resarg.corpus import (
    ArgComponent, CorpusSchema, Document, LinkAnnotation, SynthSizes,
    synth_corpus,
)
from resarg.neural.model import ArchConfig, init_params


@pytest.fixture
def schema():
    return CorpusSchema(
        corpus_id="synth",
        component_classes=("claim", "premise", "evidence"),
        forward_relations=("supports", "attacks"),
    )


@pytest.fixture
def tiny_docs(schema):
    sizes = SynthSizes(components_per_doc=(3, 6), tokens_per_component=(2, 6),
                       link_rate=0.3, vocab_size=120)
    return synth_corpus(seed=7, n_docs=8, schema=schema, sizes=sizes)


def make_doc(comps, links, text=None, doc_id="d0"):
    """Build a document from (comp_id, start, end, type) tuples over a
    synthetic text of 'w' words."""
    if text is None:
        end = max(e for _, _, e, _ in comps)
        text = "".join("w" if any(s <= i < e for _, s, e, _ in comps) else " "
                       for i in range(end))
    components = []
    for comp_id, start, end, ctype in comps:
        surface = text.encode()[start:end].decode()
        from resarg.corpus import tokenize
        components.append(ArgComponent(
            comp_id=comp_id, span=(start, end),
            tokens=tuple(tokenize(surface)) or (surface,),
            comp_type=ctype, paragraph_id=0, section_id=0))
    return Document.build(doc_id, text, components,
                          [LinkAnnotation(*l) for l in links])


@pytest.fixture
def toy_model_factory():
    def make(variant="resattarg", T=6, n_comp=3, n_rel=5, embed_dim=24,
             vocab_rows=30, seed=0):
        cfg = ArchConfig(variant=variant, T=T, n_component_classes=n_comp,
                         n_relation_classes=n_rel, embed_dim=embed_dim)
        rng = np.random.default_rng(seed)
        matrix = rng.normal(size=(vocab_rows, embed_dim)) * 0.3
        matrix[0] = 0.0
        return cfg, init_params(cfg, seed=seed + 1, embedding_matrix=matrix)
    return make


def random_batch(cfg, vocab_rows, B=3, seed=0, min_len=1):
    from resarg.neural.model import Batch
    rng = np.random.default_rng(seed)
    T = cfg.T

    def seqs():
        ids = rng.integers(1, vocab_rows, size=(B, T))
        mask = np.zeros((B, T))
        for i in range(B):
            n = rng.integers(min_len, T + 1)
            mask[i, :n] = 1.0
            ids[i, n:] = 0
        return ids, mask

    src_ids, src_mask = seqs()
    tgt_ids, tgt_mask = seqs()
    dist = rng.integers(0, 2, size=(B, cfg.distance_bits)).astype(float)
    return Batch(src_ids=src_ids, src_mask=src_mask, tgt_ids=tgt_ids,
                 tgt_mask=tgt_mask, dist=dist)
