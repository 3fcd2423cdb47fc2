"""Small builders shared by the test modules."""

import numpy as np

from dbnmt.model import EOS, DomainLabel, ModelConfig, ModelParams, param_shapes


def tiny_config(**kw) -> ModelConfig:
    base = dict(src_vocab=9, tgt_vocab=8, emb_dim=4, hidden=8, disc_widths=(2, 3), disc_channels=2)
    base.update(kw)
    return ModelConfig(**base)


def random_params(cfg: ModelConfig, seed=0, scale=0.5, dtype=np.float64) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(cfg, {n: rng.uniform(-scale, scale, s).astype(dtype) for n, s in param_shapes(cfg).items()})


def random_examples(rng, cfg: ModelConfig, n, max_len=5, domains=None):
    """``n`` random ``(src, tgt_with_eos, domain)`` triples using non-reserved ids."""
    out = []
    for k in range(n):
        src = rng.integers(4, cfg.src_vocab, size=rng.integers(1, max_len + 1)).tolist()
        tgt = rng.integers(4, cfg.tgt_vocab, size=rng.integers(0, max_len)).tolist() + [EOS]
        dom = domains[k] if domains is not None else DomainLabel(k % 2)
        out.append((src, tgt, dom))
    return out


def tiny_task(seed=0, **kw):
    """A small synthetic task, its vocabularies and id-encoded corpora."""
    from dbnmt.data import SyntheticTaskSpec, build_vocab, encode_pairs, generate_synthetic
    from dbnmt.training import Corpora

    spec = dict(n_core=20, n_domain=6, n_in=60, n_out=240, n_dev=20, n_test=20, min_len=3, max_len=6, n_sense=6, seed=seed)
    spec.update(kw)
    task = generate_synthetic(SyntheticTaskSpec(**spec))
    sv = build_vocab(task.train_in.sources() + task.train_out.sources(), 1000)
    tv = build_vocab(task.train_in.targets() + task.train_out.targets(), 1000)

    def enc(c):
        return encode_pairs(c, sv, tv)

    corpora = Corpora(enc(task.train_in), enc(task.train_out), enc(task.dev_in), enc(task.dev_out))
    return task, sv, tv, corpora, enc(task.test_in)


def tiny_model_config(sv, tv, **kw) -> ModelConfig:
    base = dict(src_vocab=len(sv), tgt_vocab=len(tv), emb_dim=16, hidden=32, disc_widths=(2, 3), disc_channels=16)
    base.update(kw)
    return ModelConfig(**base)
