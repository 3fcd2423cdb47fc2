"""Decoding with the shared branch fused with the in-domain private branch.

The out-of-domain private branch and the discriminator are never touched at
test time; :class:`Decoder` binds parameters lazily, so its ``accessed`` set
shows exactly what a translation read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers as L
from .model import BOS, EOS, Binder, DomainLabel, ModelParams, initial_state, encode, BRANCH_OF


@dataclass
class BeamHypothesis:
    tokens: list
    score: float
    states: dict = field(default_factory=dict)
    finished: bool = False


class Decoder:
    """Incremental decoder over a batch of independent rows.

    ``rows`` of the encoder memory are broadcast against a varying number of
    hypotheses when decoding a single source sentence with a beam.
    """

    def __init__(self, params: ModelParams, domain=DomainLabel.IN):
        self.params = params
        self.cfg = params.config
        self.graph = ad.Graph(params["emb.src"].dtype)
        self.binder = Binder(self.graph, params, trainable=())
        self.branches = ["shared"]
        if self.cfg.use_private:
            self.branches.append(BRANCH_OF[DomainLabel.parse(domain)])

    @property
    def accessed(self) -> set[str]:
        return self.binder.accessed

    def start(self, src_rows: list) -> dict:
        """Encode a list of source id sequences; returns per-branch memories and initial states."""
        if any(len(s) == 0 for s in src_rows):
            raise ValueError("empty source sentence")
        B = len(src_rows)
        T = max(len(s) for s in src_rows)
        src = np.zeros((B, T), dtype=np.int64)
        for i, s in enumerate(src_rows):
            src[i, : len(s)] = s
        lengths = np.array([len(s) for s in src_rows], dtype=np.int64)
        if src.max() >= self.cfg.src_vocab or src.min() < 0:
            raise ValueError("source token id out of range")
        mask = np.arange(T)[None, :] < lengths[:, None]
        ctx = {}
        for br in self.branches:
            H = encode(self.binder, br, src, lengths)
            att = self.binder.attention(f"{br}.dec.att")
            ctx[br] = (L.attention_memory(att, H, mask), initial_state(self.binder, br, H).value)
        return ctx

    def step(self, ctx: dict, y_prev: np.ndarray, states: dict) -> tuple[np.ndarray, dict]:
        """One decoder step for every row; returns log-probs (k, V) and next states."""
        feats = {}
        new_states = {}
        g = self.graph
        for br in self.branches:
            mem, _ = ctx[br]
            s_prev = g.const(states[br])
            c, _ = L.attention(self.binder.attention(f"{br}.dec.att"), s_prev, mem)
            s_new, t = L.decoder_step(self.binder.gru(f"{br}.dec.gru"), self.binder.readout(br), y_prev, s_prev, c)
            feats[br] = t
            new_states[br] = s_new.value
        t = feats["shared"]
        if self.cfg.use_private:
            t = L.gate_fuse(self.binder.gate(), t, feats[self.branches[1]])
        logp = L.output_logprobs(self.binder.readout("shared"), t)
        return logp.value, new_states


def translate(
    params: ModelParams,
    src,
    beam_size: int = 10,
    max_len: int = 100,
    normalize: bool = True,
    domain=DomainLabel.IN,
    return_all: bool = False,
    decoder: Decoder | None = None,
):
    """Beam search for one source sentence.

    Finished hypotheses are frozen and the beam shrinks accordingly; at
    ``max_len`` the unfinished ones join them. The winner maximises the
    summed log-probability, divided by length when ``normalize``. Returns
    ``(tokens, score)`` where tokens exclude EOS and score is the
    unnormalised log-probability.
    """
    if beam_size < 1 or max_len < 1:
        raise ValueError("beam_size and max_len must be >= 1")
    if len(src) == 0:
        raise ValueError("empty source sentence")
    dec = decoder or Decoder(params, domain)
    ctx = dec.start([list(src)])
    # memories hold a single row and broadcast against the live hypotheses
    active = [BeamHypothesis([], 0.0, {br: ctx[br][1][0] for br in dec.branches})]
    finished: list[BeamHypothesis] = []
    for step in range(max_len):
        y_prev = np.array([h.tokens[-1] if h.tokens else BOS for h in active], dtype=np.int64)
        states = {br: np.stack([h.states[br] for h in active]) for br in dec.branches}
        logp, new_states = dec.step(ctx, y_prev, states)
        scores = np.array([h.score for h in active])[:, None] + logp.astype(np.float64)
        slots = beam_size - len(finished)
        flat = scores.reshape(-1)
        # stable sort keeps the lowest (row, token) index on ties
        order = np.argsort(-flat, kind="stable")[:slots]
        V = logp.shape[1]
        next_active = []
        for idx in order:
            row, tok = divmod(int(idx), V)
            if tok == EOS:
                finished.append(BeamHypothesis(active[row].tokens + [tok], float(flat[idx]), finished=True))
            else:
                st = {br: new_states[br][row] for br in dec.branches}
                next_active.append(BeamHypothesis(active[row].tokens + [tok], float(flat[idx]), st))
        active = next_active
        if not active:
            break
    finished.extend(active)

    def key(h):
        return h.score / len(h.tokens) if normalize else h.score

    best = max(finished, key=key)  # max keeps the first of equal keys
    tokens = best.tokens[:-1] if best.finished else best.tokens
    if return_all:
        return tokens, best.score, finished
    return tokens, best.score


def greedy_decode(params: ModelParams, src, max_len: int = 100, domain=DomainLabel.IN) -> list:
    """Arg-max decoding (ties to the lowest id) of one sentence, EOS stripped."""
    return greedy_decode_batch(params, [src], max_len, domain)[0]


def greedy_decode_batch(params: ModelParams, sources: list, max_len: int = 100, domain=DomainLabel.IN, batch_size: int = 64) -> list:
    out = []
    for i in range(0, len(sources), batch_size):
        part = [list(s) for s in sources[i : i + batch_size]]
        dec = Decoder(params, domain)
        ctx = dec.start(part)
        states = {br: ctx[br][1] for br in dec.branches}
        B = len(part)
        y = np.full(B, BOS, dtype=np.int64)
        seqs = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        for _ in range(max_len):
            logp, states = dec.step(ctx, y, states)
            y = logp.argmax(axis=1)
            for b in np.flatnonzero(~done):
                if y[b] == EOS:
                    done[b] = True
                else:
                    seqs[b].append(int(y[b]))
            if done.all():
                break
        out.extend(seqs)
    return out
