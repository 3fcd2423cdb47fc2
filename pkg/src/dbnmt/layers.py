"""Network building blocks on top of :mod:`dbnmt.autodiff`.

All functions work on batch-major graph nodes: a "vector" is a (B, d) node and
a sequence is (B, T, d). Parameters are graph nodes too, grouped in the small
dataclasses below; weights are stored as (out, in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Node, ShapeError


@dataclass
class GruParams:
    W: Node  # (3H, I) rows ordered [update | reset | candidate]
    U: Node  # (3H, H)
    b: Node  # (3H,)

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class AttentionParams:
    W: Node  # (a, d_dec)
    U: Node  # (a, d_enc)
    v: Node  # (a,)


@dataclass
class DecoderOutputParams:
    U: Node  # (d_t, d_dec)
    V: Node  # (d_t, d_emb)
    C: Node  # (d_t, d_ctx)
    W_o: Node  # (vocab, d_t)
    E: Node  # (vocab, d_emb)


@dataclass
class GateParams:
    W: Node  # (d_t, d_t), applied to the shared-branch features
    U: Node  # (d_t, d_t), applied to the private-branch features


@dataclass
class DiscriminatorParams:
    kernels: list  # [(w (C, l, m), b (C,)), ...]
    hw_WT: Node
    hw_bT: Node
    hw_Wg: Node
    hw_bg: Node
    W_d: Node  # (1, F)
    b_d: Node  # (1,)

    @property
    def max_width(self) -> int:
        return max(w.shape[1] for w, _ in self.kernels)


def gru_step(p: GruParams, x: Node, h_prev: Node, mask=None) -> Node:
    """One GRU step; rows whose ``mask`` entry is 0 carry ``h_prev`` through."""
    return ad.gru_cell(x, h_prev, p.W, p.U, p.b, mask)


def encode_bidirectional(fwd: GruParams, bwd: GruParams, embeds: list, lengths=None) -> Node:
    """Run both directions over ``embeds`` (a list of (B, e) nodes).

    Returns the (B, T, h_fwd + h_bwd) stack of concatenated states. With
    ``lengths`` given, sequences are right-padded: the forward pass carries
    its last state over padding and the backward pass starts from zero at
    each sequence's true end.
    """
    if not embeds:
        raise GraphError("encode_bidirectional: empty sequence")
    g = embeds[0].graph
    B, T = embeds[0].shape[0], len(embeds)
    masks = [None] * T
    if lengths is not None:
        lengths = np.asarray(lengths)
        masks = [(t < lengths).astype(g.dtype) for t in range(T)]

    h = g.const(np.zeros((B, fwd.hidden_dim)))
    forward_states = []
    for t in range(T):
        h = gru_step(fwd, embeds[t], h, masks[t])
        forward_states.append(h)

    h = g.const(np.zeros((B, bwd.hidden_dim)))
    backward_states = [None] * T
    for t in reversed(range(T)):
        h = gru_step(bwd, embeds[t], h, masks[t])
        backward_states[t] = h

    return ad.concat([ad.stack(forward_states, axis=1), ad.stack(backward_states, axis=1)], axis=-1)


@dataclass
class AttentionMemory:
    """Encoder states prepared once per sequence for repeated attention reads."""

    H: Node  # (B or 1, T, m)
    keys: Node  # U_a H, same leading dims, last dim a
    v_col: Node  # (a, 1)
    mask: np.ndarray | None  # (B or 1, T) bool

    @property
    def length(self) -> int:
        return self.H.shape[1]


def attention_memory(p: AttentionParams, H: Node, mask=None) -> AttentionMemory:
    if H.value.ndim != 3 or H.shape[1] == 0:
        raise GraphError("attention: empty encoder sequence")
    if p.U.shape[1] != H.shape[2]:
        raise ShapeError("attention", p.U, H)
    return AttentionMemory(
        H,
        ad.linear(H, p.U),
        ad.reshape(p.v, (p.v.shape[0], 1)),
        None if mask is None else np.asarray(mask, dtype=bool),
    )


def attention(p: AttentionParams, s_prev: Node, H, mask=None) -> tuple[Node, Node]:
    """Additive attention of ``s_prev`` (B, d) over encoder states.

    ``H`` is either a (B, T, m) node or a prepared :class:`AttentionMemory`.
    Returns the context ``c`` (B, m) and weights ``alpha`` (B, T).
    """
    mem = H if isinstance(H, AttentionMemory) else attention_memory(p, H, mask)
    B = s_prev.shape[0]
    a = p.W.shape[0]
    query = ad.reshape(ad.linear(s_prev, p.W), (B, 1, a))
    scores = ad.matmul(ad.tanh(mem.keys + query), mem.v_col)  # (B, T, 1)
    scores = ad.reshape(scores, (B, mem.length))
    smask = None
    if mem.mask is not None:
        smask = np.broadcast_to(mem.mask, (B, mem.length))
    alpha = ad.softmax(scores, axis=1, mask=smask)
    ctx = ad.matmul(ad.reshape(alpha, (B, 1, mem.length)), mem.H)
    return ad.reshape(ctx, (B, mem.H.shape[2])), alpha


def output_features(out: DecoderOutputParams, s_prev: Node, emb_prev: Node, c: Node) -> Node:
    """``U s_{j-1} + V E[y_{j-1}] + C c_j``; works on (B, d) or (B, J, d) operands."""
    return ad.linear(s_prev, out.U) + ad.linear(emb_prev, out.V) + ad.linear(c, out.C)


def decoder_step(gru: GruParams, out: DecoderOutputParams, y_prev_ids, s_prev: Node, c: Node):
    """Advance the decoder one step. Returns ``(s_j, t_j)``.

    The recurrent input is ``[E[y_{j-1}]; c_j]``; the readout ``t_j`` uses the
    *previous* state ``s_{j-1}``.
    """
    ids = np.atleast_1d(np.asarray(y_prev_ids, dtype=np.int64))
    emb = ad.embed(out.E, ids)
    s_new = gru_step(gru, ad.concat([emb, c], axis=-1), s_prev)
    return s_new, output_features(out, s_prev, emb, c)


def gate_fuse(g: GateParams, t_c: Node, t_p: Node) -> Node:
    """Sigmoid-gated mix ``z * t_c + (1 - z) * t_p`` of the two branch features."""
    if t_c.shape != t_p.shape:
        raise ShapeError("gate_fuse", t_c, t_p)
    z = ad.sigmoid(ad.linear(t_c, g.W) + ad.linear(t_p, g.U))
    return ad.lerp(z, t_c, t_p)


def output_logprobs(out: DecoderOutputParams, t: Node) -> Node:
    return ad.log_softmax(ad.linear(t, out.W_o))


def discriminator_logits(d: DiscriminatorParams, H: Node, lengths=None) -> Node:
    """Domain logit per sequence from encoder states ``H`` (B, T, m).

    Padding beyond each length is zeroed; sequences shorter than the widest
    kernel are right-padded with zero vectors. Returns a (B,) node whose
    sigmoid is the in-domain probability.
    """
    g = H.graph
    B, T, m = H.shape
    if T == 0:
        raise GraphError("discriminator: empty sequence")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    if lengths.min() < T:
        keep = (np.arange(T)[None, :] < lengths[:, None]).astype(g.dtype)
        H = H * g.const(keep[:, :, None])
    width = d.max_width
    if T < width:
        H = ad.concat([H, g.const(np.zeros((B, width - T, m)))], axis=1)
    pooled = []
    for w, b in d.kernels:
        feats = ad.relu(ad.conv_seq(H, w, b))
        valid = np.maximum(1, lengths - w.shape[1] + 1)
        pooled.append(ad.max_over_time(feats, valid))
    x = pooled[0] if len(pooled) == 1 else ad.concat(pooled, axis=-1)
    x = highway(x, d.hw_WT, d.hw_bT, d.hw_Wg, d.hw_bg)
    return ad.reshape(ad.linear(x, d.W_d, d.b_d), (B,))


def highway(x: Node, WT: Node, bT: Node, Wg: Node, bg: Node) -> Node:
    """``g * relu(WT x + bT) + (1 - g) * x`` with ``g = sigmoid(Wg x + bg)``."""
    transformed = ad.relu(ad.linear(x, WT, bT))
    gate = ad.sigmoid(ad.linear(x, Wg, bg))
    return x + gate * (transformed - x)


def discriminator_forward(d: DiscriminatorParams, H: Node, lengths=None) -> Node:
    """In-domain probability p(d) per sequence, shape (B,)."""
    return ad.sigmoid(discriminator_logits(d, H, lengths))
