"""The dual-branch translation model: shared and per-domain private
encoder-decoders, the fusion gate, and the adversarial domain discriminator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Graph, GraphError

PAD, UNK, BOS, EOS = 0, 1, 2, 3


class DomainLabel(enum.IntEnum):
    OUT = 0
    IN = 1

    @classmethod
    def parse(cls, value) -> "DomainLabel":
        if isinstance(value, DomainLabel):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("in", "in-domain", "indomain"):
                return cls.IN
            if key in ("out", "out-of-domain", "outdomain"):
                return cls.OUT
        elif value in (0, 1) and not isinstance(value, bool):
            return cls(int(value))
        raise ValueError(f"unknown domain {value!r}")

    @property
    def tag(self) -> str:
        return "in" if self is DomainLabel.IN else "out"


BRANCH_OF = {DomainLabel.IN: "private_in", DomainLabel.OUT: "private_out"}


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 32
    hidden: int = 64
    att_dim: int | None = None
    private_ratio: float = 0.25
    use_private: bool = True
    use_discriminator: bool = True
    disc_widths: tuple = (2, 3, 4)
    disc_channels: int = 16

    def __post_init__(self):
        self.disc_widths = tuple(int(w) for w in self.disc_widths)
        problems = []
        for name in ("src_vocab", "tgt_vocab", "emb_dim", "hidden", "disc_channels"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.src_vocab < 4 or self.tgt_vocab < 4:
            problems.append("vocabularies must hold the 4 reserved ids")
        if not 0 < self.private_ratio <= 1:
            problems.append("private_ratio must lie in (0, 1]")
        if not self.disc_widths or min(self.disc_widths) < 1:
            problems.append("discriminator kernel widths must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def shared_att(self) -> int:
        return self.att_dim or self.hidden

    @property
    def private_hidden(self) -> int:
        return max(1, int(round(self.hidden * self.private_ratio)))

    @property
    def private_att(self) -> int:
        return max(1, int(round(self.shared_att * self.private_ratio)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disc_widths"] = list(self.disc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _branch_shapes(prefix, e, h, d, a, d_t):
    m = 2 * h
    return {
        f"{prefix}.enc.fwd.W": (3 * h, e),
        f"{prefix}.enc.fwd.U": (3 * h, h),
        f"{prefix}.enc.fwd.b": (3 * h,),
        f"{prefix}.enc.bwd.W": (3 * h, e),
        f"{prefix}.enc.bwd.U": (3 * h, h),
        f"{prefix}.enc.bwd.b": (3 * h,),
        f"{prefix}.dec.att.W": (a, d),
        f"{prefix}.dec.att.U": (a, m),
        f"{prefix}.dec.att.v": (a,),
        f"{prefix}.dec.init.W": (d, h),
        f"{prefix}.dec.init.b": (d,),
        f"{prefix}.dec.gru.W": (3 * d, e + m),
        f"{prefix}.dec.gru.U": (3 * d, d),
        f"{prefix}.dec.gru.b": (3 * d,),
        f"{prefix}.dec.out.U": (d_t, d),
        f"{prefix}.dec.out.V": (d_t, e),
        f"{prefix}.dec.out.C": (d_t, m),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Ordered name -> shape map of every parameter the configuration uses."""
    e, h, d_t = cfg.emb_dim, cfg.hidden, cfg.hidden
    shapes = {
        "emb.src": (cfg.src_vocab, e),
        "emb.tgt": (cfg.tgt_vocab, e),
        "out.W": (cfg.tgt_vocab, d_t),
    }
    shapes.update(_branch_shapes("shared", e, h, h, cfg.shared_att, d_t))
    if cfg.use_private:
        hp = cfg.private_hidden
        for branch in ("private_in", "private_out"):
            shapes.update(_branch_shapes(branch, e, hp, hp, cfg.private_att, d_t))
        shapes["gate.W"] = (d_t, d_t)
        shapes["gate.U"] = (d_t, d_t)
    if cfg.use_discriminator:
        m = 2 * h
        for w in cfg.disc_widths:
            shapes[f"disc.conv{w}.w"] = (cfg.disc_channels, w, m)
            shapes[f"disc.conv{w}.b"] = (cfg.disc_channels,)
        F = cfg.disc_channels * len(cfg.disc_widths)
        shapes["disc.hw.WT"] = (F, F)
        shapes["disc.hw.bT"] = (F,)
        shapes["disc.hw.Wg"] = (F, F)
        shapes["disc.hw.bg"] = (F,)
        shapes["disc.out.W"] = (1, F)
        shapes["disc.out.b"] = (1,)
    return shapes


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[1].startswith("b")


def group_of(name: str) -> str:
    """Parameter group: embeddings, output, gate, disc, or ``<branch>.enc``/``<branch>.dec``."""
    parts = name.split(".")
    if parts[0] in ("shared", "private_in", "private_out"):
        return f"{parts[0]}.{parts[1]}"
    return {"emb": "embeddings", "out": "output"}.get(parts[0], parts[0])


class ModelParams:
    """Named parameter arrays plus the configuration that shaped them.

    Embeddings, the output projection and the gate exist once and are used by
    every branch.
    """

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        expected = param_shapes(config)
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, shape in expected.items():
            if tuple(arrays[name].shape) != shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {shape}")
        self.config = config
        self.arrays = {name: arrays[name] for name in expected}

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def names(self, groups=None) -> list[str]:
        if groups is None:
            return list(self.arrays)
        groups = set(groups)
        return [n for n in self.arrays if group_of(n) in groups]

    def groups(self) -> set[str]:
        return {group_of(n) for n in self.arrays}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def swap_private(self) -> "ModelParams":
        """Copy with the in- and out-of-domain private branches exchanged."""
        out = {}
        for name, arr in self.arrays.items():
            if name.startswith("private_in."):
                out[name] = self.arrays["private_out." + name[len("private_in."):]].copy()
            elif name.startswith("private_out."):
                out[name] = self.arrays["private_in." + name[len("private_out."):]].copy()
            else:
                out[name] = arr.copy()
        return ModelParams(self.config, out)


class Binder:
    """Lazily binds named parameters into a graph as input nodes.

    Only parameters that a computation touches are bound, so ``accessed``
    records exactly which parts of the model a forward pass used.
    ``trainable`` restricts which parameters require gradients (default all).
    """

    def __init__(self, graph: Graph, params: ModelParams, trainable=None):
        self.graph = graph
        self.params = params
        self.trainable = None if trainable is None else set(trainable)
        self.nodes: dict[str, ad.Node] = {}

    @property
    def accessed(self) -> set[str]:
        return set(self.nodes)

    def __getitem__(self, name: str) -> ad.Node:
        node = self.nodes.get(name)
        if node is None:
            rg = self.trainable is None or name in self.trainable
            node = self.graph.input(self.params[name], name=name, requires_grad=rg)
            self.nodes[name] = node
        return node

    def gru(self, prefix):
        return L.GruParams(self[prefix + ".W"], self[prefix + ".U"], self[prefix + ".b"])

    def attention(self, prefix):
        return L.AttentionParams(self[prefix + ".W"], self[prefix + ".U"], self[prefix + ".v"])

    def readout(self, branch):
        p = f"{branch}.dec.out"
        return L.DecoderOutputParams(
            self[p + ".U"], self[p + ".V"], self[p + ".C"], self["out.W"], self["emb.tgt"]
        )

    def gate(self):
        return L.GateParams(self["gate.W"], self["gate.U"])

    def discriminator(self):
        cfg = self.params.config
        kernels = [(self[f"disc.conv{w}.w"], self[f"disc.conv{w}.b"]) for w in cfg.disc_widths]
        return L.DiscriminatorParams(
            kernels,
            self["disc.hw.WT"],
            self["disc.hw.bT"],
            self["disc.hw.Wg"],
            self["disc.hw.bg"],
            self["disc.out.W"],
            self["disc.out.b"],
        )

    def grads(self, grads: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
        """Map a node-id gradient table back to parameter names (trainable only)."""
        return {name: grads[n.id] for name, n in self.nodes.items() if n.requires_grad}


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Padded, domain-sorted (in-domain rows first) mini-batch."""

    src: np.ndarray  # (B, T) int64, PAD-filled
    src_len: np.ndarray  # (B,)
    tgt_in: np.ndarray  # (B, J) decoder inputs: BOS + gold[:-1]
    tgt_out: np.ndarray  # (B, J) gold targets, ending in EOS
    tgt_mask: np.ndarray  # (B, J) float
    domains: np.ndarray  # (B,) DomainLabel values
    n_in: int = field(default=0)

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def make_batch(examples) -> Batch:
    """Pad ``(src_ids, tgt_ids, domain)`` triples into a :class:`Batch`.

    Target id sequences are taken as-is (callers append EOS); the decoder
    input is the target shifted right behind BOS.
    """
    if not examples:
        raise ValueError("empty batch")
    items = []
    for src, tgt, dom in examples:
        if len(src) == 0 or len(tgt) == 0:
            raise ValueError("empty source or target sequence")
        items.append((list(src), list(tgt), DomainLabel.parse(dom)))
    order = sorted(range(len(items)), key=lambda i: -int(items[i][2]))  # stable: IN first
    items = [items[i] for i in order]
    B = len(items)
    T = max(len(s) for s, _, _ in items)
    J = max(len(t) for _, t, _ in items)
    src = np.full((B, T), PAD, dtype=np.int64)
    tgt_in = np.full((B, J), PAD, dtype=np.int64)
    tgt_out = np.full((B, J), PAD, dtype=np.int64)
    mask = np.zeros((B, J))
    for i, (s, t, _) in enumerate(items):
        src[i, : len(s)] = s
        tgt_out[i, : len(t)] = t
        tgt_in[i, 0] = BOS
        tgt_in[i, 1 : len(t)] = t[:-1]
        mask[i, : len(t)] = 1.0
    domains = np.array([int(d) for _, _, d in items], dtype=np.int64)
    return Batch(
        src,
        np.array([len(s) for s, _, _ in items], dtype=np.int64),
        tgt_in,
        tgt_out,
        mask,
        domains,
        int((domains == DomainLabel.IN).sum()),
    )


# ---------------------------------------------------------------------------
# forward computation


def _check_ids(ids, vocab, side):
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise GraphError(f"{side} token id out of range [0, {vocab})")


def encode(binder: Binder, branch: str, src: np.ndarray, src_len: np.ndarray) -> ad.Node:
    """Bidirectional encoder states (B, T, 2h) of one branch."""
    table = binder["emb.src"]
    embeds = [ad.embed(table, src[:, t]) for t in range(src.shape[1])]
    lengths = None if src_len.min() == src.shape[1] else src_len
    return L.encode_bidirectional(binder.gru(f"{branch}.enc.fwd"), binder.gru(f"{branch}.enc.bwd"), embeds, lengths)


def initial_state(binder: Binder, branch: str, H: ad.Node) -> ad.Node:
    """``tanh(W <-h_1 + b)`` from the first position's backward state."""
    h = binder.params[f"{branch}.enc.fwd.U"].shape[1]
    back_first = ad.reshape(ad.slice_(ad.slice_(H, 1, 0, 1), 2, h, 2 * h), (H.shape[0], h))
    return ad.tanh(ad.linear(back_first, binder[f"{branch}.dec.init.W"], binder[f"{branch}.dec.init.b"]))


def decode_teacher_forced(binder: Binder, branch: str, H: ad.Node, src_mask, tgt_in: np.ndarray) -> ad.Node:
    """Readout features ``t`` (B, J, d_t) of one branch under teacher forcing."""
    att = binder.attention(f"{branch}.dec.att")
    gru = binder.gru(f"{branch}.dec.gru")
    out = binder.readout(branch)
    mem = L.attention_memory(att, H, src_mask)
    s = initial_state(binder, branch, H)
    J = tgt_in.shape[1]
    prev_states, contexts = [], []
    for j in range(J):
        c, _ = L.attention(att, s, mem)
        prev_states.append(s)
        contexts.append(c)
        if j + 1 < J:  # s_J never reaches a readout
            emb = ad.embed(out.E, tgt_in[:, j])
            s = L.gru_step(gru, ad.concat([emb, c], axis=-1), s)
    S = ad.stack(prev_states, axis=1)
    Cx = ad.stack(contexts, axis=1)
    return L.output_features(out, S, ad.embed(out.E, tgt_in), Cx)


@dataclass
class BatchGraph:
    """Nodes produced by :func:`build_forward` for one batch."""

    logp: ad.Node | None = None
    H_shared: ad.Node | None = None
    H_private: dict = field(default_factory=dict)
    disc_logits: ad.Node | None = None
    l_mt: ad.Node | None = None
    l_d: ad.Node | None = None


def build_forward(
    binder: Binder,
    batch: Batch,
    *,
    translate: bool = True,
    discriminate: bool = False,
    grl_scale: float | None = None,
) -> BatchGraph:
    """Record the forward pass and losses for ``batch``.

    With ``grl_scale`` set, the discriminator reads the shared encoder states
    through a gradient-reversal node of that scale.
    """
    cfg = binder.params.config
    _check_ids(batch.src, cfg.src_vocab, "source")
    _check_ids(batch.tgt_out, cfg.tgt_vocab, "target")
    out = BatchGraph()
    src_mask = np.arange(batch.src.shape[1])[None, :] < batch.src_len[:, None]
    H = encode(binder, "shared", batch.src, batch.src_len)
    out.H_shared = H

    if translate:
        t = decode_teacher_forced(binder, "shared", H, src_mask, batch.tgt_in)
        if cfg.use_private:
            parts = []
            for dom, rows in ((DomainLabel.IN, slice(0, batch.n_in)), (DomainLabel.OUT, slice(batch.n_in, batch.size))):
                if rows.stop - rows.start == 0:
                    continue
                branch = BRANCH_OF[dom]
                Hp = encode(binder, branch, batch.src[rows], batch.src_len[rows])
                out.H_private[dom] = Hp
                parts.append(decode_teacher_forced(binder, branch, Hp, src_mask[rows], batch.tgt_in[rows]))
            t_p = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
            t = L.gate_fuse(binder.gate(), t, t_p)
        out.logp = L.output_logprobs(binder.readout("shared"), t)
        out.l_mt = ad.cross_entropy(out.logp, batch.tgt_out, batch.tgt_mask)

    if discriminate:
        if not cfg.use_discriminator:
            raise GraphError("model has no discriminator")
        feats = H if grl_scale is None else ad.grad_reverse(H, grl_scale)
        out.disc_logits = L.discriminator_logits(binder.discriminator(), feats, batch.src_len)
        out.l_d = ad.sigmoid_xent(out.disc_logits, batch.domains)
    return out


# ---------------------------------------------------------------------------
# numeric conveniences


@dataclass
class ForwardOutput:
    logprobs: np.ndarray  # (J, V)
    H_shared: np.ndarray  # (I, 2h)
    H_private: np.ndarray | None  # (I, 2h_p)
    p_domain: float | None  # probability of in-domain


def forward_translate(params: ModelParams, src, tgt, domain, dtype=None) -> ForwardOutput:
    """Teacher-forced forward pass for one sentence pair (``tgt`` ends in EOS)."""
    domain = DomainLabel.parse(domain)
    batch = make_batch([(src, tgt, domain)])
    g = Graph(dtype or params["emb.src"].dtype)
    binder = Binder(g, params, trainable=())
    res = build_forward(binder, batch, discriminate=params.config.use_discriminator)
    Hp = res.H_private.get(domain)
    return ForwardOutput(
        res.logp.value[0],
        res.H_shared.value[0],
        None if Hp is None else Hp.value[0],
        None if res.disc_logits is None else float(1.0 / (1.0 + np.exp(-res.disc_logits.value[0]))),
    )


def _examples_batch(batch):
    return batch if isinstance(batch, Batch) else make_batch(batch)


def loss_mt(params: ModelParams, batch, dtype=None) -> tuple[float, float]:
    """Summed translation cross-entropy over the batch and its per-token mean."""
    batch = _examples_batch(batch)
    g = Graph(dtype or params["emb.src"].dtype)
    res = build_forward(Binder(g, params, trainable=()), batch)
    total = float(res.l_mt.value)
    return total, total / max(1, batch.n_tokens)


def loss_disc(params: ModelParams, batch, dtype=None) -> float:
    """Summed domain cross-entropy ``-sum log p(d*)`` over the batch."""
    batch = _examples_batch(batch)
    g = Graph(dtype or params["emb.src"].dtype)
    res = build_forward(Binder(g, params, trainable=()), batch, translate=False, discriminate=True)
    return float(res.l_d.value)


def loss_total(l_mt, l_d, lam: float = 1.5):
    """``L_MT + lam * L_D``; accepts floats or graph nodes."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if isinstance(l_mt, ad.Node):
        return l_mt if lam == 0 else l_mt + l_d * lam
    return l_mt + lam * l_d
