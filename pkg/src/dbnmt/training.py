"""Parameter initialisation, Adadelta, balanced batching, the three-phase
training schedule and checkpoint files."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .model import (
    Batch,
    Binder,
    DomainLabel,
    ModelConfig,
    ModelParams,
    build_forward,
    is_bias,
    loss_total,
    make_batch,
    param_shapes,
)

log = logging.getLogger(__name__)

INIT_RANGE = 0.1


@dataclass
class TrainConfig:
    lam: float = 1.5
    grl_scale: float = 1.0
    batch_size: int = 32
    disc_accuracy_threshold: float = 0.90
    phase1_epochs: int = 5
    phase1_patience: int = 2
    max_epochs: int = 5
    steps_per_epoch: int | None = None
    seed: int = 0
    rho: float = 0.95
    eps: float = 1e-6
    clip_norm: float = 5.0
    max_len: int = 50
    disc_holdout: float = 0.1
    disc_eval_every: int = 200
    disc_budget: int = 20000
    dev_max_len: int = 60
    dtype: str = "float32"

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        p = []
        if not 0 < self.disc_accuracy_threshold <= 1:
            p.append("disc_accuracy_threshold must lie in (0, 1]")
        if self.batch_size < 2:
            p.append("batch_size must be >= 2 for balanced batches")
        if self.lam < 0:
            p.append("lam must be >= 0")
        if not self.grl_scale > 0:
            p.append("grl_scale must be > 0")
        if not 0 <= self.rho < 1 or self.eps <= 0:
            p.append("adadelta needs 0 <= rho < 1 and eps > 0")
        if self.phase1_epochs < 0 or self.max_epochs < 0:
            p.append("epoch counts must be >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            p.append("steps_per_epoch must be >= 1")
        if not 0 < self.disc_holdout < 1:
            p.append("disc_holdout must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            p.append("dtype must be float32 or float64")
        return p

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def init_params(config: ModelConfig, rng: np.random.Generator, dtype="float32") -> ModelParams:
    """Weights uniform in [-0.1, 0.1], biases zero, drawn in a fixed name order."""
    arrays = {}
    for name, shape in param_shapes(config).items():
        if is_bias(name):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            arrays[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape).astype(dtype)
    return ModelParams(config, arrays)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdadeltaState:
    """Running averages of squared gradients and squared updates per parameter."""

    sq_grad: dict = field(default_factory=dict)
    sq_update: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params) -> "AdadeltaState":
        items = params.items() if hasattr(params, "items") else params
        st = cls()
        for name, arr in items:
            st.sq_grad[name] = np.zeros_like(arr)
            st.sq_update[name] = np.zeros_like(arr)
        return st


def adadelta_step(params, grads: dict, state: AdadeltaState, rho: float = 0.95, eps: float = 1e-6) -> AdadeltaState:
    """In-place Adadelta update of ``params[name]`` for every name in ``grads``.

    ``params`` is anything indexable by name returning a writable array.
    """
    for name, g in grads.items():
        p = params[name]
        eg = state.sq_grad.setdefault(name, np.zeros_like(p))
        ex = state.sq_update.setdefault(name, np.zeros_like(p))
        g = g.astype(p.dtype, copy=False)
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
        ex *= rho
        ex += (1.0 - rho) * delta * delta
        p += delta
    return state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm > 0:
        f = max_norm / total
        for k in grads:
            grads[k] = grads[k] * f
    return total


# ---------------------------------------------------------------------------
# sampling


class BalancedSampler:
    """Draws batches with ``ceil(b/2)`` in-domain and ``floor(b/2)`` out-of-domain examples.

    Each pool is walked in a shuffled order and reshuffled when exhausted, so
    the smaller pool is recycled (oversampled). With an empty out-of-domain
    pool every slot is filled from the in-domain pool.
    """

    def __init__(self, in_pool, out_pool, rng: np.random.Generator):
        if len(in_pool) == 0:
            raise ValueError("in-domain pool is empty")
        self.pools = (list(in_pool), list(out_pool))
        self.rng = rng
        self.orders = [np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)]
        self.cursors = [0, 0]

    def _draw(self, k: int, which: int) -> list:
        pool = self.pools[which]
        out = []
        while len(out) < k:
            if self.cursors[which] >= len(self.orders[which]):
                self.orders[which] = self.rng.permutation(len(pool))
                self.cursors[which] = 0
            take = min(k - len(out), len(pool) - self.cursors[which])
            idx = self.orders[which][self.cursors[which] : self.cursors[which] + take]
            out.extend(pool[i] for i in idx)
            self.cursors[which] += take
        return out

    def sample(self, batch_size: int) -> list:
        if not self.pools[1]:
            return self._draw(batch_size, 0)
        n_in = (batch_size + 1) // 2
        return self._draw(n_in, 0) + self._draw(batch_size - n_in, 1)

    def state(self) -> dict:
        return {"orders": [o.copy() for o in self.orders], "cursors": list(self.cursors)}

    def load_state(self, st: dict):
        self.orders = [np.asarray(o, dtype=np.int64) for o in st["orders"]]
        self.cursors = [int(c) for c in st["cursors"]]


def sample_balanced_batch(sampler: BalancedSampler, batch_size: int) -> list:
    return sampler.sample(batch_size)


# ---------------------------------------------------------------------------
# corpora and evaluation helpers


@dataclass
class Corpora:
    """Id-encoded training data: lists of ``(src_ids, tgt_ids_with_eos)`` pairs."""

    train_in: list
    train_out: list
    dev_in: list
    dev_out: list = field(default_factory=list)

    def tagged(self, pairs, domain):
        return [(s, t, DomainLabel(domain)) for s, t in pairs]


def filter_pairs(pairs, max_len):
    return [(s, t) for s, t in pairs if len(s) <= max_len and len(t) <= max_len]


class PhaseTwoError(RuntimeError):
    """The discriminator did not reach the accuracy threshold within its step budget."""


def chunks(seq, n):
    for i in range(0, len(seq), n):
        yield seq[i : i + n]


def disc_accuracy(params: ModelParams, examples, batch_size=64) -> float:
    """Fraction of examples whose domain the discriminator gets right (threshold 0.5)."""
    hits = 0
    for part in chunks(examples, batch_size):
        batch = make_batch(part)
        g = ad.Graph(params["emb.src"].dtype)
        res = build_forward(Binder(g, params, trainable=()), batch, translate=False, discriminate=True)
        pred = (res.disc_logits.value > 0).astype(np.int64)
        hits += int((pred == batch.domains).sum())
    return hits / len(examples)


def mean_token_loss(params: ModelParams, examples, batch_size=64) -> float:
    total, tokens = 0.0, 0
    for part in chunks(examples, batch_size):
        batch = make_batch(part)
        g = ad.Graph(params["emb.src"].dtype)
        res = build_forward(Binder(g, params, trainable=()), batch)
        total += float(res.l_mt.value)
        tokens += batch.n_tokens
    return total / max(1, tokens)


# ---------------------------------------------------------------------------
# trainer


class Trainer:
    """Three-phase schedule as a resumable step machine.

    Phase 1 trains the translation part on ``L_MT``; phase 2 trains only the
    discriminator on ``L_D`` with everything else frozen until its held-out
    accuracy reaches the threshold; phase 3 trains everything on
    ``L_MT + lam * L_D`` with the discriminator reading the shared encoder
    through gradient reversal. Models without a discriminator skip phase 2
    and train phase 3 on ``L_MT`` alone.
    """

    def __init__(self, model_config: ModelConfig, config: TrainConfig, corpora: Corpora, params: ModelParams | None = None):
        self.model_config = model_config
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.rng = np.random.default_rng(config.seed)
        self.params = params if params is not None else init_params(model_config, self.rng, self.dtype)
        self.opt = AdadeltaState()
        train_in = filter_pairs(corpora.train_in, config.max_len)
        train_out = filter_pairs(corpora.train_out, config.max_len)
        self.dev_in = corpora.tagged(corpora.dev_in, DomainLabel.IN)
        self.sampler = BalancedSampler(
            corpora.tagged(train_in, DomainLabel.IN), corpora.tagged(train_out, DomainLabel.OUT), self.rng
        )
        self.disc_sampler = None
        self.disc_heldout: list = []
        if model_config.use_discriminator:
            if not train_out:
                raise ValueError("a discriminator needs out-of-domain data")
            split = np.random.default_rng([config.seed, 1])
            fit_in, held_in = _split(train_in, config.disc_holdout, split)
            fit_out, held_out = _split(train_out, config.disc_holdout, split)
            held_out = held_out[: len(held_in)]
            self.disc_heldout = corpora.tagged(held_in, DomainLabel.IN) + corpora.tagged(held_out, DomainLabel.OUT)
            self.disc_sampler = BalancedSampler(
                corpora.tagged(fit_in, DomainLabel.IN), corpora.tagged(fit_out, DomainLabel.OUT), self.rng
            )
        per_epoch = config.steps_per_epoch
        if per_epoch is None:
            per_epoch = math.ceil(len(train_in) / ((config.batch_size + 1) // 2 if train_out else config.batch_size))
        self.steps_per_epoch = per_epoch
        self.phase = 1 if config.phase1_epochs > 0 else self._after_phase1()
        self.epoch = 0
        self.step_in_epoch = 0
        self.global_step = 0
        self.phase2_steps = 0
        self.phase2_peak = None
        self.best_bleu = -1.0
        self.best_params: ModelParams | None = None
        self.phase1_best = -1.0
        self.phase1_stale = 0
        self.clip_events = 0
        self.epoch_loss = {"l_mt": 0.0, "l_d": 0.0, "steps": 0}
        self.metrics: list[dict] = []
        self.snapshots: dict = {}

    # -- phase bookkeeping

    def _after_phase1(self):
        if self.model_config.use_discriminator:
            return 2
        return 3 if self.config.max_epochs > 0 else 4

    @property
    def done(self) -> bool:
        return self.phase == 4

    def trainable(self) -> list[str]:
        names = self.params.names()
        if self.phase == 1:
            return [n for n in names if not n.startswith("disc.")]
        if self.phase == 2:
            return [n for n in names if n.startswith("disc.")]
        return names

    def _log(self, record: dict):
        self.metrics.append(record)
        log.info(json.dumps(record))

    # -- one optimisation step

    def step(self) -> dict:
        """Run one optimisation step (and any epoch/phase transition it triggers)."""
        if self.done:
            raise RuntimeError("training already finished")
        cfg = self.config
        phase = self.phase
        trainable = self.trainable()
        g = ad.Graph(self.dtype)
        binder = Binder(g, self.params, trainable=trainable)
        if phase == 2:
            batch = make_batch(self.disc_sampler.sample(cfg.batch_size))
            res = build_forward(binder, batch, translate=False, discriminate=True)
            loss = res.l_d
        else:
            batch = make_batch(self.sampler.sample(cfg.batch_size))
            adversarial = phase == 3 and self.model_config.use_discriminator
            res = build_forward(
                binder, batch, discriminate=adversarial, grl_scale=cfg.grl_scale if adversarial else None
            )
            loss = loss_total(res.l_mt, res.l_d, cfg.lam) if adversarial else res.l_mt
        grads = binder.grads(ad.backward(g, loss))
        norm = clip_global_norm(grads, cfg.clip_norm)
        if norm > cfg.clip_norm:
            self.clip_events += 1
        adadelta_step(self.params, grads, self.opt, cfg.rho, cfg.eps)
        self.global_step += 1
        out = {
            "phase": phase,
            "loss": float(loss.value),
            "l_mt": None if res.l_mt is None else float(res.l_mt.value),
            "l_d": None if res.l_d is None else float(res.l_d.value),
            "grad_norm": norm,
        }
        if phase == 2:
            self._phase2_tick()
        else:
            self.epoch_loss["l_mt"] += out["l_mt"]
            self.epoch_loss["l_d"] += out["l_d"] or 0.0
            self.epoch_loss["steps"] += 1
            self.step_in_epoch += 1
            if self.step_in_epoch >= self.steps_per_epoch:
                self._end_epoch()
        return out

    def _phase2_tick(self):
        cfg = self.config
        self.phase2_steps += 1
        if self.phase2_steps % cfg.disc_eval_every and self.phase2_steps < cfg.disc_budget:
            return
        acc = disc_accuracy(self.params, self.disc_heldout)
        self.phase2_peak = acc if self.phase2_peak is None else max(self.phase2_peak, acc)
        self._log({"phase": 2, "step": self.phase2_steps, "disc_acc": acc})
        if acc >= cfg.disc_accuracy_threshold:
            self.snapshots["phase2_end"] = self.params.copy()
            self._log({"phase": 2, "event": "threshold_reached", "step": self.phase2_steps, "disc_acc": acc})
            self.phase = 3 if cfg.max_epochs > 0 else 4
            self.epoch = 0
            self.step_in_epoch = 0
        elif self.phase2_steps >= cfg.disc_budget:
            raise PhaseTwoError(
                f"discriminator accuracy {acc:.3f} below {cfg.disc_accuracy_threshold} after {self.phase2_steps} steps"
            )

    def evaluate(self) -> dict:
        rec = {}
        if self.dev_in:
            from .inference import greedy_decode_batch
            from .evaluation import bleu_ids

            rec["dev_loss"] = mean_token_loss(self.params, self.dev_in)
            hyps = greedy_decode_batch(self.params, [s for s, _, _ in self.dev_in], self.config.dev_max_len)
            rec["dev_bleu"] = bleu_ids(hyps, [t[:-1] for _, t, _ in self.dev_in])
        if self.model_config.use_discriminator and self.disc_heldout:
            rec["disc_acc"] = disc_accuracy(self.params, self.disc_heldout)
        return rec

    def _end_epoch(self):
        cfg = self.config
        self.epoch += 1
        self.step_in_epoch = 0
        rec = {"phase": self.phase, "epoch": self.epoch, "step": self.global_step, "clip_events": self.clip_events}
        n = max(1, self.epoch_loss["steps"])
        rec["train_l_mt"] = self.epoch_loss["l_mt"] / n
        if self.phase == 3 and self.model_config.use_discriminator:
            rec["train_l_d"] = self.epoch_loss["l_d"] / n
        self.epoch_loss = {"l_mt": 0.0, "l_d": 0.0, "steps": 0}
        rec.update(self.evaluate())
        self._log(rec)
        bleu = rec.get("dev_bleu", 0.0)
        if self.phase == 1:
            if bleu > self.phase1_best:
                self.phase1_best, self.phase1_stale = bleu, 0
            else:
                self.phase1_stale += 1
            if self.epoch >= cfg.phase1_epochs or self.phase1_stale >= cfg.phase1_patience:
                self.snapshots["phase1_end"] = self.params.copy()
                self.phase = self._after_phase1()
                self.epoch = 0
        elif self.phase == 3:
            if bleu > self.best_bleu:
                self.best_bleu = bleu
                self.best_params = self.params.copy()
            if self.epoch >= cfg.max_epochs:
                self.phase = 4

    def run(self, max_steps: int | None = None) -> ModelParams:
        """Train until the schedule finishes (or ``max_steps`` more steps ran); returns the selected parameters."""
        n = 0
        while not self.done and (max_steps is None or n < max_steps):
            self.step()
            n += 1
        return self.result()

    def result(self) -> ModelParams:
        return self.best_params if self.best_params is not None else self.params

    # -- persistence

    def checkpoint(self) -> "Checkpoint":
        tensors = {f"param.{k}": v for k, v in self.params.items()}
        for k, v in self.opt.sq_grad.items():
            tensors[f"opt.sq_grad.{k}"] = v
        for k, v in self.opt.sq_update.items():
            tensors[f"opt.sq_update.{k}"] = v
        if self.best_params is not None:
            tensors.update({f"best.{k}": v for k, v in self.best_params.items()})
        for label, sampler in (("sampler", self.sampler), ("disc_sampler", self.disc_sampler)):
            if sampler is None:
                continue
            st = sampler.state()
            tensors[f"{label}.order_in"] = st["orders"][0]
            tensors[f"{label}.order_out"] = st["orders"][1]
        meta = {
            "model_config": self.model_config.to_dict(),
            "train_config": asdict(self.config),
            "phase": self.phase,
            "epoch": self.epoch,
            "step_in_epoch": self.step_in_epoch,
            "global_step": self.global_step,
            "phase2_steps": self.phase2_steps,
            "phase2_peak": self.phase2_peak,
            "best_bleu": self.best_bleu,
            "phase1_best": self.phase1_best,
            "phase1_stale": self.phase1_stale,
            "clip_events": self.clip_events,
            "epoch_loss": self.epoch_loss,
            "rng_state": _jsonable(self.rng.bit_generator.state),
            "cursors": {
                "sampler": self.sampler.cursors,
                "disc_sampler": None if self.disc_sampler is None else self.disc_sampler.cursors,
            },
            "metrics": self.metrics,
        }
        return Checkpoint(tensors, meta)

    @classmethod
    def resume(cls, ckpt: "Checkpoint", corpora: Corpora) -> "Trainer":
        meta = ckpt.meta
        mcfg = ModelConfig.from_dict(meta["model_config"])
        tcfg = TrainConfig(**meta["train_config"])
        params = ModelParams(mcfg, {k[6:]: v.copy() for k, v in ckpt.tensors.items() if k.startswith("param.")})
        tr = cls(mcfg, tcfg, corpora, params=params)
        for k, v in ckpt.tensors.items():
            if k.startswith("opt.sq_grad."):
                tr.opt.sq_grad[k[len("opt.sq_grad."):]] = v.copy()
            elif k.startswith("opt.sq_update."):
                tr.opt.sq_update[k[len("opt.sq_update."):]] = v.copy()
        best = {k[5:]: v.copy() for k, v in ckpt.tensors.items() if k.startswith("best.")}
        tr.best_params = ModelParams(mcfg, best) if best else None
        for label in ("sampler", "disc_sampler"):
            sampler = getattr(tr, label)
            if sampler is None:
                continue
            sampler.load_state(
                {
                    "orders": [ckpt.tensors[f"{label}.order_in"], ckpt.tensors[f"{label}.order_out"]],
                    "cursors": meta["cursors"][label],
                }
            )
        tr.rng.bit_generator.state = meta["rng_state"]
        for key in (
            "phase", "epoch", "step_in_epoch", "global_step", "phase2_steps", "phase2_peak",
            "best_bleu", "phase1_best", "phase1_stale", "clip_events", "epoch_loss", "metrics",
        ):
            setattr(tr, key, meta[key])
        return tr


def _split(pairs, frac, rng):
    idx = rng.permutation(len(pairs))
    n_held = max(1, int(round(frac * len(pairs))))
    held = [pairs[i] for i in sorted(idx[:n_held])]
    fit = [pairs[i] for i in sorted(idx[n_held:])]
    return fit, held


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def run_schedule(model_config: ModelConfig, config: TrainConfig, corpora: Corpora, metrics_path=None):
    """Train from scratch through all phases. Returns ``(params, metrics, trainer)``."""
    tr = Trainer(model_config, config, corpora)
    tr.run()
    if metrics_path is not None:
        write_metrics(metrics_path, tr.metrics)
    return tr.result(), tr.metrics, tr


def write_metrics(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# checkpoint files

MAGIC = b"DBNMT1"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    """Named tensors plus JSON-serialisable metadata (configs, phase, epoch, RNG state)."""

    tensors: dict
    meta: dict


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialise: magic, version, metadata JSON, tensor table, payloads, 64-bit checksum (all little-endian)."""
    meta = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = []
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        if arr.dtype.kind == "f":
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        else:
            arr = arr.astype("<i8", copy=False)
        arrays.append((name, np.ascontiguousarray(arr)))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(arrays)))
    offset = 0
    for name, arr in arrays:
        key = name.encode("utf-8")
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<BB", _CODES[np.dtype(arr.dtype.str)], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<QQ", offset, arr.nbytes))
        offset += arr.nbytes
    for _, arr in arrays:
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + _checksum(body)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-8], data[-8:]
    if _checksum(body) != digest:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", body, pos)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    meta = json.loads(body[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    table = []
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + klen].decode("utf-8")
        pos += klen
        code, ndim = struct.unpack_from("<BB", body, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        off, nbytes = struct.unpack_from("<QQ", body, pos)
        pos += 16
        table.append((name, _DTYPES[code], shape, off, nbytes))
    tensors = {}
    for name, dt, shape, off, nbytes in table:
        start = pos + off
        tensors[name] = np.frombuffer(body[start : start + nbytes], dtype=dt).reshape(shape).copy()
    return Checkpoint(tensors, meta)


def save_checkpoint(path, ckpt: Checkpoint):
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def params_checkpoint(params: ModelParams, meta: dict | None = None) -> Checkpoint:
    """A checkpoint carrying only model parameters (for translation/diagnosis)."""
    m = {"model_config": params.config.to_dict()}
    m.update(meta or {})
    return Checkpoint({f"param.{k}": v for k, v in params.items()}, m)


def params_from_checkpoint(ckpt: Checkpoint, best: bool = True) -> ModelParams:
    cfg = ModelConfig.from_dict(ckpt.meta["model_config"])
    prefix = "best." if best and any(k.startswith("best.") for k in ckpt.tensors) else "param."
    return ModelParams(cfg, {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)})
