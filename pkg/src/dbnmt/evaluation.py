"""Corpus BLEU, the shared-encoder separation diagnostic and the ablation harness."""

from __future__ import annotations

import collections
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .model import EOS, Binder, DomainLabel, ModelConfig, ModelParams, encode
from .training import Corpora, TrainConfig, disc_accuracy, run_schedule


@dataclass(frozen=True)
class BleuConfig:
    unit: str = "word"  # "word" or "char"
    max_n: int = 4

    def __post_init__(self):
        if self.unit not in ("word", "char"):
            raise ValueError(f"unit must be 'word' or 'char', got {self.unit!r}")
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")


WORD4 = BleuConfig("word", 4)
CHAR5 = BleuConfig("char", 5)


def _units(sent, unit):
    if isinstance(sent, str):
        return list("".join(sent.split())) if unit == "char" else sent.split()
    sent = list(sent)
    if unit == "char":
        return list("".join(str(t) for t in sent))
    return sent


def _ngrams(seq, n):
    return collections.Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


@dataclass
class BleuStats:
    matches: list
    totals: list
    hyp_len: int
    ref_len: int

    @property
    def precisions(self) -> list[float]:
        return [m / t if t else 0.0 for m, t in zip(self.matches, self.totals)]

    @property
    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len >= self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.hyp_len)

    @property
    def score(self) -> float:
        if self.hyp_len == 0 or any(m == 0 for m in self.matches):
            return 0.0
        log_p = sum(math.log(m / t) for m, t in zip(self.matches, self.totals)) / len(self.matches)
        return 100.0 * self.brevity_penalty * math.exp(log_p)


def bleu_stats(hypotheses, references, config: BleuConfig = WORD4) -> BleuStats:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("BLEU of an empty corpus is undefined")
    N = config.max_n
    matches, totals = [0] * N, [0] * N
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        h, rf = _units(hyp, config.unit), _units(ref, config.unit)
        c += len(h)
        r += len(rf)
        for n in range(1, N + 1):
            hc, rc = _ngrams(h, n), _ngrams(rf, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    return BleuStats(matches, totals, c, r)


def bleu(hypotheses, references, config: BleuConfig = WORD4) -> float:
    """Corpus BLEU in [0, 100]: clipped n-gram precisions, geometric mean, brevity penalty.

    No smoothing: if any order has no match the score is 0. In ``char`` mode
    whitespace is removed and every character is a unit.
    """
    return bleu_stats(hypotheses, references, config).score


def bleu_ids(hypotheses, references, max_n: int = 4) -> float:
    """Word-level BLEU over token-id sequences (0 for an empty corpus)."""
    if not hypotheses:
        return 0.0
    return bleu(hypotheses, references, BleuConfig("word", max_n))


# ---------------------------------------------------------------------------
# separation diagnostic


@dataclass
class SeparationReport:
    centroid_in: np.ndarray
    centroid_out: np.ndarray
    distance: float
    disc_accuracy: float | None

    def to_dict(self) -> dict:
        return {
            "distance": self.distance,
            "disc_accuracy": self.disc_accuracy,
            "centroid_in": self.centroid_in.tolist(),
            "centroid_out": self.centroid_out.tolist(),
        }


def pooled_shared_states(params: ModelParams, sources, batch_size: int = 64) -> np.ndarray:
    """Time-averaged shared-encoder states, one row per source, in canonical order.

    Sentences are processed sorted by (length, tokens) so that the result
    does not depend on the order they were given in.
    """
    canon = sorted((list(s) for s in sources), key=lambda s: (len(s), s))
    rows = []
    for i in range(0, len(canon), batch_size):
        part = canon[i : i + batch_size]
        B, T = len(part), max(len(s) for s in part)
        src = np.zeros((B, T), dtype=np.int64)
        for b, s in enumerate(part):
            src[b, : len(s)] = s
        lengths = np.array([len(s) for s in part])
        g = ad.Graph(np.float64)
        H = encode(Binder(g, params.astype(np.float64), trainable=()), "shared", src, lengths).value
        keep = (np.arange(T)[None, :] < lengths[:, None])[:, :, None]
        rows.append((H * keep).sum(axis=1) / lengths[:, None])
    return np.concatenate(rows, axis=0)


def separation_report(params: ModelParams, sample_in, sample_out) -> SeparationReport:
    """Distance between per-domain centroids of mean-pooled shared-encoder states.

    ``sample_in``/``sample_out`` are lists of source id sequences. The
    discriminator accuracy on the same sentences is included when the model
    has a discriminator.
    """
    if len(sample_in) == 0 or len(sample_out) == 0:
        raise ValueError("separation_report needs nonempty samples for both domains")
    c_in = pooled_shared_states(params, sample_in).mean(axis=0)
    c_out = pooled_shared_states(params, sample_out).mean(axis=0)
    acc = None
    if params.config.use_discriminator:
        examples = [(list(s), [0], DomainLabel.IN) for s in sample_in]
        examples += [(list(s), [0], DomainLabel.OUT) for s in sample_out]
        acc = disc_accuracy(params, examples)
    return SeparationReport(c_in, c_out, float(np.linalg.norm(c_in - c_out)), acc)


# ---------------------------------------------------------------------------
# ablation


VARIANTS = (
    ("full", True, True),
    ("no_private", True, False),
    ("no_discriminator", False, True),
    ("neither", False, False),
)


def variant_config(base: ModelConfig, use_discriminator: bool, use_private: bool) -> ModelConfig:
    return replace(base, use_discriminator=use_discriminator, use_private=use_private)


def decode_corpus(params: ModelParams, sources, beam_size: int = 10, max_len: int = 60) -> list:
    from .inference import greedy_decode_batch, translate

    if beam_size == 1:
        return greedy_decode_batch(params, sources, max_len)
    return [translate(params, s, beam_size=beam_size, max_len=max_len)[0] for s in sources]


def corpus_bleu(params: ModelParams, pairs, beam_size: int = 10, max_len: int = 60) -> float:
    """Word-4 BLEU of decoded ``(src, tgt_with_eos)`` pairs against their references."""
    hyps = decode_corpus(params, [s for s, _ in pairs], beam_size, max_len)
    return bleu_ids(hyps, [t[:-1] if t and t[-1] == EOS else t for _, t in pairs])


@dataclass
class AblationRow:
    variant: str
    discriminator: bool
    private: bool
    seed: int
    dev: float
    test: float
    distance: float | None = None
    phase2_peak: float | None = None
    final_disc_accuracy: float | None = None

    @property
    def average(self) -> float:
        return (self.dev + self.test) / 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["average"] = self.average
        return d


def run_ablation(
    model_config: ModelConfig,
    train_config: TrainConfig,
    corpora: Corpora,
    test_in,
    seeds=(0,),
    include_in_only: bool = True,
    beam_size: int = 10,
    max_len: int = 60,
    diagnose_sample: int = 200,
    variants=VARIANTS,
    on_row=None,
) -> list[AblationRow]:
    """Train every ablation variant (and the in-domain-only baseline) per seed.

    All variants share the seed, the corpora and the step budget. For
    variants with a discriminator the row also records the separation
    distance, the phase-2 peak accuracy and the final frozen-feature accuracy
    on the discriminator's held-out slice; the no-discriminator variant gets
    the separation distance too so the two can be compared.
    """
    rows = []
    plan = [(name, d, p, corpora) for name, d, p in variants]
    if include_in_only:
        plan.append(("in_only", False, False, Corpora(corpora.train_in, [], corpora.dev_in, corpora.dev_out)))
    sample_in = [s for s, _ in corpora.dev_in[:diagnose_sample]]
    sample_out = [s for s, _ in corpora.dev_out[:diagnose_sample]]
    for seed in seeds:
        for name, use_d, use_p, data in plan:
            mcfg = variant_config(model_config, use_d, use_p)
            tcfg = replace(train_config, seed=seed)
            params, _, trainer = run_schedule(mcfg, tcfg, data)
            row = AblationRow(
                name, use_d, use_p, seed,
                dev=corpus_bleu(params, corpora.dev_in, beam_size, max_len),
                test=corpus_bleu(params, test_in, beam_size, max_len),
            )
            if name != "in_only" and sample_out:
                row.distance = separation_report(params, sample_in, sample_out).distance
            if use_d:
                row.phase2_peak = trainer.phase2_peak
                row.final_disc_accuracy = disc_accuracy(params, trainer.disc_heldout)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def summarize_ablation(rows) -> dict:
    """Mean dev/test/average BLEU per variant over seeds, in first-seen order."""
    acc: dict = {}
    for r in rows:
        acc.setdefault(r.variant, []).append(r)
    out = {}
    for name, rs in acc.items():
        out[name] = {
            "discriminator": rs[0].discriminator,
            "private": rs[0].private,
            "dev": float(np.mean([r.dev for r in rs])),
            "test": float(np.mean([r.test for r in rs])),
            "average": float(np.mean([r.average for r in rs])),
            "seeds": len(rs),
        }
    return out


def ablation_table(rows) -> str:
    """Plain-text table: one line per variant with discriminator/private marks and mean BLEU."""
    summary = summarize_ablation(rows)
    lines = [f"{'variant':<18}{'disc':>6}{'priv':>6}{'dev':>9}{'test':>9}{'avg':>9}"]
    for name, s in summary.items():
        mark = lambda b: "yes" if b else "no"  # noqa: E731
        lines.append(
            f"{name:<18}{mark(s['discriminator']):>6}{mark(s['private']):>6}"
            f"{s['dev']:>9.2f}{s['test']:>9.2f}{s['average']:>9.2f}"
        )
    return "\n".join(lines)


def ablation_jsonl(rows) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in rows)
