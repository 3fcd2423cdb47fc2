"""Corpora, vocabularies, BPE subwords and the synthetic two-domain task."""

from __future__ import annotations

import collections
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import BOS, EOS, PAD, UNK, DomainLabel

RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
BPE_MARK = "@@"
END_OF_WORD = "</w>"


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Token <-> id map with reserved ids pad=0, unk=1, bos=2, eos=3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens, add_eos: bool = False) -> list[int]:
        ids = [self.stoi.get(t, UNK) for t in tokens]
        if add_eos:
            ids.append(EOS)
        return ids

    def decode(self, ids, strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS and strip_special:
                break
            if strip_special and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.itos):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx = line.rsplit("\t", 1)
                rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: ids are not contiguous from 0")
        return cls([t for _, t in rows])


def build_vocab(sentences, cap: int) -> Vocabulary:
    """Most frequent tokens first (ties broken lexicographically), reserved ids included in ``cap``."""
    if cap < 5:
        raise ValueError("vocabulary cap must be >= 5")
    counts = collections.Counter(tok for sent in sentences for tok in sent)
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED) + [t for t, _ in ranked[: cap - len(RESERVED)]])


# ---------------------------------------------------------------------------
# byte-pair encoding


@dataclass
class BpeModel:
    merges: list  # [(left, right), ...] in learned order

    @property
    def merge_count(self) -> int:
        return len(self.merges)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for a, b in self.merges:
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        merges = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    a, b = line.split(" ")
                    merges.append((a, b))
        return cls(merges)


def _word_symbols(word: str) -> tuple:
    return tuple(word[:-1]) + (word[-1] + END_OF_WORD,)


def _merge_word(symbols: tuple, pair: tuple) -> tuple:
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(lines, n_merges: int) -> BpeModel:
    """Learn merge rules by repeatedly joining the most frequent adjacent pair.

    ``lines`` is an iterable of whitespace-tokenised text lines. Ties between
    equally frequent pairs go to the lexicographically smallest pair.
    """
    if n_merges < 0:
        raise ValueError("n_merges must be >= 0")
    freq = collections.Counter(w for line in lines for w in line.split())
    words = {_word_symbols(w): c for w, c in freq.items()}
    merges = []
    while len(merges) < n_merges:
        pairs = collections.Counter()
        for sym, c in words.items():
            for i in range(len(sym) - 1):
                pairs[sym[i], sym[i + 1]] += c
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        words = {_merge_word(sym, best): c for sym, c in words.items()}
    return BpeModel(merges)


class _BpeApplier:
    def __init__(self, model: BpeModel):
        self.model = model
        self.cache: dict[str, list] = {}

    def word(self, w: str) -> list[str]:
        hit = self.cache.get(w)
        if hit is not None:
            return hit
        sym = _word_symbols(w)
        for pair in self.model.merges:
            if len(sym) == 1:
                break
            sym = _merge_word(sym, pair)
        pieces = [s + BPE_MARK for s in sym[:-1]] + [sym[-1][: -len(END_OF_WORD)]]
        self.cache[w] = pieces
        return pieces


def apply_bpe(model: BpeModel, text: str, _applier: _BpeApplier | None = None) -> list[str]:
    """Segment ``text`` into subwords; non-final pieces of a word carry the ``@@`` marker."""
    ap = _applier or _BpeApplier(model)
    out = []
    for w in text.split():
        out.extend(ap.word(w))
    return out


def detokenize_bpe(tokens) -> str:
    text = " ".join(tokens)
    return text.replace(BPE_MARK + " ", "").removesuffix(BPE_MARK)


# ---------------------------------------------------------------------------
# corpora


@dataclass
class ParallelExample:
    src: list
    tgt: list
    domain: DomainLabel


@dataclass
class ParallelCorpus:
    examples: list = field(default_factory=list)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def sources(self):
        return [e.src for e in self.examples]

    def targets(self):
        return [e.tgt for e in self.examples]


def filter_by_length(corpus: ParallelCorpus, max_len: int) -> tuple[ParallelCorpus, int]:
    """Drop pairs with either side longer than ``max_len``; returns the kept corpus and the drop count."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    kept = [e for e in corpus if len(e.src) <= max_len and len(e.tgt) <= max_len]
    return ParallelCorpus(kept), len(corpus) - len(kept)


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def read_parallel(src_path, tgt_path, domain) -> ParallelCorpus:
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} and {tgt_path} differ in line count ({len(src)} vs {len(tgt)})")
    dom = DomainLabel.parse(domain)
    examples = []
    for s, t in zip(src, tgt):
        s, t = s.split(), t.split()
        if s and t:
            examples.append(ParallelExample(s, t, dom))
    return ParallelCorpus(examples)


def write_parallel(corpus: ParallelCorpus, src_path, tgt_path):
    write_lines(src_path, [" ".join(e.src) for e in corpus])
    write_lines(tgt_path, [" ".join(e.tgt) for e in corpus])


def encode_pairs(corpus: ParallelCorpus, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> list:
    """``(src_ids, tgt_ids + [EOS])`` pairs for training."""
    return [(src_vocab.encode(e.src), tgt_vocab.encode(e.tgt, add_eos=True)) for e in corpus]


# ---------------------------------------------------------------------------
# synthetic two-domain task


@dataclass
class SyntheticTaskSpec:
    """Parameters of the synthetic in/out-of-domain translation task.

    Both domains translate a shared core vocabulary with one dictionary. On
    top of that each domain has its own source-token slice and a rule:

    * ``"sense"`` - a subset of core words takes a domain-specific translation;
    * ``"swap"`` - adjacent target words are swapped pairwise;
    * ``"plain"`` - nothing beyond the dictionary.

    Core words are drawn from a Zipf distribution over a domain-specific
    ranking, so words common in one domain can be rare in the other.
    """

    n_core: int = 200
    n_domain: int = 40
    n_in: int = 2000
    n_out: int = 20000
    n_dev: int = 200
    n_test: int = 200
    min_len: int = 4
    max_len: int = 12
    in_rule: str = "sense"
    out_rule: str = "plain"
    n_sense: int = 40
    zipf: float = 1.0
    domain_token_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_out < self.n_in:
            raise ValueError("n_out must be >= n_in")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        for rule in (self.in_rule, self.out_rule):
            if rule not in ("sense", "swap", "plain"):
                raise ValueError(f"unknown rule {rule!r}")
        if self.n_sense > self.n_core:
            raise ValueError("n_sense cannot exceed n_core")


@dataclass
class SyntheticTask:
    spec: SyntheticTaskSpec
    train_in: ParallelCorpus
    train_out: ParallelCorpus
    dev_in: ParallelCorpus
    test_in: ParallelCorpus
    dev_out: ParallelCorpus
    test_out: ParallelCorpus
    lexicon: dict  # source core word -> target word
    senses: dict  # domain tag -> {source core word -> domain-specific target word}

    def translate(self, src_tokens, domain) -> list[str]:
        """Reference translation by the generating rules (an oracle)."""
        dom = DomainLabel.parse(domain)
        rule = self.spec.in_rule if dom is DomainLabel.IN else self.spec.out_rule
        sense = self.senses.get(dom.tag, {}) if rule == "sense" else {}
        out = []
        for tok in src_tokens:
            if tok in sense:
                out.append(sense[tok])
            elif tok in self.lexicon:
                out.append(self.lexicon[tok])
            else:  # domain-specific source word
                out.append(tok.upper())
        if rule == "swap":
            for i in range(0, len(out) - 1, 2):
                out[i], out[i + 1] = out[i + 1], out[i]
        return out


def generate_synthetic(spec: SyntheticTaskSpec) -> SyntheticTask:
    """Build train/dev/test corpora for both domains; deterministic in ``spec.seed``.

    Every generated sentence contains at least one word from its domain's
    own slice. Dev and test pairs never occur in training or in each other.
    """
    rng = np.random.default_rng(spec.seed)
    core = [f"w{k}" for k in range(spec.n_core)]
    targets = rng.permutation(spec.n_core)
    lexicon = {w: f"t{int(targets[k])}" for k, w in enumerate(core)}
    sense_words = [core[int(i)] for i in rng.choice(spec.n_core, spec.n_sense, replace=False)]
    senses = {
        "in": {w: f"ti{k}" for k, w in enumerate(sense_words)},
        "out": {w: f"to{k}" for k, w in enumerate(sense_words)},
    }
    dom_words = {"in": [f"a{k}" for k in range(spec.n_domain)], "out": [f"b{k}" for k in range(spec.n_domain)]}
    weights = 1.0 / np.arange(1, spec.n_core + 1) ** spec.zipf
    weights /= weights.sum()
    ranking = {"in": rng.permutation(spec.n_core), "out": rng.permutation(spec.n_core)}

    task = SyntheticTask(
        spec, ParallelCorpus(), ParallelCorpus(), ParallelCorpus(), ParallelCorpus(),
        ParallelCorpus(), ParallelCorpus(), lexicon, senses,
    )

    def sentence(tag):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        words = []
        for _ in range(n):
            if rng.random() < spec.domain_token_rate:
                words.append(dom_words[tag][int(rng.integers(spec.n_domain))])
            else:
                words.append(core[int(ranking[tag][rng.choice(spec.n_core, p=weights)])])
        if not any(w in dom_words[tag] for w in words):
            words[int(rng.integers(n))] = dom_words[tag][int(rng.integers(spec.n_domain))]
        return words

    seen: set = set()
    plan = [
        ("in", task.dev_in, spec.n_dev),
        ("in", task.test_in, spec.n_test),
        ("out", task.dev_out, spec.n_dev),
        ("out", task.test_out, spec.n_test),
        ("in", task.train_in, spec.n_in),
        ("out", task.train_out, spec.n_out),
    ]
    for tag, corpus, n in plan:
        dom = DomainLabel.parse(tag)
        unique = corpus is not task.train_in and corpus is not task.train_out
        while len(corpus) < n:
            src = sentence(tag)
            key = " ".join(src)
            if key in seen:
                continue
            if unique:
                seen.add(key)
            corpus.examples.append(ParallelExample(src, task.translate(src, dom), dom))
    return task


def spec_to_dict(spec: SyntheticTaskSpec) -> dict:
    return asdict(spec)


def write_synthetic(task: SyntheticTask, out_dir):
    """Write ``{in,out}.{train,dev,test}.{src,tgt}`` files under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, corpus in (
        ("in.train", task.train_in),
        ("out.train", task.train_out),
        ("in.dev", task.dev_in),
        ("in.test", task.test_in),
        ("out.dev", task.dev_out),
        ("out.test", task.test_out),
    ):
        write_parallel(corpus, out / f"{name}.src", out / f"{name}.tgt")
