"""Command-line entry point: ``dbnmt <command> ...``.

Failures print a single JSON line ``{"error": kind, "messages": [...]}`` on
stderr and exit nonzero. Log verbosity comes from ``DBNMT_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import data as D
from .evaluation import (
    BleuConfig,
    ablation_jsonl,
    ablation_table,
    bleu,
    run_ablation,
    separation_report,
)
from .inference import greedy_decode, translate
from .model import DomainLabel, ModelConfig
from .training import (
    CheckpointError,
    Corpora,
    PhaseTwoError,
    TrainConfig,
    load_checkpoint,
    params_checkpoint,
    params_from_checkpoint,
    run_schedule,
    save_checkpoint,
    write_metrics,
)

log = logging.getLogger("dbnmt")

SPLITS = ("in.train", "out.train", "in.dev", "out.dev", "in.test", "out.test")


class CliError(Exception):
    """Reported as one JSON line; ``kind`` names the failure class."""

    def __init__(self, kind: str, messages):
        self.kind = kind
        self.messages = [messages] if isinstance(messages, str) else list(messages)
        super().__init__("; ".join(self.messages))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# ---------------------------------------------------------------------------
# key=value configuration


MODEL_KEYS = {"emb_dim", "hidden", "att_dim", "private_ratio", "use_private", "use_discriminator", "disc_widths", "disc_channels"}
PATH_KEYS = {"data", "out"}


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def inner(text):
        return None if text.strip().lower() in ("none", "") else conv(text)

    return inner


def _int_tuple(text):
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


_CONVERTERS = {
    "emb_dim": int, "hidden": int, "att_dim": _optional(int), "private_ratio": float,
    "use_private": _to_bool, "use_discriminator": _to_bool, "disc_widths": _int_tuple,
    "disc_channels": int, "steps_per_epoch": _optional(int), "dtype": str,
    "data": str, "out": str,
}


def _converter(key):
    if key in _CONVERTERS:
        return _CONVERTERS[key]
    ftype = {f.name: f.type for f in fields(TrainConfig)}[key]
    return {"float": float, "int": int}[str(ftype)]


def known_keys() -> set[str]:
    return TrainConfig.field_names() | MODEL_KEYS | PATH_KEYS


def parse_config_text(text: str, origin: str = "<config>") -> tuple[dict, list[str]]:
    """Parse ``key = value`` lines (``#`` comments allowed); returns values and every problem found."""
    values, errors = {}, []
    keys = known_keys()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{origin}:{n}: expected key=value")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in keys:
            errors.append(f"{origin}:{n}: unknown key {key!r}")
            continue
        try:
            values[key] = _converter(key)(val)
        except ValueError as e:
            errors.append(f"{origin}:{n}: bad value for {key}: {e}")
    return values, errors


def resolve_config(file_values: dict, overrides: dict) -> tuple[dict, list[str]]:
    """Merge defaults < file < flags and validate the result; returns (settings, problems)."""
    merged = {f.name: f.default for f in fields(TrainConfig)}
    merged.update({"emb_dim": 32, "hidden": 64, "att_dim": None, "private_ratio": 0.25, "use_private": True,
                   "use_discriminator": True, "disc_widths": (2, 3, 4), "disc_channels": 16, "data": None, "out": None})
    merged.update(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    problems = []
    train_kw = {k: merged[k] for k in TrainConfig.field_names()}
    try:
        TrainConfig(**train_kw)
    except (TypeError, ValueError) as e:
        problems.extend(str(e).split("; "))
    try:
        ModelConfig(10, 10, **{k: merged[k] for k in MODEL_KEYS})
    except (TypeError, ValueError) as e:
        problems.append(str(e))
    return merged, problems


def split_settings(settings: dict, src_vocab: int, tgt_vocab: int) -> tuple[ModelConfig, TrainConfig]:
    mcfg = ModelConfig(src_vocab, tgt_vocab, **{k: settings[k] for k in MODEL_KEYS})
    tcfg = TrainConfig(**{k: settings[k] for k in TrainConfig.field_names()})
    return mcfg, tcfg


def load_settings(args, extra: dict) -> dict:
    file_values, errors = {}, []
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError("config", f"config file not found: {path}")
        file_values, errors = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    for item in args.set or []:
        vals, errs = parse_config_text(item, "--set")
        extra.update(vals)
        errors.extend(errs)
    settings, problems = resolve_config(file_values, extra)
    errors.extend(problems)
    if errors:
        raise CliError("config", errors)
    return settings


# ---------------------------------------------------------------------------
# prepared data directory


def _require(paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise CliError("missing_input", [f"not found: {m}" for m in missing])


def _read_ids(path) -> list:
    return [[int(t) for t in line.split()] for line in D.read_lines(path)]


def _write_ids(path, rows):
    D.write_lines(path, [" ".join(str(i) for i in r) for r in rows])


class Prepared:
    """Files written by ``dbnmt prep``: vocabularies, optional BPE codes and id-encoded splits."""

    def __init__(self, root):
        self.root = Path(root)
        _require([self.root / "src.vocab", self.root / "tgt.vocab"] + [self.root / f"{s}.ids.{side}" for s in ("in.train", "in.dev") for side in ("src", "tgt")])
        self.src_vocab = D.Vocabulary.load(self.root / "src.vocab")
        self.tgt_vocab = D.Vocabulary.load(self.root / "tgt.vocab")
        self.bpe = {}
        for side in ("src", "tgt"):
            p = self.root / f"bpe.{side}"
            self.bpe[side] = D.BpeModel.load(p) if p.exists() else None

    def pairs(self, split):
        src = self.root / f"{split}.ids.src"
        tgt = self.root / f"{split}.ids.tgt"
        if not src.exists():
            return []
        return list(zip(_read_ids(src), _read_ids(tgt)))

    def corpora(self) -> Corpora:
        return Corpora(self.pairs("in.train"), self.pairs("out.train"), self.pairs("in.dev"), self.pairs("out.dev"))

    def meta(self) -> dict:
        return {
            "src_vocab": self.src_vocab.itos,
            "tgt_vocab": self.tgt_vocab.itos,
            "bpe_src": None if self.bpe["src"] is None else [list(m) for m in self.bpe["src"].merges],
            "bpe_tgt": None if self.bpe["tgt"] is None else [list(m) for m in self.bpe["tgt"].merges],
        }


class Codec:
    """Text <-> ids using the vocabularies and BPE codes stored in a checkpoint."""

    def __init__(self, meta: dict):
        if "src_vocab" not in meta:
            raise CliError("checkpoint", "checkpoint carries no vocabulary")
        self.src_vocab = D.Vocabulary(meta["src_vocab"])
        self.tgt_vocab = D.Vocabulary(meta["tgt_vocab"])
        self.bpe_src = None if meta.get("bpe_src") is None else D.BpeModel([tuple(m) for m in meta["bpe_src"]])
        self._applier = None if self.bpe_src is None else D._BpeApplier(self.bpe_src)
        self.tgt_bpe = meta.get("bpe_tgt") is not None

    def encode_src(self, text: str) -> list[int]:
        toks = text.split() if self.bpe_src is None else D.apply_bpe(self.bpe_src, text, self._applier)
        return self.src_vocab.encode(toks)

    def decode_tgt(self, ids) -> str:
        toks = self.tgt_vocab.decode(ids)
        return D.detokenize_bpe(toks) if self.tgt_bpe else " ".join(toks)


def _load_model(path):
    _require([path])
    try:
        ckpt = load_checkpoint(path)
    except CheckpointError as e:
        raise CliError("checkpoint", f"{path}: {e}") from e
    return params_from_checkpoint(ckpt), Codec(ckpt.meta)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    kw = {k: getattr(args, k) for k in ("n_core", "n_domain", "n_in", "n_out", "n_dev", "n_test", "min_len", "max_len",
                                        "n_sense", "in_rule", "out_rule", "seed") if getattr(args, k) is not None}
    try:
        spec = D.SyntheticTaskSpec(**kw)
    except ValueError as e:
        raise CliError("config", str(e)) from e
    task = D.generate_synthetic(spec)
    D.write_synthetic(task, args.out)
    Path(args.out, "spec.json").write_text(json.dumps(asdict(spec), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(json.dumps({"out": str(args.out), "in_train": len(task.train_in), "out_train": len(task.train_out)}, sort_keys=True))


def cmd_prep(args):
    src_dir, out = Path(args.data), Path(args.out)
    present = [s for s in SPLITS if (src_dir / f"{s}.src").exists()]
    _require([src_dir / f"{s}.{side}" for s in ("in.train", "in.dev") for side in ("src", "tgt")])
    out.mkdir(parents=True, exist_ok=True)
    corpora = {s: D.read_parallel(src_dir / f"{s}.src", src_dir / f"{s}.tgt", s.split(".")[0]) for s in present}
    train = [corpora[s] for s in ("in.train", "out.train") if s in corpora]
    bpe = {"src": None, "tgt": None}
    if args.bpe_merges is not None:
        for side in ("src", "tgt"):
            lines = [" ".join(getattr(e, side)) for c in train for e in c]
            bpe[side] = D.learn_bpe(lines, args.bpe_merges)
            bpe[side].save(out / f"bpe.{side}")
        appliers = {side: D._BpeApplier(bpe[side]) for side in bpe}
        for name, c in corpora.items():
            corpora[name] = D.ParallelCorpus([
                D.ParallelExample(
                    D.apply_bpe(bpe["src"], " ".join(e.src), appliers["src"]),
                    D.apply_bpe(bpe["tgt"], " ".join(e.tgt), appliers["tgt"]),
                    e.domain,
                )
                for e in c
            ])
    dropped = {}
    for name in ("in.train", "out.train"):
        if name in corpora:
            corpora[name], dropped[name] = D.filter_by_length(corpora[name], args.max_len)
    train = [corpora[s] for s in ("in.train", "out.train") if s in corpora]
    src_vocab = D.build_vocab([e.src for c in train for e in c], args.vocab_cap)
    tgt_vocab = D.build_vocab([e.tgt for c in train for e in c], args.vocab_cap)
    src_vocab.save(out / "src.vocab")
    tgt_vocab.save(out / "tgt.vocab")
    for name, c in corpora.items():
        pairs = D.encode_pairs(c, src_vocab, tgt_vocab)
        _write_ids(out / f"{name}.ids.src", [s for s, _ in pairs])
        _write_ids(out / f"{name}.ids.tgt", [t for _, t in pairs])
    summary = {"dropped": dropped, "src_vocab": len(src_vocab), "tgt_vocab": len(tgt_vocab),
               "sizes": {k: len(v) for k, v in corpora.items()}}
    (out / "prep.json").write_text(json.dumps(summary, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))


def _train_overrides(args) -> dict:
    extra = {"seed": args.seed, "lam": args.lam, "grl_scale": args.grl_scale, "data": args.data, "out": args.out}
    if args.no_discriminator:
        extra["use_discriminator"] = False
    if args.no_private:
        extra["use_private"] = False
    return extra


def _check_paths(settings):
    errors = [f"missing setting: {k}" for k in ("data", "out") if not settings.get(k)]
    if errors:
        raise CliError("config", errors)
    return Prepared(settings["data"]), Path(settings["out"])


def cmd_train(args):
    settings = load_settings(args, _train_overrides(args))
    prep, out = _check_paths(settings)
    out.mkdir(parents=True, exist_ok=True)
    mcfg, tcfg = split_settings(settings, len(prep.src_vocab), len(prep.tgt_vocab))
    try:
        params, metrics, trainer = run_schedule(mcfg, tcfg, prep.corpora())
    except PhaseTwoError as e:
        raise CliError("phase_two", str(e)) from e
    write_metrics(out / "metrics.jsonl", metrics)
    ckpt = trainer.checkpoint()
    ckpt.meta.update(prep.meta())
    save_checkpoint(out / "trainer.ckpt", ckpt)
    save_checkpoint(out / "model.ckpt", params_checkpoint(params, prep.meta()))
    print(json.dumps({"model": str(out / "model.ckpt"), "best_dev_bleu": trainer.best_bleu, "steps": trainer.global_step}))


def cmd_translate(args):
    params, codec = _load_model(args.checkpoint)
    _require([args.input])
    lines = D.read_lines(args.input)
    if args.beam < 1 or args.max_len < 1:
        raise CliError("usage", "--beam and --max-len must be >= 1")
    domain = DomainLabel.parse(args.domain)
    outputs = []
    for line in lines:
        ids = codec.encode_src(line)
        if not ids:
            outputs.append("")
            continue
        if args.greedy:
            hyp = greedy_decode(params, ids, args.max_len, domain)
        else:
            hyp, _ = translate(params, ids, args.beam, args.max_len, normalize=not args.no_normalize, domain=domain)
        outputs.append(codec.decode_tgt(hyp))
    if args.output:
        D.write_lines(args.output, outputs)
    else:
        sys.stdout.write("".join(o + "\n" for o in outputs))


def cmd_evaluate(args):
    _require([args.hyp, args.ref])
    max_n = args.max_n if args.max_n is not None else (5 if args.unit == "char" else 4)
    hyps, refs = D.read_lines(args.hyp), D.read_lines(args.ref)
    try:
        score = bleu(hyps, refs, BleuConfig(args.unit, max_n))
    except ValueError as e:
        raise CliError("evaluate", str(e)) from e
    print(f"BLEU = {score:.4f}")


def cmd_diagnose(args):
    params, codec = _load_model(args.checkpoint)
    _require([args.in_sample, args.out_sample])
    sample = []
    for path in (args.in_sample, args.out_sample):
        rows = [codec.encode_src(line) for line in D.read_lines(path)]
        rows = [r for r in rows if r][: args.limit]
        sample.append(rows)
    try:
        rep = separation_report(params, sample[0], sample[1])
    except ValueError as e:
        raise CliError("diagnose", str(e)) from e
    print(json.dumps({"distance": rep.distance, "disc_accuracy": rep.disc_accuracy}, sort_keys=True))


def cmd_ablate(args):
    settings = load_settings(args, {"data": args.data, "out": args.out})
    prep, out = _check_paths(settings)
    out.mkdir(parents=True, exist_ok=True)
    mcfg, tcfg = split_settings(settings, len(prep.src_vocab), len(prep.tgt_vocab))
    seeds = [int(s) for s in args.seeds.split(",")]
    test_in = prep.pairs("in.test")
    if not test_in:
        raise CliError("missing_input", f"not found: {prep.root / 'in.test.ids.src'}")
    try:
        rows = run_ablation(mcfg, tcfg, prep.corpora(), test_in, seeds=seeds, include_in_only=not args.no_in_only,
                            beam_size=args.beam)
    except PhaseTwoError as e:
        raise CliError("phase_two", str(e)) from e
    (out / "ablation.jsonl").write_text(ablation_jsonl(rows), encoding="utf-8")
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dbnmt", description="Shared/private adversarial domain-adaptation NMT.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic two-domain corpus")
    s.add_argument("--out", required=True)
    for name in ("n_core", "n_domain", "n_in", "n_out", "n_dev", "n_test", "min_len", "max_len", "n_sense", "seed"):
        s.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    s.add_argument("--in-rule", choices=("sense", "swap", "plain"))
    s.add_argument("--out-rule", choices=("sense", "swap", "plain"))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prep", help="BPE, length filter, vocabularies and id-encoded splits")
    s.add_argument("--data", required=True, help="directory with {in,out}.{train,dev,test}.{src,tgt}")
    s.add_argument("--out", required=True)
    s.add_argument("--bpe-merges", type=int, default=None, help="learn BPE with this many merges (default: none)")
    s.add_argument("--max-len", type=int, default=50)
    s.add_argument("--vocab-cap", type=int, default=25000)
    s.set_defaults(func=cmd_prep)

    def add_config_flags(s):
        s.add_argument("--config", help="key=value settings file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
        s.add_argument("--data", help="prepared data directory")
        s.add_argument("--out", help="output directory")

    s = sub.add_parser("train", help="run the three-phase schedule")
    add_config_flags(s)
    s.add_argument("--no-discriminator", action="store_true")
    s.add_argument("--no-private", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--grl-scale", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="beam-search translation of a text file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output")
    s.add_argument("--beam", type=int, default=10)
    s.add_argument("--max-len", type=int, default=100)
    s.add_argument("--greedy", action="store_true")
    s.add_argument("--no-normalize", action="store_true", help="rank finished hypotheses by raw log-probability")
    s.add_argument("--domain", default="in", choices=("in", "out"))
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--unit", choices=("word", "char"), default="word")
    s.add_argument("--max-n", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("diagnose", help="shared-encoder separation report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in-sample", required=True)
    s.add_argument("--out-sample", required=True)
    s.add_argument("--limit", type=int, default=500)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("ablate", help="train all ablation variants and report BLEU")
    add_config_flags(s)
    s.add_argument("--seeds", default="0")
    s.add_argument("--beam", type=int, default=10)
    s.add_argument("--no-in-only", action="store_true")
    s.set_defaults(func=cmd_ablate)
    return p


def _setup_logging():
    level = os.environ.get("DBNMT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CliError as e:
        sys.stderr.write(json.dumps({"error": e.kind, "messages": e.messages}) + "\n")
        return 2 if e.kind in ("usage", "config") else 1
    except (OSError, ValueError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "messages": [str(e)]}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
