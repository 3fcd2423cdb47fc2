"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` (the verdict lines are
repeated in the terminal summary either way) or ``python tests/test_acceptance.py``.
Criteria 6 and 7 share one ablation run on the default synthetic task, which
takes around a quarter of an hour on one CPU core.
"""

import sys
import time
import traceback

import numpy as np
import pytest

import test_autodiff as TA
import test_evaluation as TE
import test_inference as TI
import test_layers as TL
import test_model as TM
import test_training as TT
from dbnmt import autodiff as ad
from dbnmt.autodiff import Graph, check_gradients
from dbnmt.data import SyntheticTaskSpec, build_vocab, encode_pairs, generate_synthetic
from dbnmt.evaluation import run_ablation, summarize_ablation
from dbnmt.model import ModelConfig
from dbnmt.training import Corpora, TrainConfig

from helpers import random_examples, random_params, tiny_config, tiny_task

FD_TOL = 1e-4
# settings for the synthetic-task runs; the reasons are in the decisions ledger
ABLATION_TRAIN = dict(phase1_patience=5, max_epochs=8, clip_norm=1e4)
ABLATION_SEEDS = (0, 1, 2)
ABLATION_BUDGET_S = 20 * 60
MARGIN = 1.0


def run_checks(checks):
    """Run named zero-argument callables; returns (all passed, failure summary)."""
    failed = []
    for name, fn in checks:
        try:
            fn()
        except Exception as e:  # noqa: BLE001 - every failure is reported, not just assertions
            failed.append(f"{name}: {type(e).__name__}: {str(e)[:200]}")
            traceback.print_exc()
    return not failed, "; ".join(failed)


@pytest.fixture(scope="module")
def small_task():
    return tiny_task()


# -- 1


def _highway_fd():
    rng = np.random.default_rng(5)
    g = Graph(np.float64)
    x = g.input(rng.standard_normal((3, 6)))
    W = [g.input(rng.standard_normal(s)) for s in ((6, 6), (6,), (6, 6), (6,))]
    return check_gradients(g, TL.projected(ad.tanh(TL.L.highway(x, *W)), rng))


def _full_model_fd(seed):
    # every dimension at most 8, sequences at most 5 tokens
    p = random_params(tiny_config(src_vocab=8, tgt_vocab=8), seed=seed, scale=1.0)
    ex = random_examples(np.random.default_rng(seed), p.config, 3, max_len=4)
    g, _, _, loss = TM.full_graph(p, ex, lam=1.5, grl_scale=0.7)
    return check_gradients(g, loss, eps=1e-3, max_entries=6, stencil=4)


def test_criterion_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    errors = {}

    def primitives():
        for name, build in TA.PRIMITIVES.items():
            for seed in range(3):
                errors[f"{name}/{seed}"] = TA._fd(build, seed).max_error

    def highway():
        errors["highway"] = _highway_fd().max_error

    def full(seed):
        def run():
            rep = _full_model_fd(seed)
            assert rep.reversal_checks and all(rep.reversal_checks.values()), rep.reversal_checks
            errors[f"model/{seed}"] = rep.max_error

        return run

    checks = [("primitives", primitives), ("highway", highway)]
    checks += [(fn.__name__, fn) for fn in (
        TL.test_gru_gradients_match_fd, TL.test_encoder_gradients_match_fd, TL.test_attention_gradients_match_fd,
        TL.test_decoder_step_gradients_match_fd, TL.test_gate_gradients_match_fd, TL.test_discriminator_gradients_match_fd,
    )]
    checks += [(f"full_model_seed{s}", full(s)) for s in (0, 1)]
    ok, detail = run_checks(checks)
    worst = max(errors.values()) if errors else float("nan")
    elapsed = time.perf_counter() - t0
    ok = ok and worst < FD_TOL and elapsed < 60
    verdict(1, ok, f"max rel err {worst:.2e} over {len(errors)} checks, {elapsed:.1f}s {detail}".rstrip())
    assert ok


# -- 2


def test_criterion_2_grl_contract(verdict):
    checks = [
        ("forward_bit_identical", TA.test_grad_reverse_forward_is_bit_identical),
        ("negates_upstream", TA.test_grad_reverse_negates_upstream),
        ("exact_minus_scale", TA.test_grad_reverse_is_exact_minus_scale),
        ("fd_contract_check", TA.test_check_gradients_contract_checks_grl),
    ]
    for lam, scale in ((1.5, 1.0), (0.5, 0.25), (2.0, 3.0)):
        checks.append((f"partition_lam{lam}_scale{scale}", lambda lam=lam, scale=scale: TM.test_gradient_partition(lam, scale)))
    ok, detail = run_checks(checks)
    verdict(2, ok, detail or f"{len(checks)} checks")
    assert ok


# -- 3


def test_criterion_3_beam_oracle(verdict):
    t0 = time.perf_counter()
    ok, detail = run_checks([("exhaustive_beam", TI.test_exhaustive_beam_equals_brute_force)])
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 30
    verdict(3, ok, f"50 models, {elapsed:.1f}s {detail}".rstrip())
    assert ok


# -- 4


def test_criterion_4_bleu(verdict):
    checks = [
        ("identity_disjoint", TE.test_identity_and_disjoint),
        ("word4_hand_case", TE.test_word_hand_case),
        ("char5_hand_case", TE.test_char_hand_case),
    ]
    ok, detail = run_checks(checks)
    verdict(4, ok, detail or f"word {TE.WORD_EXPECTED:.4f}, char {TE.CHAR_EXPECTED:.4f}")
    assert ok


# -- 5


def test_criterion_5_phase_protocol(verdict, small_task):
    checks = [
        ("phase_isolation", lambda: TT.test_phase_isolation(small_task)),
        ("threshold_exit", lambda: TT.test_phase_two_exits_at_threshold(small_task)),
        ("sampler_ratio_1e4_batches", TT.test_sampler_ratio_over_many_batches),
    ]
    ok, detail = run_checks(checks)
    verdict(5, ok, detail or "shared encoder frozen, exit at >= 0.9, ratio within 0.01")
    assert ok


# -- 6 and 7


@pytest.fixture(scope="module")
def ablation():
    task = generate_synthetic(SyntheticTaskSpec())
    sv = build_vocab(task.train_in.sources() + task.train_out.sources(), 25000)
    tv = build_vocab(task.train_in.targets() + task.train_out.targets(), 25000)

    def enc(c):
        return encode_pairs(c, sv, tv)

    corpora = Corpora(enc(task.train_in), enc(task.train_out), enc(task.dev_in), enc(task.dev_out))
    t0 = time.perf_counter()
    rows = run_ablation(ModelConfig(len(sv), len(tv)), TrainConfig(**ABLATION_TRAIN), corpora, enc(task.test_in),
                        seeds=ABLATION_SEEDS, beam_size=1,
                        on_row=lambda r: print(f"{time.perf_counter() - t0:7.1f}s {r.to_dict()}", flush=True))
    return rows, time.perf_counter() - t0


def test_criterion_6_directional_reproduction(verdict, ablation):
    rows, elapsed = ablation
    test_bleu = {name: float(np.mean([r.test for r in rows if r.variant == name]))
                 for name in ("full", "no_private", "no_discriminator", "neither", "in_only")}
    full = test_bleu["full"]
    gaps = {name: full - v for name, v in test_bleu.items() if name != "full"}
    ok = all(g >= MARGIN for g in gaps.values()) and elapsed <= ABLATION_BUDGET_S
    summary = summarize_ablation(rows)
    print({k: {m: round(v, 3) for m, v in s.items() if isinstance(v, float)} for k, s in summary.items()})
    detail = f"full {full:.2f}; " + ", ".join(f"{n} {test_bleu[n]:.2f} (gap {g:+.2f})" for n, g in gaps.items())
    verdict(6, ok, f"{detail}; {elapsed:.0f}s")
    assert ok


def test_criterion_7_separation(verdict, ablation):
    rows, _ = ablation
    by = {(r.variant, r.seed): r for r in rows}
    checks = []
    for s in ABLATION_SEEDS:
        full, nod = by[("full", s)], by[("no_discriminator", s)]
        checks.append((s, full.distance < nod.distance, full.final_disc_accuracy < full.phase2_peak,
                       f"seed {s}: dist {full.distance:.3f} vs {nod.distance:.3f}, "
                       f"disc acc {full.final_disc_accuracy:.3f} vs peak {full.phase2_peak:.3f}"))
    ok = all(a and b for _, a, b, _ in checks)
    verdict(7, ok, "; ".join(d for *_, d in checks))
    assert ok


# -- 8


def test_criterion_8_determinism_and_persistence(verdict, small_task, tmp_path):
    checks = [
        ("bit_reproducible_run", lambda: TT.test_full_run_is_bit_reproducible(small_task)),
        ("checkpoint_round_trip", lambda: TT.test_checkpoint_round_trip_is_bit_exact(tmp_path)),
    ]
    checks += [(f"resume_phase{ph}", lambda ph=ph: TT.test_resume_matches_uninterrupted_run(small_task, ph)) for ph in (1, 2, 3)]
    ok, detail = run_checks(checks)
    verdict(8, ok, detail or "reproducible, round trip exact, resume within 1e-6 in all phases")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
