"""Compare the compiled kernels with the numpy fallback.

Times each kernel on typical shapes for both backends, then one full
training step per backend in a subprocess (the backend is picked at import,
so the step benchmark has to start a fresh interpreter).

    python benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dbnmt import _kernels_py

try:
    from dbnmt import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def kernel_cases(dtype, B=32, H=64, T=12, C=16):
    rng = np.random.default_rng(0)
    r = lambda *s: rng.standard_normal(s).astype(dtype)  # noqa: E731
    gx, ghzr, h, ghn = r(B, 3 * H), r(B, 2 * H), r(B, H) * 0.5, r(B, H)
    z, rr, n = r(B, H), r(B, H), r(B, H)
    mask = np.ones(B, dtype=dtype)
    g = r(B, H)
    da = np.zeros((B, 3 * H), dtype=dtype)
    x3 = r(B, T, C)
    valid = np.full(B, T, dtype=np.int64)
    _, argmax = _kernels_py.max_over_time(x3, valid)
    return {
        "gru_gates": lambda k: k.gru_gates(gx, ghzr, h),
        "gru_output": lambda k: k.gru_output(gx, ghn, h, z, mask),
        "gru_backward_a": lambda k: k.gru_backward_a(g, mask, h, z, n),
        "gru_backward_b": lambda k: k.gru_backward_b(g, h, rr, da, g.copy()),
        "log_softmax_rows": lambda k: k.log_softmax_rows(r(B * T, 300)),
        "max_over_time": lambda k: k.max_over_time(x3, valid),
        "max_over_time_backward": lambda k: k.max_over_time_backward(r(B, C), argmax, T),
    }


STEP_SNIPPET = """
import json, time, numpy as np
from dbnmt import kernels
from dbnmt.model import ModelConfig
from dbnmt.training import Corpora, TrainConfig, Trainer
rng = np.random.default_rng(0)
pairs = lambda n: [(list(rng.integers(4, 200, rng.integers(4, 13))), list(rng.integers(4, 200, rng.integers(4, 13))) + [3]) for _ in range(n)]
corp = Corpora(pairs(256), pairs(256), pairs(16))
tr = Trainer(ModelConfig(200, 200, use_discriminator=False), TrainConfig(steps_per_epoch=10**6), corp)
tr.run(3)
t = time.perf_counter(); tr.run({steps}); dt = (time.perf_counter() - t) / {steps}
print(json.dumps({{"backend": kernels.BACKEND, "ms_per_step": 1000 * dt}}))
"""


def step_time(pure: bool, steps: int) -> dict:
    env = dict(os.environ, DBNMT_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=steps)], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':<24}{'dtype':>8}{'python us':>12}{'cython us':>12}{'speedup':>9}")
    for dtype in (np.float32, np.float64):
        for name, fn in kernel_cases(dtype).items():
            py = min(timeit.repeat(lambda: fn(_kernels_py), number=args.repeat, repeat=3)) / args.repeat * 1e6
            if _ckernels is None:
                print(f"{name:<24}{np.dtype(dtype).name:>8}{py:>12.1f}{'-':>12}{'-':>9}")
                continue
            cy = min(timeit.repeat(lambda: fn(_ckernels), number=args.repeat, repeat=3)) / args.repeat * 1e6
            print(f"{name:<24}{np.dtype(dtype).name:>8}{py:>12.1f}{cy:>12.1f}{py / cy:>8.2f}x")
    print()
    for pure in (True, False):
        if not pure and _ckernels is None:
            break
        res = step_time(pure, args.steps)
        print(f"training step ({res['backend']}): {res['ms_per_step']:.1f} ms")


if __name__ == "__main__":
    main()
