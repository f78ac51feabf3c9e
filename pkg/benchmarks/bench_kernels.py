"""Benchmark the compiled kernel lane against the NumPy fallback.

Runs each hot kernel on training-realistic shapes, then times one full
alignment training step end-to-end under each lane. Usage:

    python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import importlib
import time

import numpy as np

import pivotgen.kernels as kernels
from pivotgen.kernels import _py

try:
    from pivotgen.kernels import _ext
except ImportError:
    _ext = None

RNG = np.random.default_rng(7)


def _time(fn, *args, repeats: int) -> float:
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases() -> list[tuple[str, str, tuple]]:
    # (kernel name, shape label, args)
    b, heads, t, d, v, f = 64, 4, 8, 64, 163, 256
    att = RNG.normal(size=(b * heads * t, t)).astype(np.float32)
    att_y = _py.softmax_fwd(att)
    big = RNG.normal(size=(b * t, d)).astype(np.float32)
    gain = np.ones(d, dtype=np.float32)
    bias = np.zeros(d, dtype=np.float32)
    _, xhat, inv = _py.layernorm_fwd(big, gain, bias, 1e-5)
    logits = RNG.normal(size=(b * t, v)).astype(np.float32)
    targets = RNG.integers(0, v, size=b * t)
    _, probs = _py.cross_entropy_fwd(logits, targets)
    gloss = np.ones(b * t, dtype=np.float32)
    ffn = RNG.normal(size=(b * t * f,)).astype(np.float32)
    return [
        ("softmax_fwd", f"({b * heads * t}, {t})", (att,)),
        ("softmax_bwd", f"({b * heads * t}, {t})", (att_y, att)),
        ("layernorm_fwd", f"({b * t}, {d})", (big, gain, bias, 1e-5)),
        ("layernorm_bwd", f"({b * t}, {d})", (xhat, inv, gain, big)),
        ("cross_entropy_fwd", f"({b * t}, {v})", (logits, targets)),
        ("cross_entropy_bwd", f"({b * t}, {v})", (probs, targets, gloss)),
        ("gelu_fwd", f"({b * t * f},)", (ffn,)),
        ("gelu_bwd", f"({b * t * f},)", (ffn, ffn)),
    ]


def bench_kernels(repeats: int) -> None:
    print(f"{'kernel':<20} {'shape':<16} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, label, args in kernel_cases():
        t_py = _time(getattr(_py, name), *args, repeats=repeats)
        if _ext is None:
            print(f"{name:<20} {label:<16} {t_py * 1e6:>8.1f}us {'-':>10} {'-':>8}")
            continue
        t_ext = _time(getattr(_ext, name), *args, repeats=repeats)
        print(f"{name:<20} {label:<16} {t_py * 1e6:>8.1f}us {t_ext * 1e6:>8.1f}us {t_py / t_ext:>7.2f}x")


def bench_train_step(repeats: int) -> None:
    """One contrastive alignment step (batch 64) under each lane."""
    from pivotgen import corpus, losses, model
    from pivotgen.optim import AdamW

    params_spec = corpus.CorpusParams(scenes=200, test=24)
    corp = corpus.build_corpus(params_spec)
    mcfg = model.ModelConfig()
    d1 = corp.pairsets["D1"]
    frames = np.stack([i.frames for i in d1.a_items[:44]])
    weights = losses.LossWeights(1.0, 0.0, 0.07)

    lanes = [("numpy", _py)] + ([("compiled", _ext)] if _ext is not None else [])
    print(f"\n{'train step (B=44)':<36} {'time':>10}")
    for label, impl in lanes:
        for fn in ("softmax_fwd", "softmax_bwd", "cross_entropy_fwd", "cross_entropy_bwd",
                   "layernorm_fwd", "layernorm_bwd", "gelu_fwd", "gelu_bwd", "adamw_update"):
            setattr(kernels, fn, getattr(impl, fn))
        p = model.init_parameters(mcfg, 0)
        opt = AdamW(p)

        def step() -> None:
            s = model.encode_pivot_batch(p, mcfg, d1.b_items[:44])
            v = model.encode_vision_batch(p, mcfg, frames)
            loss = losses.cda_loss(losses.AlignmentBatch(s, v), weights)
            p.zero_grad()
            loss.backward()
            opt.step()

        print(f"  {label:<34} {_time(step, repeats=repeats) * 1e3:>8.1f}ms")
    importlib.reload(kernels)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    active = "compiled extension" if _ext is not None else "numpy only (extension not built)"
    print(f"lanes available: {active}\n")
    bench_kernels(args.repeats)
    bench_train_step(max(3, args.repeats // 5))


if __name__ == "__main__":
    main()
