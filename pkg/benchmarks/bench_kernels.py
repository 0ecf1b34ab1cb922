"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time per call for both backends and the
speedup. A training-step row times one full forward/backward/AdamW pass of
a 512-wide network, which is what distillation spends its time on.
"""

import argparse
import timeit

import numpy as np

from phased_dmd import kernels
from phased_dmd.toynet import AdamState, TimeConditionedNet, adam_step


def cases(rng):
    z64 = rng.standard_normal((256, 512))
    z32 = z64.astype(np.float32)
    s64 = kernels.silu_forward(z64)[1]
    up = rng.standard_normal((256, 512))
    p = rng.standard_normal(512 * 512)
    g = rng.standard_normal(512 * 512)
    m, v = np.zeros_like(p), np.zeros_like(p)
    x = rng.standard_normal((4096, 1))
    atoms = np.array([[-1.0], [0.0], [1.0], [2.0]])
    log_probs = np.log(np.full(4, 0.25))
    widths = np.zeros(4)
    t = rng.uniform(0.01, 0.99, 4096)

    net = TimeConditionedNet.create(hidden=512, depth=3, rng=0).astype(np.float32)
    opt = AdamState.for_params(net.params, lr=1e-3, betas=(0.0, 0.999))
    xb = rng.standard_normal((256, 1)).astype(np.float32)
    tb = rng.uniform(0, 1, 256)
    target = rng.standard_normal((256, 1)).astype(np.float32)

    def train_step():
        out, cache = net.forward_cached(xb, tb)
        grads, _ = net.backward(xb, tb, (out - target) / len(xb), cache)
        adam_step(opt, net.params, grads)

    return {
        "silu_forward f64 256x512": lambda: kernels.silu_forward(z64),
        "silu_forward f32 256x512": lambda: kernels.silu_forward(z32),
        "silu_backward f64 256x512": lambda: kernels.silu_backward(z64, s64, up),
        "adamw_update 262k params": lambda: kernels.adamw_update(p, g, m, v, 1e-6, 0.9, 0.999, 1e-8, 0.0, 10),
        "mixture_posterior 4096x4": lambda: kernels.mixture_posterior(x, atoms, log_probs, widths, 1 - t, t),
        "train step H=512 f32": train_step,
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    results = {}
    for backend in backends:
        kernels.use_backend(backend)
        for name, fn in cases(np.random.default_rng(0)).items():
            timer = timeit.Timer(fn)
            number, _ = timer.autorange()
            results[name, backend] = min(timer.repeat(args.repeat, number)) / number
    print(f"{'case':28s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name in cases(np.random.default_rng(0)):
        row = [results[name, b] for b in backends]
        speed = f"{results[name, 'python'] / results[name, 'compiled']:8.2f}x" if len(backends) == 2 else ""
        print(f"{name:28s} " + " ".join(f"{r * 1e6:10.1f}us" for r in row) + "  " + speed)


if __name__ == "__main__":
    main()
