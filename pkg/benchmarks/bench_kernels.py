"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from unsupdepth import kernels
from unsupdepth.encoder import NetworkConfig, build_network
from unsupdepth.geometry import total_loss
from unsupdepth.tensor import Tape, Tensor, backward


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x = rng.standard_normal((4, 32, 32, 96))
    img = rng.standard_normal((4, 3, 64, 192))
    disp = rng.uniform(0, 12, (4, 64, 192))
    grad = rng.standard_normal(img.shape)
    d = np.zeros((64, 192))
    a = rng.uniform(0, 1, (64, 192))
    num = a * rng.uniform(0, 4, (64, 192))

    def mod_cases(mod):
        cols = mod.im2col(x, 3, 3, 1, 1)
        pooled, arg = mod.maxpool_forward(x, 3, 3, 2, 2)
        return {
            "im2col 4x32x32x96 k3": lambda: mod.im2col(x, 3, 3, 1, 1),
            "col2im 4x32x32x96 k3": lambda: mod.col2im(cols, 32, 32, 96, 3, 3, 1, 1),
            "maxpool fwd k3 s2": lambda: mod.maxpool_forward(x, 3, 3, 2, 2),
            "maxpool bwd k3 s2": lambda: mod.maxpool_backward(pooled, arg, 32, 96),
            "warp fwd 4x3x64x192": lambda: mod.warp_forward(img, disp),
            "warp bwd 4x3x64x192": lambda: mod.warp_backward(img, disp, grad),
            "hs red-black 64x192 x100": lambda: mod.hs_redblack(d.copy(), num, a, 0.01, 100, 0.0),
        }

    return mod_cases


def train_step(rng):
    net = build_network(NetworkConfig.desk(), seed=0, stages=2)
    image = Tensor(rng.uniform(-0.5, 0.5, (4, 3, 64, 192)).astype(np.float32))
    left = Tensor(rng.uniform(-0.5, 0.5, (4, 3, 16, 48)).astype(np.float32))
    right = Tensor(rng.uniform(-0.5, 0.5, (4, 3, 16, 48)).astype(np.float32))

    def step():
        net.zero_grad()
        with Tape() as tape:
            loss = total_loss(left, right, net.forward(image)).total
        backward(tape, loss)

    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy fallback only")
    mod_cases = cases(rng)
    results = {b: {k: best_of(fn, args.repeat) for k, fn in mod_cases(kernels.backend_module(b)).items()}
               for b in backends}
    step = train_step(rng)
    prev = kernels.BACKEND
    for b in backends:
        kernels.use_backend(b)
        step()  # warm-up
        results[b]["desk train step (batch 4)"] = best_of(step, args.repeat)
    kernels.use_backend(prev)

    print(f"{'case':<30}" + "".join(f"{b + ' ms':>14}" for b in backends) + ("   speed-up" if len(backends) > 1 else ""))
    for case in results["python"]:
        row = f"{case:<30}" + "".join(f"{results[b][case] * 1e3:>14.2f}" for b in backends)
        if len(backends) > 1:
            row += f"{results['python'][case] / results['compiled'][case]:>10.1f}x"
        print(row)


if __name__ == "__main__":
    main()
