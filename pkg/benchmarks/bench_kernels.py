"""Compiled kernels vs. the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each case is timed on both backends (best of ``--repeat`` runs) and the
outputs are compared bit for bit.
"""
import argparse
import json
import time

import numpy as np

from slamp import numerics
from slamp.data import gen_static_classes
from slamp.dynamics import NeuronConfig, build_network
from slamp.training import OptimConfig, SurrogateConfig, train_epochs


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def matmul_case(m, k, n, density):
    rng = numerics.make_rng(0)
    a = numerics.rng_bernoulli(rng, density, (m, k))
    b = numerics.rng_uniform(rng, (k, n), -1, 1)
    return f"matmul {m}x{k}x{n} (input density {density})", lambda be: numerics.matmul(a, b, backend=be)


def conv_case():
    rng = numerics.make_rng(1)
    x = numerics.rng_bernoulli(rng, 0.3, (64, 8, 16, 16))
    w = numerics.rng_uniform(rng, (16, 8, 3, 3), -1, 1)
    return "conv2d 64x8x16x16 * 16x8x3x3", lambda be: numerics.conv2d(x, w, 1, 1, backend=be)


def vertex_case(n):
    d = numerics.make_rng(2).normal(size=(n, 10))
    return f"vertex enumeration 2^{n} x 10", lambda be: numerics.vertex_sq_norms(d, backend=be)


def training_case():
    cfg = NeuronConfig(timesteps=2)
    data = gen_static_classes(numerics.make_rng(3), 10, 64, 40, 0.3)

    def run(be):
        net = build_network([{"kind": "dense", "units": 64}, {"kind": "dense", "units": 32}], (64,), 10,
                            numerics.make_rng(4))
        with numerics.use_backend(be):
            train_epochs(net, data, OptimConfig(epochs=3), SurrogateConfig(), numerics.make_rng(5), cfg)
        return np.concatenate([w.ravel() for w in net.weights()])

    return "train 3 epochs, 64-64-32-10, T=2", run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args(argv)

    backends = numerics.available_backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the fallback can be timed")
    cases = [
        matmul_case(256, 256, 256, 1.0),
        matmul_case(256, 256, 256, 0.1),
        matmul_case(512, 64, 64, 0.2),
        conv_case(),
        vertex_case(12),
        vertex_case(14),
        training_case(),
    ]
    rows = []
    header = f"{'case':44s} " + " ".join(f"{b:>12s}" for b in backends) + f" {'speedup':>8s} {'identical':>9s}"
    print(header)
    print("-" * len(header))
    for name, fn in cases:
        times, outs = {}, {}
        for be in backends:
            times[be], outs[be] = best_of(lambda: fn(be), args.repeat)
        same = all(np.array_equal(outs[be], outs[backends[0]]) for be in backends)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:44s} " + " ".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
              + f" {speed:8.2f} {str(same):>9s}")
        rows.append({"case": name, "seconds": times, "speedup": speed, "identical": same})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
