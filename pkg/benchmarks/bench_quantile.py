"""Benchmark the quantile kernels: compiled extension vs pure numpy.

Times the fused value+gradient evaluation across bag sizes, and one full
training step at a typical bag size with either kernel implementation
driving it.

Run:  python benchmarks/bench_quantile.py
"""

import time

import numpy as np

from promil import _backend
from promil.bagdata import SyntheticSpec, generate_synthetic
from promil.network import NetArch
from promil.training import TrainConfig, bag_step, init_train_state
from promil import bernstein


def time_call(fn, *args, repeat=2000):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    backends = _backend.get_backends()
    rng = np.random.default_rng(0)
    print(f"{'n':>7} " + " ".join(f"{name + ' (us)':>14}" for name in backends)
          + ("  speedup" if len(backends) == 2 else ""))
    for n in (31, 301, 3001, 10001):
        values = np.sort(rng.uniform(size=n))
        repeat = max(20, 20000 // n)
        times = {
            name: time_call(impl.quantile_value_grad, values, 0.3, 1e-7, repeat=repeat)
            for name, impl in backends.items()
        }
        row = f"{n:>7} " + " ".join(f"{times[name] * 1e6:>14.2f}" for name in backends)
        if "c" in times and "python" in times:
            row += f"  {times['python'] / times['c']:>7.2f}x"
        print(row)


def bench_train_step():
    bags = generate_synthetic(SyntheticSpec(n_bags=64, threshold_qstar=0.3), seed=0)
    cfg = TrainConfig(seed=0)
    results = {}
    for name, impl in _backend.get_backends().items():
        saved = bernstein._backend
        bernstein._backend = impl
        try:
            state = init_train_state(NetArch(input_dim=2), cfg)
            for bag in bags:   # warm up
                bag_step(state, bag, cfg)
            t0 = time.perf_counter()
            rounds = 5
            for _ in range(rounds):
                for bag in bags:
                    bag_step(state, bag, cfg)
            results[name] = (time.perf_counter() - t0) / (rounds * len(bags))
        finally:
            bernstein._backend = saved
    for name, dt in results.items():
        print(f"bag_step ({name:>6}): {dt * 1e6:8.2f} us/bag")
    if "c" in results and "python" in results:
        print(f"bag_step speedup: {results['python'] / results['c']:.2f}x")


if __name__ == "__main__":
    print(f"active backend: {_backend.backend_name()}")
    print("\n-- fused quantile value+grad --")
    bench_kernels()
    print("\n-- full training step (bag size ~30, logistic net) --")
    bench_train_step()
