"""Benchmark the numba kernel against the pure-numpy fallback.

Two workloads dominated by the RK4 tape loop:

* a single long simulation of the population-growth circuit (scalar
  kernel: jitted vs interpreted);
* a 100-iteration tolerance sweep (jitted per-iteration loop vs the
  vectorized numpy batch kernel).

Run: python3 benchmarks/bench_backends.py
"""

import time

import memsolve.backend as backend
from memsolve.compiler import VolterraPopulation, compile_volterra_population
from memsolve.exprs import parse_expr
from memsolve.netlist import lower
from memsolve.solver import SimConfig, simulate
from memsolve.tolerance import ToleranceConfig, stability_run


def population_netlist():
    return compile_volterra_population(
        VolterraPopulation(
            a=2.0, b=0.001,
            k1=parse_expr("exp(-t)", {"t"}),
            k2=parse_expr("exp(s)*s/(1+s)", {"s"}),
            n0=1.0,
        )
    )


def timed(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    net = population_netlist()
    sys = lower(net)
    sim = SimConfig(dt=1e-3, t_end=4.0)
    tol = ToleranceConfig(iterations=100)
    backends = backend.available_backends()

    if backend.HAVE_NUMBA:
        simulate(sys, SimConfig(dt=1e-3, t_end=0.01), backend="numba")  # JIT warm-up

    print(f"backends available: {', '.join(backends)}")
    print(f"{'workload':<38} " + " ".join(f"{b:>12}" for b in backends) + f" {'speedup':>9}")

    rows = [
        ("single run, 4000 steps", lambda b: simulate(sys, sim, backend=b)),
        ("stability sweep, 100 iterations", lambda b: stability_run(net, tol, sim, backend=b)),
    ]
    for label, work in rows:
        times = {b: timed(lambda: work(b)) for b in backends}
        cells = " ".join(f"{times[b] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            speedup = times["numpy"] / times["numba"]
            print(f"{label:<38} {cells} {speedup:>8.1f}x")
        else:
            print(f"{label:<38} {cells}")


if __name__ == "__main__":
    main()
