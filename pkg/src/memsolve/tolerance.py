"""Monte Carlo stability analysis with imperfect analog components.

Every numeric coefficient of the netlist (adder gains, capacitances,
input resistances, potentiometer ratios, initial conditions and the
literals inside memductance/state/source expressions) is treated as a
component value with a manufacturing tolerance: each iteration draws an
independent multiplicative error per coefficient, fixed for the whole
run (imperfect components, not dynamical noise).  The output transform
is readout arithmetic, not hardware, and is left untouched.

Draws come from a per-iteration generator seeded from
(master_seed, iteration_index), so iterations are reproducible and
order-independent: sequential, threaded and batched execution produce
the same report.  A draw that would violate an element invariant
(a potentiometer ratio reaching 1) is redrawn and the redraws counted.

The reference curve is the unperturbed netlist's own simulation, so the
report isolates the effect of component error from discretization
error.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import engine
from .backend import resolve_backend, thread_count
from .elements import (
    Adder,
    FunctionGenerator,
    Integrator,
    MemIntegrator,
    Multiplier,
    Potentiometer,
)
from .exprs import Expr, eval_expr_array_clamped, map_constants
from .netlist import Netlist, lower
from .solver import BLOWUP_LIMIT, REL_ERR_EPS, SimConfig, SimulationError, simulate

__all__ = ["ToleranceConfig", "StabilityReport", "perturb", "stability_run",
           "DEFAULT_MASTER_SEED", "TARGET_CLASSES"]

DEFAULT_MASTER_SEED = 12345

TARGET_CLASSES = frozenset(
    {"gains", "capacitance", "resistance", "alpha", "initial_conditions", "expression_literals"}
)

_MAX_REDRAWS = 1000


@dataclass
class ToleranceConfig:
    max_relative_error: float = 0.10
    iterations: int = 100
    master_seed: int = DEFAULT_MASTER_SEED
    distribution: str = "uniform"          # "uniform" | "truncated_gaussian"
    perturb_targets: frozenset[str] = TARGET_CLASSES

    def __post_init__(self):
        if not (0.0 <= self.max_relative_error < 1.0):
            raise ValueError(
                f"max_relative_error must lie in [0, 1), got {self.max_relative_error}"
            )
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.master_seed < 0:
            raise ValueError("master_seed must be a non-negative 64-bit integer")
        if self.distribution not in ("uniform", "truncated_gaussian"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        self.perturb_targets = frozenset(self.perturb_targets)
        unknown = self.perturb_targets - TARGET_CLASSES
        if unknown:
            raise ValueError(f"unknown perturb targets {sorted(unknown)}")


class _Draws:
    def __init__(self, cfg: ToleranceConfig, iteration_index: int):
        self.rng = np.random.default_rng([cfg.master_seed, iteration_index])
        self.eps = cfg.max_relative_error
        self.gaussian = cfg.distribution == "truncated_gaussian"
        self.redraws = 0

    def delta(self) -> float:
        if self.eps == 0.0:
            return 0.0
        if self.gaussian:
            return float(np.clip(self.rng.normal(0.0, self.eps / 3.0), -self.eps, self.eps))
        return float(self.rng.uniform(-self.eps, self.eps))

    def scale(self, value: float, valid=None) -> float:
        for _ in range(_MAX_REDRAWS):
            out = value * (1.0 + self.delta())
            if valid is None or valid(out):
                return out
            self.redraws += 1
        raise RuntimeError(f"no valid perturbation of {value!r} after {_MAX_REDRAWS} redraws")


def perturb(net: Netlist, cfg: ToleranceConfig, iteration_index: int) -> Netlist:
    """Independent perturbed copy of the netlist for one iteration.

    Structure is preserved exactly (same elements, wiring and expression
    shapes), so all iterations lower to programs with identical code and
    differing constant tables.
    """
    draws = _Draws(cfg, iteration_index)
    targets = cfg.perturb_targets

    def literals(expr: Expr) -> Expr:
        if "expression_literals" not in targets:
            return expr
        return map_constants(expr, lambda _i, c: draws.scale(c))

    out = Netlist(
        nodes=set(net.nodes),
        output_node=net.output_node,
        output_transform=net.output_transform,   # readout arithmetic: untouched
        meta=dict(net.meta),
    )
    for eid in sorted(net.elements):
        elem = net.elements[eid]
        if isinstance(elem, Adder):
            gains = elem.gains
            if "gains" in targets:
                gains = tuple(draws.scale(k) for k in gains)
            new = dataclasses.replace(elem, gains=gains)
        elif isinstance(elem, Integrator):
            c = draws.scale(elem.c) if "capacitance" in targets else elem.c
            rs = (
                tuple(draws.scale(r) for r in elem.resistances)
                if "resistance" in targets
                else elem.resistances
            )
            ic = draws.scale(elem.ic) if "initial_conditions" in targets else elem.ic
            new = dataclasses.replace(elem, c=c, resistances=rs, ic=ic)
        elif isinstance(elem, Potentiometer):
            alpha = elem.alpha
            if "alpha" in targets:
                alpha = draws.scale(alpha, valid=lambda a: 0.0 < a < 1.0)
            new = dataclasses.replace(elem, alpha=alpha)
        elif isinstance(elem, Multiplier):
            new = elem
        elif isinstance(elem, FunctionGenerator):
            new = dataclasses.replace(elem, signal=literals(elem.signal))
        elif isinstance(elem, MemIntegrator):
            c = draws.scale(elem.c) if "capacitance" in targets else elem.c
            ic = elem.ic
            omega0 = elem.omega0
            if "initial_conditions" in targets:
                ic = draws.scale(ic)
                omega0 = draws.scale(omega0)
            new = dataclasses.replace(
                elem, c=c, ic=ic, omega0=omega0, g=literals(elem.g), f=literals(elem.f)
            )
        else:
            raise TypeError(f"unknown element type {type(elem).__name__}")
        out.elements[eid] = new
        out.out_node[eid] = net.out_node[eid]
    out.meta["_redraws"] = str(draws.redraws)
    return out


@dataclass
class StabilityReport:
    t: np.ndarray
    mean: np.ndarray
    p10: np.ndarray
    p90: np.ndarray
    iterations: int
    failed: tuple[int, ...]          # iteration indices excluded from statistics
    redraws: int
    master_seed: int
    tolerance: float
    unstable: bool
    backend: str

    @property
    def terminal_mean(self) -> float:
        return float(self.mean[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,mean_rel_err,p10,p90\n")
            for i in range(len(self.t)):
                fh.write(
                    f"{self.t[i]:.12g},{self.mean[i]:.12g},{self.p10[i]:.12g},{self.p90[i]:.12g}\n"
                )

    def summary_text(self) -> str:
        lines = [
            f"iterations: {self.iterations}",
            f"tolerance: {self.tolerance:g}",
            f"master_seed: {self.master_seed}",
            f"failed_iterations: {len(self.failed)}"
            + (f" (indices {', '.join(map(str, self.failed))})" if self.failed else ""),
            f"redraws: {self.redraws}",
            f"terminal_mean_rel_err: {self.terminal_mean:.6g}",
            f"unstable: {'yes' if self.unstable else 'no'}",
        ]
        return "\n".join(lines) + "\n"


def stability_run(
    net: Netlist,
    cfg: ToleranceConfig,
    sim: SimConfig,
    backend: str | None = None,
    threads: int | None = None,
) -> StabilityReport:
    """Reference run plus ``cfg.iterations`` perturbed runs, reduced pointwise.

    Iterations that blow up or hit a domain error are excluded from the
    mean/percentile series and reported; more than 20% of them marks the
    report unstable.  The reduction is keyed by iteration index, so the
    result does not depend on scheduling.
    """
    chosen = resolve_backend(backend)
    base_sys = lower(net)
    base = simulate(base_sys, sim, backend=chosen)
    if base.blown_up:
        raise ValueError("reference simulation blows up; tolerance analysis needs a finite baseline")
    ref = base.waveform.channel("out")
    n_samples = len(ref)

    perturbed = [perturb(net, cfg, i) for i in range(cfg.iterations)]
    redraws = sum(int(p.meta["_redraws"]) for p in perturbed)

    if chosen == "numpy":
        series, failed = _run_batch(base_sys, perturbed, sim, n_samples)
    else:
        series, failed = _run_threaded(perturbed, sim, chosen, threads, n_samples)

    ok = [i for i in range(cfg.iterations) if i not in failed]
    if not ok:
        raise ValueError("every tolerance iteration failed; nothing to average")
    denom = np.maximum(np.abs(ref), REL_ERR_EPS)
    rel = np.abs(np.stack([series[i] for i in ok], axis=1) - ref[:, None]) / denom[:, None]

    return StabilityReport(
        t=base.waveform.t,
        mean=rel.mean(axis=1),
        p10=np.percentile(rel, 10.0, axis=1),
        p90=np.percentile(rel, 90.0, axis=1),
        iterations=cfg.iterations,
        failed=tuple(sorted(failed)),
        redraws=redraws,
        master_seed=cfg.master_seed,
        tolerance=cfg.max_relative_error,
        unstable=len(failed) > 0.2 * cfg.iterations,
        backend=chosen,
    )


def _run_threaded(perturbed, sim, backend, threads, n_samples):
    failed: set[int] = set()
    series: dict[int, np.ndarray] = {}

    def one(i: int):
        try:
            res = simulate(lower(perturbed[i]), sim, backend=backend)
        except SimulationError:
            return i, None
        if res.blown_up or len(res.waveform) != n_samples:
            return i, None
        return i, res.waveform.channel("out")

    workers = threads if threads is not None else thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(perturbed))))
    else:
        results = [one(i) for i in range(len(perturbed))]
    for i, data in results:
        if data is None:
            failed.add(i)
        else:
            series[i] = data
    return series, failed


def _run_batch(base_sys, perturbed, sim, n_samples):
    """Vectorized numpy path: all iterations advance in lockstep."""
    systems = [lower(p) for p in perturbed]
    prog0 = base_sys.program
    for s in systems:
        if not s.program.same_structure(prog0):
            raise AssertionError("perturbation changed program structure")
    width = len(systems)
    consts = np.stack([s.program.consts for s in systems], axis=1)
    y0 = np.stack([s.y0() for s in systems], axis=1)
    n_steps = sim.n_steps
    chan_kind = np.array([engine.CHAN_REG], dtype=np.int32)
    chan_idx = np.array([base_sys.node_regs[base_sys.output_node]], dtype=np.int32)
    rec = np.empty((n_steps + 1, 1, width))
    gflag = np.zeros((n_steps + 1, width), dtype=np.uint8)
    status = np.zeros(width, dtype=np.int64)
    event = np.zeros(width, dtype=np.int64)
    ln_counts = np.zeros(width, dtype=np.int64)
    rec_counts = np.zeros(width, dtype=np.int64)
    engine.rk4_run_batch(
        prog0.code, consts, prog0.n_regs, prog0.deriv_regs, prog0.g_regs,
        chan_kind, chan_idx, y0, 0.0, sim.dt, n_steps, sim.ln_floor, BLOWUP_LIMIT,
        rec, gflag, status, event, ln_counts, rec_counts,
    )
    failed = {i for i in range(width) if status[i] != engine.STATUS_OK or rec_counts[i] != n_samples}
    series: dict[int, np.ndarray] = {}
    out = rec[:, 0, :]
    if base_sys.output_transform is not None:
        tcol = sim.dt * np.arange(n_samples)[:, None]
        ok_cols = [i for i in range(width) if i not in failed]
        if ok_cols:
            transformed, _ = eval_expr_array_clamped(
                base_sys.output_transform,
                {"v": out[:, ok_cols], "t": tcol},
                sim.ln_floor,
            )
            for col, i in enumerate(ok_cols):
                series[i] = transformed[:, col]
        return series, failed
    for i in range(width):
        if i not in failed:
            series[i] = out[:, i].copy()
    return series, failed
