"""Fixed-step simulation of lowered circuits.

The integrator is classical 4th-order Runge-Kutta with a fixed step; the
state-variable construction moves all memory into local ODE state, so
no adaptive or implicit machinery is needed and runs are bit-for-bit
reproducible on a given backend.

The recorded waveform always carries the declared output signal as its
first channel, named ``out``, with the netlist's output transform (if
any) applied.  Additional node or ``omega:<element>`` channels can be
requested.  Inside the stepper the argument of every ``ln`` is clamped
below at ``ln_floor`` and the clamp activations are counted; state
magnitudes above ``BLOWUP_LIMIT`` (or non-finite states) truncate the
run and are reported rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .backend import resolve_backend, rk4_kernel
from .exprs import eval_expr_array_clamped
from .netlist import OdeSystem
from .waveform import Waveform

__all__ = ["SimConfig", "SimResult", "SimulationError", "simulate", "relative_error", "BLOWUP_LIMIT"]

BLOWUP_LIMIT = 1e12
REL_ERR_EPS = 1e-12
OUTPUT_CHANNEL = "out"


@dataclass
class SimConfig:
    dt: float
    t_end: float
    ln_floor: float = 1e-9
    record_channels: tuple[str, ...] = ()

    def __post_init__(self):
        if not (0.0 < self.dt < self.t_end):
            raise ValueError(f"need 0 < dt < t_end, got dt={self.dt}, t_end={self.t_end}")
        if self.ln_floor <= 0.0:
            raise ValueError(f"ln_floor must be positive, got {self.ln_floor}")
        self.record_channels = tuple(self.record_channels)

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        return max(n, 1)


class SimulationError(RuntimeError):
    """An expression left its domain during integration."""

    def __init__(self, step: int, time: float, snapshot: dict[str, float]):
        states = ", ".join(f"{k}={v:.6g}" for k, v in snapshot.items())
        super().__init__(f"expression domain error at step {step} (t={time:.6g}); state: {states}")
        self.step = step
        self.time = time
        self.snapshot = snapshot


@dataclass
class SimResult:
    waveform: Waveform
    passivity_steps: int           # recorded samples where any memductance < 0
    passivity_flags: np.ndarray    # per-sample 0/1
    ln_clamps: int
    blowup_step: int | None
    backend: str

    @property
    def blown_up(self) -> bool:
        return self.blowup_step is not None


def _resolve_channels(sys: OdeSystem, names) -> tuple[np.ndarray, np.ndarray]:
    kinds, idxs = [], []
    for name in names:
        if name.startswith("omega:"):
            eid = name[len("omega:"):]
            if eid not in sys.omega_state_index:
                raise ValueError(f"no memristor state {name!r}")
            kinds.append(engine.CHAN_STATE)
            idxs.append(sys.omega_state_index[eid])
        else:
            if name not in sys.node_regs:
                raise ValueError(f"no node {name!r} to record")
            kinds.append(engine.CHAN_REG)
            idxs.append(sys.node_regs[name])
    return np.array(kinds, dtype=np.int32), np.array(idxs, dtype=np.int32)


def simulate(sys: OdeSystem, cfg: SimConfig, backend: str | None = None) -> SimResult:
    """Integrate the system over [0, t_end]; deterministic for fixed inputs."""
    chosen = resolve_backend(backend)
    if OUTPUT_CHANNEL in cfg.record_channels:
        raise ValueError(f"channel name {OUTPUT_CHANNEL!r} is reserved for the output signal")
    names = (OUTPUT_CHANNEL,) + cfg.record_channels
    chan_kind, chan_idx = _resolve_channels(sys, (sys.output_node,) + cfg.record_channels)

    n_steps = cfg.n_steps
    prog = sys.program
    rec = np.empty((n_steps + 1, len(names)), dtype=np.float64)
    gflag = np.zeros(n_steps + 1, dtype=np.uint8)
    info = np.zeros(3, dtype=np.int64)
    y_out = np.empty(sys.n_states, dtype=np.float64)

    kernel = rk4_kernel(chosen)
    recorded = int(
        kernel(
            prog.code, prog.consts, prog.n_regs, prog.deriv_regs, prog.g_regs,
            chan_kind, chan_idx, sys.y0(), 0.0, cfg.dt, n_steps,
            cfg.ln_floor, BLOWUP_LIMIT, rec, gflag, info, y_out,
        )
    )
    status, event, ln_clamps = int(info[0]), int(info[1]), int(info[2])

    if status == engine.STATUS_DOMAIN_ERROR:
        snapshot = dict(zip(sys.state_names(), (float(v) for v in y_out)))
        raise SimulationError(event, event * cfg.dt, snapshot)

    rec = rec[:recorded]
    gflag = gflag[:recorded]
    out_col = rec[:, 0]
    transform_clamps = 0
    if sys.output_transform is not None:
        tgrid = cfg.dt * np.arange(recorded, dtype=np.float64)
        out_col, transform_clamps = eval_expr_array_clamped(
            sys.output_transform, {"v": out_col, "t": tgrid}, cfg.ln_floor
        )
        rec = rec.copy()
        rec[:, 0] = out_col

    blowup_step = event if status == engine.STATUS_BLOWUP else None
    wf = Waveform(t0=0.0, dt=cfg.dt, names=names, data=rec)
    if blowup_step is not None:
        wf.meta["blowup_step"] = blowup_step
    return SimResult(
        waveform=wf,
        passivity_steps=int(gflag.sum()),
        passivity_flags=gflag,
        ln_clamps=ln_clamps + transform_clamps,
        blowup_step=blowup_step,
        backend=chosen,
    )


def relative_error(
    w: Waveform, ref: Waveform, channel: str, ref_channel: str | None = None
) -> Waveform:
    """Pointwise |w - ref| / max(|ref|, eps) on a shared sampling grid.

    Samples where the guard eps = 1e-12 takes over are counted in the
    result's ``meta["eps_guarded"]``.
    """
    w.require_same_grid(ref)
    a = w.channel(channel)
    b = ref.channel(ref_channel if ref_channel is not None else channel)
    denom = np.maximum(np.abs(b), REL_ERR_EPS)
    guarded = int(np.count_nonzero(np.abs(b) < REL_ERR_EPS))
    rel = np.abs(a - b) / denom
    return Waveform(
        t0=w.t0, dt=w.dt, names=("rel_err",), data=rel[:, None],
        meta={"eps_guarded": guarded},
    )
