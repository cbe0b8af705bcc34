"""Execution engine for lowered circuits.

A lowered circuit is a straight-line *tape* of register instructions
(:class:`Program`) evaluated once per Runge-Kutta stage.  The same tape
format is executed by two interchangeable kernels:

* :func:`rk4_run` — scalar time loop, written in the numba-compilable
  subset of Python (module level, no closures, arrays only) so the fast
  backend can ``@njit(cache=True)`` it unchanged;
* :func:`rk4_run_batch` — the pure-numpy twin, vectorized across a batch
  of parameter sets (used for Monte Carlo sweeps on the numpy backend).

Kernel status codes: 0 = completed, 1 = expression domain error,
2 = state blow-up (magnitude above the blow-up limit or non-finite).
Inside the kernels ``ln`` is clamped below at ``ln_floor`` and the
activations are counted; division by zero, square roots of negatives
and fractional powers of negatives are domain errors.  Overflow to
infinity is not a domain error: it surfaces as a blow-up at the end of
the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exprs import Binary, Const, Expr, Unary, Var

OP_CONST = 0
OP_T = 1
OP_STATE = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_NEG = 7
OP_EXP = 8
OP_LN = 9
OP_SIN = 10
OP_COS = 11
OP_SQRT = 12
OP_ABS = 13
OP_POW = 14

_UNARY_OPS = {"neg": OP_NEG, "exp": OP_EXP, "ln": OP_LN, "sin": OP_SIN,
              "cos": OP_COS, "sqrt": OP_SQRT, "abs": OP_ABS}
_BINARY_OPS = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV, "pow": OP_POW}

STATUS_OK = 0
STATUS_DOMAIN_ERROR = 1
STATUS_BLOWUP = 2

CHAN_REG = 0
CHAN_STATE = 1


@dataclass
class Program:
    """Straight-line register program producing the state derivatives.

    ``code`` rows are ``(op, dst, a, b)`` where ``a``/``b`` are register
    indices except for OP_CONST (constant-table index) and OP_STATE
    (state index).  Constants are *not* deduplicated: every literal in
    the source netlist owns one slot, so a structurally identical
    netlist with different coefficient values lowers to the same code
    with a different constant table.
    """

    code: np.ndarray            # (n_instr, 4) int32
    consts: np.ndarray          # (n_consts,) float64
    n_regs: int
    deriv_regs: np.ndarray      # (n_states,) int32
    g_regs: np.ndarray          # (n_memristors,) int32, memductance values

    def same_structure(self, other: "Program") -> bool:
        return (
            self.n_regs == other.n_regs
            and self.consts.shape == other.consts.shape
            and np.array_equal(self.code, other.code)
            and np.array_equal(self.deriv_regs, other.deriv_regs)
            and np.array_equal(self.g_regs, other.g_regs)
        )


class TapeBuilder:
    def __init__(self):
        self._code: list[tuple[int, int, int, int]] = []
        self._consts: list[float] = []
        self.n_regs = 0

    def new_reg(self) -> int:
        r = self.n_regs
        self.n_regs += 1
        return r

    def emit(self, op: int, dst: int, a: int = 0, b: int = 0) -> int:
        self._code.append((op, dst, a, b))
        return dst

    def const(self, value: float) -> int:
        idx = len(self._consts)
        self._consts.append(float(value))
        return self.emit(OP_CONST, self.new_reg(), idx)

    def load_t(self) -> int:
        return self.emit(OP_T, self.new_reg())

    def load_state(self, state_index: int) -> int:
        return self.emit(OP_STATE, self.new_reg(), state_index)

    def unary(self, op: str, a: int) -> int:
        return self.emit(_UNARY_OPS[op], self.new_reg(), a)

    def binary(self, op: str, a: int, b: int) -> int:
        return self.emit(_BINARY_OPS[op], self.new_reg(), a, b)

    def compile_expr(self, e: Expr, env: dict[str, int]) -> int:
        """Emit code computing ``e``; ``env`` maps variable names to registers."""
        if isinstance(e, Const):
            return self.const(e.value)
        if isinstance(e, Var):
            return env[e.name]
        if isinstance(e, Unary):
            return self.unary(e.op, self.compile_expr(e.arg, env))
        if isinstance(e, Binary):
            a = self.compile_expr(e.lhs, env)
            b = self.compile_expr(e.rhs, env)
            return self.binary(e.op, a, b)
        raise TypeError(f"not an expression node: {e!r}")

    def finish(self, deriv_regs: list[int], g_regs: list[int]) -> Program:
        code = np.array(self._code, dtype=np.int32).reshape(-1, 4)
        return Program(
            code=code,
            consts=np.array(self._consts, dtype=np.float64),
            n_regs=self.n_regs,
            deriv_regs=np.array(deriv_regs, dtype=np.int32),
            g_regs=np.array(g_regs, dtype=np.int32),
        )


# ---------------------------------------------------------------------------
# Scalar kernel (numba-compilable as-is)


def rk4_run(code, consts, n_regs, deriv_regs, g_regs, chan_kind, chan_idx,
            y0, t0, dt, n_steps, ln_floor, blow_limit, rec, gflag, info, y_out):
    """Classical fixed-step RK4 over the tape; returns #recorded samples.

    ``rec`` is (n_steps+1, n_channels); ``gflag`` is (n_steps+1,) and set
    to 1 on samples where any memductance register is negative.
    ``info`` receives (status, event_step, ln_clamp_count); ``y_out``
    holds the state vector at exit (the failing state on an error).
    """
    n_states = y0.shape[0]
    n_instr = code.shape[0]
    n_chan = chan_kind.shape[0]
    regs = np.zeros(n_regs, dtype=np.float64)
    y = y_out
    for i in range(n_states):
        y[i] = y0[i]
    ytmp = np.empty(n_states, dtype=np.float64)
    ks = np.empty((4, n_states), dtype=np.float64)
    comp = np.zeros(n_states, dtype=np.float64)  # Kahan compensation
    ln_total = 0
    recorded = 0
    info[0] = STATUS_OK
    info[1] = n_steps
    for step in range(n_steps + 1):
        for stg in range(4):
            if stg == 0:
                ts = t0 + step * dt
                for i in range(n_states):
                    ytmp[i] = y[i]
            elif stg == 3:
                ts = t0 + (step + 1) * dt
                for i in range(n_states):
                    ytmp[i] = y[i] + dt * ks[2, i]
            else:
                ts = t0 + step * dt + 0.5 * dt
                for i in range(n_states):
                    ytmp[i] = y[i] + 0.5 * dt * ks[stg - 1, i]
            ok = True
            for pc in range(n_instr):
                op = code[pc, 0]
                dst = code[pc, 1]
                a = code[pc, 2]
                b = code[pc, 3]
                if op == OP_CONST:
                    regs[dst] = consts[a]
                elif op == OP_T:
                    regs[dst] = ts
                elif op == OP_STATE:
                    regs[dst] = ytmp[a]
                elif op == OP_ADD:
                    regs[dst] = regs[a] + regs[b]
                elif op == OP_SUB:
                    regs[dst] = regs[a] - regs[b]
                elif op == OP_MUL:
                    regs[dst] = regs[a] * regs[b]
                elif op == OP_DIV:
                    den = regs[b]
                    if den == 0.0:
                        ok = False
                        break
                    regs[dst] = regs[a] / den
                elif op == OP_NEG:
                    regs[dst] = -regs[a]
                elif op == OP_EXP:
                    regs[dst] = np.exp(regs[a])
                elif op == OP_LN:
                    x = regs[a]
                    if x < ln_floor:
                        x = ln_floor
                        ln_total += 1
                    regs[dst] = np.log(x)
                elif op == OP_SIN:
                    regs[dst] = np.sin(regs[a])
                elif op == OP_COS:
                    regs[dst] = np.cos(regs[a])
                elif op == OP_SQRT:
                    x = regs[a]
                    if x < 0.0:
                        ok = False
                        break
                    regs[dst] = np.sqrt(x)
                elif op == OP_ABS:
                    regs[dst] = abs(regs[a])
                else:  # OP_POW
                    r = regs[a] ** regs[b]
                    if np.isnan(r):
                        ok = False
                        break
                    regs[dst] = r
            if not ok:
                info[0] = STATUS_DOMAIN_ERROR
                info[1] = step
                info[2] = ln_total
                return recorded
            if stg == 0:
                for c in range(n_chan):
                    if chan_kind[c] == CHAN_STATE:
                        rec[step, c] = y[chan_idx[c]]
                    else:
                        rec[step, c] = regs[chan_idx[c]]
                flag = 0
                for gi in range(g_regs.shape[0]):
                    if regs[g_regs[gi]] < 0.0:
                        flag = 1
                gflag[step] = flag
                recorded = step + 1
                if step == n_steps:
                    info[2] = ln_total
                    return recorded
            for i in range(n_states):
                ks[stg, i] = regs[deriv_regs[i]]
        bad = False
        for i in range(n_states):
            # compensated state update keeps the roundoff floor near eps*|y|,
            # so small-step runs stay truncation-dominated
            delta = dt * (ks[0, i] + 2.0 * ks[1, i] + 2.0 * ks[2, i] + ks[3, i]) / 6.0
            term = delta - comp[i]
            yn = y[i] + term
            comp[i] = (yn - y[i]) - term
            if not np.isfinite(yn) or abs(yn) > blow_limit:
                bad = True
            y[i] = yn
        if bad:
            info[0] = STATUS_BLOWUP
            info[1] = step + 1
            info[2] = ln_total
            return recorded
    return recorded


# ---------------------------------------------------------------------------
# Batched numpy kernel
#
# Runs W independent parameter sets of one program in lockstep: consts is
# (n_consts, W), states are (n_states, W).  Lanes die individually on
# domain errors or blow-up; per-lane status/event/ln counts mirror the
# scalar kernel (per-lane results match the scalar kernel up to the
# usual one-ulp differences between numpy and libm transcendentals).


def rk4_run_batch(code, consts, n_regs, deriv_regs, g_regs, chan_kind, chan_idx,
                  y0, t0, dt, n_steps, ln_floor, blow_limit, rec, gflag, status,
                  event_step, ln_counts, rec_counts, y_out=None):
    n_states, width = y0.shape
    n_chan = chan_kind.shape[0]
    regs = np.zeros((n_regs, width), dtype=np.float64)
    y = y0.copy()
    ks = np.empty((4, n_states, width), dtype=np.float64)
    comp = np.zeros((n_states, width), dtype=np.float64)
    alive = np.ones(width, dtype=bool)
    status[:] = STATUS_OK
    event_step[:] = n_steps
    ln_counts[:] = 0
    rec_counts[:] = 0
    rec[:] = np.nan
    gflag[:] = 0

    def kill(mask, code_, step_):
        hit = mask & alive
        if hit.any():
            status[hit] = code_
            event_step[hit] = step_
            alive[hit] = False

    with np.errstate(all="ignore"):
        for step in range(n_steps + 1):
            if not alive.any():
                break
            for stg in range(4):
                if stg == 0:
                    ts = t0 + step * dt
                    ytmp = y
                elif stg == 3:
                    ts = t0 + (step + 1) * dt
                    ytmp = y + dt * ks[2]
                else:
                    ts = t0 + step * dt + 0.5 * dt
                    ytmp = y + 0.5 * dt * ks[stg - 1]
                dom = np.zeros(width, dtype=bool)
                for pc in range(code.shape[0]):
                    op, dst, a, b = code[pc]
                    if op == OP_CONST:
                        regs[dst] = consts[a]
                    elif op == OP_T:
                        regs[dst] = ts
                    elif op == OP_STATE:
                        regs[dst] = ytmp[a]
                    elif op == OP_ADD:
                        np.add(regs[a], regs[b], out=regs[dst])
                    elif op == OP_SUB:
                        np.subtract(regs[a], regs[b], out=regs[dst])
                    elif op == OP_MUL:
                        np.multiply(regs[a], regs[b], out=regs[dst])
                    elif op == OP_DIV:
                        den = regs[b]
                        zero = den == 0.0
                        if zero.any():
                            dom |= zero
                            den = np.where(zero, 1.0, den)
                        np.divide(regs[a], den, out=regs[dst])
                    elif op == OP_NEG:
                        np.negative(regs[a], out=regs[dst])
                    elif op == OP_EXP:
                        np.exp(regs[a], out=regs[dst])
                    elif op == OP_LN:
                        x = regs[a]
                        low = x < ln_floor
                        if low.any():
                            ln_counts[alive & low] += 1
                            x = np.maximum(x, ln_floor)
                        np.log(x, out=regs[dst])
                    elif op == OP_SIN:
                        np.sin(regs[a], out=regs[dst])
                    elif op == OP_COS:
                        np.cos(regs[a], out=regs[dst])
                    elif op == OP_SQRT:
                        x = regs[a]
                        neg = x < 0.0
                        if neg.any():
                            dom |= neg
                            x = np.where(neg, 0.0, x)
                        np.sqrt(x, out=regs[dst])
                    elif op == OP_ABS:
                        np.abs(regs[a], out=regs[dst])
                    else:  # OP_POW
                        r = np.power(regs[a], regs[b])
                        bad = np.isnan(r)
                        if bad.any():
                            dom |= bad
                            r = np.where(bad, 0.0, r)
                        regs[dst] = r
                kill(dom, STATUS_DOMAIN_ERROR, step)
                if not alive.any():
                    break
                if stg == 0:
                    for c in range(n_chan):
                        src = y[chan_idx[c]] if chan_kind[c] == CHAN_STATE else regs[chan_idx[c]]
                        rec[step, c, alive] = src[alive]
                    if g_regs.shape[0]:
                        neg_any = np.zeros(width, dtype=bool)
                        for gr in g_regs:
                            neg_any |= regs[gr] < 0.0
                        gflag[step, alive] = neg_any[alive].astype(np.uint8)
                    rec_counts[alive] = step + 1
                    if step == n_steps:
                        break
                ks[stg] = regs[deriv_regs]
            if step == n_steps or not alive.any():
                break
            delta = dt * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]) / 6.0
            term = delta - comp
            ynew = y + term
            compnew = (ynew - y) - term
            blown = (~np.isfinite(ynew) | (np.abs(ynew) > blow_limit)).any(axis=0)
            kill(blown, STATUS_BLOWUP, step + 1)
            y = np.where(alive, ynew, y)
            comp = np.where(alive, compnew, comp)
    if y_out is not None:
        y_out[:] = y
    return rec_counts
