"""Uniformly sampled multi-channel time series and their CSV form.

CSV layout: header row ``t,<channel>,...``, one row per sample in time
order, values printed with 12 significant digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Waveform", "GridMismatchError"]


class GridMismatchError(ValueError):
    pass


@dataclass
class Waveform:
    t0: float
    dt: float
    names: tuple[str, ...]
    data: np.ndarray                      # (n_samples, n_channels)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.names):
            raise ValueError("data must be (n_samples, n_channels) matching names")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self), dtype=np.float64)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"no channel {name!r} (have {', '.join(self.names)})") from None

    def index_of_time(self, time: float) -> int:
        i = int(round((time - self.t0) / self.dt))
        if not (0 <= i < len(self)) or abs(self.t0 + i * self.dt - time) > 1e-9 * max(1.0, abs(time)):
            raise KeyError(f"time {time} is not on the sampling grid")
        return i

    def same_grid(self, other: "Waveform") -> bool:
        return (
            len(self) == len(other)
            and abs(self.t0 - other.t0) <= 1e-12 * max(1.0, abs(self.t0))
            and abs(self.dt - other.dt) <= 1e-12 * self.dt
        )

    def require_same_grid(self, other: "Waveform") -> None:
        if not self.same_grid(other):
            raise GridMismatchError(
                f"waveform grids differ: (t0={self.t0}, dt={self.dt}, n={len(self)}) "
                f"vs (t0={other.t0}, dt={other.dt}, n={len(other)})"
            )

    # -- CSV ------------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(("t",) + self.names) + "\n")
            t = self.t
            for i in range(len(self)):
                row = [f"{t[i]:.12g}"] + [f"{x:.12g}" for x in self.data[i]]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Waveform":
        with open(path) as fh:
            header = fh.readline().strip()
            cols = header.split(",")
            if not cols or cols[0] != "t":
                raise ValueError(f"bad waveform CSV header: {header!r}")
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        if body.shape[0] < 2:
            raise ValueError("waveform CSV needs at least two samples")
        t = body[:, 0]
        dt = t[1] - t[0]
        if dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > 1e-6 * dt:
            raise ValueError("waveform CSV is not uniformly sampled")
        return cls(t0=float(t[0]), dt=float(dt), names=tuple(cols[1:]), data=body[:, 1:])
