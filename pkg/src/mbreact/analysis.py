"""
Ensemble statistics and trajectory comparisons.

Reaction probabilities from trajectories come in two flavours:

* ``W(t)``  -- fraction of the ensemble sitting in the products region at t,
* ``Wbar(t)`` -- fraction that has entered the products region at least once
  by time t, returns ignored.

``P(t)``, the restricted norm of the wave function, is carried alongside when
the ensemble is Bohmian.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pes import FrontierLine
from .reaction_path import ReactionPath
from .trajectory import Trajectory

__all__ = [
    "ProbabilitySeries",
    "SigmaCounter",
    "PairedDifference",
    "CaratheodoryMatrix",
    "TimeAxisMismatch",
    "InitialConditionMismatch",
    "SeriesTooShort",
    "count_in_sigma",
    "first_crossing_fraction",
    "paired_difference",
    "caratheodory",
    "path_arrival_time",
    "arrival_window",
    "diagonal_band_fraction",
    "asymptotic_products",
    "write_sweep_summary",
]


class TimeAxisMismatch(ValueError):
    pass


class InitialConditionMismatch(ValueError):
    pass


class SeriesTooShort(ValueError):
    pass


@dataclass
class ProbabilitySeries:
    times: np.ndarray
    W: np.ndarray | None = None
    Wbar: np.ndarray | None = None
    P: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name in ("W", "Wbar", "P"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != self.times.shape:
                    raise ValueError(f"{name} has shape {v.shape}, times {self.times.shape}")
                setattr(self, name, v)

    def merged(self, other: "ProbabilitySeries") -> "ProbabilitySeries":
        if not np.array_equal(self.times, other.times):
            raise TimeAxisMismatch("series have different time axes")
        pick = lambda a, b: a if a is not None else b  # noqa: E731
        return ProbabilitySeries(
            self.times,
            pick(self.W, other.W),
            pick(self.Wbar, other.Wbar),
            pick(self.P, other.P),
            {**other.meta, **self.meta},
        )

    def value_at(self, name: str, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        return float(getattr(self, name)[k])

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = [("P", self.P), ("W", self.W), ("Wbar", self.Wbar)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [c for c, _ in cols])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t))] + ["" if v is None else repr(float(v[k])) for _, v in cols])
        if self.meta:
            Path(str(path) + ".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "ProbabilitySeries":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        times = [float(r["t"]) for r in rows]

        def col(name):
            vals = [r.get(name, "") for r in rows]
            if not vals or any(v == "" for v in vals):
                return None
            return [float(v) for v in vals]

        meta_path = Path(str(path) + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(times, col("W"), col("Wbar"), col("P"), meta)


class SigmaCounter:
    """Accumulates W and Wbar while an ensemble is integrated.

    Call :meth:`observe` after every integration step (this is what makes
    Wbar insensitive to the output stride) and :meth:`record` at each output
    time.
    """

    def __init__(self, n: int, line: FrontierLine, n_records: int):
        self.n = n
        self.line = line
        self.entered = np.zeros(n, dtype=bool)
        self.in_sigma = np.zeros(n_records, dtype=np.int64)
        self.ever = np.zeros(n_records, dtype=np.int64)

    def observe(self, x, y) -> np.ndarray:
        inside = self.line.above(x, y)
        self.entered |= inside
        return inside

    def record(self, k: int, x, y) -> None:
        inside = self.observe(x, y)
        self.in_sigma[k] = int(np.count_nonzero(inside))
        self.ever[k] = int(np.count_nonzero(self.entered))

    def merge(self, other: "SigmaCounter") -> None:
        self.in_sigma += other.in_sigma
        self.ever += other.ever
        self.n += other.n

    def series(self, times, meta=None) -> ProbabilitySeries:
        return ProbabilitySeries(times, self.in_sigma / self.n, self.ever / self.n, meta=dict(meta or {}))


def _common_times(trajectories: Sequence[Trajectory]) -> np.ndarray:
    if not trajectories:
        raise ValueError("no trajectories")
    t0 = trajectories[0].t
    for tr in trajectories[1:]:
        if len(tr.t) != len(t0) or np.max(np.abs(tr.t - t0)) > 1e-9 * max(1.0, abs(t0[-1])):
            raise TimeAxisMismatch(f"trajectory {tr.id} does not share the time axis")
    return t0


def _membership(trajectories, line) -> np.ndarray:
    return np.array([line.above(tr.x, tr.y) for tr in trajectories])


def count_in_sigma(trajectories: Sequence[Trajectory], line: FrontierLine) -> ProbabilitySeries:
    """W(t): fraction of trajectories inside the products region at each time."""
    times = _common_times(trajectories)
    inside = _membership(trajectories, line)
    return ProbabilitySeries(times, W=inside.mean(axis=0))


def first_crossing_fraction(trajectories: Sequence[Trajectory], line: FrontierLine) -> ProbabilitySeries:
    """Wbar(t): fraction of trajectories that have entered the products region by t.

    Consecutive samples are joined by straight segments; a segment can only
    cross the (straight) frontier if its end points lie on opposite sides, so
    entry is detected from the sampled points themselves.
    """
    times = _common_times(trajectories)
    inside = _membership(trajectories, line)
    ever = np.logical_or.accumulate(inside, axis=1)
    return ProbabilitySeries(times, Wbar=ever.mean(axis=0))


def asymptotic_products(series: ProbabilitySeries, t_min: float = 700.0) -> float:
    if series.Wbar is None:
        raise ValueError("series carries no Wbar")
    if series.times[-1] < t_min - 1e-9:
        raise SeriesTooShort(f"series ends at t={series.times[-1]:g} < {t_min:g}")
    return float(series.Wbar[-1])


@dataclass
class PairedDifference:
    times: np.ndarray
    dq: np.ndarray  # (K, 2): x_q - x_cl, y_q - y_cl
    dp: np.ndarray  # (K, 2)
    e_quantum: np.ndarray
    e_classical: np.ndarray

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "dx", "dy", "dpx", "dpy", "E_quantum", "E_classical"])
            for k, t in enumerate(self.times):
                w.writerow(
                    [repr(float(v)) for v in (t, *self.dq[k], *self.dp[k], self.e_quantum[k], self.e_classical[k])]
                )


def paired_difference(q: Trajectory, c: Trajectory, model, mass: float, tol: float = 1e-9) -> PairedDifference:
    """Quantum-minus-classical differences along a pair sharing initial conditions."""
    _common_times([q, c])
    if np.max(np.abs(q.q[0] - c.q[0])) > tol or np.max(np.abs(q.p[0] - c.p[0])) > tol:
        raise InitialConditionMismatch(
            f"initial states differ: q={q.q[0]}, {q.p[0]} vs cl={c.q[0]}, {c.p[0]}"
        )
    return PairedDifference(
        q.t.copy(), q.q - c.q, q.p - c.p, q.energy(model, mass), c.energy(model, mass)
    )


@dataclass
class CaratheodoryMatrix:
    values: np.ndarray  # (n_time, n_arc), squared distances
    times: np.ndarray
    s: np.ndarray

    def row_argmin(self) -> np.ndarray:
        return np.argmin(self.values, axis=1)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        meta = {
            "kind": "caratheodory",
            "shape": list(self.values.shape),
            "layout": "row-major float64 little-endian; rows = trajectory time, columns = arc length",
            "times": self.times.tolist(),
            "s": self.s.tolist(),
        }
        Path(str(path) + ".json").write_text(json.dumps(meta))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")

    @classmethod
    def load(cls, path) -> "CaratheodoryMatrix":
        meta = json.loads(Path(str(path) + ".json").read_text())
        vals = np.frombuffer(Path(path).read_bytes(), dtype="<f8").reshape(meta["shape"])
        return cls(vals.copy(), np.array(meta["times"]), np.array(meta["s"]))


def resample_in_time(traj: Trajectory, n: int, t_window=None) -> tuple[np.ndarray, np.ndarray]:
    t0, t1 = (traj.t[0], traj.t[-1]) if t_window is None else t_window
    times = np.linspace(t0, t1, n)
    q = np.column_stack([np.interp(times, traj.t, traj.x), np.interp(times, traj.t, traj.y)])
    return times, q


def caratheodory(
    traj: Trajectory, path: ReactionPath, n_time: int = 512, n_arc: int = 512, t_window=None
) -> CaratheodoryMatrix:
    """Squared distances between a trajectory and a reaction path.

    The trajectory is resampled to ``n_time`` uniform times over ``t_window``
    (whole trajectory by default) and the path to ``n_arc`` uniform arc
    lengths, both by linear interpolation.
    """
    if len(traj) == 0 or len(path.s) == 0:
        raise ValueError("empty trajectory or path")
    times, q = resample_in_time(traj, n_time, t_window)
    s, rp = path.resample(n_arc)
    d = q[:, None, :] - rp[None, :, :]
    return CaratheodoryMatrix(np.einsum("ijk,ijk->ij", d, d), times, s)


def path_arrival_time(traj: Trajectory, path: ReactionPath, fraction: float = 0.95, n_arc: int = 512):
    """First sample time at which the nearest path point lies beyond
    ``fraction`` of the path length, or None if that never happens."""
    s, rp = path.resample(n_arc)
    d = traj.q[:, None, :] - rp[None, :, :]
    nearest = s[np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)]
    hit = np.flatnonzero(nearest >= s[0] + fraction * (s[-1] - s[0]))
    return float(traj.t[hit[0]]) if hit.size else None


def arrival_window(traj: Trajectory, path: ReactionPath, fraction: float = 0.95):
    """Time window from the start until the trajectory has run the length of
    the path; the whole trajectory if it never does."""
    t_end = path_arrival_time(traj, path, fraction)
    if t_end is None or t_end <= traj.t[0]:
        return float(traj.t[0]), float(traj.t[-1])
    return float(traj.t[0]), t_end


def diagonal_band_fraction(mat: CaratheodoryMatrix, width: float = 0.15) -> float:
    """Fraction of rows whose distance minimum lies within ``width`` (as a
    fraction of the column axis) of the diagonal."""
    n, m = mat.values.shape
    diag = np.arange(n) * (m - 1) / max(n - 1, 1)
    dev = np.abs(mat.row_argmin() - diag) / (m - 1)
    return float(np.mean(dev <= width))


def write_sweep_summary(path, rows) -> None:
    """rows: iterable of (p0, Wbar_bohm, Wbar_cl_rho0, Wbar_cl_wigner)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p0", "Wbar_bohm", "Wbar_cl_rho0", "Wbar_cl_wigner"])
        for row in rows:
            w.writerow(["" if v is None else repr(float(v)) for v in row])
