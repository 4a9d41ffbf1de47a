"""
Steepest-descent reaction paths.

A path segment solves dx/ds = -g/|g| (unit-speed descent, s = arc length)
from a point displaced off a saddle along its unstable Hessian eigenvector.
The full Mueller-Brown path is assembled from four such segments and runs
M3 -> TS2 -> M2 -> TS1 -> M1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pes import (
    PesModel,
    StationaryPoint,
    gradient,
    hessian,
    locate_reference_points,
    newton_stationary,
)

__all__ = [
    "ReactionPath",
    "PathEscape",
    "StepUnderflow",
    "TopologyMismatch",
    "arc_length",
    "trace_descent",
    "build_full_path",
    "saddle_departures",
]

BOX = ((-2.5, 1.5), (-1.0, 2.5))


class PathEscape(RuntimeError):
    pass


class StepUnderflow(RuntimeError):
    pass


class TopologyMismatch(RuntimeError):
    pass


def arc_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def cumulative_arc_length(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _direction(model, x):
    g = gradient(model, x)
    n = np.hypot(*g)
    if n == 0:
        return None
    return -g / n


def _rk4(model, x, h):
    k1 = _direction(model, x)
    k2 = _direction(model, x + 0.5 * h * k1)
    if k2 is None:
        return None
    k3 = _direction(model, x + 0.5 * h * k2)
    if k3 is None:
        return None
    k4 = _direction(model, x + h * k3)
    if k4 is None:
        return None
    return x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6


def _near_minimum(model, x, radius):
    """Newton estimate of the distance to a local minimum, if one is close."""
    h = hessian(model, x)
    if np.any(np.linalg.eigvalsh(h) <= 0):
        return False
    step = np.linalg.solve(h, gradient(model, x))
    return np.hypot(*step) < radius


def trace_descent(
    model: PesModel,
    start,
    max_step: float = 1e-2,
    min_step: float = 1e-6,
    grad_tol: float = 1e-6,
    minima: Sequence = (),
    capture: float = 1e-3,
    box=BOX,
    step_tol: float = 1e-9,
    max_points: int = 200_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Follow the steepest-descent curve from ``start``.

    Returns ``(s, points)``. Stepping is fourth-order Runge-Kutta on the unit
    descent direction; a step that would raise the energy, or whose
    step-doubling error estimate exceeds ``step_tol``, is halved. The walk
    stops once |grad V| (raw surface units) drops below ``grad_tol`` or the
    point comes within ``capture`` of a minimum, either one listed in
    ``minima`` or one found by a local Newton estimate; in the latter cases
    the converged minimum is appended as the last point.
    """
    scale = model.energy_scale if model.energy_scale != 0 else 1.0
    x = np.array(start, dtype=float)
    if np.hypot(*gradient(model, x)) / scale <= grad_tol:
        raise ValueError("descent cannot start at a stationary point")
    minima = [np.asarray(m, dtype=float) for m in minima]
    (x_lo, x_hi), (y_lo, y_hi) = box
    pts = [x.copy()]
    e = model.energy(*x)
    h = max_step
    while True:
        if len(pts) > max_points:
            raise StepUnderflow("descent did not terminate")
        g = np.hypot(*gradient(model, x)) / scale
        if g < grad_tol:
            break
        hit = [m for m in minima if np.hypot(*(x - m)) < capture]
        if hit or _near_minimum(model, x, capture):
            xm = newton_stationary(model, hit[0] if hit else x)
            if np.hypot(*(xm - x)) > 0:
                pts.append(xm)
            break
        xn = _rk4(model, x, h)
        xh = _rk4(model, x, 0.5 * h)
        if xh is not None:
            xh = _rk4(model, xh, 0.5 * h)
        if xn is None or xh is None:
            en, err = np.inf, np.inf
        else:
            en, err = model.energy(*xn), np.hypot(*(xn - xh))
        if en > e or err > step_tol:
            h *= 0.5
            if h < min_step:
                raise StepUnderflow(f"step fell below {min_step:g} at {tuple(x)}")
            continue
        x, e = xn, en
        if not (x_lo <= x[0] <= x_hi and y_lo <= x[1] <= y_hi):
            raise PathEscape(f"descent left the box at {tuple(x)}")
        pts.append(x.copy())
        h = min(max_step, 2 * h)
    pts = np.array(pts)
    return cumulative_arc_length(pts), pts


def saddle_departures(model: PesModel, saddle, eps: float = 1e-3):
    """The two points eps away from ``saddle`` along its unstable eigenvector."""
    w, v = np.linalg.eigh(hessian(model, saddle))
    e = v[:, int(np.argmin(w))]
    s = np.asarray(saddle, dtype=float)
    return s + eps * e, s - eps * e


@dataclass
class ReactionPath:
    s: np.ndarray
    q: np.ndarray  # (K, 2)
    energy: np.ndarray
    endpoints: tuple[StationaryPoint, StationaryPoint]
    via: list[StationaryPoint] = field(default_factory=list)
    marks: dict = field(default_factory=dict)  # name -> point index

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def resample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        s = np.linspace(0.0, self.length, n)
        q = np.column_stack([np.interp(s, self.s, self.q[:, 0]), np.interp(s, self.s, self.q[:, 1])])
        return s, q

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x", "y", "V"])
            for s, (x, y), v in zip(self.s, self.q, self.energy):
                w.writerow([repr(float(s)), repr(float(x)), repr(float(y)), repr(float(v))])


def _segment(model, saddle, target, minima, eps, **kw):
    """Descend from ``saddle`` on the side that reaches ``target``."""
    landed = []
    for start in saddle_departures(model, saddle.position, eps):
        _, pts = trace_descent(model, start, minima=minima, **kw)
        pts = np.vstack([saddle.xy, pts])
        if np.hypot(*(pts[-1] - target.xy)) < 1e-3:
            return pts
        landed.append(tuple(np.round(pts[-1], 4)))
    raise TopologyMismatch(
        f"no descent from {saddle.position} reached {target.position}; landed at {landed}"
    )


def build_full_path(model: PesModel, eps: float = 1e-3, **kw) -> ReactionPath:
    """Assemble M3 -> TS2 -> M2 -> TS1 -> M1 from four descent segments."""
    sp = locate_reference_points(model)
    minima = [sp[k].xy for k in ("M1", "M2", "M3")]
    ts2_m3 = _segment(model, sp["TS2"], sp["M3"], minima, eps, **kw)
    ts2_m2 = _segment(model, sp["TS2"], sp["M2"], minima, eps, **kw)
    ts1_m2 = _segment(model, sp["TS1"], sp["M2"], minima, eps, **kw)
    ts1_m1 = _segment(model, sp["TS1"], sp["M1"], minima, eps, **kw)
    pieces = [ts2_m3[::-1], ts2_m2[1:], ts1_m2[::-1][1:], ts1_m1[1:]]
    q = np.vstack(pieces)
    ends = np.cumsum([len(p) for p in pieces]) - 1
    marks = {"M3": 0, "TS2": ends[0], "M2": ends[1], "TS1": ends[2], "M1": ends[3]}
    marks = {k: int(v) for k, v in marks.items()}
    return ReactionPath(
        s=cumulative_arc_length(q),
        q=q,
        energy=np.asarray(model.energy(q[:, 0], q[:, 1])),
        endpoints=(sp["M3"], sp["M1"]),
        via=[sp["TS2"], sp["M2"], sp["TS1"]],
        marks=marks,
    )
