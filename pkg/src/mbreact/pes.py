"""
Mueller-Brown model surface.

The surface is a sum of four two-dimensional Gaussians,

    V(x, y) = s * sum_i A_i exp(a_i dx^2 + b_i dx dy + c_i dy^2),

with dx = x - x_i, dy = y - y_i and ``s`` an overall energy scale. The raw
parameters are those of K. Mueller and L. D. Brown, Theoret. Chim. Acta 53,
75 (1979). With ``s = 1e-3`` the well depths come out in hartree
(M1 = -0.147, M2 = -0.081, M3 = -0.108); lengths are bohr.

Note that the 1e-3 scale is inferred from the quoted energies of the three
minima, it is not a published constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GaussianTerm",
    "PesModel",
    "StationaryPoint",
    "FrontierLine",
    "NonConvergence",
    "muller_brown",
    "evaluate",
    "gradient",
    "hessian",
    "find_stationary_points",
    "in_products_region",
    "load_pes_config",
    "FRONTIER",
    "REFERENCE_POINTS",
]

ENERGY_SCALE = 1e-3

_MB_A = (-200.0, -100.0, -170.0, 15.0)
_MB_a = (-1.0, -1.0, -6.5, 0.7)
_MB_b = (0.0, 0.0, 11.0, 0.6)
_MB_c = (-10.0, -10.0, -6.5, 0.7)
_MB_x0 = (1.0, 0.0, -0.5, -1.0)
_MB_y0 = (0.0, 0.5, 1.5, 1.0)

# Tabulated stationary points (bohr, hartree).
REFERENCE_POINTS = {
    "M1": ((-0.558, 1.442), -0.147),
    "M2": ((-0.050, 0.467), -0.081),
    "M3": ((0.623, 0.028), -0.108),
    "TS1": ((-0.822, 0.624), -0.041),
    "TS2": ((0.212, 0.293), -0.072),
}


class NonConvergence(RuntimeError):
    """Newton iteration from a seed did not reach the gradient tolerance."""

    def __init__(self, seed, iterations):
        super().__init__(f"seed {tuple(seed)} not converged after {iterations} iterations")
        self.seed = tuple(seed)
        self.iterations = iterations


@dataclass(frozen=True)
class GaussianTerm:
    amplitude: float
    a: float
    b: float
    c: float
    x0: float
    y0: float

    def is_decaying(self) -> bool:
        """True when the quadratic form is negative definite."""
        return self.a < 0 and 4 * self.a * self.c - self.b**2 > 0


@dataclass(frozen=True)
class PesModel:
    """Sum-of-Gaussians surface. All methods broadcast over array inputs."""

    terms: tuple[GaussianTerm, ...]
    energy_scale: float = ENERGY_SCALE

    def _parts(self, x, y):
        for t in self.terms:
            dx = x - t.x0
            dy = y - t.y0
            e = t.amplitude * np.exp(t.a * dx * dx + t.b * dx * dy + t.c * dy * dy)
            yield t, dx, dy, e

    def energy(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v = np.zeros(np.broadcast(x, y).shape)
        for _, _, _, e in self._parts(x, y):
            v = v + e
        return self.energy_scale * v

    def gradient(self, x, y):
        """Return (dV/dx, dV/dy)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gx = np.zeros(np.broadcast(x, y).shape)
        gy = np.zeros_like(gx)
        for t, dx, dy, e in self._parts(x, y):
            gx = gx + (2 * t.a * dx + t.b * dy) * e
            gy = gy + (t.b * dx + 2 * t.c * dy) * e
        return self.energy_scale * gx, self.energy_scale * gy

    def hessian(self, x, y):
        """Return (Vxx, Vxy, Vyy)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        hxx = np.zeros(np.broadcast(x, y).shape)
        hxy = np.zeros_like(hxx)
        hyy = np.zeros_like(hxx)
        for t, dx, dy, e in self._parts(x, y):
            ux = 2 * t.a * dx + t.b * dy
            uy = t.b * dx + 2 * t.c * dy
            hxx = hxx + (ux * ux + 2 * t.a) * e
            hxy = hxy + (ux * uy + t.b) * e
            hyy = hyy + (uy * uy + 2 * t.c) * e
        s = self.energy_scale
        return s * hxx, s * hxy, s * hyy

    def scaled(self, energy_scale: float) -> "PesModel":
        return PesModel(self.terms, energy_scale)


def muller_brown(energy_scale: float = ENERGY_SCALE) -> PesModel:
    terms = tuple(
        GaussianTerm(*p) for p in zip(_MB_A, _MB_a, _MB_b, _MB_c, _MB_x0, _MB_y0)
    )
    return PesModel(terms, energy_scale)


def evaluate(model: PesModel, point) -> float:
    return float(model.energy(point[0], point[1]))


def gradient(model: PesModel, point) -> np.ndarray:
    gx, gy = model.gradient(point[0], point[1])
    return np.array([float(gx), float(gy)])


def hessian(model: PesModel, point) -> np.ndarray:
    hxx, hxy, hyy = model.hessian(point[0], point[1])
    hxy = float(hxy)
    return np.array([[float(hxx), hxy], [hxy, float(hyy)]])


@dataclass(frozen=True)
class StationaryPoint:
    position: tuple[float, float]
    energy: float
    kind: str  # "minimum", "saddle" or "other"
    hessian_eigenvalues: tuple[float, float]

    @property
    def xy(self) -> np.ndarray:
        return np.array(self.position)


def _classify(eigvals) -> str:
    neg = int(np.sum(np.asarray(eigvals) < 0))
    if neg == 0:
        return "minimum"
    if neg == 1:
        return "saddle"
    return "other"


def newton_stationary(model: PesModel, seed, tol: float = 1e-10, max_iter: int = 100):
    """Newton iteration on the gradient from ``seed``.

    ``tol`` is a bound on |grad V| in raw (unscaled) surface units.
    """
    x = np.array(seed, dtype=float)
    scale = model.energy_scale if model.energy_scale != 0 else 1.0
    for _ in range(max_iter):
        g = gradient(model, x) / scale
        if np.hypot(*g) < tol:
            return x
        h = hessian(model, x) / scale
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        # keep wild steps from leaving the basin entirely
        n = np.hypot(*step)
        if n > 0.5:
            step *= 0.5 / n
        x = x - step
    g = gradient(model, x) / scale
    if np.hypot(*g) < tol:
        return x
    raise NonConvergence(seed, max_iter)


def find_stationary_points(
    model: PesModel,
    seeds: Iterable[Sequence[float]],
    tol: float = 1e-10,
    max_iter: int = 100,
    dedup: float = 1e-4,
    failures: list | None = None,
) -> list[StationaryPoint]:
    """Locate stationary points by Newton iteration from each seed.

    Converged points closer than ``dedup`` are merged. Seeds that fail to
    converge are skipped; if ``failures`` is a list the corresponding
    :class:`NonConvergence` errors are appended to it.
    """
    seeds = [tuple(s) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    found: list[StationaryPoint] = []
    for s in seeds:
        try:
            x = newton_stationary(model, s, tol, max_iter)
        except NonConvergence as err:
            if failures is not None:
                failures.append(err)
            continue
        if any(np.hypot(*(x - p.xy)) < dedup for p in found):
            continue
        ev = np.linalg.eigvalsh(hessian(model, x))
        found.append(
            StationaryPoint(
                position=(float(x[0]), float(x[1])),
                energy=evaluate(model, x),
                kind=_classify(ev),
                hessian_eigenvalues=(float(ev[0]), float(ev[1])),
            )
        )
    return found


def grid_seeds(x_range=(-1.5, 1.2), y_range=(-0.2, 2.0), nx=12, ny=12):
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    return [(float(x), float(y)) for x in xs for y in ys]


def locate_reference_points(model: PesModel) -> dict[str, StationaryPoint]:
    """Converge each tabulated stationary point starting from its coordinates."""
    out = {}
    for name, (xy, _) in REFERENCE_POINTS.items():
        failures = []
        found = find_stationary_points(model, [xy], failures=failures)
        if not found:
            raise failures[0]
        out[name] = found[0]
    return out


@dataclass(frozen=True)
class FrontierLine:
    """The line y = slope * x + intercept; products lie strictly above it."""

    slope: float = 0.8024
    intercept: float = 1.2734

    def above(self, x, y):
        return np.asarray(y) > self.slope * np.asarray(x) + self.intercept

    def signed_offset(self, x, y):
        return np.asarray(y) - (self.slope * np.asarray(x) + self.intercept)


FRONTIER = FrontierLine()


def in_products_region(line: FrontierLine, point) -> bool:
    return bool(line.above(point[0], point[1]))


def load_pes_config(path) -> PesModel:
    """Read surface parameters from a YAML file.

    Expected keys: ``amplitudes``, ``a``, ``b``, ``c`` (lists of equal
    length), ``centers`` (list of [x, y]) and optionally ``energy_scale``.
    Missing keys fall back to the Mueller-Brown defaults.
    """
    import yaml

    data = yaml.safe_load(Path(path).read_text()) or {}
    return pes_from_mapping(data)


_PES_KEYS = {"amplitudes", "a", "b", "c", "centers", "energy_scale"}


def pes_from_mapping(data: dict) -> PesModel:
    unknown = sorted(set(data) - _PES_KEYS)
    if unknown:
        raise ValueError(f"unknown field 'pes.{unknown[0]}'")
    default = muller_brown()
    amps = data.get("amplitudes", _MB_A)
    a = data.get("a", _MB_a)
    b = data.get("b", _MB_b)
    c = data.get("c", _MB_c)
    centers = data.get("centers", list(zip(_MB_x0, _MB_y0)))
    n = len(amps)
    for key, seq in (("a", a), ("b", b), ("c", c), ("centers", centers)):
        if len(seq) != n:
            raise ValueError(f"pes.{key}: expected {n} entries, got {len(seq)}")
    terms = tuple(
        GaussianTerm(float(A), float(ai), float(bi), float(ci), float(xy[0]), float(xy[1]))
        for A, ai, bi, ci, xy in zip(amps, a, b, c, centers)
    )
    scale = float(data.get("energy_scale", default.energy_scale))
    return PesModel(terms, scale)


def pes_to_mapping(model: PesModel) -> dict:
    return {
        "amplitudes": [t.amplitude for t in model.terms],
        "a": [t.a for t in model.terms],
        "b": [t.b for t in model.terms],
        "c": [t.c for t in model.terms],
        "centers": [[t.x0, t.y0] for t in model.terms],
        "energy_scale": model.energy_scale,
    }
