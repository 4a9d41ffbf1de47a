"""
Classical trajectory ensembles.

Initial conditions come from one of two Gaussian phase-space densities
centred on the reactant well:

``rho0``
    positions from |Psi_0|^2, every momentum fixed to (-p0, p0);
``wigner``
    the Wigner transform of the same Gaussian packet: positions as above,
    momenta Gaussian about (-p0, p0) with variance hbar^2 / (4 sigma^2) per
    component.

Each trajectory draws its four standard normals from its own PCG64 stream,
seeded with ``SeedSequence([seed, trajectory_id])``; ensembles therefore do not
depend on how the work is split. Hamilton's equations are integrated with
velocity Verlet using explicit mass (x in bohr, p in a.u.).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .analysis import ProbabilitySeries, SigmaCounter
from .pes import FrontierLine, PesModel
from .trajectory import Trajectory

__all__ = [
    "EnsembleSpec",
    "M3",
    "MASS",
    "SIGMA2",
    "sample_rho0",
    "sample_wigner",
    "sample",
    "integrate_classical",
    "trajectory_energy",
    "spreading_ratio",
    "mean_energy_diagram",
    "run_classical_ensemble",
]

MASS = 1836.0
SIGMA2 = 0.0125
# converged position of the reactant minimum
M3 = (0.6234994049308837, 0.028037758528683794)


@dataclass(frozen=True)
class EnsembleSpec:
    n: int = 50_000
    sampling: str = "rho0"
    center: tuple[float, float] = M3
    sigma2: tuple[float, float] = (SIGMA2, SIGMA2)
    p0: float = 4.0
    mass: float = MASS
    seed: int = 0
    hbar: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("ensemble size must be at least 1")
        if self.sampling not in ("rho0", "wigner"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        sigma2 = self.sigma2
        if np.isscalar(sigma2):
            sigma2 = (sigma2, sigma2)
        sigma2 = tuple(float(s) for s in sigma2)
        if min(sigma2) <= 0 or self.mass <= 0:
            raise ValueError("sigma2 and mass must be positive")
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def momentum(self) -> tuple[float, float]:
        return (-self.p0, self.p0)

    @property
    def momentum_std(self) -> np.ndarray:
        """Per-component momentum spread of the Wigner density."""
        return self.hbar / (2 * np.sqrt(np.array(self.sigma2)))

    def with_(self, **changes) -> "EnsembleSpec":
        d = asdict(self)
        d.update(changes)
        return EnsembleSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        d["sigma2"] = list(self.sigma2)
        return d


def standard_normals(seed: int, ids) -> np.ndarray:
    """Four N(0, 1) draws per trajectory id, from independent substreams."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((len(ids), 4))
    for k, i in enumerate(ids):
        out[k] = np.random.default_rng([seed, int(i)]).standard_normal(4)
    return out


def _positions(spec: EnsembleSpec, z: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.array(spec.sigma2))
    return np.array(spec.center) + z[:, :2] * s


def sample_rho0(spec: EnsembleSpec, ids=None) -> tuple[np.ndarray, np.ndarray]:
    if spec.sampling != "rho0":
        raise ValueError("spec is not a rho0 ensemble")
    ids = np.arange(spec.n) if ids is None else ids
    z = standard_normals(spec.seed, ids)
    q = _positions(spec, z)
    p = np.tile(np.array(spec.momentum, dtype=float), (len(q), 1))
    return q, p


def sample_wigner(spec: EnsembleSpec, ids=None) -> tuple[np.ndarray, np.ndarray]:
    if spec.sampling != "wigner":
        raise ValueError("spec is not a wigner ensemble")
    ids = np.arange(spec.n) if ids is None else ids
    z = standard_normals(spec.seed, ids)
    q = _positions(spec, z)
    p = np.array(spec.momentum) + z[:, 2:] * spec.momentum_std
    return q, p


def sample(spec: EnsembleSpec, ids=None):
    return sample_rho0(spec, ids) if spec.sampling == "rho0" else sample_wigner(spec, ids)


def trajectory_energy(model: PesModel, sample, mass: float = MASS):
    """p^2 / 2m + V for a (position, momentum) pair; broadcasts over rows."""
    q, p = (np.asarray(a, dtype=float) for a in sample)
    return np.sum(p**2, axis=-1) / (2 * mass) + model.energy(q[..., 0], q[..., 1])


def spreading_ratio(mass: float = MASS, sigma2: float = SIGMA2, hbar: float = 1.0) -> float:
    return hbar**2 / (4 * mass * sigma2)


def mean_energy_diagram(model: PesModel, p0_grid: Sequence[float], spec: EnsembleSpec) -> np.ndarray:
    """Rows (p0, Ebar, Ebar - delta, E_point) of the energy diagram.

    ``Ebar = p0^2/m + Vbar + delta``: Vbar is the Monte-Carlo mean of V over
    the ensemble's rho0 positions, delta the spreading ratio, and E_point the
    energy of a single particle at the packet center with momentum (-p0, p0).
    """
    q, _ = sample_rho0(spec.with_(sampling="rho0"))
    vbar = float(np.mean(model.energy(q[:, 0], q[:, 1])))
    delta = spreading_ratio(spec.mass, spec.sigma2[0], spec.hbar)
    v_center = float(model.energy(*spec.center))
    rows = []
    for p0 in p0_grid:
        kin = p0**2 / spec.mass
        rows.append((p0, kin + vbar + delta, kin + vbar, kin + v_center))
    return np.array(rows)


def crossing_momentum(model: PesModel, spec: EnsembleSpec, level: float, with_delta: bool = True) -> float:
    """p0 at which the ensemble mean energy reaches ``level``."""
    row = mean_energy_diagram(model, [0.0], spec)[0]
    base = row[1] if with_delta else row[2]
    if level < base:
        return float("nan")
    return float(np.sqrt(spec.mass * (level - base)))


def _verlet(model, q, p, mass, dt, n_steps, stride, on_step=None, on_record=None):
    """In-place velocity Verlet over arrays of shape (N, 2)."""
    gx, gy = model.gradient(q[:, 0], q[:, 1])
    f = -np.column_stack([gx, gy])
    if on_record is not None:
        on_record(0, q, p)
    for k in range(1, n_steps + 1):
        p += 0.5 * dt * f
        q += (dt / mass) * p
        gx, gy = model.gradient(q[:, 0], q[:, 1])
        f = -np.column_stack([gx, gy])
        p += 0.5 * dt * f
        if on_step is not None:
            on_step(q)
        if on_record is not None and k % stride == 0:
            on_record(k // stride, q, p)


def _n_steps(t_final, dt):
    n = int(round(t_final / dt))
    if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} must be a positive multiple of dt={dt}")
    return n


def integrate_classical(
    model: PesModel, initial, mass: float = MASS, dt: float = 0.1, t_final: float = 700.0, stride: int = 10
) -> Trajectory:
    """Integrate one trajectory from ``initial = (position, momentum)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = _n_steps(t_final, dt)
    q = np.array(initial[0], dtype=float).reshape(1, 2)
    p = np.array(initial[1], dtype=float).reshape(1, 2)
    n_rec = n // stride + 1
    qs = np.empty((n_rec, 2))
    ps = np.empty((n_rec, 2))

    def rec(k, q, p):
        qs[k] = q[0]
        ps[k] = p[0]

    _verlet(model, q, p, mass, dt, n, stride, on_record=rec)
    t = np.arange(n_rec) * (stride * dt)
    return Trajectory(t, qs, ps, kind="classical")


@dataclass
class ClassicalRun:
    series: ProbabilitySeries
    trajectories: dict = field(default_factory=dict)
    max_energy_drift: float = 0.0


def _run_chunk(args):
    model, q, p, ids, mass, dt, n, stride, line, record_ids = args
    n_rec = n // stride + 1
    counter = SigmaCounter(len(q), line, n_rec)
    rec_idx = [k for k, i in enumerate(ids) if i in record_ids]
    traces = {int(ids[k]): (np.empty((n_rec, 2)), np.empty((n_rec, 2))) for k in rec_idx}
    e0 = trajectory_energy(model, (q, p), mass)
    drift = np.zeros(len(q))

    def on_record(k, q, p):
        counter.record(k, q[:, 0], q[:, 1])
        e = trajectory_energy(model, (q, p), mass)
        np.maximum(drift, np.abs(e - e0), out=drift)
        for j in rec_idx:
            qs, ps = traces[int(ids[j])]
            qs[k] = q[j]
            ps[k] = p[j]

    def on_step(q):
        counter.observe(q[:, 0], q[:, 1])

    _verlet(model, q, p, mass, dt, n, stride, on_step=on_step, on_record=on_record)
    return counter, traces, float(drift.max(initial=0.0))


def run_classical_ensemble(
    model: PesModel,
    q0: np.ndarray,
    p0: np.ndarray,
    line: FrontierLine,
    mass: float = MASS,
    dt: float = 0.1,
    t_final: float = 700.0,
    stride: int = 10,
    record_ids: Sequence[int] = (),
    workers: int = 1,
    chunk: int = 10_000,
    meta: dict | None = None,
) -> ClassicalRun:
    """Integrate a whole ensemble, accumulating W and Wbar on the fly.

    Membership of the products region is checked after every integration
    step for Wbar and at output times for W. Work is split into fixed-size
    chunks, so the result does not depend on ``workers``.
    """
    n = _n_steps(t_final, dt)
    q0 = np.array(q0, dtype=float)
    p0 = np.array(p0, dtype=float)
    ids = np.arange(len(q0))
    record_ids = set(int(i) for i in record_ids)
    jobs = [
        (model, q0[a : a + chunk].copy(), p0[a : a + chunk].copy(), ids[a : a + chunk], mass, dt, n, stride, line, record_ids)
        for a in range(0, len(q0), chunk)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    counter = results[0][0]
    traces = dict(results[0][1])
    drift = results[0][2]
    for c, tr, d in results[1:]:
        counter.merge(c)
        traces.update(tr)
        drift = max(drift, d)
    times = np.arange(n // stride + 1) * (stride * dt)
    series = counter.series(times, meta)
    trajs = {
        i: Trajectory(times, qs, ps, kind="classical", id=i) for i, (qs, ps) in sorted(traces.items())
    }
    return ClassicalRun(series, trajs, drift)
