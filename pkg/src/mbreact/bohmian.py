"""
Bohmian trajectories driven by a propagated wave function.

The guidance velocity is v = (hbar/m) Im(grad Psi / Psi), evaluated
spectrally on the grid and interpolated bilinearly (periodic wrap) to
particle positions. Particles are advanced with the explicit midpoint rule
alongside the wave, with the velocity field interpolated linearly in time
between consecutive wave steps.

Cells where |Psi|^2 falls below ``node_floor`` times its maximum are flagged
as nodes. A particle whose step touches a flagged cell is retried with 10,
100 and 1000 substeps; if that still fails it keeps its last valid velocity
for the step and the event is counted as a clamp.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from numba import njit

from .analysis import ProbabilitySeries, SigmaCounter
from .pes import FrontierLine
from .quantum import GridSpec, SplitOperator, WaveField, n_steps_for, products_mask, restricted_norm
from .trajectory import Trajectory

__all__ = [
    "VelocityField",
    "QuantumPotentialField",
    "OutOfGrid",
    "NodeProximity",
    "velocity_field",
    "quantum_potential",
    "integrate_bohmian",
    "run_bohmian_ensemble",
    "trajectory_energy_quantum",
    "equivariance_check",
]

log = logging.getLogger(__name__)

NODE_FLOOR = 1e-12


class OutOfGrid(RuntimeError):
    pass


class NodeProximity(UserWarning):
    pass


@dataclass(frozen=True)
class VelocityField:
    vx: np.ndarray
    vy: np.ndarray
    t: float
    nodes: np.ndarray  # bool, True where |Psi|^2 < node_floor * max
    grid: GridSpec = field(repr=False)


@dataclass(frozen=True)
class QuantumPotentialField:
    Q: np.ndarray  # NaN on node cells
    V_eff: np.ndarray
    t: float
    grid: GridSpec = field(repr=False)

    def save(self, path) -> None:
        """Write ``path`` (little-endian float64 [Q, V_eff] pairs, row-major,
        NaN on masked cells) and a ``path.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.stack([self.Q, self.V_eff], axis=-1).astype("<f8")
        path.write_bytes(data.tobytes(order="C"))
        sidecar = {
            "kind": "quantum_potential",
            "t": self.t,
            "grid": self.grid.to_dict(),
            "layout": "row-major [nx][ny][Q,V_eff] float64 little-endian; axis 0 is x; NaN = masked",
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path) -> "QuantumPotentialField":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        grid = GridSpec(**meta["grid"])
        raw = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(grid.nx, grid.ny, 2)
        return cls(raw[..., 0].copy(), raw[..., 1].copy(), float(meta["t"]), grid)


def _spectral_grad(a: np.ndarray, grid: GridSpec):
    ak = sfft.fft2(a)
    KX, KY = np.meshgrid(grid.kx, grid.ky, indexing="ij")
    return sfft.ifft2(1j * KX * ak), sfft.ifft2(1j * KY * ak)


def _guidance(phi, dphi_x, dphi_y, grid: GridSpec, node_floor: float):
    rho = np.abs(phi) ** 2
    nodes = rho < node_floor * rho.max()
    safe = np.where(nodes, 1.0, rho)
    c = grid.hbar / grid.mass
    vx = c * np.imag(np.conj(phi) * dphi_x) / safe
    vy = c * np.imag(np.conj(phi) * dphi_y) / safe
    vx[nodes] = 0.0
    vy[nodes] = 0.0
    return vx, vy, nodes


def velocity_field(field: WaveField, mass: float | None = None, node_floor: float = NODE_FLOOR) -> VelocityField:
    grid = field.grid if mass is None else field.grid.with_(mass=mass)
    dx, dy = _spectral_grad(field.psi, grid)
    vx, vy, nodes = _guidance(field.psi, dx, dy, grid, node_floor)
    return VelocityField(vx, vy, field.t, nodes, grid)


def quantum_potential(
    field: WaveField, mass: float | None = None, model=None, node_floor: float = NODE_FLOOR
) -> QuantumPotentialField:
    """Q = (hbar^2 / 4m) [ |grad rho / rho|^2 / 2 - lap rho / rho ].

    Derivatives of rho are spectral. Node cells and the outermost ring of
    cells are set to NaN. ``V_eff = V + Q`` (V = 0 without a model).
    """
    grid = field.grid if mass is None else field.grid.with_(mass=mass)
    rho = field.density()
    rk = sfft.fft2(rho)
    KX, KY = np.meshgrid(grid.kx, grid.ky, indexing="ij")
    gx = sfft.ifft2(1j * KX * rk).real
    gy = sfft.ifft2(1j * KY * rk).real
    lap = sfft.ifft2(-(KX**2 + KY**2) * rk).real
    bad = rho < node_floor * rho.max()
    safe = np.where(bad, 1.0, rho)
    Q = grid.hbar**2 / (4 * grid.mass) * (0.5 * (gx**2 + gy**2) / safe**2 - lap / safe)
    bad[0, :] = bad[-1, :] = bad[:, 0] = bad[:, -1] = True
    Q[bad] = np.nan
    if model is None:
        V = np.zeros_like(Q)
    else:
        X, Y = grid.mesh()
        V = model.energy(X, Y)
    return QuantumPotentialField(Q, V + Q, field.t, grid)


@njit(cache=True)
def _bilinear4(v, nodes, x, y, x0, y0, inv_dx, inv_dy):
    """Bilinear interpolation of the four planes of ``v`` (nx, ny, 4)."""
    nx, ny = nodes.shape
    fx = (x - x0) * inv_dx - 0.5
    fy = (y - y0) * inv_dy - 0.5
    if not (np.isfinite(fx) and np.isfinite(fy)):
        return 0.0, 0.0, 0.0, 0.0, True
    fi = np.floor(fx)
    fj = np.floor(fy)
    wx = fx - fi
    wy = fy - fj
    i0 = int(fi) % nx
    j0 = int(fj) % ny
    i1 = (i0 + 1) % nx
    j1 = (j0 + 1) % ny
    w00 = (1 - wx) * (1 - wy)
    w10 = wx * (1 - wy)
    w01 = (1 - wx) * wy
    w11 = wx * wy
    bad = nodes[i0, j0] or nodes[i1, j0] or nodes[i0, j1] or nodes[i1, j1]
    return (
        w00 * v[i0, j0, 0] + w10 * v[i1, j0, 0] + w01 * v[i0, j1, 0] + w11 * v[i1, j1, 0],
        w00 * v[i0, j0, 1] + w10 * v[i1, j0, 1] + w01 * v[i0, j1, 1] + w11 * v[i1, j1, 1],
        w00 * v[i0, j0, 2] + w10 * v[i1, j0, 2] + w01 * v[i0, j1, 2] + w11 * v[i1, j1, 2],
        w00 * v[i0, j0, 3] + w10 * v[i1, j0, 3] + w01 * v[i0, j1, 3] + w11 * v[i1, j1, 3],
        bad,
    )


@njit(cache=True)
def _midpoint_kernel(q, idx, v, nodes, dt, n_sub, x0, y0, dx, dy, q_out, v_out, ok_out):
    """Explicit midpoint over ``n_sub`` substeps with v(s) = (1-s) a + s b.

    ``v`` holds (a_x, a_y, b_x, b_y) along its last axis.
    """
    h = dt / n_sub
    inv_dx = 1.0 / dx
    inv_dy = 1.0 / dy
    for m in range(idx.shape[0]):
        k = idx[m]
        x = q[k, 0]
        y = q[k, 1]
        ok = True
        vmx = 0.0
        vmy = 0.0
        for j in range(n_sub):
            s0 = j / n_sub
            sm = (j + 0.5) / n_sub
            vax, vay, vbx, vby, bad = _bilinear4(v, nodes, x, y, x0, y0, inv_dx, inv_dy)
            ok = ok and not bad
            xm = x + 0.5 * h * ((1 - s0) * vax + s0 * vbx)
            ym = y + 0.5 * h * ((1 - s0) * vay + s0 * vby)
            vax, vay, vbx, vby, bad = _bilinear4(v, nodes, xm, ym, x0, y0, inv_dx, inv_dy)
            ok = ok and not bad
            vmx = (1 - sm) * vax + sm * vbx
            vmy = (1 - sm) * vay + sm * vby
            x += h * vmx
            y += h * vmy
        q_out[m, 0] = x
        q_out[m, 1] = y
        v_out[m, 0] = vmx
        v_out[m, 1] = vmy
        ok_out[m] = ok


class _Interp:
    """Bilinear interpolation on the cell-center grid with periodic wrap."""

    def __init__(self, grid: GridSpec):
        self.grid = grid

    def weights(self, x, y):
        g = self.grid
        fx = (x - g.x_range[0]) / g.dx - 0.5
        fy = (y - g.y_range[0]) / g.dy - 0.5
        i0 = np.floor(fx).astype(np.int64)
        j0 = np.floor(fy).astype(np.int64)
        wx = fx - i0
        wy = fy - j0
        i0 %= g.nx
        j0 %= g.ny
        i1 = (i0 + 1) % g.nx
        j1 = (j0 + 1) % g.ny
        return i0, i1, j0, j1, wx, wy

    def __call__(self, stack: np.ndarray, nodes: np.ndarray, x, y):
        """``stack`` has shape (nx, ny, k); returns (values (N, k), touches_node (N,))."""
        i0, i1, j0, j1, wx, wy = self.weights(x, y)
        wx = wx[:, None]
        wy = wy[:, None]
        v = (
            stack[i0, j0] * ((1 - wx) * (1 - wy))
            + stack[i1, j0] * (wx * (1 - wy))
            + stack[i0, j1] * ((1 - wx) * wy)
            + stack[i1, j1] * (wx * wy)
        )
        bad = nodes[i0, j0] | nodes[i1, j0] | nodes[i0, j1] | nodes[i1, j1]
        return v, bad


@dataclass
class BohmianRun:
    series: ProbabilitySeries
    trajectories: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)  # t -> (N, 2) snapshot
    fields: dict = field(default_factory=dict)  # t -> WaveField snapshot
    clamps: int = 0
    final_field: WaveField | None = None


class BohmianEnsemble:
    """Wave function plus particles, advanced in lock step."""

    def __init__(self, model, field0: WaveField, positions, node_floor: float = NODE_FLOOR):
        self.grid = field0.grid
        self.prop = SplitOperator(model, self.grid)
        self.psi = np.array(field0.psi, dtype=complex)
        self.t = field0.t
        self.node_floor = node_floor
        self.q = np.array(positions, dtype=float).reshape(-1, 2).copy()
        self._check_inside()
        self.interp = _Interp(self.grid)
        v0 = velocity_field(field0, node_floor=node_floor)
        self.vx, self.vy = v0.vx, v0.vy
        self.nodes = v0.nodes
        self.last_v = self.velocities()
        self.clamp_count = np.zeros(len(self.q), dtype=np.int64)
        self._dt_over_2m_gradV = None

    def _check_inside(self):
        inside = self.grid.contains(self.q[:, 0], self.q[:, 1])
        if not np.all(inside):
            k = int(np.flatnonzero(~inside)[0])
            raise OutOfGrid(f"particle {k} at {tuple(self.q[k])} left the grid at t={self.t:g}")

    @property
    def field(self) -> WaveField:
        return WaveField(self.psi.copy(), self.t, self.grid)

    def velocities(self) -> np.ndarray:
        stack = np.stack([self.vx, self.vy], axis=-1)
        vals, _ = self.interp(stack, self.nodes, self.q[:, 0], self.q[:, 1])
        return vals

    def step(self):
        g = self.grid
        dt = g.dt
        psi, (phi, dphx, dphy) = self.prop.step(self.psi, want_gradient=True)
        self.psi = psi
        vx, vy, nodes = _guidance(phi, dphx, dphy, g, self.node_floor)
        # grad of the final half kick: grad(e^{-iV dt/2} phi) adds -(dt/2) grad V
        if self._dt_over_2m_gradV is None:
            gvx, gvy = self.prop.gradV
            c = dt / (2 * g.mass)
            self._dt_over_2m_gradV = (c * gvx, c * gvy)
        vx -= self._dt_over_2m_gradV[0]
        vy -= self._dt_over_2m_gradV[1]
        vx[nodes] = 0.0
        vy[nodes] = 0.0
        self._advance((self.vx, self.vy), self.nodes, (vx, vy), nodes, dt)
        self.vx, self.vy = vx, vy
        self.nodes = nodes
        self.t += dt
        self._check_inside()

    def _advance(self, va, na, vb, nb, dt):
        g = self.grid
        nodes = na | nb
        fields = (np.stack([*va, *vb], axis=-1), nodes)
        geom = (g.x_range[0], g.y_range[0], g.dx, g.dy)
        idx = np.arange(len(self.q))
        for n_sub in (1, 10, 100, 1000):
            q_out = np.empty((len(idx), 2))
            v_out = np.empty((len(idx), 2))
            ok = np.empty(len(idx), dtype=np.bool_)
            _midpoint_kernel(self.q, idx, *fields, dt, n_sub, *geom, q_out, v_out, ok)
            if n_sub == 1 and ok.all():
                self.q, self.last_v = q_out, v_out
                return
            done = idx[ok]
            self.q[done] = q_out[ok]
            self.last_v[done] = v_out[ok]
            idx = idx[~ok]
            if len(idx) == 0:
                return
        # still touching a node: hold the last valid velocity
        self.q[idx] += dt * self.last_v[idx]
        self.clamp_count[idx] += 1
        log.warning("node proximity: held velocity for %d particle(s) at t=%g", len(idx), self.t + dt)


def run_bohmian_ensemble(
    model,
    field0: WaveField,
    positions,
    t_final: float,
    stride: int = 10,
    line: FrontierLine | None = None,
    record_ids: Sequence[int] = (),
    snapshot_times: Sequence[float] = (),
    keep_fields: bool = False,
    node_floor: float = NODE_FLOOR,
    meta: dict | None = None,
) -> BohmianRun:
    """Propagate the wave and a particle ensemble together.

    Returns W, Wbar (and P, the restricted norm, when ``line`` is given) at
    every ``stride``-th step, full trajectories for ``record_ids``, and the
    particle positions (plus wave snapshots if ``keep_fields``) at
    ``snapshot_times``.
    """
    ens = BohmianEnsemble(model, field0, positions, node_floor)
    g = ens.grid
    n = n_steps_for(t_final - field0.t, g.dt)
    n_rec = n // stride + 1
    times = field0.t + np.arange(n_rec) * (stride * g.dt)
    rec = sorted(set(int(i) for i in record_ids))
    tq = np.empty((len(rec), n_rec, 2))
    tp = np.empty((len(rec), n_rec, 2))
    snap_steps = {n_steps_for(t - field0.t, g.dt): t for t in snapshot_times}
    out = BohmianRun(ProbabilitySeries(times))
    counter = SigmaCounter(len(ens.q), line, n_rec) if line is not None else None
    P = np.empty(n_rec) if line is not None else None
    mask = products_mask(g, line) if line is not None else None

    def record(k):
        if counter is not None:
            counter.record(k, ens.q[:, 0], ens.q[:, 1])
            P[k] = restricted_norm(WaveField(ens.psi, ens.t, g), line, mask)
        if rec:
            v = ens.velocities()[rec]
            tq[:, k] = ens.q[rec]
            tp[:, k] = g.mass * v

    def snapshot(step):
        if step in snap_steps:
            t = snap_steps[step]
            out.positions[t] = ens.q.copy()
            if keep_fields:
                out.fields[t] = ens.field

    record(0)
    snapshot(0)
    for k in range(1, n + 1):
        ens.step()
        if k % stride == 0:
            ens.prop.check_leak(ens.psi, ens.t)
            record(k // stride)
        elif counter is not None:
            counter.observe(ens.q[:, 0], ens.q[:, 1])
        snapshot(k)
    if counter is not None:
        s = counter.series(times, meta)
        s.P = P
        out.series = s
    else:
        out.series.meta = dict(meta or {})
    for j, i in enumerate(rec):
        out.trajectories[i] = Trajectory(times, tq[j], tp[j], kind="bohmian", id=i, clamps=int(ens.clamp_count[i]))
    out.clamps = int(ens.clamp_count.sum())
    out.final_field = ens.field
    return out


def integrate_bohmian(
    model, field0: WaveField, initials, t_final: float, stride: int = 1, mass: float | None = None
) -> list[Trajectory]:
    """Bohmian trajectories for a handful of initial positions."""
    if mass is not None and mass != field0.grid.mass:
        field0 = WaveField(field0.psi, field0.t, field0.grid.with_(mass=mass))
    initials = np.array(initials, dtype=float).reshape(-1, 2)
    run = run_bohmian_ensemble(model, field0, initials, t_final, stride, record_ids=range(len(initials)))
    return [run.trajectories[i] for i in range(len(initials))]


def trajectory_energy_quantum(model, traj: Trajectory, mass: float) -> np.ndarray:
    """p^2/2m + V along a Bohmian trajectory, p = m v."""
    if traj.kind != "bohmian":
        raise ValueError(f"expected a bohmian trajectory, got {traj.kind!r}")
    return traj.energy(model, mass)


def equivariance_check(positions, field: WaveField, bins: int = 32, min_expected: float = 10.0, n_sigma: float = 4.0):
    """Compare a particle histogram with |Psi|^2 integrated over coarse bins.

    Returns ``(fraction_ok, n_cells)`` over bins expecting at least
    ``min_expected`` particles; a bin is ok when the count is within
    ``n_sigma`` sqrt(expected) of the expectation.
    """
    g = field.grid
    positions = np.asarray(positions)
    n = len(positions)
    if g.nx % bins or g.ny % bins:
        raise ValueError("bins must divide the grid size")
    rho = field.density() * g.cell_area
    rho = rho / rho.sum()
    bx, by = g.nx // bins, g.ny // bins
    expected = n * rho.reshape(bins, bx, bins, by).sum(axis=(1, 3))
    counts, _, _ = np.histogram2d(
        positions[:, 0], positions[:, 1], bins=bins, range=[g.x_range, g.y_range]
    )
    sel = expected >= min_expected
    ok = np.abs(counts - expected) <= n_sigma * np.sqrt(expected)
    n_cells = int(sel.sum())
    return (float(ok[sel].mean()) if n_cells else 1.0), n_cells
