"""
Wave-packet propagation on a periodic 2D grid.

The time-dependent Schroedinger equation

    i hbar dPsi/dt = -(hbar^2 / 2m) lap Psi + V Psi

is advanced with the symmetric (Strang) split-operator scheme: half a
potential kick, a full kinetic step applied in momentum space, and a second
half kick. Grid points sit at cell centers, x_i = x_min + (i + 1/2) dx, and
all quadratures are midpoint sums over cells.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.fft as sfft

from .pes import FrontierLine, PesModel

__all__ = [
    "GridSpec",
    "WaveField",
    "SplitOperator",
    "PacketTooWide",
    "BoundaryLeak",
    "BoundaryLeakWarning",
    "initial_packet",
    "propagate",
    "restricted_norm",
    "energy_expectation",
]

MASS = 1836.0
SIGMA2 = 0.0125


class PacketTooWide(ValueError):
    pass


class BoundaryLeak(RuntimeError):
    pass


class BoundaryLeakWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple[float, float] = (-4.0, 2.0)
    y_range: tuple[float, float] = (-2.0, 4.0)
    nx: int = 256
    ny: int = 256
    dt: float = 0.1
    mass: float = MASS
    hbar: float = 1.0

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if n < 2 or n & (n - 1):
                raise ValueError(f"grid point counts must be powers of two, got {n}")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("empty grid extents")
        if self.dt <= 0 or self.mass <= 0:
            raise ValueError("dt and mass must be positive")
        # yaml/json round trips hand back lists
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))

    @property
    def dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x(self) -> np.ndarray:
        return self.x_range[0] + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self) -> np.ndarray:
        return self.y_range[0] + (np.arange(self.ny) + 0.5) * self.dy

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def kx(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.nx, d=self.dx)

    @property
    def ky(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.ny, d=self.dy)

    @property
    def p_max(self) -> tuple[float, float]:
        """Largest resolved momentum along each axis."""
        return self.hbar * np.pi / self.dx, self.hbar * np.pi / self.dy

    def contains(self, x, y):
        return (
            (x >= self.x_range[0])
            & (x <= self.x_range[1])
            & (y >= self.y_range[0])
            & (y <= self.y_range[1])
        )

    def with_(self, **changes) -> "GridSpec":
        d = asdict(self)
        d.update(changes)
        return GridSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x_range"] = list(self.x_range)
        d["y_range"] = list(self.y_range)
        return d


@dataclass(frozen=True)
class WaveField:
    psi: np.ndarray
    t: float
    grid: GridSpec = field(repr=False)

    def __post_init__(self):
        if self.psi.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"amplitude shape {self.psi.shape} does not match grid")
        view = self.psi.view()
        view.flags.writeable = False
        object.__setattr__(self, "psi", view)

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(np.sum(self.density()) * self.grid.cell_area)

    def position_expectation(self) -> np.ndarray:
        rho = self.density()
        w = np.sum(rho)
        return np.array(
            [
                np.sum(rho.sum(axis=1) * self.grid.x) / w,
                np.sum(rho.sum(axis=0) * self.grid.y) / w,
            ]
        )

    def position_variance(self) -> np.ndarray:
        rho = self.density()
        w = np.sum(rho)
        mx, my = self.position_expectation()
        return np.array(
            [
                np.sum(rho.sum(axis=1) * (self.grid.x - mx) ** 2) / w,
                np.sum(rho.sum(axis=0) * (self.grid.y - my) ** 2) / w,
            ]
        )

    def momentum_expectation(self) -> np.ndarray:
        phi = np.abs(sfft.fft2(self.psi)) ** 2
        w = np.sum(phi)
        g = self.grid
        return g.hbar * np.array(
            [np.sum(phi.sum(axis=1) * g.kx) / w, np.sum(phi.sum(axis=0) * g.ky) / w]
        )

    def save(self, path) -> None:
        """Write ``path`` (little-endian float64 re/im pairs, row-major) and
        ``path.json`` holding grid, time and norm."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.empty(self.psi.shape + (2,), dtype="<f8")
        data[..., 0] = self.psi.real
        data[..., 1] = self.psi.imag
        path.write_bytes(data.tobytes(order="C"))
        sidecar = {
            "kind": "wavefield",
            "t": self.t,
            "norm": self.norm(),
            "grid": self.grid.to_dict(),
            "layout": "row-major [nx][ny][re,im] float64 little-endian; axis 0 is x",
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path) -> "WaveField":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        grid = GridSpec(**meta["grid"])
        raw = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(grid.nx, grid.ny, 2)
        psi = raw[..., 0] + 1j * raw[..., 1]
        return cls(psi, float(meta["t"]), grid)


def check_packet(grid: GridSpec, center, sigma2, momentum) -> None:
    """Raise :class:`PacketTooWide` if the packet does not fit the grid."""
    sx = np.sqrt(sigma2[0])
    sy = np.sqrt(sigma2[1])
    x0, y0 = center
    margins = (
        (x0 - grid.x_range[0]) / sx,
        (grid.x_range[1] - x0) / sx,
        (y0 - grid.y_range[0]) / sy,
        (grid.y_range[1] - y0) / sy,
    )
    if min(margins) < 6:
        raise PacketTooWide(f"packet center within {min(margins):.2f} widths of the grid edge")
    # momentum-space widths hbar / (2 sigma)
    for p, s, pmax in zip(momentum, (sx, sy), grid.p_max):
        need = 4 * (abs(p) + 3 * grid.hbar / (2 * s))
        if pmax < need:
            raise PacketTooWide(
                f"grid resolves |p| <= {pmax:.1f}, packet needs {need:.1f}; refine spacing"
            )


def initial_packet(grid: GridSpec, center, sigma2, momentum) -> WaveField:
    """Gaussian packet with position variances ``sigma2`` boosted to ``momentum``."""
    if np.isscalar(sigma2):
        sigma2 = (float(sigma2), float(sigma2))
    check_packet(grid, center, sigma2, momentum)
    X, Y = grid.mesh()
    x0, y0 = center
    px, py = momentum
    sx, sy = np.sqrt(sigma2[0]), np.sqrt(sigma2[1])
    amp = (2 * np.pi * sx * sy) ** -0.5
    psi = amp * np.exp(
        -((X - x0) ** 2) / (4 * sigma2[0])
        - (Y - y0) ** 2 / (4 * sigma2[1])
        + 1j * (px * (X - x0) + py * (Y - y0)) / grid.hbar
    )
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_area)
    return WaveField(psi, 0.0, grid)


def edge_fraction(rho: np.ndarray, width: int = 3) -> float:
    """Fraction of the total density inside ``width`` cells of any edge."""
    total = rho.sum()
    inner = rho[width:-width, width:-width].sum()
    return float((total - inner) / total)


class SplitOperator:
    """Strang-split propagator for one surface on one grid.

    ``step`` advances a complex array in place. With ``want_gradient`` it also
    returns the spatial derivatives of the pre-kick field and the potential
    gradient needed to reconstruct grad Psi at the new time without an extra
    forward transform.
    """

    leak_warn = 1e-6
    leak_fail = 1e-3

    def __init__(self, model, grid: GridSpec):
        self.model = model
        self.grid = grid
        X, Y = grid.mesh()
        self.V = np.asarray(model.energy(X, Y), dtype=float)
        KX, KY = np.meshgrid(grid.kx, grid.ky, indexing="ij")
        self.KX = KX
        self.KY = KY
        self.T = grid.hbar**2 * (KX**2 + KY**2) / (2 * grid.mass)
        self.half_kick = np.exp(-0.5j * grid.dt * self.V / grid.hbar)
        self.drift = np.exp(-1j * grid.dt * self.T / grid.hbar)
        self._gradV = None
        self.max_leak = 0.0
        self._warned = False

    @property
    def gradV(self):
        if self._gradV is None:
            X, Y = self.grid.mesh()
            self._gradV = tuple(np.asarray(g) for g in self.model.gradient(X, Y))
        return self._gradV

    def step(self, psi: np.ndarray, want_gradient: bool = False):
        psi *= self.half_kick
        phik = sfft.fft2(psi, overwrite_x=True)
        phik *= self.drift
        grads = None
        if want_gradient:
            dphi_x = sfft.ifft2(1j * self.KX * phik)
            dphi_y = sfft.ifft2(1j * self.KY * phik)
        phi = sfft.ifft2(phik, overwrite_x=True)
        if want_gradient:
            grads = (phi.copy(), dphi_x, dphi_y)
        phi *= self.half_kick
        return phi, grads

    def check_leak(self, psi: np.ndarray, t: float) -> float:
        frac = edge_fraction(np.abs(psi) ** 2)
        self.max_leak = max(self.max_leak, frac)
        if frac > self.leak_fail:
            raise BoundaryLeak(f"{frac:.2e} of the norm within 3 cells of the edge at t={t:g}")
        if frac > self.leak_warn and not self._warned:
            self._warned = True
            warnings.warn(
                f"{frac:.2e} of the norm near the grid edge at t={t:g}",
                BoundaryLeakWarning,
                stacklevel=3,
            )
        return frac

    def run(self, field: WaveField, n_steps: int, snapshot_stride: int = 1) -> Iterator[WaveField]:
        """Yield the initial field and then every ``snapshot_stride``-th step."""
        if abs(field.norm() - 1) > 1e-6:
            raise ValueError(f"field norm {field.norm():.8f} is not 1")
        psi = np.array(field.psi, dtype=complex)
        yield field
        for k in range(1, n_steps + 1):
            psi, _ = self.step(psi)
            if k % snapshot_stride == 0:
                t = field.t + k * self.grid.dt
                self.check_leak(psi, t)
                yield WaveField(psi.copy(), t, self.grid)


def n_steps_for(t_final: float, dt: float) -> int:
    n = int(round(t_final / dt))
    if not np.isclose(n * dt, t_final, rtol=0, atol=1e-9 * max(1.0, t_final)):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


def propagate(
    model: PesModel, field: WaveField, t_final: float, snapshot_stride: int = 1
) -> Iterator[WaveField]:
    """Propagate ``field`` to ``t_final`` (absolute time), yielding snapshots."""
    prop = SplitOperator(model, field.grid)
    n = n_steps_for(t_final - field.t, field.grid.dt)
    return prop.run(field, n, snapshot_stride)


def products_mask(grid: GridSpec, line: FrontierLine) -> np.ndarray:
    X, Y = grid.mesh()
    return line.above(X, Y)


def restricted_norm(field: WaveField, line: FrontierLine, mask=None) -> float:
    """Probability above ``line`` by the cell-center rule."""
    if mask is None:
        mask = products_mask(field.grid, line)
    p = float(np.sum(field.density()[mask]) * field.grid.cell_area)
    return min(max(p, 0.0), 1.0)


def energy_expectation(model, field: WaveField, V: np.ndarray | None = None) -> float:
    """<H> with the kinetic part evaluated in momentum space."""
    g = field.grid
    norm = field.norm()
    if abs(norm - 1) > 1e-6:
        raise ValueError(f"field norm {norm:.8f} is not 1")
    if V is None:
        X, Y = g.mesh()
        V = model.energy(X, Y)
    rho = field.density()
    pot = np.sum(V * rho) / np.sum(rho)
    phik2 = np.abs(sfft.fft2(field.psi)) ** 2
    KX, KY = np.meshgrid(g.kx, g.ky, indexing="ij")
    kin = np.sum(g.hbar**2 * (KX**2 + KY**2) / (2 * g.mass) * phik2) / np.sum(phik2)
    return float(kin + pot)
