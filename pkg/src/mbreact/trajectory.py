"""Time-ordered phase-space samples shared by classical and Bohmian runs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Trajectory:
    t: np.ndarray  # (K,)
    q: np.ndarray  # (K, 2) positions, bohr
    p: np.ndarray  # (K, 2) momenta, a.u.
    kind: str = "classical"  # or "bohmian"
    id: int = 0
    clamps: int = 0  # node-proximity velocity holds (Bohmian only)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 2)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 2)
        if not (len(self.t) == len(self.q) == len(self.p)):
            raise ValueError("t, q and p must have the same length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def x(self):
        return self.q[:, 0]

    @property
    def y(self):
        return self.q[:, 1]

    def energy(self, model, mass: float) -> np.ndarray:
        return np.sum(self.p**2, axis=1) / (2 * mass) + model.energy(self.x, self.y)

    def to_csv(self, path, model, mass: float) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        energy = self.energy(model, mass)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t", "x", "y", "px", "py", "E"]
            if self.kind == "bohmian":
                header.append("clamps")
            w.writerow(header)
            for k in range(len(self)):
                row = [
                    _fmt(self.t[k]),
                    _fmt(self.q[k, 0]),
                    _fmt(self.q[k, 1]),
                    _fmt(self.p[k, 0]),
                    _fmt(self.p[k, 1]),
                    _fmt(energy[k]),
                ]
                if self.kind == "bohmian":
                    row.append(str(self.clamps))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, kind: str | None = None, id: int = 0) -> "Trajectory":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        names = data.dtype.names
        if kind is None:
            kind = "bohmian" if "clamps" in names else "classical"
        clamps = int(data["clamps"][0]) if "clamps" in names else 0
        return cls(
            data["t"],
            np.column_stack([data["x"], data["y"]]),
            np.column_stack([data["px"], data["py"]]),
            kind=kind,
            id=id,
            clamps=clamps,
        )


def _fmt(v) -> str:
    return repr(float(v))
