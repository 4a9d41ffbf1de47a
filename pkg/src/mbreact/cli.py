"""
Command-line driver.

Every subcommand reads an optional YAML run configuration, applies flag
overrides, writes its data products under the output directory and records
a ``manifest_<command>.json`` (config hash, seed, library versions, file digests).

Config schema (all sections and keys optional)::

    pes:          {amplitudes, a, b, c, centers, energy_scale}
    grid:         {x_range: [-4, 2], y_range: [-2, 4], nx: 256, ny: 256, dt: 0.1}
    ensemble:     {n: 50000, seed: 0, sigma2: 0.0125, center: [x, y], mass: 1836}
    run:          {p0: 4, sweep: [...], t_final: 700, stride: 10, workers: 1,
                   out: runs, record: [ids]}
    toggles:      {classical_rho0: true, classical_wigner: true, quantum: true}
    frontier:     {slope: 0.8024, intercept: 1.2734}
    stationary:   {x_range, y_range, nx, ny}
    caratheodory: {n_time: 512, n_arc: 512, t_window: null}

A null ``t_window`` runs the Caratheodory matrix from the start of the
trajectory until it first reaches the far end of the reaction path (95 % of
its length), or over the whole run if it never gets there.

The output directory can also be set with ``MBREACT_OUT``; ``--out`` wins
over the environment, which wins over the file.

Exit status: 0 success, 2 usage or configuration error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import analysis, bohmian, classical, pes, quantum, reaction_path
from .trajectory import Trajectory

log = logging.getLogger("mbreact")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

OUT_ENV = "MBREACT_OUT"

NUMERICAL_ERRORS = (
    pes.NonConvergence,
    quantum.BoundaryLeak,
    bohmian.OutOfGrid,
    reaction_path.PathEscape,
    reaction_path.StepUnderflow,
    reaction_path.TopologyMismatch,
    FloatingPointError,
    np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    pass


_FRONTIER = (pes.FRONTIER.slope, pes.FRONTIER.intercept)


@dataclass(frozen=True)
class SeedGrid:
    x_range: tuple = (-1.5, 1.2)
    y_range: tuple = (-0.2, 2.0)
    nx: int = 12
    ny: int = 12


@dataclass(frozen=True)
class CaraOptions:
    n_time: int = 512
    n_arc: int = 512
    t_window: tuple | None = None


@dataclass(frozen=True)
class RunConfig:
    pes: dict | None = None
    grid: quantum.GridSpec = field(default_factory=quantum.GridSpec)
    n: int = 50_000
    seed: int = 0
    sigma2: float = classical.SIGMA2
    center: tuple = classical.M3
    mass: float = classical.MASS
    p0: float = 4.0
    sweep: tuple = ()
    t_final: float = 700.0
    stride: int = 10
    workers: int = 1
    out: str = "runs"
    record: tuple = ()
    classical_rho0: bool = True
    classical_wigner: bool = True
    quantum: bool = True
    frontier: tuple = _FRONTIER
    seeds: SeedGrid = field(default_factory=SeedGrid)
    cara: CaraOptions = field(default_factory=CaraOptions)

    def model(self) -> pes.PesModel:
        return pes.muller_brown() if self.pes is None else pes.pes_from_mapping(self.pes)

    def line(self) -> pes.FrontierLine:
        return pes.FrontierLine(*self.frontier)

    def ensemble(self, p0: float, sampling: str = "rho0") -> classical.EnsembleSpec:
        return classical.EnsembleSpec(
            n=self.n, sampling=sampling, center=self.center, sigma2=self.sigma2, p0=p0, mass=self.mass, seed=self.seed
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return json.loads(json.dumps(d))

    def physics_hash(self) -> str:
        """sha256 of the configuration, ignoring where outputs go and worker count."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# (section, key) -> (RunConfig attribute, kind)
_FIELDS = {
    ("grid", "x_range"): ("grid.x_range", "pair"),
    ("grid", "y_range"): ("grid.y_range", "pair"),
    ("grid", "nx"): ("grid.nx", "int"),
    ("grid", "ny"): ("grid.ny", "int"),
    ("grid", "dt"): ("grid.dt", "float"),
    ("ensemble", "n"): ("n", "int"),
    ("ensemble", "seed"): ("seed", "int"),
    ("ensemble", "sigma2"): ("sigma2", "float"),
    ("ensemble", "center"): ("center", "pair"),
    ("ensemble", "mass"): ("mass", "float"),
    ("run", "p0"): ("p0", "float"),
    ("run", "sweep"): ("sweep", "floats"),
    ("run", "t_final"): ("t_final", "float"),
    ("run", "stride"): ("stride", "int"),
    ("run", "workers"): ("workers", "int"),
    ("run", "out"): ("out", "str"),
    ("run", "record"): ("record", "ints"),
    ("toggles", "classical_rho0"): ("classical_rho0", "bool"),
    ("toggles", "classical_wigner"): ("classical_wigner", "bool"),
    ("toggles", "quantum"): ("quantum", "bool"),
    ("frontier", "slope"): ("frontier.0", "float"),
    ("frontier", "intercept"): ("frontier.1", "float"),
    ("stationary", "x_range"): ("seeds.x_range", "pair"),
    ("stationary", "y_range"): ("seeds.y_range", "pair"),
    ("stationary", "nx"): ("seeds.nx", "int"),
    ("stationary", "ny"): ("seeds.ny", "int"),
    ("caratheodory", "n_time"): ("cara.n_time", "int"),
    ("caratheodory", "n_arc"): ("cara.n_arc", "int"),
    ("caratheodory", "t_window"): ("cara.t_window", "pair?"),
}
_SECTIONS = {s for s, _ in _FIELDS} | {"pes"}


def _convert(value, kind: str):
    if kind == "pair?" and value is None:
        return None
    if kind == "bool":
        if not isinstance(value, bool):
            raise TypeError("expected true or false")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("expected an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("expected a number")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise TypeError("expected a string")
        return value
    if kind in ("pair", "pair?"):
        if not isinstance(value, list) or len(value) != 2:
            raise TypeError("expected a list of two numbers")
        return tuple(_convert(v, "float") for v in value)
    if kind == "floats":
        if not isinstance(value, list):
            raise TypeError("expected a list of numbers")
        return tuple(_convert(v, "float") for v in value)
    if kind == "ints":
        if not isinstance(value, list):
            raise TypeError("expected a list of integers")
        return tuple(_convert(v, "int") for v in value)
    raise AssertionError(kind)


def _key_lines(text: str) -> dict:
    """Map (section,) and (section, key) to 1-based line numbers."""
    lines = {}
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    if not isinstance(root, yaml.MappingNode):
        return lines
    for knode, vnode in root.value:
        lines[(knode.value,)] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for k2, _ in vnode.value:
                lines[(knode.value, k2.value)] = k2.start_mark.line + 1
    return lines


def _set(cfg: RunConfig, attr: str, value) -> RunConfig:
    head, _, tail = attr.partition(".")
    if not tail:
        return replace(cfg, **{head: value})
    sub = getattr(cfg, head)
    if head == "frontier":
        f = list(sub)
        f[int(tail)] = value
        return replace(cfg, frontier=tuple(f))
    if head == "grid":
        return replace(cfg, grid=sub.with_(**{tail: value}))
    return replace(cfg, **{head: replace(sub, **{tail: value})})


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err.strerror})") from err
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML: {getattr(err, 'problem', err)}") from err
    return config_from_mapping(data or {}, lines, str(path))


def config_from_mapping(data, lines=None, source="<config>") -> RunConfig:
    lines = lines or {}

    def where(*key):
        ln = lines.get(key)
        return f"{source}:{ln}" if ln else source

    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    cfg = RunConfig()
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{where(section)}: unknown section '{section}'")
        if not isinstance(body, dict):
            raise ConfigError(f"{where(section)}: section '{section}' must be a mapping")
        if section == "pes":
            try:
                pes.pes_from_mapping(body)
            except (ValueError, TypeError, KeyError, IndexError) as err:
                raise ConfigError(f"{where(section)}: {err}") from err
            cfg = replace(cfg, pes=body)
            continue
        for key, value in body.items():
            spec = _FIELDS.get((section, key))
            if spec is None:
                raise ConfigError(f"{where(section, key)}: unknown field '{section}.{key}'")
            attr, kind = spec
            try:
                cfg = _set(cfg, attr, _convert(value, kind))
            except (TypeError, ValueError) as err:
                raise ConfigError(f"{where(section, key)}: field '{section}.{key}': {err}") from err
    return check_config(cfg)


def check_config(cfg: RunConfig) -> RunConfig:
    problems = []
    if cfg.n < 1:
        problems.append("ensemble.n must be at least 1")
    if cfg.t_final <= 0:
        problems.append("run.t_final must be positive")
    if cfg.stride < 1:
        problems.append("run.stride must be at least 1")
    if cfg.workers < 1:
        problems.append("run.workers must be at least 1")
    if cfg.sigma2 <= 0 or cfg.mass <= 0:
        problems.append("ensemble.sigma2 and ensemble.mass must be positive")
    if cfg.seeds.nx < 1 or cfg.seeds.ny < 1:
        problems.append("stationary seed grid is empty")
    if any(i < 0 or i >= cfg.n for i in cfg.record):
        problems.append(f"run.record ids must lie in [0, {cfg.n})")
    if problems:
        raise ConfigError("; ".join(problems))
    return replace(cfg, grid=cfg.grid.with_(mass=cfg.mass))


# ---------------------------------------------------------------- output


def _versions() -> dict:
    import numba
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "pyyaml": yaml.__version__,
        "mbreact": _package_version(),
    }


def _package_version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


class Outputs:
    """Collects written files and writes the manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.results: dict = {}

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def add(self, *paths) -> None:
        self.files.extend(Path(p) for p in paths)

    def write_manifest(self) -> Path:
        digests = {}
        for p in sorted(set(self.files)):
            for f in (p, Path(str(p) + ".json")):
                if f.exists():
                    digests[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
        manifest = {
            "command": self.command,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.physics_hash(),
            "seed": self.cfg.seed,
            "versions": _versions(),
            "files": digests,
            "results": self.results,
        }
        path = self.dir / f"manifest_{self.command}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def _tag(p0: float) -> str:
    return f"p0_{p0:g}"


def _write_table(path: Path, header, rows) -> None:
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else (v if isinstance(v, str) else repr(float(v))) for v in row) + "\n")


# ---------------------------------------------------------------- commands


def cmd_stationary(cfg: RunConfig, out: Outputs) -> None:
    model = cfg.model()
    s = cfg.seeds
    seeds = pes.grid_seeds(s.x_range, s.y_range, s.nx, s.ny)
    failures = []
    points = pes.find_stationary_points(model, seeds, failures=failures)
    ref = {}
    for name, (xy, _) in pes.REFERENCE_POINTS.items():
        ref[name] = np.array(xy)

    def label(p):
        for name, xy in ref.items():
            if np.hypot(*(p.xy - xy)) < 1e-2:
                return name
        return ""

    order = list(ref)
    labelled = sorted(points, key=lambda p: (order.index(label(p)) if label(p) else len(order), p.position))
    rows = [
        (label(p), p.kind, p.position[0], p.position[1], p.energy, *p.hessian_eigenvalues) for p in labelled
    ]
    _write_table(out.path("stationary.csv"), ["label", "kind", "x", "y", "V", "lambda1", "lambda2"], rows)
    out.results["n_points"] = len(points)
    out.results["n_nonconverged_seeds"] = len(failures)


def cmd_rp(cfg: RunConfig, out: Outputs) -> None:
    path = reaction_path.build_full_path(cfg.model())
    path.to_csv(out.path("reaction_path.csv"))
    out.results["length"] = path.length
    out.results["marks"] = path.marks


def cmd_energy_diagram(cfg: RunConfig, out: Outputs) -> None:
    model = cfg.model()
    grid = cfg.sweep or tuple(np.round(np.arange(0.0, 12.0001, 0.25), 10))
    spec = cfg.ensemble(0.0)
    rows = classical.mean_energy_diagram(model, grid, spec)
    _write_table(out.path("energy_diagram.csv"), ["p0", "E_mean", "E_mean_minus_delta", "E_point"], rows)
    sp = pes.locate_reference_points(model)
    levels = {k: sp[k].energy for k in ("TS1", "TS2")}
    _write_table(out.path("energy_levels.csv"), ["name", "V"], [(k, v) for k, v in levels.items()])
    out.results["delta"] = classical.spreading_ratio(spec.mass, spec.sigma2[0], spec.hbar)
    out.results["crossing"] = {k: classical.crossing_momentum(model, spec, v) for k, v in levels.items()}


def _run_classical(cfg, out, model, p0, sampling):
    spec = cfg.ensemble(p0, sampling)
    q, p = classical.sample(spec)
    meta = {"kind": f"classical-{sampling}", "p0": p0, "n": cfg.n, "seed": cfg.seed}
    run = classical.run_classical_ensemble(
        model, q, p, cfg.line(), cfg.mass, t_final=cfg.t_final, stride=cfg.stride,
        record_ids=cfg.record, workers=cfg.workers, meta=meta,
    )
    name = f"classical_{sampling}_{_tag(p0)}"
    run.series.to_csv(out.path(f"{name}.csv"))
    for i, tr in run.trajectories.items():
        tr.to_csv(out.path(f"traj_{name}_id{i}.csv"), model, cfg.mass)
    out.results[name] = {
        "W_final": float(run.series.W[-1]),
        "Wbar_final": float(run.series.Wbar[-1]),
        "max_energy_drift": run.max_energy_drift,
    }
    return run


def _initial_field(cfg, p0):
    return quantum.initial_packet(cfg.grid, cfg.center, cfg.sigma2, (-p0, p0))


def _run_bohmian(cfg, out, model, p0):
    spec = cfg.ensemble(p0, "rho0")
    q, _ = classical.sample(spec)
    meta = {"kind": "bohmian", "p0": p0, "n": cfg.n, "seed": cfg.seed}
    run = bohmian.run_bohmian_ensemble(
        model, _initial_field(cfg, p0), q, cfg.t_final, cfg.stride, line=cfg.line(), record_ids=cfg.record, meta=meta
    )
    name = f"bohmian_{_tag(p0)}"
    run.series.to_csv(out.path(f"{name}.csv"))
    for i, tr in run.trajectories.items():
        tr.to_csv(out.path(f"traj_{name}_id{i}.csv"), model, cfg.mass)
    out.results[name] = {
        "P_final": float(run.series.P[-1]),
        "W_final": float(run.series.W[-1]),
        "Wbar_final": float(run.series.Wbar[-1]),
        "clamps": run.clamps,
    }
    return run


def _p0_list(cfg):
    return cfg.sweep or (cfg.p0,)


def cmd_classical(cfg: RunConfig, out: Outputs) -> None:
    model = cfg.model()
    samplings = [s for s, on in (("rho0", cfg.classical_rho0), ("wigner", cfg.classical_wigner)) if on]
    if not samplings:
        raise ConfigError("both classical toggles are off")
    for p0 in _p0_list(cfg):
        for s in samplings:
            _run_classical(cfg, out, model, p0, s)


def cmd_quantum(cfg: RunConfig, out: Outputs) -> None:
    """Wave-packet propagation only: P, norm and <H> along the run."""
    model = cfg.model()
    line = cfg.line()
    for p0 in _p0_list(cfg):
        field0 = _initial_field(cfg, p0)
        prop = quantum.SplitOperator(model, cfg.grid)
        mask = quantum.products_mask(cfg.grid, line)
        n = quantum.n_steps_for(cfg.t_final, cfg.grid.dt)
        rows = []
        last = field0
        for f in prop.run(field0, n, cfg.stride):
            rows.append((f.t, quantum.restricted_norm(f, line, mask), f.norm(), quantum.energy_expectation(model, f, prop.V)))
            last = f
        name = f"quantum_{_tag(p0)}"
        _write_table(out.path(f"{name}.csv"), ["t", "P", "norm", "E"], rows)
        last.save(out.path(f"psi_final_{_tag(p0)}.bin"))
        e = np.array([r[3] for r in rows])
        nrm = np.array([r[2] for r in rows])
        out.results[name] = {
            "P_final": rows[-1][1],
            "norm_drift": float(np.max(np.abs(nrm - nrm[0]))),
            "energy_drift": float(np.max(np.abs(e - e[0]))),
            "max_edge_leak": prop.max_leak,
        }


def cmd_bohmian(cfg: RunConfig, out: Outputs) -> None:
    """Bohmian ensemble; recorded ids also get a classical partner and a pair file."""
    model = cfg.model()
    for p0 in _p0_list(cfg):
        run = _run_bohmian(cfg, out, model, p0)
        spec = cfg.ensemble(p0, "rho0")
        pairs = {}
        for i, qt in run.trajectories.items():
            q0, p0v = classical.sample(spec, [i])
            ct = classical.integrate_classical(model, (q0[0], p0v[0]), cfg.mass, t_final=cfg.t_final, stride=cfg.stride)
            ct = Trajectory(ct.t, ct.q, ct.p, kind="classical", id=i)
            ct.to_csv(out.path(f"traj_classical_rho0_{_tag(p0)}_id{i}.csv"), model, cfg.mass)
            d = analysis.paired_difference(qt, ct, model, cfg.mass)
            d.to_csv(out.path(f"pair_{_tag(p0)}_id{i}.csv"))
            line = cfg.line()
            pairs[str(i)] = {
                "quantum_reactive": bool(line.above(qt.x[-1], qt.y[-1])),
                "classical_reactive": bool(line.above(ct.x[-1], ct.y[-1])),
                "quantum_energy_range": float(np.ptp(d.e_quantum)),
                "classical_energy_range": float(np.ptp(d.e_classical)),
            }
        if pairs:
            out.results[f"pairs_{_tag(p0)}"] = pairs


def cmd_sweep(cfg: RunConfig, out: Outputs) -> None:
    """Asymptotic Wbar for every p0 in the sweep, per dynamics."""
    model = cfg.model()
    rows = []
    for p0 in _p0_list(cfg):
        log.info("sweep p0=%g", p0)
        wb = _run_bohmian(cfg, out, model, p0).series.Wbar[-1] if cfg.quantum else None
        wr = _run_classical(cfg, out, model, p0, "rho0").series.Wbar[-1] if cfg.classical_rho0 else None
        ww = _run_classical(cfg, out, model, p0, "wigner").series.Wbar[-1] if cfg.classical_wigner else None
        rows.append((p0, wb, wr, ww))
    summary = out.path("sweep_summary.csv")
    analysis.write_sweep_summary(summary, rows)


def cmd_cara(cfg: RunConfig, out: Outputs, trajectory: str | None = None) -> None:
    if trajectory is None:
        raise ConfigError("cara needs --trajectory FILE")
    try:
        traj = Trajectory.from_csv(trajectory)
    except OSError as err:
        raise ConfigError(f"{trajectory}: cannot read trajectory ({err.strerror})") from err
    path = reaction_path.build_full_path(cfg.model())
    c = cfg.cara
    window = c.t_window or analysis.arrival_window(traj, path)
    mat = analysis.caratheodory(traj, path, c.n_time, c.n_arc, window)
    stem = Path(trajectory).stem
    target = out.path(f"cara_{stem}.bin")
    mat.save(target)
    out.results[f"cara_{stem}"] = {
        "t_window": list(window),
        "diagonal_band_fraction": analysis.diagonal_band_fraction(mat),
    }


COMMANDS = {
    "stationary": cmd_stationary,
    "rp": cmd_rp,
    "energy-diagram": cmd_energy_diagram,
    "classical": cmd_classical,
    "quantum": cmd_quantum,
    "bohmian": cmd_bohmian,
    "sweep": cmd_sweep,
    "cara": cmd_cara,
}


# ---------------------------------------------------------------- argv


def _parse_grid(text: str):
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NXxNY, got {text!r}") from None
    return nx, ny


def _parse_floats(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--p0", type=float, help="initial momentum magnitude (a.u.)")
    common.add_argument("--sweep", type=_parse_floats, metavar="LIST", help="comma-separated p0 values")
    common.add_argument("--n", type=int, help="ensemble size")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR", help=f"output directory (else ${OUT_ENV}, else config)")
    common.add_argument("--workers", type=int, help="processes for classical ensembles")
    common.add_argument("--grid", type=_parse_grid, metavar="NXxNY")
    common.add_argument("--dt", type=float)
    common.add_argument("--tfinal", type=float)
    common.add_argument("--record", type=_parse_ints, metavar="IDS", help="trajectory ids to write out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mbreact", description="Reaction dynamics on the Mueller-Brown surface.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "stationary": "locate stationary points",
        "rp": "steepest-descent reaction path M3 -> M1",
        "energy-diagram": "mean ensemble energy against p0",
        "classical": "classical rho0 / Wigner ensembles",
        "quantum": "wave-packet propagation and restricted norm",
        "bohmian": "Bohmian ensemble with P, W and Wbar",
        "sweep": "asymptotic Wbar over a p0 list",
        "cara": "Caratheodory matrix of a trajectory file",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "cara":
            p.add_argument("--trajectory", metavar="FILE", required=True)
            p.add_argument("--t-window", type=_parse_floats, metavar="T0,T1")
    return parser


def resolve_config(args, env=None) -> RunConfig:
    env = os.environ if env is None else env
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    for flag, attr in (("p0", "p0"), ("n", "n"), ("seed", "seed"), ("workers", "workers"), ("record", "record")):
        v = getattr(args, flag)
        if v is not None:
            changes[attr] = v
    if args.sweep is not None:
        changes["sweep"] = args.sweep
    if args.tfinal is not None:
        changes["t_final"] = args.tfinal
    if env.get(OUT_ENV):
        changes["out"] = env[OUT_ENV]
    if args.out is not None:
        changes["out"] = args.out
    grid = {}
    if args.grid is not None:
        grid["nx"], grid["ny"] = args.grid
    if args.dt is not None:
        grid["dt"] = args.dt
    try:
        if grid:
            changes["grid"] = cfg.grid.with_(**grid)
        if getattr(args, "t_window", None) is not None:
            if len(args.t_window) != 2:
                raise ConfigError("--t-window expects two numbers")
            changes["cara"] = replace(cfg.cara, t_window=args.t_window)
        return check_config(replace(cfg, **changes))
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from err


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Outputs(cfg, args.command)
        extra = {"trajectory": args.trajectory} if args.command == "cara" else {}
        COMMANDS[args.command](cfg, out, **extra)
        out.write_manifest()
    except (ConfigError, quantum.PacketTooWide) as err:
        print(f"mbreact: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as err:
        print(f"mbreact: numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"mbreact: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
