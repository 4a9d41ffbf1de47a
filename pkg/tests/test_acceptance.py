"""Acceptance checks for the whole package.

Every test prints one ``PASS`` or ``FAIL`` line for its criterion and then
asserts it. Run just this file with

    pytest tests/test_acceptance.py -v -s

The full suite takes about 25 minutes on one core. The p0 sweep uses the
reduced 5000-particle ensemble unless ``MBREACT_FULL_SWEEP=1`` is set, in
which case every sweep point uses 50000 particles (several hours).
"""

import json
import os

import numpy as np
import pytest

from mbreact import analysis, cli
from mbreact.bohmian import equivariance_check, run_bohmian_ensemble
from mbreact.classical import (
    M3,
    MASS,
    SIGMA2,
    EnsembleSpec,
    crossing_momentum,
    run_classical_ensemble,
    sample,
    spreading_ratio,
)
from mbreact.pes import FRONTIER, PesModel, find_stationary_points, grid_seeds, locate_reference_points, muller_brown
from mbreact.quantum import GridSpec, SplitOperator, energy_expectation, initial_packet, n_steps_for, propagate, restricted_norm
from mbreact.reaction_path import build_full_path
from mbreact.trajectory import Trajectory

pytestmark = pytest.mark.slow

N = 50_000
N_SMOKE = 5_000
SEED = 0
T_FINAL = 700.0
SWEEP = tuple(float(p) for p in range(1, 13))
SNAPSHOTS = (100.0, 400.0, 700.0)

# scaled energies and positions of the five stationary points
REFERENCE = {
    "M1": ((-0.558, 1.442), -0.147),
    "M2": ((-0.050, 0.467), -0.081),
    "M3": ((0.623, 0.028), -0.108),
    "TS1": ((-0.822, 0.624), -0.041),
    "TS2": ((0.212, 0.293), -0.072),
}


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def mb():
    return muller_brown()


@pytest.fixture(scope="module")
def path(mb):
    return build_full_path(mb)


def _ensembles(model, p0, n, snapshots=(), keep_fields=False):
    """Bohmian, classical rho0 and classical Wigner runs from one seed."""
    spec = EnsembleSpec(n=n, p0=p0, seed=SEED)
    q, p = sample(spec)
    field0 = initial_packet(GridSpec(), M3, SIGMA2, (-p0, p0))
    bohm = run_bohmian_ensemble(
        model, field0, q, T_FINAL, line=FRONTIER, snapshot_times=snapshots, keep_fields=keep_fields
    )
    rho0 = run_classical_ensemble(model, q, p, FRONTIER, t_final=T_FINAL)
    qw, pw = sample(spec.with_(sampling="wigner"))
    wigner = run_classical_ensemble(model, qw, pw, FRONTIER, t_final=T_FINAL)
    return {"bohm": bohm, "rho0": rho0.series, "wigner": wigner.series}


@pytest.fixture(scope="module")
def full_runs(mb):
    return {p0: _ensembles(mb, p0, N, SNAPSHOTS, keep_fields=True) for p0 in (4.0, 10.0)}


@pytest.fixture(scope="module")
def sweep(mb):
    n = N if os.environ.get("MBREACT_FULL_SWEEP") == "1" else N_SMOKE
    rows = {}
    for p0 in SWEEP:
        r = _ensembles(mb, p0, n)
        rows[p0] = (r["bohm"].series.Wbar[-1], r["rho0"].Wbar[-1], r["wigner"].Wbar[-1])
    return n, rows


def _overtake(p0s, diff):
    """p0 of the first sign change of ``diff`` from <= 0 to > 0, by linear
    interpolation; None if the difference never turns positive."""
    for k in range(1, len(diff)):
        if diff[k - 1] <= 0 < diff[k]:
            return p0s[k - 1] + (p0s[k] - p0s[k - 1]) * (-diff[k - 1]) / (diff[k] - diff[k - 1])
    return None


# ---------------------------------------------------------------- 1-3: statics


def test_criterion_1_stationary_points(capsys, mb):
    found = find_stationary_points(mb, grid_seeds())
    worst_q = worst_e = 0.0
    ok = len(found) == 5
    for name, (xy, e) in REFERENCE.items():
        dist = [np.hypot(*(p.xy - xy)) for p in found]
        k = int(np.argmin(dist))
        worst_q = max(worst_q, dist[k])
        worst_e = max(worst_e, abs(found[k].energy - e))
        kind = "saddle" if name.startswith("TS") else "minimum"
        ok &= found[k].kind == kind
    ok &= worst_q <= 1e-3 and worst_e <= 1e-3
    report(capsys, 1, ok, f"{len(found)} points, max position error {worst_q:.2e}, max energy error {worst_e:.2e}")


def test_criterion_2_reaction_path_profile(capsys, path):
    v = path.energy
    d = np.diff(v)
    turns = np.flatnonzero(np.sign(d[1:]) != np.sign(d[:-1])) + 1
    pattern = ["min"] + ["max" if d[i - 1] > 0 else "min" for i in turns] + ["min"]
    extrema = np.concatenate([[0], turns, [len(v) - 1]])
    expected = [REFERENCE[k][1] for k in ("M3", "TS2", "M2", "TS1", "M1")]
    ok = pattern == ["min", "max", "min", "max", "min"]
    err = np.max(np.abs(v[extrema] - expected)) if ok else np.inf
    ok &= err <= 1e-3
    marks = [path.marks[k] for k in ("M3", "TS2", "M2", "TS1", "M1")]
    monotone = all(
        np.all(np.diff(v[a : b + 1]) * (1 if k % 2 == 0 else -1) >= 0) for k, (a, b) in enumerate(zip(marks, marks[1:]))
    )
    ok &= monotone
    report(capsys, 2, ok, f"sequence {'-'.join(pattern)}, max level error {err:.2e}, monotone segments {monotone}")


def test_criterion_3_energy_diagram(capsys, mb):
    spec = EnsembleSpec(n=N, seed=SEED)
    sp = locate_reference_points(mb)
    ts2 = crossing_momentum(mb, spec, sp["TS2"].energy)
    ts1 = crossing_momentum(mb, spec, sp["TS1"].energy)
    delta = spreading_ratio()
    ok = abs(ts2 - 3.5) <= 0.5 and 8.0 <= ts1 <= 9.5 and abs(delta - 0.010893) <= 1e-6
    report(capsys, 3, ok, f"crosses TS2 at p0={ts2:.3f}, TS1 at p0={ts1:.3f}, delta={delta:.7f}")


# ---------------------------------------------------------------- 4: wave packet


def _final_products(model, grid, p0):
    f0 = initial_packet(grid, M3, SIGMA2, (-p0, p0))
    *_, last = propagate(model, f0, T_FINAL, snapshot_stride=n_steps_for(T_FINAL, grid.dt))
    assert last.t == pytest.approx(T_FINAL)
    return restricted_norm(last, FRONTIER)


def test_criterion_4_quantum_propagation(capsys, mb):
    free = PesModel(terms=())
    g = GridSpec(x_range=(-12.0, 12.0), y_range=(-12.0, 12.0), nx=512, ny=512, dt=7.0)
    *_, f = SplitOperator(free, g).run(initial_packet(g, (0.0, 0.0), SIGMA2, (0.0, 0.0)), 100, 100)
    width = np.sqrt(f.position_variance()[0])
    exact = np.sqrt(SIGMA2) * np.sqrt(1 + (T_FINAL / (2 * MASS * SIGMA2)) ** 2)
    width_err = abs(width / exact - 1)

    p0 = 12.0
    base = GridSpec()
    f0 = initial_packet(base, M3, SIGMA2, (-p0, p0))
    prop = SplitOperator(mb, base)
    norms, energies = [], []
    for fk in prop.run(f0, 7000, 100):
        norms.append(fk.norm())
        energies.append(energy_expectation(mb, fk, prop.V))
        last = fk
    p_base = restricted_norm(last, FRONTIER)
    norm_drift = np.max(np.abs(np.array(norms) - norms[0]))
    e_drift = np.max(np.abs(np.array(energies) - energies[0]))
    p_fine = _final_products(mb, base.with_(nx=512, ny=512), p0)
    p_half = _final_products(mb, base.with_(dt=0.05), p0)
    conv = max(abs(p_fine - p_base), abs(p_half - p_base))

    ok = width_err <= 1e-3 and norm_drift <= 1e-8 and e_drift <= 1e-6 and conv <= 1e-3
    report(
        capsys, 4, ok,
        f"width error {width_err:.1e}, norm drift {norm_drift:.1e}, energy drift {e_drift:.1e}, "
        f"P(700) {p_base:.6f} vs 512^2 {p_fine:.6f} vs dt/2 {p_half:.6f}",
    )


# ---------------------------------------------------------------- 5-7: ensembles


def test_criterion_5_equivariance(capsys, full_runs):
    fracs = {}
    for p0, r in full_runs.items():
        run = r["bohm"]
        for t in SNAPSHOTS:
            fracs[(p0, t)], _ = equivariance_check(run.positions[t], run.fields[t])
    worst = min(fracs.values())
    clamps = {p0: r["bohm"].clamps for p0, r in full_runs.items()}
    report(capsys, 5, worst >= 0.99, f"worst cell agreement {worst:.4f} over p0 in {{4, 10}}, t in {SNAPSHOTS}; clamps {clamps}")


def test_criterion_6_restricted_norm_matches_count(capsys, full_runs):
    ok = True
    ratios = {}
    for p0, r in full_runs.items():
        s = r["bohm"].series
        bound = 3 * np.sqrt(s.P * (1 - s.P) / N)
        gap = np.abs(s.P - s.W)
        ok &= bool(np.all(gap <= bound))
        ratios[p0] = float(np.max(gap[bound > 0] / bound[bound > 0]))
    report(capsys, 6, ok, "max |P-W| / 3 sigma: " + ", ".join(f"p0={p:g}: {v:.3f}" for p, v in ratios.items()))


def _sweep_orderings(rows):
    """Classical above Bohmian below p0 = 4, and the two overtaking points."""
    p0s = sorted(rows)
    below = [p for p in p0s if p < 4.0]
    classical_above = all(rows[p][1] > rows[p][0] and rows[p][2] > rows[p][0] for p in below)
    wb, wr, ww = (np.array([rows[p][k] for p in p0s]) for k in range(3))
    cross_rho0 = _overtake(p0s, wb - wr)
    cross_wig = _overtake(p0s, wb - ww)
    return classical_above, cross_rho0, cross_wig


def test_criterion_7_population_curves(capsys, full_runs, sweep):
    r4, r10 = full_runs[4.0], full_runs[10.0]
    a_full = r4["bohm"].series.Wbar[-1] < r4["wigner"].Wbar[-1]
    wb, wr, ww = r10["bohm"].series.W[-1], r10["rho0"].W[-1], r10["wigner"].W[-1]
    b_full = abs(wb - ww) < abs(wb - wr)

    n_sweep, rows = sweep
    classical_above, cross_rho0, cross_wig = _sweep_orderings(rows)
    a_sweep = rows[4.0][0] < rows[4.0][2]
    c = cross_rho0 is not None and 3 <= cross_rho0 <= 5 and cross_wig is not None and 7.5 <= cross_wig <= 10
    ok = a_full and b_full and a_sweep and classical_above and c
    table = "; ".join(f"{p:g}: {b:.4f}/{r:.4f}/{w:.4f}" for p, (b, r, w) in sorted(rows.items()))
    report(
        capsys, 7, ok,
        f"(a) p0=4 Wbar Bohm {r4['bohm'].series.Wbar[-1]:.4f} < Wigner {r4['wigner'].Wbar[-1]:.4f}: {a_full}, "
        f"classical above Bohm for p0<4 in sweep: {classical_above}; "
        f"(b) p0=10 W Bohm {wb:.4f}, Wigner {ww:.4f}, rho0 {wr:.4f}: {b_full}; "
        f"(c) Bohm overtakes rho0 at {cross_rho0}, Wigner at {cross_wig}; "
        f"sweep N={n_sweep} Wbar Bohm/rho0/Wigner {table}",
    )


# ---------------------------------------------------------------- 8-9: pairs at p0 = 9


@pytest.fixture(scope="module")
def pairs(mb):
    """Quantum trajectories with classical partners from identical starts."""
    n = 300
    p0 = 9.0
    spec = EnsembleSpec(n=n, p0=p0, seed=SEED)
    q, p = sample(spec)
    field0 = initial_packet(GridSpec(), M3, SIGMA2, (-p0, p0))
    bohm = run_bohmian_ensemble(mb, field0, q, T_FINAL, line=FRONTIER, record_ids=range(n))
    cl = run_classical_ensemble(mb, q, p, FRONTIER, t_final=T_FINAL, stride=1, record_ids=range(n))
    out = []
    for i in range(n):
        qt, ct = bohm.trajectories[i], cl.trajectories[i]
        drift = float(np.ptp(ct.energy(mb, MASS)))
        ct = Trajectory(ct.t[::10], ct.q[::10], ct.p[::10], kind="classical", id=i)
        d = analysis.paired_difference(qt, ct, mb, MASS)
        out.append(
            {
                "id": i,
                "quantum": qt,
                "quantum_reactive": bool(FRONTIER.above(qt.x[-1], qt.y[-1])),
                "quantum_entered": bool(FRONTIER.above(qt.x, qt.y).any()),
                "classical_entered": bool(FRONTIER.above(ct.x, ct.y).any()),
                "classical_drift": drift,
                "quantum_range": float(np.ptp(d.e_quantum)),
            }
        )
    return out


def test_criterion_8_trajectory_pairs(capsys, pairs):
    chosen = [r for r in pairs if r["quantum_reactive"] and not r["classical_entered"]]
    cl_drift = max(r["classical_drift"] for r in pairs)
    q_range = min(r["quantum_range"] for r in pairs)
    ok = len(chosen) >= 1 and cl_drift <= 1e-5 and q_range > 1e-4
    report(
        capsys, 8, ok,
        f"{len(chosen)} of {len(pairs)} pairs quantum reactive with classical inelastic; "
        f"max classical energy drift {cl_drift:.1e}; min quantum energy range {q_range:.1e}",
    )


def test_criterion_9_caratheodory(capsys, pairs, path):
    reactive = [r for r in pairs if r["quantum_reactive"] and not r["classical_entered"]]
    inelastic = [r for r in pairs if not r["quantum_entered"] and not r["classical_entered"]]
    assert reactive and inelastic

    def score(r):
        window = analysis.arrival_window(r["quantum"], path)
        return window, analysis.diagonal_band_fraction(analysis.caratheodory(r["quantum"], path, 512, 512, window))

    # the most direct reactive passage, and the first fully inelastic pair
    react = min(reactive, key=lambda r: analysis.path_arrival_time(r["quantum"], path) or np.inf)
    inel = inelastic[0]
    (w_r, f_r), (w_i, f_i) = score(react), score(inel)
    ok = f_r >= 0.8 and f_i < 0.8
    report(
        capsys, 9, ok,
        f"reactive id {react['id']} window {w_r[0]:g}-{w_r[1]:g}: {f_r:.3f} of rows in band; "
        f"inelastic id {inel['id']} window {w_i[0]:g}-{w_i[1]:g}: {f_i:.3f}",
    )


# ---------------------------------------------------------------- 10: determinism


def _data_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if not p.name.startswith("manifest_")}


def test_criterion_10_determinism(capsys, tmp_path):
    small = ["--n", "200", "--tfinal", "30", "--record", "3,17"]
    commands = [
        ["stationary"],
        ["rp"],
        ["energy-diagram", "--n", "2000", "--sweep", "0,4,8,12"],
        ["classical", *small, "--sweep", "4,10"],
        ["quantum", "--tfinal", "30", "--p0", "9"],
        ["bohmian", *small, "--p0", "9"],
        ["sweep", *small, "--sweep", "4,10"],
    ]
    bad = []
    for cmd in commands:
        runs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / f"{cmd[0]}_{tag}"
            assert cli.main([*cmd, "--workers", workers, "--out", str(out)]) == 0
            runs.append(_data_files(out))
        if not (runs[0] == runs[1] == runs[2]):
            bad.append(cmd[0])
        hashes = {json.loads((tmp_path / f"{cmd[0]}_{t}" / f"manifest_{cmd[0]}.json").read_text())["config_hash"] for t in "abc"}
        if len(hashes) != 1:
            bad.append(f"{cmd[0]} hash")
    traj = tmp_path / "bohmian_a" / "traj_bohmian_p0_9_id3.csv"
    cara = []
    for tag in "ab":
        out = tmp_path / f"cara_{tag}"
        assert cli.main(["cara", "--trajectory", str(traj), "--out", str(out)]) == 0
        cara.append(_data_files(out))
    if cara[0] != cara[1]:
        bad.append("cara")
    report(capsys, 10, not bad, f"{len(commands) + 1} commands rerun at 1 and 3 workers; mismatches: {bad or 'none'}")
