import numpy as np
import pytest

from mbreact import pes
from mbreact.pes import (
    FRONTIER,
    FrontierLine,
    NonConvergence,
    evaluate,
    find_stationary_points,
    gradient,
    grid_seeds,
    hessian,
    in_products_region,
    load_pes_config,
    muller_brown,
    newton_stationary,
    pes_from_mapping,
    pes_to_mapping,
)


@pytest.mark.parametrize(
    "point, expected",
    [((0.623, 0.028), -0.108), ((-0.822, 0.624), -0.041), ((-0.558, 1.442), -0.147)],
)
def test_tabulated_energies(mb, point, expected):
    assert abs(evaluate(mb, point) - expected) <= 1e-3


def test_energy_scale_matches_raw_minima():
    # raw surface minima -146.7, -80.8, -108.2 map onto the hartree values
    raw = muller_brown(energy_scale=1.0)
    for name, (xy, e) in pes.REFERENCE_POINTS.items():
        if not name.startswith("M"):
            continue
        x = newton_stationary(raw, xy)
        assert abs(1e-3 * evaluate(raw, x) - e) <= 1e-3


@pytest.mark.parametrize("point", [(-0.558, 1.442), (0.212, 0.293)])
def test_gradient_vanishes_at_stationary_points(mb, point):
    np.testing.assert_allclose(gradient(mb, point), 0.0, atol=1e-3)


@pytest.mark.parametrize("point", [(0.0, 0.0), (-0.3, 0.9), (0.5, 1.7)])
def test_gradient_matches_central_difference(mb, point):
    h = 1e-6
    x, y = point
    fd = np.array(
        [
            (evaluate(mb, (x + h, y)) - evaluate(mb, (x - h, y))) / (2 * h),
            (evaluate(mb, (x, y + h)) - evaluate(mb, (x, y - h))) / (2 * h),
        ]
    )
    np.testing.assert_allclose(gradient(mb, point), fd, rtol=1e-6)


def test_hessian_matches_gradient_differences(mb):
    h = 1e-6
    x = np.array([0.1, 0.4])
    H = hessian(mb, x)
    fd = np.column_stack(
        [(gradient(mb, x + h * e) - gradient(mb, x - h * e)) / (2 * h) for e in np.eye(2)]
    )
    np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-9)


def test_hessian_signatures(mb):
    w_min = np.linalg.eigvalsh(hessian(mb, (0.623, 0.028)))
    assert np.all(w_min > 0)
    w_ts = np.linalg.eigvalsh(hessian(mb, (-0.822, 0.624)))
    assert np.sum(w_ts < 0) == 1
    H = hessian(mb, (0.3, -0.2))
    assert H[0, 1] == H[1, 0]


def test_vectorized_energy_matches_pointwise(mb):
    xs = np.linspace(-1.5, 1.0, 7)
    ys = np.linspace(-0.3, 2.0, 7)
    X, Y = np.meshgrid(xs, ys)
    V = mb.energy(X, Y)
    assert V.shape == X.shape
    assert V[3, 2] == pytest.approx(evaluate(mb, (X[3, 2], Y[3, 2])), rel=1e-14)


@pytest.mark.parametrize(
    "seed, expected, kind",
    [
        ((0.6, 0.0), (0.623, 0.028), "minimum"),
        ((-0.8, 0.6), (-0.822, 0.624), "saddle"),
        ((-0.05, 0.47), (-0.050, 0.467), "minimum"),
    ],
)
def test_newton_from_nearby_seeds(mb, seed, expected, kind):
    (pt,) = find_stationary_points(mb, [seed])
    np.testing.assert_allclose(pt.position, expected, atol=1e-3)
    assert pt.kind == kind


def test_grid_search_finds_five_points(mb):
    points = find_stationary_points(mb, grid_seeds())
    kinds = sorted(p.kind for p in points)
    assert kinds.count("minimum") == 3
    assert kinds.count("saddle") == 2


def test_nonconvergence_is_per_seed(mb):
    failures = []
    found = find_stationary_points(mb, [(0.6, 0.0), (0.2, 0.3)], max_iter=1, failures=failures)
    assert len(found) + len(failures) == 2
    assert all(isinstance(f, NonConvergence) for f in failures)
    with pytest.raises(NonConvergence):
        newton_stationary(mb, (0.0, 1.0), max_iter=1)


def test_empty_seed_list_rejected(mb):
    with pytest.raises(ValueError):
        find_stationary_points(mb, [])


def test_scaling_keeps_positions(mb):
    raw = mb.scaled(1.0)
    a = find_stationary_points(mb, [(0.6, 0.0)])[0]
    b = find_stationary_points(raw, [(0.6, 0.0)])[0]
    np.testing.assert_allclose(a.position, b.position, atol=1e-10)
    assert b.energy == pytest.approx(1000 * a.energy, rel=1e-12)


def test_frontier_membership():
    assert in_products_region(FRONTIER, (-0.558, 1.442))
    assert not in_products_region(FRONTIER, (0.623, 0.028))
    x = 0.25
    assert not in_products_region(FRONTIER, (x, FRONTIER.slope * x + FRONTIER.intercept))


def test_frontier_vectorized():
    line = FrontierLine(1.0, 0.0)
    np.testing.assert_array_equal(line.above([0, 0, 1], [1, -1, 1]), [True, False, False])


def test_config_round_trip(tmp_path, mb):
    import yaml

    path = tmp_path / "surface.yaml"
    path.write_text(yaml.safe_dump(pes_to_mapping(mb)))
    model = load_pes_config(path)
    assert model == mb


def test_config_length_mismatch():
    with pytest.raises(ValueError, match="pes.a"):
        pes_from_mapping({"amplitudes": [1.0, 2.0], "a": [1.0], "b": [0, 0], "c": [0, 0], "centers": [[0, 0], [1, 1]]})


def test_mueller_brown_terms_decay(mb):
    # the fourth term grows away from its center
    assert [t.is_decaying() for t in mb.terms] == [True, True, True, False]
