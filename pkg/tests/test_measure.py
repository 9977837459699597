import numpy as np
import pytest

from haartest.dyadic import Grid
from haartest.measure import (
    DegenerateMeasureError,
    MeshMeasure,
    custom_cells,
    doubling_constant,
    lebesgue,
    load_measure_csv,
    near_point_mass,
    power_weight,
    random_dyadic_doubling,
    save_measure_csv,
)


def test_lebesgue_masses():
    g = Grid(dimension=1, max_level=4)
    mu = lebesgue(g)
    assert mu.total_mass == pytest.approx(1.0)
    q = g.cube(2, (1,))
    assert mu.cube_mass(q) == pytest.approx(0.25)
    assert mu.box_mass((0.1,), (0.3,)) == pytest.approx(0.2)


def test_lebesgue_2d():
    g = Grid(dimension=2)
    mu = lebesgue(g)
    assert mu.total_mass == pytest.approx(1.0)
    assert mu.cube_mass(g.cube(1, (0, 1))) == pytest.approx(0.25)


def test_cell_mass_read_only():
    g = Grid(dimension=1, max_level=3)
    mu = lebesgue(g)
    with pytest.raises(ValueError):
        mu.cell_mass[0] = 2.0


def test_integrate_and_norm():
    g = Grid(dimension=1, max_level=3)
    mu = lebesgue(g)
    f = np.ones(8)
    assert mu.integrate(f) == pytest.approx(1.0)
    assert mu.norm_lp(f, 2.0) == pytest.approx(1.0)
    f2 = 2.0 * np.ones(8)
    assert mu.norm_lp(f2, 3.0) == pytest.approx(2.0)


def test_power_weight_density():
    g = Grid(dimension=1, max_level=6)
    mu = power_weight(g, 0.5)
    # default center sits at the window's lower corner, so mass grows rightward;
    # closed form: integral of x^(1/2) over [a, b] is (2/3)(b^(3/2) - a^(3/2))
    left = mu.box_mass((0.0,), (0.25,))
    np.testing.assert_allclose(left, (2.0 / 3.0) * 0.25 ** 1.5, rtol=1e-12)
    right = mu.box_mass((0.75,), (1.0,))
    assert right > left
    np.testing.assert_allclose(mu.total_mass, 2.0 / 3.0, rtol=1e-12)
    with pytest.raises(ValueError):
        power_weight(g, -1.0)


def test_power_weight_center_override():
    g = Grid(dimension=1, max_level=5)
    mu = power_weight(g, 1.0, center=(1.0,))
    # density now vanishes toward the window's right edge instead
    assert mu.box_mass((0.0,), (0.25,)) > mu.box_mass((0.75,), (1.0,))


def test_random_dyadic_doubling_determinism():
    g = Grid(dimension=1, max_level=6)
    a = random_dyadic_doubling(g, 2.0, seed=7)
    b = random_dyadic_doubling(g, 2.0, seed=7)
    np.testing.assert_array_equal(a.cell_mass, b.cell_mass)
    c = random_dyadic_doubling(g, 2.0, seed=8)
    assert not np.array_equal(a.cell_mass, c.cell_mass)


def test_random_dyadic_doubling_child_ratio():
    g = Grid(dimension=1, max_level=7)
    ratio = 2.5
    mu = random_dyadic_doubling(g, ratio, seed=3)
    for level in range(g.max_level):
        for q in g.cubes_at_level(level):
            kids = [mu.cube_mass(k) for k in q.children()]
            lo, hi = min(kids), max(kids)
            assert hi <= ratio * lo + 1e-12


def test_doubling_constant_lebesgue():
    g = Grid(dimension=1, max_level=5)
    rep = doubling_constant(lebesgue(g), depth=3)
    # any interior cube doubles to exactly twice its own mass
    assert rep.constant == pytest.approx(2.0)
    assert rep.depth == 3
    assert rep.witness_cube is not None


def test_doubling_constant_flags_peak():
    g = Grid(dimension=1, max_level=6)
    smooth = doubling_constant(lebesgue(g), depth=4).constant
    peaked = doubling_constant(near_point_mass(g, 6.0), depth=4).constant
    assert peaked > smooth


def test_doubling_constant_depth_guard():
    g = Grid(dimension=1, max_level=4)
    with pytest.raises(ValueError):
        doubling_constant(lebesgue(g), depth=4)


def test_near_point_mass_concentration():
    g = Grid(dimension=1, max_level=6)
    mu = near_point_mass(g, 5.0, cell_coords=(0,))
    assert mu.cell_mass[0] == mu.cell_mass.max()
    assert mu.total_mass > 0.0


def test_custom_cells_validation():
    g = Grid(dimension=1, max_level=2)
    mu = custom_cells(g, np.array([1.0, 2.0, 3.0, 4.0]), label="steps")
    assert mu.total_mass == pytest.approx(10.0)
    assert mu.label == "steps"
    with pytest.raises(ValueError):
        custom_cells(g, np.array([1.0, -2.0, 3.0, 4.0]), label="bad")
    with pytest.raises(ValueError):
        custom_cells(g, np.ones(5), label="shape")
    # all-zero cells build fine but downstream consumers reject them
    null = custom_cells(g, np.zeros(4), label="null")
    with pytest.raises(DegenerateMeasureError):
        doubling_constant(null, depth=1)


def test_csv_roundtrip(tmp_path):
    g = Grid(dimension=2, max_level=3)
    mu = random_dyadic_doubling(g, 2.0, seed=11)
    path = tmp_path / "mu.csv"
    save_measure_csv(mu, path)
    back = load_measure_csv(g, path)
    assert back.grid.dimension == 2
    assert back.grid.max_level == 3
    np.testing.assert_allclose(back.cell_mass, mu.cell_mass, rtol=0, atol=1e-15)


def test_load_measure_csv_rejects_bad_rows(tmp_path):
    g = Grid(dimension=1, max_level=2)
    path = tmp_path / "bad.csv"
    path.write_text("cell_index,mass\n9,1.0\n")
    with pytest.raises(ValueError):
        load_measure_csv(g, path)


def test_density_matches_cell_mass():
    g = Grid(dimension=1, max_level=4)
    mu = power_weight(g, 0.5)
    dens = mu.density()
    np.testing.assert_allclose(dens * g.cell_side, mu.cell_mass.reshape(dens.shape))


def test_box_mass_additivity():
    g = Grid(dimension=1, max_level=6)
    mu = random_dyadic_doubling(g, 2.0, seed=5)
    whole = mu.box_mass((0.1,), (0.9,))
    parts = mu.box_mass((0.1,), (0.37,)) + mu.box_mass((0.37,), (0.9,))
    np.testing.assert_allclose(parts, whole, rtol=1e-12)
