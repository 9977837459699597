import json

import numpy as np
import pytest

from haartest.dyadic import Grid, MeshExhaustedError
from haartest.experiments import (
    AlignedTriple,
    AlignmentError,
    MatrixCounterexampleConfig,
    SectorConfig,
    SignDominanceError,
    a2_lower_bound_experiment,
    build_aligned_triple,
    counterexample_search,
    halo_cover,
    inner_dyadic_cube,
    kernel_difference_report,
    matrix_counterexample,
    phi_test_function,
    quadratic_ap_experiment,
    select_delta,
    triple_absorption_experiment,
)
from haartest.measure import lebesgue, near_point_mass, power_weight
from haartest.operators import (
    Truncation,
    TruncationError,
    default_truncation,
    make_kernel,
)

GRID = Grid(dimension=1)
HILBERT = make_kernel("hilbert", 0.0, 1)
TRUNC = default_truncation(GRID)
LEB = lebesgue(GRID)


def narrow_cone():
    return SectorConfig(v=(1.0,), delta=0.125)


def test_sector_config_validation():
    with pytest.raises(ValueError):
        SectorConfig(v=(0.0,), delta=0.5)
    with pytest.raises(ValueError):
        SectorConfig(v=(1.0,), delta=0.0)
    with pytest.raises(ValueError):
        SectorConfig(v=(1.0,), delta=1.5)
    with pytest.raises(ValueError):
        SectorConfig(v=(1.0,), delta=0.5, m=0)
    # the axis comes out normalized
    cfg = SectorConfig(v=(2.0,), delta=0.5)
    np.testing.assert_allclose(cfg.axis(), [1.0])


def test_build_aligned_triple_frozen_geometry():
    tri = build_aligned_triple(GRID, HILBERT, narrow_cone(), GRID.cube(4, (0,)))
    assert tri.source.key() == "4:0"
    assert tri.target.key() == "4:9"
    assert tri.neg_cube.key() == "7:0"
    assert tri.pos_cube.key() == "7:7"
    assert tri.m == 3
    np.testing.assert_allclose(tri.midpoint, [0.03125])
    keys = tri.keys()
    assert keys["target"] == "4:9" and keys["delta"] == 0.125


def test_build_aligned_triple_mirrored_axis():
    cfg = SectorConfig(v=(-1.0,), delta=0.125)
    tri = build_aligned_triple(GRID, HILBERT, cfg, GRID.cube(4, (15,)))
    assert tri.target.key() == "4:6"
    assert tri.neg_cube.key() == "7:127"
    assert tri.pos_cube.key() == "7:120"


def test_build_aligned_triple_cone_with_no_room():
    # pointing left from the leftmost cube leaves no admissible target
    cfg = SectorConfig(v=(-1.0,), delta=0.125)
    with pytest.raises(AlignmentError, match="cone|alignment|candidate"):
        build_aligned_triple(GRID, HILBERT, cfg, GRID.cube(4, (0,)))


def test_build_aligned_triple_rejects_wide_cone():
    # delta must stay below the kernel's declared flatness threshold (1/4)
    cfg = SectorConfig(v=(1.0,), delta=0.5)
    with pytest.raises(AlignmentError):
        build_aligned_triple(GRID, HILBERT, cfg, GRID.cube(4, (0,)))


def test_aligned_triple_rejects_bad_geometry():
    cfg = narrow_cone()
    tri = build_aligned_triple(GRID, HILBERT, cfg, GRID.cube(4, (0,)))
    with pytest.raises(AlignmentError, match="side length"):
        AlignedTriple(tri.source, GRID.cube(5, (18,)), tri.neg_cube,
                      tri.pos_cube, cfg)
    with pytest.raises(AlignmentError, match="distinct"):
        AlignedTriple(tri.source, tri.target, tri.neg_cube, tri.neg_cube, cfg)
    with pytest.raises(AlignmentError, match="inside the source"):
        AlignedTriple(tri.source, tri.target, GRID.cube(7, (20,)),
                      tri.pos_cube, cfg)


def test_phi_test_function_frozen_values():
    tri = build_aligned_triple(GRID, HILBERT, narrow_cone(), GRID.cube(4, (0,)))
    phi, rep = phi_test_function(LEB, tri)
    assert rep.mean == pytest.approx(0.0, abs=1e-12)
    # both dipole cells carry mass 2^-7, so the unit-height dipole has
    # L2 norm sqrt(2 * 2^-7) and the normalized one has norm 16 = 1/that
    np.testing.assert_allclose(rep.l2_norm, 16.0, rtol=1e-12)
    np.testing.assert_allclose(rep.closed_form, 16.0, rtol=1e-12)
    np.testing.assert_allclose(rep.pos_mass, 2.0 ** -7, rtol=1e-12)
    np.testing.assert_allclose(rep.neg_mass, 2.0 ** -7, rtol=1e-12)
    # the mesh function integrates to zero; its sigma-norm is the reported one
    assert abs(LEB.integrate(phi)) < 1e-12
    np.testing.assert_allclose(LEB.norm_lp(phi, 2.0), rep.l2_norm, rtol=1e-12)
    # each lobe integrates to exactly +-1 (mass-normalized dipole)
    pos = phi.copy()
    pos[phi < 0] = 0.0
    np.testing.assert_allclose(LEB.integrate(pos), 1.0, rtol=1e-12)


def test_phi_rejects_massless_dipole():
    tri = build_aligned_triple(GRID, HILBERT, narrow_cone(), GRID.cube(4, (0,)))
    dead = near_point_mass(GRID, 2.0, cell_coords=(900,))
    cells = dead.cell_mass.copy()
    cells[tri.pos_cube.slices()] = 0.0
    from haartest.measure import custom_cells
    with pytest.raises(ValueError, match="mass"):
        phi_test_function(custom_cells(GRID, cells), tri)


def test_kernel_difference_sign_dominance_frozen():
    tri = build_aligned_triple(GRID, HILBERT, narrow_cone(), GRID.cube(4, (0,)))
    rep = kernel_difference_report(HILBERT, TRUNC, tri, seed=0)
    assert rep.passed
    d = rep.details
    assert d["orientation"] == 1.0
    assert d["band_fraction"] == 1.0
    assert d["sign_agreement"] == 1.0
    np.testing.assert_allclose(d["worst_band_ratio"], 0.062158, atol=1e-5)
    assert d["identity_residual_max"] < 1e-12


def test_kernel_difference_mirrored_orientation():
    cfg = SectorConfig(v=(-1.0,), delta=0.125)
    tri = build_aligned_triple(GRID, HILBERT, cfg, GRID.cube(4, (15,)))
    rep = kernel_difference_report(HILBERT, TRUNC, tri, seed=0)
    assert rep.details["orientation"] == -1.0
    assert rep.details["band_fraction"] == 1.0


def test_kernel_difference_needs_plateau():
    tri = build_aligned_triple(GRID, HILBERT, narrow_cone(), GRID.cube(4, (0,)))
    tight = Truncation(0.2, 0.9)
    with pytest.raises(TruncationError):
        kernel_difference_report(HILBERT, tight, tri, seed=0)


def test_select_delta_frozen():
    delta, tri, rep = select_delta(GRID, HILBERT, TRUNC, GRID.cube(4, (0,)))
    assert delta == pytest.approx(0.25)
    assert tri.target.key() == "4:5"
    assert rep.details["band_fraction"] == 1.0


def test_a2_lower_bound_power_pair(power_pair):
    sigma, omega = power_pair
    rep = a2_lower_bound_experiment(sigma, omega, HILBERT, TRUNC,
                                    trials=10, seed=0)
    assert rep.passed
    d = rep.details
    assert d["sign_fraction"] == 1.0
    assert d["max_reconstruction_error"] < 1e-10
    # expansion coefficients live on the source and dipole ancestry chain:
    # never more than 2m - 1 cubes in one dimension
    assert d["max_coefficient_count"] <= 5
    assert d["min_r1"] > 0.0
    assert d["trial_count"] == 10
    np.testing.assert_allclose(rep.value, 0.367496, atol=1e-5)


def test_a2_lower_bound_floor_violation(power_pair):
    sigma, omega = power_pair
    with pytest.raises(SignDominanceError, match="floor"):
        a2_lower_bound_experiment(sigma, omega, HILBERT, TRUNC,
                                  trials=5, seed=0, floor=1e9)


def test_triple_absorption_stability(power_pair):
    sigma, omega = power_pair
    r5 = triple_absorption_experiment(sigma, omega, HILBERT, TRUNC,
                                      depth=5, seed=0)
    assert r5.passed
    np.testing.assert_allclose(r5.value, 0.726856, atol=1e-5)
    assert r5.details["cross_term_max_ratio"] <= 1.0 + 1e-12
    r6 = triple_absorption_experiment(sigma, omega, HILBERT, TRUNC,
                                      depth=6, seed=0)
    # deeper scans keep the absorption constant within a 10% band
    assert abs(r6.value - r5.value) <= 0.1 * r5.value


def test_matrix_counterexample_frozen():
    cfg = MatrixCounterexampleConfig(gamma=0.6, ladder_exponents=(10, 14, 17, 20))
    rep = matrix_counterexample(cfg)
    assert rep.passed
    d = rep.details
    assert d["col_sup"] == 1.0
    np.testing.assert_allclose(d["row_sup"], 2.364652710479438, rtol=1e-12)
    assert d["rows_decreasing"] and d["growth_strictly_increasing"]
    growth = [d["growth"][k] for k in sorted(d["growth"], key=int)]
    assert all(b > a for a, b in zip(growth, growth[1:]))
    np.testing.assert_allclose(rep.value, 8.1387728384273, rtol=1e-10)


def test_matrix_counterexample_config_validation():
    with pytest.raises(ValueError):
        MatrixCounterexampleConfig(gamma=0.5, ladder_exponents=(10, 20))
    with pytest.raises(ValueError):
        MatrixCounterexampleConfig(gamma=0.8, ladder_exponents=(10, 20))
    with pytest.raises(ValueError):
        MatrixCounterexampleConfig(gamma=0.6, ladder_exponents=(20,))
    with pytest.raises(ValueError):
        MatrixCounterexampleConfig(gamma=0.6, ladder_exponents=(20, 10))
    with pytest.raises(ValueError):
        MatrixCounterexampleConfig(gamma=0.6, ladder_exponents=(10, 20),
                                   partial_terms=10)


def test_counterexample_search_deterministic():
    a = counterexample_search(GRID, HILBERT, TRUNC, iterations=10, seed=0,
                              depth=4, top=4)
    b = counterexample_search(GRID, HILBERT, TRUNC, iterations=10, seed=0,
                              depth=4, top=4)
    assert a.value == b.value
    la, lb = a.details["leaderboard"], b.details["leaderboard"]
    assert [r["hash"] for r in la] == [r["hash"] for r in lb]
    ratios = [r["ratio"] for r in la]
    assert ratios == sorted(ratios, reverse=True)
    assert len(la) <= 4
    assert "evidence" in a.details["note"]
    np.testing.assert_allclose(a.value, 0.493159, atol=1e-5)


def test_counterexample_search_callable_family():
    from haartest.measure import custom_cells

    def family(grid, rng):
        return tuple(custom_cells(grid, rng.uniform(0.5, 1.5, size=grid.mesh_shape),
                                  label="uniform-noise") for _ in range(2))

    rep = counterexample_search(GRID, HILBERT, TRUNC, measure_family=family,
                                iterations=6, seed=1, depth=3, top=3)
    assert rep.value > 0.0
    kinds = {row["kind"] for row in rep.details["leaderboard"]}
    assert kinds <= {"callable", "mutation"}
    assert "callable" in kinds


def test_quadratic_ap_experiment(power_pair):
    sigma, omega = power_pair
    rep = quadratic_ap_experiment(sigma, omega, HILBERT, TRUNC,
                                  families=2, seed=0)
    assert rep.passed
    np.testing.assert_allclose(rep.value, 0.604387, atol=1e-5)
    assert rep.details["member_count"] >= 2
    assert rep.details["p"] == 2.0
    lo, hi = rep.details["norm_ratio_band"]
    assert 0.0 < lo <= hi


def test_halo_cover_frozen_lebesgue():
    cover = halo_cover(LEB, ((0.2,), 0.45), epsilon=0.1, eta=0.9)
    assert cover.t == 2
    assert cover.keys == ("2:1", "3:4")
    np.testing.assert_allclose(cover.leftover, 0.03, atol=1e-12)
    np.testing.assert_allclose(cover.box_mass, 0.45, rtol=1e-12)
    np.testing.assert_allclose(cover.halo_mass, 0.405, rtol=1e-12)
    assert cover.count == 2
    assert cover.leftover < 0.1 * cover.box_mass
    check = cover.recompute(LEB)
    assert check["contained"] and check["disjoint"] and check["leftover_ok"]
    lo, hi = cover.shrunken_box()
    np.testing.assert_allclose(hi - lo, 0.9 * 0.45, rtol=1e-12)


def test_halo_cover_peaked_measure():
    mu = near_point_mass(GRID, 4.0)
    cover = halo_cover(mu, ((0.4,), 0.25), epsilon=0.1, eta=0.9)
    assert cover.t == 1
    assert cover.keys == ("3:4",)
    np.testing.assert_allclose(cover.leftover, 0.00625, atol=1e-10)


def test_halo_cover_exact_dyadic_shortcut():
    q = GRID.cube(2, (1,))
    cover = halo_cover(LEB, q, epsilon=0.5, eta=1.0)
    assert cover.t == 0
    assert cover.keys == (q.key(),)
    assert cover.leftover == pytest.approx(0.0, abs=1e-15)


def test_halo_cover_validation():
    with pytest.raises(ValueError):
        halo_cover(LEB, ((0.2,), 0.45), epsilon=0.1, eta=1.5)
    with pytest.raises(ValueError):
        halo_cover(LEB, ((0.2,), 0.45), epsilon=-0.1, eta=0.9)
    with pytest.raises(ValueError):
        halo_cover(LEB, ((0.2,), 0.0), epsilon=0.1, eta=0.9)


def test_halo_cover_mesh_exhaustion():
    with pytest.raises(MeshExhaustedError):
        halo_cover(LEB, ((0.2,), 0.45), epsilon=1e-9, eta=0.9)


def test_inner_dyadic_cube_frozen():
    q = inner_dyadic_cube(GRID, (0.3,), 0.25)
    assert q.key() == "3:3"
    # containment and the quarter-side floor
    assert q.lower[0] >= 0.3 - 1e-12
    assert q.upper[0] <= 0.55 + 1e-12
    assert q.side >= 0.25 / 4.0


def test_inner_dyadic_cube_exact_fit():
    q = inner_dyadic_cube(GRID, (0.25,), 0.25)
    assert q.key() == "2:1"


def test_reports_serialize():
    tri = build_aligned_triple(GRID, HILBERT, narrow_cone(), GRID.cube(4, (0,)))
    rep = kernel_difference_report(HILBERT, TRUNC, tri, seed=0)
    out = json.dumps(rep.as_dict(), sort_keys=True)
    assert json.loads(out)["name"] == rep.name
