import json

import numpy as np
import pytest

from haartest.characteristics import (
    CharacteristicReport,
    QuadraticFamily,
    a2_lambda,
    ap_lambda,
    conjugate_exponent,
    cube_testing,
    haar_testing,
    haar_testing_dual,
    lp_haar_testing,
    lp_haar_testing_dual,
    matched_haar_testing,
    operator_norm,
    quadratic_haar_testing,
    quadratic_offset_ap,
    quadratic_subcube_ap,
    reevaluate,
    validate_offset_family,
)
from haartest.dyadic import Grid
from haartest.haar import cached_system
from haartest.measure import lebesgue, power_weight, random_dyadic_doubling
from haartest.operators import (
    Truncation,
    apply,
    assemble_haar_matrix,
    default_truncation,
    make_kernel,
)

GRID = Grid(dimension=1, max_level=7)
SIGMA = random_dyadic_doubling(GRID, 2.0, seed=31)
OMEGA = random_dyadic_doubling(GRID, 2.0, seed=32)
HILBERT = make_kernel("hilbert", 0.0, 1)
TRUNC = default_truncation(GRID)


def test_conjugate_exponent():
    assert conjugate_exponent(2.0) == pytest.approx(2.0)
    assert conjugate_exponent(3.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        conjugate_exponent(1.0)


def test_a2_lebesgue_is_one(grid1):
    mu = lebesgue(grid1)
    rep = a2_lambda(mu, mu, 0.0)
    assert rep.value == pytest.approx(1.0, abs=1e-12)
    assert rep.witness["sqrt_value"] == rep.value
    assert rep.witness["squared_value"] == pytest.approx(1.0, abs=1e-12)


def test_a2_power_pair_closed_form(grid1):
    # sigma = x^a, omega = x^(-a): on every cube [0, 2^-l) the product of
    # averages equals 1 / (1 - a^2) exactly, and that edge cube is the max
    a = 0.3
    sigma = power_weight(grid1, a)
    omega = power_weight(grid1, -a)
    rep = a2_lambda(sigma, omega, 0.0)
    np.testing.assert_allclose(rep.value, 1.0 / np.sqrt(1.0 - a * a), rtol=1e-10)
    assert rep.witness["cube"].endswith(":0")


def test_a2_positive_lam(grid1):
    mu = lebesgue(grid1)
    rep = a2_lambda(mu, mu, 0.5)
    # value per cube is |Q|^(lam/n): the unit root cube attains 1
    assert rep.value == pytest.approx(1.0, abs=1e-12)
    assert rep.witness["cube"] == "0:0"


def test_ap_matches_a2_at_p_two(grid1):
    sigma = power_weight(grid1, 0.4)
    omega = power_weight(grid1, -0.4)
    a2 = a2_lambda(sigma, omega, 0.0)
    ap = ap_lambda(sigma, omega, 0.0, p=2.0)
    np.testing.assert_allclose(ap.value, a2.value, rtol=1e-12)
    # asymmetric exponents break the coincidence
    ap4 = ap_lambda(sigma, omega, 0.0, p=4.0)
    assert abs(ap4.value - a2.value) > 1e-6


def test_characteristic_validation(grid1):
    mu = lebesgue(grid1)
    with pytest.raises(ValueError):
        a2_lambda(mu, mu, -0.1)
    with pytest.raises(ValueError):
        a2_lambda(mu, mu, 1.0)
    with pytest.raises(ValueError):
        a2_lambda(mu, mu, 0.0, depth=99)
    other = lebesgue(Grid(dimension=1, max_level=3))
    with pytest.raises(ValueError):
        a2_lambda(mu, other, 0.0)


def test_jitter_never_lowers_the_scan(grid1):
    sigma = random_dyadic_doubling(grid1, 2.5, seed=41)
    omega = random_dyadic_doubling(grid1, 2.5, seed=42)
    base = a2_lambda(sigma, omega, 0.0, depth=5)
    jit = a2_lambda(sigma, omega, 0.0, depth=5, jitter_count=64, seed=7)
    assert jit.value >= base.value - 1e-15


def test_haar_testing_brute_force_oracle():
    # independent route: apply the operator to each wavelet directly and take
    # the best weighted image norm; blocks have one wavelet each in 1-D
    rep = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4)
    system = cached_system(SIGMA, 4)
    best = 0.0
    for h in system.wavelets:
        img = apply(HILBERT, TRUNC, SIGMA, h.mesh_values()).ravel()
        best = max(best, float(np.sqrt(img * img @ OMEGA.flat_mass)))
    np.testing.assert_allclose(rep.value, best, rtol=1e-10)
    assert rep.witness["mode"] == "global"
    assert rep.search_space["per_cube_optimum"] == "exact"


def test_haar_testing_local_below_global():
    glob = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4, mode="global")
    loc = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4, mode="local")
    assert loc.value <= glob.value + 1e-12
    with pytest.raises(ValueError):
        haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, mode="triple")


def test_haar_testing_dual_swaps_roles():
    dual = haar_testing_dual(SIGMA, OMEGA, HILBERT, TRUNC, depth=4)
    manual = haar_testing(OMEGA, SIGMA, HILBERT.transpose(), TRUNC, depth=4)
    assert dual.name == "dual_haar_testing"
    np.testing.assert_allclose(dual.value, manual.value, rtol=1e-12)


def test_lp_haar_testing_reduces_to_l2():
    l2 = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4)
    lp = lp_haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, p=2.0, depth=4)
    np.testing.assert_allclose(lp.value, l2.value, atol=1e-9, rtol=1e-9)
    dual = lp_haar_testing_dual(SIGMA, OMEGA, HILBERT, TRUNC, p=2.0, depth=4)
    d2 = haar_testing_dual(SIGMA, OMEGA, HILBERT, TRUNC, depth=4)
    np.testing.assert_allclose(dual.value, d2.value, atol=1e-9, rtol=1e-9)


def test_cube_testing_mode_monotonicity():
    kwargs = dict(depth=4, p=2.0)
    loc = cube_testing(SIGMA, OMEGA, HILBERT, TRUNC, mode="local", **kwargs)
    tri = cube_testing(SIGMA, OMEGA, HILBERT, TRUNC, mode="triple", **kwargs)
    glob = cube_testing(SIGMA, OMEGA, HILBERT, TRUNC, mode="global", **kwargs)
    assert loc.value <= tri.value + 1e-12
    assert tri.value <= glob.value + 1e-12
    assert glob.witness["p"] == 2.0


def test_cube_testing_rejects_bad_mode():
    with pytest.raises(ValueError):
        cube_testing(SIGMA, OMEGA, HILBERT, TRUNC, mode="ring")


def test_operator_norm_matches_svd():
    mat = assemble_haar_matrix(HILBERT, TRUNC, SIGMA, OMEGA, 4)
    rep = operator_norm(mat)
    want = np.linalg.svd(mat.entries, compute_uv=False)[0]
    np.testing.assert_allclose(rep.value, want, rtol=1e-9)
    assert rep.search_space["converged"]


def test_matched_testing_below_operator_norm():
    mat = assemble_haar_matrix(HILBERT, TRUNC, SIGMA, OMEGA, 4)
    norm = operator_norm(mat).value
    col = matched_haar_testing(mat)
    row = matched_haar_testing(mat, dual=True)
    assert col.name == "haar_testing_matched"
    assert row.name == "dual_haar_testing_matched"
    assert col.value <= norm + 1e-12
    assert row.value <= norm + 1e-12
    # block norms dominate single-column norms
    assert col.value >= mat.column_norms().max() - 1e-12


def test_reevaluate_reproduces_witness_values():
    mat = assemble_haar_matrix(HILBERT, TRUNC, SIGMA, OMEGA, 4)
    reports = [
        a2_lambda(SIGMA, OMEGA, 0.0, depth=5),
        ap_lambda(SIGMA, OMEGA, 0.0, p=3.0, depth=5),
        haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4),
        haar_testing_dual(SIGMA, OMEGA, HILBERT, TRUNC, depth=4),
        lp_haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, p=3.0, depth=4),
        cube_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4),
        operator_norm(mat),
        matched_haar_testing(mat),
        matched_haar_testing(mat, dual=True),
        quadratic_offset_ap(SIGMA, OMEGA, 0.0, depth=4, seed=3),
        quadratic_subcube_ap(SIGMA, OMEGA, 0.0, depth=4, seed=3),
        quadratic_haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4, seed=3),
    ]
    for rep in reports:
        again = reevaluate(rep, SIGMA, OMEGA)
        np.testing.assert_allclose(again, rep.value, atol=1e-10, rtol=1e-10,
                                   err_msg=rep.name)


def test_reports_serialize_to_json():
    rep = a2_lambda(SIGMA, OMEGA, 0.0, depth=3)
    text = json.dumps(rep.as_dict(), sort_keys=True)
    back = json.loads(text)
    assert back["name"] == "a2_lambda"
    assert back["value"] == rep.value


def test_report_rejects_negative_value():
    with pytest.raises(ValueError):
        CharacteristicReport("bad", -1.0, {}, {}, 0)


def test_quadratic_offset_dominates_singleton():
    rep = quadratic_offset_ap(SIGMA, OMEGA, 0.0, depth=5, seed=5)
    assert rep.value >= rep.witness["singleton_value"] - 1e-12
    # p = 2: no family beats the best singleton pair
    np.testing.assert_allclose(rep.value, rep.witness["singleton_value"],
                               rtol=1e-9)


def test_quadratic_offset_p4_still_dominates():
    rep = quadratic_offset_ap(SIGMA, OMEGA, 0.0, p=4.0, depth=4, seed=5)
    assert rep.value >= rep.witness["singleton_value"] - 1e-12


def test_quadratic_subcube_matches_singleton_at_p2():
    rep = quadratic_subcube_ap(SIGMA, OMEGA, 0.0, depth=4, seed=2)
    np.testing.assert_allclose(rep.value, rep.witness["singleton_value"],
                               rtol=1e-9)


def test_quadratic_haar_matches_scalar_at_p2():
    quad = quadratic_haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4, seed=1)
    scal = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=4)
    np.testing.assert_allclose(quad.witness["scalar_value"], scal.value,
                               rtol=1e-12)
    np.testing.assert_allclose(quad.value, scal.value, rtol=1e-9)


def test_validate_offset_family():
    g = Grid(dimension=1, max_level=5)
    ok = QuadraticFamily(cubes=("3:0", "3:4"), partners=("3:2", "3:6"),
                         coefficients=(1.0, 0.5))
    validate_offset_family(g, ok)
    with pytest.raises(ValueError):
        validate_offset_family(g, QuadraticFamily(
            cubes=("3:0",), partners=("2:1",), coefficients=(1.0,)))
    with pytest.raises(ValueError):
        validate_offset_family(g, QuadraticFamily(
            cubes=("3:0",), partners=("3:0",), coefficients=(1.0,)))
    with pytest.raises(ValueError):
        validate_offset_family(g, QuadraticFamily(
            cubes=("3:0", "2:0"), partners=("3:2", "2:1"),
            coefficients=(1.0, 1.0)))
    with pytest.raises(ValueError):
        validate_offset_family(g, QuadraticFamily(
            cubes=("5:0",), partners=("5:31",), coefficients=(1.0,)),
            max_distance=2.0)
    with pytest.raises(ValueError):
        QuadraticFamily(cubes=(), partners=(), coefficients=())


def test_depth_stability_of_haar_testing():
    a = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=5)
    b = haar_testing(SIGMA, OMEGA, HILBERT, TRUNC, depth=6)
    # deeper scans only add candidates
    assert b.value >= a.value - 1e-12
    # and the increment stays modest for doubling measures
    assert b.value <= 1.25 * a.value
