import csv
import math

import numpy as np
import pytest

from scipy.optimize import minimize_scalar

from semiscat import classical, rays
from semiscat._quadrature import gauss_legendre
from semiscat.convergence import smooth_bump
from semiscat.errors import NonregularDirection, OrbitingDetected
from semiscat.potential import BumpPart, Potential


@pytest.fixture(scope="module")
def ref_table(ref_pot):
    return classical.deflection_table(ref_pot)


def _om(deg):
    return classical.direction_from_angles(math.radians(deg))


@pytest.mark.parametrize("deg", [20.0, 40.0, 60.0])
def test_branches_match_table_inversion(ref_pot, ref_table, deg):
    brs = classical.find_branches(ref_pot, _om(deg))
    b_found = sorted(float(np.linalg.norm(b.y)) for b in brs)
    assert b_found == pytest.approx(ref_table.invert(math.radians(deg)), abs=1e-5)
    for b in brs:
        assert abs(b.y[1]) < 1e-9
        assert np.allclose(b.omega, _om(deg), atol=1e-9)


def test_no_branch_beyond_rainbow(ref_pot, ref_table):
    assert ref_table.max_deflection < math.radians(90.0)
    assert classical.find_branches(ref_pot, _om(90.0)) == []
    assert classical.classical_dcs([]) == 0.0


@pytest.mark.parametrize("deg", [25.0, 40.0, 60.0])
def test_dcs_agrees_with_radial_formula(ref_pot, ref_table, deg):
    brs = classical.find_branches(ref_pot, _om(deg))
    assert classical.classical_dcs(brs) == pytest.approx(ref_table.dcs(math.radians(deg)), rel=1e-3)


def test_dcs_single_branch():
    b = classical.Branch(np.zeros(2), np.array([0, 0, 1.0]), 4.0, 0.0, 0)
    assert classical.classical_dcs([b]) == 0.25


def test_dcs_rejects_nonregular():
    b = classical.Branch(np.zeros(2), np.array([0, 0, 1.0]), 1e-12, 0.0, 0)
    with pytest.raises(NonregularDirection):
        classical.classical_dcs([b])


def test_phase_invariant_along_free_segment(ref_pot):
    ray = rays.variational_flow(ref_pot, [0.6, 0.0])
    m = ray.n_integrated - 1
    vals = [classical.phase_F(ray, i) for i in range(m, len(ray.s))]
    assert np.ptp(vals) < 1e-9


def test_phase_free_ray_is_zero(free_pot):
    ray = rays.integrate_ray(free_pot, [0.2, 0.1])
    assert abs(classical.phase_F(ray)) < 1e-12


def test_phase_two_sample_routes_agree(lumpy_pot):
    ray = rays.integrate_ray(lumpy_pot, [0.3, 0.2])
    m = ray.n_integrated - 1
    # exit sample versus the far free-flight sample
    assert classical.phase_F(ray, m) == pytest.approx(classical.phase_F(ray, -1), abs=1e-9)
    # S from the accumulated integrand versus S' = 2(1 + q) integrated separately
    s = ray.s[m]
    assert rays.action_S(ray, s) == pytest.approx(ray.S[m], rel=1e-10)


def test_pushforward_of_one_is_measure(lumpy_pot):
    val = classical.pushforward_integral(lumpy_pot, lambda J: np.ones(len(J)))
    assert val == pytest.approx(lumpy_pot.impact_set().measure, rel=2e-3)


def test_pushforward_free(free_pot):
    assert classical.pushforward_integral(free_pot, lambda J: np.ones(len(J))) == 0.0
    pot = Potential.radial_bump(0.0)
    val = classical.pushforward_integral(pot, lambda J: 3.0 + J[:, 2])
    assert val == pytest.approx(4.0 * math.pi, rel=1e-12)


def test_pushforward_matches_table(ref_pot, ref_table):
    phi = lambda J: 1.0 - J[:, 2]
    val = classical.pushforward_integral(ref_pot, phi)
    oracle = ref_table.pushforward(lambda th: 1.0 - math.cos(th))
    assert val == pytest.approx(oracle, rel=1e-3)


def test_change_of_variables_against_sphere_quadrature(ref_pot, ref_table):
    """int phi |f_cl|^2 dOmega over the sphere equals int phi(J(y)) dy."""
    lo, hi = math.radians(30.0), math.radians(70.0)
    th, w = gauss_legendre(24, lo, hi)
    sphere = 0.0
    seeds = 40
    for t, wt in zip(th, w):
        # continue the two branches from the previous angle
        brs = classical.find_branches(ref_pot, classical.direction_from_angles(t), seed_grid=seeds)
        assert len(brs) == 2
        seeds = np.array([b.y for b in brs])
        sphere += wt * 2 * math.pi * math.sin(t) * smooth_bump(t) * classical.classical_dcs(brs)
    push = ref_table.pushforward(lambda t: float(smooth_bump(t)))
    assert sphere == pytest.approx(push, rel=1e-2)


def test_deflection_oracle_limits(ref_pot):
    assert classical.deflection_radial(ref_pot, 0.0) == 0.0
    assert classical.deflection_radial(ref_pot, 1.0) == 0.0
    assert classical.deflection_radial(ref_pot, 1.3) == 0.0


def test_deflection_sign_attractive_vs_repulsive():
    assert classical.deflection_radial(Potential.radial_bump(0.5), 0.5) > 0
    assert classical.deflection_radial(Potential.radial_bump(-0.5), 0.5) < 0


def test_orbiting_detected():
    pot = Potential.radial_bump(1.6)
    # the orbiting impact parameter is the square root of the local minimum of r^2 (1 + q)
    h = lambda r: float(r * r * (1.0 + pot.q_radial(np.array(r))))
    loc = minimize_scalar(h, bounds=(0.82, 0.88), method="bounded", options={"xatol": 1e-12})
    b_star = math.sqrt(loc.fun)
    with pytest.raises(OrbitingDetected):
        classical.deflection_radial(pot, b_star)
    # just off the double root the deflection is finite but winds
    assert classical.deflection_radial(pot, b_star * (1 - 1e-6)) > 2 * math.pi


def test_no_orbiting_below_threshold():
    pot = Potential.radial_bump(1.2)
    for b in np.linspace(0.01, 0.99, 99):
        assert np.isfinite(classical.deflection_radial(pot, b))


def test_nonradial_table_rejected(lumpy_pot):
    with pytest.raises(ValueError):
        classical.deflection_table(lumpy_pot)


def test_branch_csv(ref_pot, tmp_path):
    brs = classical.find_branches(ref_pot, _om(40.0))
    path = tmp_path / "b.csv"
    classical.branches_to_csv(brs, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["y1", "y2", "omega1", "omega2", "omega3", "detDJ", "F", "nu"]
    assert len(rows) == len(brs) + 1


def test_assumption2_weak_bump_passes():
    rep = classical.assumption2_check(Potential.radial_bump(0.2), resolutions=(20, 40))
    assert not rep["violation"] and not rep["degenerate"]
    assert rep["forward_preimages"]


def test_assumption2_critical_set_fraction_shrinks(ref_pot):
    rep = classical.assumption2_check(ref_pot, resolutions=(20, 40, 80))
    f = rep["sign_change_cell_fraction"]
    assert f[0] > 0 and f[0] > f[1] > f[2]


def test_assumption2_free_degenerate(free_pot):
    rep = classical.assumption2_check(free_pot)
    assert rep["degenerate"] and rep["violation"]


def test_assumption3_radial_unflagged(ref_pot):
    rep = classical.assumption3_check(ref_pot, [_om(40.0), _om(60.0)], seed_grid=40)
    assert rep["n_flagged"] == 0
    assert all(e["n_branches"] == 2 for e in rep["entries"])


def test_assumption3_without_branch_pairs_is_vacuous(ref_pot):
    rep = classical.assumption3_check(ref_pot, [_om(120.0)], seed_grid=40)
    assert rep["entries"][0]["n_branches"] == 0
    assert rep["entries"][0]["pairs"] == [] and rep["n_flagged"] == 0


def test_assumption3_symmetric_double_bump():
    pot = Potential(3, (BumpPart((-0.6, 0.0, 0.0), 0.5, 0.5), BumpPart((0.6, 0.0, 0.0), 0.5, 0.5)))
    om = classical.direction_from_angles(math.radians(10.0), math.radians(90.0))
    rep = classical.assumption3_check(pot, [om], seed_grid=60)
    pairs = rep["entries"][0]["pairs"]
    assert pairs
    coincident = [p for p in pairs if p["coincident_phase"]]
    assert coincident
    assert all(p["grad_norm"] > 1e-6 for p in coincident)
