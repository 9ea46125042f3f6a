import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from semiscat import classical, rays
from semiscat.errors import TrappedRay
from semiscat.potential import BumpPart, Potential, grad_q
from semiscat.rays import IntegratorOptions


def test_free_flight_is_straight(free_pot):
    ray = rays.integrate_ray(free_pot, [0.3, 0.0])
    s = ray.s
    expected = np.stack([np.full_like(s, 0.3), np.zeros_like(s), -free_pot.plane_offset + 2 * s], 1)
    assert np.allclose(ray.x, expected, atol=1e-12)
    assert np.allclose(ray.p, [0.0, 0.0, 1.0], atol=1e-15)


def test_action_matches_plane_coordinate_after_exit(free_pot, ref_pot):
    for pot in (free_pot, ref_pot):
        ray = rays.integrate_ray(pot, [0.3, 0.1])
        assert ray.S[0] == pytest.approx(-pot.plane_offset)
        if pot.is_free:
            assert np.allclose(ray.S - ray.x[:, 2], 0.0, atol=1e-12)


def test_miss_rays_keep_direction(ref_pot):
    Y = np.array([[1.2, 0.0], [0.0, -1.5], [0.9, 0.9]])
    batch = rays.trace_rays(ref_pot, Y, variational=True)
    assert np.array_equal(batch.p_inf, np.tile([0.0, 0.0, 1.0], (3, 1)))
    assert np.allclose(batch.detDJ, 0.0, atol=1e-30)


def test_energy_conserved(lumpy_pot, rng):
    ys = rng.uniform(-1.0, 1.0, size=(40, 2))
    batch = rays.trace_rays(lumpy_pot, ys)
    assert batch.exited.all()
    assert batch.energy_drift.max() < 1e-8


def _oracle_state(pot, y, s_end):
    """Independent DOP853 solve of x' = 2p, p' = grad q, S' = 2|p|^2."""
    def f(t, z):
        x, p = z[:3], z[3:6]
        return np.concatenate([2 * p, grad_q(pot, x), [2 * p @ p]])
    z0 = np.concatenate([[y[0], y[1], -pot.plane_offset], [0, 0, 1.0], [-pot.plane_offset]])
    sol = solve_ivp(f, (0, s_end), z0, method="DOP853", rtol=1e-12, atol=1e-13)
    return sol.y[:, -1]


@pytest.mark.parametrize("y", [(0.3, 0.0), (0.55, -0.2), (0.85, 0.1)])
def test_state_matches_independent_solver(ref_pot, y):
    ray = rays.integrate_ray(ref_pot, y)
    z = _oracle_state(ref_pot, y, ray.s_exit)
    m = ray.n_integrated - 1
    assert np.allclose(ray.x[m], z[:3], atol=1e-8)
    assert np.allclose(ray.p[m], z[3:6], atol=1e-8)
    assert ray.S[m] == pytest.approx(z[6], rel=1e-8)


def test_action_quadrature_agrees(ref_pot):
    ray = rays.integrate_ray(ref_pot, [0.4, 0.0])
    s = ray.s_exit * 0.7
    x, p = ray.state_at(s)[:3], ray.state_at(s)[3:6]
    # S' = 2|p|^2 = 2(1 + q); check the closed form along the path by quadrature
    ss = np.linspace(0, s, 4001)
    qv = np.array([ref_pot.q(ray.state_at(t)[:3]) for t in ss])
    from scipy.integrate import simpson
    oracle = -ref_pot.plane_offset + simpson(2 * (1 + qv), x=ss)
    assert rays.action_S(ray, s) == pytest.approx(oracle, rel=1e-8)


def test_backward_flow_returns_to_launch(lumpy_pot):
    y = np.array([0.2, -0.3])
    ray = rays.integrate_ray(lumpy_pot, y)
    m = ray.n_integrated - 1
    x0, p0 = rays.integrate_backward(lumpy_pot, ray.x[m], ray.p[m], ray.s[m])
    assert np.allclose(x0, [y[0], y[1], -lumpy_pot.plane_offset], atol=1e-8)
    assert np.allclose(p0, [0, 0, 1], atol=1e-8)


def test_radial_mirror_symmetry(ref_pot):
    J1 = rays.direction_J(ref_pot, [0.4, 0.25])
    J2 = rays.direction_J(ref_pot, [-0.4, -0.25])
    assert np.allclose(J2, [-J1[0], -J1[1], J1[2]], atol=1e-12)


def test_variational_matches_finite_differences(lumpy_pot):
    y = np.array([0.25, 0.1])
    ray = rays.variational_flow(lumpy_pot, y)
    h = 1e-6
    fd = np.zeros((3, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (rays.direction_J(lumpy_pot, y + e) - rays.direction_J(lumpy_pot, y - e)) / (2 * h)
    m = ray.n_integrated - 1
    dp = ray.M[m, 3:, :]
    n_p = np.linalg.norm(ray.p[m])
    w = ray.p_inf
    DJ = (dp - np.outer(w, w @ dp)) / n_p
    assert np.allclose(DJ, fd, atol=1e-6)


def test_exit_angle_matches_deflection_oracle(half_pot):
    ray = rays.integrate_ray(half_pot, [0.5, 0.0])
    theta_ray = math.atan2(-ray.p_inf[0], ray.p_inf[2])
    assert theta_ray == pytest.approx(classical.deflection_radial(half_pot, 0.5), abs=1e-8)


def test_maslov_main_and_edge_branches(ref_pot):
    assert rays.variational_flow(ref_pot, [0.4, 0.0]).maslov == 2
    assert rays.variational_flow(ref_pot, [0.9, 0.0]).maslov == 1


def test_weak_bump_has_no_caustic_inside():
    pot = Potential.radial_bump(0.01)
    for b in (0.1, 0.4, 0.7):
        assert rays.variational_flow(pot, [b, 0.0]).caustics_before_exit == []


@pytest.mark.parametrize("b", [0.1, 0.3, 0.5, 0.7, 0.8, 0.88, 0.93, 0.97])
def test_maslov_parity_matches_deflection_slope(ref_pot, b):
    nu = rays.variational_flow(ref_pot, [b, 0.0]).maslov
    slope = classical.deflection_derivative(ref_pot, b)
    assert (-1) ** nu == np.sign(slope)


def test_strong_bump_focuses():
    pot = Potential.radial_bump(1.4)
    assert rays.variational_flow(pot, [0.1, 0.0]).maslov >= 1


def test_post_exit_caustics_match_dense_scan(ref_pot):
    ray = rays.variational_flow(ref_pot, [0.9, 0.0])
    assert len(ray.caustics_after_exit) == 1
    s_c = ray.caustics_after_exit[0]
    m = ray.n_integrated - 1
    ss = np.linspace(ray.s[m], ray.s[m] + 200.0, 200001)
    # direct scan of det[M_x | 2p] along the free segment
    M = ray.M[m]
    p = ray.p[m]
    tau = ss - ray.s[m]
    dets = np.array([np.linalg.det(np.column_stack([M[:3] + 2 * t * M[3:], 2 * p])) for t in tau])
    flips = np.nonzero(np.diff(np.sign(dets)))[0]
    assert len(flips) == 1
    assert ss[flips[0]] <= s_c <= ss[flips[0] + 1]


def test_nontrapping_free_exit_time(free_pot):
    rep = rays.nontrapping_scan(free_pot)
    o = IntegratorOptions().resolved(free_pot)
    straight = (free_pot.plane_offset + o.exit_radius) / 2
    assert rep.ok
    # exit is detected at step ends, so it may overshoot by at most one capped step
    assert straight - 1e-12 <= rep.max_exit_time <= straight + o.dense_output_step


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.9, 0.9))
def test_repulsive_and_weak_bumps_nontrapping(q0):
    pot = Potential.radial_bump(q0)
    assert rays.nontrapping_scan(pot, per_axis=10).ok


def test_trapping_reported_when_time_exhausted(ref_pot):
    with pytest.raises(TrappedRay):
        rays.integrate_ray(ref_pot, [0.3, 0.0], IntegratorOptions(max_time=0.5))


def test_ray_csv_columns(ref_pot, tmp_path):
    ray = rays.variational_flow(ref_pot, [0.4, 0.0])
    path = tmp_path / "ray.csv"
    ray.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["s", "x1", "x2", "x3", "p1", "p2", "p3", "S", "det_Dx_Dys"]
    assert len(rows) == len(ray.s) + 1
    assert all(np.isfinite(float(v)) for v in rows[1])


def test_exit_sample_outside_support(lumpy_pot):
    ray = rays.integrate_ray(lumpy_pot, [0.1, 0.2])
    m = ray.n_integrated - 1
    r = np.linalg.norm(ray.x[m])
    assert r > lumpy_pot.support_radius and ray.x[m] @ ray.p[m] > 0
    assert np.all(np.diff(np.linalg.norm(ray.x[m:], axis=1)) > 0)
