import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semiscat import classical, semiclassical
from semiscat.classical import Branch
from semiscat.errors import NonregularDirection


def _br(det, F, nu, y=(0.0, 0.0)):
    return Branch(np.array(y), np.array([0.0, 0.0, 1.0]), det, F, nu)


branch_st = st.builds(_br, st.floats(1e-3, 1e3), st.floats(-50, 50), st.integers(0, 4))


def test_empty_branch_list():
    assert semiclassical.vainberg_amplitude([], 10.0) == 0


@pytest.mark.parametrize("k", [0.5, 17.0, 1e4])
def test_single_trivial_branch(k):
    assert semiclassical.vainberg_amplitude([_br(1.0, 0.0, 0)], k) == 1 + 0j


def test_two_branch_destructive_interference():
    k = 3.0
    m = 0.5
    # k (F1 - F2) = pi
    brs = [_br(1 / m ** 2, math.pi / k, 0), _br(1 / m ** 2, 0.0, 0, y=(0.1, 0.0))]
    assert abs(semiclassical.vainberg_amplitude(brs, k)) < 1e-15
    ks = np.linspace(1.0, 40.0, 4001)
    d = np.array([semiclassical.semiclassical_dcs(brs, kk) for kk in ks])
    assert d.min() >= -1e-15 and d.max() <= 4 * m * m + 1e-12
    assert d.min() < 1e-4 and d.max() > 4 * m * m - 1e-4


def test_maslov_phase_is_not_scaled_by_k():
    a = semiclassical.vainberg_amplitude([_br(1.0, 0.0, 1)], 10.0)
    b = semiclassical.vainberg_amplitude([_br(1.0, 0.0, 1)], 1000.0)
    assert a == pytest.approx(-1j, abs=1e-15) and b == pytest.approx(-1j, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(branch_st, min_size=1, max_size=5), st.floats(0.1, 500), st.floats(-100, 100))
def test_global_phase_invariance(brs, k, c):
    shifted = [_br(b.detDJ, b.F + c, b.nu) for b in brs]
    f1 = semiclassical.vainberg_amplitude(brs, k)
    f2 = semiclassical.vainberg_amplitude(shifted, k)
    assert abs(abs(f1) - abs(f2)) <= 1e-9 * max(1.0, abs(f1))


@settings(max_examples=60, deadline=None)
@given(st.lists(branch_st, min_size=1, max_size=5), st.floats(0.1, 500))
def test_triangle_bound(brs, k):
    amp = semiclassical.semiclassical_amplitude(brs, k)
    assert amp.dcs <= amp.bound * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(branch_st, st.floats(0.1, 500))
def test_single_branch_equals_classical(b, k):
    assert semiclassical.semiclassical_dcs([b], k) == pytest.approx(1 / b.detDJ, rel=1e-12)
    assert semiclassical.semiclassical_dcs([b], k, window=3.0) == pytest.approx(1 / b.detDJ, rel=1e-12)



def test_window_average_approaches_classical():
    brs = [_br(2.0, 0.7, 2), _br(5.0, -0.4, 1, y=(0.1, 0.0))]
    dF = 1.1
    window = 20 * math.pi / dF
    avg = semiclassical.semiclassical_dcs(brs, 50.0, window=window)
    cl = classical.classical_dcs(brs)
    assert abs(avg - cl) <= 0.05 * cl
    longer = semiclassical.semiclassical_dcs(brs, 50.0, window=20 * window)
    assert abs(longer - cl) < abs(avg - cl) + 1e-12 or abs(longer - cl) < 1e-3 * cl


def test_window_average_closed_form_matches_sampling():
    brs = [_br(2.0, 0.7, 2), _br(5.0, -0.4, 1, y=(0.1, 0.0)), _br(3.0, 0.1, 0, y=(0.2, 0.0))]
    k, w = 20.0, 7.3
    ks = np.linspace(k, k + w, 20001)
    vals = np.array([semiclassical.semiclassical_dcs(brs, kk) for kk in ks])
    trap = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ks)) / w)
    assert semiclassical.semiclassical_dcs(brs, k, window=w) == pytest.approx(trap, rel=1e-6)


def test_nonregular_rejected():
    with pytest.raises(NonregularDirection):
        semiclassical.vainberg_amplitude([_br(1e-12, 0.0, 0)], 1.0)


def test_amplitude_csv(tmp_path):
    om = classical.direction_from_angles(0.5, 0.25)
    rows = [semiclassical.semiclassical_amplitude([_br(2.0, 0.3, 1)], k, om) for k in (1.0, 2.0)]
    p = tmp_path / "a.csv"
    semiclassical.amplitude_grid_to_csv(rows, p)
    data = list(csv.reader(open(p)))
    assert data[0] == ["theta", "phi", "k", "re_f", "im_f", "abs_f2"]
    assert float(data[1][0]) == pytest.approx(0.5) and float(data[1][1]) == pytest.approx(0.25)
    assert float(data[2][5]) == pytest.approx(0.5)
