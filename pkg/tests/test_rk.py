import numpy as np

from semiscat import _rk


def _osc(t, Y):
    return np.stack([Y[:, 1], -Y[:, 0]], axis=1)


def test_harmonic_oscillator_accuracy():
    res = _rk.integrate(_osc, 0.0, np.array([[1.0, 0.0]]), 10.0, rtol=1e-11, atol=1e-13)
    assert res.status[0] == _rk.FINISHED
    assert abs(res.y[0, 0] - np.cos(10.0)) < 1e-9


def test_rows_independent_of_batch():
    y0 = np.array([[1.0, 0.0], [0.0, 3.0], [2.0, -1.0]])
    t_end = np.array([5.0, 1.0, 7.5])
    batch = _rk.integrate(_osc, 0.0, y0, t_end, rtol=1e-9, atol=1e-12)
    for i in range(3):
        alone = _rk.integrate(_osc, 0.0, y0[i:i + 1], t_end[i], rtol=1e-9, atol=1e-12)
        # step control is per row; values agree up to vectorized roundoff
        assert np.allclose(alone.y[0], batch.y[i], rtol=0, atol=1e-14)
        assert alone.n_steps[0] == batch.n_steps[i]


def test_dense_output_between_steps():
    res = _rk.integrate(_osc, 0.0, np.array([[1.0, 0.0]]), 3.0, rtol=1e-10, atol=1e-12,
                        record=True)
    t, y, q = res.trajectories[0].arrays()
    worst = 0.0
    for i in range(len(t) - 1):
        tm = 0.5 * (t[i] + t[i + 1])
        ym = _rk.dense_eval(t[i], y[i], t[i + 1] - t[i], q[i], tm)
        worst = max(worst, abs(ym[0] - np.cos(tm)))
    assert worst < 1e-8


def test_stop_callback_halts_rows():
    def stop(t, Y, rows):
        return Y[:, 0] < 0.0
    res = _rk.integrate(_osc, 0.0, np.array([[1.0, 0.0]]), 10.0, rtol=1e-9, atol=1e-12,
                        stop=stop)
    assert res.status[0] == _rk.STOPPED
    assert np.pi / 2 <= res.t[0] < 2.5
