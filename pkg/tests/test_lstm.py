import numpy as np
import pytest

import twincap.autodiff as ad
from twincap.autodiff import ParameterSet, Tape, Tensor, finite_diff_check
from twincap.lstm import LstmCell, LstmState, lstm_step
from twincap.rng import SeededRng

from oracles import lstm_np


def make_cell(d_in=3, d=4, seed=0):
    params = ParameterSet()
    cell = LstmCell(params, "cell", d_in, d, SeededRng(seed))
    return cell, params


def test_zero_cell_zero_state():
    cell, params = make_cell()
    for p in params:
        p.data[:] = 0.0
    out = cell.step(Tensor(np.ones(3)), cell.zero_state())
    assert np.array_equal(out.c.data, np.zeros(4))
    assert np.array_equal(out.h.data, np.zeros(4))


def test_saturated_forget_gate_oracle():
    # All weights zero, forget bias 20: the four-gate recurrence gives
    # c' = sigmoid(20) * c_prev and h' = 0.5 * tanh(c').
    cell, params = make_cell()
    for p in params:
        p.data[:] = 0.0
    params["cell.b"].data[4:8] = 20.0
    c_prev = np.array([0.3, -1.2, 2.0, 0.05])
    out = cell.step(Tensor(np.ones(3)), LstmState(Tensor(np.zeros(4)), Tensor(c_prev)))
    h_exp, c_exp = lstm_np(params["cell.w_x"].data, params["cell.w_h"].data,
                           params["cell.b"].data, np.ones(3), np.zeros(4), c_prev)
    assert np.allclose(out.c.data, c_exp, atol=1e-15)
    assert np.allclose(out.h.data, h_exp, atol=1e-15)
    assert np.allclose(out.c.data, 1.0 / (1.0 + np.exp(-20.0)) * c_prev, atol=1e-9)


def test_step_deterministic():
    cell, _ = make_cell(seed=3)
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=3))
    prev = LstmState(Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4)))
    a = cell.step(x, prev)
    b = cell.step(x, prev)
    assert np.array_equal(a.h.data, b.h.data)
    assert np.array_equal(a.c.data, b.c.data)


def test_hidden_bounded():
    rng = np.random.default_rng(1)
    cell, _ = make_cell(seed=5)
    for _ in range(50):
        x = Tensor(rng.normal(scale=3.0, size=3))
        prev = LstmState(Tensor(rng.uniform(-0.99, 0.99, size=4)),
                         Tensor(rng.normal(scale=2.0, size=4)))
        out = cell.step(x, prev)
        assert (np.abs(out.h.data) < 1.0).all()


def test_dimension_mismatch_rejected():
    cell, _ = make_cell()
    with pytest.raises(ad.ShapeError):
        cell.step(Tensor(np.ones(5)), cell.zero_state())
    with pytest.raises(ad.ShapeError):
        cell.step(Tensor(np.ones(3)), LstmState(Tensor(np.zeros(2)), Tensor(np.zeros(2))))


def test_matches_straight_line_oracle():
    cell, params = make_cell(seed=11)
    rng = np.random.default_rng(2)
    x = rng.normal(size=3)
    h = rng.normal(size=4) * 0.5
    c = rng.normal(size=4)
    out = lstm_step(cell, Tensor(x), LstmState(Tensor(h), Tensor(c)))
    h_exp, c_exp = lstm_np(params["cell.w_x"].data, params["cell.w_h"].data,
                           params["cell.b"].data, x, h, c)
    assert np.allclose(out.h.data, h_exp, atol=1e-15)
    assert np.allclose(out.c.data, c_exp, atol=1e-15)


def test_unrolled_chain_gradients():
    cell, params = make_cell(d_in=3, d=3, seed=7)
    rng = np.random.default_rng(3)
    xs = [Tensor(rng.normal(size=3)) for _ in range(5)]

    def fn():
        state = cell.zero_state()
        for x in xs:
            state = cell.step(x, state)
        return ad.sum_all(state.h)

    err = finite_diff_check(fn, list(params))
    assert err < 1e-5
