"""Standard LSTM cell shared by all five recurrent units of the decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .rng import SeededRng


@dataclass
class LstmState:
    """Hypothesis h and context c, both length d."""
    h: Tensor
    c: Tensor


class LstmCell:
    """Fused-gate LSTM cell; gate order is input, forget, candidate, output.

    Weights live in one (4d, d_in) input matrix and one (4d, d) hidden matrix
    plus a (4d,) bias. Forget-gate bias starts at 1.0, everything else at 0;
    weights are uniform in [-1/sqrt(d), 1/sqrt(d)].
    """

    def __init__(self, params: ParameterSet, prefix: str, d_in: int, d: int, rng: SeededRng):
        self.d_in = d_in
        self.d = d
        bound = 1.0 / np.sqrt(d)
        self.w_x = params.add(f"{prefix}.w_x", rng.uniform((4 * d, d_in), -bound, bound))
        self.w_h = params.add(f"{prefix}.w_h", rng.uniform((4 * d, d), -bound, bound))
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0
        self.b = params.add(f"{prefix}.b", bias)

    def zero_state(self) -> LstmState:
        return LstmState(h=Tensor(np.zeros(self.d)), c=Tensor(np.zeros(self.d)))

    def step(self, x: Tensor, prev: LstmState) -> LstmState:
        if x.shape != (self.d_in,):
            raise ad.ShapeError(f"lstm_step: input {x.shape}, cell expects ({self.d_in},)")
        if prev.h.shape != (self.d,) or prev.c.shape != (self.d,):
            raise ad.ShapeError(f"lstm_step: state {prev.h.shape}/{prev.c.shape}, cell expects ({self.d},)")
        d = self.d
        gates = ad.add(ad.add(ad.matmul(self.w_x, x), ad.matmul(self.w_h, prev.h)), self.b)
        i = ad.sigmoid(ad.slice_rows(gates, 0, d))
        f = ad.sigmoid(ad.slice_rows(gates, d, 2 * d))
        g = ad.tanh(ad.slice_rows(gates, 2 * d, 3 * d))
        o = ad.sigmoid(ad.slice_rows(gates, 3 * d, 4 * d))
        c = ad.add(ad.mul(f, prev.c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        return LstmState(h=h, c=c)


def lstm_step(cell: LstmCell, x: Tensor, prev: LstmState) -> LstmState:
    return cell.step(x, prev)
