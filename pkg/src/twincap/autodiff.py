"""Dense-tensor kernel with reverse-mode autodiff on a linear tape.

Tensors wrap float64 numpy arrays (row-major), 1-D or 2-D; scalars are
shape-(1,) vectors. Primitives executed while a Tape is active append a
backward closure to the tape; Tape.backward replays the closures in exact
reverse execution order and accumulates into .grad buffers. With no active
tape the same functions run forward-only (inference mode).

Conventions fixed here and relied on by the checkpoint format: float64
everywhere, row-major flattening, softmax and concat act on the last axis.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when primitive inputs have incompatible shapes."""


# Count of nll_pick underflow clamps (target probability below NLL_CLAMP).
NLL_CLAMP = 1e-12
_underflow_count = 0


def underflow_warnings() -> int:
    return _underflow_count


def reset_underflow_warnings() -> None:
    global _underflow_count
    _underflow_count = 0


class Tensor:
    """A dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad")

    def __init__(self, data, check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if check and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in tensor")
        self.data = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Named leaf tensor; .grad persists across backward calls until zeroed."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParameterSet:
    """Ordered, uniquely named parameter collection."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())


_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_tls, "stack"):
        _tls.stack = []
    return _tls.stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Wengert list: ordered record of executed primitives' adjoint closures."""

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._nodes.append(backward_fn)

    def backward(self, out: Tensor) -> None:
        """Seed d(out)/d(out)=1 and replay adjoints in reverse order."""
        if out.data.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {out.shape}")
        out.grad = np.ones_like(out.data)
        for fn in reversed(self._nodes):
            fn()


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _finish(kind: str, out_data: np.ndarray, backward_fn: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise ValueError(f"{kind}: non-finite result")
    out = Tensor(out_data, check=False)
    tape = active_tape()
    if tape is not None:
        tape.record(backward_fn(out))
    return out


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise add with numpy broadcasting."""
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(out: Tensor):
        def fn():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad, a.shape))
            _accum(b, _unbroadcast(out.grad, b.shape))
        return fn

    return _finish("add", data, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise multiply with numpy broadcasting."""
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(out: Tensor):
        def fn():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad * b.data, a.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.shape))
        return fn

    return _finish("mul", data, bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient to the constant)."""
    data = a.data * c

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad * c)
        return fn

    return _finish("scale", data, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,n)@(n,k), (m,n)@(n,), or (n,)@(n,) -> (1,)."""
    ad, bd = a.data, b.data
    if ad.ndim == 1 and bd.ndim == 1:
        if ad.shape != bd.shape:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        data = np.array([ad @ bd])

        def bw(out: Tensor):
            def fn():
                if out.grad is None:
                    return
                g = out.grad[0]
                _accum(a, g * bd)
                _accum(b, g * ad)
            return fn

        return _finish("matmul", data, bw)

    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        data = ad @ bd

        def bw(out: Tensor):
            def fn():
                if out.grad is None:
                    return
                _accum(a, np.outer(out.grad, bd))
                _accum(b, ad.T @ out.grad)
            return fn

        return _finish("matmul", data, bw)

    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        data = ad @ bd

        def bw(out: Tensor):
            def fn():
                if out.grad is None:
                    return
                _accum(a, out.grad @ bd.T)
                _accum(b, ad.T @ out.grad)
            return fn

        return _finish("matmul", data, bw)

    raise ShapeError(f"matmul: unsupported ranks {a.shape} and {b.shape}")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    data = a.data.T.copy()

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad.T)
        return fn

    return _finish("transpose", data, bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad.reshape(a.shape))
        return fn

    return _finish("reshape", data, bw)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ShapeError("concat: no inputs")
    ndim = parts[0].data.ndim
    if any(p.data.ndim != ndim for p in parts):
        raise ShapeError(f"concat: mixed ranks {[p.shape for p in parts]}")
    try:
        data = np.concatenate([p.data for p in parts], axis=-1)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from None
    sizes = [p.shape[-1] for p in parts]

    def bw(out: Tensor):
        def fn():
            if out.grad is None:
                return
            off = 0
            for p, n in zip(parts, sizes):
                _accum(p, out.grad[..., off:off + n])
                off += n
        return fn

    return _finish("concat", data, bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0 (rows of a matrix, span of a vector)."""
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: range [{start}:{stop}) out of bounds for {a.shape}")
    data = a.data[start:stop].copy()

    def bw(out: Tensor):
        def fn():
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[start:stop] = out.grad
            _accum(a, g)
        return fn

    return _finish("slice_rows", data, bw)


def row(a: Tensor, i: int) -> Tensor:
    """Row i of a matrix as a vector (embedding lookup)."""
    if a.data.ndim != 2:
        raise ShapeError(f"row: expected 2-D, got {a.shape}")
    return reshape(slice_rows(a, i, i + 1), (a.shape[1],))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid exp overflow.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad * data * (1.0 - data))
        return fn

    return _finish("sigmoid", data, bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad * (1.0 - data * data))
        return fn

    return _finish("tanh", data, bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad * (a.data > 0.0))
        return fn

    return _finish("relu", data, bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, shift-stabilized."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    data = e / e.sum(axis=-1, keepdims=True)

    def bw(out: Tensor):
        def fn():
            if out.grad is None:
                return
            dot = (out.grad * data).sum(axis=-1, keepdims=True)
            _accum(a, data * (out.grad - dot))
        return fn

    return _finish("softmax", data, bw)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (R,n) -> (n,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows: expected 2-D, got {a.shape}")
    r = a.shape[0]
    data = a.data.mean(axis=0)

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, np.tile(out.grad / r, (r, 1)))
        return fn

    return _finish("mean_rows", data, bw)


def sum_all(a: Tensor) -> Tensor:
    data = np.array([a.data.sum()])

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, np.full_like(a.data, out.grad[0]))
        return fn

    return _finish("sum_all", data, bw)


def dropout_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/scale mask (inverted-dropout convention)."""
    if mask.shape != a.shape:
        raise ShapeError(f"dropout_mask: mask {mask.shape} vs input {a.shape}")
    data = a.data * mask

    def bw(out: Tensor):
        def fn():
            if out.grad is not None:
                _accum(a, out.grad * mask)
        return fn

    return _finish("dropout_mask", data, bw)


def nll_pick(p: Tensor, index: int) -> Tensor:
    """-log(p[index]) as a scalar; probabilities below NLL_CLAMP are clamped."""
    global _underflow_count
    if p.data.ndim != 1:
        raise ShapeError(f"nll_pick: expected a vector, got {p.shape}")
    if not (0 <= index < p.shape[0]):
        raise ShapeError(f"nll_pick: index {index} out of range for {p.shape}")
    v = p.data[index]
    clamped = v < NLL_CLAMP
    if clamped:
        _underflow_count += 1
    data = np.array([-np.log(max(v, NLL_CLAMP))])

    def bw(out: Tensor):
        def fn():
            if out.grad is None:
                return
            g = np.zeros_like(p.data)
            # Forward is constant in the clamped region, so the gradient is 0 there.
            if not clamped:
                g[index] = -out.grad[0] / v
            _accum(p, g)
        return fn

    return _finish("nll_pick", data, bw)


PRIMITIVES = {
    "add": add,
    "mul": mul,
    "scale": scale,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": concat,
    "slice_rows": slice_rows,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "mean_rows": mean_rows,
    "sum_all": sum_all,
    "dropout_mask": dropout_mask,
    "nll_pick": nll_pick,
}


def apply_primitive(kind: str, *args, **kwargs) -> Tensor:
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive kind {kind!r}")
    return PRIMITIVES[kind](*args, **kwargs)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_check(model_fn: Callable[[], Tensor], params: Sequence[Parameter],
                      epsilon: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    model_fn must be deterministic (freeze any dropout masks) and return a
    scalar Tensor; it is re-evaluated 2 times per parameter entry. Relative
    error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    if not params:
        raise ValueError("no parameters")

    def eval_forward() -> float:
        return model_fn().item()

    f0 = eval_forward()
    if eval_forward() != f0:
        raise ValueError("model_fn is non-deterministic: repeated forward evaluations disagree")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = model_fn()
        tape.backward(out)

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = eval_forward()
            flat[i] = orig - epsilon
            f_minus = eval_forward()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            analytic = gflat[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
