"""Tape-recording ops and the parameterised layers built on them."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tape import Param, Tape, Var


# -- ops ---------------------------------------------------------------------

def linear(tape: Tape, x: Var, W: Param, b: Param, name: str = "linear") -> Var:
    y, cache = F.linear_forward(x.value, W.value, b.value)
    return tape.record(name, (x, W, b), y, lambda dy: F.linear_backward(dy, cache))


def conv1d(tape: Tape, x: Var, W: Param, b: Param, stride=1, padding=0, name="conv1d") -> Var:
    y, cache = F.conv1d_forward(x.value, W.value, b.value, stride, padding)
    return tape.record(name, (x, W, b), y, lambda dy: F.conv1d_backward(dy, cache))


def conv2d(tape: Tape, x: Var, W: Param, b: Param, stride=1, padding=0, name="conv2d") -> Var:
    y, cache = F.conv2d_forward(x.value, W.value, b.value, stride, padding)
    return tape.record(name, (x, W, b), y, lambda dy: F.conv2d_backward(dy, cache))


def relu(tape: Tape, x: Var, name: str = "relu") -> Var:
    y, mask = F.relu_forward(x.value)
    tape.note_switch(mask)
    return tape.record(name, (x,), y, lambda dy: (F.relu_backward(dy, mask),))


def global_avg_pool(tape: Tape, x: Var, name: str = "gap") -> Var:
    y, shape = F.global_avg_pool_forward(x.value)
    return tape.record(name, (x,), y, lambda dy: (F.global_avg_pool_backward(dy, shape),))


def maxpool1d(tape: Tape, x: Var, k: int = 2, s: int = 2, name: str = "maxpool1d") -> Var:
    y, cache = F.maxpool1d_forward(x.value, k, s)
    tape.note_switch(cache[0])
    return tape.record(name, (x,), y, lambda dy: (F.maxpool1d_backward(dy, cache),))


def bilstm(tape: Tape, x: Var, fwd: tuple, bwd: tuple, name: str = "bilstm") -> Var:
    y, cache = F.bilstm_forward(x.value, tuple(p.value for p in fwd), tuple(p.value for p in bwd))

    def backward(dy):
        dx, gf, gb = F.bilstm_backward(dy, cache)
        return (dx, *gf, *gb)

    return tape.record(name, (x, *fwd, *bwd), y, backward)


def add(tape: Tape, a: Var, b: Var, name: str = "add") -> Var:
    if a.shape != b.shape:
        raise F.ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return tape.record(name, (a, b), a.value + b.value, lambda dy: (dy, dy))


def reduce_sum(tape: Tape, x: Var, name: str = "sum") -> Var:
    return tape.record(name, (x,), x.value.sum(), lambda dy: (np.full_like(x.value, dy),))


# -- layers ------------------------------------------------------------------

class Module:
    """Parameter container; ``params()`` lists owned buffers in a fixed order."""

    def params(self) -> list[Param]:
        out = []
        for value in self.__dict__.values():
            if isinstance(value, Param):
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.params())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.params())
        return out


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, cin, cout, rng, name="linear", dtype=np.float64):
        bound = 1.0 / np.sqrt(cin)
        self.W = Param(_uniform(rng, bound, (cin, cout), dtype), f"{name}.W")
        self.b = Param(_uniform(rng, bound, (cout,), dtype), f"{name}.b")
        self.name = name

    def __call__(self, tape, x):
        return linear(tape, x, self.W, self.b, self.name)


class Conv1d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, name="conv1d", dtype=np.float64):
        bound = 1.0 / np.sqrt(cin * k)
        self.W = Param(_uniform(rng, bound, (k, cin, cout), dtype), f"{name}.W")
        self.b = Param(_uniform(rng, bound, (cout,), dtype), f"{name}.b")
        self.stride, self.padding, self.name = stride, padding, name

    def __call__(self, tape, x):
        return conv1d(tape, x, self.W, self.b, self.stride, self.padding, self.name)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, name="conv2d", dtype=np.float64):
        # He-style scale keeps activations alive through stacked relus
        std = np.sqrt(2.0 / (cin * k * k))
        self.W = Param((rng.standard_normal((k, k, cin, cout)) * std).astype(dtype), f"{name}.W")
        self.b = Param(np.zeros(cout, dtype=dtype), f"{name}.b")
        self.stride, self.padding, self.name = stride, padding, name

    def __call__(self, tape, x):
        return conv2d(tape, x, self.W, self.b, self.stride, self.padding, self.name)


class BiLSTM(Module):
    """Bidirectional LSTM; each direction owns ``Wx (Cin,4H)``, ``Wh (H,4H)``, ``b (4H)``."""

    def __init__(self, cin, hidden, rng, name="bilstm", dtype=np.float64):
        bound = 1.0 / np.sqrt(hidden)
        self.fwd = tuple(
            Param(_uniform(rng, bound, shape, dtype), f"{name}.fwd.{part}")
            for part, shape in (("Wx", (cin, 4 * hidden)), ("Wh", (hidden, 4 * hidden)), ("b", (4 * hidden,)))
        )
        self.bwd = tuple(
            Param(_uniform(rng, bound, shape, dtype), f"{name}.bwd.{part}")
            for part, shape in (("Wx", (cin, 4 * hidden)), ("Wh", (hidden, 4 * hidden)), ("b", (4 * hidden,)))
        )
        self.hidden, self.name = hidden, name

    def params(self):
        return [*self.fwd, *self.bwd]

    def __call__(self, tape, x):
        return bilstm(tape, x, self.fwd, self.bwd, self.name)
