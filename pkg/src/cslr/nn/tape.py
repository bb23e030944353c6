"""Reverse-mode tape over numpy arrays.

Every differentiable op appends one node to the active :class:`Tape`; the node
holds a closure mapping the output cotangent to input cotangents.  Parameters
are :class:`Param` instances whose ``grad`` buffers accumulate across calls
until :meth:`Param.zero_grad`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward value became NaN/inf; ``node`` names the op that produced it."""

    def __init__(self, node: str, message: str | None = None):
        self.node = node
        super().__init__(message or f"non-finite value produced by node '{node}'")


class Var:
    """A value flowing through the tape."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str = ""):
        self.value = np.asarray(value)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, shape={self.value.shape})"


class Param(Var):
    """Learnable buffer: ``values`` and a same-shape ``grads`` accumulator."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(value, name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def accumulate(self, g):
        if g.shape != self.value.shape:
            raise ValueError(f"gradient shape {g.shape} != param {self.name} shape {self.value.shape}")
        self.grad += g


Backward = Callable[[np.ndarray], Sequence]


class Tape:
    """Records ops during a forward pass and replays their adjoints in reverse.

    ``switches`` collects the branch pattern of every piecewise-linear op
    (relu masks, maxpool argmax) and ``moduli`` the complex arguments of every
    ``|z|`` op.  The gradient checker compares both between perturbed
    evaluations to skip coordinates that cross a kink or pass close to the
    modulus singularity at 0.
    """

    def __init__(self, check_finite: bool = True):
        self.check_finite = check_finite
        self._nodes: list[tuple[str, tuple, Var, Backward]] = []
        self.switches: list[bytes] = []
        self.moduli: list[np.ndarray] = []
        self._spent = False

    def __len__(self):
        return len(self._nodes)

    def record(self, name: str, inputs: Sequence[Var | None], value, backward: Backward) -> Var:
        out = Var(value, name)
        if self.check_finite and not np.all(np.isfinite(out.value)):
            raise NonFiniteError(name)
        self._nodes.append((name, tuple(inputs), out, backward))
        return out

    def note_switch(self, pattern: np.ndarray):
        self.switches.append(np.ascontiguousarray(pattern).tobytes())

    def note_modulus(self, z: np.ndarray):
        self.moduli.append(z)

    def backward(self, loss: Var, seed: float = 1.0):
        if self._spent:
            raise RuntimeError("backward already ran on this tape; run a new forward first")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.full_like(loss.value, seed)
        for name, inputs, out, backward in reversed(self._nodes):
            if out.grad is None:
                continue
            grads = backward(out.grad)
            for v, g in zip(inputs, grads):
                if v is None or g is None:
                    continue
                if self.check_finite and not np.all(np.isfinite(g)):
                    raise NonFiniteError(name, f"non-finite gradient flowing out of node '{name}'")
                v.accumulate(g)
            out.grad = None
        self._nodes.clear()
        self._spent = True
