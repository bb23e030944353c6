from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tape import NonFiniteError, Param, Tape, Var


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    worst: tuple[str, tuple] | None = None
    per_var: dict[str, float] = field(default_factory=dict)


def _rel(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _near_singular(base: list[np.ndarray], moved: list[np.ndarray], ratio: float) -> bool:
    for b, m in zip(base, moved):
        shift = np.abs(m - b)
        if np.any(shift > ratio * np.abs(b)):
            return True
    return False


def grad_check(
    loss_fn: Callable[[Tape], Var],
    variables: Sequence[Var],
    eps: float = 1e-3,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    modulus_ratio: float = 3e-3,
) -> GradCheckResult:
    """Compare tape gradients with central differences.

    ``loss_fn`` builds the graph on the tape it is given and returns a scalar.
    Coordinates whose ``±eps`` perturbation flips any relu mask or maxpool
    argmax relative to the unperturbed pass are skipped, since the central
    difference straddles a kink there.  Likewise skipped: perturbations that
    move the argument of a ``|z|`` op by more than ``modulus_ratio * |z|``,
    where the curvature of the modulus swamps the O(eps^2) difference error.
    With ``max_coords`` set, that many coordinates per variable are sampled
    (without replacement) from ``rng``.
    """
    for v in variables:
        if v.value.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 values; {v.name or v!r} is {v.value.dtype}")
    for v in variables:
        if isinstance(v, Param):
            v.zero_grad()
        else:
            v.grad = None
    tape = Tape()
    loss = loss_fn(tape)
    if not np.isfinite(loss.value):
        raise NonFiniteError("loss")
    base = list(tape.switches)
    base_moduli = list(tape.moduli)
    tape.backward(loss)
    analytic = [np.zeros_like(v.value) if v.grad is None else v.grad.copy() for v in variables]

    rng = rng if rng is not None else np.random.default_rng(0)
    worst, worst_at = 0.0, None
    checked = skipped = 0
    per_var = {}

    def evaluate():
        t = Tape()
        val = float(loss_fn(t).value)
        if not np.isfinite(val):
            raise NonFiniteError("loss")
        return val, t.switches, t.moduli

    for i, (v, g) in enumerate(zip(variables, analytic)):
        label = v.name or f"var{i}"
        v.value = np.ascontiguousarray(v.value)
        flat = v.value.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idxs = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        var_worst = 0.0
        for j in idxs:
            orig = flat[j]
            flat[j] = orig + eps
            fp, sp, zp = evaluate()
            flat[j] = orig - eps
            fm, sm, zm = evaluate()
            flat[j] = orig
            if (sp != base or sm != base
                    or _near_singular(base_moduli, zp, modulus_ratio)
                    or _near_singular(base_moduli, zm, modulus_ratio)):
                skipped += 1
                continue
            err = _rel(float(g.reshape(-1)[j]), (fp - fm) / (2.0 * eps))
            checked += 1
            var_worst = max(var_worst, err)
            if err > worst:
                worst, worst_at = err, (label, np.unravel_index(j, v.value.shape))
        per_var[label] = var_worst
    return GradCheckResult(worst, checked, skipped, worst_at, per_var)
