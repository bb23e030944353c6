"""CTC, the per-branch alignment losses and their sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelOutput
from .nn import layers as L
from .nn.functional import log_softmax, softmax
from .nn.tape import NonFiniteError, Tape, Var

BLANK = 0
NEG_INF = -np.inf


class CTCInfeasibleError(ValueError):
    """The label sequence cannot be aligned to the given number of steps."""


@dataclass
class LossBreakdown:
    l_ctc: float
    l_vae_t: float
    l_vae_f: float
    l_sum: float


@dataclass(frozen=True)
class LossToggles:
    vae_t: bool = True
    vae_f: bool = True


def _check_labels(labels, T: int):
    labels = [int(x) for x in labels]
    if not labels:
        raise ValueError("label sequence must be non-empty")
    if any(x == BLANK for x in labels):
        raise ValueError("label sequence must not contain the blank id")
    need = len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    if T < need:
        raise CTCInfeasibleError(f"{len(labels)} labels need at least {need} steps, got {T}")
    return labels


def ctc_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``labels`` under ``(T, K)`` logits and its gradient.

    Forward and backward variables live in log space over the blank-extended
    label string.  ``beta[t]`` excludes the emission at ``t`` so that the state
    occupancy is simply ``exp(alpha + beta - log Z)``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (T, K), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("ctc_loss", "non-finite logits passed to ctc_loss")
    T, K = logits.shape
    labels = _check_labels(labels, T)
    if max(labels) >= K:
        raise ValueError(f"label id {max(labels)} out of range for {K} classes")
    logp = log_softmax(logits.astype(np.float64))

    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    S = ext.size
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, BLANK]
    alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + logp[t, ext]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, ext]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if not np.isfinite(log_z):
        raise NonFiniteError("ctc_loss", "ctc log-likelihood is not finite")
    occupancy = np.exp(alpha + beta - log_z)
    posterior = np.zeros((T, K))
    np.add.at(posterior, (slice(None), ext), occupancy)
    grad = np.exp(logp) - posterior
    return float(-log_z), grad.astype(logits.dtype, copy=False)


def kl_alignment(main_logits: np.ndarray, aux_logits: np.ndarray, temperature: float = 8.0):
    """Mean over steps of ``KL(softmax(main/tau) || softmax(aux/tau))`` with both gradients."""
    if main_logits.shape != aux_logits.shape:
        raise ValueError(f"shape mismatch {main_logits.shape} vs {aux_logits.shape}")
    T = main_logits.shape[0]
    logp = log_softmax(main_logits / temperature)
    logq = log_softmax(aux_logits / temperature)
    p, q = np.exp(logp), np.exp(logq)
    per_step = (p * (logp - logq)).sum(axis=1)
    value = float(per_step.mean())
    g_aux = (q - p) / (temperature * T)
    g_main = p * (logp - logq - per_step[:, None]) / (temperature * T)
    return value, g_main, g_aux


# -- tape ops ----------------------------------------------------------------

def ctc(tape: Tape, logits: Var, labels, name: str = "ctc") -> Var:
    value, grad = ctc_loss(logits.value, labels)
    return tape.record(name, (logits,), np.asarray(value, dtype=logits.value.dtype),
                       lambda dy: (dy * grad,))


def kl(tape: Tape, main: Var, aux: Var, temperature: float, name: str = "kl") -> Var:
    value, g_main, g_aux = kl_alignment(main.value, aux.value, temperature)
    return tape.record(name, (main, aux), np.asarray(value, dtype=main.value.dtype),
                       lambda dy: (dy * g_main, dy * g_aux))


def aux_branch_loss(tape: Tape, aux_logits: Var, main_logits: Var, labels,
                    temperature: float = 8.0, name: str = "aux") -> Var:
    """Branch CTC plus the softened-distribution KL towards the main classifier."""
    c = ctc(tape, aux_logits, labels, f"{name}.ctc")
    k = kl(tape, main_logits, aux_logits, temperature, f"{name}.kl")
    return L.add(tape, c, k, f"{name}.sum")


def total_loss(tape: Tape, out: ModelOutput, labels, toggles: LossToggles = LossToggles(),
               temperature: float = 8.0) -> tuple[LossBreakdown, Var]:
    """``l_sum = l_ctc + l_vae_t + l_vae_f``; a disabled or absent term is exactly 0."""
    terms = [ctc(tape, out.logits, labels, "ctc")]
    l_t = l_f = 0.0
    if toggles.vae_t and out.aux_temporal is not None:
        v = aux_branch_loss(tape, out.aux_temporal, out.logits, labels, temperature, "vae_t")
        l_t = float(v.value)
        terms.append(v)
    if toggles.vae_f and out.aux_frequency is not None:
        v = aux_branch_loss(tape, out.aux_frequency, out.logits, labels, temperature, "vae_f")
        l_f = float(v.value)
        terms.append(v)
    total = terms[0]
    for i, term in enumerate(terms[1:]):
        total = L.add(tape, total, term, f"l_sum.{i}")
    l_ctc = float(terms[0].value)
    return LossBreakdown(l_ctc, l_t, l_f, l_ctc + l_t + l_f), total
