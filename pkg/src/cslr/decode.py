"""CTC decoding, word error rate and alignment reports."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .nn.functional import log_softmax

BLANK = 0


@dataclass
class DecodeResult:
    glosses: list[int]
    log_score: float
    beam_width: int


def collapse(path) -> list[int]:
    """Merge repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out


def greedy_decode(logits) -> DecodeResult:
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    path = logp.argmax(axis=1)
    score = float(logp[np.arange(len(path)), path].sum())
    return DecodeResult(collapse(path), score, 1)


def beam_decode(logits, width: int = 10) -> DecodeResult:
    """Prefix beam search over collapsed label prefixes.

    Each prefix carries the log-probability of paths ending in blank and in
    its last label separately, so ``a a`` and ``a - a`` extend correctly.
    After every step the ``width`` best prefixes survive; equal scores keep
    the lexicographically smaller prefix.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    T, K = logp.shape
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, -np.inf)}
    for t in range(T):
        row = logp[t]
        nxt: dict[tuple, list] = defaultdict(lambda: [-np.inf, -np.inf])
        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            cell = nxt[prefix]
            cell[0] = np.logaddexp(cell[0], total + row[BLANK])
            last = prefix[-1] if prefix else None
            for k in range(1, K):
                lp = row[k]
                if k == last:
                    cell[1] = np.logaddexp(cell[1], pnb + lp)
                    ext = nxt[prefix + (k,)]
                    ext[1] = np.logaddexp(ext[1], pb + lp)
                else:
                    ext = nxt[prefix + (k,)]
                    ext[1] = np.logaddexp(ext[1], total + lp)
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = {prefix: (pb, pnb) for prefix, (pb, pnb) in ranked[:width]}
    best, (pb, pnb) = min(beams.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
    return DecodeResult(list(best), float(np.logaddexp(pb, pnb)), width)


# -- word error rate ---------------------------------------------------------

@dataclass
class WERReport:
    ins: int
    dele: int
    sub: int
    sum: int
    wer_percent: float
    ops: list[tuple[str, Hashable | None, Hashable | None]]

    @property
    def errors(self) -> int:
        return self.ins + self.dele + self.sub


def edit_table(ref: Sequence, hyp: Sequence) -> np.ndarray:
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), d[i, j - 1] + 1, d[i - 1, j] + 1)
    return d


def wer(reference: Sequence, hypothesis: Sequence) -> WERReport:
    """Unit-cost Levenshtein alignment of ``hypothesis`` against ``reference``.

    On ties the backtrace takes the diagonal (match/substitution) first, then
    insertion, then deletion.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise ValueError("reference must be non-empty")
    d = edit_table(ref, hyp)
    i, j = len(ref), len(hyp)
    ops = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("C" if ref[i - 1] == hyp[j - 1] else "S", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ops.append(("I", None, hyp[j - 1]))
            j -= 1
        else:
            ops.append(("D", ref[i - 1], None))
            i -= 1
    ops.reverse()
    count = {k: sum(1 for op in ops if op[0] == k) for k in "SID"}
    total = count["S"] + count["I"] + count["D"]
    assert total == d[-1, -1]
    return WERReport(count["I"], count["D"], count["S"], len(ref), 100.0 * total / len(ref), ops)


@dataclass
class AlignmentReport:
    text: str
    ops: list[tuple[str, Hashable | None, Hashable | None]]

    @property
    def marked(self) -> int:
        return sum(1 for op in self.ops if op[0] != "C")


def alignment_report(reference: Sequence, hypothesis: Sequence, render=str) -> AlignmentReport:
    """Column-aligned REF/HYP/OP lines; errors are upper-cased op codes and ``*`` fill gaps."""
    report = wer(reference, hypothesis)
    ref_cells, hyp_cells, op_cells = [], [], []
    for op, r, h in report.ops:
        rs = "*" if r is None else render(r)
        hs = "*" if h is None else render(h)
        width = max(_display_width(rs), _display_width(hs), 1)
        ref_cells.append(_pad(rs, width))
        hyp_cells.append(_pad(hs, width))
        op_cells.append(_pad("" if op == "C" else op, width))
    text = "\n".join([
        "REF: " + " ".join(ref_cells),
        "HYP: " + " ".join(hyp_cells),
        "OP:  " + " ".join(op_cells),
    ])
    return AlignmentReport(text, report.ops)


def _display_width(s: str) -> int:
    # CJK glyphs occupy two terminal columns
    return sum(2 if ord(c) >= 0x1100 else 1 for c in s)


def _pad(s: str, width: int) -> str:
    return s + " " * (width - _display_width(s))


# -- evaluation records ------------------------------------------------------

def eval_record(entry_id, ref: Sequence[str], hyp: Sequence[str], report: WERReport) -> str:
    return json.dumps({
        "id": entry_id, "ref": "/".join(ref), "hyp": "/".join(hyp),
        "ins": report.ins, "del": report.dele, "sub": report.sub,
        "wer": round(report.wer_percent, 4),
    }, ensure_ascii=False)


def corpus_summary(split: str, errors: int, ref_tokens: int, sentences: int, extra: dict | None = None) -> str:
    rec = {"summary": split, "sentences": sentences, "errors": errors, "ref_tokens": ref_tokens,
           "wer": round(100.0 * errors / ref_tokens, 4) if ref_tokens else 0.0}
    rec.update(extra or {})
    return json.dumps(rec, ensure_ascii=False)
